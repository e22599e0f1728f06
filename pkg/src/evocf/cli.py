"""Command line: ``evocf prepare | evolve | report | synth``.

Exit status: 0 success, 1 usage/config, 2 data/parse, 3 numeric failure,
4 missing state.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import replace
from importlib import metadata
from pathlib import Path

import numpy as np

from . import TOY_DATASET
from .config import config_items, load_config, parse_config
from .errors import ConfigError, DataError, EvoCFError, NumericError, ParseError, StateError
from .evaldata import FORMATS, InteractionDataset, format_metrics_csv, leave_one_out_split, load_interactions
from .evolution import EvolutionConfig, format_history_csv, final_train, resume, run
from .genome import deserialize, serialize, validate
from .network import save_network
from .plots import plot_history, plot_topk
from .synthetic import planted_interactions, write_movielens

log = logging.getLogger("evocf")

DATA_FILES = ("interactions.tsv", "negatives.tsv", "user_ids.tsv", "item_ids.tsv")
MANIFEST = "manifest.json"
CHECKPOINT_SUBDIR = "checkpoint"


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def dataset_fingerprint(data_dir: Path) -> str:
    h = hashlib.sha256()
    for name in DATA_FILES:
        h.update(name.encode())
        h.update(sha256_file(data_dir / name).encode())
    return h.hexdigest()


# ---------------------------------------------------------------- prepare

def write_prepared(ds: InteractionDataset, user_ids, item_ids, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    rows = ["user\titem\ttimestamp\trole"]
    by_user: list[list[str]] = [[] for _ in range(ds.num_users)]
    for u, i, t in zip(ds.train_users.tolist(), ds.train_items.tolist(), ds.train_timestamps.tolist()):
        by_user[u].append(f"{u}\t{i}\t{t}\ttrain")
    for u in ds.users.tolist():
        by_user[u].append(f"{u}\t{ds.validation_item[u]}\t\tvalidation")
        by_user[u].append(f"{u}\t{ds.test_item[u]}\t\ttest")
    for lines in by_user:
        rows.extend(lines)
    (out / "interactions.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")

    neg_rows = [f"{u}\t" + "\t".join(map(str, ds.eval_negatives[u].tolist())) for u in ds.users.tolist()]
    (out / "negatives.tsv").write_text("\n".join(neg_rows) + "\n", encoding="utf-8")
    for name, ids in (("user_ids.tsv", user_ids), ("item_ids.tsv", item_ids)):
        text = "".join(f"{orig}\t{idx}\n" for idx, orig in enumerate(ids))
        (out / name).write_text(text, encoding="utf-8")


def load_prepared(data_dir: str | Path) -> InteractionDataset:
    """Rebuild the split written by ``evocf prepare``."""
    root = Path(data_dir)
    missing = [name for name in DATA_FILES if not (root / name).is_file()]
    if missing:
        raise StateError(f"{root} is not a prepared data directory (missing: {', '.join(missing)})")
    num_users = sum(1 for _ in open(root / "user_ids.tsv", encoding="utf-8"))
    num_items = sum(1 for _ in open(root / "item_ids.tsv", encoding="utf-8"))
    tr_u, tr_i, tr_t = [], [], []
    validation = np.full(num_users, -1, dtype=np.int64)
    test = np.full(num_users, -1, dtype=np.int64)
    with open(root / "interactions.tsv", encoding="utf-8") as fh:
        next(fh, None)
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split("\t")
            try:
                u, i, role = int(parts[0]), int(parts[1]), parts[3]
                if role == "train":
                    tr_u.append(u)
                    tr_i.append(i)
                    tr_t.append(int(parts[2]))
                elif role == "validation":
                    validation[u] = i
                elif role == "test":
                    test[u] = i
                else:
                    raise ValueError(f"unknown role {role!r}")
            except (ValueError, IndexError) as exc:
                raise ParseError(f"interactions.tsv: {exc}", line=lineno) from None
    neg_lines = (root / "negatives.tsv").read_text(encoding="utf-8").splitlines()
    rows = [[x for x in line.split("\t") if x] for line in neg_lines]
    width = len(rows[0]) - 1 if rows else 0
    negatives = np.full((num_users, width), -1, dtype=np.int64)
    for lineno, parts in enumerate(rows, start=1):
        try:
            negatives[int(parts[0])] = [int(x) for x in parts[1:]]
        except ValueError as exc:
            raise ParseError(f"negatives.tsv: {exc}", line=lineno) from None
    seen = np.zeros(num_users, dtype=bool)
    seen[np.asarray(tr_u, dtype=np.int64)] = True
    dropped = int(np.sum(~seen & (test < 0)))
    return InteractionDataset(
        num_users, num_items,
        np.asarray(tr_u, dtype=np.int64), np.asarray(tr_i, dtype=np.int64), np.asarray(tr_t, dtype=np.int64),
        validation, test, negatives, dropped,
    )


def cmd_prepare(args) -> int:
    path = TOY_DATASET if args.toy else args.input
    if path is None:
        raise ConfigError("prepare needs --input PATH or --toy")
    fmt = "tsv_triples" if args.toy else args.format
    if not Path(path).is_file():
        raise DataError(f"input file {path} not found")
    loaded = load_interactions(path, fmt)
    ds = leave_one_out_split(loaded, args.negatives, np.random.default_rng(args.seed))
    out = Path(args.out)
    write_prepared(ds, loaded.user_ids, loaded.item_ids, out)
    summary = {
        "users": ds.num_users,
        "items": ds.num_items,
        "interactions": len(loaded),
        "train_interactions": int(ds.train_users.size),
        "evaluated_users": int(ds.users.size),
        "dropped_users": ds.dropped_users,
        "negatives": args.negatives,
        "seed": args.seed,
        "fingerprint": dataset_fingerprint(out),
    }
    for key, value in summary.items():
        print(f"{key}={value}")
    return 0


# ---------------------------------------------------------------- evolve

def _write_manifest(rundir: Path, manifest: dict) -> None:
    (rundir / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _read_manifest(rundir: Path) -> dict:
    path = rundir / MANIFEST
    if not path.is_file():
        raise StateError(f"{rundir} has no {MANIFEST}")
    return json.loads(path.read_text(encoding="utf-8"))


def cmd_evolve(args) -> int:
    rundir = Path(args.out)
    data_dir = Path(args.data)
    started = time.time()

    if args.resume:
        manifest = _read_manifest(rundir)
        cfg = parse_config("".join(f"{k} = {v}\n" for k, v in manifest["config"].items()))
        if args.config:
            requested = load_config(args.config, replace(cfg, seed=cfg.seed))
            if config_items(replace(requested, seed=cfg.seed, jobs=cfg.jobs)) != manifest["config"]:
                raise ConfigError("--config differs from the run being resumed")
        cfg = replace(cfg, jobs=args.jobs or cfg.jobs)
    else:
        cfg = load_config(args.config) if args.config else EvolutionConfig()
        cfg = replace(cfg, seed=args.seed if args.seed is not None else cfg.seed, jobs=args.jobs or cfg.jobs)
        cfg.check()
        if rundir.exists() and any(rundir.iterdir()):
            raise ConfigError(f"run directory {rundir} is not empty; pass --resume to continue it")
        manifest = None

    ds = load_prepared(data_dir)
    fingerprint = dataset_fingerprint(data_dir)
    ckpt = rundir / CHECKPOINT_SUBDIR
    cfg = replace(cfg, checkpoint_dir=str(ckpt))

    if manifest is None:
        rundir.mkdir(parents=True, exist_ok=True)
        manifest = {
            "command": "evolve",
            "version": _version(),
            "seed": cfg.seed,
            "config": config_items(cfg),
            "dataset": {"path": str(data_dir), "fingerprint": fingerprint},
            "artifacts": {},
            "timings": {},
            "status": "running",
        }
        _write_manifest(rundir, manifest)
        state = None
    else:
        if manifest["dataset"]["fingerprint"] != fingerprint:
            raise DataError("prepared data differs from the data the run started with")
        state = resume(ckpt)

    state = run(cfg, ds, state, stop_after=args.stop_after)
    manifest["timings"][f"evolve_{len(manifest['timings'])}"] = round(time.time() - started, 3)
    manifest["generation"] = state.generation
    manifest["training_runs"] = state.cache.training_runs
    if state.generation < cfg.generations:
        manifest["status"] = "interrupted"
        _write_manifest(rundir, manifest)
        print(f"stopped after generation {state.generation}; resume with --resume")
        return 0

    best = state.best()
    (rundir / "best_genome.json").write_text(serialize(best.genome) + "\n", encoding="utf-8")
    (rundir / "history.csv").write_text(format_history_csv(state.history), encoding="utf-8")
    plot_history(state.history, rundir / "history.png", initial=state.initial)
    for name in ("best_genome.json", "history.csv", "history.png"):
        manifest["artifacts"][name] = {"path": name, "sha256": sha256_file(rundir / name)}
    manifest["best_fitness"] = best.fitness
    manifest["status"] = "complete"
    _write_manifest(rundir, manifest)
    print(f"best_fitness={best.fitness!r}")
    print(f"best_genome={serialize(best.genome)}")
    return 0


# ---------------------------------------------------------------- report

def cmd_report(args) -> int:
    rundir = Path(args.run)
    best_path = rundir / "best_genome.json"
    if not best_path.is_file():
        raise StateError(f"{rundir} holds no best genome; run evolve to completion first")
    manifest = _read_manifest(rundir)
    cfg = parse_config("".join(f"{k} = {v}\n" for k, v in manifest["config"].items()))
    genome = deserialize(best_path.read_text(encoding="utf-8"))
    problems = validate(genome, cfg.ranges)
    if problems:
        raise StateError(f"best genome is invalid: {'; '.join(problems)}")
    ds = load_prepared(args.data)
    if dataset_fingerprint(Path(args.data)) != manifest["dataset"]["fingerprint"]:
        log.warning("reporting on data that differs from the evolution run's data")

    epochs = cfg.final_epochs if args.epochs is None else args.epochs
    started = time.time()
    net, results = final_train(genome, ds, cfg.train, epochs=epochs, seed=cfg.seed, k_max=args.k_max)
    for prev, cur in zip(results, results[1:]):
        if cur.hr < prev.hr or cur.ndcg < prev.ndcg:
            raise NumericError(f"metrics decrease between K={prev.k} and K={cur.k}")

    out = rundir / "report"
    out.mkdir(exist_ok=True)
    csv_text = format_metrics_csv(results)
    (out / "metrics.csv").write_text(csv_text, encoding="utf-8")
    plot_topk(results, out / "metrics.png")
    save_network(net, out / "network.bin")
    for name in ("metrics.csv", "metrics.png", "network.bin"):
        manifest["artifacts"][f"report/{name}"] = {"path": f"report/{name}", "sha256": sha256_file(out / name)}
    manifest["timings"]["report"] = round(time.time() - started, 3)
    manifest["report"] = {"epochs": epochs, "k_max": args.k_max}
    _write_manifest(rundir, manifest)
    sys.stdout.write(csv_text)
    return 0


# ---------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    inter = planted_interactions(
        args.users, args.items, rank=args.rank, mean_per_user=args.mean_per_user,
        max_per_user=args.max_per_user, seed=args.seed,
    )
    write_movielens(args.out, inter)
    print(f"interactions={len(inter)}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="evocf", description="Evolve feed-forward collaborative-filtering networks.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="ingest interactions and build the leave-one-out split")
    p.add_argument("--input", help="interaction file")
    p.add_argument("--toy", action="store_true", help="use the bundled toy dataset")
    p.add_argument("--format", choices=FORMATS, default="movielens_dat")
    p.add_argument("--negatives", type=int, default=99)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("evolve", help="run the genetic search")
    p.add_argument("--data", required=True, help="directory written by 'prepare'")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--resume", action="store_true", help="continue from the run directory's checkpoint")
    p.add_argument("--jobs", type=int, help="parallel fitness evaluations")
    p.add_argument("--stop-after", type=int, help="run at most this many generations in this invocation")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("report", help="final-train the best genome and emit HR/NDCG for K=1..k-max")
    p.add_argument("--run", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k-max", type=int, default=10)
    p.add_argument("--epochs", type=int, help="override final_epochs from the run configuration")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="write a synthetic planted-preference dataset (MovieLens format)")
    p.add_argument("--users", type=int, default=943)
    p.add_argument("--items", type=int, default=1682)
    p.add_argument("--rank", type=int, default=8)
    p.add_argument("--mean-per-user", type=float, default=106.0)
    p.add_argument("--max-per-user", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "k_max", 1) < 1 or (getattr(args, "negatives", 0) or 0) < 0:
        parser.error("--k-max must be >= 1 and --negatives >= 0")
    try:
        return args.func(args)
    except EvoCFError as exc:
        print(f"evocf: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"evocf: error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
