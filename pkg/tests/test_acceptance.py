"""Acceptance criteria, one test each, with pinned tolerances and runtime budgets."""

import itertools
import math
import time

import numpy as np
import pytest

from evocf.cli import main
from evocf.evaldata import (
    TEST, RankedList, evaluate_model, evaluate_scorer, leave_one_out_split, load_interactions,
    ndcg_at_k, ndcg_graded, popularity_scorer, random_scorer,
)
from evocf.evolution import EvolutionConfig, final_train, run
from evocf.genome import GenomeRanges, InitScheme, validate
from evocf.network import DenseLayer, Network, TrainConfig, decode, draw_masks, init_weights
from evocf.operators import pm_real, sbx_real
from evocf.synthetic import planted_interactions, write_movielens
from evocf import TOY_DATASET

from oracles import gradient_check


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start

    def ok(self):
        return self.elapsed < self.seconds

    def __str__(self):
        return f"{self.elapsed:.1f}s of {self.seconds}s"


def test_operator_math(criterion):
    with Budget(1.0) as budget:
        c1, c2 = sbx_real(100, 200, 1.0, 0.8)
        m = pm_real(0.25, 0.0, 0.5, 1.0, 0.8)
        rng = np.random.default_rng(0)
        xs = rng.uniform(0, 300, size=(100_000, 2))
        us = rng.uniform(1e-6, 1 - 1e-6, size=100_000)
        worst = 0.0
        for (x1, x2), u in zip(xs.tolist(), us.tolist()):
            a, b = sbx_real(x1, x2, 1.0, u)
            worst = max(worst, abs((a + b) - (x1 + x2)))
    ok = (abs(c1 - 70.943) <= 1e-3 and abs(c2 - 229.057) <= 1e-3 and abs(m - 0.37919) <= 1e-4
          and worst < 1e-9 and budget.ok())
    assert criterion(1, "operator math", ok, f"sbx=({c1:.4f}, {c2:.4f}) pm={m:.5f} max|dmid|={worst:.1e}, {budget}")


def _dcg(relevance, k):
    return sum((2.0 ** r - 1.0) / math.log2(i + 2) for i, r in enumerate(relevance[:k]))


def _brute_ndcg(relevance, k):
    if len(relevance) <= 5:
        ideal = max(_dcg(list(p), k) for p in itertools.permutations(relevance))
    else:
        ideal = _dcg(sorted(relevance, reverse=True), k)
    return _dcg(relevance, k) / ideal if ideal > 0 else 0.0


def test_metric_oracle(criterion):
    rng = np.random.default_rng(1)
    worst = 0.0
    with Budget(5.0) as budget:
        for n in range(10_000):
            length = int(rng.integers(1, 13))
            k = int(rng.integers(1, 13))
            if n % 2:
                rel = rng.integers(0, 4, size=length).tolist()
            else:
                rel = [0] * length
                rel[int(rng.integers(length))] = 1
                items = rng.permutation(100)[:length]
                ranked = RankedList.from_scores(items, -np.arange(length, dtype=float))
                hit = int(items[rel.index(1)])
                worst = max(worst, abs(ndcg_at_k(ranked, hit, k) - _brute_ndcg(rel, k)))
            worst = max(worst, abs(ndcg_graded(rel, k) - _brute_ndcg(rel, k)))
        ranked = RankedList.from_scores(np.arange(20), -np.arange(20.0))
        table = [ndcg_at_k(ranked, 0, 10), ndcg_at_k(ranked, 2, 10), ndcg_at_k(ranked, 11, 10)]
    ok = worst <= 1e-12 and table == [1.0, 0.5, 0.0] and budget.ok()
    assert criterion(2, "metric oracle", ok, f"max err {worst:.1e}, table {table}, {budget}")


def _random_network(rng):
    d = int(rng.integers(1, 4))
    widths = [int(w) for w in rng.integers(1, 5, size=int(rng.integers(1, 3)))]
    layers, fan_in = [], 2 * d
    for w in widths:
        layers.append(DenseLayer(rng.normal(0, 0.7, (w, fan_in)), rng.normal(0, 0.3, w), True,
                                 float(rng.choice([0.0, 0.3]))))
        fan_in = w
    layers.append(DenseLayer(rng.normal(0, 0.7, (1, fan_in)), rng.normal(0, 0.3, 1), False, 0.0))
    return Network(rng.normal(0, 0.5, (3, d)), rng.normal(0, 0.5, (4, d)), layers, rng)


def test_gradient_checks(criterion):
    rng = np.random.default_rng(2)
    worst = 0.0
    with Budget(30.0) as budget:
        for n in range(20):
            net = _random_network(rng)
            users = rng.integers(0, 3, size=5)
            items = rng.integers(0, 4, size=5)
            labels = rng.integers(0, 2, size=5).astype(float)
            # Half the networks run with fixed dropout masks, half in inference mode.
            masks = draw_masks(net, 5, rng) if n % 2 else None
            worst = max(worst, gradient_check(net, users, items, labels, masks, eps=1e-4))
    ok = worst < 1e-4 and budget.ok()
    assert criterion(3, "gradient checks", ok, f"max rel err {worst:.1e} over 20 nets, {budget}")


# Targets written out from the textbook formulas: variance 2/(in+out), 2/in, uniform bound sqrt(3 var).
INIT_CASES = [
    (InitScheme.Rn, (2000, 50), 0.01 ** 2, None),
    (InitScheme.Ru, (2000, 50), 0.1 ** 2 / 3, 0.1),
    (InitScheme.Xn, (32, 64), 2 / 96, None),
    (InitScheme.Xu, (32, 64), 2 / 96, 0.25),
    (InitScheme.Kn, (2000, 50), 2 / 50, None),
    (InitScheme.Ku, (2000, 50), 2 / 50, math.sqrt(3 * 2 / 50)),
]


def test_init_statistics(criterion):
    rng = np.random.default_rng(3)
    details, ok = [], True
    with Budget(5.0) as budget:
        for scheme, shape, var, bound in INIT_CASES:
            draws = []
            while sum(d.size for d in draws) < 100_000:
                draws.append(init_weights(shape, scheme, rng, random_std=0.01, random_bound=0.1).ravel())
            w = np.concatenate(draws)[:100_000]
            rel = abs(w.var() - var) / var
            inside = bound is None or np.all(np.abs(w) <= bound)
            ok &= rel < 0.05 and inside
            details.append(f"{scheme.value} {rel:.3f}")
    ok &= budget.ok()
    assert criterion(4, "init statistics", ok, f"rel var err: {', '.join(details)}, {budget}")


@pytest.mark.slow
def test_evolution_invariants(criterion):
    rows = planted_interactions(200, 100, mean_per_user=35, min_per_user=5, max_per_user=49,
                                sharpness=6.0, popularity_scale=0.0, seed=0)
    ds = leave_one_out_split(rows, 50, np.random.default_rng(0))
    gains, invariants = [], True
    with Budget(600.0) as budget:
        for seed in range(5):
            cfg = EvolutionConfig(population_size=8, generations=5, seed=seed, train=TrainConfig(proxy_epochs=1))
            sizes, valid = [], []

            def watch(state):
                sizes.append(len(state.population))
                valid.append(all(validate(i.genome, cfg.ranges) == [] for i in state.population))

            state = run(cfg, ds, on_generation=watch)
            best = [state.initial.best] + [h.best for h in state.history]
            invariants &= all(b >= a for a, b in zip(best, best[1:]))
            invariants &= sizes == [8] * 5 and all(valid) and len(state.history) == 5
            gains.append(state.best().fitness - state.initial.mean)
    wins = sum(g >= 0.02 for g in gains)
    ok = invariants and wins >= 4 and budget.ok()
    assert criterion(5, "evolution invariants", ok,
                     f"gains {[round(g, 4) for g in gains]}, {wins}/5 >= 0.02, invariants {invariants}, {budget}")


@pytest.mark.slow
def test_end_to_end_vs_baselines(criterion):
    rows = planted_interactions(943, 1682, mean_per_user=106, seed=0)
    ds = leave_one_out_split(rows, 99, np.random.default_rng(0))
    ranges = GenomeRanges(length=(4, 6), neurons=(16, 128))
    train = TrainConfig(proxy_epochs=1, batch_size=256)
    with Budget(1800.0) as budget:
        cfg = EvolutionConfig(population_size=6, generations=3, seed=0, ranges=ranges, train=train)
        best = run(cfg, ds).best().genome
        _, results = final_train(best, ds, train, epochs=10, seed=0)
        evolved = results[-1]
        untrained = evaluate_model(decode(best, ds.num_users, ds.num_items, np.random.default_rng(0)), ds, TEST, 10)
        popular = evaluate_scorer(popularity_scorer(ds), ds, TEST, 10)
        rand = evaluate_scorer(random_scorer(np.random.default_rng(1)), ds, TEST, 10)
    ok = (evolved.hr > untrained.hr and evolved.ndcg > untrained.ndcg
          and evolved.hr > popular.hr and evolved.ndcg > popular.ndcg
          and abs(rand.hr - 0.10) <= 0.03 and budget.ok())
    assert criterion(6, "end-to-end vs baselines", ok,
                     f"HR/NDCG@10 evolved {evolved.hr:.3f}/{evolved.ndcg:.3f}, untrained {untrained.hr:.3f}/"
                     f"{untrained.ndcg:.3f}, popular {popular.hr:.3f}/{popular.ndcg:.3f}, random HR {rand.hr:.3f}, "
                     f"{budget}")


def test_determinism_and_resume(criterion, tmp_path):
    data = tmp_path / "data"
    conf = tmp_path / "run.conf"
    conf.write_text("population_size = 8\ntotal_generation_number = 4\nproxy_epochs = 1\n")
    with Budget(300.0) as budget:
        assert main(["prepare", "--toy", "--negatives", "20", "--out", str(data)]) == 0
        for name in ("a", "b"):
            assert main(["evolve", "--data", str(data), "--config", str(conf), "--out", str(tmp_path / name)]) == 0
        cut = tmp_path / "cut"
        args = ["evolve", "--data", str(data), "--out", str(cut)]
        assert main(args + ["--config", str(conf), "--stop-after", "2"]) == 0
        assert main(args + ["--resume"]) == 0
    files = ["history.csv", "best_genome.json", "checkpoint/state.json", "checkpoint/fitness_cache.csv"]
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)
    resumed = all((tmp_path / "a" / f).read_bytes() == (cut / f).read_bytes() for f in files)
    ok = same and resumed and budget.ok()
    assert criterion(7, "determinism and resume", ok, f"repeat identical {same}, resume identical {resumed}, {budget}")


def _scan(ds):
    """Independent exhaustive check of disjointness and negative purity."""
    problems = 0
    train = {}
    for u, i in zip(ds.train_users.tolist(), ds.train_items.tolist()):
        train.setdefault(u, set()).add(i)
    for u in ds.users.tolist():
        seen = train.get(u, set())
        val, test = int(ds.validation_item[u]), int(ds.test_item[u])
        negs = [int(x) for x in ds.eval_negatives[u]]
        problems += val in seen or test in seen or val == test
        problems += len(set(negs)) != len(negs)
        problems += any(n in seen or n in (val, test) or not 0 <= n < ds.num_items for n in negs)
    return problems


def test_protocol_integrity(criterion, tmp_path):
    planted = tmp_path / "planted.dat"
    write_movielens(planted, planted_interactions(943, 1682, mean_per_user=106, seed=0))
    sources = {
        "toy": load_interactions(TOY_DATASET, "tsv_triples"),
        "ml100k-scale": load_interactions(planted, "movielens_dat"),
        "200x100": planted_interactions(200, 100, mean_per_user=35, min_per_user=5, max_per_user=49,
                                        sharpness=6.0, popularity_scale=0.0, seed=0),
    }
    negatives = {"toy": 20, "ml100k-scale": 99, "200x100": 50}
    bad = {}
    with Budget(60.0) as budget:
        for name, rows in sources.items():
            ds = leave_one_out_split(rows, negatives[name], np.random.default_rng(0))
            bad[name] = _scan(ds) + len(ds.integrity_violations())
    ok = not any(bad.values()) and budget.ok()
    assert criterion(8, "protocol integrity", ok, f"violations {bad}, {budget}")
