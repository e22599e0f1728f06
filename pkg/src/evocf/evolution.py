"""Generational loop: evaluate, vary, select; with fitness caching and checkpoints."""

from __future__ import annotations

import json
import logging
import math
import os
from collections.abc import Callable
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError, NumericError, StateError
from .evaldata import TEST, VALIDATION, EvalResult, InteractionDataset, evaluate_model, network_scorer, sweep_scorer
from .genome import Genome, GenomeRanges, deserialize, random_genome, serialize, validate
from .network import Network, TrainConfig, decode, fit_proxy
from .operators import OperatorConfig, ScoredIndividual, crossover, environmental_select, mutate, tournament_select

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "evocf-checkpoint/1"
STATE_FILE = "state.json"
CACHE_FILE = "fitness_cache.csv"
GENOME_DIR = "genomes"


@dataclass(frozen=True)
class EvolutionConfig:
    population_size: int = 16
    generations: int = 20
    operators: OperatorConfig = field(default_factory=OperatorConfig)
    ranges: GenomeRanges = field(default_factory=GenomeRanges)
    train: TrainConfig = field(default_factory=TrainConfig)
    top_k: int = 10
    seed: int = 0
    final_epochs: int = 10
    checkpoint_dir: str | None = None
    jobs: int = 1

    def check(self) -> None:
        if self.population_size < 2:
            raise ConfigError(f"population_size must be >= 2, got {self.population_size}")
        if self.generations < 1:
            raise ConfigError(f"generations must be >= 1, got {self.generations}")
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")
        if self.final_epochs < 0 or self.jobs < 1:
            raise ConfigError("final_epochs must be >= 0 and jobs >= 1")
        self.operators.check()
        self.ranges.check()
        self.train.check()


@dataclass(frozen=True)
class GenerationStats:
    generation: int
    best: float
    mean: float


@dataclass
class FitnessCache:
    """Fitness by structural genome hash; ``flagged`` marks failed evaluations."""

    fitness: dict[str, float] = field(default_factory=dict)
    flagged: set[str] = field(default_factory=set)
    training_runs: int = 0


@dataclass
class EvolutionState:
    generation: int
    population: list[ScoredIndividual]
    cache: FitnessCache
    history: list[GenerationStats]
    rng: np.random.Generator
    next_id: int
    seed: int
    initial: GenerationStats | None = None

    def best(self) -> ScoredIndividual:
        return max(self.population, key=lambda ind: ind.fitness)


def individual_rng(seed: int, genome: Genome) -> np.random.Generator:
    """Training stream of one genome; a function of the master seed and structure only."""
    digest = int(genome.structural_hash()[:16], 16)
    return np.random.default_rng(np.random.SeedSequence([seed, digest]))


def _decode_for(genome: Genome, ds: InteractionDataset, train: TrainConfig, rng) -> Network:
    return decode(genome, ds.num_users, ds.num_items, rng,
                  random_std=train.random_init_std, random_bound=train.random_init_bound)


def evaluate_genome(genome: Genome, ds: InteractionDataset, train: TrainConfig, k: int, seed: int) -> tuple[float, bool]:
    """Validation NDCG@k after proxy training; ``(0.0, True)`` if training blows up."""
    rng = individual_rng(seed, genome)
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            net = _decode_for(genome, ds, train, rng)
            fit_proxy(net, ds, train, rng)
            fitness = evaluate_model(net, ds, VALIDATION, k).ndcg
    except (NumericError, FloatingPointError, OverflowError) as exc:
        log.warning("evaluation of %s failed: %s", serialize(genome), exc)
        return 0.0, True
    if not math.isfinite(fitness):
        return 0.0, True
    return fitness, False


_WORKER_DS: InteractionDataset | None = None


def _init_worker(ds: InteractionDataset) -> None:
    global _WORKER_DS
    _WORKER_DS = ds


def _worker_eval(args) -> tuple[float, bool]:
    genome, train, k, seed = args
    return evaluate_genome(genome, _WORKER_DS, train, k, seed)


def evaluate_population(
    pop: list[ScoredIndividual],
    ds: InteractionDataset,
    cfg: EvolutionConfig,
    cache: FitnessCache,
) -> list[ScoredIndividual]:
    """Attach fitness to every individual, training only on cache misses.

    Misses are deduplicated by structure and evaluated in population order;
    results do not depend on ``cfg.jobs``.
    """
    hashes = []
    misses: dict[str, Genome] = {}
    for ind in pop:
        problems = validate(ind.genome, cfg.ranges)
        if problems:
            raise StateError(f"invalid genome reached evaluation: {'; '.join(problems)}")
        h = ind.genome.structural_hash()
        hashes.append(h)
        if h not in cache.fitness and h not in misses:
            misses[h] = ind.genome

    if misses:
        tasks = [(g, cfg.train, cfg.top_k, cfg.seed) for g in misses.values()]
        if cfg.jobs > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=cfg.jobs, initializer=_init_worker, initargs=(ds,)) as pool:
                results = list(pool.map(_worker_eval, tasks))
        else:
            results = [evaluate_genome(g, ds, cfg.train, cfg.top_k, cfg.seed) for g in misses.values()]
        for h, (fitness, flagged) in zip(misses, results):
            cache.fitness[h] = fitness
            if flagged:
                cache.flagged.add(h)
        cache.training_runs += len(tasks)

    return [
        ScoredIndividual(ind.genome, cache.fitness[h], h in cache.flagged)
        for ind, h in zip(pop, hashes)
    ]


def _stats(generation: int, pop: list[ScoredIndividual]) -> GenerationStats:
    values = [ind.fitness for ind in pop]
    return GenerationStats(generation, max(values), float(np.mean(values)))


def init_state(cfg: EvolutionConfig, ds: InteractionDataset) -> EvolutionState:
    cfg.check()
    rng = np.random.default_rng(cfg.seed)
    genomes = [random_genome(cfg.ranges, rng).with_id(i) for i in range(cfg.population_size)]
    cache = FitnessCache()
    pop = evaluate_population([ScoredIndividual(g) for g in genomes], ds, cfg, cache)
    return EvolutionState(0, pop, cache, [], rng, cfg.population_size, cfg.seed, _stats(0, pop))


def make_offspring(state: EvolutionState, cfg: EvolutionConfig) -> list[ScoredIndividual]:
    """Tournament-paired crossover, then mutation of both children."""
    rng = state.rng
    children: list[ScoredIndividual] = []
    while len(children) < cfg.population_size:
        a = tournament_select(state.population, rng)
        b = tournament_select(state.population, rng)
        for child in crossover(a.genome, b.genome, cfg.operators, rng, cfg.ranges):
            child = mutate(child, cfg.operators, cfg.ranges, rng).with_id(state.next_id)
            state.next_id += 1
            children.append(ScoredIndividual(child))
    return children[:cfg.population_size]


def step(state: EvolutionState, cfg: EvolutionConfig, ds: InteractionDataset) -> EvolutionState:
    offspring = evaluate_population(make_offspring(state, cfg), ds, cfg, state.cache)
    state.population = environmental_select(state.population, offspring, cfg.population_size, cfg.operators, state.rng)
    state.generation += 1
    state.history.append(_stats(state.generation, state.population))
    return state


def run(
    cfg: EvolutionConfig,
    ds: InteractionDataset,
    state: EvolutionState | None = None,
    *,
    stop_after: int | None = None,
    on_generation: Callable[[EvolutionState], None] | None = None,
) -> EvolutionState:
    """Run (or continue) the search until ``cfg.generations`` have completed.

    ``stop_after`` bounds how many generations this call runs, leaving a
    checkpoint that :func:`resume` can pick up.
    """
    cfg.check()
    if state is None:
        state = init_state(cfg, ds)
        if cfg.checkpoint_dir:
            checkpoint(state, cfg.checkpoint_dir)
    elif len(state.population) != cfg.population_size:
        raise StateError("checkpointed population size differs from the configuration")
    ran = 0
    while state.generation < cfg.generations and (stop_after is None or ran < stop_after):
        step(state, cfg, ds)
        ran += 1
        last = state.history[-1]
        log.info("generation %d: best %.4f mean %.4f", last.generation, last.best, last.mean)
        if cfg.checkpoint_dir:
            checkpoint(state, cfg.checkpoint_dir)
        if on_generation is not None:
            on_generation(state)
    return state


def evolve(cfg: EvolutionConfig, ds: InteractionDataset) -> tuple[ScoredIndividual, list[GenerationStats]]:
    """Full search from a random population; returns the best individual and history."""
    state = run(cfg, ds)
    return state.best(), list(state.history)


def final_train(
    genome: Genome,
    ds: InteractionDataset,
    train: TrainConfig,
    *,
    epochs: int,
    seed: int,
    k_max: int = 10,
    split: str = TEST,
) -> tuple[Network, list[EvalResult]]:
    """Train a fresh decode for ``epochs`` and sweep HR/NDCG for K = 1..k_max."""
    rng = individual_rng(seed, genome)
    net = _decode_for(genome, ds, train, rng)
    fit_proxy(net, ds, train, rng, epochs=epochs)
    return net, sweep_scorer(network_scorer(net), ds, split, k_max)


def format_history_csv(history: list[GenerationStats]) -> str:
    lines = ["generation,best_ndcg,mean_ndcg"]
    lines += [f"{h.generation},{h.best!r},{h.mean!r}" for h in history]
    return "\n".join(lines) + "\n"


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def checkpoint(state: EvolutionState, directory: str | Path) -> None:
    """Write genome records, the fitness table and, last, the state manifest."""
    root = Path(directory)
    (root / GENOME_DIR).mkdir(parents=True, exist_ok=True)
    entries = []
    for idx, ind in enumerate(state.population):
        name = f"{GENOME_DIR}/ind_{idx:03d}.json"
        _write_text(root / name, serialize(ind.genome) + "\n")
        entries.append({
            "file": name,
            "id": ind.genome.id,
            "hash": ind.genome.structural_hash(),
            "fitness": ind.fitness,
            "flagged": ind.flagged,
        })
    rows = ["genome_hash,fitness"] + [f"{h},{f!r}" for h, f in sorted(state.cache.fitness.items())]
    _write_text(root / CACHE_FILE, "\n".join(rows) + "\n")
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "generation": state.generation,
        "seed": state.seed,
        "next_id": state.next_id,
        "rng_state": state.rng.bit_generator.state,
        "training_runs": state.cache.training_runs,
        "flagged": sorted(state.cache.flagged),
        "initial": asdict(state.initial) if state.initial else None,
        "history": [asdict(h) for h in state.history],
        "population": entries,
    }
    _write_text(root / STATE_FILE, json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def resume(directory: str | Path) -> EvolutionState:
    root = Path(directory)
    state_path = root / STATE_FILE
    if not state_path.is_file():
        raise CheckpointError(f"no complete checkpoint in {root}", [STATE_FILE])
    try:
        manifest = json.loads(state_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt {STATE_FILE}: {exc.msg}") from None
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unrecognised checkpoint format {manifest.get('format')!r}")
    missing = [e["file"] for e in manifest["population"] if not (root / e["file"]).is_file()]
    if not (root / CACHE_FILE).is_file():
        missing.append(CACHE_FILE)
    if missing:
        raise CheckpointError(f"incomplete checkpoint in {root}", missing)

    cache = FitnessCache(training_runs=manifest["training_runs"], flagged=set(manifest["flagged"]))
    try:
        for line in (root / CACHE_FILE).read_text(encoding="utf-8").splitlines()[1:]:
            h, f = line.split(",")
            cache.fitness[h] = float(f)
        population = []
        for e in manifest["population"]:
            genome = deserialize((root / e["file"]).read_text(encoding="utf-8")).with_id(e["id"])
            if genome.structural_hash() != e["hash"]:
                raise CheckpointError(f"{e['file']} does not match its recorded hash")
            population.append(ScoredIndividual(genome, e["fitness"], e["flagged"]))
    except (ValueError, KeyError) as exc:
        raise CheckpointError(f"corrupt checkpoint in {root}: {exc}") from None

    rng = np.random.default_rng()
    rng.bit_generator.state = manifest["rng_state"]
    initial = GenerationStats(**manifest["initial"]) if manifest["initial"] else None
    return EvolutionState(
        generation=manifest["generation"],
        population=population,
        cache=cache,
        history=[GenerationStats(**h) for h in manifest["history"]],
        rng=rng,
        next_id=manifest["next_id"],
        seed=manifest["seed"],
        initial=initial,
    )
