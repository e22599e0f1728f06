"""Variation and selection operators over genomes.

Numeric genes go through real-coded SBX and polynomial mutation; integer
genes are recombined as reals, rounded half-up and clamped back into range.
Init-scheme tags are categorical: crossover swaps them and mutation
resamples them.

Every random draw goes through ``rng.random()`` or ``rng.integers()`` so a
scripted stand-in can drive the operators in tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


from .errors import ConfigError, StateError
from .genome import INIT_SCHEMES, BlockGene, Genome, GenomeRanges, random_block


@dataclass(frozen=True)
class OperatorConfig:
    sbx_probability: float = 0.9
    pm_probability: float = 0.2
    eta: float = 1.0
    elitism_rate: float = 0.2
    length_mutation_probability: float = 0.2

    def check(self) -> None:
        for name in ("sbx_probability", "pm_probability", "elitism_rate", "length_mutation_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {p}")
        if not (self.eta >= 0 and math.isfinite(self.eta)):
            raise ConfigError(f"distribution index must be finite and >= 0, got {self.eta}")


@dataclass
class ScoredIndividual:
    genome: Genome
    fitness: float | None = None
    flagged: bool = False


def sbx_real(x1: float, x2: float, eta: float, u: float) -> tuple[float, float]:
    """Simulated binary crossover of two reals for a given uniform draw ``u``."""
    if not 0.0 < u < 1.0:
        raise ValueError(f"u must lie strictly inside (0, 1), got {u}")
    if u <= 0.5:
        beta = (2.0 * u) ** (1.0 / (eta + 1.0))
    else:
        beta = (1.0 / (2.0 * (1.0 - u))) ** (1.0 / (eta + 1.0))
    # Same as 0.5*[(1±b)x1 + (1∓b)x2], arranged so equal parents map to themselves exactly.
    total, spread = x1 + x2, beta * (x1 - x2)
    return 0.5 * (total + spread), 0.5 * (total - spread)


def pm_real(x: float, lo: float, hi: float, eta: float, u: float) -> float:
    """Polynomial mutation of ``x`` within ``[lo, hi]`` for a uniform draw ``u``."""
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    if not lo <= x <= hi:
        raise ValueError(f"x={x} outside [{lo}, {hi}]")
    if not 0.0 < u < 1.0:
        raise ValueError(f"u must lie strictly inside (0, 1), got {u}")
    span = hi - lo
    power = 1.0 / (eta + 1.0)
    if u < 0.5:
        delta1 = (x - lo) / span
        delta_q = (2.0 * u + (1.0 - 2.0 * u) * (1.0 - delta1) ** (eta + 1.0)) ** power - 1.0
    else:
        delta2 = (hi - x) / span
        delta_q = 1.0 - (2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - delta2) ** (eta + 1.0)) ** power
    return min(max(x + delta_q * span, lo), hi)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _clamp(x, bounds):
    return min(max(x, bounds[0]), bounds[1])


def _open_uniform(rng) -> float:
    u = rng.random()
    while u <= 0.0:
        u = rng.random()
    return float(u)


def _sbx_int(a: int, b: int, bounds, eta, rng) -> tuple[int, int]:
    c1, c2 = sbx_real(a, b, eta, _open_uniform(rng))
    return _clamp(round_half_up(c1), bounds), _clamp(round_half_up(c2), bounds)


def crossover(
    p1: Genome,
    p2: Genome,
    cfg: OperatorConfig,
    rng,
    ranges: GenomeRanges | None = None,
) -> tuple[Genome, Genome]:
    """Head-aligned block exchange.

    Blocks are paired from position 0 up to the shorter parent's block
    count. Each pair, and the embedding head, is recombined with probability
    ``cfg.sbx_probability``: SBX on neurons and dropout, tag swap on the init
    scheme. Tails past the shorter parent stay with their owner, so children
    keep their parents' lengths.
    """
    ranges = ranges or GenomeRanges()
    e1, e2 = p1.embedding_dim, p2.embedding_dim
    if rng.random() < cfg.sbx_probability:
        e1, e2 = _sbx_int(e1, e2, ranges.embedding_dim, cfg.eta, rng)

    b1, b2 = list(p1.blocks), list(p2.blocks)
    for i in range(min(len(b1), len(b2))):
        if rng.random() >= cfg.sbx_probability:
            continue
        x, y = b1[i], b2[i]
        n1, n2 = _sbx_int(x.neurons, y.neurons, ranges.neurons, cfg.eta, rng)
        d1, d2 = sbx_real(x.dropout, y.dropout, cfg.eta, _open_uniform(rng))
        b1[i] = BlockGene(n1, float(_clamp(d1, ranges.dropout)), y.init)
        b2[i] = BlockGene(n2, float(_clamp(d2, ranges.dropout)), x.init)

    return (
        Genome(e1, tuple(b1), p1.prediction_init),
        Genome(e2, tuple(b2), p2.prediction_init),
    )


def _pm_int(x: int, bounds, eta, rng) -> int:
    lo, hi = bounds
    if lo == hi:
        return x
    return _clamp(round_half_up(pm_real(x, lo, hi, eta, _open_uniform(rng))), bounds)


def _random_tag(rng):
    return INIT_SCHEMES[int(rng.integers(len(INIT_SCHEMES)))]


def mutate(genome: Genome, cfg: OperatorConfig, ranges: GenomeRanges | None, rng) -> Genome:
    """Polynomial mutation of every gene field, then an optional length change.

    Each numeric field is mutated independently with probability
    ``pm_probability`` and each init tag resampled with the same probability.
    With probability ``length_mutation_probability`` one block is inserted
    (freshly random) or removed at a random position; a change that would
    leave the length bounds is rejected.
    """
    ranges = ranges or GenomeRanges()
    p = cfg.pm_probability

    embedding_dim = genome.embedding_dim
    if rng.random() < p:
        embedding_dim = _pm_int(embedding_dim, ranges.embedding_dim, cfg.eta, rng)

    blocks = []
    for b in genome.blocks:
        neurons, dropout, init = b.neurons, b.dropout, b.init
        if rng.random() < p:
            neurons = _pm_int(neurons, ranges.neurons, cfg.eta, rng)
        if rng.random() < p and ranges.dropout[0] < ranges.dropout[1]:
            dropout = pm_real(dropout, *ranges.dropout, cfg.eta, _open_uniform(rng))
        if rng.random() < p:
            init = _random_tag(rng)
        blocks.append(BlockGene(neurons, float(dropout), init))

    prediction_init = genome.prediction_init
    if rng.random() < p:
        prediction_init = _random_tag(rng)

    if rng.random() < cfg.length_mutation_probability:
        grow = rng.random() < 0.5
        new_length = len(blocks) + 2 + (1 if grow else -1)
        if ranges.length[0] <= new_length <= ranges.length[1]:
            if grow:
                pos = int(rng.integers(len(blocks) + 1))
                blocks.insert(pos, random_block(ranges, rng))
            else:
                pos = int(rng.integers(len(blocks)))
                del blocks[pos]

    return Genome(embedding_dim, tuple(blocks), prediction_init)


def tournament_select(pop: list[ScoredIndividual], rng) -> ScoredIndividual:
    """Binary tournament: the fitter of two distinct random members, ties by coin flip."""
    if not pop:
        raise StateError("tournament over an empty population")
    if any(ind.fitness is None for ind in pop):
        raise StateError("tournament requires every individual to be evaluated")
    if len(pop) == 1:
        return pop[0]
    i = int(rng.integers(len(pop)))
    j = int(rng.integers(len(pop) - 1))
    if j >= i:
        j += 1
    a, b = pop[i], pop[j]
    if a.fitness == b.fitness:
        return a if rng.random() < 0.5 else b
    return a if a.fitness > b.fitness else b


def elite_count(rate: float, pop_size: int) -> int:
    # Tolerance guards products like 0.29 * 100 == 28.999999999999996.
    return max(1, math.floor(rate * pop_size + 1e-9))


def environmental_select(
    parents: list[ScoredIndividual],
    offspring: list[ScoredIndividual],
    pop_size: int,
    cfg: OperatorConfig,
    rng,
) -> list[ScoredIndividual]:
    """Elitism followed by binary tournaments over the non-elite remainder."""
    union = list(parents) + list(offspring)
    if not union:
        raise StateError("environmental selection over an empty population")
    if any(ind.fitness is None for ind in union):
        raise StateError("environmental selection requires evaluated individuals")
    if pop_size < 1:
        raise ConfigError(f"pop_size must be >= 1, got {pop_size}")

    # Random keys break fitness ties uniformly.
    tiebreak = [rng.random() for _ in union]
    order = sorted(range(len(union)), key=lambda k: (-union[k].fitness, tiebreak[k]))
    n_elite = min(elite_count(cfg.elitism_rate, pop_size), pop_size, len(union))
    chosen = [union[k] for k in order[:n_elite]]
    rest = [union[k] for k in order[n_elite:]] or union
    while len(chosen) < pop_size:
        chosen.append(tournament_select(rest, rng))
    return chosen
