"""Variable-length encoding of a feed-forward CF network.

A genome is an embedding gene (the head), an ordered list of block genes
(dense + ReLU + dropout each) and a fixed prediction gene. Its *length* counts
all three parts, so a length-4 genome has two hidden blocks.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError, ParseError


class InitScheme(str, enum.Enum):
    """Weight initialization tag: {Random, Xavier, Kaiming} x {normal, uniform}."""

    Rn = "Rn"
    Ru = "Ru"
    Xn = "Xn"
    Xu = "Xu"
    Kn = "Kn"
    Ku = "Ku"


INIT_SCHEMES: tuple[InitScheme, ...] = tuple(InitScheme)


@dataclass(frozen=True)
class GenomeRanges:
    length: tuple[int, int] = (4, 10)
    neurons: tuple[int, int] = (16, 256)
    dropout: tuple[float, float] = (0.0, 0.5)
    embedding_dim: tuple[int, int] = (8, 64)

    def check(self) -> None:
        """Raise ConfigError unless every range is finite and ordered."""
        for f in fields(self):
            lo, hi = getattr(self, f.name)
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ConfigError(f"{f.name} bounds must be finite, got ({lo}, {hi})")
            if lo > hi:
                raise ConfigError(f"{f.name} lower bound {lo} exceeds upper bound {hi}")
        if self.length[0] < 2:
            raise ConfigError("length counts embedding and prediction units, minimum is 2")
        if self.neurons[0] < 1 or self.embedding_dim[0] < 1:
            raise ConfigError("neurons and embedding_dim must be positive")
        if self.dropout[0] < 0 or self.dropout[1] >= 1:
            raise ConfigError("dropout bounds must lie in [0, 1)")


@dataclass(frozen=True)
class BlockGene:
    neurons: int
    dropout: float
    init: InitScheme


@dataclass(frozen=True)
class Genome:
    embedding_dim: int
    blocks: tuple[BlockGene, ...]
    prediction_init: InitScheme
    id: int | None = field(default=None, compare=False)

    @property
    def length(self) -> int:
        return len(self.blocks) + 2

    def with_id(self, new_id: int) -> Genome:
        return Genome(self.embedding_dim, self.blocks, self.prediction_init, new_id)

    def structural_hash(self) -> str:
        """Hex digest of the serialized record; ignores ``id``."""
        return hashlib.sha256(serialize(self).encode()).hexdigest()


def random_genome(ranges: GenomeRanges, rng: np.random.Generator) -> Genome:
    ranges.check()
    length = int(rng.integers(ranges.length[0], ranges.length[1] + 1))
    embedding_dim = int(rng.integers(ranges.embedding_dim[0], ranges.embedding_dim[1] + 1))
    blocks = tuple(random_block(ranges, rng) for _ in range(length - 2))
    prediction_init = INIT_SCHEMES[int(rng.integers(len(INIT_SCHEMES)))]
    return Genome(embedding_dim, blocks, prediction_init)


def random_block(ranges: GenomeRanges, rng: np.random.Generator) -> BlockGene:
    neurons = int(rng.integers(ranges.neurons[0], ranges.neurons[1] + 1))
    lo, hi = ranges.dropout
    dropout = float(lo + (hi - lo) * rng.random())
    init = INIT_SCHEMES[int(rng.integers(len(INIT_SCHEMES)))]
    return BlockGene(neurons, dropout, init)


def validate(genome: Genome, ranges: GenomeRanges | None = None) -> list[str]:
    """Return every invariant violation of ``genome``; empty means valid."""
    ranges = ranges or GenomeRanges()
    problems = []
    lo, hi = ranges.length
    if genome.length < lo:
        problems.append(f"length < {lo} (got {genome.length})")
    if genome.length > hi:
        problems.append(f"length > {hi} (got {genome.length})")
    problems += _check_int("embedding_dim", genome.embedding_dim, ranges.embedding_dim)
    for i, block in enumerate(genome.blocks):
        problems += _check_int(f"block {i}: neurons", block.neurons, ranges.neurons)
        lo, hi = ranges.dropout
        d = block.dropout
        if not isinstance(d, (int, float)) or isinstance(d, bool) or not math.isfinite(d):
            problems.append(f"block {i}: dropout is not a finite real ({d!r})")
        elif d < lo:
            problems.append(f"block {i}: dropout < {lo} (got {d})")
        elif d > hi:
            problems.append(f"block {i}: dropout > {hi} (got {d})")
        if not isinstance(block.init, InitScheme):
            problems.append(f"block {i}: unknown init scheme {block.init!r}")
    if not isinstance(genome.prediction_init, InitScheme):
        problems.append(f"prediction: unknown init scheme {genome.prediction_init!r}")
    return problems


def _check_int(name: str, value, bounds: tuple[int, int]) -> list[str]:
    if not isinstance(value, int) or isinstance(value, bool):
        return [f"{name} is not an integer ({value!r})"]
    lo, hi = bounds
    if value < lo:
        return [f"{name} < {lo} (got {value})"]
    if value > hi:
        return [f"{name} > {hi} (got {value})"]
    return []


def to_record(genome: Genome) -> dict:
    return {
        "embedding_dim": genome.embedding_dim,
        "blocks": [
            {"neurons": b.neurons, "dropout": b.dropout, "init": b.init.value}
            for b in genome.blocks
        ],
        "prediction": {"init": genome.prediction_init.value},
    }


def serialize(genome: Genome) -> str:
    # Canonical form: the structural hash and checkpoint byte-identity depend on it.
    return json.dumps(to_record(genome), sort_keys=True, separators=(",", ":"))


def deserialize(text: str) -> Genome:
    """Parse a genome record.

    Only the record's shape and field types are checked; range violations
    (say a dropout of 0.9) parse fine and are left for :func:`validate`.

    Raises:
        ParseError: if the text is not JSON or a field is missing or mistyped.
    """
    try:
        record = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"not a genome record: {exc.msg} at char {exc.pos}", field="record") from None
    return from_record(record)


def from_record(record) -> Genome:
    if not isinstance(record, dict):
        raise ParseError("genome record must be an object", field="record")
    embedding_dim = _get(record, "embedding_dim", int, "embedding_dim")
    raw_blocks = _get(record, "blocks", list, "blocks")
    blocks = []
    for i, raw in enumerate(raw_blocks):
        where = f"blocks[{i}]"
        if not isinstance(raw, dict):
            raise ParseError("block must be an object", field=where)
        neurons = _get(raw, "neurons", int, f"{where}.neurons")
        dropout = _get(raw, "dropout", (int, float), f"{where}.dropout")
        init = _scheme(_get(raw, "init", str, f"{where}.init"), f"{where}.init")
        blocks.append(BlockGene(neurons, float(dropout), init))
    prediction = _get(record, "prediction", dict, "prediction")
    prediction_init = _scheme(_get(prediction, "init", str, "prediction.init"), "prediction.init")
    return Genome(embedding_dim, tuple(blocks), prediction_init)


def _get(obj: dict, key: str, kind, where: str):
    if key not in obj:
        raise ParseError("missing", field=where)
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, kind):
        raise ParseError(f"unexpected value {value!r}", field=where)
    return value


def _scheme(tag: str, where: str) -> InitScheme:
    try:
        return InitScheme(tag)
    except ValueError:
        raise ParseError(f"unknown init scheme {tag!r}", field=where) from None
