"""Flat ``key = value`` run configuration.

Keys follow the GA parameter names; ranges are written ``lo-hi``::

    population_size = 16
    total_generation_number = 20
    length_of_dnn = 4-10
    neurons = 16-256
"""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

from .errors import ConfigError
from .evolution import EvolutionConfig

_INT, _FLOAT, _STR, _INT_RANGE, _FLOAT_RANGE = "int", "float", "str", "int-range", "float-range"

# key -> (section, attribute, kind)
KEYS: dict[str, tuple[str, str, str]] = {
    "population_size": ("run", "population_size", _INT),
    "total_generation_number": ("run", "generations", _INT),
    "top_k": ("run", "top_k", _INT),
    "final_epochs": ("run", "final_epochs", _INT),
    "jobs": ("run", "jobs", _INT),
    "seed": ("run", "seed", _INT),
    "distribution_index": ("operators", "eta", _FLOAT),
    "sbx_probability": ("operators", "sbx_probability", _FLOAT),
    "pm_probability": ("operators", "pm_probability", _FLOAT),
    "elitism_rate": ("operators", "elitism_rate", _FLOAT),
    "length_mutation_probability": ("operators", "length_mutation_probability", _FLOAT),
    "length_of_dnn": ("ranges", "length", _INT_RANGE),
    "neurons": ("ranges", "neurons", _INT_RANGE),
    "dropout_rate": ("ranges", "dropout", _FLOAT_RANGE),
    "embedding_dim": ("ranges", "embedding_dim", _INT_RANGE),
    "learning_rate": ("train", "learning_rate", _FLOAT),
    "proxy_epochs": ("train", "proxy_epochs", _INT),
    "batch_size": ("train", "batch_size", _INT),
    "negatives_per_positive": ("train", "negatives_per_positive", _INT),
    "optimizer": ("train", "optimizer", _STR),
    "random_init_std": ("train", "random_init_std", _FLOAT),
    "random_init_bound": ("train", "random_init_bound", _FLOAT),
}


def _convert(key: str, kind: str, text: str):
    try:
        if kind == _INT:
            return int(text)
        if kind == _FLOAT:
            return float(text)
        if kind == _STR:
            return text
        lo, sep, hi = text.partition("-")
        if not sep:
            raise ValueError("expected lo-hi")
        cast = int if kind == _INT_RANGE else float
        return cast(lo.strip()), cast(hi.strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot read {text!r} ({exc})") from None


def parse_config(text: str, base: EvolutionConfig | None = None) -> EvolutionConfig:
    """Overlay the key-value document on ``base`` (defaults if None) and validate."""
    values: dict[str, dict] = {"run": {}, "operators": {}, "ranges": {}, "train": {}}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        if key not in KEYS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        section, attr, kind = KEYS[key]
        values[section][attr] = _convert(key, kind, value.strip())

    cfg = base or EvolutionConfig()
    cfg = replace(
        cfg,
        operators=replace(cfg.operators, **values["operators"]),
        ranges=replace(cfg.ranges, **values["ranges"]),
        train=replace(cfg.train, **values["train"]),
        **values["run"],
    )
    cfg.check()
    return cfg


def load_config(path: str | Path, base: EvolutionConfig | None = None) -> EvolutionConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base)


def config_items(cfg: EvolutionConfig) -> dict[str, str]:
    sections = {"run": cfg, "operators": cfg.operators, "ranges": cfg.ranges, "train": cfg.train}
    out = {}
    for key, (section, attr, kind) in KEYS.items():
        value = getattr(sections[section], attr)
        if kind in (_INT_RANGE, _FLOAT_RANGE):
            out[key] = f"{value[0]!r}-{value[1]!r}"
        else:
            out[key] = str(value) if kind == _STR else repr(value)
    return out


def format_config(cfg: EvolutionConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in config_items(cfg).items())

