"""Synthetic implicit-feedback data with planted low-rank preferences.

Each user picks items without replacement with probability proportional to
``exp(sharpness * <u, v> + popularity_i)`` (Gumbel top-k trick), so a model
has both a popularity signal and a personal one to learn.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .evaldata import Interaction


def planted_interactions(
    num_users: int,
    num_items: int,
    *,
    rank: int = 8,
    mean_per_user: float = 20.0,
    min_per_user: int = 5,
    max_per_user: int | None = None,
    sharpness: float = 3.0,
    popularity_scale: float = 1.0,
    seed: int = 0,
) -> list[Interaction]:
    rng = np.random.default_rng(seed)
    user_f = rng.normal(size=(num_users, rank)) / np.sqrt(rank)
    item_f = rng.normal(size=(num_items, rank))
    popularity = popularity_scale * rng.normal(size=num_items)
    affinity = sharpness * user_f @ item_f.T + popularity

    extra = max(mean_per_user - min_per_user, 0.0)
    counts = min_per_user + rng.geometric(1.0 / (extra + 1.0), size=num_users) - 1
    counts = np.minimum(counts, max_per_user or num_items - 1)

    out = []
    for u in range(num_users):
        keys = affinity[u] + rng.gumbel(size=num_items)
        chosen = np.argsort(-keys, kind="stable")[: counts[u]]
        times = 1_000_000 + np.sort(rng.choice(10_000_000, size=chosen.size, replace=False))
        # Visit order is random so the held-out items are not the strongest preferences.
        for item, ts in zip(rng.permutation(chosen), times):
            out.append(Interaction(u, int(item), int(ts)))
    return out


def write_movielens(path: str | Path, interactions: list[Interaction], rating: int = 5) -> None:
    """Write ``user::item::rating::timestamp`` lines with 1-based ids."""
    with open(path, "w", encoding="utf-8") as fh:
        for x in interactions:
            fh.write(f"{x.user + 1}::{x.item + 1}::{rating}::{x.timestamp}\n")
