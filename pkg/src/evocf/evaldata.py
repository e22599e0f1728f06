"""Implicit-feedback ingestion, leave-one-out splits and top-K metrics."""

from __future__ import annotations

import math
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ParseError

FORMATS = ("movielens_dat", "tsv_triples")
VALIDATION, TEST = "validation", "test"


@dataclass(frozen=True)
class Interaction:
    user: int
    item: int
    timestamp: int | None = None


@dataclass
class InteractionLog:
    """Reindexed interactions plus the original ids behind each dense index."""

    interactions: list[Interaction]
    user_ids: list[str]
    item_ids: list[str]

    @property
    def num_users(self) -> int:
        return len(self.user_ids)

    @property
    def num_items(self) -> int:
        return len(self.item_ids)

    def __len__(self) -> int:
        return len(self.interactions)

    def __iter__(self):
        return iter(self.interactions)


def _parse_line(line: str, fmt: str, lineno: int) -> tuple[str, str, int | None] | None:
    if fmt == "movielens_dat":
        parts = line.split("::")
        if len(parts) != 4:
            raise ParseError(f"expected user::item::rating::timestamp, got {len(parts)} fields", line=lineno)
        user, item, rating, ts = (p.strip() for p in parts)
        try:
            rating_value = float(rating)
        except ValueError:
            raise ParseError(f"bad rating {rating!r}", line=lineno, field="rating") from None
        if not rating_value > 0:
            return None
    else:
        parts = line.split("\t")
        if len(parts) not in (2, 3):
            raise ParseError(f"expected user<TAB>item[<TAB>timestamp], got {len(parts)} fields", line=lineno)
        user, item = parts[0].strip(), parts[1].strip()
        ts = parts[2].strip() if len(parts) == 3 else None
    if not user or not item:
        raise ParseError("empty id", line=lineno)
    if ts is None or ts == "":
        return user, item, None
    try:
        return user, item, int(ts)
    except ValueError:
        raise ParseError(f"bad timestamp {ts!r}", line=lineno, field="timestamp") from None


def load_interactions(path: str | Path, fmt: str = "movielens_dat") -> InteractionLog:
    """Read an interaction file and densely reindex users and items from 0.

    Indices follow order of first appearance. Repeated (user, item) pairs
    collapse to one interaction carrying the latest timestamp.

    Raises:
        ParseError: on a malformed line (message carries the line number).
        DataError: if the file holds no interactions.
    """
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    latest: dict[tuple[int, int], int | None] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            parsed = _parse_line(line, fmt, lineno)
            if parsed is None:
                continue
            user, item, ts = parsed
            u = user_index.setdefault(user, len(user_index))
            i = item_index.setdefault(item, len(item_index))
            key = (u, i)
            if key not in latest:
                latest[key] = ts
            elif ts is not None and (latest[key] is None or ts > latest[key]):
                latest[key] = ts
    if not latest:
        raise DataError(f"{path}: no interactions found")
    interactions = [Interaction(u, i, ts) for (u, i), ts in latest.items()]
    return InteractionLog(interactions, list(user_index), list(item_index))


@dataclass
class InteractionDataset:
    """Leave-one-out split.

    Per-user arrays are indexed by dense user id; users dropped for having
    fewer than three interactions hold ``-1`` in ``validation_item``,
    ``test_item`` and ``eval_negatives``.
    """

    num_users: int
    num_items: int
    train_users: np.ndarray
    train_items: np.ndarray
    train_timestamps: np.ndarray
    validation_item: np.ndarray
    test_item: np.ndarray
    eval_negatives: np.ndarray
    dropped_users: int = 0
    _train_keys: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._train_keys = np.unique(self.train_users.astype(np.int64) * self.num_items + self.train_items)

    @property
    def users(self) -> np.ndarray:
        """Users that carry held-out items (the evaluation population)."""
        return np.flatnonzero(self.test_item >= 0)

    def is_train_positive(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        keys = np.asarray(users, dtype=np.int64) * self.num_items + np.asarray(items, dtype=np.int64)
        pos = np.searchsorted(self._train_keys, keys)
        pos = np.minimum(pos, self._train_keys.size - 1)
        return self._train_keys[pos] == keys

    def held_out(self, split: str) -> np.ndarray:
        if split == VALIDATION:
            return self.validation_item
        if split == TEST:
            return self.test_item
        raise ValueError(f"split must be '{VALIDATION}' or '{TEST}', got {split!r}")

    def train_sets(self) -> list[set[int]]:
        sets: list[set[int]] = [set() for _ in range(self.num_users)]
        for u, i in zip(self.train_users.tolist(), self.train_items.tolist()):
            sets[u].add(i)
        return sets

    def integrity_violations(self) -> list[str]:
        """Exhaustive scan of split disjointness and negative purity."""
        problems = []
        train = self.train_sets()
        for u in range(self.num_users):
            val, test = int(self.validation_item[u]), int(self.test_item[u])
            negs = self.eval_negatives[u]
            if test < 0:
                if val >= 0 or (negs >= 0).any():
                    problems.append(f"user {u}: dropped user has held-out data")
                continue
            if val == test:
                problems.append(f"user {u}: validation item equals test item")
            if val in train[u]:
                problems.append(f"user {u}: validation item in train")
            if test in train[u]:
                problems.append(f"user {u}: test item in train")
            observed = train[u] | {val, test}
            neg_list = negs.tolist()
            if len(set(neg_list)) != len(neg_list):
                problems.append(f"user {u}: duplicate negatives")
            for n in neg_list:
                if n in observed:
                    problems.append(f"user {u}: negative {n} was observed")
                if not 0 <= n < self.num_items:
                    problems.append(f"user {u}: negative {n} out of range")
        return problems


def leave_one_out_split(
    interactions: Iterable[Interaction] | InteractionLog,
    negatives: int = 99,
    rng: np.random.Generator | None = None,
    *,
    num_users: int | None = None,
    num_items: int | None = None,
    user_ids: list[str] | None = None,
) -> InteractionDataset:
    """Hold out each user's latest interaction for test, the next for validation.

    Timestamp ties keep input order. Evaluation negatives are drawn without
    replacement from items the user never interacted with.

    Raises:
        DataError: when a user has fewer unobserved items than ``negatives``.
    """
    if isinstance(interactions, InteractionLog):
        num_users = interactions.num_users if num_users is None else num_users
        num_items = interactions.num_items if num_items is None else num_items
        user_ids = interactions.user_ids if user_ids is None else user_ids
        interactions = interactions.interactions
    interactions = list(interactions)
    if not interactions:
        raise DataError("no interactions to split")
    rng = rng if rng is not None else np.random.default_rng(0)
    num_users = num_users if num_users is not None else max(x.user for x in interactions) + 1
    num_items = num_items if num_items is not None else max(x.item for x in interactions) + 1

    per_user: list[list[tuple[int, int, int]]] = [[] for _ in range(num_users)]
    for seq, x in enumerate(interactions):
        ts = x.timestamp if x.timestamp is not None else -1
        per_user[x.user].append((ts, seq, x.item))

    validation = np.full(num_users, -1, dtype=np.int64)
    test = np.full(num_users, -1, dtype=np.int64)
    neg = np.full((num_users, negatives), -1, dtype=np.int64)
    tr_u, tr_i, tr_t = [], [], []
    dropped = 0
    all_items = np.arange(num_items)
    for u, events in enumerate(per_user):
        if not events:
            continue
        if len(events) < 3:
            dropped += 1
            continue
        events.sort()
        test[u] = events[-1][2]
        validation[u] = events[-2][2]
        for ts, _, item in events[:-2]:
            tr_u.append(u)
            tr_i.append(item)
            tr_t.append(ts)
        observed = np.fromiter((e[2] for e in events), dtype=np.int64)
        pool = np.setdiff1d(all_items, observed, assume_unique=False)
        if pool.size < negatives:
            name = user_ids[u] if user_ids is not None else u
            raise DataError(f"user {name}: only {pool.size} unobserved items, {negatives} negatives requested")
        if negatives:
            neg[u] = rng.choice(pool, size=negatives, replace=False)
    return InteractionDataset(
        num_users=num_users,
        num_items=num_items,
        train_users=np.asarray(tr_u, dtype=np.int64),
        train_items=np.asarray(tr_i, dtype=np.int64),
        train_timestamps=np.asarray(tr_t, dtype=np.int64),
        validation_item=validation,
        test_item=test,
        eval_negatives=neg,
        dropped_users=dropped,
    )


@dataclass
class RankedList:
    """Items in descending score order; equal scores rank the lower item id first."""

    items: np.ndarray
    scores: np.ndarray

    @classmethod
    def from_scores(cls, items, scores) -> RankedList:
        items = np.asarray(items)
        scores = np.asarray(scores, dtype=np.float64)
        order = np.lexsort((items, -scores))
        return cls(items[order], scores[order])

    def position(self, item) -> int | None:
        """1-based rank of ``item``, or None when absent."""
        hits = np.flatnonzero(self.items == item)
        return int(hits[0]) + 1 if hits.size else None


def dcg(gains: Iterable[float], k: int) -> float:
    g = np.asarray(list(gains), dtype=np.float64)[:k]
    return float(np.sum((np.power(2.0, g) - 1.0) / np.log2(np.arange(2, g.size + 2))))


def ndcg_graded(relevance: Iterable[float], k: int) -> float:
    """NDCG@k of a ranked list given the relevance grade at each position."""
    if k < 1:
        raise ValueError("K must be >= 1")
    rel = np.asarray(list(relevance), dtype=np.float64)
    ideal = dcg(np.sort(rel)[::-1], k)
    return dcg(rel, k) / ideal if ideal > 0 else 0.0


def ndcg_at_k(ranked: RankedList, relevant, k: int) -> float:
    if k < 1:
        raise ValueError("K must be >= 1")
    pos = ranked.position(relevant)
    return 1.0 / math.log2(pos + 1) if pos is not None and pos <= k else 0.0


def hr_at_k(ranked: RankedList, relevant, k: int) -> float:
    if k < 1:
        raise ValueError("K must be >= 1")
    pos = ranked.position(relevant)
    return 1.0 if pos is not None and pos <= k else 0.0


@dataclass
class EvalResult:
    k: int
    hr: float
    ndcg: float
    per_user_hr: np.ndarray = field(repr=False)
    per_user_ndcg: np.ndarray = field(repr=False)
    users: np.ndarray = field(repr=False)

    @property
    def n_users(self) -> int:
        return int(self.users.size)


Scorer = Callable[[np.ndarray, np.ndarray], np.ndarray]


def held_out_positions(scorer: Scorer, ds: InteractionDataset, split: str, batch_users: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Rank of each evaluated user's held-out item among its candidates.

    Candidates are the held-out item plus the user's evaluation negatives.
    Returns ``(users, positions)`` with 1-based positions.
    """
    target = ds.held_out(split)
    users = ds.users
    positions = np.empty(users.size, dtype=np.int64)
    for start in range(0, users.size, batch_users):
        chunk = users[start:start + batch_users]
        cand = np.concatenate([target[chunk, None], ds.eval_negatives[chunk]], axis=1)
        rows = np.repeat(chunk, cand.shape[1])
        scores = np.asarray(scorer(rows, cand.ravel()), dtype=np.float64).reshape(cand.shape)
        s0, i0 = scores[:, :1], cand[:, :1]
        ahead = (scores > s0) | ((scores == s0) & (cand < i0))
        positions[start:start + chunk.size] = 1 + ahead.sum(axis=1)
    return users, positions


def metrics_from_positions(users: np.ndarray, positions: np.ndarray, k: int) -> EvalResult:
    if k < 1:
        raise ValueError("K must be >= 1")
    hit = positions <= k
    per_hr = hit.astype(np.float64)
    per_ndcg = np.where(hit, 1.0 / np.log2(positions + 1.0), 0.0)
    n = max(users.size, 1)
    return EvalResult(k, float(per_hr.sum() / n), float(per_ndcg.sum() / n), per_hr, per_ndcg, users)


def evaluate_scorer(scorer: Scorer, ds: InteractionDataset, split: str, k: int = 10) -> EvalResult:
    return metrics_from_positions(*held_out_positions(scorer, ds, split), k)


def sweep_scorer(scorer: Scorer, ds: InteractionDataset, split: str, k_max: int = 10) -> list[EvalResult]:
    """Metrics for every K in 1..k_max from a single ranking pass."""
    users, positions = held_out_positions(scorer, ds, split)
    return [metrics_from_positions(users, positions, k) for k in range(1, k_max + 1)]


def network_scorer(net) -> Scorer:
    from .network import logits

    # Logits rank identically to sigmoid scores without saturating into ties.
    return lambda users, items: logits(net, users, items, training=False)


def evaluate_model(net, ds: InteractionDataset, split: str = VALIDATION, k: int = 10) -> EvalResult:
    return evaluate_scorer(network_scorer(net), ds, split, k)


def popularity_scorer(ds: InteractionDataset) -> Scorer:
    counts = np.bincount(ds.train_items, minlength=ds.num_items).astype(np.float64)
    return lambda users, items: counts[items]


def random_scorer(rng: np.random.Generator) -> Scorer:
    return lambda users, items: rng.random(np.asarray(items).size)


def format_metrics_csv(results: list[EvalResult]) -> str:
    lines = ["K,HR,NDCG"]
    lines += [f"{r.k},{r.hr!r},{r.ndcg!r}" for r in results]
    return "\n".join(lines) + "\n"
