"""Decoded scoring network, trained with hand-written backpropagation.

Layout: user and item embedding tables of width ``d`` whose rows are
concatenated into a ``2d`` input, then one dense layer per block gene (ReLU
and inverted dropout), then a width-1 prediction layer followed by a sigmoid.
Weights are stored as ``(fan_out, fan_in)`` arrays; everything is float64.
"""

from __future__ import annotations

import json
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NumericError, ParseError
from .genome import Genome, InitScheme, from_record, to_record

RANDOM_NORMAL_STD = 0.01
RANDOM_UNIFORM_BOUND = 0.1
EMBEDDING_STD = 0.01

_TINY = np.nextafter(0.0, 1.0)
_ALMOST_ONE = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    proxy_epochs: int = 2
    batch_size: int = 64
    negatives_per_positive: int = 4
    optimizer: str = "adam"
    seed: int = 0
    random_init_std: float = RANDOM_NORMAL_STD
    random_init_bound: float = RANDOM_UNIFORM_BOUND

    def check(self) -> None:
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ConfigError(f"learning_rate must be finite and positive, got {self.learning_rate}")
        if self.proxy_epochs < 0:
            raise ConfigError(f"proxy_epochs must be >= 0, got {self.proxy_epochs}")
        if self.batch_size < 1 or self.negatives_per_positive < 1:
            raise ConfigError("batch_size and negatives_per_positive must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.random_init_std <= 0 or self.random_init_bound <= 0:
            raise ConfigError("random init constants must be positive")


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    relu: bool
    dropout_rate: float


@dataclass
class Network:
    user_table: np.ndarray
    item_table: np.ndarray
    layers: list[DenseLayer]
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    genome: Genome | None = None
    opt_state: dict = field(default_factory=dict)

    @property
    def embedding_dim(self) -> int:
        return self.user_table.shape[1]

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        params = [("user_table", self.user_table), ("item_table", self.item_table)]
        for i, layer in enumerate(self.layers):
            params.append((f"layers.{i}.weights", layer.weights))
            params.append((f"layers.{i}.bias", layer.bias))
        return params

    def widths(self) -> list[int]:
        return [2 * self.embedding_dim] + [layer.weights.shape[0] for layer in self.layers]


def init_weights(
    shape: tuple[int, int],
    scheme: InitScheme,
    rng: np.random.Generator,
    *,
    random_std: float = RANDOM_NORMAL_STD,
    random_bound: float = RANDOM_UNIFORM_BOUND,
) -> np.ndarray:
    """Sample a ``(fan_out, fan_in)`` weight matrix under ``scheme``.

    Xavier variants target variance ``2 / (fan_in + fan_out)``, Kaiming
    variants ``2 / fan_in``; the uniform bounds are ``sqrt(3 * variance)``.
    """
    fan_out, fan_in = shape
    scheme = InitScheme(scheme)
    if scheme is InitScheme.Rn:
        return rng.normal(0.0, random_std, size=shape)
    if scheme is InitScheme.Ru:
        return rng.uniform(-random_bound, random_bound, size=shape)
    if scheme in (InitScheme.Xn, InitScheme.Xu):
        var = 2.0 / (fan_in + fan_out)
    else:
        var = 2.0 / fan_in
    if scheme in (InitScheme.Xn, InitScheme.Kn):
        return rng.normal(0.0, math.sqrt(var), size=shape)
    bound = math.sqrt(3.0 * var)
    return rng.uniform(-bound, bound, size=shape)


def init_variance(shape: tuple[int, int], scheme: InitScheme, *, random_std=RANDOM_NORMAL_STD,
                  random_bound=RANDOM_UNIFORM_BOUND) -> float:
    """Target variance of :func:`init_weights` entries."""
    fan_out, fan_in = shape
    scheme = InitScheme(scheme)
    if scheme is InitScheme.Rn:
        return random_std**2
    if scheme is InitScheme.Ru:
        return random_bound**2 / 3.0
    if scheme in (InitScheme.Xn, InitScheme.Xu):
        return 2.0 / (fan_in + fan_out)
    return 2.0 / fan_in


def decode(
    genome: Genome,
    num_users: int,
    num_items: int,
    rng: np.random.Generator,
    *,
    random_std: float = RANDOM_NORMAL_STD,
    random_bound: float = RANDOM_UNIFORM_BOUND,
    embedding_std: float = EMBEDDING_STD,
) -> Network:
    if num_users < 1 or num_items < 1:
        raise ValueError("entity counts must be positive")
    d = genome.embedding_dim
    user_table = rng.normal(0.0, embedding_std, size=(num_users, d))
    item_table = rng.normal(0.0, embedding_std, size=(num_items, d))
    layers = []
    fan_in = 2 * d
    specs = [(b.neurons, b.init, True, b.dropout) for b in genome.blocks]
    specs.append((1, genome.prediction_init, False, 0.0))
    for width, scheme, relu, rate in specs:
        w = init_weights((width, fan_in), scheme, rng, random_std=random_std, random_bound=random_bound)
        layers.append(DenseLayer(w, np.zeros(width), relu, float(rate)))
        fan_in = width
    # Dropout gets its own stream so mask draws never shift parameter draws.
    dropout_rng = np.random.default_rng(rng.integers(2**63))
    return Network(user_table, item_table, layers, dropout_rng, genome)


def sigmoid(z: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -z))


@dataclass
class _Cache:
    users: np.ndarray
    items: np.ndarray
    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    masks: list[np.ndarray | None]


def _check_indices(net: Network, users, items) -> tuple[np.ndarray, np.ndarray]:
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    if users.shape != items.shape or users.ndim != 1:
        raise ValueError("users and items must be 1-d index arrays of equal length")
    if users.size and (users.min() < 0 or users.max() >= net.user_table.shape[0]):
        raise ValueError("user index out of range")
    if items.size and (items.min() < 0 or items.max() >= net.item_table.shape[0]):
        raise ValueError("item index out of range")
    return users, items


def draw_masks(net: Network, batch: int, rng: np.random.Generator) -> list[np.ndarray | None]:
    """Inverted-dropout masks (survivors pre-scaled by ``1 / (1 - rate)``)."""
    masks = []
    for layer in net.layers:
        rate = layer.dropout_rate
        if not layer.relu or rate <= 0.0:
            masks.append(None)
            continue
        keep = rng.random((batch, layer.weights.shape[0])) >= rate
        masks.append(keep / (1.0 - rate))
    return masks


def _forward(net: Network, users, items, masks) -> tuple[np.ndarray, _Cache]:
    x = np.concatenate([net.user_table[users], net.item_table[items]], axis=1)
    inputs, pre = [], []
    for i, layer in enumerate(net.layers):
        inputs.append(x)
        z = x @ layer.weights.T + layer.bias
        pre.append(z)
        if layer.relu:
            x = np.maximum(z, 0.0)
            if masks is not None and masks[i] is not None:
                x = x * masks[i]
        else:
            x = z
    return x[:, 0], _Cache(users, items, inputs, pre, masks or [None] * len(net.layers))


def logits(net: Network, users, items, training: bool = False, rng: np.random.Generator | None = None,
           masks=None) -> np.ndarray:
    users, items = _check_indices(net, users, items)
    if training and masks is None:
        masks = draw_masks(net, users.size, rng if rng is not None else net.rng)
    out, _ = _forward(net, users, items, masks if training else None)
    return out


def forward(net: Network, users, items, training: bool = False, rng: np.random.Generator | None = None,
            masks=None) -> np.ndarray:
    """Scores in the open interval (0, 1), one per (user, item) pair."""
    z = logits(net, users, items, training, rng, masks)
    return np.clip(sigmoid(z), _TINY, _ALMOST_ONE)


def bce_from_logits(z: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, z) - labels * z))


def loss_and_grads(net: Network, users, items, labels, masks=None) -> tuple[float, dict[str, np.ndarray]]:
    """Mean binary cross-entropy and its gradient for every parameter.

    ``masks`` fixes the dropout pattern (None means inference mode), which
    keeps the loss a deterministic function of the parameters.
    """
    users, items = _check_indices(net, users, items)
    labels = np.asarray(labels, dtype=np.float64)
    z, cache = _forward(net, users, items, masks)
    loss = bce_from_logits(z, labels)
    grad = ((sigmoid(z) - labels) / z.size)[:, None]

    grads: dict[str, np.ndarray] = {}
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        grads[f"layers.{i}.weights"] = grad.T @ cache.inputs[i]
        grads[f"layers.{i}.bias"] = grad.sum(axis=0)
        grad = grad @ layer.weights
        if i > 0:
            prev = net.layers[i - 1]
            if cache.masks[i - 1] is not None:
                grad = grad * cache.masks[i - 1]
            if prev.relu:
                grad = grad * (cache.pre[i - 1] > 0.0)

    d = net.embedding_dim
    g_user = np.zeros_like(net.user_table)
    g_item = np.zeros_like(net.item_table)
    np.add.at(g_user, users, grad[:, :d])
    np.add.at(g_item, items, grad[:, d:])
    grads["user_table"] = g_user
    grads["item_table"] = g_item
    return loss, grads


def _apply_update(net: Network, grads: dict[str, np.ndarray], cfg: TrainConfig) -> None:
    lr = cfg.learning_rate
    if cfg.optimizer == "sgd":
        for name, p in net.parameters():
            p -= lr * grads[name]
        return
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    state = net.opt_state
    t = state.get("t", 0) + 1
    state["t"] = t
    corr1 = 1.0 - beta1**t
    corr2 = 1.0 - beta2**t
    for name, p in net.parameters():
        g = grads[name]
        m = state.setdefault(f"m.{name}", np.zeros_like(p))
        v = state.setdefault(f"v.{name}", np.zeros_like(p))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / corr1) / (np.sqrt(v / corr2) + eps)


def train_step(net: Network, batch: tuple, cfg: TrainConfig) -> float:
    """One optimizer step on ``batch = (users, items, labels)``; returns the batch loss."""
    users, items, labels = batch
    labels = np.asarray(labels, dtype=np.float64)
    if labels.size == 0:
        raise ValueError("empty batch")
    if np.any((labels != 0.0) & (labels != 1.0)):
        raise ValueError("labels must be binary")
    masks = draw_masks(net, len(labels), net.rng)
    with np.errstate(over="ignore", invalid="ignore"):
        loss, grads = loss_and_grads(net, users, items, labels, masks)
    if not math.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
        raise NumericError(f"non-finite loss or gradient ({loss})")
    _apply_update(net, grads, cfg)
    return loss


def sample_negatives(ds, users: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Uniform items that ``users`` have not interacted with in the train split."""
    num_items = ds.num_items
    items = rng.integers(num_items, size=users.size)
    hit = ds.is_train_positive(users, items)
    while hit.any():
        idx = np.flatnonzero(hit)
        items[idx] = rng.integers(num_items, size=idx.size)
        hit[idx] = ds.is_train_positive(users[idx], items[idx])
    return items


def fit_proxy(
    net: Network,
    ds,
    cfg: TrainConfig,
    rng: np.random.Generator,
    *,
    epochs: int | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
) -> float:
    """Train on the dataset's train split; returns the last epoch's mean loss.

    Negatives are resampled every epoch, ``cfg.negatives_per_positive`` per
    observed pair. With zero epochs nothing changes and NaN is returned.
    """
    epochs = cfg.proxy_epochs if epochs is None else epochs
    pos_users, pos_items = ds.train_users, ds.train_items
    if pos_users.size == 0:
        raise DataError("train split is empty")
    k = cfg.negatives_per_positive
    last = math.nan
    for epoch in range(epochs):
        neg_users = np.repeat(pos_users, k)
        neg_items = sample_negatives(ds, neg_users, rng)
        users = np.concatenate([pos_users, neg_users])
        items = np.concatenate([pos_items, neg_items])
        labels = np.concatenate([np.ones(pos_users.size), np.zeros(neg_users.size)])
        order = rng.permutation(users.size)
        total = 0.0
        for start in range(0, order.size, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            total += train_step(net, (users[idx], items[idx], labels[idx]), cfg) * idx.size
        last = total / order.size
        if on_epoch is not None:
            on_epoch(epoch, last)
    return last


def save_network(net: Network, path: str | Path) -> None:
    """Write a JSON header line followed by little-endian float64 parameters."""
    params = net.parameters()
    header = {
        "format": "evocf-network/1",
        "genome": to_record(net.genome) if net.genome is not None else None,
        "dropout": [layer.dropout_rate for layer in net.layers],
        "tensors": [{"name": name, "shape": list(p.shape)} for name, p in params],
        "dtype": "<f8",
    }
    payload = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for _, p in params)
    header["payload_bytes"] = len(payload)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload)


def load_network(path: str | Path) -> Network:
    raw = Path(path).read_bytes()
    head, sep, payload = raw.partition(b"\n")
    if not sep:
        raise ParseError("missing header line", field="header")
    try:
        header = json.loads(head)
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad header: {exc.msg}", field="header") from None
    if len(payload) != header.get("payload_bytes"):
        raise ParseError("payload size does not match header", field="payload_bytes")
    offset = 0
    arrays = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape))
        arrays[spec["name"]] = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * count
    n_layers = len(header["dropout"])
    layers = [
        DenseLayer(arrays[f"layers.{i}.weights"], arrays[f"layers.{i}.bias"], i < n_layers - 1, header["dropout"][i])
        for i in range(n_layers)
    ]
    genome = from_record(header["genome"]) if header.get("genome") else None
    return Network(arrays["user_table"], arrays["item_table"], layers, genome=genome)
