"""Two-layer GCN with hand-written backward pass, Adam training and evaluation.

The model is ``Z = log_softmax(A relu(A X W1) W2)`` with ``A`` the normalized
adjacency from :func:`sherd.graph.normalize_adjacency`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError, LoadError
from .graph import GraphData, normalize_adjacency

log = logging.getLogger(__name__)

# feature matrices sparser than this are multiplied in CSR form
_SPARSE_DENSITY = 0.1


@dataclass(frozen=True, eq=False)
class GcnParams:
    W1: np.ndarray
    W2: np.ndarray
    hidden_dim: int
    trained_epochs: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        w1 = np.array(self.W1, dtype=np.float64)
        w2 = np.array(self.W2, dtype=np.float64)
        if w1.ndim != 2 or w2.ndim != 2 or w1.shape[1] != w2.shape[0] or w1.shape[1] != self.hidden_dim:
            raise ConfigError(f"inconsistent weight shapes {w1.shape} and {w2.shape}")
        if not (np.isfinite(w1).all() and np.isfinite(w2).all()):
            raise ConfigError("non-finite weights")
        w1.setflags(write=False)
        w2.setflags(write=False)
        object.__setattr__(self, "W1", w1)
        object.__setattr__(self, "W2", w2)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GcnParams):
            return NotImplemented
        return (
            np.array_equal(self.W1, other.W1)
            and np.array_equal(self.W2, other.W2)
            and (self.hidden_dim, self.trained_epochs, self.seed)
            == (other.hidden_dim, other.trained_epochs, other.seed)
        )

    __hash__ = None  # type: ignore[assignment]

    def to_json(self) -> dict:
        return {
            "hidden_dim": self.hidden_dim,
            "trained_epochs": self.trained_epochs,
            "seed": self.seed,
            "W1": {"shape": list(self.W1.shape), "data": self.W1.ravel().tolist()},
            "W2": {"shape": list(self.W2.shape), "data": self.W2.ravel().tolist()},
        }

    @classmethod
    def from_json(cls, payload: dict) -> "GcnParams":
        def mat(entry):
            return np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])

        return cls(mat(payload["W1"]), mat(payload["W2"]), int(payload["hidden_dim"]),
                   int(payload["trained_epochs"]), int(payload["seed"]))

    def save(self, path: str | Path) -> None:
        # repr-based JSON floats round-trip exactly
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "GcnParams":
        path = Path(path)
        if not path.is_file():
            raise LoadError(f"checkpoint not found: {path}")
        return cls.from_json(json.loads(path.read_text()))


@dataclass(frozen=True)
class HiddenRepr:
    """Post-ReLU first-layer activations, one row per node in ``node_ids``."""

    rows: np.ndarray
    node_ids: np.ndarray

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=np.float64)
        ids = np.asarray(self.node_ids, dtype=np.int64)
        if rows.ndim != 2 or rows.shape[0] != len(ids):
            raise ConfigError("rows and node_ids disagree in length")
        if len(ids) > 1 and np.any(np.diff(ids) <= 0):
            raise ConfigError("node_ids must be strictly increasing")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "node_ids", ids)

    def restrict(self, node_ids: np.ndarray) -> "HiddenRepr":
        """Rows for a subset of this representation's node ids."""
        pos = np.searchsorted(self.node_ids, node_ids)
        if np.any(pos >= len(self.node_ids)) or np.any(self.node_ids[np.minimum(pos, len(self.node_ids) - 1)] != node_ids):
            raise ConfigError("requested node ids are not present")
        return HiddenRepr(self.rows[pos], np.asarray(node_ids))


@dataclass
class TrainTrace:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    best_epoch: int = 0

    def __len__(self) -> int:
        return len(self.train_loss)


@dataclass(frozen=True)
class TrainConfig:
    hidden_dim: int = 16
    lr: float = 0.01
    weight_decay: float = 5e-4
    dropout: float = 0.0
    seed: int = 0
    # None trains for exactly the requested epochs
    patience: int | None = None
    max_epochs: int = 200

    def full(self) -> "TrainConfig":
        """Config for training to convergence: early stopping with patience 10."""
        return replace(self, patience=10 if self.patience is None else self.patience)


def init_params(d: int, h: int, c: int, seed: int) -> GcnParams:
    """Glorot-uniform weights."""
    if min(d, h, c) < 1:
        raise ConfigError(f"dimensions must be >= 1, got d={d}, h={h}, c={c}")
    rng = np.random.default_rng(seed)
    b1 = np.sqrt(6.0 / (d + h))
    b2 = np.sqrt(6.0 / (h + c))
    w1 = rng.uniform(-b1, b1, size=(d, h))
    w2 = rng.uniform(-b2, b2, size=(h, c))
    return GcnParams(w1, w2, h, 0, seed)


def feature_operand(x: np.ndarray):
    """CSR view of ``x`` when it is sparse enough to make products cheaper."""
    if sp.issparse(x):
        return x
    if x.size and np.count_nonzero(x) < _SPARSE_DENSITY * x.size:
        return sp.csr_matrix(x)
    return x


def _check(p: GcnParams, a, x) -> None:
    n = a.shape[0]
    if a.shape != (n, n) or x.shape[0] != n or x.shape[1] != p.W1.shape[0]:
        raise ConfigError(f"shape mismatch: A {a.shape}, X {x.shape}, W1 {p.W1.shape}")
    data = x.data if sp.issparse(x) else x
    if not np.isfinite(data).all():
        raise DataError("non-finite feature values")


def log_softmax(s: np.ndarray) -> np.ndarray:
    shifted = s - s.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def hidden(p: GcnParams, a, x, node_ids: np.ndarray | None = None) -> HiddenRepr:
    """First-layer representation ``relu(A X W1)`` (inference mode)."""
    _check(p, a, x)
    h = np.maximum(a @ (feature_operand(x) @ p.W1), 0.0)
    ids = np.arange(a.shape[0]) if node_ids is None else node_ids
    return HiddenRepr(h, ids)


def forward(p: GcnParams, a, x) -> tuple[HiddenRepr, np.ndarray]:
    """Return the hidden representation and the row-wise log-probabilities."""
    hr = hidden(p, a, x)
    z = log_softmax(a @ (hr.rows @ p.W2))
    return hr, z


def _as_index(mask, n: int) -> np.ndarray:
    m = np.asarray(mask)
    if m.dtype == bool:
        m = np.flatnonzero(m)
    m = m.astype(np.int64)
    if len(m) == 0:
        raise ConfigError("loss mask is empty")
    return m


@dataclass
class _Cache:
    xw: np.ndarray
    p1: np.ndarray
    h: np.ndarray
    hw: np.ndarray
    z: np.ndarray


def _forward_cache(p: GcnParams, a, xop, drop_h=None) -> _Cache:
    # input dropout is applied by the caller to xop itself
    xw = xop @ p.W1
    p1 = a @ xw
    h = np.maximum(p1, 0.0)
    if drop_h is not None:
        h = h * drop_h
    hw = h @ p.W2
    z = log_softmax(a @ hw)
    return _Cache(xw, p1, h, hw, z)


def _backward(p: GcnParams, a, xop, cache: _Cache, y: np.ndarray, idx: np.ndarray,
              need_gx: bool = True, need_ga: bool = False, drop_h=None, targets=None):
    """Chain rule through log-softmax, both propagations and the ReLU.

    Returns ``loss, gW1, gW2, gX, gA``; ``gX`` / ``gA`` are ``None`` unless requested.
    ``gA`` is the dense gradient with respect to the entries of ``A``.
    """
    z = cache.z
    tgt = y[idx] if targets is None else targets
    loss = float(-z[idx, tgt].mean())
    gs = np.zeros_like(z)
    probs = np.exp(z[idx])
    probs[np.arange(len(idx)), tgt] -= 1.0
    gs[idx] = probs / len(idx)  # d loss / d (A H W2)
    at = a.T
    g_hw = at @ gs
    gW2 = cache.h.T @ g_hw
    g_h = g_hw @ p.W2.T
    if drop_h is not None:
        g_h = g_h * drop_h
    g_p1 = g_h * (cache.p1 > 0)
    g_xw = at @ g_p1
    gW1 = np.asarray(xop.T @ g_xw)
    gX = np.asarray(g_xw @ p.W1.T) if need_gx else None
    gA = None
    if need_ga:
        gA = gs @ cache.hw.T + g_p1 @ cache.xw.T
    return loss, gW1, gW2, gX, gA


def loss_and_grads(p: GcnParams, a, x, y, mask):
    """Mean NLL over ``mask`` and its gradients w.r.t. W1, W2 and X."""
    _check(p, a, x)
    idx = _as_index(mask, a.shape[0])
    xop = feature_operand(x)
    cache = _forward_cache(p, a, xop)
    loss, gW1, gW2, gX, _ = _backward(p, a, xop, cache, np.asarray(y, dtype=np.int64), idx)
    return loss, gW1, gW2, gX


def adjacency_grad(p: GcnParams, a, x, y, mask) -> tuple[float, np.ndarray]:
    """Loss and its dense gradient w.r.t. the entries of the propagation matrix."""
    _check(p, a, x)
    idx = _as_index(mask, a.shape[0])
    xop = feature_operand(x)
    cache = _forward_cache(p, a, xop)
    loss, _, _, _, gA = _backward(p, a, xop, cache, np.asarray(y, dtype=np.int64), idx,
                                  need_gx=False, need_ga=True)
    return loss, gA


def feature_grad_rows(p: GcnParams, a, xw: np.ndarray, targets: np.ndarray,
                      loss_idx: np.ndarray, rows: np.ndarray) -> tuple[float, np.ndarray]:
    """Masked NLL and ``d loss / d X[rows]`` given the precomputed product ``X W1``.

    Attacks that only move a few feature rows keep ``X W1`` up to date
    incrementally instead of recomputing the full product.
    """
    p1 = a @ xw
    h = np.maximum(p1, 0.0)
    z = log_softmax(a @ (h @ p.W2))
    loss = float(-z[loss_idx, targets].mean())
    gs = np.zeros_like(z)
    probs = np.exp(z[loss_idx])
    probs[np.arange(len(loss_idx)), targets] -= 1.0
    gs[loss_idx] = probs / len(loss_idx)
    at = a.T
    g_p1 = ((at @ gs) @ p.W2.T) * (p1 > 0)
    g_xw_rows = (at @ g_p1)[rows]
    return loss, g_xw_rows @ p.W1.T


class _Adam:
    def __init__(self, shapes, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        out = []
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for i, (w, g) in enumerate(zip(params, grads)):
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g
            m_hat = self.m[i] / c1
            v_hat = self.v[i] / c2
            out.append(w - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))
        return out


def _dropout_mask(rng, shape, rate):
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def train(g: GraphData, epochs: int, config: TrainConfig = TrainConfig(),
          a=None) -> tuple[GcnParams, TrainTrace]:
    """Adam on the train-split NLL, L2 weight decay on W1 only.

    With ``config.patience`` set, stops once validation loss has not improved
    for that many epochs (at most ``epochs``) and returns the best-validation
    parameters. ``epochs = 0`` returns the initial parameters.
    """
    if epochs < 0:
        raise ConfigError("epochs must be >= 0")
    train_idx = g.split_nodes("train")
    if len(train_idx) == 0:
        raise DataError("graph has no training nodes")
    val_idx = g.split_nodes("val")
    a = normalize_adjacency(g) if a is None else a
    p = init_params(g.num_features, config.hidden_dim, g.num_classes, config.seed)
    trace = TrainTrace()
    if epochs == 0:
        return p, trace
    _check(p, a, g.features)
    y = g.labels
    xop = feature_operand(g.features)
    drop_rng = np.random.default_rng([config.seed, 1]) if config.dropout > 0 else None
    opt = _Adam([p.W1.shape, p.W2.shape], config.lr)
    w1, w2 = p.W1, p.W2
    best = (np.inf, w1, w2, 0)
    stale = 0
    early = config.patience is not None and len(val_idx) > 0
    for epoch in range(1, epochs + 1):
        cur = GcnParams(w1, w2, config.hidden_dim, epoch - 1, config.seed)
        if drop_rng is not None:
            x_in = g.features * _dropout_mask(drop_rng, g.features.shape, config.dropout)
            x_ep = feature_operand(x_in)
            drop_h = _dropout_mask(drop_rng, (g.num_nodes, config.hidden_dim), config.dropout)
        else:
            x_ep, drop_h = xop, None
        cache = _forward_cache(cur, a, x_ep, drop_h=drop_h)
        loss, gW1, gW2, _, _ = _backward(cur, a, x_ep, cache, y, train_idx, need_gx=False, drop_h=drop_h)
        gW1 = gW1 + config.weight_decay * w1
        w1, w2 = opt.step([w1, w2], [gW1, gW2])
        trace.train_loss.append(loss)
        if len(val_idx):
            _, z = forward(GcnParams(w1, w2, config.hidden_dim, epoch, config.seed), a, xop)
            vloss = float(-z[val_idx, y[val_idx]].mean())
            vacc = float((z[val_idx].argmax(axis=1) == y[val_idx]).mean())
        else:
            vloss, vacc = float("nan"), float("nan")
        trace.val_loss.append(vloss)
        trace.val_acc.append(vacc)
        if early:
            if vloss < best[0]:
                best, stale = (vloss, w1, w2, epoch), 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    if early:
        _, w1, w2, last = best
    else:
        last = len(trace)
    trace.best_epoch = last
    return GcnParams(w1, w2, config.hidden_dim, last, config.seed), trace


def train_full(g: GraphData, config: TrainConfig = TrainConfig(), a=None) -> tuple[GcnParams, TrainTrace]:
    """Train to convergence: early stopping (patience 10) capped at ``max_epochs``."""
    cfg = config.full()
    return train(g, cfg.max_epochs, cfg, a=a)


def predict(p: GcnParams, g: GraphData, a=None) -> np.ndarray:
    a = normalize_adjacency(g) if a is None else a
    _, z = forward(p, a, g.features)
    # argmax returns the first maximum: ties go to the lower class id
    return z.argmax(axis=1)


def evaluate_accuracy(p: GcnParams, g: GraphData, split_tag: str = "test", a=None) -> tuple[float, int]:
    """Accuracy over the nodes carrying ``split_tag`` and how many were scored."""
    idx = g.split_nodes(split_tag)
    if len(idx) == 0:
        raise DataError(f"split {split_tag!r} is empty")
    pred = predict(p, g, a)
    return float((pred[idx] == g.labels[idx]).mean()), int(len(idx))
