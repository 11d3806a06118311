"""Evasion attacks on graph structure and node features.

Structure attacks flip edge slots (remove the edge if present, add it if
absent); feature attacks move rows of ``X`` inside an L-infinity ball. Every
result is a :class:`PerturbedGraph`, whose constructor re-checks the budget.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SherdError
from .gcn import GcnParams, adjacency_grad, feature_grad_rows, feature_operand, loss_and_grads, predict
from .graph import GraphData, normalize_adjacency, slot_budget

log = logging.getLogger(__name__)

ATTACKS = ("dice", "flip", "rnd", "fgsm", "pgd", "fga")
GRADIENT_ATTACKS = ("fgsm", "pgd", "fga")


class BudgetViolation(SherdError, AssertionError):
    """A perturbation exceeded its budget or touched a protected region."""


@dataclass(frozen=True)
class AttackBudget:
    edge_budget: float = 0.10
    eps: float = 0.1
    steps: int = 20
    step_size: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.edge_budget <= 1.0:
            raise ConfigError("edge_budget must lie in [0, 1]")
        if self.eps < 0:
            raise ConfigError("eps must be >= 0")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.step_size is not None and self.step_size < 0:
            raise ConfigError("step_size must be >= 0")

    @property
    def step(self) -> float:
        return self.eps / 4.0 if self.step_size is None else self.step_size

    def flips_allowed(self, num_edges: int) -> int:
        return slot_budget(self.edge_budget, num_edges)


@dataclass(frozen=True, eq=False)
class PerturbedGraph:
    """An attacked graph with its audit log.

    ``flips`` lists the flipped slots as ``u < v`` pairs and ``feature_delta``
    the per-node maximum absolute feature change.
    """

    graph: GraphData
    flips: np.ndarray
    feature_delta: np.ndarray
    method: str
    original: GraphData = field(repr=False)
    max_flips: int = 0
    eps: float = 0.0
    permitted: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64), repr=False)

    def __post_init__(self) -> None:
        g, g0 = self.graph, self.original
        if g.num_nodes != g0.num_nodes:
            raise BudgetViolation("attack changed the node set")
        changed = np.setxor1d(g.edge_keys(), g0.edge_keys())
        logged = np.unique(self.flips[:, 0] * g.num_nodes + self.flips[:, 1]) if len(self.flips) else changed[:0]
        if not np.array_equal(changed, logged):
            raise BudgetViolation("flip log disagrees with the edge difference")
        if len(changed) > self.max_flips:
            raise BudgetViolation(f"{len(changed)} edge flips exceed the budget of {self.max_flips}")
        touched = np.flatnonzero((g.features != g0.features).any(axis=1)) if g.features.size else []
        delta = _row_delta(g.features, g0.features, touched)
        if delta.size and delta.max() > self.eps + 1e-12:
            raise BudgetViolation(f"feature change {delta.max():g} exceeds eps {self.eps:g}")
        if np.setdiff1d(touched, self.permitted).size:
            raise BudgetViolation("features changed outside the permitted nodes")
        if not np.array_equal(self.feature_delta, delta):
            raise BudgetViolation("feature delta log is inconsistent")

    @property
    def num_flips(self) -> int:
        return int(len(self.flips))

    def to_log(self) -> dict:
        nz = np.flatnonzero(self.feature_delta)
        return {
            "method": self.method,
            "edge_flips": self.flips.tolist(),
            "max_flips": self.max_flips,
            "eps": self.eps,
            "feature_delta": {str(int(i)): float(self.feature_delta[i]) for i in nz},
        }


def _row_delta(x: np.ndarray, x0: np.ndarray, rows) -> np.ndarray:
    """Per-node max absolute feature change, evaluated on ``rows`` only."""
    out = np.zeros(len(x))
    rows = np.asarray(rows, dtype=np.int64)
    if len(rows) and x.shape[1]:
        out[rows] = np.abs(x[rows] - x0[rows]).max(axis=1)
    return out


def _result(method: str, g0: GraphData, edges_flipped: np.ndarray, x_new: np.ndarray | None,
            max_flips: int, eps: float, permitted) -> PerturbedGraph:
    flips = np.asarray(edges_flipped, dtype=np.int64).reshape(-1, 2)
    g = apply_flips(g0, flips)
    if x_new is not None:
        g = g.with_features(x_new)
    rows = np.asarray(permitted, dtype=np.int64)
    fd = _row_delta(g.features, g0.features, rows) if x_new is not None else np.zeros(g0.num_nodes)
    order = np.lexsort((flips[:, 1], flips[:, 0])) if len(flips) else np.zeros(0, dtype=np.int64)
    return PerturbedGraph(g, flips[order], fd, method, g0, max_flips, eps, rows)


def apply_flips(g: GraphData, flips: np.ndarray) -> GraphData:
    """Toggle each listed slot; slots must be distinct ``u < v`` pairs."""
    if len(flips) == 0:
        return g
    n = g.num_nodes
    keys = np.setxor1d(g.edge_keys(), flips[:, 0] * n + flips[:, 1])
    return GraphData(n, np.stack([keys // n, keys % n], axis=1), g.features, g.labels, g.split, g.num_classes)


# --- random slot sampling -------------------------------------------------


def _decode_triangle(t: np.ndarray, n: int) -> np.ndarray:
    r = np.arange(n, dtype=np.int64)
    offsets = r * n - r * (r + 1) // 2  # index of (u, u+1) in row-major upper triangle
    u = np.searchsorted(offsets, t, side="right") - 1
    v = t - offsets[u] + u + 1
    return np.stack([u, v], axis=1)


def sample_slots(n: int, k: int, rng: np.random.Generator, incident: np.ndarray | None = None) -> np.ndarray:
    """``k`` distinct uniformly random node pairs (``u < v``).

    With ``incident`` given, only pairs with at least one endpoint in it are
    eligible. Returns fewer pairs if fewer exist.
    """
    if incident is None:
        total = n * (n - 1) // 2
        k = min(k, total)
        if k == 0:
            return np.zeros((0, 2), dtype=np.int64)
        return _decode_triangle(rng.choice(total, size=k, replace=False).astype(np.int64), n)
    inside = np.unique(np.asarray(incident, dtype=np.int64))
    others = np.setdiff1d(np.arange(n), inside)
    s, o = len(inside), len(others)
    n_within = s * (s - 1) // 2
    total = n_within + s * o
    k = min(k, total)
    if k == 0:
        return np.zeros((0, 2), dtype=np.int64)
    t = rng.choice(total, size=k, replace=False).astype(np.int64)
    within = t < n_within
    pairs = np.empty((k, 2), dtype=np.int64)
    if within.any():
        pairs[within] = inside[_decode_triangle(t[within], s)]
    cross = t[~within] - n_within
    if len(cross):
        pairs[~within] = np.stack([inside[cross // o], others[cross % o]], axis=1)
    return np.sort(pairs, axis=1)


# --- feature attacks --------------------------------------------------------


def _pgd_features(p: GcnParams, a, x0: np.ndarray, targets: np.ndarray, loss_idx: np.ndarray,
                  rows: np.ndarray, eps: float, step: float, steps: int,
                  xw0: np.ndarray | None = None) -> np.ndarray:
    """Sign-gradient ascent on ``X[rows]`` projected into the eps-ball around ``x0``."""
    x = np.array(x0, dtype=np.float64, copy=True)
    if eps == 0 or len(rows) == 0:
        return x
    xw = np.asarray(feature_operand(x0) @ p.W1) if xw0 is None else np.array(xw0, copy=True)
    lo, hi = x0[rows] - eps, x0[rows] + eps
    xr = x[rows]
    for _ in range(steps):
        _, g_rows = feature_grad_rows(p, a, xw, targets, loss_idx, rows)
        xr = np.clip(xr + step * np.sign(g_rows), lo, hi)
        xw[rows] = xr @ p.W1
    x[rows] = xr
    return x


def cluster_pgd_attack(g: GraphData, a, p_tau: GcnParams, cluster_nodes, budget: AttackBudget,
                       seed: int, targets: np.ndarray | None = None,
                       xw0: np.ndarray | None = None) -> PerturbedGraph:
    """Random edge flips touching the cluster, then PGD on the cluster's features.

    The loss is the mean NLL over all cluster nodes. ``targets`` are the
    per-node classes whose likelihood is attacked; by default the frozen model's
    own predictions on the clean graph, so no ground-truth labels are needed.
    ``xw0`` optionally caches ``X @ W1`` of the clean features.
    """
    cluster = np.unique(np.asarray(cluster_nodes, dtype=np.int64))
    if len(cluster) == 0:
        raise ConfigError("cluster is empty")
    rng = np.random.default_rng(seed)
    k = budget.flips_allowed(g.num_edges)
    flips = sample_slots(g.num_nodes, k, rng, incident=cluster)
    g1 = apply_flips(g, flips)
    a1 = a if len(flips) == 0 else normalize_adjacency(g1)
    if targets is None:
        targets = predict(p_tau, g, a)
    x_adv = _pgd_features(p_tau, a1, g.features, np.asarray(targets)[cluster], cluster, cluster,
                          budget.eps, budget.step, budget.steps, xw0)
    return _result("cluster_pgd", g, flips, x_adv, k, budget.eps, cluster)


def _fgsm(g: GraphData, model: GcnParams, budget: AttackBudget) -> np.ndarray:
    test = g.split_nodes("test")
    a = normalize_adjacency(g)
    _, _, _, gx = loss_and_grads(model, a, g.features, g.labels, test)
    x = np.array(g.features, copy=True)
    x[test] = g.features[test] + budget.eps * np.sign(gx[test])
    return x


def _dice(g: GraphData, k: int, rng: np.random.Generator) -> np.ndarray:
    n, y = g.num_nodes, g.labels
    e = g.edges
    same = y[e[:, 0]] == y[e[:, 1]]
    deletable = list(map(tuple, e[same].tolist()))
    existing = set(g.edge_keys().tolist())
    counts = np.bincount(y, minlength=g.num_classes).astype(np.int64)
    diff_pairs = (n * n - int((counts * counts).sum())) // 2
    addable = diff_pairs - int((~same).sum())
    chosen: list[tuple[int, int]] = []
    added: set[int] = set()
    while len(chosen) < k and (deletable or addable > 0):
        delete = rng.random() < 0.5
        if delete and not deletable:
            delete = False
        elif not delete and addable <= 0:
            delete = True
        if delete:
            i = int(rng.integers(len(deletable)))
            deletable[i], deletable[-1] = deletable[-1], deletable[i]
            chosen.append(deletable.pop())
        else:
            while True:
                u, v = (int(t) for t in rng.integers(n, size=2))
                if u == v or y[u] == y[v]:
                    continue
                u, v = min(u, v), max(u, v)
                key = u * n + v
                if key in existing or key in added:
                    continue
                break
            added.add(key)
            addable -= 1
            chosen.append((u, v))
    return np.array(chosen, dtype=np.int64).reshape(-1, 2)


def _flip(g: GraphData, k: int) -> np.ndarray:
    """Pair the i-th lowest-degree node with the i-th highest-degree node.

    Nodes are ranked by (degree, id) ascending. Further rounds shift the high
    end by one so every slot is visited once before the budget can repeat.
    """
    n = g.num_nodes
    order = np.lexsort((np.arange(n), g.degrees()))
    chosen: list[tuple[int, int]] = []
    if k == 0:
        return np.zeros((0, 2), dtype=np.int64)
    for shift in range(n - 1):
        for i in range(n):
            j = n - 1 - i - shift
            if j <= i:
                break
            u, v = order[i], order[j]
            chosen.append((min(u, v), max(u, v)))
            if len(chosen) == k:
                return np.array(chosen, dtype=np.int64)
    return np.array(chosen, dtype=np.int64).reshape(-1, 2)


def _fga(g: GraphData, model: GcnParams, k: int) -> np.ndarray:
    """Greedy gradient flips on the dense adjacency, one slot per gradient.

    The gradient is taken w.r.t. the entries of the normalized adjacency and
    summed over both orientations of a slot; added edges gain ``+grad``,
    removed edges ``-grad``. Stops early when no flip increases the loss.
    """
    n = g.num_nodes
    test = g.split_nodes("test")
    dense = g.adjacency().toarray() > 0
    blocked = np.tri(n, dtype=bool)  # lower triangle and diagonal
    chosen = []
    cur = g
    for _ in range(k):
        a = normalize_adjacency(cur)
        _, ga = adjacency_grad(model, a, cur.features, cur.labels, test)
        score = ga + ga.T
        np.negative(score, out=score, where=dense)
        score[blocked] = -np.inf
        best = int(np.argmax(score))
        if not score.flat[best] > 0:
            break
        u, v = divmod(best, n)
        chosen.append((u, v))
        blocked[u, v] = True
        dense[u, v] = dense[v, u] = not dense[u, v]
        cur = apply_flips(cur, np.array([[u, v]]))
    return np.array(chosen, dtype=np.int64).reshape(-1, 2)


def evasion_attack(method: str, g: GraphData, model: GcnParams | None, budget: AttackBudget,
                   seed: int) -> PerturbedGraph:
    """Perturb the test-time graph with one of :data:`ATTACKS`.

    Feature attacks move test-split rows only. Gradient attacks use the true
    labels of test nodes (white-box evasion against a frozen model).
    """
    if method not in ATTACKS:
        raise ConfigError(f"unknown attack {method!r}; choose from {', '.join(ATTACKS)}")
    if method in GRADIENT_ATTACKS and model is None:
        raise ConfigError(f"attack {method!r} needs a trained model")
    rng = np.random.default_rng(seed)
    k = budget.flips_allowed(g.num_edges)
    test = g.split_nodes("test")
    none = np.zeros((0, 2), dtype=np.int64)
    if method == "dice":
        return _result(method, g, _dice(g, k, rng), None, k, 0.0, [])
    if method == "flip":
        return _result(method, g, _flip(g, k), None, k, 0.0, [])
    if method == "rnd":
        return _result(method, g, sample_slots(g.num_nodes, k, rng), None, k, 0.0, [])
    if method == "fga":
        return _result(method, g, _fga(g, model, k), None, k, 0.0, [])
    if method == "fgsm":
        return _result(method, g, none, _fgsm(g, model, budget), 0, budget.eps, test)
    # pgd: random structure noise over all slots, then projected feature ascent on test nodes
    flips = sample_slots(g.num_nodes, k, rng)
    g1 = apply_flips(g, flips)
    a1 = normalize_adjacency(g1)
    x_adv = _pgd_features(model, a1, g.features, g.labels[test], test, test,
                          budget.eps, budget.step, budget.steps)
    return _result(method, g, flips, x_adv, k, budget.eps, test)
