"""Cluster scoring and robust subgraph selection.

A GCN is trained for only ``tau`` epochs; its first-layer representation is
then used to score every balanced cluster for susceptibility (how far the
representation moves when the cluster is attacked) and informativeness (how
far it moves when the cluster is removed). The best-scoring clusters form the
compressed graph.
"""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .attacks import AttackBudget, cluster_pgd_attack
from .clustering import ClusterAssignment, balanced_kmeans
from .distances import check_metric, repr_distance
from .errors import ConfigError
from .gcn import GcnParams, HiddenRepr, TrainConfig, feature_operand, predict, train
from .graph import GraphData, SubgraphMask, induced_subgraph, normalize_adjacency, round_half_up

log = logging.getLogger(__name__)

NORMALIZATIONS = ("minmax", "none")


@dataclass(frozen=True)
class SherdConfig:
    tau: int = 50
    num_clusters: int = 200
    alpha: float = 0.5
    compression: float = 0.4
    d_r: str = "jaccard_elem"
    d_p: str = "semipearson"
    budget: AttackBudget = field(default_factory=lambda: AttackBudget(edge_budget=0.05))
    normalization: str = "minmax"
    seed: int = 0
    hidden_dim: int = 16

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if not 0.0 <= self.compression < 1.0:
            raise ConfigError("compression must lie in [0, 1)")
        if self.num_clusters < 1:
            raise ConfigError("num_clusters must be >= 1")
        if self.tau < 1:
            raise ConfigError("tau must be >= 1")
        if self.normalization not in NORMALIZATIONS:
            raise ConfigError(f"normalization must be one of {', '.join(NORMALIZATIONS)}")
        check_metric(self.d_r)
        check_metric(self.d_p)

    @property
    def num_kept(self) -> int:
        return round_half_up(self.num_clusters * (1.0 - self.compression))

    def train_config(self) -> TrainConfig:
        return TrainConfig(hidden_dim=self.hidden_dim, seed=self.seed)

    def to_json(self) -> dict:
        out = asdict(self)
        out["budget"] = asdict(self.budget)
        return out

    @classmethod
    def from_json(cls, payload: dict) -> "SherdConfig":
        payload = dict(payload)
        unknown = set(payload) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        if "budget" in payload:
            payload["budget"] = AttackBudget(**payload["budget"])
        try:
            return cls(**payload)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass(frozen=True, eq=False)
class ScoreTable:
    """Per-cluster scores; the normalized and combined columns follow ``normalization``."""

    sizes: np.ndarray
    s_suscep: np.ndarray
    s_perform: np.ndarray
    s_robust_norm: np.ndarray | None = None
    s_perform_norm: np.ndarray | None = None
    s_combined: np.ndarray | None = None
    kept: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        b = len(self.sizes)
        for name in ("s_suscep", "s_perform", "s_robust_norm", "s_perform_norm", "s_combined", "kept"):
            col = getattr(self, name)
            if col is not None and len(col) != b:
                raise ConfigError(f"column {name} has length {len(col)}, expected {b}")

    @property
    def num_clusters(self) -> int:
        return len(self.sizes)

    @property
    def s_robust(self) -> np.ndarray:
        return -self.s_suscep

    @classmethod
    def from_scores(cls, s_combined, sizes=None) -> "ScoreTable":
        """A table carrying only combined scores, for driving selection directly."""
        s = np.asarray(s_combined, dtype=np.float64)
        sizes = np.ones(len(s), dtype=np.int64) if sizes is None else np.asarray(sizes)
        zeros = np.zeros(len(s))
        return cls(sizes, zeros, zeros, zeros, zeros, s)

    def to_csv(self, path: str | Path) -> None:
        cols = ["cluster_id", "size", "s_suscep", "s_robust", "s_perform",
                "s_robust_norm", "s_perform_norm", "s_combined", "kept"]
        nan = np.full(self.num_clusters, np.nan)
        data = [np.arange(self.num_clusters), self.sizes, self.s_suscep, self.s_robust, self.s_perform,
                nan if self.s_robust_norm is None else self.s_robust_norm,
                nan if self.s_perform_norm is None else self.s_perform_norm,
                nan if self.s_combined is None else self.s_combined,
                np.zeros(self.num_clusters, bool) if self.kept is None else self.kept]
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in zip(*data):
                w.writerow([int(row[0]), int(row[1])] + [repr(float(v)) for v in row[2:8]] + [int(bool(row[8]))])


def phase1_partial_train(g: GraphData, cfg: SherdConfig) -> GcnParams:
    params, _ = train(g, cfg.tau, cfg.train_config())
    return params


def _hidden_from_xw(a, xw: np.ndarray, node_ids: np.ndarray | None = None) -> HiddenRepr:
    rows = np.maximum(np.asarray(a @ xw), 0.0)
    return HiddenRepr(rows, np.arange(len(rows)) if node_ids is None else node_ids)


def _check_clusters(g: GraphData, clusters: ClusterAssignment) -> None:
    if len(clusters.assignment) != g.num_nodes:
        raise ConfigError("cluster assignment does not cover the graph")


def robustness_scores(g: GraphData, a, p_tau: GcnParams, clusters: ClusterAssignment,
                      cfg: SherdConfig) -> np.ndarray:
    """``s_suscep[i]``: ``d_R`` between the clean and cluster-``i``-attacked first-layer output."""
    _check_clusters(g, clusters)
    xw = np.asarray(feature_operand(g.features) @ p_tau.W1)
    clean = _hidden_from_xw(a, xw)
    targets = predict(p_tau, g, a)
    out = np.zeros(clusters.num_clusters)
    for i, members in enumerate(clusters.groups()):
        if len(members) == 0:
            raise ConfigError(f"cluster {i} is empty")
        pg = cluster_pgd_attack(g, a, p_tau, members, cfg.budget, seed=[cfg.seed, i],
                                targets=targets, xw0=xw)
        a_adv = a if pg.num_flips == 0 else normalize_adjacency(pg.graph)
        xw_adv = xw.copy()
        xw_adv[members] = pg.graph.features[members] @ p_tau.W1
        out[i] = repr_distance(cfg.d_r, _hidden_from_xw(a_adv, xw_adv), clean)
    return out


def performance_scores(g: GraphData, a, p_tau: GcnParams, clusters: ClusterAssignment,
                       cfg: SherdConfig) -> np.ndarray:
    """``s_perform[i]``: ``d_P`` between the representation without cluster ``i`` and the clean one.

    Both sides cover only the surviving nodes, so row-paired metrics compare
    each survivor with itself.
    """
    _check_clusters(g, clusters)
    xw = np.asarray(feature_operand(g.features) @ p_tau.W1)
    clean = _hidden_from_xw(a, xw, np.arange(g.num_nodes))
    out = np.zeros(clusters.num_clusters)
    for i, members in enumerate(clusters.groups()):
        survivors = np.setdiff1d(np.arange(g.num_nodes), members)
        if len(survivors) == 0:
            raise ConfigError("removing the cluster leaves no nodes")
        sub, ids = induced_subgraph(g, survivors)
        h_sub = _hidden_from_xw(normalize_adjacency(sub), xw[ids], ids)
        out[i] = repr_distance(cfg.d_p, h_sub, clean.restrict(ids))
    return out


def minmax(v: np.ndarray) -> np.ndarray:
    """Affine map onto [0, 1]; a constant vector maps to 0.5 everywhere."""
    v = np.asarray(v, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.full(len(v), 0.5)
    return (v - lo) / (hi - lo)


def fuse_scores(scores: ScoreTable, cfg: SherdConfig) -> ScoreTable:
    """Fill in the normalized columns and ``s_combined``."""
    rob, perf = scores.s_robust, scores.s_perform
    if cfg.normalization == "minmax":
        rob, perf = minmax(rob), minmax(perf)
    combined = cfg.alpha * perf + (1.0 - cfg.alpha) * rob
    return replace(scores, s_robust_norm=rob, s_perform_norm=perf, s_combined=combined)


def top_k(s: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest entries, ties to the lower index, returned sorted."""
    order = np.lexsort((np.arange(len(s)), -np.asarray(s)))
    return np.sort(order[:k])


def combine_and_select(scores: ScoreTable, clusters: ClusterAssignment, cfg: SherdConfig,
                       provenance: dict | None = None) -> SubgraphMask:
    """Keep the ``round(B (1 - C))`` clusters with the highest combined score.

    If ``scores`` has no ``s_combined`` column it is computed under ``cfg``.
    """
    if scores.num_clusters != clusters.num_clusters:
        raise ConfigError("score table and clustering disagree on the number of clusters")
    if scores.s_combined is None:
        scores = fuse_scores(scores, cfg)
    k = round_half_up(scores.num_clusters * (1.0 - cfg.compression))
    if k == 0:
        raise ConfigError("compression keeps no clusters")
    kept_clusters = top_k(scores.s_combined, k)
    nodes = np.flatnonzero(np.isin(clusters.assignment, kept_clusters))
    prov = {"kept_clusters": kept_clusters.tolist()}
    prov.update(provenance or {})
    return SubgraphMask(nodes, cfg.compression, prov)


def graph_fingerprint(g: GraphData) -> str:
    h = hashlib.sha256()
    for arr in (g.edges, g.features, g.labels, g.split.astype("U5")):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def run_sherd(g: GraphData, cfg: SherdConfig) -> tuple[SubgraphMask, ScoreTable]:
    """Partial training, balanced clustering, scoring and selection."""
    if cfg.num_clusters > g.num_nodes:
        raise ConfigError(f"cannot form {cfg.num_clusters} clusters from {g.num_nodes} nodes")
    if cfg.num_kept == 0:
        raise ConfigError("compression keeps no clusters")
    p_tau = phase1_partial_train(g, cfg)
    clusters = balanced_kmeans(g.features, cfg.num_clusters, cfg.seed)
    a = normalize_adjacency(g)
    s_suscep = robustness_scores(g, a, p_tau, clusters, cfg)
    s_perform = performance_scores(g, a, p_tau, clusters, cfg)
    table = fuse_scores(ScoreTable(clusters.sizes, s_suscep, s_perform,
                                   meta={"d_r": cfg.d_r, "d_p": cfg.d_p, "alpha": cfg.alpha}), cfg)
    prov = {"method": "sherd", "config": cfg.to_json(), "graph_sha256": graph_fingerprint(g),
            "trained_epochs": p_tau.trained_epochs, "train": asdict(cfg.train_config()),
            "propagation": "D^-1/2 (A + I) D^-1/2"}
    mask = combine_and_select(table, clusters, cfg, prov)
    kept = np.zeros(cfg.num_clusters, dtype=bool)
    kept[mask.provenance["kept_clusters"]] = True
    log.info("sherd kept %d of %d clusters (%d nodes)", kept.sum(), cfg.num_clusters, len(mask))
    return mask, replace(table, kept=kept)
