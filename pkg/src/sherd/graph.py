"""Attributed graph container, TSV dataset format, propagation operator and subgraphs."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, LoadError, SchemaError

SPLIT_TAGS = ("train", "val", "test")

DATASET_FILES = ("meta.json", "edges.tsv", "features.tsv", "labels.tsv", "splits.tsv")


def canonical_edges(edges: Iterable[Sequence[int]] | np.ndarray, num_nodes: int) -> np.ndarray:
    """Return an ``(m, 2)`` int64 array of unique ``u < v`` pairs sorted lexicographically.

    Raises
    ------
    SchemaError
        If an endpoint is out of range or an edge is a self-loop.
    """
    arr = np.asarray(edges, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    arr = arr.reshape(-1, 2)
    if arr.min() < 0 or arr.max() >= num_nodes:
        raise SchemaError(f"edge endpoint outside [0, {num_nodes})")
    if np.any(arr[:, 0] == arr[:, 1]):
        bad = arr[arr[:, 0] == arr[:, 1]][0]
        raise SchemaError(f"self-loop on node {int(bad[0])}")
    lo = np.minimum(arr[:, 0], arr[:, 1])
    hi = np.maximum(arr[:, 0], arr[:, 1])
    keys = np.unique(lo * num_nodes + hi)
    return np.stack([keys // num_nodes, keys % num_nodes], axis=1)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GraphData:
    """Undirected attributed graph with node labels and a train/val/test split.

    ``edges`` holds each unordered pair once as ``u < v``, rows sorted. Arrays are
    made read-only on construction so instances can be shared freely.
    """

    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    split: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        n = int(self.num_nodes)
        if n < 0:
            raise SchemaError("num_nodes must be non-negative")
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if len(edges):
            if edges.min() < 0 or edges.max() >= n:
                raise SchemaError("edge endpoint out of range")
            if np.any(edges[:, 0] >= edges[:, 1]):
                raise SchemaError("edges must be stored as u < v (no self-loops)")
            keys = edges[:, 0] * n + edges[:, 1]
            if np.any(np.diff(keys) <= 0):
                raise SchemaError("edges must be unique and sorted")
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] != n:
            raise SchemaError(f"features must have {n} rows, got shape {features.shape}")
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (n,):
            raise SchemaError(f"labels must have length {n}")
        if n and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise SchemaError(f"label outside [0, {self.num_classes})")
        split = np.asarray(self.split, dtype="<U5")
        if split.shape != (n,):
            raise SchemaError(f"split must have length {n}")
        if not np.isin(split, SPLIT_TAGS).all():
            raise SchemaError("split tags must be one of train|val|test")
        object.__setattr__(self, "num_nodes", n)
        object.__setattr__(self, "num_classes", int(self.num_classes))
        object.__setattr__(self, "edges", _frozen(edges))
        object.__setattr__(self, "features", _frozen(features))
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "split", _frozen(split))

    @classmethod
    def from_edge_list(cls, num_nodes, edges, features, labels, split, num_classes) -> "GraphData":
        """Build a graph from arbitrary (possibly duplicated, unordered) edge pairs."""
        return cls(num_nodes, canonical_edges(edges, num_nodes), features, labels, split, num_classes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GraphData):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and self.num_classes == other.num_classes
            and np.array_equal(self.edges, other.edges)
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.split, other.split)
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def num_edges(self) -> int:
        return int(len(self.edges))

    @property
    def num_features(self) -> int:
        return int(self.features.shape[1])

    def split_nodes(self, tag: str) -> np.ndarray:
        if tag not in SPLIT_TAGS:
            raise ConfigError(f"unknown split tag {tag!r}")
        return np.flatnonzero(self.split == tag)

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.num_nodes)

    def adjacency(self) -> sp.csr_matrix:
        """Binary symmetric adjacency matrix A (no self-loops)."""
        n = self.num_nodes
        u, v = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(u))
        a = sp.csr_matrix((data, (np.concatenate([u, v]), np.concatenate([v, u]))), shape=(n, n))
        a.sort_indices()
        return a

    def edge_keys(self) -> np.ndarray:
        """Scalar key ``u * n + v`` per edge; sorted because edges are."""
        return self.edges[:, 0] * self.num_nodes + self.edges[:, 1]

    def with_edges(self, edges) -> "GraphData":
        return GraphData.from_edge_list(
            self.num_nodes, edges, self.features, self.labels, self.split, self.num_classes
        )

    def with_features(self, features: np.ndarray) -> "GraphData":
        return GraphData(self.num_nodes, self.edges, features, self.labels, self.split, self.num_classes)


def normalize_adjacency(g: GraphData) -> sp.csr_matrix:
    """Self-looped symmetric propagation operator ``D^-1/2 (A + I) D^-1/2``.

    Off-diagonal entries are ``dinv[i] * dinv[j]`` so the result is exactly
    symmetric; the diagonal is ``1 / deg`` with ``deg`` counting the self-loop.
    """
    n = g.num_nodes
    deg = g.degrees().astype(np.float64) + 1.0
    dinv = 1.0 / np.sqrt(deg)
    u, v = g.edges[:, 0], g.edges[:, 1]
    diag = np.arange(n)
    rows = np.concatenate([u, v, diag])
    cols = np.concatenate([v, u, diag])
    off = dinv[u] * dinv[v]
    data = np.concatenate([off, off, 1.0 / deg])
    a = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    a.sort_indices()
    return a


@dataclass(frozen=True)
class SubgraphMask:
    """Kept node ids of a compressed graph plus how they were chosen."""

    kept: np.ndarray
    compression_ratio: float
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        kept = np.unique(np.asarray(self.kept, dtype=np.int64))
        if len(kept) and kept[0] < 0:
            raise ConfigError("mask contains negative node ids")
        if not 0.0 <= float(self.compression_ratio) <= 1.0:
            raise ConfigError("compression_ratio must lie in [0, 1]")
        object.__setattr__(self, "kept", _frozen(kept))
        object.__setattr__(self, "compression_ratio", float(self.compression_ratio))

    def __len__(self) -> int:
        return int(len(self.kept))

    @classmethod
    def full(cls, num_nodes: int, provenance: dict[str, Any] | None = None) -> "SubgraphMask":
        return cls(np.arange(num_nodes), 0.0, provenance or {"method": "original"})

    def to_json(self) -> dict[str, Any]:
        return {
            "kept": [int(i) for i in self.kept],
            "compression_ratio": self.compression_ratio,
            "provenance": self.provenance,
        }

    @classmethod
    def from_json(cls, payload: dict[str, Any]) -> "SubgraphMask":
        try:
            return cls(payload["kept"], payload["compression_ratio"], payload.get("provenance", {}))
        except KeyError as exc:
            raise SchemaError(f"mask file lacks field {exc}") from None

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SubgraphMask":
        path = Path(path)
        if not path.is_file():
            raise LoadError(f"mask file not found: {path}")
        return cls.from_json(json.loads(path.read_text()))


def induced_subgraph(g: GraphData, mask: SubgraphMask | Sequence[int] | np.ndarray) -> tuple[GraphData, np.ndarray]:
    """Restrict ``g`` to the kept nodes.

    Returns the reindexed graph and the translation table ``orig_id[new_id]``.
    Reindexing is dense and order preserving.
    """
    kept = mask.kept if isinstance(mask, SubgraphMask) else np.unique(np.asarray(mask, dtype=np.int64))
    if len(kept) == 0:
        raise ConfigError("cannot induce a subgraph on an empty node set")
    if kept[0] < 0 or kept[-1] >= g.num_nodes:
        raise ConfigError("mask refers to nodes outside the graph")
    new_id = np.full(g.num_nodes, -1, dtype=np.int64)
    new_id[kept] = np.arange(len(kept))
    mapped = new_id[g.edges]
    edges = mapped[(mapped >= 0).all(axis=1)].reshape(-1, 2)
    sub = GraphData(
        len(kept), edges, g.features[kept], g.labels[kept], g.split[kept], g.num_classes
    )
    return sub, kept.copy()


def round_half_up(x: float) -> int:
    # n * (1 - C) lands on .5 boundaries often enough that banker's rounding surprises
    return int(math.floor(x + 0.5 + 1e-9))


def slot_budget(fraction: float, num_edges: int) -> int:
    """Number of edge flips allowed by an edge budget fraction: ``ceil(fraction * |E|)``."""
    return int(math.ceil(fraction * num_edges - 1e-9))


# --- TSV dataset directory ------------------------------------------------


def _read_lines(path: Path) -> list[str]:
    if not path.is_file():
        raise LoadError(f"missing dataset file: {path.name} (in {path.parent})")
    text = path.read_text(encoding="utf-8")
    return [ln for ln in text.split("\n") if ln.strip() != ""]


def load_dataset(dir_path: str | Path) -> GraphData:
    """Read a dataset directory (meta.json, edges/features/labels/splits TSV files)."""
    root = Path(dir_path)
    if not root.is_dir():
        raise LoadError(f"dataset directory not found: {root}")
    meta_path = root / "meta.json"
    if not meta_path.is_file():
        raise LoadError(f"missing dataset file: meta.json (in {root})")
    try:
        meta = json.loads(meta_path.read_text())
        n, d, c = int(meta["num_nodes"]), int(meta["num_features"]), int(meta["num_classes"])
    except (KeyError, ValueError, TypeError) as exc:
        raise SchemaError(f"malformed meta.json: {exc}") from None

    edge_lines = _read_lines(root / "edges.tsv")
    try:
        raw_edges = [tuple(int(t) for t in ln.split("\t")) for ln in edge_lines]
    except ValueError as exc:
        raise SchemaError(f"edges.tsv: {exc}") from None
    if any(len(e) != 2 for e in raw_edges):
        raise SchemaError("edges.tsv: every line needs exactly two ids")
    edges = canonical_edges(raw_edges, n)

    feat_lines = _read_lines(root / "features.tsv")
    if len(feat_lines) != n:
        raise SchemaError(f"features.tsv has {len(feat_lines)} rows, meta.json says {n}")
    try:
        features = np.array([ln.split("\t") for ln in feat_lines], dtype=np.float64).reshape(n, -1)
    except ValueError as exc:
        raise SchemaError(f"features.tsv: {exc}") from None
    if features.shape[1] != d:
        raise SchemaError(f"features.tsv has {features.shape[1]} columns, meta.json says {d}")

    label_lines = _read_lines(root / "labels.tsv")
    if len(label_lines) != n:
        raise SchemaError(f"labels.tsv has {len(label_lines)} rows, meta.json says {n}")
    try:
        labels = np.array([int(ln) for ln in label_lines], dtype=np.int64)
    except ValueError as exc:
        raise SchemaError(f"labels.tsv: {exc}") from None
    if n and (labels.min() < 0 or labels.max() >= c):
        raise SchemaError(f"labels.tsv: label outside [0, {c})")

    split = [ln.strip() for ln in _read_lines(root / "splits.tsv")]
    if len(split) != n:
        raise SchemaError(f"splits.tsv has {len(split)} rows, meta.json says {n}")
    return GraphData(n, edges, features.reshape(n, d), labels, np.array(split), c)


def _fmt(x: float) -> str:
    r = repr(float(x))
    return r[:-2] if r.endswith(".0") else r


def save_dataset(g: GraphData, dir_path: str | Path) -> Path:
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    meta = {"num_nodes": g.num_nodes, "num_features": g.num_features, "num_classes": g.num_classes}
    (root / "meta.json").write_text(json.dumps(meta) + "\n")
    with open(root / "edges.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{u}\t{v}\n" for u, v in g.edges.tolist())
    with open(root / "features.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for row in g.features.tolist():
            fh.write("\t".join(map(_fmt, row)) + "\n")
    with open(root / "labels.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{y}\n" for y in g.labels.tolist())
    with open(root / "splits.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{s}\n" for s in g.split.tolist())
    return root


# --- synthetic fixtures ---------------------------------------------------


def synthesize_graph(blocks: Sequence[tuple[int, float, float]], d: int, seed: int) -> GraphData:
    """Stochastic block model with class-correlated Gaussian features.

    Block ``b`` is class ``b``. Pairs inside block ``b`` connect with its
    ``intra_p``; pairs across blocks ``a`` and ``b`` use the mean of their
    ``inter_p``. Features of block ``b`` are unit-variance Gaussians offset by
    1.0 along axis ``b mod d``. Node ``i`` is tagged train/train/train/val/test
    by ``i mod 5``.
    """
    if d < 1:
        raise ConfigError("feature dimension must be >= 1")
    if not blocks:
        raise ConfigError("need at least one block")
    for size, p_in, p_out in blocks:
        if size < 1 or not (0.0 <= p_in <= 1.0 and 0.0 <= p_out <= 1.0):
            raise ConfigError(f"invalid block spec {(size, p_in, p_out)}")
    rng = np.random.default_rng(seed)
    sizes = np.array([b[0] for b in blocks], dtype=np.int64)
    p_in = np.array([b[1] for b in blocks], dtype=np.float64)
    p_out = np.array([b[2] for b in blocks], dtype=np.float64)
    labels = np.repeat(np.arange(len(blocks)), sizes)
    n = int(sizes.sum())

    iu, ju = np.triu_indices(n, k=1)
    la, lb = labels[iu], labels[ju]
    prob = np.where(la == lb, p_in[la], 0.5 * (p_out[la] + p_out[lb]))
    draw = rng.random(len(iu))
    keep = draw < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)

    means = np.zeros((len(blocks), d))
    means[np.arange(len(blocks)), np.arange(len(blocks)) % d] = 1.0
    features = means[labels] + rng.standard_normal((n, d))
    tags = np.array(["train", "train", "train", "val", "test"])
    split = tags[np.arange(n) % 5]
    return GraphData(n, edges, features, labels, split, len(blocks))
