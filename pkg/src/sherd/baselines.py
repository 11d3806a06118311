"""Compression baselines and preprocessing defenses."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from .errors import ConfigError
from .graph import GraphData, SubgraphMask, round_half_up

COMPRESSORS = ("random", "node_degree", "features_mean")
PURIFIERS = ("gcn_jaccard", "gcn_svd")


def _num_kept(n: int, compression: float) -> int:
    if not 0.0 <= compression < 1.0:
        raise ConfigError("compression must lie in [0, 1)")
    k = round_half_up(n * (1.0 - compression))
    if k == 0:
        raise ConfigError("compression keeps no nodes")
    return k


def baseline_compress(method: str, g: GraphData, compression: float, seed: int = 0) -> SubgraphMask:
    """Keep ``round(n (1 - C))`` nodes chosen by a simple heuristic.

    ``node_degree`` and ``features_mean`` drop the nodes with the smallest
    degree or feature-row mean; among equals the lower id is dropped first.
    """
    n = g.num_nodes
    k = _num_kept(n, compression)
    if method == "random":
        rng = np.random.default_rng(seed)
        kept = rng.choice(n, size=k, replace=False)
    elif method in ("node_degree", "features_mean"):
        key = g.degrees() if method == "node_degree" else g.features.mean(axis=1)
        order = np.lexsort((np.arange(n), key))
        kept = order[n - k:]
    else:
        raise ConfigError(f"unknown compression method {method!r}; choose from {', '.join(COMPRESSORS)}")
    prov = {"method": method, "seed": seed} if method == "random" else {"method": method}
    return SubgraphMask(kept, compression, prov)


def feature_jaccard(g: GraphData, pairs: np.ndarray) -> np.ndarray:
    """Jaccard similarity of the feature supports of each node pair.

    Two empty supports are treated as identical (similarity 1).
    """
    s = sp.csr_matrix(g.features != 0, dtype=np.float64)
    if len(pairs) == 0:
        return np.zeros(0)
    u, v = pairs[:, 0], pairs[:, 1]
    inter = np.asarray(s[u].multiply(s[v]).sum(axis=1)).ravel()
    sizes = np.asarray(s.sum(axis=1)).ravel()
    union = sizes[u] + sizes[v] - inter
    sim = np.ones(len(pairs))
    nz = union > 0
    sim[nz] = inter[nz] / union[nz]
    return sim


def jaccard_purify(g: GraphData, threshold: float = 0.01) -> GraphData:
    """Drop every edge whose endpoints' feature Jaccard similarity is below ``threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError("threshold must lie in [0, 1]")
    if g.num_edges == 0:
        return g
    keep = feature_jaccard(g, g.edges) >= threshold
    return g.with_edges(g.edges[keep])


def low_rank_adjacency(g: GraphData, rank: int) -> np.ndarray:
    """Best rank-``rank`` approximation of the dense adjacency.

    The adjacency is symmetric, so its leading singular triplets are its
    eigenpairs of largest magnitude.
    """
    n = g.num_nodes
    a = g.adjacency().astype(np.float64)
    if rank >= n - 1 or n <= 256:
        vals, vecs = np.linalg.eigh(a.toarray())
        top = np.sort(np.argsort(-np.abs(vals), kind="stable")[:rank])
        vals, vecs = vals[top], vecs[:, top]
    else:
        vals, vecs = eigsh(a, k=rank, which="LM", v0=np.ones(n))
    return (vecs * vals) @ vecs.T


def svd_purify(g: GraphData, rank: int = 15) -> GraphData:
    """Replace the adjacency by its truncated SVD, re-binarized at 0.5."""
    if rank < 1:
        raise ConfigError("rank must be >= 1")
    if rank > g.num_nodes:
        raise ConfigError(f"rank {rank} exceeds the number of nodes {g.num_nodes}")
    if g.num_edges == 0:
        return g
    low = low_rank_adjacency(g, rank)
    u, v = np.nonzero(np.triu(low > 0.5, k=1))
    return g.with_edges(np.stack([u, v], axis=1))


def purify(method: str, g: GraphData, jaccard_threshold: float = 0.01, svd_rank: int = 15) -> GraphData:
    if method == "gcn_jaccard":
        return jaccard_purify(g, jaccard_threshold)
    if method == "gcn_svd":
        return svd_purify(g, min(svd_rank, g.num_nodes))
    raise ConfigError(f"unknown purification method {method!r}")
