"""Balanced K-means: Lloyd's algorithm for centroids, then capacity-limited assignment."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from .errors import ConfigError


@dataclass(frozen=True)
class ClusterAssignment:
    num_clusters: int
    assignment: np.ndarray
    sizes: np.ndarray
    centroids: np.ndarray | None = None

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == cluster)

    def groups(self) -> list[np.ndarray]:
        order = np.argsort(self.assignment, kind="stable")
        bounds = np.cumsum(self.sizes)[:-1]
        return np.split(order, bounds)

    def dump(self, path: str | Path) -> None:
        """Audit file: one ``node_id<TAB>cluster_id`` line per node."""
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{i}\t{c}\n" for i, c in enumerate(self.assignment.tolist()))


def _sq_dists(x: np.ndarray, c: np.ndarray, xx: np.ndarray | None = None) -> np.ndarray:
    xx = np.einsum("ij,ij->i", x, x) if xx is None else xx
    d = xx[:, None] - 2.0 * (x @ c.T) + np.einsum("ij,ij->i", c, c)[None, :]
    return np.maximum(d, 0.0)


def kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding; falls back to uniform picks once every point is covered."""
    n = len(x)
    xx = np.einsum("ij,ij->i", x, x)
    chosen = [int(rng.integers(n))]
    closest = _sq_dists(x, x[chosen], xx)[:, 0]
    for _ in range(1, k):
        closest[chosen] = 0.0
        total = closest.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=closest / total))
        else:
            free = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(free))
        chosen.append(nxt)
        closest = np.minimum(closest, _sq_dists(x, x[nxt:nxt + 1], xx)[:, 0])
    return x[chosen].copy()


def kmeans(x: np.ndarray, k: int, seed: int, max_iter: int = 100, tol: float = 1e-6) -> np.ndarray:
    """Plain Euclidean Lloyd iterations; returns the centroids."""
    rng = np.random.default_rng(seed)
    centroids = kmeans_pp(x, k, rng)
    xx = np.einsum("ij,ij->i", x, x)
    for _ in range(max_iter):
        labels = _sq_dists(x, centroids, xx).argmin(axis=1)
        counts = np.bincount(labels, minlength=k)
        indicator = sp.csr_matrix((np.ones(len(x)), (labels, np.arange(len(x)))), shape=(k, len(x)))
        sums = indicator @ x
        new = centroids.copy()
        nonempty = counts > 0
        new[nonempty] = sums[nonempty] / counts[nonempty, None]
        shift = np.sqrt(((new - centroids) ** 2).sum(axis=1)).max()
        centroids = new
        if shift < tol:
            break
    return centroids


def capacities(n: int, b: int) -> np.ndarray:
    caps = np.full(b, n // b, dtype=np.int64)
    caps[: n % b] += 1
    return caps


def balanced_assign(dist: np.ndarray, caps: np.ndarray) -> np.ndarray:
    """Greedy assignment over all (node, centroid) pairs in ascending distance.

    Ties are resolved by lower node id, then lower cluster id. A node is placed
    at its closest centroid that still has room.
    """
    n, b = dist.shape
    if caps.sum() != n:
        raise ConfigError("capacities must sum to the number of nodes")
    node = np.repeat(np.arange(n), b)
    clus = np.tile(np.arange(b), n)
    order = np.lexsort((clus, node, dist.ravel()))
    assignment = np.full(n, -1, dtype=np.int64)
    room = caps.copy()
    left = n
    for k in order.tolist():
        i, c = divmod(k, b)
        if assignment[i] >= 0 or room[c] == 0:
            continue
        assignment[i] = c
        room[c] -= 1
        assert room[c] >= 0
        left -= 1
        if left == 0:
            break
    return assignment


def balanced_kmeans(x: np.ndarray, B: int, seed: int, max_iter: int = 100) -> ClusterAssignment:
    """Partition rows of ``x`` into ``B`` clusters whose sizes differ by at most one.

    Clusters ``0 .. (n mod B) - 1`` get ``ceil(n/B)`` slots, the rest ``floor(n/B)``.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if B < 1:
        raise ConfigError("number of clusters must be >= 1")
    if B > n:
        raise ConfigError(f"cannot form {B} clusters from {n} nodes")
    centroids = kmeans(x, B, seed, max_iter=max_iter)
    # exact pairwise differences: the expanded form used in Lloyd blurs ties
    dist = cdist(x, centroids)
    caps = capacities(n, B)
    assignment = balanced_assign(dist, caps)
    sizes = np.bincount(assignment, minlength=B)
    return ClusterAssignment(B, assignment, sizes, centroids)
