"""Distances between row-aligned hidden representations.

Every metric returns 0 for identical inputs and grows with dissimilarity.
Correlation and CKA similarities ``s`` are reported as ``1 - s``.
"""

from __future__ import annotations

from collections import Counter
from typing import Callable

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import ConfigError
from .gcn import HiddenRepr

METRICS = ("pearson", "semipearson", "hamming", "jaccard_elem", "jaccard_row", "cka_linear", "cka_rbf")

SIGMA_FLOOR = 1e-12


def _standardized(a: np.ndarray):
    """Row-centred, unit-norm rows and a flag for zero-variance rows."""
    centred = a - a.mean(axis=1, keepdims=True)
    norms = np.sqrt((centred * centred).sum(axis=1))
    const = np.ptp(a, axis=1) == 0
    out = np.zeros_like(centred)
    out[~const] = centred[~const] / norms[~const, None]
    return out, const


def row_correlation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pearson coefficient of ``a[i]`` with ``b[i]`` for every row ``i``.

    A pair involving a zero-variance row scores 1 when the rows are identical
    and 0 otherwise.
    """
    ca = a - a.mean(axis=1, keepdims=True)
    cb = b - b.mean(axis=1, keepdims=True)
    num = (ca * cb).sum(axis=1)
    den = np.sqrt((ca * ca).sum(axis=1) * (cb * cb).sum(axis=1))
    const = (np.ptp(a, axis=1) == 0) | (np.ptp(b, axis=1) == 0)
    r = np.empty(len(a))
    good = ~const & (den > 0)
    r[good] = num[good] / den[good]
    same = np.all(a == b, axis=1)
    r[~good] = np.where(same[~good], 1.0, 0.0)
    return np.clip(r, -1.0, 1.0)


def _mean_cross_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Mean of the full row-by-row Pearson matrix between ``a`` and ``b``.

    Uses ``mean_ij <u_i, v_j> = <mean u, mean v>`` for standardized rows; pairs
    of constant rows contribute 1 exactly when their constant values match.
    """
    ua, ca = _standardized(a)
    ub, cb = _standardized(b)
    total = float(ua.sum(axis=0) @ ub.sum(axis=0))
    if ca.any() and cb.any():
        counts_a = Counter(a[ca, 0].tolist())
        counts_b = Counter(b[cb, 0].tolist())
        total += float(sum(cnt * counts_b.get(v, 0) for v, cnt in counts_a.items()))
    return total / (len(a) * len(b))


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Stacked-rows Pearson distance.

    The mean pairwise coefficient over the rows of ``[a; b]`` is compared with
    the value the same statistic takes when each matrix is stacked with itself:
    ``(mean C(a,a) + mean C(b,b)) / 4 - mean C(a,b) / 2``. This is zero for
    identical inputs and never negative.
    """
    caa = _mean_cross_correlation(a, a)
    cbb = _mean_cross_correlation(b, b)
    cab = _mean_cross_correlation(a, b)
    return max(0.0, 0.25 * (caa + cbb) - 0.5 * cab)


def semipearson(a: np.ndarray, b: np.ndarray) -> float:
    return float(1.0 - row_correlation(a, b).mean())


def hamming(a: np.ndarray, b: np.ndarray) -> float:
    """Fraction of entries whose ReLU activation pattern (value > 0) differs."""
    return float(np.mean((a > 0) != (b > 0)))


def jaccard_elem(a: np.ndarray, b: np.ndarray) -> float:
    sa, sb = a != 0, b != 0
    union = np.count_nonzero(sa | sb)
    if union == 0:
        return 0.0
    return float(1.0 - np.count_nonzero(sa & sb) / union)


def jaccard_row(a: np.ndarray, b: np.ndarray) -> float:
    sa, sb = a != 0, b != 0
    inter = (sa & sb).sum(axis=1)
    union = (sa | sb).sum(axis=1)
    sim = np.ones(len(a))
    nz = union > 0
    sim[nz] = inter[nz] / union[nz]
    return float(1.0 - sim.mean())


def _degenerate(a: np.ndarray, b: np.ndarray) -> float:
    return 0.0 if np.array_equal(a, b) else 1.0


def cka_linear(a: np.ndarray, b: np.ndarray) -> float:
    ca = a - a.mean(axis=0)
    cb = b - b.mean(axis=0)
    num = float(((cb.T @ ca) ** 2).sum())
    den = float(np.linalg.norm(ca.T @ ca) * np.linalg.norm(cb.T @ cb))
    if den == 0.0:
        return _degenerate(a, b)
    return float(1.0 - np.clip(num / den, 0.0, 1.0))


def median_bandwidth(a: np.ndarray, b: np.ndarray) -> float:
    """Median pairwise Euclidean distance among the stacked rows of ``a`` and ``b``."""
    stacked = np.vstack([a, b])
    if len(stacked) < 2:
        return SIGMA_FLOOR
    return max(float(np.median(pdist(stacked))), SIGMA_FLOOR)


def _centre_gram(k: np.ndarray) -> np.ndarray:
    return k - k.mean(axis=0, keepdims=True) - k.mean(axis=1, keepdims=True) + k.mean()


def cka_rbf(a: np.ndarray, b: np.ndarray) -> float:
    sigma = median_bandwidth(a, b)
    scale = 1.0 / (2.0 * sigma * sigma)
    ka = _centre_gram(np.exp(-cdist(a, a, "sqeuclidean") * scale))
    kb = _centre_gram(np.exp(-cdist(b, b, "sqeuclidean") * scale))
    hab = float((ka * kb).sum())
    haa = float((ka * ka).sum())
    hbb = float((kb * kb).sum())
    if haa <= 0.0 or hbb <= 0.0:
        return _degenerate(a, b)
    return float(1.0 - np.clip(hab / np.sqrt(haa * hbb), 0.0, 1.0))


_REGISTRY: dict[str, Callable[[np.ndarray, np.ndarray], float]] = {
    "pearson": pearson,
    "semipearson": semipearson,
    "hamming": hamming,
    "jaccard_elem": jaccard_elem,
    "jaccard_row": jaccard_row,
    "cka_linear": cka_linear,
    "cka_rbf": cka_rbf,
}


def check_metric(metric: str) -> str:
    if metric not in _REGISTRY:
        raise ConfigError(f"unknown metric {metric!r}; choose from {', '.join(METRICS)}")
    return metric


def repr_distance(metric: str, h: HiddenRepr | np.ndarray, h2: HiddenRepr | np.ndarray) -> float:
    """Distance ``metric`` between two row-aligned representations."""
    fn = _REGISTRY[check_metric(metric)]
    if isinstance(h, HiddenRepr) and isinstance(h2, HiddenRepr):
        if len(h.node_ids) != len(h2.node_ids) or not np.array_equal(h.node_ids, h2.node_ids):
            raise ConfigError("representations are not row-aligned (node ids differ)")
    a = np.ascontiguousarray(h.rows if isinstance(h, HiddenRepr) else h, dtype=np.float64)
    b = np.ascontiguousarray(h2.rows if isinstance(h2, HiddenRepr) else h2, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ConfigError("representations must be 2-d")
    if a.shape[1] != b.shape[1]:
        raise ConfigError(f"width mismatch: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] != b.shape[0]:
        raise ConfigError(f"row count mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] == 0 or a.shape[1] == 0:
        raise ConfigError("representations must be non-empty")
    # canonical argument order makes d(a, b) == d(b, a) bit for bit
    if b.tobytes() < a.tobytes():
        a, b = b, a
    return fn(a, b)
