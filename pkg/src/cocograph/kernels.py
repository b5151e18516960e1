"""Weisfeiler-Lehman subtree kernel and k-means node-attribute quantization."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, FitError, ShapeError, StateError


class WLTable:
    """Shared lookup from ``(label, sorted neighbor labels)`` to a compressed id.

    Identical pairs get identical ids no matter which graph they come from, so
    feature maps of different graphs live in one label space.
    """

    def __init__(self):
        self._ids = {}

    def __len__(self):
        return len(self._ids)

    def refine(self, neighbors, labels):
        ids = self._ids
        out = []
        for v, nbrs in enumerate(neighbors):
            key = (labels[v], tuple(sorted(labels[u] for u in nbrs)))
            i = ids.get(key)
            if i is None:
                i = ids[key] = len(ids)
            out.append(i)
        return out


DEFAULT_TABLE = WLTable()


def wl_refine(graph, labels, table=None):
    """One round of WL relabeling of ``graph`` starting from per-node ``labels``."""
    if len(labels) != graph.node_count:
        raise ShapeError("one label per node required")
    table = DEFAULT_TABLE if table is None else table
    return table.refine(graph.neighbors, list(labels))


def wl_feature_map(neighbors, labels, h, table=None):
    """Label counts for iterations ``0..h`` as a list of ``{label: count}`` dicts."""
    table = DEFAULT_TABLE if table is None else table
    labels = list(labels)
    maps = []
    for it in range(h + 1):
        if it:
            labels = table.refine(neighbors, labels)
        counts = {}
        for lab in labels:
            counts[lab] = counts.get(lab, 0) + 1
        maps.append(counts)
    return maps


def flat_features(neighbors, labels, h, table=None):
    """Feature map flattened to ``{(iteration, label): count}``."""
    out = {}
    for it, counts in enumerate(wl_feature_map(neighbors, labels, h, table)):
        for lab, c in counts.items():
            out[(it, lab)] = c
    return out


def feature_dot(f1, f2):
    if len(f1) > len(f2):
        f1, f2 = f2, f1
    return sum(c * f2[k] for k, c in f1.items() if k in f2)


def wl_kernel(g1, g2, labels1=None, labels2=None, h=2, normalized=False, table=None):
    """WL subtree kernel ``sum_i <counts_i(g1), counts_i(g2)>`` (optionally cosine-normalized)."""
    if h < 0:
        raise ValueError("h must be non-negative")
    table = DEFAULT_TABLE if table is None else table
    l1 = g1.node_labels if labels1 is None else labels1
    l2 = g2.node_labels if labels2 is None else labels2
    if l1 is None or l2 is None:
        raise ValueError("discrete node labels are required")
    f1 = flat_features(g1.neighbors, l1, h, table)
    f2 = flat_features(g2.neighbors, l2, h, table)
    k12 = feature_dot(f1, f2)
    if not normalized:
        return k12
    k11, k22 = feature_dot(f1, f1), feature_dot(f2, f2)
    if k11 == 0 or k22 == 0:
        raise DomainError("normalized kernel undefined for an empty graph")
    return k12 / math.sqrt(k11 * k22)


def gram_matrix(graphs, h=2, normalized=False, labels=None, table=None):
    table = DEFAULT_TABLE if table is None else table
    labels = labels or [g.node_labels for g in graphs]
    feats = [flat_features(g.neighbors, lab, h, table) for g, lab in zip(graphs, labels)]
    n = len(graphs)
    K = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            K[i, j] = K[j, i] = feature_dot(feats[i], feats[j])
    if normalized:
        d = np.sqrt(np.diag(K))
        if (d == 0).any():
            raise DomainError("normalized kernel undefined for an empty graph")
        K = K / np.outer(d, d)
    return K


# ----------------------------------------------------------------- quantization

@dataclass
class Quantizer:
    centroids: np.ndarray | None = None
    k: int = 20
    fitted: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be positive")
        if self.centroids is not None:
            self.centroids = np.asarray(self.centroids, dtype=np.float64)
            if not np.isfinite(self.centroids).all():
                raise ValueError("centroids must be finite")


def _sq_dists(X, C):
    # Exact differences keep equidistant ties exact (no |x|^2 - 2xc + |c|^2 cancellation).
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def kmeanspp_init(X, k, rng):
    """k-means++ seeding: first centre uniform, the rest with probability proportional to D^2."""
    n = X.shape[0]
    idx = [int(rng.integers(n))]
    d2 = ((X - X[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            nxt = int(rng.integers(n))
        idx.append(nxt)
        d2 = np.minimum(d2, ((X - X[nxt]) ** 2).sum(axis=1))
    return X[idx].copy()


def lloyd(X, centroids, max_iter=50, tol=1e-6):
    C = centroids.copy()
    for _ in range(max_iter):
        assign = np.argmin(_sq_dists(X, C), axis=1)
        new = C.copy()
        for j in range(C.shape[0]):
            members = X[assign == j]
            if len(members):
                new[j] = members.mean(axis=0)
        shift = np.abs(new - C).max()
        C = new
        if shift < tol:
            break
    return C


def fit_quantizer(attr_rows, k, rng, max_iter=50, tol=1e-6) -> Quantizer:
    X = np.asarray(attr_rows, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("attribute rows must form a matrix")
    if X.shape[0] < k:
        raise FitError(f"need at least k={k} rows, got {X.shape[0]}")
    C = lloyd(X, kmeanspp_init(X, k, rng), max_iter, tol)
    return Quantizer(C, k, True)


def quantize(quantizer: Quantizer, attr_rows) -> np.ndarray:
    """Nearest-centroid label per row (Euclidean, ties to the lowest index)."""
    if not quantizer.fitted or quantizer.centroids is None:
        raise StateError("quantizer is not fitted")
    X = np.asarray(attr_rows, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != quantizer.centroids.shape[1]:
        raise ShapeError(f"rows of width {quantizer.centroids.shape[1]} expected, got {X.shape}")
    if X.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return np.argmin(_sq_dists(X, quantizer.centroids), axis=1)
