"""Brute-force reference computations used to cross-check the fast paths.

Nothing here shares code with the implementations it checks: WL labels are
nested tuples instead of compressed ids, losses are explicit loops, and so on.
"""

from __future__ import annotations

import math
from collections import Counter, deque

import numpy as np


def bfs_within(graph, center, r):
    dist = {center: 0}
    queue = deque([center])
    adj = {v: set() for v in range(graph.node_count)}
    for u, v in graph.edges:
        adj[u].add(v)
        adj[v].add(u)
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if w not in dist:
                dist[w] = dist[u] + 1
                queue.append(w)
    return {v for v, d in dist.items() if d <= r}


def wl_canonical_counts(graph, labels, h):
    """Per-iteration Counter of canonical (uncompressed, nested-tuple) WL labels."""
    adj = [[] for _ in range(graph.node_count)]
    for u, v in graph.edges:
        adj[u].append(v)
        adj[v].append(u)
    cur = [("L", int(x)) for x in labels]
    out = [Counter(cur)]
    for _ in range(h):
        cur = [(cur[v], tuple(sorted(cur[u] for u in adj[v]))) for v in range(graph.node_count)]
        out.append(Counter(cur))
    return out


def wl_kernel_explicit(g1, l1, g2, l2, h):
    c1, c2 = wl_canonical_counts(g1, l1, h), wl_canonical_counts(g2, l2, h)
    return sum(a[k] * b[k] for a, b in zip(c1, c2) for k in a)


def wl_kernel_explicit_normalized(g1, l1, g2, l2, h):
    k12 = wl_kernel_explicit(g1, l1, g2, l2, h)
    k11 = wl_kernel_explicit(g1, l1, g1, l1, h)
    k22 = wl_kernel_explicit(g2, l2, g2, l2, h)
    return k12 / math.sqrt(k11 * k22)


def nearest_centroid(rows, centroids):
    out = []
    for x in rows:
        best, best_d = 0, math.inf
        for j, c in enumerate(centroids):
            d = sum((a - b) ** 2 for a, b in zip(x, c))
            if d < best_d:
                best, best_d = j, d
        out.append(best)
    return out


def lloyd_loops(rows, init, max_iter=50, tol=1e-6):
    """Plain-Python Lloyd iterations from the given initial centroids."""
    C = [list(map(float, c)) for c in init]
    assign = nearest_centroid(rows, C)
    for _ in range(max_iter):
        assign = nearest_centroid(rows, C)
        new = []
        for j in range(len(C)):
            members = [rows[i] for i in range(len(rows)) if assign[i] == j]
            if members:
                new.append([sum(col) / len(members) for col in zip(*members)])
            else:
                new.append(C[j])
        shift = max(abs(a - b) for c, d in zip(C, new) for a, b in zip(c, d))
        C = new
        if shift < tol:
            break
    return nearest_centroid(rows, C), C


def pseudo_label_loops(z_target, z_source, source_labels, num_classes, tau):
    out = []
    for zt in z_target:
        w = [math.exp(float(np.dot(zt, zs)) / tau) for zs in z_source]
        total = sum(w)
        dist = [0.0] * num_classes
        for wi, y in zip(w, source_labels):
            dist[y] += wi / total
        out.append(dist)
    return np.array(out)


def cross_domain_loops(z_target, target_labels, z_source, source_labels, tau):
    loss = 0.0
    for j, zt in enumerate(z_target):
        positives = [i for i, y in enumerate(source_labels) if y == target_labels[j]]
        if not positives:
            continue
        denom = sum(math.exp(float(np.dot(zt, zs)) / tau) for zs in z_source)
        acc = 0.0
        for i in positives:
            acc += math.log(math.exp(float(np.dot(zt, z_source[i])) / tau) / denom)
        loss += -acc / len(positives)
    return loss


def cross_branch_loops(Z, Zt, tau, candidates=None):
    n = len(Z)
    cand = range(n) if candidates is None else candidates
    loss = 0.0
    for i in range(n):
        num = math.exp(float(np.dot(Z[i], Zt[i])) / tau)
        den = sum(math.exp(float(np.dot(Z[i], Zt[k])) / tau) for k in cand)
        loss += -math.log(num / den)
    return loss / n


def pooled_edges(graph, keep):
    """Edges of ``A[keep, keep]`` relabeled to positions in ``keep``."""
    A = np.zeros((graph.node_count, graph.node_count), dtype=int)
    for u, v in graph.edges:
        A[u, v] = A[v, u] = 1
    sub = A[np.ix_(keep, keep)]
    return {(i, j) for i in range(len(keep)) for j in range(i + 1, len(keep)) if sub[i, j]}
