"""Synthetic cycles-vs-stars domain pair for desk-scale adaptation runs.

Class 0 graphs are cycles of length 5-8, class 1 graphs are stars with 5-8
leaves. Node attributes are 2-D Gaussians whose mean depends on the class. The
target domain uses the same structures but moves every attribute mean by a
fixed offset and adds one random edge to each graph.
"""

from __future__ import annotations

import numpy as np

from .graph import Dataset, DomainPair, Graph, write_tudataset

CLASS_MEANS = np.array([[1.0, 0.0], [0.0, 1.0]])
ATTR_STD = 0.5
TARGET_OFFSET = np.array([-0.3, 0.3])
SIZES = (5, 8)
SOURCE_PREFIX = "toy_source"
TARGET_PREFIX = "toy_target"


def cycle_edges(n):
    return [(i, (i + 1) % n) for i in range(n)]


def star_edges(leaves):
    return [(0, i) for i in range(1, leaves + 1)]


def _add_random_edge(n, edges, rng):
    present = {(min(u, v), max(u, v)) for u, v in edges}
    free = [(u, v) for u in range(n) for v in range(u + 1, n) if (u, v) not in present]
    u, v = free[rng.integers(len(free))]
    return list(edges) + [(u, v)]


def make_domain(n_graphs, rng, offset=(0.0, 0.0), extra_edge=False, name=""):
    labels = np.array([0] * (n_graphs // 2) + [1] * (n_graphs - n_graphs // 2))
    rng.shuffle(labels)
    graphs = []
    for y in labels:
        size = int(rng.integers(SIZES[0], SIZES[1] + 1))
        if y == 0:
            n, edges = size, cycle_edges(size)
        else:
            n, edges = size + 1, star_edges(size)
        if extra_edge:
            edges = _add_random_edge(n, edges, rng)
        mean = CLASS_MEANS[y] + np.asarray(offset)
        attrs = mean + ATTR_STD * rng.standard_normal((n, 2))
        graphs.append(Graph.from_edges(n, edges, node_attrs=attrs, class_label=int(y)))
    return Dataset(tuple(graphs), 2, name)


def make_toy_pair(seed=7, n_source=200, n_target=200):
    """Source/target datasets (both still labeled) for the given seed."""
    rng = np.random.default_rng(seed)
    source = make_domain(n_source, rng, name=SOURCE_PREFIX)
    target = make_domain(n_target, rng, TARGET_OFFSET, extra_edge=True, name=TARGET_PREFIX)
    return source, target


def toy_domain_pair(seed=7, **kw) -> DomainPair:
    source, target = make_toy_pair(seed, **kw)
    return DomainPair(source, target)


def write_toy(seed, out_dir):
    source, target = make_toy_pair(seed)
    write_tudataset(source, out_dir, SOURCE_PREFIX)
    write_tudataset(target, out_dir, TARGET_PREFIX)
    return source, target
