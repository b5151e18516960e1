"""Graph data model, TUDataset text I/O, r-hop subgraphs, density splits and batching."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ParseError, SampleError, SplitError

log = logging.getLogger(__name__)

SOURCE = "source"
TARGET = "target"


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph with discrete node labels and/or continuous node attributes.

    ``edges`` holds each edge once as ``(u, v)`` with ``u < v``, sorted. Build
    graphs from raw edge lists with :meth:`from_edges`, which collapses
    duplicates and drops self-loops.
    """

    node_count: int
    edges: tuple = ()
    node_labels: tuple | None = None
    node_attrs: np.ndarray | None = None
    class_label: int | None = None

    def __post_init__(self):
        n = self.node_count
        if n < 0:
            raise ValueError("node_count must be non-negative")
        prev = None
        for e in self.edges:
            u, v = e
            if not (0 <= u < v < n):
                raise ValueError(f"invalid edge {e} for {n} nodes")
            if prev is not None and e <= prev:
                raise ValueError("edges must be sorted and unique")
            prev = e
        if self.node_labels is not None:
            if len(self.node_labels) != n:
                raise ValueError("node_labels length != node_count")
            if any(lab < 0 for lab in self.node_labels):
                raise ValueError("node labels must be non-negative")
        if self.node_attrs is not None:
            attrs = np.array(self.node_attrs, dtype=np.float64)
            if attrs.ndim != 2 or attrs.shape[0] != n:
                raise ValueError("node_attrs must be an (n, d) matrix")
            attrs.setflags(write=False)
            object.__setattr__(self, "node_attrs", attrs)

    @classmethod
    def from_edges(cls, node_count, edges, node_labels=None, node_attrs=None,
                   class_label=None, stats=None):
        """Normalize an arbitrary (possibly directed, repeated) edge list.

        ``stats``, if given, is a dict whose ``"self_loops"`` entry is
        incremented for every dropped self-loop.
        """
        seen = set()
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                if stats is not None:
                    stats["self_loops"] = stats.get("self_loops", 0) + 1
                continue
            seen.add((min(u, v), max(u, v)))
        labels = None if node_labels is None else tuple(int(x) for x in node_labels)
        return cls(node_count, tuple(sorted(seen)), labels, node_attrs, class_label)

    @cached_property
    def neighbors(self):
        adj = [[] for _ in range(self.node_count)]
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        return tuple(tuple(sorted(a)) for a in adj)

    @property
    def num_edges(self):
        return len(self.edges)

    def degrees(self):
        return np.array([len(a) for a in self.neighbors], dtype=np.int64)

    def adjacency(self):
        a = np.zeros((self.node_count, self.node_count), dtype=bool)
        for u, v in self.edges:
            a[u, v] = a[v, u] = True
        return a

    def density(self, mode="degree"):
        """Average degree ``2|E|/|V|`` or, with ``mode="fraction"``, ``|E| / C(|V|, 2)``."""
        n = self.node_count
        if mode == "degree":
            return 2.0 * self.num_edges / n if n else 0.0
        if mode == "fraction":
            return self.num_edges / (n * (n - 1) / 2) if n > 1 else 0.0
        raise ValueError(f"unknown density mode {mode!r}")

    def induced(self, nodes):
        """Induced subgraph on ``nodes`` (in the given order); labels/attrs carried over."""
        index = {v: i for i, v in enumerate(nodes)}
        edges = []
        for u, v in self.edges:
            if u in index and v in index:
                a, b = index[u], index[v]
                edges.append((min(a, b), max(a, b)))
        labels = None if self.node_labels is None else tuple(self.node_labels[v] for v in nodes)
        attrs = None if self.node_attrs is None else self.node_attrs[list(nodes)]
        return Graph(len(nodes), tuple(sorted(edges)), labels, attrs, None)

    def permuted(self, perm):
        """Relabel nodes so that old node ``v`` becomes ``perm[v]``."""
        perm = list(perm)
        edges = [(min(perm[u], perm[v]), max(perm[u], perm[v])) for u, v in self.edges]
        inv = np.argsort(perm)
        labels = None if self.node_labels is None else tuple(self.node_labels[i] for i in inv)
        attrs = None if self.node_attrs is None else self.node_attrs[inv]
        return Graph(self.node_count, tuple(sorted(edges)), labels, attrs, self.class_label)

    def without_label(self):
        return replace(self, class_label=None)

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        if (self.node_count, self.edges, self.node_labels, self.class_label) != (
                other.node_count, other.edges, other.node_labels, other.class_label):
            return False
        if (self.node_attrs is None) != (other.node_attrs is None):
            return False
        return self.node_attrs is None or np.array_equal(self.node_attrs, other.node_attrs)

    __hash__ = object.__hash__


def disjoint_union(g1: Graph, g2: Graph) -> Graph:
    off = g1.node_count
    edges = list(g1.edges) + [(u + off, v + off) for u, v in g2.edges]
    labels = None
    if g1.node_labels is not None and g2.node_labels is not None:
        labels = g1.node_labels + g2.node_labels
    attrs = None
    if g1.node_attrs is not None and g2.node_attrs is not None:
        attrs = np.vstack([g1.node_attrs, g2.node_attrs])
    return Graph(off + g2.node_count, tuple(edges), labels, attrs, None)


@dataclass(frozen=True)
class Dataset:
    graphs: tuple
    num_classes: int
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))
        for g in self.graphs:
            if g.class_label is not None and not (0 <= g.class_label < self.num_classes):
                raise ValueError(f"class label {g.class_label} outside [0, {self.num_classes})")
        if self.graphs:
            has_labels = {g.node_labels is not None for g in self.graphs}
            has_attrs = {g.node_attrs is not None for g in self.graphs}
            if len(has_labels) > 1 or len(has_attrs) > 1:
                raise ValueError("node labels/attributes must be present uniformly")
            if not (has_labels.pop() or has_attrs.pop()):
                raise ValueError("graphs need node labels or node attributes")
            dims = {g.node_attrs.shape[1] for g in self.graphs if g.node_attrs is not None}
            if len(dims) > 1:
                raise ValueError("node attribute dimension differs across graphs")

    def __len__(self):
        return len(self.graphs)

    def __getitem__(self, i):
        return self.graphs[i]

    @property
    def labels(self):
        return np.array([-1 if g.class_label is None else g.class_label for g in self.graphs])

    @property
    def has_node_labels(self):
        return bool(self.graphs) and self.graphs[0].node_labels is not None

    @property
    def attr_dim(self):
        if not self.graphs or self.graphs[0].node_attrs is None:
            return 0
        return self.graphs[0].node_attrs.shape[1]

    def label_alphabet(self):
        """Size of the discrete node-label alphabet (max label + 1)."""
        if not self.has_node_labels:
            return 0
        return 1 + max((max(g.node_labels) for g in self.graphs if g.node_count), default=-1)

    def subset(self, indices, name=None):
        return Dataset(tuple(self.graphs[i] for i in indices), self.num_classes,
                       self.name if name is None else name)


@dataclass(frozen=True)
class DomainPair:
    """Labeled source plus unlabeled target.

    Target class labels are stripped on construction; when present they are
    kept in ``target_labels`` for evaluation and diagnostics only.
    """

    source: Dataset
    target: Dataset
    target_labels: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.source.num_classes != self.target.num_classes:
            raise ValueError("source and target must share the label space")
        if any(g.class_label is None for g in self.source.graphs):
            raise ValueError("every source graph needs a class label")
        tgt = self.target
        if any(g.class_label is not None for g in tgt.graphs):
            if self.target_labels is None and all(g.class_label is not None for g in tgt.graphs):
                object.__setattr__(self, "target_labels", tgt.labels.copy())
            stripped = Dataset(tuple(g.without_label() for g in tgt.graphs),
                               tgt.num_classes, tgt.name)
            object.__setattr__(self, "target", stripped)

    @property
    def num_classes(self):
        return self.source.num_classes

    def labeled_target(self) -> Dataset:
        if self.target_labels is None:
            raise ValueError("target labels are not available")
        graphs = tuple(replace(g, class_label=int(y))
                       for g, y in zip(self.target.graphs, self.target_labels))
        return Dataset(graphs, self.target.num_classes, self.target.name)


@dataclass(frozen=True)
class Batch:
    graph_indices: tuple
    domain_tag: str = SOURCE


# --------------------------------------------------------------------------- I/O

def _read_rows(path: Path, kind=int):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([kind(tok) for tok in line.replace(",", " ").split()])
            except ValueError as exc:
                raise ParseError(f"{path.name}:{lineno}: {exc}") from None
    return rows


def parse_tudataset(directory_path, dataset_prefix, num_classes=None) -> Dataset:
    """Read a dataset in the TUDataset plain-text layout.

    Class labels are remapped to ``[0, C)`` by sorted distinct value unless
    ``num_classes`` is given, in which case labels must already lie in range
    and are kept unchanged.
    """
    root = Path(directory_path)
    p = lambda suffix: root / f"{dataset_prefix}_{suffix}.txt"  # noqa: E731
    for suffix in ("A", "graph_indicator", "graph_labels"):
        if not p(suffix).exists():
            raise ParseError(f"missing mandatory file {p(suffix).name}")

    indicator = [r[0] for r in _read_rows(p("graph_indicator"))]
    graph_labels = [r[0] for r in _read_rows(p("graph_labels"))]
    n_total = len(indicator)
    graph_ids = sorted(set(indicator))
    if graph_ids and graph_ids != list(range(1, len(graph_ids) + 1)):
        raise ParseError("graph ids must be contiguous starting at 1")
    if len(graph_labels) != len(graph_ids):
        raise ParseError(f"{len(graph_labels)} graph labels for {len(graph_ids)} graphs")
    if any(indicator[i] > indicator[i + 1] for i in range(n_total - 1)):
        raise ParseError("graph indicator must be non-decreasing")

    # global node index -> (graph, local index)
    offsets = {}
    local = []
    counts = {}
    for gid in indicator:
        offsets.setdefault(gid, len(local))
        local.append(counts.get(gid, 0))
        counts[gid] = counts.get(gid, 0) + 1

    edges = {gid: [] for gid in graph_ids}
    for row in _read_rows(p("A")):
        if len(row) != 2:
            raise ParseError(f"edge rows need two entries, got {row}")
        a, b = row[0] - 1, row[1] - 1
        if not (0 <= a < n_total and 0 <= b < n_total):
            raise ParseError(f"edge {row} references unknown node")
        if indicator[a] != indicator[b]:
            raise ParseError(f"edge {row} crosses graphs {indicator[a]} and {indicator[b]}")
        edges[indicator[a]].append((local[a], local[b]))

    node_labels = None
    if p("node_labels").exists():
        node_labels = [r[0] for r in _read_rows(p("node_labels"))]
        if len(node_labels) != n_total:
            raise ParseError("node label count != node count")
        if any(x < 0 for x in node_labels):
            raise ParseError("node labels must be non-negative")
    node_attrs = None
    if p("node_attributes").exists():
        rows = _read_rows(p("node_attributes"), float)
        if len(rows) != n_total:
            raise ParseError("node attribute row count != node count")
        if len({len(r) for r in rows}) > 1:
            raise ParseError("ragged node attribute rows")
        node_attrs = np.array(rows, dtype=np.float64)
    if node_labels is None and node_attrs is None:
        # Unlabeled nodes: a constant label keeps the dataset featurizable.
        node_labels = [0] * n_total

    if num_classes is None:
        values = sorted(set(graph_labels))
        remap = {v: i for i, v in enumerate(values)}
        num_classes = len(values)
    else:
        if any(not (0 <= y < num_classes) for y in graph_labels):
            raise ParseError(f"graph labels outside [0, {num_classes})")
        remap = {y: y for y in graph_labels}

    stats = {}
    graphs = []
    for k, gid in enumerate(graph_ids):
        lo, n = offsets[gid], counts[gid]
        graphs.append(Graph.from_edges(
            n, edges[gid],
            node_labels=None if node_labels is None else node_labels[lo:lo + n],
            node_attrs=None if node_attrs is None else node_attrs[lo:lo + n],
            class_label=remap[graph_labels[k]],
            stats=stats,
        ))
    if stats.get("self_loops"):
        log.warning("%s: dropped %d self-loops", dataset_prefix, stats["self_loops"])
    try:
        return Dataset(tuple(graphs), num_classes, dataset_prefix)
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def write_tudataset(dataset: Dataset, directory_path, dataset_prefix) -> None:
    """Inverse of :func:`parse_tudataset` (edges written once, in both directions)."""
    root = Path(directory_path)
    root.mkdir(parents=True, exist_ok=True)
    a_lines, ind_lines, lab_lines, attr_lines, glab_lines = [], [], [], [], []
    base = 0
    for gid, g in enumerate(dataset.graphs, 1):
        for u, v in g.edges:
            a_lines.append(f"{u + base + 1}, {v + base + 1}")
            a_lines.append(f"{v + base + 1}, {u + base + 1}")
        ind_lines.extend([str(gid)] * g.node_count)
        if g.node_labels is not None:
            lab_lines.extend(str(x) for x in g.node_labels)
        if g.node_attrs is not None:
            attr_lines.extend(", ".join(repr(float(x)) for x in row) for row in g.node_attrs)
        glab_lines.append(str(g.class_label if g.class_label is not None else 0))
        base += g.node_count

    def dump(suffix, lines):
        (root / f"{dataset_prefix}_{suffix}.txt").write_text(
            "".join(line + "\n" for line in lines))

    dump("A", a_lines)
    dump("graph_indicator", ind_lines)
    dump("graph_labels", glab_lines)
    if dataset.has_node_labels:
        dump("node_labels", lab_lines)
    if dataset.attr_dim:
        dump("node_attributes", attr_lines)


# --------------------------------------------------------------------- operations

def split_by_edge_density(dataset: Dataset, parts: int, mode="degree") -> list:
    """Equal-count partition of ``dataset`` into ``parts`` chunks of ascending density.

    The sort is stable (ties keep original order) and the first
    ``len % parts`` chunks take one extra graph.
    """
    n = len(dataset)
    if parts < 1:
        raise SplitError("parts must be positive")
    if n == 0:
        raise SplitError("cannot split an empty dataset")
    if parts > n:
        raise SplitError(f"cannot split {n} graphs into {parts} parts")
    dens = [g.density(mode) for g in dataset.graphs]
    order = sorted(range(n), key=lambda i: dens[i])
    q, rem = divmod(n, parts)
    out, start = [], 0
    for k in range(parts):
        size = q + (1 if k < rem else 0)
        out.append(dataset.subset(order[start:start + size], name=f"{dataset.name}{k}"))
        start += size
    return out


def r_hop_nodes(graph: Graph, center: int, r: int) -> list:
    """Nodes within distance ``r`` of ``center``: center first, the rest ascending."""
    if not (0 <= center < graph.node_count):
        raise IndexError(f"center {center} outside graph of {graph.node_count} nodes")
    dist = {center: 0}
    queue = deque([center])
    nbrs = graph.neighbors
    while queue:
        u = queue.popleft()
        if dist[u] == r:
            continue
        for w in nbrs[u]:
            if w not in dist:
                dist[w] = dist[u] + 1
                queue.append(w)
    return [center] + sorted(v for v in dist if v != center)


def r_hop_subgraph(graph: Graph, center: int, r: int) -> Graph:
    """Induced subgraph on the ``r``-hop neighborhood of ``center`` (center becomes node 0)."""
    return graph.induced(r_hop_nodes(graph, center, r))


def sample_batch(dataset: Dataset, size: int, rng: np.random.Generator,
                 domain_tag=SOURCE) -> Batch:
    """Uniform sample of ``size`` distinct graph indices."""
    if size < 1 or size > len(dataset):
        raise SampleError(f"cannot sample {size} graphs from {len(dataset)}")
    idx = rng.choice(len(dataset), size=size, replace=False)
    return Batch(tuple(int(i) for i in idx), domain_tag)


def graphs_equal(a: Sequence[Graph], b: Sequence[Graph]) -> bool:
    return len(a) == len(b) and all(x == y for x, y in zip(a, b))
