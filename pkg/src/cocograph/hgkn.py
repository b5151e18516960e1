"""Hierarchical graph-kernel branch.

Each layer compares the r-hop subgraph around every node with ``M`` small
learnable filter graphs through the normalized WL subtree kernel, maps the
``M`` kernel values to node features with an MLP, and keeps the top-scoring
nodes (attention pooling). Kernel values are constants for autodiff; filters
are trained by accepting random single edits whose first-order loss-change
estimate is negative.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import nn
from . import tensor as T
from .errors import ShapeError, StateError
from .graph import Graph, r_hop_nodes
from .kernels import Quantizer, WLTable, fit_quantizer, flat_features, quantize

log = logging.getLogger(__name__)

HIDDEN = 64


# ------------------------------------------------------------------ filters

@dataclass
class FilterGraph:
    adjacency: np.ndarray
    node_attrs: np.ndarray
    alphabet: int

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=bool)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("adjacency must be square")
        if not (a == a.T).all() or a.diagonal().any():
            raise ValueError("adjacency must be symmetric with a zero diagonal")
        attrs = np.asarray(self.node_attrs, dtype=np.int64)
        if attrs.shape != (a.shape[0],) or (attrs < 0).any() or (attrs >= self.alphabet).any():
            raise ValueError("filter attributes must lie in the alphabet")
        self.adjacency, self.node_attrs = a, attrs

    @property
    def node_count(self):
        return self.adjacency.shape[0]

    @property
    def neighbors(self):
        return tuple(tuple(np.flatnonzero(row).tolist()) for row in self.adjacency)

    def edit_distance(self, other):
        """Toggled edges plus changed attributes (same node count assumed)."""
        if other.node_count != self.node_count:
            raise ValueError("filters differ in size")
        edges = int(np.triu(self.adjacency ^ other.adjacency).sum())
        return edges + int((self.node_attrs != other.node_attrs).sum())

    def to_json(self):
        return {
            "adjacency": ["".join("1" if x else "0" for x in row) for row in self.adjacency],
            "attrs": self.node_attrs.tolist(),
            "alphabet": self.alphabet,
        }

    @classmethod
    def from_json(cls, obj):
        adj = np.array([[c == "1" for c in row] for row in obj["adjacency"]], dtype=bool)
        return cls(adj.reshape(len(obj["attrs"]), len(obj["attrs"])), obj["attrs"], obj["alphabet"])


def random_filter(rng, alphabet, min_size=3, max_size=8, p=0.5) -> FilterGraph:
    n = int(rng.integers(min_size, max_size + 1))
    upper = np.triu(rng.random((n, n)) < p, k=1)
    return FilterGraph(upper | upper.T, rng.integers(0, alphabet, size=n), alphabet)


def propose_filter_edit(filt: FilterGraph, rng) -> FilterGraph:
    """Toggle one random edge or change one node attribute, each kind with probability 1/2."""
    n = filt.node_count
    can_toggle = n >= 2
    can_relabel = filt.alphabet >= 2
    if not (can_toggle or can_relabel):
        raise ValueError("filter admits no edit")
    kind = "edge" if (can_toggle and (not can_relabel or rng.random() < 0.5)) else "attr"
    adj = filt.adjacency.copy()
    attrs = filt.node_attrs.copy()
    if kind == "edge":
        u, v = rng.choice(n, size=2, replace=False)
        adj[u, v] = adj[v, u] = not adj[u, v]
    else:
        v = int(rng.integers(n))
        new = int(rng.integers(filt.alphabet - 1))
        attrs[v] = new if new < attrs[v] else new + 1
    return FilterGraph(adj, attrs, filt.alphabet)


def estimate_filter_gradient(dL_de, old_vals, new_vals) -> float:
    """First-order estimate of the loss change from replacing a filter: ``sum dL/de * (new - old)``."""
    dL_de, old_vals, new_vals = (np.asarray(x, dtype=np.float64) for x in (dL_de, old_vals, new_vals))
    if not (dL_de.shape == old_vals.shape == new_vals.shape):
        raise ShapeError("gradient and kernel vectors must have the same length")
    return float(np.dot(dL_de, new_vals - old_vals))


# ------------------------------------------------------------ subgraph bank

class SubgraphBank:
    """WL feature vectors of subgraphs and filters in one shared column space.

    Subgraph features are cached by content (local structure + labels), so
    repeated neighborhoods across steps and graphs are featurized once.
    """

    def __init__(self, h=2):
        self.h = h
        self.table = WLTable()
        self.columns = {}
        self._cache = {}

    def _vector(self, neighbors, labels):
        feats = flat_features(neighbors, labels, self.h, self.table)
        cols = self.columns
        idx = np.empty(len(feats), dtype=np.int64)
        cnt = np.empty(len(feats))
        for i, (key, c) in enumerate(sorted(feats.items())):
            j = cols.get(key)
            if j is None:
                j = cols[key] = len(cols)
            idx[i], cnt[i] = j, c
        order = np.argsort(idx)
        return idx[order], cnt[order], float((cnt * cnt).sum())

    def subgraph(self, graph, labels, center, r):
        nodes = r_hop_nodes(graph, center, r)
        pos = {v: i for i, v in enumerate(nodes)}
        nbrs = tuple(tuple(sorted(pos[u] for u in graph.neighbors[v] if u in pos)) for v in nodes)
        labs = tuple(int(labels[v]) for v in nodes)
        key = (labs, nbrs)
        hit = self._cache.get(key)
        if hit is None:
            if len(self._cache) > 500_000:
                self._cache.clear()
            hit = self._cache[key] = self._vector(nbrs, labs)
        return hit

    def filter_vector(self, filt: FilterGraph):
        return self._vector(filt.neighbors, filt.node_attrs.tolist())


@dataclass
class LayerTrace:
    """What a layer's forward pass leaves behind for the discrete filter update."""

    S: sp.csr_matrix
    sub_sq: np.ndarray
    responses: T.Tensor
    filter_vectors: list = field(default_factory=list)


def _stack_rows(rows, ncols):
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(r[0]) for r in rows])
    idx = np.concatenate([r[0] for r in rows]) if rows else np.zeros(0, dtype=np.int64)
    val = np.concatenate([r[1] for r in rows]) if rows else np.zeros(0)
    sq = np.array([r[2] for r in rows])
    return sp.csr_matrix((val, idx, indptr), shape=(len(rows), ncols)), sq


def _kernel_against(S, sub_sq, vec, ncols):
    idx, cnt, sq = vec
    dense = np.zeros(ncols)
    keep = idx < ncols
    dense[idx[keep]] = cnt[keep]
    return (S @ dense) / np.sqrt(sub_sq * sq)


# --------------------------------------------------------------------- layer

class HGKNLayer:
    """One kernel layer: filters, response MLP ``psi``, score map and quantizer.

    ``use_labels`` layers read discrete node labels directly and need no
    quantizer; otherwise continuous node features go through ``quantizer``.
    """

    def __init__(self, params, name, num_filters, rng, r=1, rho=0.4, width=HIDDEN,
                 quantizer=None, use_labels=False, alphabet=None, bank=None, h=2):
        if num_filters < 1:
            raise ValueError("need at least one filter")
        if not 0 < rho < 1:
            raise ValueError("pooling ratio must lie in (0, 1)")
        self.params = params
        self.name = name
        self.M = num_filters
        self.r = r
        self.rho = rho
        self.quantizer = quantizer if quantizer is not None else Quantizer()
        self.use_labels = use_labels
        self.alphabet = alphabet
        self.bank = bank if bank is not None else SubgraphBank(h)
        self.filters = []
        nn.init_mlp(params, f"{name}.psi", [num_filters, width, width], rng)
        nn.init_affine(params, f"{name}.score", width, 1, rng)

    def init_filters(self, rng, alphabet, min_size=3, max_size=8, p=0.5):
        self.alphabet = alphabet
        self.filters = [random_filter(rng, alphabet, min_size, max_size, p) for _ in range(self.M)]

    def discrete_labels(self, graph, features):
        if self.use_labels:
            if graph.node_labels is None:
                raise StateError("layer reads node labels but the graph has none")
            return np.asarray(graph.node_labels, dtype=np.int64)
        return quantize(self.quantizer, features)

    def responses(self, graphs, features):
        """Kernel responses of every node of every graph: ``(sum |V|, M)`` array and trace."""
        if not self.filters:
            raise StateError("filters are not initialized")
        bank = self.bank
        rows = []
        for g, X in zip(graphs, features):
            labels = self.discrete_labels(g, X)
            for v in range(g.node_count):
                rows.append(bank.subgraph(g, labels, v, self.r))
        fvecs = [bank.filter_vector(f) for f in self.filters]
        ncols = len(bank.columns)
        S, sub_sq = _stack_rows(rows, ncols)
        F = np.zeros((ncols, self.M))
        f_sq = np.empty(self.M)
        for m, (idx, cnt, sq) in enumerate(fvecs):
            F[idx, m] = cnt
            f_sq[m] = sq
        E = np.asarray(S @ F) / np.sqrt(np.outer(sub_sq, f_sq)) if rows else np.zeros((0, self.M))
        return E, LayerTrace(S, sub_sq, None, fvecs)


def kernel_response(layer: HGKNLayer, graph: Graph, node_features=None) -> np.ndarray:
    """Per-node vector of normalized WL kernel values against each filter, shape ``(|V|, M)``."""
    E, _ = layer.responses([graph], [node_features])
    return E


def node_update(layer: HGKNLayer, responses) -> T.Tensor:
    E = T.as_tensor(responses)
    if E.ndim != 2 or E.shape[1] != layer.M:
        raise ShapeError(f"responses need {layer.M} columns, got {E.shape}")
    return nn.mlp(layer.params, f"{layer.name}.psi", E, depth=2)


def pool_size(rho, n):
    return max(1, min(n, math.ceil(rho * n - 1e-9)))


def top_k_index(scores, k):
    """Indices of the ``k`` largest scores (ties to the lower index), returned ascending."""
    order = np.lexsort((np.arange(len(scores)), -np.asarray(scores)))
    return np.sort(order[:k])


def _pool(layer, graphs, X, offsets):
    Z = T.tanh(nn.affine(layer.params, f"{layer.name}.score", X))
    keep, pooled = [], []
    for gi, g in enumerate(graphs):
        lo = offsets[gi]
        idx = top_k_index(Z.data[lo:lo + g.node_count, 0], pool_size(layer.rho, g.node_count))
        keep.append(idx + lo)
        pooled.append(g.induced(idx.tolist()))
    keep = np.concatenate(keep) if keep else np.zeros(0, dtype=np.int64)
    Xp = T.row_scale(T.gather_rows(X, keep), T.gather_rows(Z, keep))
    return pooled, Xp, keep


def attention_pool(layer: HGKNLayer, graph: Graph, X):
    """Keep the top ``ceil(rho |V|)`` nodes by ``tanh`` score; features are scaled by their score."""
    if graph.node_count < 1:
        raise ValueError("cannot pool an empty graph")
    X = T.as_tensor(X)
    pooled, Xp, _ = _pool(layer, [graph], X, [0])
    return pooled[0], Xp


# ------------------------------------------------------------------- encoder

class HGKNEncoder:
    """``K`` kernel layers, then an affine map per surviving node and a sum readout."""

    kind = "hgkn"

    def __init__(self, featurizer, rng, num_filters=15, r=1, rho=0.4, wl_iterations=2,
                 quantizer_k=20, num_layers=2, width=HIDDEN, filter_sizes=(3, 8),
                 literal_accept=False):
        self.featurizer = featurizer
        self.params = T.ParameterSet()
        self.bank = SubgraphBank(wl_iterations)
        self.quantizer_k = quantizer_k
        self.filter_sizes = tuple(filter_sizes)
        self.literal_accept = literal_accept
        self.config = dict(num_filters=num_filters, r=r, rho=rho, wl_iterations=wl_iterations,
                           quantizer_k=quantizer_k, num_layers=num_layers, width=width,
                           filter_sizes=list(filter_sizes))
        self.layers = []
        for k in range(num_layers):
            use_labels = k == 0 and featurizer.label_alphabet > 0
            self.layers.append(HGKNLayer(self.params, f"layer{k}", num_filters, rng, r, rho, width,
                                         use_labels=use_labels, bank=self.bank))
        nn.init_affine(self.params, "final", width, width, rng)
        self.out_dim = width
        self.kernel_calls = 0

    # -- setup

    def prepare(self, graphs, rng):
        """Fit each layer's quantizer on ``graphs`` and draw its filters (done once, then frozen)."""
        lo, hi = self.filter_sizes
        feats = [g.node_attrs for g in graphs]
        current = list(graphs)
        for k, layer in enumerate(self.layers):
            if layer.use_labels:
                alphabet = self.featurizer.label_alphabet
            else:
                rows = np.vstack([f for f in feats if len(f)])
                kk = min(self.quantizer_k, len(np.unique(rows, axis=0)))
                if kk < self.quantizer_k:
                    log.warning("layer %d: only %d distinct rows, using k=%d", k, kk, kk)
                layer.quantizer = fit_quantizer(rows, kk, rng)
                alphabet = kk
            layer.init_filters(rng, alphabet, lo, hi)
            if k + 1 < len(self.layers):
                current, X, _ = self._layer_forward(layer, current, feats)
                cuts = np.cumsum([g.node_count for g in current])[:-1]
                feats = np.split(X.data, cuts)
        return self

    # -- forward

    def _layer_forward(self, layer, graphs, feats):
        self.kernel_calls += 1
        E_np, trace = layer.responses(graphs, feats)
        E = T.Tensor(E_np, requires_grad=True)
        trace.responses = E
        X = node_update(layer, E)
        offsets = np.concatenate([[0], np.cumsum([g.node_count for g in graphs])])
        pooled, Xp, _ = _pool(layer, graphs, X, offsets)
        return pooled, Xp, trace

    def encode_batch(self, graphs, features=None):
        """Graph embeddings ``(len(graphs), width)`` plus per-layer traces for filter updates."""
        if any(g.node_count == 0 for g in graphs):
            raise ValueError("HGKN cannot encode an empty graph")
        feats = [g.node_attrs for g in graphs]
        current = list(graphs)
        traces = []
        Xp = None
        for k, layer in enumerate(self.layers):
            current, Xp, trace = self._layer_forward(layer, current, feats)
            traces.append(trace)
            cuts = np.cumsum([g.node_count for g in current])[:-1]
            feats = np.split(Xp.data, cuts)
        out = nn.affine(self.params, "final", Xp)
        owner = np.concatenate([np.full(g.node_count, i) for i, g in enumerate(current)])
        return T.scatter_add_rows(out, owner, len(graphs)), traces

    def after_step(self, traces, rng):
        """One proposed edit per filter per layer; returns per-layer acceptance lists."""
        return [filter_update_step(layer, tr, rng, self.literal_accept)
                for layer, tr in zip(self.layers, traces)]

    # -- persistence

    def state_dict(self):
        return {
            "kind": self.kind,
            "config": self.config,
            "literal_accept": self.literal_accept,
            "layers": [{
                "use_labels": layer.use_labels,
                "alphabet": layer.alphabet,
                "quantizer": None if not layer.quantizer.fitted else {
                    "k": layer.quantizer.k,
                    "centroids": layer.quantizer.centroids.tolist()},
                "filters": [f.to_json() for f in layer.filters],
            } for layer in self.layers],
        }

    def load_state(self, state):
        for layer, st in zip(self.layers, state["layers"]):
            layer.use_labels = st["use_labels"]
            layer.alphabet = st["alphabet"]
            q = st["quantizer"]
            layer.quantizer = Quantizer() if q is None else Quantizer(np.array(q["centroids"]), q["k"], True)
            layer.filters = [FilterGraph.from_json(f) for f in st["filters"]]


def filter_update_step(layer: HGKNLayer, trace: LayerTrace, rng, literal_accept=False):
    """Propose one edit per filter and keep it iff the estimated loss change is negative.

    ``literal_accept`` flips the rule to "keep iff the estimate is positive".
    """
    E = trace.responses
    dL = E.grad if E is not None and E.grad is not None else np.zeros(E.shape)
    ncols = trace.S.shape[1]
    accepted = []
    for m, filt in enumerate(layer.filters):
        cand = propose_filter_edit(filt, rng)
        new_vals = _kernel_against(trace.S, trace.sub_sq, layer.bank.filter_vector(cand), ncols)
        delta = estimate_filter_gradient(dL[:, m], E.data[:, m], new_vals)
        ok = delta > 0 if literal_accept else delta < 0
        if ok:
            layer.filters[m] = cand
        accepted.append(bool(ok))
    return accepted


def encode_graph_hgkn(encoder: HGKNEncoder, graph: Graph) -> np.ndarray:
    z, _ = encoder.encode_batch([graph])
    return z.data[0].copy()
