"""Message-passing branch: a GIN encoder with sum readout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .errors import ShapeError

HIDDEN = 64


@dataclass
class Packed:
    """Several graphs merged into one block-diagonal graph.

    ``src``/``dst`` list every undirected edge in both directions; ``graph_of``
    maps each node row to its graph position.
    """

    node_count: int
    src: np.ndarray
    dst: np.ndarray
    graph_of: np.ndarray
    num_graphs: int
    offsets: np.ndarray


def pack(graphs) -> Packed:
    src, dst, owner, offsets = [], [], [], []
    base = 0
    for gi, g in enumerate(graphs):
        offsets.append(base)
        if g.edges:
            e = np.asarray(g.edges, dtype=np.int64) + base
            src.append(e[:, 0])
            dst.append(e[:, 1])
        owner.append(np.full(g.node_count, gi, dtype=np.int64))
        base += g.node_count
    s = np.concatenate(src) if src else np.zeros(0, dtype=np.int64)
    d = np.concatenate(dst) if dst else np.zeros(0, dtype=np.int64)
    return Packed(
        node_count=base,
        src=np.concatenate([s, d]),
        dst=np.concatenate([d, s]),
        graph_of=np.concatenate(owner) if owner else np.zeros(0, dtype=np.int64),
        num_graphs=len(graphs),
        offsets=np.asarray(offsets + [base], dtype=np.int64),
    )


class Featurizer:
    """Node input features: one-hot node labels, raw attributes, or both side by side.

    Labels outside the alphabet seen at construction map to an all-zero one-hot.
    """

    def __init__(self, label_alphabet=0, attr_dim=0):
        if label_alphabet <= 0 and attr_dim <= 0:
            raise ValueError("need node labels or attributes")
        self.label_alphabet = int(label_alphabet)
        self.attr_dim = int(attr_dim)

    @classmethod
    def for_datasets(cls, *datasets):
        datasets = [d for d in datasets if len(d)] or list(datasets)
        alphabet = max(d.label_alphabet() for d in datasets)
        dims = {d.attr_dim for d in datasets}
        if len(dims) > 1:
            raise ValueError("attribute dimensions differ between datasets")
        return cls(alphabet, dims.pop())

    @property
    def dim(self):
        return self.label_alphabet + self.attr_dim

    def __call__(self, graph) -> np.ndarray:
        parts = []
        if self.label_alphabet:
            onehot = np.zeros((graph.node_count, self.label_alphabet))
            if graph.node_labels is None:
                raise ShapeError("graph lacks node labels")
            for v, lab in enumerate(graph.node_labels):
                if lab < self.label_alphabet:
                    onehot[v, lab] = 1.0
            parts.append(onehot)
        if self.attr_dim:
            if graph.node_attrs is None or graph.node_attrs.shape[1] != self.attr_dim:
                raise ShapeError(f"graph needs {self.attr_dim}-dimensional node attributes")
            parts.append(graph.node_attrs)
        return np.hstack(parts) if len(parts) > 1 else np.array(parts[0])

    def to_json(self):
        return {"label_alphabet": self.label_alphabet, "attr_dim": self.attr_dim}


class GINLayer:
    """``MLP((1 + eps) * h_v + sum_{u in N(v)} h_u)`` with a two-affine MLP; eps is fixed."""

    def __init__(self, params, name, d_in, rng, width=HIDDEN, eps=0.0):
        self.params = params
        self.name = name
        self.d_in = d_in
        self.eps = float(eps)
        nn.init_mlp(params, name, [d_in, width, width], rng)


def aggregate(packed, H: T.Tensor, eps=0.0) -> T.Tensor:
    """``(1 + eps) * H + A @ H`` for the packed adjacency ``A``."""
    if H.shape[0] != packed.node_count:
        raise ShapeError(f"{H.shape[0]} feature rows for {packed.node_count} nodes")
    nbr = T.scatter_add_rows(T.gather_rows(H, packed.src), packed.dst, packed.node_count)
    own = H if eps == 0.0 else T.scale(H, 1.0 + eps)
    return T.add(own, nbr)


def gin_layer_forward(graph, H, layer: GINLayer) -> T.Tensor:
    packed = graph if isinstance(graph, Packed) else pack([graph])
    H = T.as_tensor(H)
    if H.ndim != 2 or H.shape[1] != layer.d_in:
        raise ShapeError(f"layer expects {layer.d_in} input columns, got {H.shape}")
    return nn.mlp(layer.params, layer.name, aggregate(packed, H, layer.eps), depth=2)


class GCNEncoder:
    """Stack of GIN layers (ReLU between layers) followed by a sum readout."""

    kind = "gin"

    def __init__(self, featurizer: Featurizer, rng, num_layers=2, width=HIDDEN):
        if num_layers < 1:
            raise ValueError("need at least one layer")
        self.featurizer = featurizer
        self.params = T.ParameterSet()
        self.layers = []
        d = featurizer.dim
        for i in range(num_layers):
            self.layers.append(GINLayer(self.params, f"layer{i}", d, rng, width))
            d = width
        self.out_dim = width

    def node_embeddings(self, packed, X):
        H = T.as_tensor(X)
        for i, layer in enumerate(self.layers):
            H = gin_layer_forward(packed, H, layer)
            if i < len(self.layers) - 1:
                H = T.relu(H)
        return H

    def encode_batch(self, graphs, features=None):
        """Graph embeddings (one row per graph) and an empty trace."""
        packed = pack(graphs)
        if features is None:
            features = [self.featurizer(g) for g in graphs]
        X = np.vstack(features) if features else np.zeros((0, self.featurizer.dim))
        H = self.node_embeddings(packed, X)
        return T.scatter_add_rows(H, packed.graph_of, packed.num_graphs), None

    def after_step(self, trace, rng):
        return []

    def state_dict(self):
        return {"kind": self.kind, "num_layers": len(self.layers), "width": self.out_dim}

    def load_state(self, state):
        pass


def encode_graph(encoder: GCNEncoder, graph) -> np.ndarray:
    z, _ = encoder.encode_batch([graph])
    return z.data[0].copy()
