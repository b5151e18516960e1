import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cocograph import oracles
from cocograph.errors import ParseError, SampleError, SplitError
from cocograph.graph import (Dataset, DomainPair, Graph, disjoint_union, parse_tudataset,
                             r_hop_nodes, r_hop_subgraph, sample_batch, split_by_edge_density,
                             write_tudataset)

from conftest import cycle_graph, path_graph


@st.composite
def graphs(draw, max_nodes=12, labels=True):
    n = draw(st.integers(1, max_nodes))
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    edges = draw(st.lists(st.sampled_from(pairs), unique=True)) if pairs else []
    node_labels = draw(st.lists(st.integers(0, 3), min_size=n, max_size=n)) if labels else None
    return Graph.from_edges(n, edges, node_labels=node_labels)


def write_files(tmp_path, prefix, files):
    for suffix, text in files.items():
        (tmp_path / f"{prefix}_{suffix}.txt").write_text(text)


# ---------------------------------------------------------------- Graph

def test_graph_rejects_bad_edges():
    with pytest.raises(ValueError):
        Graph(3, ((0, 3),), node_labels=(0, 0, 0))
    with pytest.raises(ValueError):
        Graph(3, ((1, 1),), node_labels=(0, 0, 0))
    with pytest.raises(ValueError):
        Graph(3, ((0, 1), (0, 1)), node_labels=(0, 0, 0))


def test_from_edges_collapses_and_counts_self_loops():
    stats = {}
    g = Graph.from_edges(3, [(0, 1), (1, 0), (2, 2), (1, 2)], node_labels=[0, 0, 0], stats=stats)
    assert g.edges == ((0, 1), (1, 2))
    assert stats["self_loops"] == 1


def test_density_modes():
    g = cycle_graph(4, node_labels=[0] * 4)
    assert g.density() == 2.0
    assert g.density("fraction") == pytest.approx(4 / 6)


def test_disjoint_union_offsets():
    g = disjoint_union(path_graph(2, node_labels=[0, 1]), path_graph(3, node_labels=[2, 2, 2]))
    assert g.node_count == 5
    assert g.edges == ((0, 1), (2, 3), (3, 4))


# -------------------------------------------------------------- parsing

def test_fixture2_counts(fixture2):
    assert fixture2.num_classes == 2
    assert [(g.node_count, g.num_edges) for g in fixture2.graphs] == [(3, 3), (3, 2)]
    assert list(fixture2.labels) == [0, 1]
    assert all(g.node_labels == (0, 0, 0) for g in fixture2.graphs)


def test_mini8_has_labels_and_attrs(mini8):
    assert len(mini8) == 8
    assert mini8.has_node_labels and mini8.attr_dim == 2


def test_empty_edge_file_gives_edgeless_graph(tmp_path):
    write_files(tmp_path, "E", {"A": "", "graph_indicator": "1\n1\n", "graph_labels": "0\n"})
    ds = parse_tudataset(tmp_path, "E")
    assert len(ds) == 1 and ds[0].node_count == 2 and ds[0].edges == ()


def test_both_directions_collapse(tmp_path):
    write_files(tmp_path, "D", {"A": "1, 2\n2, 1\n", "graph_indicator": "1\n1\n", "graph_labels": "1\n"})
    assert parse_tudataset(tmp_path, "D")[0].edges == ((0, 1),)


def test_labels_remapped_to_contiguous(tmp_path):
    write_files(tmp_path, "R", {"A": "", "graph_indicator": "1\n2\n3\n", "graph_labels": "-1\n1\n-1\n"})
    ds = parse_tudataset(tmp_path, "R")
    assert ds.num_classes == 2 and list(ds.labels) == [0, 1, 0]


def test_missing_mandatory_file(tmp_path):
    write_files(tmp_path, "M", {"A": "", "graph_indicator": "1\n"})
    with pytest.raises(ParseError, match="graph_labels"):
        parse_tudataset(tmp_path, "M")


def test_edge_across_graphs(tmp_path):
    write_files(tmp_path, "X", {"A": "1, 2\n", "graph_indicator": "1\n2\n", "graph_labels": "0\n1\n"})
    with pytest.raises(ParseError):
        parse_tudataset(tmp_path, "X")


def test_ragged_attributes(tmp_path):
    write_files(tmp_path, "G", {"A": "", "graph_indicator": "1\n1\n", "graph_labels": "0\n",
                                "node_attributes": "1.0, 2.0\n3.0\n"})
    with pytest.raises(ParseError, match="ragged"):
        parse_tudataset(tmp_path, "G")


def test_write_parse_round_trip(tmp_path, mini8):
    write_tudataset(mini8, tmp_path, "RT")
    again = parse_tudataset(tmp_path, "RT")
    assert again.graphs == mini8.graphs


@settings(max_examples=40, deadline=None)
@given(st.lists(graphs(), min_size=1, max_size=5))
def test_reserialized_graphs_are_valid(tmp_path_factory, gs):
    gs = [Graph.from_edges(g.node_count, g.edges, node_labels=g.node_labels, class_label=i % 2)
          for i, g in enumerate(gs)]
    ds = Dataset(tuple(gs), 2)
    d = tmp_path_factory.mktemp("rs")
    write_tudataset(ds, d, "P")
    again = parse_tudataset(d, "P", num_classes=2)
    for g in again.graphs:
        assert all(u < v < g.node_count for u, v in g.edges)
        assert len(set(g.edges)) == len(g.edges)
    assert again.graphs == ds.graphs


# -------------------------------------------------------------- splitting

def test_split_sorted_equal_chunks():
    # average degrees: a graph with n nodes and e edges has 2e/n
    gs = []
    for deg in [8, 3, 1, 6, 2, 7, 5, 4]:
        n = 10
        pairs = [(u, v) for u in range(n) for v in range(u + 1, n)][: deg * n // 2]
        gs.append(Graph.from_edges(n, pairs, node_labels=[0] * n, class_label=deg % 2))
    parts = split_by_edge_density(Dataset(tuple(gs), 2), 4)
    assert [len(p) for p in parts] == [2, 2, 2, 2]
    assert [[g.density() for g in p.graphs] for p in parts] == [[1, 2], [3, 4], [5, 6], [7, 8]]


def test_split_remainder_goes_first():
    gs = tuple(Graph.from_edges(1, [], node_labels=[0], class_label=i % 2) for i in range(4337))
    assert [len(p) for p in split_by_edge_density(Dataset(gs, 2), 4)] == [1085, 1084, 1084, 1084]


def test_split_ties_keep_original_order():
    a = path_graph(3, node_labels=[0, 0, 0], class_label=0)
    b = path_graph(3, node_labels=[1, 1, 1], class_label=1)
    parts = split_by_edge_density(Dataset((a, b), 2), 2)
    assert parts[0][0] == a and parts[1][0] == b


def test_split_errors(mini8):
    with pytest.raises(SplitError):
        split_by_edge_density(mini8, 9)
    with pytest.raises(SplitError):
        split_by_edge_density(mini8, 0)


@settings(max_examples=40, deadline=None)
@given(st.lists(graphs(max_nodes=7), min_size=1, max_size=12), st.integers(1, 12))
def test_split_is_partition(gs, parts):
    gs = tuple(Graph.from_edges(g.node_count, g.edges, node_labels=g.node_labels, class_label=i % 2)
               for i, g in enumerate(gs))
    ds = Dataset(gs, 2)
    if parts > len(gs):
        with pytest.raises(SplitError):
            split_by_edge_density(ds, parts)
        return
    out = split_by_edge_density(ds, parts)
    flat = [g for p in out for g in p.graphs]
    assert sorted(map(id, flat)) == sorted(map(id, gs))
    sizes = [len(p) for p in out]
    assert max(sizes) - min(sizes) <= 1 and sizes == sorted(sizes, reverse=True)
    dens = [g.density() for g in flat]
    assert dens == sorted(dens)


# ------------------------------------------------------------ r-hop

def test_r_hop_examples():
    p = path_graph(3, node_labels=[0, 1, 2])
    sub = r_hop_subgraph(p, 0, 1)
    assert sub.node_count == 2 and sub.edges == ((0, 1),) and sub.node_labels == (0, 1)
    assert r_hop_subgraph(p, 1, 0).node_count == 1
    c = cycle_graph(4, node_labels=[0] * 4)
    full = r_hop_subgraph(c, 0, 2)
    assert (full.node_count, full.num_edges) == (4, 4)


def test_r_hop_center_first():
    p = path_graph(4, node_labels=[0, 1, 2, 3])
    assert r_hop_nodes(p, 2, 1) == [2, 1, 3]
    assert r_hop_subgraph(p, 2, 1).node_labels == (2, 1, 3)


@settings(max_examples=60, deadline=None)
@given(graphs(), st.data())
def test_r_hop_matches_bfs_and_is_monotone(g, data):
    v = data.draw(st.integers(0, g.node_count - 1))
    prev = set()
    for r in range(4):
        nodes = set(r_hop_nodes(g, v, r))
        assert nodes == oracles.bfs_within(g, v, r)
        assert prev <= nodes
        prev = nodes


# ------------------------------------------------------------ sampling

def test_sample_full_is_permutation(mini8):
    b = sample_batch(mini8, 8, np.random.default_rng(0))
    assert sorted(b.graph_indices) == list(range(8))


def test_sample_deterministic(mini8):
    a = sample_batch(mini8, 5, np.random.default_rng(3))
    b = sample_batch(mini8, 5, np.random.default_rng(3))
    assert a == b and len(set(a.graph_indices)) == 5


def test_sample_too_large(mini8):
    with pytest.raises(SampleError):
        sample_batch(mini8, 9, np.random.default_rng(0))


def test_default_batch_size():
    from cocograph.trainer import TrainConfig
    assert TrainConfig().batch_size == 64


# ---------------------------------------------------------- DomainPair

def test_domain_pair_strips_target_labels(fixture2):
    pair = DomainPair(fixture2, fixture2)
    assert all(g.class_label is None for g in pair.target.graphs)
    assert list(pair.target_labels) == [0, 1]
    assert pair.labeled_target().graphs == fixture2.graphs


def test_domain_pair_class_mismatch(fixture2):
    other = Dataset(fixture2.graphs, 3)
    with pytest.raises(ValueError):
        DomainPair(fixture2, other)
