import csv
import json
import time
from pathlib import Path

import numpy as np
import pytest

from cocograph import hgkn, toy
from cocograph.errors import BatchError, ConfigError, TrainDiverged
from cocograph.graph import Dataset, DomainPair, Graph, split_by_edge_density
from cocograph.trainer import (ABLATIONS, Model, TrainConfig, checkpoint_dict, evaluate,
                               load_checkpoint, predict, predict_proba, pseudo_label_accuracy,
                               save_checkpoint, train, write_history_csv)

GOLDEN = json.loads((Path(__file__).parent / "golden" / "vectors.json").read_text())
SMALL = dict(batch_size=4, M=4, quantizer_k=3, quantizer_sample=4)


@pytest.fixture
def mini_pair(mini8):
    a, b = split_by_edge_density(mini8, 2)
    return DomainPair(a, b)


# -------------------------------------------------------------- config

def test_defaults_match_reported_hyperparameters():
    c = TrainConfig()
    assert (c.batch_size, c.lr, c.tau, c.rho, c.M, c.hidden) == (64, 1e-4, 0.5, 0.4, 15, 64)


def test_config_rejects_unknown_and_invalid():
    with pytest.raises(ConfigError, match="bogus"):
        TrainConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        TrainConfig(ablation="nope")
    with pytest.raises(ConfigError):
        TrainConfig(rho=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(lr=0)


def test_config_digest_stable():
    assert TrainConfig().digest() == TrainConfig.from_dict(TrainConfig().to_dict()).digest()
    assert TrainConfig(seed=1).digest() != TrainConfig().digest()


# -------------------------------------------------------------- training

def test_zero_epochs(mini_pair):
    m1, h = train(TrainConfig(epochs=0, **SMALL), mini_pair)
    m2, _ = train(TrainConfig(epochs=0, **SMALL), mini_pair)
    assert h.reports == [] and h.epochs_run == 0
    for k in m1.params:
        assert np.array_equal(m1.params[k].data, m2.params[k].data)


def test_two_runs_bitwise_identical(mini_pair):
    cfg = TrainConfig(epochs=3, seed=5, **SMALL)
    docs = [json.dumps(checkpoint_dict(train(cfg, mini_pair)[0]), sort_keys=True) for _ in range(2)]
    assert docs[0] == docs[1]


def test_history_totals_are_sums_and_lengths(mini_pair):
    cfg = TrainConfig(epochs=3, **SMALL)
    _, h = train(cfg, mini_pair)
    steps = 3 * int(np.ceil(len(mini_pair.source) / 4))
    assert len(h.reports) == steps == len(h.pseudo_accuracy) == len(h.filter_acceptance)
    assert len(h.epoch_accuracy) == len(h.epoch_seconds) == 3
    for r in h.reports:
        assert abs(r.total - (r.l_cb + r.l_cd + r.l_s)) <= 1e-12 * max(1.0, r.total)
        assert r.l_cb >= 0 and r.l_cd >= 0 and r.l_s >= 0


def test_golden_loss_and_prediction(mini8, mini_pair):
    cfg = TrainConfig.from_dict(GOLDEN["train_config"])
    model, h = train(cfg, mini_pair)
    np.testing.assert_allclose([r.total for r in h.reports], GOLDEN["loss_history"], rtol=0, atol=1e-12)
    np.testing.assert_allclose(predict_proba(model, mini8.graphs), GOLDEN["predict_mini8"], rtol=0, atol=1e-12)


@pytest.mark.parametrize("ablation", ABLATIONS)
def test_every_ablation_runs(mini_pair, ablation):
    model, h = train(TrainConfig(epochs=1, ablation=ablation, **SMALL), mini_pair)
    kinds = [e.kind for e in model.encoders]
    want = {"full": ["gin", "hgkn"], "no_cb": ["gin", "hgkn"], "no_cd": ["gin", "hgkn"],
            "source_only": ["gin"], "gin_gin": ["gin", "gin"], "hgkn_hgkn": ["hgkn", "hgkn"]}
    assert kinds == want[ablation]
    for r in h.reports:
        if ablation == "no_cb":
            assert r.l_cb == 0
        if ablation in ("no_cd", "source_only"):
            assert r.l_cd == 0
        if ablation == "source_only":
            assert r.l_cb == 0


def test_source_only_never_touches_kernels(mini_pair, monkeypatch):
    calls = []
    real = hgkn.HGKNLayer.responses
    monkeypatch.setattr(hgkn.HGKNLayer, "responses", lambda self, *a: calls.append(1) or real(self, *a))
    train(TrainConfig(epochs=2, ablation="source_only", **SMALL), mini_pair)
    assert calls == []
    train(TrainConfig(epochs=1, ablation="full", **SMALL), mini_pair)
    assert calls


def test_divergence_reports_step():
    g = lambda y: Graph.from_edges(2, [(0, 1)], node_attrs=[[1e308, 1e308], [1e308, 1e308]], class_label=y)  # noqa: E731
    ds = Dataset((g(0), g(1)), 2)
    with pytest.raises(TrainDiverged) as info:
        train(TrainConfig(epochs=1, batch_size=2, ablation="source_only"), DomainPair(ds, ds))
    assert info.value.step == 0


def test_empty_target_rejected(mini8):
    empty = Dataset((), 2)
    with pytest.raises(BatchError):
        train(TrainConfig(epochs=1, **SMALL), DomainPair(mini8, empty))


def test_toy_loss_decreases_over_50_epochs():
    data = toy.toy_domain_pair(7)
    _, h = train(TrainConfig(epochs=50, seed=7), data)
    assert h.epoch_loss[-1] < h.epoch_loss[0]


def test_step_time_scales_linearly(mini8):
    """Doubling the nodes per batch at fixed width and depth costs at most 2.5x."""
    rng = np.random.default_rng(0)

    def dataset(n_nodes):
        gs = []
        for i in range(32):
            edges = [(v, v + 1) for v in range(n_nodes - 1)] + [(0, n_nodes - 1)]
            gs.append(Graph.from_edges(n_nodes, edges, node_attrs=rng.standard_normal((n_nodes, 2)),
                                       class_label=i % 2))
        return Dataset(tuple(gs), 2)

    def step_time(n_nodes):
        ds = dataset(n_nodes)
        cfg = TrainConfig(epochs=1, batch_size=32, M=4, quantizer_k=5, patience=None)
        best = float("inf")
        for _ in range(3):
            _, h = train(cfg, DomainPair(ds, ds))
            best = min(best, h.epoch_seconds[0])
        return best

    step_time(10)  # warm-up
    assert step_time(40) / step_time(20) <= 2.5


# -------------------------------------------------------------- inference

def test_predict_is_distribution_and_isomorphism_invariant(mini8, mini_pair):
    model, _ = train(TrainConfig(epochs=1, **SMALL), mini_pair)
    for g in mini8.graphs:
        p = predict(model, g)
        assert p.shape == (2,) and (p >= 0).all() and abs(p.sum() - 1) <= 1e-9
        perm = np.random.default_rng(0).permutation(g.node_count)
        np.testing.assert_allclose(predict(model, g.permuted(perm)), p, atol=1e-12)


def test_evaluate_ties_to_lowest_class(mini8, mini_pair):
    model, _ = train(TrainConfig(epochs=0, **SMALL), mini_pair)
    model.classifier["cls.weight"].data[:] = 0.0
    model.classifier["cls.bias"].data[:] = 0.0
    assert evaluate(model, mini8) == pytest.approx(np.mean(mini8.labels == 0))


def _embedding_model(mini_pair, fn):
    model, _ = train(TrainConfig(epochs=0, **SMALL), mini_pair)
    model.embed = fn
    return model


def test_pseudo_accuracy_perfect_separation(mini_pair):
    labels = {id(g): y for g, y in zip(mini_pair.source.graphs, mini_pair.source.labels)}
    labels.update({id(g): y for g, y in zip(mini_pair.target.graphs, mini_pair.target_labels)})
    model = _embedding_model(mini_pair, lambda gs, branch="a": np.eye(2)[[labels[id(g)] for g in gs]])
    assert pseudo_label_accuracy(model, mini_pair) == 1.0


def test_pseudo_accuracy_random_embeddings_near_half():
    rng = np.random.default_rng(0)
    gs = lambda n: tuple(Graph.from_edges(1, [], node_labels=[0], class_label=i % 2) for i in range(n))  # noqa: E731
    pair = DomainPair(Dataset(gs(40), 2), Dataset(gs(40), 2))
    accs = []
    for seed in range(20):
        r = np.random.default_rng(seed)
        model = _embedding_model(pair, lambda g, branch="a", r=r: r.standard_normal((len(g), 8)))
        accs.append(pseudo_label_accuracy(model, pair))
    assert abs(np.mean(accs) - 0.5) <= 0.1
    assert rng is not None


def test_pseudo_accuracy_empty_target(mini8, mini_pair):
    model, _ = train(TrainConfig(epochs=0, **SMALL), mini_pair)
    with pytest.raises(BatchError):
        pseudo_label_accuracy(model, DomainPair(mini8, Dataset((), 2)))


# -------------------------------------------------------------- persistence

@pytest.mark.parametrize("ablation", ["full", "hgkn_hgkn"])
def test_checkpoint_round_trip(tmp_path, mini8, mini_pair, ablation):
    model, _ = train(TrainConfig(epochs=2, ablation=ablation, **SMALL), mini_pair)
    save_checkpoint(model, tmp_path / "c.json")
    back = load_checkpoint(tmp_path / "c.json")
    for branch in ("a", "b"):
        np.testing.assert_allclose(back.embed(list(mini8.graphs), branch),
                                   model.embed(list(mini8.graphs), branch), rtol=0, atol=1e-12)
    assert json.dumps(checkpoint_dict(back), sort_keys=True) == json.dumps(checkpoint_dict(model), sort_keys=True)


def test_history_csv(tmp_path, mini_pair):
    _, h = train(TrainConfig(epochs=2, **SMALL), mini_pair)
    write_history_csv(h, tmp_path / "h.csv")
    rows = list(csv.reader(open(tmp_path / "h.csv")))
    assert rows[0] == ["step", "l_cb", "l_cd", "l_s", "total", "target_pseudo_accuracy"]
    assert len(rows) == 1 + len(h.reports)


def test_model_uses_branch_a_for_classifier(mini_pair):
    model = Model(TrainConfig(**SMALL), __import__("cocograph").gin.Featurizer(3, 2), 2)
    assert model.classifier["cls.weight"].shape == (model.branch_a.out_dim, 2)
    assert model.branch_a.kind == "gin"
    assert time is not None
