"""Joint training of the two branches, prediction, evaluation and checkpoints."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import losses as L
from . import nn
from . import tensor as T
from .errors import BatchError, ConfigError, DomainError, TrainDiverged
from .gin import Featurizer, GCNEncoder
from .graph import SOURCE, TARGET, Dataset, DomainPair, sample_batch
from .hgkn import HGKNEncoder

log = logging.getLogger(__name__)

ABLATIONS = ("full", "no_cb", "no_cd", "source_only", "gin_gin", "hgkn_hgkn")
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-4
    tau: float = 0.5
    rho: float = 0.4
    M: int = 15
    r: int = 1
    wl_iterations: int = 2
    quantizer_k: int = 20
    seed: int = 0
    ablation: str = "full"
    negative_pool_mode: str = L.UNION
    hidden: int = 64
    gin_layers: int = 2
    hgkn_layers: int = 2
    filter_min_size: int = 3
    filter_max_size: int = 8
    quantizer_sample: int = 200
    pseudo_label_threshold: float | None = None
    paper_literal_accept: bool = False
    patience: int | None = 20
    min_delta: float = 1e-5

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.negative_pool_mode not in (L.UNION, L.TARGET_ONLY):
            raise ConfigError(f"unknown negative_pool_mode {self.negative_pool_mode!r}")
        positive = ("batch_size", "lr", "tau", "M", "quantizer_k", "hidden", "gin_layers",
                    "hgkn_layers", "filter_min_size", "quantizer_sample")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("epochs", "r", "wl_iterations", "seed"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0 < self.rho < 1:
            raise ConfigError("rho must lie in (0, 1)")
        if self.filter_max_size < self.filter_min_size:
            raise ConfigError("filter_max_size < filter_min_size")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self):
        return asdict(self)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def contrastive(self):
        return L.ContrastiveConfig(self.tau, self.negative_pool_mode, self.pseudo_label_threshold)


def _rngs(seed):
    names = ("init", "batch", "filters", "quantizer")
    seqs = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.Generator(np.random.PCG64(s)) for n, s in zip(names, seqs)}


class Model:
    """Branch ``a`` (feeds the classifier), optional branch ``b``, and a linear classifier."""

    def __init__(self, config: TrainConfig, featurizer: Featurizer, num_classes: int, rng=None):
        self.config = config
        self.featurizer = featurizer
        self.num_classes = num_classes
        rng = _rngs(config.seed)["init"] if rng is None else rng
        kind_a, kind_b = {
            "full": ("gin", "hgkn"), "no_cb": ("gin", "hgkn"), "no_cd": ("gin", "hgkn"),
            "source_only": ("gin", None), "gin_gin": ("gin", "gin"), "hgkn_hgkn": ("hgkn", "hgkn"),
        }[config.ablation]
        self.branch_a = self._encoder(kind_a, rng)
        self.branch_b = self._encoder(kind_b, rng) if kind_b else None
        self.classifier = T.ParameterSet()
        nn.init_affine(self.classifier, "cls", self.branch_a.out_dim, num_classes, rng)
        self.params = T.ParameterSet()
        self.params.update_from(self.branch_a.params, "a.")
        if self.branch_b is not None:
            self.params.update_from(self.branch_b.params, "b.")
        self.params.update_from(self.classifier)

    def _encoder(self, kind, rng):
        c = self.config
        if kind == "gin":
            return GCNEncoder(self.featurizer, rng, c.gin_layers, c.hidden)
        return HGKNEncoder(self.featurizer, rng, c.M, c.r, c.rho, c.wl_iterations, c.quantizer_k,
                           c.hgkn_layers, c.hidden, (c.filter_min_size, c.filter_max_size),
                           c.paper_literal_accept)

    @property
    def encoders(self):
        return [e for e in (self.branch_a, self.branch_b) if e is not None]

    def prepare(self, graphs, rng):
        for enc in self.encoders:
            if isinstance(enc, HGKNEncoder):
                enc.prepare(graphs, rng)

    def logits(self, z):
        return nn.affine(self.classifier, "cls", z)

    def embed(self, graphs, branch="a"):
        enc = self.branch_a if branch == "a" else self.branch_b
        out = []
        for lo in range(0, len(graphs), 256):
            z, _ = enc.encode_batch(graphs[lo:lo + 256])
            out.append(z.data)
        return np.vstack(out) if out else np.zeros((0, enc.out_dim))


@dataclass
class TrainHistory:
    reports: list = field(default_factory=list)
    pseudo_accuracy: list = field(default_factory=list)
    epoch_accuracy: list = field(default_factory=list)
    epoch_loss: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    filter_acceptance: list = field(default_factory=list)
    epochs_run: int = 0
    stopped_early: bool = False


# ------------------------------------------------------------------ training

def _normalize(z):
    return T.row_l2_normalize(z)


def _step(model: Model, src_graphs, src_y, tgt_graphs, src_feats, tgt_feats, cfg: TrainConfig):
    """Forward pass for one source/target batch pair: total loss tensor, report, traces, pseudo-labels."""
    ccfg = cfg.contrastive
    C = model.num_classes
    ns = len(src_graphs)
    zero = T.Tensor(0.0)
    if model.branch_b is None:
        za, _ = model.branch_a.encode_batch(src_graphs, src_feats)
        l_s = L.supervised_loss(model.logits(za), src_y)
        return l_s, L.total_loss(0.0, 0.0, l_s), [], None

    graphs = list(src_graphs) + list(tgt_graphs)
    feats = None if src_feats is None else list(src_feats) + list(tgt_feats)
    za, trace_a = model.branch_a.encode_batch(graphs, feats if model.branch_a.kind == "gin" else None)
    zb, trace_b = model.branch_b.encode_batch(graphs, feats if model.branch_b.kind == "gin" else None)
    za_src = T.gather_rows(za, np.arange(ns))
    l_s = L.supervised_loss(model.logits(za_src), src_y)
    na, nb = _normalize(za), _normalize(zb)

    l_cb = zero
    if cfg.ablation != "no_cb":
        l_cb = L.cross_branch_loss(na, nb, ccfg, num_source=ns)

    l_cd = zero
    parts = {}
    pseudo = None
    if cfg.ablation != "no_cd":
        src_idx, tgt_idx = np.arange(ns), np.arange(ns, len(graphs))
        for tag, nz in (("a", na), ("b", nb)):
            zs, zt = T.gather_rows(nz, src_idx), T.gather_rows(nz, tgt_idx)
            yhat, conf = L.pseudo_labels(zt.data, zs.data, src_y, C, ccfg)
            keep = None if ccfg.confidence_threshold is None else conf >= ccfg.confidence_threshold
            term = L.cross_domain_loss(zt, yhat, zs, src_y, ccfg, keep)
            parts[tag] = float(term.data)
            l_cd = T.add(l_cd, term)
            if tag == "a":
                pseudo = yhat
    total = T.add(T.add(l_cb, l_cd), l_s)
    traces = [(model.branch_a, trace_a), (model.branch_b, trace_b)]
    return total, L.total_loss(l_cb, l_cd, l_s, parts), traces, pseudo


def train(config: TrainConfig, data: DomainPair, log_every=0):
    """Run the joint training loop; returns the trained :class:`Model` and its history."""
    src, tgt = data.source.graphs, data.target.graphs
    if config.ablation != "source_only" and len(tgt) == 0:
        raise BatchError("target domain is empty")
    rngs = _rngs(config.seed)
    featurizer = Featurizer.for_datasets(data.source, data.target)
    model = Model(config, featurizer, data.num_classes, rngs["init"])
    history = TrainHistory()

    sample = _quantizer_sample(src, tgt, config.quantizer_sample, rngs["quantizer"])
    model.prepare(sample, rngs["quantizer"])
    if config.epochs == 0:
        return model, history

    src_feats = [featurizer(g) for g in src]
    tgt_feats = [featurizer(g) for g in tgt]
    src_y = data.source.labels
    steps_per_epoch = math.ceil(len(src) / config.batch_size)
    bs_s, bs_t = min(config.batch_size, len(src)), min(config.batch_size, max(len(tgt), 1))
    opt = T.AdamState(lr=config.lr)
    best, stale, step = math.inf, 0, 0
    labeled_target = data.labeled_target() if data.target_labels is not None else None

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        totals = []
        for _ in range(steps_per_epoch):
            bs = sample_batch(data.source, bs_s, rngs["batch"], SOURCE).graph_indices
            if config.ablation == "source_only":
                bt = ()
            else:
                bt = sample_batch(data.target, bs_t, rngs["batch"], TARGET).graph_indices
            model.params.zero_grad()
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    total, report, traces, pseudo = _step(
                        model, [src[i] for i in bs], src_y[list(bs)], [tgt[j] for j in bt],
                        [src_feats[i] for i in bs], [tgt_feats[j] for j in bt], config)
            except DomainError as exc:
                raise TrainDiverged(step, str(exc)) from exc
            if not math.isfinite(report.total):
                raise TrainDiverged(step)
            T.backward(total)
            with np.errstate(over="ignore", invalid="ignore"):
                T.adam_step(model.params, opt)
            if not all(np.isfinite(p.data).all() for p in model.params.values()):
                raise TrainDiverged(step, "non-finite parameters after update")
            accepted = []
            for enc, trace in traces:
                accepted.extend(enc.after_step(trace, rngs["filters"]))
            history.filter_acceptance.append(accepted)
            history.reports.append(report)
            if pseudo is not None and data.target_labels is not None:
                history.pseudo_accuracy.append(float(np.mean(pseudo == data.target_labels[list(bt)])))
            else:
                history.pseudo_accuracy.append(None)
            totals.append(report.total)
            step += 1
        history.epoch_seconds.append(time.perf_counter() - t0)
        history.epoch_loss.append(float(np.mean(totals)))
        if labeled_target is not None:
            history.epoch_accuracy.append(evaluate(model, labeled_target))
        history.epochs_run = epoch + 1
        if log_every and (epoch + 1) % log_every == 0:
            acc = history.epoch_accuracy[-1] if history.epoch_accuracy else float("nan")
            log.info("epoch %d loss %.4f target acc %.3f", epoch + 1, history.epoch_loss[-1], acc)
        if history.epoch_loss[-1] < best - config.min_delta:
            best, stale = history.epoch_loss[-1], 0
        else:
            stale += 1
            if config.patience is not None and stale >= config.patience:
                history.stopped_early = True
                break
    return model, history


def _quantizer_sample(src, tgt, limit, rng):
    pick = lambda gs: [gs[i] for i in sorted(rng.choice(len(gs), min(limit, len(gs)), replace=False))]  # noqa: E731
    return (pick(src) if src else []) + (pick(tgt) if tgt else [])


# --------------------------------------------------------------- inference

def predict_proba(model: Model, graphs) -> np.ndarray:
    z = model.embed(list(graphs), "a")
    logits = model.logits(T.Tensor(z)).data
    logits = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True)


def predict(model: Model, graph) -> np.ndarray:
    """Class distribution from the classifier on branch ``a``."""
    return predict_proba(model, [graph])[0]


def evaluate(model: Model, dataset: Dataset) -> float:
    y = dataset.labels
    if len(y) == 0 or (y < 0).any():
        raise ValueError("evaluation needs a non-empty, fully labeled dataset")
    pred = np.argmax(predict_proba(model, dataset.graphs), axis=1)
    return float(np.mean(pred == y))


def pseudo_label_accuracy(model: Model, data: DomainPair, branch="a") -> float:
    """Accuracy of similarity-vote labels for all targets against one full source pass."""
    if len(data.target) == 0:
        raise BatchError("target domain is empty")
    if data.target_labels is None:
        raise ValueError("target labels are needed for this diagnostic")
    def unit(z):
        return z / np.linalg.norm(z, axis=1, keepdims=True)
    zs = unit(model.embed(list(data.source.graphs), branch))
    zt = unit(model.embed(list(data.target.graphs), branch))
    yhat, _ = L.pseudo_labels(zt, zs, data.source.labels, data.num_classes, model.config.contrastive)
    return float(np.mean(yhat == data.target_labels))


# -------------------------------------------------------------- persistence

def checkpoint_dict(model: Model) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "num_classes": model.num_classes,
        "featurizer": model.featurizer.to_json(),
        "branches": [enc.state_dict() for enc in model.encoders],
        "params": T.params_to_json(model.params),
    }


def save_checkpoint(model: Model, path) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(model), sort_keys=True))


def load_checkpoint(path) -> Model:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    config = TrainConfig.from_dict(doc["config"])
    feat = Featurizer(**doc["featurizer"])
    model = Model(config, feat, doc["num_classes"])
    for enc, state in zip(model.encoders, doc["branches"]):
        enc.load_state(state)
    values = T.params_from_json(doc["params"])
    if set(values) != set(model.params):
        raise ValueError("checkpoint parameters do not match the model layout")
    for name, arr in values.items():
        if arr.shape != model.params[name].shape:
            raise ValueError(f"{name}: shape {arr.shape} != {model.params[name].shape}")
        model.params[name].data = arr
    return model


def write_history_csv(history: TrainHistory, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "l_cb", "l_cd", "l_s", "total", "target_pseudo_accuracy"])
        for i, (rep, acc) in enumerate(zip(history.reports, history.pseudo_accuracy)):
            w.writerow([i, repr(rep.l_cb), repr(rep.l_cd), repr(rep.l_s), repr(rep.total),
                        "" if acc is None else repr(acc)])


def metrics_dict(model: Model, history: TrainHistory, dataset_name: str, target_accuracy) -> dict:
    return {
        "dataset": dataset_name,
        "config_hash": model.config.digest(),
        "seed": model.config.seed,
        "ablation": model.config.ablation,
        "target_accuracy": target_accuracy,
        "epochs_run": history.epochs_run,
    }
