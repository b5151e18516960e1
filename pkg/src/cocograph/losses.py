"""Training objectives: cross-branch InfoNCE, similarity-vote pseudo-labels,
cross-domain supervised-contrastive loss, cross-entropy and their sum.

Embedding inputs to the contrastive terms are expected to be l2-normalized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import BatchError, ShapeError

UNION = "union"
TARGET_ONLY = "target-only"


@dataclass(frozen=True)
class ContrastiveConfig:
    tau: float = 0.5
    negative_pool_mode: str = UNION
    # Pseudo-labels below this confidence are dropped from the cross-domain loss; None keeps all.
    confidence_threshold: float | None = None

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.negative_pool_mode not in (UNION, TARGET_ONLY):
            raise ValueError(f"unknown negative pool mode {self.negative_pool_mode!r}")


@dataclass(frozen=True)
class PseudoLabel:
    distribution: np.ndarray
    label: int
    confidence: float


@dataclass
class LossReport:
    l_cb: float
    l_cd: float
    l_s: float
    total: float
    l_cd_components: dict = field(default_factory=dict)


def _values(x):
    return x.data if isinstance(x, T.Tensor) else np.asarray(x, dtype=np.float64)


def cross_branch_loss(Z, Z_tilde, cfg: ContrastiveConfig = ContrastiveConfig(), num_source=0):
    """InfoNCE between the two branch embeddings of the same graphs.

    Row ``i`` of ``Z`` is pulled towards row ``i`` of ``Z_tilde``. In
    ``target-only`` mode the candidate pool is restricted to rows
    ``num_source:`` (the target batch), as printed in the original objective.
    """
    Z, Z_tilde = T.as_tensor(Z), T.as_tensor(Z_tilde)
    if Z.ndim != 2 or Z.shape[0] < 1:
        raise BatchError("cross-branch loss needs at least one graph")
    if Z.shape != Z_tilde.shape:
        raise ShapeError(f"branch embeddings differ in shape: {Z.shape} vs {Z_tilde.shape}")
    inv_tau = 1.0 / cfg.tau
    pos = T.scale(T.sum(T.mul(Z, Z_tilde), axis=1), inv_tau)
    if cfg.negative_pool_mode == UNION:
        pool = Z_tilde
    else:
        tgt = np.arange(num_source, Z.shape[0])
        if not len(tgt):
            raise BatchError("target-only negatives need a non-empty target batch")
        pool = T.gather_rows(Z_tilde, tgt)
    lse = T.logsumexp(T.scale(T.matmul(Z, T.transpose(pool)), inv_tau))
    return T.mean(T.sub(lse, pos))


def pseudo_label_distributions(z_target, z_source, source_labels, num_classes, tau=0.5):
    """Similarity-weighted votes of source labels for every target row, shape ``(n_t, C)``.

    Inputs are plain arrays: pseudo-labels are supervision targets, not a
    differentiable path.
    """
    zt, zs = _values(z_target), _values(z_source)
    ys = np.asarray(source_labels, dtype=np.int64)
    if zs.ndim != 2 or zs.shape[0] == 0:
        raise BatchError("pseudo-labeling needs at least one source graph")
    if zt.ndim == 1:
        zt = zt[None, :]
    logits = zt @ zs.T / tau
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    onehot = np.zeros((len(ys), num_classes))
    onehot[np.arange(len(ys)), ys] = 1.0
    return w @ onehot


def pseudo_label(z_t, source_embeddings, source_labels, cfg: ContrastiveConfig = ContrastiveConfig(),
                 num_classes=None) -> PseudoLabel:
    ys = np.asarray(source_labels, dtype=np.int64)
    C = int(ys.max()) + 1 if num_classes is None else num_classes
    dist = pseudo_label_distributions(z_t, source_embeddings, ys, C, cfg.tau)[0]
    label = int(np.argmax(dist))
    return PseudoLabel(dist, label, float(dist[label]))


def pseudo_labels(z_target, z_source, source_labels, num_classes, cfg=ContrastiveConfig()):
    """Arg-max labels and confidences for a target batch."""
    dist = pseudo_label_distributions(z_target, z_source, source_labels, num_classes, cfg.tau)
    labels = np.argmax(dist, axis=1)
    return labels, dist[np.arange(len(labels)), labels]


def positive_weights(target_labels, source_labels, keep=None):
    """``W[j, i] = 1/|Pi(j)|`` when source ``i`` carries target ``j``'s label, else 0."""
    yt = np.asarray(target_labels, dtype=np.int64)
    ys = np.asarray(source_labels, dtype=np.int64)
    match = (yt[:, None] == ys[None, :]).astype(np.float64)
    if keep is not None:
        match *= np.asarray(keep, dtype=bool)[:, None]
    sizes = match.sum(axis=1, keepdims=True)
    return np.divide(match, sizes, out=np.zeros_like(match), where=sizes > 0)


def cross_domain_loss(z_target, target_labels, z_source, source_labels,
                      cfg: ContrastiveConfig = ContrastiveConfig(), keep=None):
    """Sum over target rows of the mean ``-log softmax`` over same-label source rows.

    Targets without any same-label source in the batch contribute zero.
    """
    zt, zs = T.as_tensor(z_target), T.as_tensor(z_source)
    if zs.ndim != 2 or zs.shape[0] == 0:
        raise BatchError("cross-domain loss needs at least one source graph")
    W = positive_weights(target_labels, source_labels, keep)
    logp = T.log_softmax(T.scale(T.matmul(zt, T.transpose(zs)), 1.0 / cfg.tau))
    return T.scale(T.sum(T.mul(T.Tensor(W), logp)), -1.0)


def supervised_loss(logits, labels):
    """Mean cross-entropy of row-wise softmax predictions."""
    logits = T.as_tensor(logits)
    y = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] != len(y):
        raise ShapeError("one logit row per label required")
    if len(y) == 0:
        raise BatchError("empty batch")
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(y)), y] = 1.0
    return T.scale(T.sum(T.mul(T.Tensor(onehot), T.log_softmax(logits))), -1.0 / len(y))


def total_loss(l_cb, l_cd, l_s, l_cd_components=None) -> LossReport:
    l_cb, l_cd, l_s = (float(_values(x)) for x in (l_cb, l_cd, l_s))
    return LossReport(l_cb, l_cd, l_s, l_cb + l_cd + l_s, dict(l_cd_components or {}))


def em_objective(z_target, target_labels, z_source, source_labels, cfg=ContrastiveConfig()) -> float:
    """M-step objective of the EM view of the cross-domain loss.

    The E-step posterior is uniform over same-label sources; the likelihood of
    a target given source ``i`` is an isotropic Gaussian around ``z_i`` with
    variance ``tau``, normalized over the source batch.
    """
    zt, zs = _values(z_target), _values(z_source)
    if zs.ndim != 2 or zs.shape[0] == 0:
        raise BatchError("EM objective needs at least one source graph")
    yt = np.asarray(target_labels, dtype=np.int64)
    ys = np.asarray(source_labels, dtype=np.int64)
    total = 0.0
    for j in range(len(yt)):
        sq = ((zs - zt[j]) ** 2).sum(axis=1)
        logits = -sq / (2.0 * cfg.tau)
        m = logits.max()
        log_post = logits - (m + np.log(np.exp(logits - m).sum()))
        positives = np.flatnonzero(ys == yt[j])
        if len(positives):
            total += log_post[positives].sum() / len(positives)
    return float(total)
