"""Cluster statistics, joint node-cluster tables, and the loss family.

The joint-cluster loss trains a classifier on the concatenated node and
cluster embeddings against the outer-product table of the node label and the
cluster mean label, plus a symmetric term with the two roles exchanged.
Inference marginalizes the predicted table over the cluster dimension.

Every loss here returns the scalar value together with analytic gradients
for the classifier and for the embedding matrix, including the mean-pooling
flow through cluster embeddings (1/L_m per labeled member).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .graph import LabelSet
from .nn import Params
from .partition import ClusterAssignment

__all__ = [
    "PROB_FLOOR",
    "ClusterStats",
    "LossResult",
    "cluster_stats",
    "joint_label",
    "joint_forward",
    "marginalize",
    "jc_loss",
    "ce_loss",
    "ic_loss",
    "mixup_loss",
    "jc_multilabel_loss",
    "predict_independent",
    "predict_joint",
    "predict_in_context",
    "predict_joint_multilabel",
]

PROB_FLOOR = 1e-12


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _logp(p: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(p, PROB_FLOOR))


@dataclass
class ClusterStats:
    """Per-cluster mean embedding and mean label over labeled nodes.

    counts[m] == 0 marks a cluster without labeled nodes whose rows hold the
    global labeled means instead.
    """

    zbar: np.ndarray
    ybar: np.ndarray
    counts: np.ndarray


def cluster_stats(embeddings: np.ndarray, labels: LabelSet, train_mask: np.ndarray,
                  assign: ClusterAssignment) -> ClusterStats:
    train_mask = np.asarray(train_mask, dtype=np.int64)
    if train_mask.size == 0:
        raise ValueError("train mask is empty")
    m = assign.num_clusters
    a = assign.assign[train_mask]
    counts = np.bincount(a, minlength=m)
    zbar = np.zeros((m, embeddings.shape[1]))
    ybar = np.zeros((m, labels.num_classes))
    np.add.at(zbar, a, embeddings[train_mask])
    np.add.at(ybar, a, labels.matrix[train_mask])
    nz = counts > 0
    zbar[nz] /= counts[nz, None]
    ybar[nz] /= counts[nz, None]
    if (~nz).any():
        zbar[~nz] = embeddings[train_mask].mean(axis=0)
        ybar[~nz] = labels.matrix[train_mask].mean(axis=0)
    return ClusterStats(zbar, ybar, counts)


def scatter_cluster_grad(d_zbar: np.ndarray, assign: ClusterAssignment,
                         train_mask: np.ndarray, counts: np.ndarray,
                         out: np.ndarray) -> None:
    """Distribute d(loss)/d(zbar) onto the labeled members (1/L_m each).

    Rows with counts == 0 are global-fallback means, so their gradient flows
    to every labeled node with weight 1/L. Loss masks other than the labeled
    set may visit fallback clusters; those rows route through the fallback
    branch instead of the per-member division.
    """
    a = assign.assign[train_mask]
    safe = np.maximum(counts, 1)
    labeled = (counts[a] > 0)[:, None]
    np.add.at(out, train_mask, np.where(labeled, d_zbar[a] / safe[a, None], 0.0))
    fb = counts == 0
    if fb.any():
        g = d_zbar[fb].sum(axis=0) / train_mask.size
        out[train_mask] += g


@dataclass
class LossResult:
    value: float
    d_embeddings: np.ndarray
    clf_grads: dict[str, np.ndarray]
    dlogits_node: np.ndarray | None = None
    dlogits_cluster: np.ndarray | None = None


def joint_label(y: np.ndarray, ybar: np.ndarray) -> np.ndarray:
    """Outer product y ybar^T; rows index the node label, columns the cluster."""
    y = np.asarray(y, dtype=np.float64)
    ybar = np.asarray(ybar, dtype=np.float64)
    if not (np.isin(y, (0.0, 1.0)).all() and y.sum() == 1.0):
        raise ValueError("y must be one-hot")
    if (ybar < 0).any() or abs(ybar.sum() - 1.0) > 1e-9:
        raise ValueError("ybar must be a distribution")
    return np.outer(y, ybar)


def joint_forward(classifier: Params, z: np.ndarray, zbar: np.ndarray) -> np.ndarray:
    """Predicted c x c joint table: softmax over all c^2 logits of con(z, zbar)."""
    w, b = classifier["clf_w"], classifier["clf_b"]
    c = int(round(np.sqrt(w.shape[1])))
    if c * c != w.shape[1]:
        raise ValueError("classifier does not produce a square joint table")
    con = np.concatenate([z, zbar])
    if con.shape[0] != w.shape[0]:
        raise ValueError(f"concatenated input has dim {con.shape[0]}, classifier expects {w.shape[0]}")
    logits = con @ w + b
    return _softmax(logits[None, :])[0].reshape(c, c)


def marginalize(t: np.ndarray) -> np.ndarray:
    """Class distribution from a joint table: sum over the cluster dimension."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 2 or t.shape[0] != t.shape[1]:
        raise ValueError("joint table must be square")
    if (t < 0).any() or abs(t.sum() - 1.0) > 1e-9:
        raise ValueError("non-normalized table")
    return t.sum(axis=1)


def _clf(params: Params):
    return params["clf_w"], params["clf_b"]


def ce_loss(classifier: Params, embeddings: np.ndarray, labels: LabelSet,
            train_mask: np.ndarray) -> LossResult:
    """Independent cross-entropy, mean over the mask.

    Multi-label sets use per-class sigmoid cross-entropy.
    """
    w, b = _clf(classifier)
    mask = np.asarray(train_mask, dtype=np.int64)
    if mask.size == 0:
        raise ValueError("empty mask")
    n = mask.size
    logits = embeddings[mask] @ w + b
    y = labels.matrix[mask]
    if labels.kind == "s":
        p = _softmax(logits)
        value = float(-(y * _logp(p)).sum(axis=1).mean())
    else:
        p = expit(logits)
        value = float(-(y * _logp(p) + (1.0 - y) * _logp(1.0 - p)).sum(axis=1).mean())
    dlogits = (p - y) / n
    d_emb = np.zeros_like(embeddings)
    d_emb[mask] = dlogits @ w.T
    grads = {"clf_w": embeddings[mask].T @ dlogits, "clf_b": dlogits.sum(axis=0)}
    return LossResult(value, d_emb, grads)


def jc_loss(classifier: Params, embeddings: np.ndarray, labels: LabelSet,
            train_mask: np.ndarray, assign: ClusterAssignment, stats: ClusterStats,
            detach_cluster: bool = False) -> LossResult:
    """Joint-cluster cross-entropy with its symmetric swapped-order term.

    Per node: target y ybar^T against softmax(g(con(z, zbar))) plus target
    ybar y^T against softmax(g(con(zbar, z))), averaged over the mask.
    """
    if labels.kind != "s":
        raise ValueError("jc_loss requires a single-label task")
    w, b = _clf(classifier)
    mask = np.asarray(train_mask, dtype=np.int64)
    if mask.size == 0:
        raise ValueError("empty mask")
    n = mask.size
    c = labels.num_classes
    h = embeddings.shape[1]
    a = assign.assign[mask]

    zi = embeddings[mask]
    zc = stats.zbar[a]
    con1 = np.concatenate([zi, zc], axis=1)
    con2 = np.concatenate([zc, zi], axis=1)
    p1 = _softmax(con1 @ w + b)
    p2 = _softmax(con2 @ w + b)

    y = labels.matrix[mask]
    yb = stats.ybar[a]
    t1 = (y[:, :, None] * yb[:, None, :]).reshape(n, c * c)
    t2 = (yb[:, :, None] * y[:, None, :]).reshape(n, c * c)

    value = float(-((t1 * _logp(p1)).sum(axis=1) + (t2 * _logp(p2)).sum(axis=1)).mean())
    dl1 = (p1 - t1) / n
    dl2 = (p2 - t2) / n

    dcon1 = dl1 @ w.T
    dcon2 = dl2 @ w.T
    d_emb = np.zeros_like(embeddings)
    np.add.at(d_emb, mask, dcon1[:, :h] + dcon2[:, h:])
    if not detach_cluster:
        d_zbar = np.zeros_like(stats.zbar)
        np.add.at(d_zbar, a, dcon1[:, h:] + dcon2[:, :h])
        scatter_cluster_grad(d_zbar, assign, mask, stats.counts, d_emb)

    grads = {
        "clf_w": con1.T @ dl1 + con2.T @ dl2,
        "clf_b": dl1.sum(axis=0) + dl2.sum(axis=0),
    }
    return LossResult(value, d_emb, grads, dlogits_node=dl1, dlogits_cluster=dl2)


def ic_loss(classifier: Params, embeddings: np.ndarray, stats: ClusterStats,
            labels: LabelSet, train_mask: np.ndarray, assign: ClusterAssignment,
            detach_cluster: bool = False) -> LossResult:
    """In-context baseline: plain CE on c logits from con(z, zbar)."""
    if labels.kind != "s":
        raise ValueError("ic_loss requires a single-label task")
    w, b = _clf(classifier)
    mask = np.asarray(train_mask, dtype=np.int64)
    if mask.size == 0:
        raise ValueError("empty mask")
    n = mask.size
    h = embeddings.shape[1]
    a = assign.assign[mask]
    con = np.concatenate([embeddings[mask], stats.zbar[a]], axis=1)
    p = _softmax(con @ w + b)
    y = labels.matrix[mask]
    value = float(-(y * _logp(p)).sum(axis=1).mean())
    dlogits = (p - y) / n
    dcon = dlogits @ w.T
    d_emb = np.zeros_like(embeddings)
    np.add.at(d_emb, mask, dcon[:, :h])
    if not detach_cluster:
        d_zbar = np.zeros_like(stats.zbar)
        np.add.at(d_zbar, a, dcon[:, h:])
        scatter_cluster_grad(d_zbar, assign, mask, stats.counts, d_emb)
    grads = {"clf_w": con.T @ dlogits, "clf_b": dlogits.sum(axis=0)}
    return LossResult(value, d_emb, grads)


def mixup_loss(classifier: Params, embeddings: np.ndarray, stats: ClusterStats,
               labels: LabelSet, train_mask: np.ndarray, assign: ClusterAssignment,
               beta: float, detach_cluster: bool = False) -> LossResult:
    """CE on nodes plus beta times CE of the classifier on cluster means.

    The cluster term targets the soft mean label ybar and averages over
    clusters that contain labeled nodes.
    """
    if labels.kind != "s":
        raise ValueError("mixup_loss requires a single-label task")
    if beta < 0:
        raise ValueError("beta must be >= 0")
    base = ce_loss(classifier, embeddings, labels, train_mask)
    if beta == 0.0:
        return base
    w, b = _clf(classifier)
    nz = np.flatnonzero(stats.counts > 0)
    zb = stats.zbar[nz]
    yb = stats.ybar[nz]
    k = nz.size
    pc = _softmax(zb @ w + b)
    cluster_value = float(-(yb * _logp(pc)).sum(axis=1).mean())
    dlc = beta * (pc - yb) / k
    d_zbar = np.zeros_like(stats.zbar)
    d_zbar[nz] = dlc @ w.T
    d_emb = base.d_embeddings
    if not detach_cluster:
        scatter_cluster_grad(d_zbar, assign, np.asarray(train_mask, dtype=np.int64),
                             stats.counts, d_emb)
    grads = {
        "clf_w": base.clf_grads["clf_w"] + zb.T @ dlc,
        "clf_b": base.clf_grads["clf_b"] + dlc.sum(axis=0),
    }
    return LossResult(base.value + beta * cluster_value, d_emb, grads)


def jc_multilabel_loss(classifier: Params, embeddings: np.ndarray, labels: LabelSet,
                       train_mask: np.ndarray, assign: ClusterAssignment,
                       stats: ClusterStats, detach_cluster: bool = False) -> LossResult:
    """Joint-cluster loss for c binary tasks, one 2x2 joint table per task.

    Each task's 4 logits are softmaxed against the outer product of
    [1-y_t, y_t] and [1-ybar_t, ybar_t]; the symmetric swapped-order term is
    included as in the single-label loss. The classifier emits 4c logits.
    """
    if labels.kind != "m":
        raise ValueError("jc_multilabel_loss requires a multi-label task")
    w, b = _clf(classifier)
    mask = np.asarray(train_mask, dtype=np.int64)
    if mask.size == 0:
        raise ValueError("empty mask")
    n = mask.size
    c = labels.num_classes
    h = embeddings.shape[1]
    a = assign.assign[mask]

    zi = embeddings[mask]
    zc = stats.zbar[a]
    con1 = np.concatenate([zi, zc], axis=1)
    con2 = np.concatenate([zc, zi], axis=1)
    p1 = _softmax((con1 @ w + b).reshape(n, c, 4))
    p2 = _softmax((con2 @ w + b).reshape(n, c, 4))

    y = labels.matrix[mask]
    yb = stats.ybar[a]
    t1 = np.stack([(1 - y) * (1 - yb), (1 - y) * yb, y * (1 - yb), y * yb], axis=2)
    t2 = np.stack([(1 - yb) * (1 - y), (1 - yb) * y, yb * (1 - y), yb * y], axis=2)

    value = float(-((t1 * _logp(p1)).sum(axis=(1, 2)) + (t2 * _logp(p2)).sum(axis=(1, 2))).mean())
    dl1 = ((p1 - t1) / n).reshape(n, 4 * c)
    dl2 = ((p2 - t2) / n).reshape(n, 4 * c)

    dcon1 = dl1 @ w.T
    dcon2 = dl2 @ w.T
    d_emb = np.zeros_like(embeddings)
    np.add.at(d_emb, mask, dcon1[:, :h] + dcon2[:, h:])
    if not detach_cluster:
        d_zbar = np.zeros_like(stats.zbar)
        np.add.at(d_zbar, a, dcon1[:, h:] + dcon2[:, :h])
        scatter_cluster_grad(d_zbar, assign, mask, stats.counts, d_emb)

    grads = {
        "clf_w": con1.T @ dl1 + con2.T @ dl2,
        "clf_b": dl1.sum(axis=0) + dl2.sum(axis=0),
    }
    return LossResult(value, d_emb, grads, dlogits_node=dl1, dlogits_cluster=dl2)


# ---------------------------------------------------------------------------
# prediction paths


def predict_independent(classifier: Params, embeddings: np.ndarray, kind: str = "s") -> np.ndarray:
    w, b = _clf(classifier)
    logits = embeddings @ w + b
    return _softmax(logits) if kind == "s" else expit(logits)


def predict_joint(classifier: Params, embeddings: np.ndarray, assign: ClusterAssignment,
                  stats: ClusterStats) -> np.ndarray:
    """Marginalized class distribution for every node from its own cluster."""
    w, b = _clf(classifier)
    c = int(round(np.sqrt(w.shape[1])))
    con = np.concatenate([embeddings, stats.zbar[assign.assign]], axis=1)
    p = _softmax(con @ w + b)
    return p.reshape(-1, c, c).sum(axis=2)


def predict_in_context(classifier: Params, embeddings: np.ndarray,
                       assign: ClusterAssignment, stats: ClusterStats) -> np.ndarray:
    w, b = _clf(classifier)
    con = np.concatenate([embeddings, stats.zbar[assign.assign]], axis=1)
    return _softmax(con @ w + b)


def predict_joint_multilabel(classifier: Params, embeddings: np.ndarray,
                             assign: ClusterAssignment, stats: ClusterStats) -> np.ndarray:
    """Per-task probability of the positive class, marginalized per 2x2 block."""
    w, b = _clf(classifier)
    c = w.shape[1] // 4
    con = np.concatenate([embeddings, stats.zbar[assign.assign]], axis=1)
    p = _softmax((con @ w + b).reshape(-1, c, 4))
    return p[:, :, 2] + p[:, :, 3]
