"""Training orchestration: epoch loop, cluster refresh, checkpoint at best
validation score, evaluation, and multi-seed aggregation.

Training is full batch. Cluster statistics are recomputed from the current
epoch's embeddings (gradients flow through them unless detach_cluster is
set), and recomputed once more from the final checkpoint's embeddings for
inference, always over labeled nodes only.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import losses
from .graph import Dataset, normalize_adjacency
from .metrics import PredictionBatch, accuracy, ece, f1_scores, multilabel_f1
from .nn import (ModelSpec, Params, adam_step, encoder_forward, init_adam_state,
                 init_params, model_backward)
from .partition import (ClusterAssignment, partition_kmeans, partition_metis_like,
                        partition_random, read_assignment)

__all__ = [
    "TrainConfig",
    "RunResult",
    "MultiSeedResult",
    "TrainingError",
    "train",
    "train_with_params",
    "evaluate",
    "multi_seed",
    "config_echo",
    "write_result",
    "write_curves",
]

# loss kind -> (classifier kind, needs clusters, allowed label kinds)
LOSS_KINDS = {
    "ce": ("independent", False, ("s", "m")),
    "jc": ("joint", True, ("s",)),
    "ic": ("in-context", True, ("s",)),
    "mixup": ("independent", True, ("s",)),
    "jc-multilabel": ("joint-multilabel", True, ("m",)),
}

PARTITION_METHODS = ("metis-like", "kmeans", "random", "file")


class TrainingError(RuntimeError):
    def __init__(self, message, epoch=None, seed=None):
        self.epoch = epoch
        self.seed = seed
        super().__init__(message)


@dataclass
class TrainConfig:
    spec: ModelSpec
    loss: str = "ce"
    partition: str = "metis-like"
    num_clusters: int = 1
    clusters_file: str | None = None
    lr: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    weight_decay: float = 5e-4
    epochs: int = 300
    eval_every: int = 1
    seed: int = 0
    detach_cluster: bool = False
    beta: float = 1.0
    ece_bins: int = 10

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.partition not in PARTITION_METHODS:
            raise ValueError(f"unknown partition method {self.partition!r}")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if LOSS_KINDS[self.loss][1] and self.num_clusters < 1:
            raise ValueError("cluster-based losses need num_clusters >= 1")


@dataclass
class RunResult:
    best_val_epoch: int
    test_acc: float
    test_f1_micro: float
    test_f1_macro: float
    test_f1_weighted: float
    test_ece: float
    eval_epochs: list[int]
    train_loss: list[float]
    val_loss: list[float]
    test_loss: list[float]
    val_acc: list[float]
    seconds_per_epoch: float


@dataclass
class MultiSeedResult:
    metrics: dict[str, tuple[float, float]]
    results: list


def _needs_adj(spec: ModelSpec) -> bool:
    return spec.encoder in ("gcn", "sgc")


def _needs_clusters(loss: str) -> bool:
    return LOSS_KINDS[loss][1]


def _validate(cfg: TrainConfig, data: Dataset) -> None:
    clf, _, kinds = LOSS_KINDS[cfg.loss]
    if cfg.spec.classifier != clf:
        raise ValueError(f"loss {cfg.loss!r} needs classifier {clf!r}, spec has {cfg.spec.classifier!r}")
    if data.labels.kind not in kinds:
        raise ValueError(f"loss {cfg.loss!r} does not support label kind {data.labels.kind!r}")
    if cfg.spec.in_dim != data.features.shape[1]:
        raise ValueError("spec.in_dim does not match the dataset")
    if cfg.spec.num_classes != data.labels.num_classes:
        raise ValueError("spec.num_classes does not match the dataset")


def make_partition(cfg: TrainConfig, data: Dataset) -> ClusterAssignment:
    if cfg.partition == "metis-like":
        return partition_metis_like(data.graph, cfg.num_clusters, cfg.seed)
    if cfg.partition == "kmeans":
        return partition_kmeans(data.features, cfg.num_clusters, cfg.seed)
    if cfg.partition == "random":
        return partition_random(data.num_nodes, cfg.num_clusters, cfg.seed)
    a = read_assignment(cfg.clusters_file)
    if a.num_nodes != data.num_nodes:
        raise ValueError(f"{cfg.clusters_file}: covers {a.num_nodes} nodes, dataset has {data.num_nodes}")
    return a


def _loss_on(cfg, params, z, data, mask, assign, stats) -> losses.LossResult:
    if cfg.loss == "ce":
        return losses.ce_loss(params, z, data.labels, mask)
    if cfg.loss == "jc":
        return losses.jc_loss(params, z, data.labels, mask, assign, stats,
                              detach_cluster=cfg.detach_cluster)
    if cfg.loss == "ic":
        return losses.ic_loss(params, z, stats, data.labels, mask, assign,
                              detach_cluster=cfg.detach_cluster)
    if cfg.loss == "mixup":
        return losses.mixup_loss(params, z, stats, data.labels, mask, assign,
                                 cfg.beta, detach_cluster=cfg.detach_cluster)
    return losses.jc_multilabel_loss(params, z, data.labels, mask, assign, stats,
                                     detach_cluster=cfg.detach_cluster)


def _predict_all(cfg, params, z, data, assign, stats) -> np.ndarray:
    if cfg.loss in ("ce", "mixup"):
        return losses.predict_independent(params, z, data.labels.kind)
    if cfg.loss == "jc":
        return losses.predict_joint(params, z, assign, stats)
    if cfg.loss == "ic":
        return losses.predict_in_context(params, z, assign, stats)
    return losses.predict_joint_multilabel(params, z, assign, stats)


def _split_score(probs, data, mask) -> float:
    """Checkpoint metric: accuracy (single-label) or micro-F1 (multi-label)."""
    if data.labels.kind == "s":
        batch = PredictionBatch(probs[mask], data.labels.class_index()[mask], mask)
        return accuracy(batch)
    micro, _, _ = multilabel_f1(probs[mask], data.labels.matrix[mask])
    return micro


def _split_metrics(probs, data, mask, ece_bins) -> dict:
    if mask.size == 0:
        raise ValueError("empty split")
    if data.labels.kind == "s":
        batch = PredictionBatch(probs[mask], data.labels.class_index()[mask], mask)
        micro, macro, weighted = f1_scores(batch)
        return {"acc": accuracy(batch), "f1_micro": micro, "f1_macro": macro,
                "f1_weighted": weighted, "ece": ece(batch, ece_bins)}
    micro, macro, weighted = multilabel_f1(probs[mask], data.labels.matrix[mask])
    return {"acc": micro, "f1_micro": micro, "f1_macro": macro,
            "f1_weighted": weighted, "ece": float("nan")}


def train(cfg: TrainConfig, data: Dataset) -> RunResult:
    """Run the full training loop and return the checkpointed test metrics."""
    result, _ = train_with_params(cfg, data)
    return result


def train_with_params(cfg: TrainConfig, data: Dataset) -> tuple[RunResult, Params]:
    """Like train, but also returns the best-validation parameter snapshot."""
    _validate(cfg, data)
    spec = cfg.spec
    adj = normalize_adjacency(data.graph) if _needs_adj(spec) else None
    assign = make_partition(cfg, data) if _needs_clusters(cfg.loss) else None
    masks = data.masks
    val_mask = masks.val if masks.val.size else masks.train

    params = init_params(spec, cfg.seed)
    state = init_adam_state(params)

    eval_epochs: list[int] = []
    curve_train, curve_val, curve_test, curve_val_acc = [], [], [], []
    best_score, best_epoch, best_params = -np.inf, 0, params.copy()

    def run_eval(epoch, current):
        nonlocal best_score, best_epoch, best_params
        z, _ = encoder_forward(spec, current, adj, data.features, train_mode=False)
        stats = (losses.cluster_stats(z, data.labels, masks.train, assign)
                 if assign is not None else None)
        probs = _predict_all(cfg, current, z, data, assign, stats)
        tr = _loss_on(cfg, current, z, data, masks.train, assign, stats).value
        va = (_loss_on(cfg, current, z, data, val_mask, assign, stats).value
              if val_mask.size else float("nan"))
        te = (_loss_on(cfg, current, z, data, masks.test, assign, stats).value
              if masks.test.size else float("nan"))
        score = _split_score(probs, data, val_mask)
        eval_epochs.append(epoch)
        curve_train.append(tr)
        curve_val.append(va)
        curve_test.append(te)
        curve_val_acc.append(score)
        if score > best_score:
            best_score, best_epoch, best_params = score, epoch, current.copy()

    t0 = time.perf_counter()
    if cfg.epochs == 0:
        run_eval(0, params)
    for epoch in range(1, cfg.epochs + 1):
        z, tape = encoder_forward(spec, params, adj, data.features,
                                  train_mode=True, seed=[cfg.seed, 1, epoch])
        stats = (losses.cluster_stats(z, data.labels, masks.train, assign)
                 if assign is not None else None)
        res = _loss_on(cfg, params, z, data, masks.train, assign, stats)
        if not np.isfinite(res.value):
            raise TrainingError(f"non-finite loss at epoch {epoch}", epoch=epoch)
        grads = model_backward(tape, res.d_embeddings)
        grads.update(res.clf_grads)
        adam_step(params, grads, state, lr=cfg.lr, betas=cfg.betas,
                  eps=cfg.adam_eps, weight_decay=cfg.weight_decay, t=epoch)
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            run_eval(epoch, params)
    seconds = (time.perf_counter() - t0) / max(1, cfg.epochs)

    z, _ = encoder_forward(spec, best_params, adj, data.features, train_mode=False)
    stats = (losses.cluster_stats(z, data.labels, masks.train, assign)
             if assign is not None else None)
    probs = _predict_all(cfg, best_params, z, data, assign, stats)
    test = _split_metrics(probs, data, masks.test, cfg.ece_bins)

    result = RunResult(
        best_val_epoch=best_epoch,
        test_acc=test["acc"],
        test_f1_micro=test["f1_micro"],
        test_f1_macro=test["f1_macro"],
        test_f1_weighted=test["f1_weighted"],
        test_ece=test["ece"],
        eval_epochs=eval_epochs,
        train_loss=curve_train,
        val_loss=curve_val,
        test_loss=curve_test,
        val_acc=curve_val_acc,
        seconds_per_epoch=seconds,
    )
    return result, best_params


def evaluate(params: Params, cfg: TrainConfig, data: Dataset,
             stats: losses.ClusterStats | None = None, split: np.ndarray | None = None,
             assign: ClusterAssignment | None = None) -> dict:
    """Metrics bundle (plus loss) for one split under the given parameters."""
    split = np.asarray(split if split is not None else data.masks.test, dtype=np.int64)
    if split.size == 0:
        raise ValueError("empty split")
    adj = normalize_adjacency(data.graph) if _needs_adj(cfg.spec) else None
    if _needs_clusters(cfg.loss) and assign is None:
        assign = make_partition(cfg, data)
    z, _ = encoder_forward(cfg.spec, params, adj, data.features, train_mode=False)
    if _needs_clusters(cfg.loss) and stats is None:
        stats = losses.cluster_stats(z, data.labels, data.masks.train, assign)
    probs = _predict_all(cfg, params, z, data, assign, stats)
    out = _split_metrics(probs, data, split, cfg.ece_bins)
    out["loss"] = _loss_on(cfg, params, z, data, split, assign, stats).value
    return out


METRIC_KEYS = ("test_acc", "test_f1_micro", "test_f1_macro", "test_f1_weighted", "test_ece")


def multi_seed(cfg: TrainConfig, data: Dataset, k: int) -> MultiSeedResult:
    """Run seeds cfg.seed .. cfg.seed+k-1; report mean and population std."""
    if k < 1:
        raise ValueError("k must be >= 1")
    results = []
    for s in range(cfg.seed, cfg.seed + k):
        try:
            results.append(train(replace(cfg, seed=s), data))
        except TrainingError as e:
            raise TrainingError(f"seed {s}: {e}", epoch=e.epoch, seed=s) from e
    metrics = {}
    for key in METRIC_KEYS:
        vals = np.asarray([getattr(r, key) for r in results], dtype=np.float64)
        metrics[key] = (float(vals.mean()), float(vals.std()))
    return MultiSeedResult(metrics, results)


# ---------------------------------------------------------------------------
# result files: flat "key = value" text plus a curves CSV


def config_echo(cfg: TrainConfig) -> dict[str, str]:
    spec = cfg.spec
    return {
        "encoder": spec.encoder,
        "layers": str(spec.layers),
        "hidden": str(spec.hidden),
        "dropout": repr(spec.dropout),
        "classifier": spec.classifier,
        "loss": cfg.loss,
        "partition": cfg.partition,
        "clusters": str(cfg.num_clusters),
        "lr": repr(cfg.lr),
        "weight_decay": repr(cfg.weight_decay),
        "epochs": str(cfg.epochs),
        "eval_every": str(cfg.eval_every),
        "seed": str(cfg.seed),
        "detach_cluster": str(cfg.detach_cluster).lower(),
        "beta": repr(cfg.beta),
    }


def write_result(path, cfg: TrainConfig, result: RunResult) -> None:
    """Self-describing flat result file. Timing is deliberately excluded so
    identical seeded runs produce byte-identical files."""
    lines = [f"config.{k} = {v}" for k, v in config_echo(cfg).items()]
    lines.append(f"best_val_epoch = {result.best_val_epoch}")
    for key in METRIC_KEYS:
        lines.append(f"{key} = {repr(float(getattr(result, key)))}")
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def write_curves(path, result: RunResult) -> None:
    with open(path, "w", newline="\n") as f:
        f.write("epoch,train_loss,val_loss,test_loss,val_acc\n")
        for i, epoch in enumerate(result.eval_epochs):
            f.write(f"{epoch},{result.train_loss[i]!r},{result.val_loss[i]!r},"
                    f"{result.test_loss[i]!r},{result.val_acc[i]!r}\n")
