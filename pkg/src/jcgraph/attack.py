"""Structural perturbation harness: random fake-edge injection and the
clean-vs-poisoned retraining sweep comparing loss functions."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .graph import Dataset, Graph
from .trainer import TrainConfig, TrainingError, train

__all__ = [
    "AttackSpec",
    "SweepRow",
    "random_attack",
    "robustness_sweep",
    "write_sweep_csv",
]


@dataclass(frozen=True)
class AttackSpec:
    """ratio = fake edges / real edges."""

    ratio: float
    seed: int = 0

    def __post_init__(self):
        if self.ratio < 0:
            raise ValueError("ratio must be >= 0")


def random_attack(g: Graph, spec: AttackSpec) -> Graph:
    """Inject floor(ratio * m) fake undirected edges between non-adjacent pairs.

    Original edges are kept untouched; sampling is uniform without
    replacement and deterministic for a fixed seed.
    """
    n = g.num_nodes
    m = g.num_edges
    needed = int(spec.ratio * m)
    if needed == 0:
        return Graph(n, g.indptr.copy(), g.indices.copy())
    capacity = n * (n - 1) // 2 - m
    if needed > capacity:
        raise ValueError(f"graph too dense: {needed} fake edges requested, "
                         f"only {capacity} non-adjacent pairs exist")

    rng = np.random.default_rng(spec.seed)
    chosen: set[tuple[int, int]] = set()
    tries = 0
    cap_tries = 50 * needed + 10_000
    while len(chosen) < needed and tries < cap_tries:
        tries += 1
        u = int(rng.integers(n))
        v = int(rng.integers(n))
        if u == v:
            continue
        if u > v:
            u, v = v, u
        if (u, v) in chosen or g.has_edge(u, v):
            continue
        chosen.add((u, v))
    if len(chosen) < needed:
        # dense corner: enumerate the complement and sample exactly
        pool = [(u, int(v)) for u in range(n)
                for v in np.setdiff1d(np.arange(u + 1, n), g.neighbors(u))
                if (u, int(v)) not in chosen]
        extra = rng.choice(len(pool), size=needed - len(chosen), replace=False)
        chosen.update(pool[i] for i in extra)

    fake = np.asarray(sorted(chosen), dtype=np.int64)
    all_pairs = np.concatenate([g.edge_pairs(), fake], axis=0)
    uniq = np.unique(all_pairs[:, 0] * np.int64(n) + all_pairs[:, 1])
    uv = np.stack([uniq // n, uniq % n], axis=1)
    return Graph.from_undirected_pairs(n, uv)


@dataclass(frozen=True)
class SweepRow:
    ratio: float
    loss: str
    mean_acc: float
    std_acc: float
    seeds: int


def robustness_sweep(data: Dataset, ratios, cfg_ce: TrainConfig, cfg_jc: TrainConfig,
                     seeds: int) -> list[SweepRow]:
    """Poison, retrain both losses from scratch, report test accuracy.

    For every (ratio, seed) cell the graph is re-poisoned with that seed and
    both configs are trained on the same poisoned graph.
    """
    ratios = list(ratios)
    if ratios != sorted(ratios):
        raise ValueError("ratios must be sorted ascending")
    if seeds < 1:
        raise ValueError("seeds must be >= 1")
    rows = []
    for ratio in ratios:
        accs = {"ce": [], "jc": []}
        for s in range(seeds):
            poisoned = random_attack(data.graph, AttackSpec(ratio, seed=cfg_ce.seed + s))
            pdata = Dataset(poisoned, data.features, data.labels, data.masks)
            for name, cfg in (("ce", cfg_ce), ("jc", cfg_jc)):
                try:
                    result = train(replace(cfg, seed=cfg.seed + s), pdata)
                except TrainingError as e:
                    raise TrainingError(f"ratio {ratio} seed {cfg.seed + s}: {e}",
                                        epoch=e.epoch, seed=cfg.seed + s) from e
                accs[name].append(result.test_acc)
        for name in ("ce", "jc"):
            vals = np.asarray(accs[name])
            rows.append(SweepRow(ratio, name, float(vals.mean()), float(vals.std()), seeds))
    return rows


def write_sweep_csv(path, rows: list[SweepRow]) -> None:
    with open(path, "w", newline="\n") as f:
        f.write("ratio,loss,mean_acc,std_acc,seeds\n")
        for r in rows:
            f.write(f"{r.ratio!r},{r.loss},{r.mean_acc!r},{r.std_acc!r},{r.seeds}\n")
