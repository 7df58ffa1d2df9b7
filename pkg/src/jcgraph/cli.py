"""Command-line surface: partition, train, attack, gen-sbm.

Configs are flat "key = value" text files; any key can be overridden by the
matching command-line flag. Relative paths inside a config file resolve
against the config file's directory, flag-supplied paths against the
working directory. Exit codes: 0 success, 1 runtime failure (non-finite
loss), 2 usage or input error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .attack import robustness_sweep, write_sweep_csv
from .graph import DatasetFormatError, gen_sbm, load_dataset, write_dataset
from .nn import ModelSpec, NumericsError, save_checkpoint
from .partition import (edge_cut_stats, partition_kmeans, partition_metis_like,
                        partition_random, write_assignment)
from .trainer import (LOSS_KINDS, TrainConfig, TrainingError, config_echo,
                    train_with_params, write_curves, write_result)

__all__ = ["main"]


class ConfigError(ValueError):
    pass


def _to_bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


CONFIG_KEYS = {
    "dataset": str,
    "out": str,
    "encoder": str,
    "layers": int,
    "hidden": int,
    "dropout": float,
    "loss": str,
    "partition": str,
    "clusters": int,
    "clusters_file": str,
    "lr": float,
    "weight_decay": float,
    "adam_beta1": float,
    "adam_beta2": float,
    "adam_eps": float,
    "epochs": int,
    "eval_every": int,
    "seed": int,
    "detach_cluster": _to_bool,
    "beta": float,
}

CONFIG_DEFAULTS = {
    "out": "run",
    "encoder": "gcn",
    "layers": 2,
    "hidden": 64,
    "dropout": 0.5,
    "loss": "ce",
    "partition": "metis-like",
    "clusters": 1,
    "clusters_file": None,
    "lr": 0.01,
    "weight_decay": 5e-4,
    "adam_beta1": 0.9,
    "adam_beta2": 0.999,
    "adam_eps": 1e-8,
    "epochs": 300,
    "eval_every": 1,
    "seed": 0,
    "detach_cluster": False,
    "beta": 1.0,
}

_PATH_KEYS = ("dataset", "out", "clusters_file")


def read_config(path) -> dict:
    """Parse a flat key=value config; unknown keys are rejected."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{p}: missing config file")
    cfg = dict(CONFIG_DEFAULTS)
    cfg["dataset"] = None
    for lineno, line in enumerate(p.read_text().split("\n"), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{p}:{lineno}: expected 'key = value', got {stripped!r}")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{p}:{lineno}: unknown key {key!r}")
        try:
            cfg[key] = CONFIG_KEYS[key](value)
        except (ValueError, ConfigError) as e:
            raise ConfigError(f"{p}:{lineno}: bad value for {key}: {e}") from None
    # resolve config-file-relative paths up front
    for key in _PATH_KEYS:
        if cfg.get(key):
            cfg[key] = str((p.parent / cfg[key]).resolve())
    return cfg


def apply_overrides(cfg: dict, args: argparse.Namespace) -> dict:
    for key, conv in CONFIG_KEYS.items():
        raw = getattr(args, key, None)
        if raw is None:
            continue
        cfg[key] = conv(raw)
        if key in _PATH_KEYS:
            cfg[key] = str(Path(cfg[key]).resolve())
    return cfg


def build_train_config(cfg: dict, data) -> TrainConfig:
    if cfg["loss"] not in LOSS_KINDS:
        raise ConfigError(f"unknown loss {cfg['loss']!r}")
    spec = ModelSpec(
        encoder=cfg["encoder"],
        layers=cfg["layers"],
        hidden=cfg["hidden"],
        in_dim=data.features.shape[1],
        num_classes=data.labels.num_classes,
        dropout=cfg["dropout"],
        classifier=LOSS_KINDS[cfg["loss"]][0],
    )
    return TrainConfig(
        spec=spec,
        loss=cfg["loss"],
        partition=cfg["partition"],
        num_clusters=cfg["clusters"],
        clusters_file=cfg["clusters_file"],
        lr=cfg["lr"],
        betas=(cfg["adam_beta1"], cfg["adam_beta2"]),
        adam_eps=cfg["adam_eps"],
        weight_decay=cfg["weight_decay"],
        epochs=cfg["epochs"],
        eval_every=cfg["eval_every"],
        seed=cfg["seed"],
        detach_cluster=cfg["detach_cluster"],
        beta=cfg["beta"],
    )


def cmd_partition(args) -> int:
    data = load_dataset(args.dataset)
    m, seed = args.clusters, args.seed
    if args.method == "metis-like":
        a = partition_metis_like(data.graph, m, seed)
    elif args.method == "kmeans":
        a = partition_kmeans(data.features, m, seed)
    elif args.method == "random":
        a = partition_random(data.num_nodes, m, seed)
    else:
        raise ConfigError(f"unknown method {args.method!r}")
    write_assignment(args.out, a)
    stats = edge_cut_stats(data.graph, a)
    print(f"within={stats.within_links} between={stats.between_links} rate={stats.rate}")
    return 0


def cmd_train(args) -> int:
    cfg_raw = apply_overrides(read_config(args.config), args)
    if not cfg_raw.get("dataset"):
        raise ConfigError("no dataset path given (config key 'dataset' or --dataset)")
    data = load_dataset(cfg_raw["dataset"])
    cfg = build_train_config(cfg_raw, data)
    result, best_params = train_with_params(cfg, data)
    out = Path(cfg_raw["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_result(f"{out}.result", cfg, result)
    write_curves(f"{out}.curves.csv", result)
    save_checkpoint(f"{out}.ckpt", cfg.spec, best_params)
    print(f"seconds_per_epoch={result.seconds_per_epoch:.4f}", file=sys.stderr)
    print(f"test_acc={result.test_acc!r} f1_micro={result.test_f1_micro!r} "
          f"ece={result.test_ece!r}")
    return 0


def cmd_attack(args) -> int:
    cfg_raw = apply_overrides(read_config(args.config), args)
    if not cfg_raw.get("dataset"):
        raise ConfigError("no dataset path given (config key 'dataset' or --dataset)")
    try:
        ratios = [float(t) for t in args.ratios.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"bad --ratios value {args.ratios!r}") from None
    data = load_dataset(cfg_raw["dataset"])
    cfg_ce = build_train_config({**cfg_raw, "loss": "ce"}, data)
    cfg_jc = build_train_config({**cfg_raw, "loss": "jc"}, data)
    rows = robustness_sweep(data, ratios, cfg_ce, cfg_jc, args.num_seeds)
    write_sweep_csv(args.sweep_out, rows)
    for r in rows:
        print(f"ratio={r.ratio} loss={r.loss} mean_acc={r.mean_acc!r} std_acc={r.std_acc!r}")
    return 0


def cmd_gen_sbm(args) -> int:
    ds = gen_sbm(args.blocks, args.nodes_per_block, args.p_in, args.p_out,
                 args.feat_dim, args.feat_noise, args.seed)
    write_dataset(args.out, ds)
    print(f"wrote {ds.num_nodes} nodes, {ds.graph.num_edges} edges to {args.out}")
    return 0


def _add_config_flags(sub, skip=()):
    for key in CONFIG_KEYS:
        if key in skip:
            continue
        sub.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None,
                         help=f"override config key {key}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jcgraph")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("partition", help="partition a dataset and print cut stats")
    p.add_argument("--dataset", required=True)
    p.add_argument("--method", default="metis-like",
                   choices=("metis-like", "kmeans", "random"))
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_partition)

    p = subs.add_parser("train", help="train one run from a config file")
    p.add_argument("config")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("attack", help="random-attack sweep comparing ce and jc")
    p.add_argument("config")
    p.add_argument("--ratios", default="0.2,0.4,0.6,0.8,1.0")
    p.add_argument("--seeds", dest="num_seeds", type=int, default=5)
    p.add_argument("--out", dest="sweep_out", required=True)
    _add_config_flags(p, skip=("out",))
    p.set_defaults(func=cmd_attack)

    p = subs.add_parser("gen-sbm", help="generate a synthetic block-model dataset")
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--nodes-per-block", type=int, default=50)
    p.add_argument("--p-in", type=float, default=0.2)
    p.add_argument("--p-out", type=float, default=0.01)
    p.add_argument("--feat-dim", type=int, default=8)
    p.add_argument("--feat-noise", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_sbm)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetFormatError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (TrainingError, NumericsError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
