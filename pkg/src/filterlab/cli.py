"""Command-line entry point.

Subcommands: generate, filter, train, estimate, bench. Each run resolves
its configuration from built-in defaults, then an optional TOML/JSON config
file, then command-line overrides (in that precedence order), writes the
resolved snapshot next to its outputs, and keeps machine output in files
while diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .bayes import FILTER_NAMES, FilterConfig
from .bench import (
    BenchmarkReport,
    NeuralRunConfig,
    NEURAL_METHODS,
    emit_report,
    evaluate_bayes,
    load_report,
    rmse,
    run_ablation_backbones,
    run_canonical,
    run_cross_system,
    run_mismatch,
    run_sensitivity,
    train_neural,
    evaluate_neural,
    evaluation_context,
)
from .data import generate_dataset, load_dataset, save_dataset
from .neural import estimate_trajectory, load_checkpoint, save_checkpoint
from .systems import SYSTEM_NAMES, make_system


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "generate": {
        "system": "selkov",
        "n_traj": 100,
        "traj_len": 200,
        "seed": 0,
        "overrides": {},
        "out_dir": "out/dataset",
    },
    "filter": {
        "dataset": "",
        "method": "enkf",
        "n_ensemble": 1000,
        "n_particles": 1000,
        "inflation": 1.0,
        "seed": 0,
        "out_dir": "out/filter",
    },
    "train": {
        "dataset": "",
        "system": "",
        "variant": "llm-filter-o",
        "backbone": "transformer",
        "window_len": 40,
        "segment_len": 20,
        "d_model": 256,
        "epochs": 10,
        "batch_size": 16,
        "lr": 1e-4,
        "weight_decay": 1e-5,
        "freeze_backbone": False,
        "seed": 0,
        "out_dir": "out/train",
    },
    "estimate": {
        "dataset": "",
        "checkpoint": "",
        "seed": 0,
        "out_dir": "out/estimate",
    },
    "bench": {
        "suite": "canonical",
        "systems": ["selkov"],
        "methods": ["enkf"],
        "seeds": [0],
        "seed": 0,
        "ocer_grid": [1.0, 25.0, 50.0, 75.0, 100.0],
        "train_system": "oscillator",
        "eval_system": "hopf",
        "segment_grid": [20, 10, 5],
        "epochs": 10,
        "dataset_seed": 0,
        "resume": False,
        "out_dir": "out/bench",
    },
}


def _load_config_file(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    if p.suffix == ".json":
        return json.loads(p.read_text())
    with open(p, "rb") as fh:
        return tomllib.load(fh)


def _coerce(value: str, like):
    if isinstance(like, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, list):
        items = [v for v in value.split(",") if v]
        return [_coerce(v, like[0]) if like else v for v in items]
    if isinstance(like, dict):
        out = {}
        for pair in value.split(","):
            k, _, v = pair.partition("=")
            out[k] = float(v)
        return out
    return value


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[command])
    if args.config:
        file_cfg = _load_config_file(args.config)
        for key, value in file_cfg.items():
            if key not in cfg:
                raise ConfigError(f"unknown config key {key!r} for {command}")
            cfg[key] = value
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override must be key=value, got {item!r}")
        if key not in cfg:
            raise ConfigError(f"unknown override key {key!r} for {command}")
        cfg[key] = _coerce(value, cfg[key])
    for key in DEFAULTS[command]:
        flag = getattr(args, key.replace("-", "_"), None)
        if flag is not None:
            cfg[key] = flag
    return cfg


def _write_snapshot(cfg: dict, command: str) -> Path:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(
        json.dumps({"command": command, **cfg}, indent=1, default=str)
    )
    return out


def _save_estimates(out: Path, name: str, arr: np.ndarray) -> None:
    np.save(out / f"{name}.npy", arr.astype("<f8"))


def cmd_generate(cfg: dict) -> int:
    out = _write_snapshot(cfg, "generate")
    sys_model = make_system(cfg["system"], cfg["overrides"] or None)
    ds = generate_dataset(
        sys_model,
        n_traj=cfg["n_traj"],
        traj_len=cfg["traj_len"],
        master_seed=cfg["seed"],
        overrides=cfg["overrides"],
    )
    save_dataset(ds, out / "dataset")
    print(f"wrote dataset to {out / 'dataset'}", file=sys.stderr)
    return 0


def _require_dataset(cfg: dict):
    if not cfg["dataset"]:
        raise ConfigError("dataset path required (expected a dataset directory)")
    path = Path(cfg["dataset"])
    if not path.exists():
        raise ConfigError(f"dataset not found at expected location {path}")
    return load_dataset(path)


def cmd_filter(cfg: dict) -> int:
    out = _write_snapshot(cfg, "filter")
    ds = _require_dataset(cfg)
    if cfg["method"] not in FILTER_NAMES:
        raise ConfigError(f"method must be one of {FILTER_NAMES}")
    fcfg = FilterConfig(
        n_ensemble=cfg["n_ensemble"],
        n_particles=cfg["n_particles"],
        inflation=cfg["inflation"],
    )
    from .bayes import run_filter
    from .bench import DEFAULT_WARMUP

    sys_model = make_system(ds.system_name, ds.gen_config.get("overrides") or None)
    records = []
    for i, traj in enumerate(ds.by_split("test")):
        est, ms = run_filter(cfg["method"], traj, sys_model, fcfg, seed=cfg["seed"] + i)
        _save_estimates(out, f"estimates_{i:03d}", est)
        records.append(
            {
                "trajectory": i,
                "rmse": rmse(traj.states[DEFAULT_WARMUP:], est[DEFAULT_WARMUP:]),
                "runtime_ms_per_step": ms,
            }
        )
    (out / "report.json").write_text(json.dumps(records, indent=1))
    print(f"filtered {len(records)} test trajectories -> {out}", file=sys.stderr)
    return 0


def cmd_train(cfg: dict) -> int:
    out = _write_snapshot(cfg, "train")
    if cfg["dataset"]:
        ds = _require_dataset(cfg)
    elif cfg["system"]:
        ds = generate_dataset(make_system(cfg["system"]), master_seed=cfg["seed"])
    else:
        raise ConfigError("either dataset or system is required")
    run_cfg = NeuralRunConfig(
        variant=cfg["variant"],
        backbone=cfg["backbone"],
        window_len=cfg["window_len"],
        segment_len=cfg["segment_len"],
        d_model=cfg["d_model"],
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        lr=cfg["lr"],
        weight_decay=cfg["weight_decay"],
        freeze_backbone=cfg["freeze_backbone"],
    )
    from .neural import NeuralFilterModel, train as train_model
    from .bench import context_builder

    sys_model = make_system(ds.system_name)
    model = NeuralFilterModel(
        run_cfg.hyper(sys_model.obs_dim, sys_model.state_dim), seed=cfg["seed"]
    )
    ctx = (
        context_builder(ds, run_cfg.window_len, seed=cfg["seed"])
        if cfg["variant"] == "llm-filter"
        else None
    )
    model, curve = train_model(model, ds, ctx, run_cfg.train_config(), seed=cfg["seed"])
    save_checkpoint(
        model,
        out / "checkpoint",
        extra={
            "system": ds.system_name,
            "variant": cfg["variant"],
            "context": "present" if ctx is not None else "absent",
            "seed": cfg["seed"],
        },
    )
    (out / "loss_curve.json").write_text(json.dumps(curve, indent=1))
    print(f"trained {cfg['variant']} on {ds.system_name} -> {out}", file=sys.stderr)
    return 0


def cmd_estimate(cfg: dict) -> int:
    out = _write_snapshot(cfg, "estimate")
    ds = _require_dataset(cfg)
    if not cfg["checkpoint"]:
        raise ConfigError("checkpoint path required")
    ckpt = Path(cfg["checkpoint"])
    if not ckpt.exists():
        raise ConfigError(f"checkpoint not found at expected location {ckpt}")
    model, header = load_checkpoint(ckpt)
    run_cfg = NeuralRunConfig(
        variant=header["extra"].get("variant", "llm-filter-o"),
        window_len=model.hp.window_len,
    )
    ctx = (
        evaluation_context(ds, run_cfg, cfg["seed"])
        if header["extra"].get("context") == "present"
        else None
    )
    warmup = model.hp.window_len - 1
    records = []
    for i, traj in enumerate(ds.by_split("test")):
        est, ms = estimate_trajectory(model, ctx, traj)
        _save_estimates(out, f"estimates_{i:03d}", est)
        records.append(
            {
                "trajectory": i,
                "rmse": rmse(traj.states[warmup:], est[warmup:]),
                "runtime_ms_per_step": ms,
            }
        )
    (out / "report.json").write_text(json.dumps(records, indent=1))
    print(f"estimated {len(records)} test trajectories -> {out}", file=sys.stderr)
    return 0


def cmd_bench(cfg: dict) -> int:
    out = _write_snapshot(cfg, "bench")
    existing = None
    if cfg["resume"] and (out / "report.json").exists():
        existing = load_report(out)
    neural_cfg = NeuralRunConfig(epochs=cfg["epochs"])
    suite = cfg["suite"]
    if suite == "canonical":
        datasets = {
            s: generate_dataset(make_system(s), master_seed=cfg["dataset_seed"])
            for s in cfg["systems"]
        }
        report = run_canonical(
            datasets, cfg["methods"], cfg["seeds"], existing, neural_cfg
        )
    elif suite == "mismatch":
        ds = generate_dataset(
            make_system(cfg["systems"][0]), master_seed=cfg["dataset_seed"]
        )
        report = run_mismatch(
            ds, cfg["ocer_grid"], cfg["methods"], cfg["seed"], existing, neural_cfg
        )
    elif suite == "cross-system":
        train_ds = generate_dataset(
            make_system(cfg["train_system"]), master_seed=cfg["dataset_seed"]
        )
        eval_ds = generate_dataset(
            make_system(cfg["eval_system"]), master_seed=cfg["dataset_seed"] + 1
        )
        report = run_cross_system(
            train_ds, eval_ds, NEURAL_METHODS, cfg["seed"], existing, neural_cfg
        )
    elif suite == "ablation":
        datasets = {
            s: generate_dataset(make_system(s), master_seed=cfg["dataset_seed"])
            for s in cfg["systems"]
        }
        report = run_ablation_backbones(
            datasets, seed=cfg["seed"], existing=existing, neural_cfg=neural_cfg
        )
    elif suite == "sensitivity":
        ds = generate_dataset(
            make_system(cfg["systems"][0]), master_seed=cfg["dataset_seed"]
        )
        grid = [{"segment_len": s, "epochs": cfg["epochs"]} for s in cfg["segment_grid"]]
        report = run_sensitivity(ds, grid, cfg["seed"], existing)
    else:
        raise ConfigError(f"unknown suite {suite!r}")
    emit_report(report, out)
    print(f"wrote {len(report.records)} records -> {out}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="filterlab", description=__doc__.splitlines()[0]
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML or JSON config file")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="override a config key (repeatable)",
        )
        p.add_argument("--out-dir", dest="out_dir", help="output directory")
        p.add_argument("--seed", type=int, help="master RNG seed")

    p = sub.add_parser("generate", help="simulate and write a dataset")
    common(p)
    p.add_argument("--system", choices=SYSTEM_NAMES, help="system name (default selkov)")
    p.add_argument("--n-traj", dest="n_traj", type=int, help="trajectory count (default 100)")
    p.add_argument("--traj-len", dest="traj_len", type=int, help="steps per trajectory (default 200)")

    p = sub.add_parser("filter", help="run a Bayes filter over a dataset's test split")
    common(p)
    p.add_argument("--dataset", help="dataset directory")
    p.add_argument("--method", choices=FILTER_NAMES, help="filter (default enkf)")
    p.add_argument("--n-ensemble", dest="n_ensemble", type=int, help="EnKF members (default 1000)")
    p.add_argument("--n-particles", dest="n_particles", type=int, help="PF particles (default 1000)")
    p.add_argument("--inflation", type=float, help="assumed-Q inflation (default 1)")

    p = sub.add_parser("train", help="train a neural filter")
    common(p)
    p.add_argument("--dataset", help="dataset directory")
    p.add_argument("--system", choices=SYSTEM_NAMES, help="generate a default dataset for this system")
    p.add_argument("--variant", choices=NEURAL_METHODS, help="llm-filter (SaP) or llm-filter-o (default)")
    p.add_argument("--backbone", help="transformer (default) | mlp | rnn | identity")
    p.add_argument("--window-len", dest="window_len", type=int, help="window length T (default 40)")
    p.add_argument("--segment-len", dest="segment_len", type=int, help="segment length L (default 20)")
    p.add_argument("--epochs", type=int, help="training epochs (default 10)")

    p = sub.add_parser("estimate", help="run a trained model over a dataset's test split")
    common(p)
    p.add_argument("--dataset", help="dataset directory")
    p.add_argument("--checkpoint", help="checkpoint directory")

    p = sub.add_parser("bench", help="run an experiment suite")
    common(p)
    p.add_argument(
        "--suite",
        choices=("canonical", "mismatch", "cross-system", "ablation", "sensitivity"),
        help="experiment suite (default canonical)",
    )
    p.add_argument("--systems", help="comma-separated system names")
    p.add_argument("--methods", help="comma-separated methods")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--train-system", dest="train_system", help="cross-system source")
    p.add_argument("--eval-system", dest="eval_system", help="cross-system target")
    p.add_argument("--epochs", type=int, help="neural training epochs (default 10)")
    p.add_argument("--resume", action="store_const", const=True, help="reuse existing report cells")
    return parser


_COMMANDS = {
    "generate": cmd_generate,
    "filter": cmd_filter,
    "train": cmd_train,
    "estimate": cmd_estimate,
    "bench": cmd_bench,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # Comma-separated list flags resolve against list-typed defaults.
    for key in ("systems", "methods", "seeds"):
        raw = getattr(args, key, None)
        if isinstance(raw, str):
            setattr(args, key, _coerce(raw, DEFAULTS["bench"][key]))
    try:
        cfg = resolve_config(args.command, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
