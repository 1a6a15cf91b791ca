"""Metrics and experiment drivers: RMSE/runtime records over grids of
(system, method, seed) cells, with mismatch, cross-system, backbone, and
sensitivity sweeps. Reports carry a config hash per cell so partial grids
can resume without recomputation.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bayes import FILTER_NAMES, FilterConfig, run_filter
from .data import TrajectoryDataset, apply_mismatch, generate_dataset
from .neural import (
    HyperParams,
    NeuralFilterModel,
    TrainConfig,
    build_sap_context,
    estimate_trajectory,
    train,
)
from .neural.sap import sample_training_examples
from .systems import make_system

SCHEMA_VERSION = 1
CSV_COLUMNS = (
    "system",
    "method",
    "variant",
    "seed",
    "rmse",
    "runtime_ms_per_step",
    "status",
    "config_hash",
)
INFLATION_GRID = (1.0, 2.0, 5.0, 10.0, 20.0)
DEFAULT_WARMUP = 39  # window_len - 1 for the default window of 40
NEURAL_METHODS = ("llm-filter", "llm-filter-o")


def rmse(truth: np.ndarray, est: np.ndarray, per_element: bool = True) -> float:
    """Root mean squared estimation error.

    Per-element (default) divides the summed squared error by T*M; the
    literal per-step variant divides by T only.
    """
    truth = np.asarray(truth, dtype=float)
    est = np.asarray(est, dtype=float)
    if truth.shape != est.shape:
        raise ValueError(f"shape mismatch: {truth.shape} vs {est.shape}")
    denom = truth.size if per_element else truth.shape[0]
    return float(np.sqrt(np.sum((truth - est) ** 2) / denom))


@dataclass
class BenchmarkReport:
    records: list[dict] = field(default_factory=list)
    created_at: str = field(
        default_factory=lambda: time.strftime("%Y-%m-%dT%H:%M:%S")
    )
    toolkit_version: str = __version__

    def has(self, config_hash: str) -> bool:
        return any(r["config_hash"] == config_hash for r in self.records)

    def add(self, record: dict) -> None:
        self.records.append(record)


def config_hash(cell: dict) -> str:
    blob = json.dumps(cell, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _record(cell: dict, **fields) -> dict:
    rec = {
        "system": cell.get("system"),
        "method": cell.get("method"),
        "variant": cell.get("variant", ""),
        "seed": cell.get("seed", 0),
        "rmse": None,
        "runtime_ms_per_step": None,
        "status": "ok",
        "config_hash": config_hash(cell),
        "cell": cell,
    }
    rec.update(fields)
    return rec


def default_dataset(system: str, master_seed: int = 0) -> TrajectoryDataset:
    return generate_dataset(make_system(system), master_seed=master_seed)


# ---------------------------------------------------------------------------
# Bayes-filter evaluation


def evaluate_bayes(
    ds: TrajectoryDataset,
    filter_name: str,
    cfg: FilterConfig | None = None,
    seed: int = 0,
    split: str = "test",
    warmup: int = DEFAULT_WARMUP,
) -> tuple[float, float]:
    """Mean per-trajectory RMSE and median ms/step on a dataset split.

    The filter always assumes the base system's noise covariances, so a
    mismatched dataset (ocer > 1) is evaluated without telling the filter.
    """
    sys = make_system(ds.system_name, ds.gen_config.get("overrides") or None)
    trajs = ds.by_split(split)
    errors, runtimes = [], []
    for i, traj in enumerate(trajs):
        est, ms = run_filter(filter_name, traj, sys, cfg, seed=seed + i)
        errors.append(rmse(traj.states[warmup:], est[warmup:]))
        runtimes.append(ms)
    return float(np.mean(errors)), float(np.median(runtimes))


def tune_inflation(
    ds: TrajectoryDataset,
    filter_name: str,
    grid=INFLATION_GRID,
    seed: int = 0,
    base_cfg: FilterConfig | None = None,
) -> float:
    """Pick the process-covariance inflation minimizing validation RMSE."""
    best, best_rmse = grid[0], float("inf")
    for inflation in grid:
        cfg = FilterConfig(
            n_ensemble=(base_cfg or FilterConfig()).n_ensemble,
            n_particles=(base_cfg or FilterConfig()).n_particles,
            inflation=inflation,
        )
        err, _ = evaluate_bayes(ds, filter_name, cfg, seed=seed, split="val")
        if err < best_rmse:
            best, best_rmse = inflation, err
    return best


# ---------------------------------------------------------------------------
# Neural-filter training + evaluation


@dataclass
class NeuralRunConfig:
    variant: str = "llm-filter-o"  # "llm-filter" uses SaP context
    backbone: str = "transformer"
    window_len: int = 40
    segment_len: int = 20
    d_model: int = 256
    head_hidden: int = 512
    head_depth: int = 2
    n_layers: int = 4
    n_heads: int = 4
    epochs: int = 10
    batch_size: int = 16
    lr: float = 1e-4
    weight_decay: float = 1e-5
    freeze_backbone: bool = False
    stride: int = 1

    def hyper(self, obs_dim: int, state_dim: int) -> HyperParams:
        return HyperParams(
            obs_dim=obs_dim,
            state_dim=state_dim,
            window_len=self.window_len,
            segment_len=self.segment_len,
            d_model=self.d_model,
            head_hidden=self.head_hidden,
            head_depth=self.head_depth,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            backbone=self.backbone,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            weight_decay=self.weight_decay,
            freeze_backbone=self.freeze_backbone,
            stride=self.stride,
        )


def context_builder(ds: TrajectoryDataset, window_len: int, seed: int = 0):
    """Per-epoch SaP context factory: fixed instruction, fresh examples."""
    sys = make_system(ds.system_name)

    def build(epoch: int):
        rng = np.random.default_rng(np.random.SeedSequence((seed, epoch)))
        examples = sample_training_examples(ds, window_len, rng)
        return build_sap_context(sys, examples)

    return build


def train_neural(
    ds: TrajectoryDataset, run_cfg: NeuralRunConfig, seed: int = 0
) -> tuple[NeuralFilterModel, object]:
    """Train one neural-filter variant on a dataset.

    Returns (model, eval_context). The SaP variant trains with per-epoch
    example refresh and evaluates with a fixed context for its own system;
    the -O variant trains and evaluates context-free.
    """
    sys = make_system(ds.system_name)
    m, n = sys.state_dim, sys.obs_dim
    model = NeuralFilterModel(run_cfg.hyper(n, m), seed=seed)
    ctx = None
    if run_cfg.variant == "llm-filter":
        ctx = context_builder(ds, run_cfg.window_len, seed=seed)
    elif run_cfg.variant != "llm-filter-o":
        raise ValueError(f"unknown variant {run_cfg.variant!r}")
    model, _ = train(model, ds, ctx, run_cfg.train_config(), seed=seed)
    eval_ctx = evaluation_context(ds, run_cfg, seed) if ctx is not None else None
    return model, eval_ctx


def evaluation_context(ds: TrajectoryDataset, run_cfg: NeuralRunConfig, seed: int):
    """Fixed SaP context for evaluation on (possibly another) system."""
    sys = make_system(ds.system_name)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xE7A1)))
    examples = sample_training_examples(ds, run_cfg.window_len, rng)
    return build_sap_context(sys, examples)


def evaluate_neural(
    model: NeuralFilterModel,
    ctx,
    ds: TrajectoryDataset,
    warmup: int | None = None,
) -> tuple[float, float]:
    """Mean test-split RMSE and median ms/step, excluding warm-up steps."""
    if warmup is None:
        warmup = model.hp.window_len - 1
    trajs = ds.by_split("test")
    estimate_trajectory(model, ctx, trajs[0])  # discarded warm pass
    errors, runtimes = [], []
    for traj in trajs:
        est, ms = estimate_trajectory(model, ctx, traj)
        errors.append(rmse(traj.states[warmup:], est[warmup:]))
        runtimes.append(ms)
    return float(np.mean(errors)), float(np.median(runtimes))


# ---------------------------------------------------------------------------
# Experiment drivers


def _is_linear(system: str) -> bool:
    return system == "tracking"


def run_canonical(
    datasets: dict[str, TrajectoryDataset],
    methods: list[str],
    seeds: list[int] = (0, 1, 2),
    existing: BenchmarkReport | None = None,
    neural_cfg: NeuralRunConfig | None = None,
    tune: bool = True,
) -> BenchmarkReport:
    """RMSE/runtime grid over (system, method, seed)."""
    report = existing or BenchmarkReport()
    for system, ds in datasets.items():
        for method in methods:
            for seed in seeds:
                cell = {
                    "suite": "canonical",
                    "system": system,
                    "method": method,
                    "seed": seed,
                    "gen": ds.gen_config,
                }
                if report.has(config_hash(cell)):
                    continue
                if method == "kf" and not _is_linear(system):
                    report.add(
                        _record(cell, status="not-applicable")
                    )
                    continue
                try:
                    if method in FILTER_NAMES:
                        cfg = FilterConfig()
                        if tune and method in ("enkf", "pf"):
                            cfg.inflation = tune_inflation(ds, method, seed=seed)
                        err, ms = evaluate_bayes(ds, method, cfg, seed=seed)
                        extra = {"inflation": cfg.inflation}
                    elif method in NEURAL_METHODS:
                        cfg = neural_cfg or NeuralRunConfig()
                        cfg = NeuralRunConfig(**{**cfg.__dict__, "variant": method})
                        model, ctx = train_neural(ds, cfg, seed=seed)
                        err, ms = evaluate_neural(model, ctx, ds)
                        extra = {"backbone": cfg.backbone}
                    else:
                        raise ValueError(f"unknown method {method!r}")
                    report.add(
                        _record(
                            cell,
                            rmse=err,
                            runtime_ms_per_step=ms,
                            n_test_traj=len(ds.by_split("test")),
                            excluded_warmup_steps=DEFAULT_WARMUP,
                            **{"detail": extra},
                        )
                    )
                except Exception as exc:  # failed cells recorded, grid continues
                    report.add(_record(cell, status=f"failed: {exc}"))
    return report


def run_mismatch(
    ds: TrajectoryDataset,
    ocer_grid=(1.0, 25.0, 50.0, 75.0, 100.0),
    methods=("enkf", "llm-filter-o"),
    seed: int = 0,
    existing: BenchmarkReport | None = None,
    neural_cfg: NeuralRunConfig | None = None,
) -> BenchmarkReport:
    """Observation-covariance mismatch sweep on one system.

    Neural filters are trained once on the matched (ocer=1) data; Bayes
    filters assume the base R throughout.
    """
    report = existing or BenchmarkReport()
    trained: dict[str, tuple] = {}
    for method in methods:
        if method in NEURAL_METHODS:
            cfg = neural_cfg or NeuralRunConfig()
            cfg = NeuralRunConfig(**{**cfg.__dict__, "variant": method})
            trained[method] = train_neural(ds, cfg, seed=seed)
    for ocer in ocer_grid:
        swept = ds if ocer == 1.0 else apply_mismatch(ds, ocer, seed=seed)
        for method in methods:
            cell = {
                "suite": "mismatch",
                "system": ds.system_name,
                "method": method,
                "seed": seed,
                "ocer": ocer,
                "gen": ds.gen_config,
            }
            if report.has(config_hash(cell)):
                continue
            try:
                if method in NEURAL_METHODS:
                    model, ctx = trained[method]
                    err, ms = evaluate_neural(model, ctx, swept)
                else:
                    err, ms = evaluate_bayes(swept, method, seed=seed)
                report.add(
                    _record(
                        cell,
                        rmse=err,
                        runtime_ms_per_step=ms,
                        detail={"ocer": ocer},
                    )
                )
            except Exception as exc:
                report.add(_record(cell, status=f"failed: {exc}"))
    return report


def run_cross_system(
    train_ds: TrajectoryDataset,
    eval_ds: TrajectoryDataset,
    variants=NEURAL_METHODS,
    seed: int = 0,
    existing: BenchmarkReport | None = None,
    neural_cfg: NeuralRunConfig | None = None,
) -> BenchmarkReport:
    """Train on one system, evaluate on another of the same dimensions.

    The SaP variant's evaluation context is rebuilt for the target system;
    same-system controls are recorded alongside.
    """
    t_sys = make_system(train_ds.system_name)
    e_sys = make_system(eval_ds.system_name)
    if (t_sys.state_dim, t_sys.obs_dim) != (e_sys.state_dim, e_sys.obs_dim):
        raise ValueError(
            f"dimension mismatch: {train_ds.system_name} is "
            f"({t_sys.state_dim},{t_sys.obs_dim}), {eval_ds.system_name} is "
            f"({e_sys.state_dim},{e_sys.obs_dim})"
        )
    report = existing or BenchmarkReport()
    for variant in variants:
        cfg = NeuralRunConfig(
            **{**(neural_cfg or NeuralRunConfig()).__dict__, "variant": variant}
        )
        model, _ = train_neural(train_ds, cfg, seed=seed)
        for label, target in (
            (f"{train_ds.system_name}->{eval_ds.system_name}", eval_ds),
            (f"{train_ds.system_name}->{train_ds.system_name}", train_ds),
        ):
            cell = {
                "suite": "cross-system",
                "system": label,
                "method": variant,
                "variant": variant,
                "seed": seed,
                "gen": target.gen_config,
            }
            if report.has(config_hash(cell)):
                continue
            try:
                ctx = (
                    evaluation_context(target, cfg, seed)
                    if variant == "llm-filter"
                    else None
                )
                err, ms = evaluate_neural(model, ctx, target)
                report.add(_record(cell, rmse=err, runtime_ms_per_step=ms))
            except Exception as exc:
                report.add(_record(cell, status=f"failed: {exc}"))
    return report


def run_ablation_backbones(
    datasets: dict[str, TrajectoryDataset],
    backbones=("transformer", "mlp", "rnn", "identity"),
    seed: int = 0,
    existing: BenchmarkReport | None = None,
    neural_cfg: NeuralRunConfig | None = None,
) -> BenchmarkReport:
    """Backbone sweep with identical heads and training settings."""
    report = existing or BenchmarkReport()
    for system, ds in datasets.items():
        for backbone in backbones:
            cell = {
                "suite": "ablation-backbone",
                "system": system,
                "method": "llm-filter-o",
                "variant": backbone,
                "seed": seed,
                "gen": ds.gen_config,
            }
            if report.has(config_hash(cell)):
                continue
            try:
                cfg = NeuralRunConfig(
                    **{
                        **(neural_cfg or NeuralRunConfig()).__dict__,
                        "variant": "llm-filter-o",
                        "backbone": backbone,
                    }
                )
                model, ctx = train_neural(ds, cfg, seed=seed)
                err, ms = evaluate_neural(model, ctx, ds)
                report.add(
                    _record(
                        cell,
                        rmse=err,
                        runtime_ms_per_step=ms,
                        detail={"backbone": backbone},
                    )
                )
            except Exception as exc:
                report.add(_record(cell, status=f"failed: {exc}"))
    return report


def run_sensitivity(
    ds: TrajectoryDataset,
    grid: list[dict] | None = None,
    seed: int = 0,
    existing: BenchmarkReport | None = None,
) -> BenchmarkReport:
    """Hyperparameter sweep; default is the segment-length grid at T=40."""
    if grid is None:
        grid = [{"segment_len": s} for s in (20, 10, 5)]
    report = existing or BenchmarkReport()
    for params in grid:
        cell = {
            "suite": "sensitivity",
            "system": ds.system_name,
            "method": "llm-filter-o",
            "seed": seed,
            "params": params,
            "gen": ds.gen_config,
        }
        if report.has(config_hash(cell)):
            continue
        try:
            cfg = NeuralRunConfig(**{**NeuralRunConfig().__dict__, **params})
            model, ctx = train_neural(ds, cfg, seed=seed)
            err, ms = evaluate_neural(model, ctx, ds)
            report.add(
                _record(
                    cell, rmse=err, runtime_ms_per_step=ms, detail=params
                )
            )
        except Exception as exc:
            report.add(_record(cell, status=f"failed: {exc}"))
    return report


# ---------------------------------------------------------------------------
# Report I/O


def emit_report(report: BenchmarkReport, path: str | Path) -> None:
    """Write CSV (stable columns), JSON (full provenance), and plot TSV."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in report.records:
            writer.writerow([rec.get(col, "") for col in CSV_COLUMNS])
    payload = {
        "schema_version": SCHEMA_VERSION,
        "created_at": report.created_at,
        "toolkit_version": report.toolkit_version,
        "records": report.records,
    }
    (path / "report.json").write_text(json.dumps(payload, indent=1))
    with open(path / "plotdata.tsv", "w") as fh:
        fh.write("system\tmethod\tvariant\tparam\tvalue\trmse\truntime_ms_per_step\n")
        for rec in report.records:
            detail = rec.get("detail") or {}
            param, value = ("", "")
            if detail:
                param, value = next(iter(detail.items()))
            fh.write(
                f"{rec['system']}\t{rec['method']}\t{rec['variant']}\t"
                f"{param}\t{value}\t{rec['rmse']}\t{rec['runtime_ms_per_step']}\n"
            )


def load_report(path: str | Path) -> BenchmarkReport:
    payload = json.loads((Path(path) / "report.json").read_text())
    if payload.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(
            f"unsupported report schema {payload.get('schema_version')!r}"
        )
    return BenchmarkReport(
        records=payload["records"],
        created_at=payload["created_at"],
        toolkit_version=payload["toolkit_version"],
    )
