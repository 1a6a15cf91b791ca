"""filterlab: state-estimation toolkit and benchmark harness.

Classical online Bayes filters (KF, EKF, EnKF, PF) over seven stochastic
dynamical systems, a windowed neural filter with byte-level in-context
system prompts, and drivers reproducing the canonical, mismatch,
cross-system, ablation, and sensitivity experiment protocols.
"""

__version__ = "0.1.0"

from .systems import (
    SYSTEM_NAMES,
    SystemModel,
    Trajectory,
    jacobians,
    make_system,
    sample_initial,
    simulate,
    step_deterministic,
)
from .bayes import (
    FILTER_NAMES,
    Ensemble,
    FilterConfig,
    GaussianBelief,
    ParticleSet,
    ekf_step,
    enkf_step,
    kf_step,
    pf_step,
    run_filter,
)
from .data import (
    TrajectoryDataset,
    apply_mismatch,
    generate_dataset,
    load_dataset,
    save_dataset,
)
from .bench import BenchmarkReport, emit_report, rmse

__all__ = [
    "__version__",
    "SYSTEM_NAMES",
    "SystemModel",
    "Trajectory",
    "make_system",
    "sample_initial",
    "simulate",
    "step_deterministic",
    "jacobians",
    "FILTER_NAMES",
    "GaussianBelief",
    "Ensemble",
    "ParticleSet",
    "FilterConfig",
    "kf_step",
    "ekf_step",
    "enkf_step",
    "pf_step",
    "run_filter",
    "TrajectoryDataset",
    "generate_dataset",
    "apply_mismatch",
    "save_dataset",
    "load_dataset",
    "BenchmarkReport",
    "emit_report",
    "rmse",
]
