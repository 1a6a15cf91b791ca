"""Dynamical system definitions, discretization, and trajectory simulation.

Seven stochastic state-space models are available by name: a linear
constant-velocity tracking model, four low-dimensional nonlinear systems
(selkov, oscillator, hopf, pendulum), and two 72-dimensional chaotic
atmospheric models (lorenz96, vl20). Each is a continuous ODE discretized
with forward Euler or RK4, with additive Gaussian process and observation
noise applied per discrete step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

SYSTEM_NAMES = (
    "tracking",
    "selkov",
    "oscillator",
    "hopf",
    "pendulum",
    "lorenz96",
    "vl20",
)

# Application domain per system, used by the prompt builder.
SYSTEM_DOMAINS = {
    "tracking": "Target Tracking",
    "selkov": "Glycolysis Process",
    "oscillator": "Oscillatory Motion",
    "hopf": "Chemical Reactions",
    "pendulum": "Physical Dynamics",
    "lorenz96": "Atmospheric Dynamics",
    "vl20": "Atmospheric Dynamics",
}


class SimulationDivergence(RuntimeError):
    """State became non-finite during simulation."""

    def __init__(self, step: int):
        super().__init__(f"state diverged (non-finite) at step {step}")
        self.step = step


@dataclass(frozen=True)
class SystemModel:
    """A discretized stochastic state-space model.

    ``drift`` is the continuous-time right-hand side; the discrete one-step
    map is obtained from it via :func:`step_deterministic`. Observations are
    linear: ``y = obs_matrix @ x + noise``.
    """

    name: str
    state_dim: int
    obs_dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    obs_matrix: np.ndarray
    process_cov: np.ndarray
    obs_cov: np.ndarray
    dt: float
    discretization: str  # "euler" or "rk4"
    init_mean: np.ndarray
    # Per-step process-noise covariance is step_noise_scale * process_cov.
    # The nominal covariances of the nonlinear RK4 systems are far too hot for
    # a step of dt=0.01 (the cubic systems overflow within a few hundred
    # steps), so each system carries a calibrated per-step scale.
    step_noise_scale: float = 1.0
    init_mean_jitter_std: float = 0.0
    burn_in: int = 0
    constants: dict = field(default_factory=dict)
    # Continuous-time transition matrix for linear systems (exact Jacobians).
    drift_matrix: np.ndarray | None = None

    def observe(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.obs_matrix.T

    @property
    def step_process_cov(self) -> np.ndarray:
        """Effective per-step process-noise covariance."""
        return self.step_noise_scale * self.process_cov


@dataclass(frozen=True)
class Trajectory:
    """Simulated (state, observation) pair sequence with its RNG seed."""

    states: np.ndarray  # (T, M)
    observations: np.ndarray  # (T, N)
    seed: int

    def __len__(self) -> int:
        return self.states.shape[0]


def _check_psd(mat: np.ndarray, label: str) -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{label} must be a square matrix")
    if not np.allclose(mat, mat.T, atol=1e-12):
        raise ValueError(f"{label} must be symmetric")
    eigs = np.linalg.eigvalsh(mat)
    if eigs.min() < -1e-10 * max(1.0, abs(eigs.max())):
        raise ValueError(f"{label} must be positive semi-definite")
    return mat


def chol_psd(mat: np.ndarray) -> np.ndarray:
    """Cholesky-like factor L with L @ L.T == mat for PSD (possibly singular) mat."""
    mat = np.asarray(mat, dtype=float)
    if not mat.any():
        return np.zeros_like(mat)
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(mat)
        w = np.clip(w, 0.0, None)
        return v * np.sqrt(w)


# Drift functions act on the last axis so ensembles propagate in one call.


def _tracking_builder(c: dict) -> dict:
    a = np.zeros((4, 4))
    a[0, 2] = 1.0
    a[1, 3] = 1.0
    h = np.zeros((2, 4))
    h[0, 0] = 1.0
    h[1, 1] = 1.0
    return dict(
        state_dim=4,
        obs_dim=2,
        drift=lambda x: x @ a.T,
        drift_matrix=a,
        obs_matrix=h,
        process_cov=0.1 * np.eye(4),
        obs_cov=10.0 * np.eye(2),
        dt=0.1,
        discretization="euler",
        init_mean=np.zeros(4),
    )


def _selkov_builder(c: dict) -> dict:
    a, b = c["a"], c["b"]

    def drift(x):
        t1, t2 = x[..., 0], x[..., 1]
        return np.stack(
            [-t1 + a * t2 + t1 * t1 * t2, b - a * t2 - t1 * t1 * t2], axis=-1
        )

    return dict(
        state_dim=2,
        obs_dim=2,
        drift=drift,
        obs_matrix=np.eye(2),
        process_cov=np.eye(2),
        obs_cov=np.eye(2),
        dt=0.01,
        discretization="rk4",
        init_mean=np.array([1.0, 1.0]),
        step_noise_scale=0.2,
    )


def _oscillator_builder(c: dict) -> dict:
    a, b = c["a"], c["b"]

    def drift(x):
        t1, t2 = x[..., 0], x[..., 1]
        return np.stack(
            [-a * t1**3 + b * t2**3, -b * t1**3 - a * t2**3], axis=-1
        )

    return dict(
        state_dim=2,
        obs_dim=2,
        drift=drift,
        obs_matrix=np.eye(2),
        process_cov=np.eye(2),
        obs_cov=np.eye(2),
        dt=0.01,
        discretization="rk4",
        init_mean=np.array([1.0, 1.0]),
        step_noise_scale=0.2,
    )


def _hopf_builder(c: dict) -> dict:
    mu, omega, amp = c["mu"], c["omega"], c["A"]

    def drift(x):
        t1, t2 = x[..., 0], x[..., 1]
        r2 = t1 * t1 + t2 * t2
        return np.stack(
            [mu * t1 + omega * t2 - amp * t1 * r2,
             -omega * t1 + mu * t2 - amp * t2 * r2],
            axis=-1,
        )

    return dict(
        state_dim=2,
        obs_dim=2,
        drift=drift,
        obs_matrix=np.eye(2),
        process_cov=np.eye(2),
        obs_cov=np.eye(2),
        dt=0.01,
        discretization="rk4",
        init_mean=np.array([1.0, 1.0]),
        step_noise_scale=0.2,
    )


def _pendulum_builder(c: dict) -> dict:
    m1, m2, l1, l2, g = c["M1"], c["M2"], c["L1"], c["L2"], c["G"]

    def drift(x):
        th1, w1, th2, w2 = (x[..., i] for i in range(4))
        d = th2 - th1
        sd, cd = np.sin(d), np.cos(d)
        den1 = (m1 + m2) * l1 - m2 * l1 * cd * cd
        dw1 = (
            m2 * l1 * w1 * w1 * sd * cd
            + m2 * g * np.sin(th2) * cd
            + m2 * l2 * w2 * w2 * sd
            - (m1 + m2) * g * np.sin(th1)
        ) / den1
        dw2 = (
            -m2 * l2 * w2 * w2 * sd * cd
            + (m1 + m2) * g * np.sin(th1) * cd
            - (m1 + m2) * l1 * w1 * w1 * sd
            - (m1 + m2) * g * np.sin(th2)
        ) / ((l2 / l1) * den1)
        return np.stack([w1, dw1, w2, dw2], axis=-1)

    h = np.zeros((2, 4))
    h[0, 0] = 1.0
    h[1, 2] = 1.0
    return dict(
        state_dim=4,
        obs_dim=2,
        drift=drift,
        obs_matrix=h,
        process_cov=np.eye(4),
        obs_cov=np.eye(2),
        dt=0.01,
        discretization="rk4",
        init_mean=np.array([math.pi / 2, 0.0, math.pi / 2, 0.0]),
        step_noise_scale=0.01,
        burn_in=500,
    )


def _lorenz96_builder(c: dict) -> dict:
    f = c["F"]
    m = int(c["M"])

    def drift(x):
        return (
            (np.roll(x, -1, axis=-1) - np.roll(x, 2, axis=-1))
            * np.roll(x, 1, axis=-1)
            - x
            + f
        )

    return dict(
        state_dim=m,
        obs_dim=m,
        drift=drift,
        obs_matrix=np.eye(m),
        process_cov=np.eye(m),
        obs_cov=100.0 * np.eye(m),
        dt=0.01,
        discretization="rk4",
        init_mean=np.full(m, float(f)),
        init_mean_jitter_std=0.1,
        burn_in=500,
    )


def _vl20_builder(c: dict) -> dict:
    f, g, gamma, eps = c["F"], c["G"], c["gamma"], c["eps"]
    mp = int(c["Mp"])

    def drift(x):
        phi, theta = x[..., :mp], x[..., mp:]
        dphi = (
            (np.roll(phi, -1, axis=-1) - np.roll(phi, 2, axis=-1))
            * np.roll(phi, 1, axis=-1)
            - gamma * phi
            - eps * theta
            + f
        )
        dtheta = (
            np.roll(phi, -1, axis=-1) * np.roll(theta, -2, axis=-1)
            - np.roll(phi, 1, axis=-1) * np.roll(theta, 2, axis=-1)
            + eps * phi
            - gamma * theta
            + g
        )
        return np.concatenate([dphi, dtheta], axis=-1)

    m = 2 * mp
    return dict(
        state_dim=m,
        obs_dim=m,
        drift=drift,
        obs_matrix=np.eye(m),
        process_cov=np.eye(m),
        obs_cov=np.eye(m),
        dt=0.01,
        discretization="rk4",
        init_mean=np.full(m, float(f)),
        init_mean_jitter_std=0.1,
        burn_in=500,
    )


_DEFAULT_CONSTANTS = {
    "tracking": {},
    "selkov": {"a": 0.08, "b": 0.6},
    "oscillator": {"a": 0.1, "b": 2.0},
    "hopf": {"mu": 0.5, "omega": 1.0, "A": 1.0},
    "pendulum": {"M1": 1.0, "M2": 1.0, "L1": 1.0, "L2": 1.0, "G": 9.8},
    "lorenz96": {"F": 8.0, "M": 72},
    "vl20": {"F": 10.0, "G": 0.0, "gamma": 1.0, "eps": 1.0, "Mp": 36},
}

_BUILDERS = {
    "tracking": _tracking_builder,
    "selkov": _selkov_builder,
    "oscillator": _oscillator_builder,
    "hopf": _hopf_builder,
    "pendulum": _pendulum_builder,
    "lorenz96": _lorenz96_builder,
    "vl20": _vl20_builder,
}

# Override keys that scale or replace defaults after building.
_GENERIC_OVERRIDES = (
    "dt",
    "q_scale",
    "r_scale",
    "process_cov",
    "obs_cov",
    "step_noise_scale",
)


def make_system(name: str, overrides: dict | None = None) -> SystemModel:
    """Build a named system at its default configuration.

    ``overrides`` may adjust system constants (e.g. ``a``, ``b``, ``F``),
    the step size ``dt``, noise scales ``q_scale``/``r_scale``, or replace
    ``process_cov``/``obs_cov`` outright. Unknown keys are rejected.
    """
    if name not in _BUILDERS:
        raise ValueError(f"unknown system {name!r}; known: {SYSTEM_NAMES}")
    overrides = dict(overrides or {})
    constants = dict(_DEFAULT_CONSTANTS[name])
    for key in list(overrides):
        if key in constants:
            constants[key] = overrides.pop(key)
    spec = _BUILDERS[name](constants)
    for key in list(overrides):
        if key not in _GENERIC_OVERRIDES:
            raise ValueError(f"unknown override {key!r} for system {name!r}")
    if "dt" in overrides:
        spec["dt"] = float(overrides["dt"])
        if spec["dt"] <= 0:
            raise ValueError("dt must be positive")
    if "q_scale" in overrides:
        spec["process_cov"] = float(overrides["q_scale"]) * spec["process_cov"]
    if "r_scale" in overrides:
        spec["obs_cov"] = float(overrides["r_scale"]) * spec["obs_cov"]
    if "process_cov" in overrides:
        spec["process_cov"] = np.asarray(overrides["process_cov"], dtype=float)
    if "obs_cov" in overrides:
        spec["obs_cov"] = np.asarray(overrides["obs_cov"], dtype=float)
    if "step_noise_scale" in overrides:
        spec["step_noise_scale"] = float(overrides["step_noise_scale"])
        if spec["step_noise_scale"] < 0:
            raise ValueError("step_noise_scale must be non-negative")
    _check_psd(spec["process_cov"], "process_cov")
    _check_psd(spec["obs_cov"], "obs_cov")
    return SystemModel(name=name, constants=constants, **spec)


def step_deterministic(sys: SystemModel, x: np.ndarray) -> np.ndarray:
    """Noise-free one-step map f(x) under the system's discretization."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise SimulationDivergence(0)
    dt = sys.dt
    # Overflow shows up as a SimulationDivergence below; the numpy warning
    # on the way there is redundant noise.
    with np.errstate(over="ignore", invalid="ignore"):
        if sys.discretization == "euler":
            out = x + dt * sys.drift(x)
        elif sys.discretization == "rk4":
            k1 = sys.drift(x)
            k2 = sys.drift(x + 0.5 * dt * k1)
            k3 = sys.drift(x + 0.5 * dt * k2)
            k4 = sys.drift(x + dt * k3)
            out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        else:
            raise ValueError(f"unknown discretization {sys.discretization!r}")
    if not np.all(np.isfinite(out)):
        raise SimulationDivergence(0)
    return out


def sample_initial(sys: SystemModel, rng: np.random.Generator) -> np.ndarray:
    """Draw x0 ~ N(mu0, I) and run the noise-free burn-in, if any."""
    mu = sys.init_mean.copy()
    if sys.init_mean_jitter_std > 0:
        mu = mu + rng.normal(0.0, sys.init_mean_jitter_std, size=mu.shape)
    x0 = rng.normal(mu, 1.0)
    for _ in range(sys.burn_in):
        x0 = step_deterministic(sys, x0)
    return x0


def simulate(
    sys: SystemModel, x0: np.ndarray, n_steps: int, seed: int
) -> Trajectory:
    """Simulate `n_steps` of the noisy state-space model from x0.

    Process and observation noise come from independent sub-streams of the
    seed, so the same seed always reproduces the same trajectory bit for bit.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise SimulationDivergence(0)
    proc_ss, obs_ss = np.random.SeedSequence(seed).spawn(2)
    proc_rng = np.random.default_rng(proc_ss)
    obs_rng = np.random.default_rng(obs_ss)
    lq = chol_psd(sys.step_process_cov)
    lr = chol_psd(sys.obs_cov)

    m, n = sys.state_dim, sys.obs_dim
    states = np.empty((n_steps, m))
    states[0] = x0
    for t in range(1, n_steps):
        try:
            nxt = step_deterministic(sys, states[t - 1])
        except SimulationDivergence:
            raise SimulationDivergence(t) from None
        nxt = nxt + lq @ proc_rng.standard_normal(m)
        if not np.all(np.isfinite(nxt)):
            raise SimulationDivergence(t)
        states[t] = nxt
    observations = states @ sys.obs_matrix.T + obs_rng.standard_normal(
        (n_steps, n)
    ) @ lr.T
    return Trajectory(states=states, observations=observations, seed=seed)


def _linear_discrete_map(sys: SystemModel) -> np.ndarray:
    """Exact discrete transition matrix for linear drift."""
    a = sys.drift_matrix * sys.dt
    m = np.eye(sys.state_dim)
    if sys.discretization == "euler":
        return m + a
    # RK4 applied to a linear field is the degree-4 Taylor polynomial of expm.
    term = np.eye(sys.state_dim)
    for k in range(1, 5):
        term = term @ a / k
        m = m + term
    return m


def jacobians(sys: SystemModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians (F_x, H_x) of the discrete step map and observation map at x.

    Linear systems get exact matrices; nonlinear ones use central finite
    differences with relative step sqrt(eps) * max(|x_i|, 1).
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite state")
    h_x = sys.obs_matrix.copy()
    if sys.drift_matrix is not None:
        return _linear_discrete_map(sys), h_x
    m = sys.state_dim
    f_x = np.empty((m, m))
    for i in range(m):
        h = math.sqrt(np.finfo(float).eps) * max(abs(x[i]), 1.0)
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        f_x[:, i] = (step_deterministic(sys, xp) - step_deterministic(sys, xm)) / (
            2.0 * h
        )
    if not np.all(np.isfinite(f_x)):
        raise ValueError("non-finite Jacobian")
    return f_x, h_x
