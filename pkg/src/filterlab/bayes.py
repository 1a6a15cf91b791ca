"""Online Bayes filters: KF, EKF, EnKF, and bootstrap PF.

Each filter is a pure step function over an explicit belief representation
(Gaussian, ensemble, or weighted particles) plus a `run_filter` driver that
walks a trajectory's observations and records point estimates and runtime.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .systems import (
    SimulationDivergence,
    SystemModel,
    Trajectory,
    chol_psd,
    jacobians,
    step_deterministic,
)

FILTER_NAMES = ("kf", "ekf", "enkf", "pf")


class WeightCollapse(RuntimeError):
    """All particle weights underflowed to zero."""

    def __init__(self, max_loglik: float):
        super().__init__(
            f"particle weights collapsed (max log-likelihood {max_loglik:.3g})"
        )
        self.max_loglik = max_loglik


@dataclass
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray


@dataclass
class Ensemble:
    members: np.ndarray  # (N_e, M)


@dataclass
class ParticleSet:
    particles: np.ndarray  # (N_p, M)
    weights: np.ndarray  # (N_p,)


@dataclass
class FilterConfig:
    """Knobs for `run_filter`."""

    n_ensemble: int = 1000
    n_particles: int = 1000
    inflation: float = 1.0  # multiplier on the filter's assumed Q
    assumed_r_scale: float = 1.0  # multiplier on the filter's assumed R
    repairs: int = field(default=0, init=False)  # covariance repairs seen


def _symmetrize(cov: np.ndarray) -> np.ndarray:
    return 0.5 * (cov + cov.T)


def _repair_cov(cov: np.ndarray, cfg: FilterConfig | None = None) -> np.ndarray:
    """Clip negative eigenvalues to zero and add a small jitter."""
    cov = _symmetrize(cov)
    w = np.linalg.eigvalsh(cov)
    if w.min() >= -1e-8 * max(np.trace(cov), 1.0):
        return cov
    if cfg is not None:
        cfg.repairs += 1
    w, v = np.linalg.eigh(cov)
    w = np.clip(w, 0.0, None)
    return _symmetrize((v * w) @ v.T) + 1e-10 * np.eye(cov.shape[0])


def _assumed_noise(sys: SystemModel, cfg: FilterConfig | None):
    q = sys.step_process_cov
    r = sys.obs_cov
    if cfg is not None:
        q = cfg.inflation * q
        r = cfg.assumed_r_scale * r
    return q, r


def kf_step(
    belief: GaussianBelief,
    y: np.ndarray,
    sys: SystemModel,
    cfg: FilterConfig | None = None,
) -> GaussianBelief:
    """One Kalman predict/update step for a linear system.

    Uses the innovation-form gain K = P H^T (H P H^T + R)^-1, algebraically
    equivalent to the information-form update but better conditioned.
    """
    q, r = _assumed_noise(sys, cfg)
    f, h = jacobians(sys, belief.mean)
    mean_pred = f @ belief.mean
    cov_pred = _symmetrize(f @ belief.cov @ f.T + q)
    return _gaussian_update(mean_pred, cov_pred, h, h @ mean_pred, y, r, cfg)


def ekf_step(
    belief: GaussianBelief,
    y: np.ndarray,
    sys: SystemModel,
    cfg: FilterConfig | None = None,
) -> GaussianBelief:
    """Extended Kalman step: nonlinear mean propagation, linearized covariances."""
    q, r = _assumed_noise(sys, cfg)
    f, _ = jacobians(sys, belief.mean)
    mean_pred = step_deterministic(sys, belief.mean)
    cov_pred = _symmetrize(f @ belief.cov @ f.T + q)
    _, h = jacobians(sys, mean_pred)
    return _gaussian_update(
        mean_pred, cov_pred, h, sys.observe(mean_pred), y, r, cfg
    )


def _gaussian_update(mean_pred, cov_pred, h, y_pred, y, r, cfg):
    s = h @ cov_pred @ h.T + r
    try:
        gain = np.linalg.solve(s, h @ cov_pred).T
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            "singular innovation covariance (degenerate R?)"
        ) from exc
    mean = mean_pred + gain @ (np.asarray(y, dtype=float) - y_pred)
    cov = _repair_cov(cov_pred - gain @ s @ gain.T, cfg)
    return GaussianBelief(mean=mean, cov=cov)


def enkf_step(
    ens: Ensemble,
    y: np.ndarray,
    sys: SystemModel,
    rng: np.random.Generator,
    cfg: FilterConfig | None = None,
) -> Ensemble:
    """Stochastic (perturbed-observation) ensemble Kalman step."""
    members = ens.members
    n_e, m = members.shape
    if n_e < 2:
        raise ValueError("ensemble needs at least 2 members")
    q, r = _assumed_noise(sys, cfg)
    lq = chol_psd(q)
    lr = chol_psd(r)

    pred = step_deterministic(sys, members) + rng.standard_normal((n_e, m)) @ lq.T

    y_pred = pred @ sys.obs_matrix.T + rng.standard_normal(
        (n_e, sys.obs_dim)
    ) @ lr.T
    dx = pred - pred.mean(axis=0)
    dy = y_pred - y_pred.mean(axis=0)
    cov_xy = dx.T @ dy / (n_e - 1)
    var_y = dy.T @ dy / (n_e - 1)
    try:
        gain = np.linalg.solve(var_y.T, cov_xy.T).T
    except np.linalg.LinAlgError:
        # Degenerate ensemble spread: jitter-repair the observation variance.
        lam = 1e-8 * max(np.trace(var_y), 1.0) / var_y.shape[0]
        gain = np.linalg.solve(
            (var_y + lam * np.eye(var_y.shape[0])).T, cov_xy.T
        ).T
        if cfg is not None:
            cfg.repairs += 1
    updated = pred + (np.asarray(y, dtype=float) - y_pred) @ gain.T
    return Ensemble(members=updated)


def systematic_resample(
    weights: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Indices drawn by systematic resampling (single uniform offset)."""
    n = weights.shape[0]
    positions = (rng.random() + np.arange(n)) / n
    return np.searchsorted(np.cumsum(weights), positions)


def pf_step(
    ps: ParticleSet,
    y: np.ndarray,
    sys: SystemModel,
    rng: np.random.Generator,
    cfg: FilterConfig | None = None,
) -> tuple[ParticleSet, np.ndarray]:
    """Bootstrap particle step; returns the resampled set and the weighted
    mean taken before resampling (the point estimate)."""
    parts = ps.particles
    n_p, m = parts.shape
    q, r = _assumed_noise(sys, cfg)
    lq = chol_psd(q)

    prop = step_deterministic(sys, parts) + rng.standard_normal((n_p, m)) @ lq.T

    innov = np.asarray(y, dtype=float) - prop @ sys.obs_matrix.T
    r_inv = np.linalg.inv(r)
    loglik = -0.5 * np.einsum("ij,jk,ik->i", innov, r_inv, innov)
    loglik_max = loglik.max()
    w = np.exp(loglik - loglik_max) * ps.weights
    total = w.sum()
    if not np.isfinite(total) or total <= 0.0:
        raise WeightCollapse(loglik_max)
    w /= total

    estimate = w @ prop
    idx = systematic_resample(w, rng)
    return (
        ParticleSet(particles=prop[idx], weights=np.full(n_p, 1.0 / n_p)),
        estimate,
    )


def run_filter(
    filter_name: str,
    traj: Trajectory,
    sys: SystemModel,
    cfg: FilterConfig | None = None,
    seed: int = 0,
) -> tuple[np.ndarray, float]:
    """Run one filter over a trajectory's observations.

    Returns (estimates, runtime in ms per step). The belief is initialized
    at N(init_mean, I); runtime covers the update loop only.
    """
    if filter_name not in FILTER_NAMES:
        raise ValueError(f"unknown filter {filter_name!r}; known: {FILTER_NAMES}")
    cfg = cfg or FilterConfig()
    n_steps = len(traj)
    rng = np.random.default_rng(seed)
    estimates = np.empty((n_steps, sys.state_dim))

    if filter_name in ("kf", "ekf"):
        belief = GaussianBelief(
            mean=sys.init_mean.copy(), cov=np.eye(sys.state_dim)
        )
        step = kf_step if filter_name == "kf" else ekf_step
        t0 = time.perf_counter()
        for t in range(n_steps):
            try:
                belief = step(belief, traj.observations[t], sys, cfg)
            except (SimulationDivergence, np.linalg.LinAlgError) as exc:
                raise RuntimeError(f"{filter_name} failed at step {t}: {exc}")
            estimates[t] = belief.mean
        elapsed = time.perf_counter() - t0
    elif filter_name == "enkf":
        members = rng.normal(sys.init_mean, 1.0, (cfg.n_ensemble, sys.state_dim))
        ens = Ensemble(members=members)
        t0 = time.perf_counter()
        for t in range(n_steps):
            try:
                ens = enkf_step(ens, traj.observations[t], sys, rng, cfg)
            except SimulationDivergence as exc:
                raise RuntimeError(f"enkf failed at step {t}: {exc}")
            estimates[t] = ens.members.mean(axis=0)
        elapsed = time.perf_counter() - t0
    else:  # pf
        parts = rng.normal(sys.init_mean, 1.0, (cfg.n_particles, sys.state_dim))
        ps = ParticleSet(
            particles=parts, weights=np.full(cfg.n_particles, 1.0 / cfg.n_particles)
        )
        t0 = time.perf_counter()
        for t in range(n_steps):
            try:
                ps, estimates[t] = pf_step(ps, traj.observations[t], sys, rng, cfg)
            except (SimulationDivergence, WeightCollapse) as exc:
                raise RuntimeError(f"pf failed at step {t}: {exc}")
        elapsed = time.perf_counter() - t0

    return estimates, 1000.0 * elapsed / n_steps
