"""Training loop and whole-trajectory inference for the neural filter."""

from __future__ import annotations

import copy
import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from ..data import TrajectoryDataset
from ..systems import Trajectory
from .model import NeuralFilterModel
from .sap import SaPContext
from .windows import make_windows, window_anchors


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 16
    lr: float = 1e-4
    weight_decay: float = 1e-5
    freeze_backbone: bool = False
    stride: int = 1
    # Observation-noise augmentation: with probability `noise_aug_prob` a
    # training batch gets extra observation noise at a std scale drawn
    # log-uniformly from [1, noise_aug_max] times the nominal noise level,
    # teaching the model to fall back on segment statistics when the
    # observation channel is much noisier than assumed.
    noise_aug_prob: float = 0.5
    noise_aug_max: float = 10.0


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


def _observation_noise_std(data: TrajectoryDataset) -> torch.Tensor:
    """Per-channel observation noise level measured on the train split.

    Observations are linear in the state for every system here, so the
    channel-wise residual y - h(x) is exactly the observation noise when the
    observed channels coincide with state channels; where they do not, the
    residual std still bounds the noise scale used for augmentation.
    """
    from ..systems import make_system

    sys = make_system(data.system_name, data.gen_config.get("overrides") or None)
    resid = np.concatenate(
        [
            traj.observations - traj.states @ sys.obs_matrix.T
            for traj in data.by_split("train")
        ]
    )
    return torch.as_tensor(resid.std(axis=0), dtype=torch.float32)


def _stack_windows(trajectories, window_len: int, stride: int):
    obs, targets = [], []
    for traj in trajectories:
        wb = make_windows(traj, window_len, stride)
        obs.append(wb.obs_windows)
        targets.append(wb.state_targets)
    return (
        torch.as_tensor(np.concatenate(obs), dtype=torch.float32),
        torch.as_tensor(np.concatenate(targets), dtype=torch.float32),
    )


def window_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of ||X - X_hat||^2 / T."""
    t = pred.shape[1]
    return ((pred - target) ** 2).sum(dim=(1, 2)).mean() / t


def _resolve_ctx(ctx, epoch: int) -> SaPContext | None:
    if ctx is None or isinstance(ctx, SaPContext):
        return ctx
    return ctx(epoch)  # callable: fresh example rendering per epoch


def train(
    model: NeuralFilterModel,
    data: TrajectoryDataset,
    ctx: SaPContext | None = None,
    cfg: TrainConfig | None = None,
    seed: int = 0,
) -> tuple[NeuralFilterModel, dict]:
    """Train embed/context/backbone/project heads on the train split.

    `ctx` may be a fixed context, None (context-free variant), or a callable
    epoch -> SaPContext for per-epoch example refresh. Returns the model
    restored to its best-validation checkpoint plus the loss curve.
    """
    cfg = cfg or TrainConfig()
    mean, std = data.state_stats
    model.set_state_stats(mean, std)
    t = model.hp.window_len

    train_obs, train_tgt = _stack_windows(data.by_split("train"), t, cfg.stride)
    val_obs, val_tgt = _stack_windows(data.by_split("val"), t, cfg.stride)
    if train_obs.shape[0] == 0 or val_obs.shape[0] == 0:
        raise ValueError("empty train or validation split")
    noise_std = _observation_noise_std(data)
    mean_t = torch.as_tensor(mean, dtype=torch.float32)
    std_t = torch.as_tensor(std, dtype=torch.float32)
    train_tgt = (train_tgt - mean_t) / std_t
    val_tgt = (val_tgt - mean_t) / std_t

    params = [
        {"params": list(model.embed.parameters())
         + list(model.context_table.parameters())
         + list(model.project.parameters())}
    ]
    if not cfg.freeze_backbone:
        params.append({"params": list(model.backbone.parameters())})
    optimizer = torch.optim.AdamW(
        params, lr=cfg.lr, weight_decay=cfg.weight_decay
    )

    gen = torch.Generator().manual_seed(seed)
    curve = {"train": [], "val": []}
    best_val = float("inf")
    best_state = copy.deepcopy(model.state_dict())

    val_loss = _evaluate(model, val_obs, val_tgt, _resolve_ctx(ctx, 0), cfg)
    curve["val"].append(val_loss)
    best_val = val_loss

    for epoch in range(cfg.epochs):
        epoch_ctx = _resolve_ctx(ctx, epoch)
        model.train()
        order = torch.randperm(train_obs.shape[0], generator=gen)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch_obs = train_obs[idx]
            if (
                cfg.noise_aug_prob > 0
                and torch.rand((), generator=gen).item() < cfg.noise_aug_prob
            ):
                scale = math.exp(
                    torch.rand((), generator=gen).item()
                    * math.log(cfg.noise_aug_max)
                )
                batch_obs = batch_obs + scale * noise_std * torch.randn(
                    batch_obs.shape, generator=gen
                )
            pred = model.forward_standardized(batch_obs, epoch_ctx)
            loss = window_loss(pred, train_tgt[idx])
            if not torch.isfinite(loss):
                raise TrainingDiverged(epoch, n_batches)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item()
            n_batches += 1
        curve["train"].append(epoch_loss / n_batches)
        val_loss = _evaluate(model, val_obs, val_tgt, epoch_ctx, cfg)
        curve["val"].append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_state = copy.deepcopy(model.state_dict())

    model.load_state_dict(best_state)
    model.eval()
    return model, curve


@torch.no_grad()
def _evaluate(model, obs, tgt, ctx, cfg) -> float:
    model.eval()
    total = 0.0
    for start in range(0, obs.shape[0], 256):
        pred = model.forward_standardized(obs[start : start + 256], ctx)
        total += window_loss(pred, tgt[start : start + 256]).item() * pred.shape[0]
    return total / obs.shape[0]


@torch.no_grad()
def estimate_trajectory(
    model: NeuralFilterModel,
    ctx: SaPContext | None,
    traj: Trajectory,
) -> tuple[np.ndarray, float]:
    """Tile a trajectory with non-overlapping windows and estimate states.

    Windows advance by stride T; a final overlapping window covers any
    trailing remainder (its later estimates, which see more observations,
    win the overlap). Every step receives exactly one estimate.
    Returns (estimates, ms per step over the forward passes).
    """
    model.eval()
    t = model.hp.window_len
    anchors = list(window_anchors(len(traj), t, t))
    tail = len(traj) - 1
    if anchors[-1] != tail:
        anchors.append(tail)
    obs = torch.as_tensor(
        np.stack([traj.observations[a - t + 1 : a + 1] for a in anchors]),
        dtype=torch.float32,
    )
    t0 = time.perf_counter()
    pred = model(obs, ctx).numpy().astype(float)
    elapsed = time.perf_counter() - t0

    estimates = np.empty((len(traj), model.hp.state_dim))
    for i, a in enumerate(anchors):
        estimates[a - t + 1 : a + 1] = pred[i]
    return estimates, 1000.0 * elapsed / len(traj)
