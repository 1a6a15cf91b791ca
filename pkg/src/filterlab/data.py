"""Dataset generation, chronological splitting, and on-disk persistence.

A dataset is a list of simulated trajectories split 7:1:2 (train/val/test)
in generation order, with per-channel state statistics computed on the
train split only. On disk it is a directory holding a JSON manifest and one
little-endian float64 binary per array, checksummed for corruption
detection.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .systems import SystemModel, Trajectory, make_system, sample_initial, simulate

MANIFEST_VERSION = 1
SPLIT_RATIO = (7, 1, 2)


@dataclass
class TrajectoryDataset:
    system_name: str
    trajectories: list[Trajectory]
    split: list[str]  # per-trajectory: "train" | "val" | "test"
    state_stats: tuple[np.ndarray, np.ndarray]  # per-channel (mean, std)
    gen_config: dict = field(default_factory=dict)

    def by_split(self, which: str) -> list[Trajectory]:
        return [t for t, s in zip(self.trajectories, self.split) if s == which]


def _split_labels(n_traj: int) -> list[str]:
    n_train = math.floor(n_traj * SPLIT_RATIO[0] / sum(SPLIT_RATIO))
    n_val = math.floor(n_traj * SPLIT_RATIO[1] / sum(SPLIT_RATIO))
    n_test = n_traj - n_train - n_val
    return ["train"] * n_train + ["val"] * n_val + ["test"] * n_test


def _train_stats(
    trajectories: list[Trajectory], split: list[str]
) -> tuple[np.ndarray, np.ndarray]:
    states = np.concatenate(
        [t.states for t, s in zip(trajectories, split) if s == "train"], axis=0
    )
    return states.mean(axis=0), np.maximum(states.std(axis=0), 1e-6)


def generate_dataset(
    sys: SystemModel,
    n_traj: int = 100,
    traj_len: int = 200,
    master_seed: int = 0,
    overrides: dict | None = None,
) -> TrajectoryDataset:
    """Simulate `n_traj` trajectories with per-trajectory derived seeds."""
    if n_traj < 10:
        raise ValueError("n_traj must be >= 10 so all splits are non-empty")
    children = np.random.SeedSequence(master_seed).spawn(n_traj)
    trajectories = []
    for i, child in enumerate(children):
        init_ss, sim_ss = child.spawn(2)
        x0 = sample_initial(sys, np.random.default_rng(init_ss))
        sim_seed = int(sim_ss.generate_state(1)[0])
        try:
            trajectories.append(simulate(sys, x0, traj_len, sim_seed))
        except Exception as exc:
            raise RuntimeError(f"trajectory {i} failed: {exc}") from exc
    split = _split_labels(n_traj)
    return TrajectoryDataset(
        system_name=sys.name,
        trajectories=trajectories,
        split=split,
        state_stats=_train_stats(trajectories, split),
        gen_config={
            "system": sys.name,
            "n_traj": n_traj,
            "traj_len": traj_len,
            "master_seed": master_seed,
            "overrides": dict(overrides or {}),
            "ocer": 1.0,
        },
    )


def apply_mismatch(
    ds: TrajectoryDataset, ocer: float, seed: int = 0
) -> TrajectoryDataset:
    """Regenerate observation noise with covariance scaled by `ocer`.

    States and split labels are untouched; only y = h(x) + noise is redrawn,
    so filters configured with the base R experience a covariance mismatch.
    """
    if ocer < 1.0:
        raise ValueError("ocer must be >= 1")
    sys = make_system(ds.system_name, ds.gen_config.get("overrides") or None)
    from .systems import chol_psd  # local import to avoid cycle at module load

    lr = chol_psd(ocer * sys.obs_cov)
    children = np.random.SeedSequence(seed).spawn(len(ds.trajectories))
    redrawn = []
    for traj, child in zip(ds.trajectories, children):
        rng = np.random.default_rng(child)
        obs = traj.states @ sys.obs_matrix.T + rng.standard_normal(
            (len(traj), sys.obs_dim)
        ) @ lr.T
        redrawn.append(
            Trajectory(states=traj.states, observations=obs, seed=traj.seed)
        )
    cfg = dict(ds.gen_config)
    cfg["ocer"] = float(ocer)
    cfg["mismatch_seed"] = seed
    return TrajectoryDataset(
        system_name=ds.system_name,
        trajectories=redrawn,
        split=list(ds.split),
        state_stats=ds.state_stats,
        gen_config=cfg,
    )


def _checksum(data: bytes) -> str:
    return f"{zlib.crc32(data):08x}"


def _array_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def save_dataset(ds: TrajectoryDataset, path: str | Path) -> None:
    """Write the dataset directory: manifest.json plus raw float64 arrays."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, traj in enumerate(ds.trajectories):
        files = {}
        for kind, arr in (("states", traj.states), ("observations", traj.observations)):
            fname = f"traj{i:04d}_{kind}.f64"
            blob = _array_bytes(arr)
            (path / fname).write_bytes(blob)
            files[kind] = {
                "file": fname,
                "shape": list(arr.shape),
                "checksum": _checksum(blob),
            }
        entries.append({"seed": traj.seed, "split": ds.split[i], **files})
    manifest = {
        "version": MANIFEST_VERSION,
        "system": ds.system_name,
        "gen_config": ds.gen_config,
        "state_mean": ds.state_stats[0].tolist(),
        "state_std": ds.state_stats[1].tolist(),
        "trajectories": entries,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1))


class DatasetFormatError(RuntimeError):
    pass


def _load_array(path: Path, entry: dict) -> np.ndarray:
    blob = (path / entry["file"]).read_bytes()
    if _checksum(blob) != entry["checksum"]:
        raise DatasetFormatError(f"checksum mismatch in {entry['file']}")
    shape = tuple(entry["shape"])
    expected = int(np.prod(shape)) * 8
    if len(blob) != expected:
        raise DatasetFormatError(
            f"{entry['file']}: expected {expected} bytes, found {len(blob)}"
        )
    return np.frombuffer(blob, dtype="<f8").reshape(shape).copy()


def load_dataset(path: str | Path) -> TrajectoryDataset:
    path = Path(path)
    manifest_file = path / "manifest.json"
    if not manifest_file.exists():
        raise FileNotFoundError(f"no dataset manifest at {manifest_file}")
    manifest = json.loads(manifest_file.read_text())
    if manifest.get("version") != MANIFEST_VERSION:
        raise DatasetFormatError(
            f"unsupported manifest version {manifest.get('version')!r} "
            f"(this reader supports {MANIFEST_VERSION})"
        )
    trajectories = []
    split = []
    for entry in manifest["trajectories"]:
        trajectories.append(
            Trajectory(
                states=_load_array(path, entry["states"]),
                observations=_load_array(path, entry["observations"]),
                seed=entry["seed"],
            )
        )
        split.append(entry["split"])
    return TrajectoryDataset(
        system_name=manifest["system"],
        trajectories=trajectories,
        split=split,
        state_stats=(
            np.array(manifest["state_mean"]),
            np.array(manifest["state_std"]),
        ),
        gen_config=manifest["gen_config"],
    )
