"""Self-describing on-disk model checkpoints.

A checkpoint is a directory with a JSON header (hyperparameters,
normalization statistics, backbone kind, byte-order marker), a manifest of
parameter names/shapes/offsets, and a single little-endian float32 blob
holding all parameter blocks in manifest order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .model import HyperParams, NeuralFilterModel

FORMAT_VERSION = 1


class CheckpointFormatError(RuntimeError):
    pass


def save_checkpoint(
    model: NeuralFilterModel, path: str | Path, extra: dict | None = None
) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = []
    blobs = []
    offset = 0
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        blob = np.ascontiguousarray(arr).tobytes()
        manifest.append(
            {"name": name, "shape": list(arr.shape), "offset": offset}
        )
        blobs.append(blob)
        offset += len(blob)
    header = {
        "version": FORMAT_VERSION,
        "byte_order": "little",
        "dtype": "float32",
        "backbone": model.hp.backbone,
        "hyper": model.config_dict(),
        "state_mean": model.state_mean.tolist(),
        "state_std": model.state_std.tolist(),
        "extra": dict(extra or {}),
    }
    (path / "header.json").write_text(json.dumps(header, indent=1))
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1))
    (path / "params.bin").write_bytes(b"".join(blobs))


def load_checkpoint(path: str | Path) -> tuple[NeuralFilterModel, dict]:
    """Rebuild a model from a checkpoint directory; returns (model, header)."""
    path = Path(path)
    header = json.loads((path / "header.json").read_text())
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointFormatError(
            f"unsupported checkpoint version {header.get('version')!r}"
        )
    if header.get("byte_order") != "little":
        raise CheckpointFormatError("unsupported byte order")
    manifest = json.loads((path / "manifest.json").read_text())
    blob = (path / "params.bin").read_bytes()
    model = NeuralFilterModel(HyperParams(**header["hyper"]))
    state = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=start)
        state[entry["name"]] = torch.as_tensor(arr.copy()).reshape(shape)
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointFormatError(f"manifest/params mismatch: {exc}") from exc
    model.eval()
    return model, header
