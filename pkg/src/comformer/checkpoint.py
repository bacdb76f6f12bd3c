"""Checkpoint directories.

Layout::

    manifest.json   config, parameter names/shapes/offsets, seed, step, epoch
    params.bin      every parameter as little-endian float64, manifest order
    optimizer.bin   optional AdamW first then second moments, same order

Files are written with sorted keys and fixed formatting so identical runs
produce identical bytes.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ComFormerModel, ModelConfig, parameter_shapes
from .optim import OptimizerState
from .tensor import Tensor

FORMAT = "comformer-checkpoint/1"
MANIFEST = "manifest.json"
PARAMS = "params.bin"
OPTIMIZER = "optimizer.bin"
_LE = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: ComFormerModel
    step: int = 0
    epoch: int = 0
    optimizer: OptimizerState | None = None
    extra: dict | None = None


def save_checkpoint(
    directory: str | Path,
    model: ComFormerModel,
    step: int = 0,
    epoch: int = 0,
    optimizer: OptimizerState | None = None,
    extra: dict | None = None,
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(directory / PARAMS, "wb") as f:
        for name, p in model.params.items():
            f.write(np.ascontiguousarray(p.data, dtype=_LE).tobytes())
            entries.append({"name": name, "shape": list(p.shape), "offset": offset})
            offset += p.size
    manifest = {
        "format": FORMAT,
        "config": model.config.to_dict(),
        "seed": model.config.seed,
        "step": step,
        "epoch": epoch,
        "parameter_count": offset,
        "parameters": entries,
        "extra": extra or {},
    }
    opt_path = directory / OPTIMIZER
    if optimizer is not None and optimizer.m:
        manifest["optimizer"] = {
            "lr": optimizer.lr,
            "weight_decay": optimizer.weight_decay,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "eps": optimizer.eps,
            "step": optimizer.step,
        }
        with open(opt_path, "wb") as f:
            for arr in list(optimizer.m) + list(optimizer.v):
                f.write(np.ascontiguousarray(arr, dtype=_LE).tobytes())
    elif opt_path.exists():
        opt_path.unlink()
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return directory


def _read_floats(path: Path, count: int) -> np.ndarray:
    data = np.fromfile(path, dtype=_LE)
    if data.size != count:
        raise CheckpointError(f"{path}: expected {count} values, found {data.size}")
    return data.astype(np.float64)


def load_checkpoint(directory: str | Path) -> Checkpoint:
    """Rebuild the model (and optimizer state when present).

    Raises:
        CheckpointError: If the manifest disagrees with its configuration or
            the binary files have the wrong size.
    """
    directory = Path(directory)
    try:
        manifest = json.loads((directory / MANIFEST).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CheckpointError(f"{directory}: no {MANIFEST}") from None
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{directory}: unsupported format {manifest.get('format')!r}")
    config = ModelConfig.from_dict(manifest["config"])
    expected = parameter_shapes(config)
    listed = [(e["name"], tuple(e["shape"])) for e in manifest["parameters"]]
    if listed != expected:
        raise CheckpointError(f"{directory}: parameter shapes do not match the stored configuration")
    total = sum(int(np.prod(s)) for _, s in expected)
    flat = _read_floats(directory / PARAMS, total)
    params = OrderedDict()
    for entry, (name, shape) in zip(manifest["parameters"], expected):
        start = entry["offset"]
        size = int(np.prod(shape))
        params[name] = Tensor(flat[start : start + size].reshape(shape).copy(), requires_grad=True)
    model = ComFormerModel(config, params)

    optimizer = None
    if "optimizer" in manifest:
        hyper = manifest["optimizer"]
        moments = _read_floats(directory / OPTIMIZER, 2 * total)
        arrays = []
        pos = 0
        for _ in range(2):
            for _, shape in expected:
                size = int(np.prod(shape))
                arrays.append(moments[pos : pos + size].reshape(shape).copy())
                pos += size
        n = len(expected)
        optimizer = OptimizerState(**hyper, m=arrays[:n], v=arrays[n:])
    return Checkpoint(model, manifest["step"], manifest["epoch"], optimizer, manifest.get("extra") or {})
