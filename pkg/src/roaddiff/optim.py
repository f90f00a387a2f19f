"""Named parameter storage, the Adam update, and checkpoint files.

Checkpoints are a binary blob of little-endian float64 values plus a JSON
manifest that records parameter names, shapes, and byte offsets, so a
saved model round-trips bit-exactly on any platform.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ShapeError
from .tensor import Tensor

MANIFEST_SUFFIX = ".manifest.json"
WEIGHTS_SUFFIX = ".weights.bin"


class ParamStore:
    """Ordered map of named learnable tensors with per-parameter Adam state."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, values) -> Tensor:
        if name in self.params:
            raise ShapeError(f"duplicate parameter name {name!r}")
        t = Tensor(values, requires_grad=True)
        self.params[name] = t
        self._m[name] = np.zeros(t.shape)
        self._v[name] = np.zeros(t.shape)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def gradients(self) -> dict[str, np.ndarray]:
        return {name: t.grad for name, t in self.params.items() if t.grad is not None}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, arr in values.items():
            if name not in self.params:
                raise CheckpointError(f"unknown parameter {name!r} in checkpoint")
            if self.params[name].shape != arr.shape:
                raise CheckpointError(
                    f"shape mismatch for {name!r}: "
                    f"{self.params[name].shape} vs {arr.shape}")
            self.params[name].values = arr.astype(np.float64).copy()

    def n_values(self) -> int:
        return sum(t.size for t in self.params.values())


def adam_step(store: ParamStore, grads: dict[str, np.ndarray] | None = None,
              lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> ParamStore:
    """One Adam update with bias correction; missing grads leave params alone."""
    if grads is None:
        grads = store.gradients()
    store.step_count += 1
    t = store.step_count
    for name, g in grads.items():
        p = store.params[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != param {p.shape} for {name!r}")
        m = store._m[name]
        v = store._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p.values = p.values - lr * m_hat / (np.sqrt(v_hat) + eps)
    return store


def halved_lr(base: float, epoch: int, start: int = 20, every: int = 10) -> float:
    """Learning rate at a 0-based epoch under the halving schedule.

    Full rate through epoch ``start - 1``, then halved entering ``start``
    and halved again every ``every`` epochs after that.
    """
    if epoch < start:
        return base
    return base * 0.5 ** ((epoch - start) // every + 1)


def save_checkpoint(store: ParamStore, prefix: str | Path,
                    extra: dict | None = None) -> tuple[Path, Path]:
    """Write ``<prefix>.weights.bin`` + ``<prefix>.manifest.json``."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    blobs = []
    for name, t in store.params.items():
        raw = np.ascontiguousarray(t.values, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(t.shape),
                        "offset": offset, "count": t.size})
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "format": "roaddiff-checkpoint",
        "version": 1,
        "dtype": "<f8",
        "total_bytes": offset,
        "params": entries,
        "extra": extra or {},
    }
    weights_path = prefix.with_name(prefix.name + WEIGHTS_SUFFIX)
    manifest_path = prefix.with_name(prefix.name + MANIFEST_SUFFIX)
    weights_path.write_bytes(b"".join(blobs))
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return weights_path, manifest_path


def load_checkpoint(prefix: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read back a checkpoint; returns (values by name, manifest)."""
    prefix = Path(prefix)
    weights_path = prefix.with_name(prefix.name + WEIGHTS_SUFFIX)
    manifest_path = prefix.with_name(prefix.name + MANIFEST_SUFFIX)
    if not weights_path.exists() or not manifest_path.exists():
        raise CheckpointError(f"no checkpoint at prefix {prefix}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != "roaddiff-checkpoint":
        raise CheckpointError(f"{manifest_path} is not a checkpoint manifest")
    raw = weights_path.read_bytes()
    if len(raw) != manifest["total_bytes"]:
        raise CheckpointError("weights file size does not match manifest")
    values: dict[str, np.ndarray] = {}
    for entry in manifest["params"]:
        start = entry["offset"]
        stop = start + entry["count"] * 8
        arr = np.frombuffer(raw[start:stop], dtype="<f8").astype(np.float64)
        values[entry["name"]] = arr.reshape(entry["shape"])
    return values, manifest
