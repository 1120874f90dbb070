"""``OLNN`` network checkpoints.

Layout: magic ``OLNN``, u32 version, u32 header length, UTF-8 JSON header
(layer descriptors, parameter names and shapes, optional Adam step count),
then f32 little-endian parameters in header order, then the Adam first and
second moments in the same order when present.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .nn_engine import AdamOptimizer, LayerSpec, Network
from .pipeline import atomic_write

CHECKPOINT_MAGIC = b"OLNN"
CHECKPOINT_VERSION = 1
_PREAMBLE = struct.Struct("<4sII")


class CheckpointFormatError(ValueError):
    """Raised for malformed or truncated network checkpoints."""


def _f32_bytes(tensor: torch.Tensor) -> bytes:
    return np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype="<f4").tobytes()


def save_checkpoint(
    path: str | Path,
    net: Network,
    optimizer: Optional[AdamOptimizer] = None,
    *,
    metadata: Optional[dict] = None,
) -> Path:
    path = Path(path)
    named = list(net.named_parameters())
    header = {
        "layers": net.describe(),
        "params": [{"name": name, "shape": list(param.shape)} for name, param in named],
        "adam": None,
        "metadata": metadata or {},
    }
    chunks = [_f32_bytes(param) for _, param in named]
    if optimizer is not None:
        state = optimizer.torch_optimizer.state
        header["adam"] = {"t": optimizer.t, "learning_rate": optimizer.learning_rate}
        for _, param in named:
            moments = state.get(param, {})
            chunks.append(_f32_bytes(moments.get("exp_avg", torch.zeros_like(param))))
        for _, param in named:
            moments = state.get(param, {})
            chunks.append(_f32_bytes(moments.get("exp_avg_sq", torch.zeros_like(param))))
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    def _write(tmp_path: Path) -> None:
        with tmp_path.open("wb") as handle:
            handle.write(_PREAMBLE.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header_bytes)))
            handle.write(header_bytes)
            for chunk in chunks:
                handle.write(chunk)

    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write(path, _write)
    return path


def load_checkpoint(
    path: str | Path,
    *,
    dtype: torch.dtype = torch.float32,
) -> tuple[Network, Optional[AdamOptimizer], dict]:
    """Rebuild the network (and Adam state when stored); returns ``(net, optimizer, metadata)``."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _PREAMBLE.size:
        raise CheckpointFormatError(f"{path}: file too short for a checkpoint.")
    magic, version, header_len = _PREAMBLE.unpack_from(raw, 0)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}.")
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported checkpoint version {version}.")
    offset = _PREAMBLE.size
    try:
        header = json.loads(raw[offset : offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: unreadable header: {exc}") from exc
    offset += header_len
    try:
        net = Network([LayerSpec.from_dict(item) for item in header["layers"]]).to(dtype)
    except (KeyError, ValueError) as exc:
        raise CheckpointFormatError(f"{path}: invalid layer descriptors: {exc}") from exc
    named = list(net.named_parameters())
    stored = [(item["name"], tuple(item["shape"])) for item in header["params"]]
    expected = [(name, tuple(param.shape)) for name, param in named]
    if stored != expected:
        raise CheckpointFormatError(f"{path}: parameter table does not match the layer descriptors.")
    sizes = [int(np.prod(shape)) for _, shape in stored]
    n_blocks = 3 if header.get("adam") else 1
    needed = offset + 4 * sum(sizes) * n_blocks
    if len(raw) != needed:
        raise CheckpointFormatError(f"{path}: payload is {len(raw)} bytes, expected {needed}.")

    def _read_block() -> list[torch.Tensor]:
        nonlocal offset
        out = []
        for (_, shape), size in zip(stored, sizes):
            values = np.frombuffer(raw, dtype="<f4", count=size, offset=offset).reshape(shape)
            out.append(torch.as_tensor(values.copy(), dtype=dtype))
            offset += 4 * size
        return out

    with torch.no_grad():
        for (_, param), values in zip(named, _read_block()):
            param.copy_(values)
    optimizer = None
    adam = header.get("adam")
    if adam:
        optimizer = AdamOptimizer(net, float(adam.get("learning_rate", 0.0)))
        optimizer.t = int(adam.get("t", 0))
        first = _read_block()
        second = _read_block()
        for (_, param), m, v in zip(named, first, second):
            optimizer.torch_optimizer.state[param] = {
                "step": torch.tensor(float(optimizer.t)),
                "exp_avg": m,
                "exp_avg_sq": v,
            }
    return net, optimizer, header.get("metadata", {})
