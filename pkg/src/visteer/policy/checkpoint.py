"""Flat binary checkpoint format.

Layout: magic "VSCK" | u32 version | u32 header length | header JSON |
payload.  The header records the policy config, its hash, and a tensor
table (name, shape, element offset); the payload is the concatenation of
all tensors as little-endian float32 in table order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from ..errors import CheckpointError
from .model import PolicyConfig, VisuomotorPolicy

MAGIC = b"VSCK"
VERSION = 1


def save_checkpoint(path: str | Path, model: VisuomotorPolicy) -> None:
    tensors = []
    payload = bytearray()
    offset = 0
    for name, param in model.state_dict().items():
        arr = param.detach().cpu().numpy().astype("<f4")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payload.extend(arr.tobytes())
        offset += arr.size
    header = {
        "config": model.cfg.to_dict(),
        "config_hash": model.cfg.config_hash(),
        "dtype": "f32-le",
        "tensors": tensors,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(blob)))
        f.write(blob)
        f.write(bytes(payload))


def load_checkpoint(path: str | Path) -> tuple[PolicyConfig, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, header_len = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    if len(raw) < 12 + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12 : 12 + header_len])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    cfg = PolicyConfig.from_dict(header["config"])
    if cfg.config_hash() != header["config_hash"]:
        raise CheckpointError(f"{path}: config hash mismatch")
    payload = np.frombuffer(raw[12 + header_len :], dtype="<f4")
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        chunk = payload[entry["offset"] : entry["offset"] + size]
        if chunk.size != size:
            raise CheckpointError(f"{path}: truncated payload at {entry['name']}")
        tensors[entry["name"]] = chunk.reshape(shape).copy()
    return cfg, tensors


def load_policy(path: str | Path) -> VisuomotorPolicy:
    cfg, tensors = load_checkpoint(path)
    model = VisuomotorPolicy(cfg)
    state = {name: torch.from_numpy(arr) for name, arr in tensors.items()}
    missing = set(model.state_dict()) - set(state)
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)}")
    model.load_state_dict(state)
    model.eval()
    return model
