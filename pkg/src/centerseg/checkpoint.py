"""Binary checkpoints with a version tag, length field and SHA-256 checksum.

Layout: ``MAGIC | u32 version | u64 payload length | 32-byte sha256 | payload``
where the payload is an uncompressed ``.npz`` archive holding every tensor
plus a JSON metadata blob.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .errors import CheckpointError

MAGIC = b"CSEGCKPT"
VERSION = 1
_HEAD = struct.Struct("<8sIQ32s")


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    step: int = 0
    optimizer: dict[str, np.ndarray] = field(default_factory=dict)
    optimizer_t: dict[str, int] = field(default_factory=dict)
    rng_state: dict | None = None
    vocab: list[str] = field(default_factory=list)
    version: int = VERSION


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    meta = {
        "version": ckpt.version,
        "config": ckpt.config.to_dict(),
        "step": ckpt.step,
        "optimizer_t": ckpt.optimizer_t,
        "rng_state": ckpt.rng_state,
        "vocab": ckpt.vocab,
        "params": sorted(ckpt.params),
        "optimizer": sorted(ckpt.optimizer),
    }
    arrays = {f"param/{k}": v for k, v in ckpt.params.items()}
    arrays.update({f"optim/{k}": v for k, v in ckpt.optimizer.items()})
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    payload = buf.getvalue()
    head = _HEAD.pack(MAGIC, VERSION, len(payload), hashlib.sha256(payload).digest())
    tmp = Path(path).with_suffix(Path(path).suffix + ".tmp")
    tmp.write_bytes(head + payload)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < _HEAD.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, length, digest = _HEAD.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if version != VERSION:
        raise CheckpointError(f"{path}: version {version}, this build reads {VERSION}")
    payload = raw[_HEAD.size:]
    if len(payload) != length:
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, header says {length}")
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch")
    with np.load(io.BytesIO(payload)) as z:
        meta = json.loads(z["meta"].tobytes().decode())
        params = {k: z[f"param/{k}"] for k in meta["params"]}
        optim = {k: z[f"optim/{k}"] for k in meta["optimizer"]}
    return Checkpoint(
        config=ModelConfig.from_dict(meta["config"]),
        params=params,
        step=meta["step"],
        optimizer=optim,
        optimizer_t=meta["optimizer_t"],
        rng_state=meta["rng_state"],
        vocab=meta["vocab"],
        version=meta["version"],
    )
