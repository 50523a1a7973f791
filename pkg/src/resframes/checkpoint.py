"""Binary checkpoint format.

Layout (little-endian)::

    b"RCLP"  u32 version  u32 tensor_count
    per tensor: u16 name_len, name (UTF-8), u8 rank, u32 extents[rank], f32 payload

Parameters and batchnorm running statistics are stored under their network
names. Optimizer and bookkeeping state use the reserved prefixes
``__optim__/`` (momentum buffers) and ``__meta__/`` (epoch, learning rate,
config digest and config JSON, the latter two as one byte per f32 value).
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"RCLP"
VERSION = 1
OPTIM_PREFIX = "__optim__/"
META_PREFIX = "__meta__/"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    momentum: dict[str, np.ndarray] = field(default_factory=dict)
    epoch: int = 0
    lr: float = 0.0
    config: dict = field(default_factory=dict)
    config_digest: str = ""


def config_digest(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def _bytes_tensor(b: bytes) -> np.ndarray:
    return np.frombuffer(b, dtype=np.uint8).astype(np.float32)


def _tensor_bytes(t: np.ndarray) -> bytes:
    return t.astype(np.uint8).tobytes()


def encode_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise CheckpointError(f"tensor {name!r} cannot be encoded")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(out)


def decode_tensors(buf: bytes, where: str = "<bytes>") -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{where}: bad magic {buf[:4]!r}")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"{where}: truncated at byte {pos}")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"{where}: unsupported version {version}")
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape)
        if name in tensors:
            raise CheckpointError(f"{where}: duplicate tensor {name!r}")
        tensors[name] = data.astype(np.float32)
    if pos != len(buf):
        raise CheckpointError(f"{where}: {len(buf) - pos} trailing bytes")
    return tensors


def save_checkpoint(network, path: str | os.PathLike, epoch: int = 0, lr: float = 0.0,
                    config: dict | None = None) -> None:
    """Write parameters, running stats, momentum buffers and metadata."""
    config = config if config is not None else {"model": network.config.to_dict()}
    tensors: dict[str, np.ndarray] = {}
    params = list(network.named_parameters())
    for name, p in params:
        tensors[name] = p.value
    for name, b in network.named_buffers():
        tensors[name] = b
    for name, p in params:
        tensors[OPTIM_PREFIX + name] = p.momentum_buffer
    digest = config_digest(config)
    tensors[META_PREFIX + "epoch"] = np.array([epoch], np.float32)
    tensors[META_PREFIX + "lr"] = np.array([lr], np.float32)
    tensors[META_PREFIX + "config_digest"] = _bytes_tensor(bytes.fromhex(digest))
    tensors[META_PREFIX + "config_json"] = _bytes_tensor(json.dumps(config, sort_keys=True).encode())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_tensors(tensors))
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    tensors = decode_tensors(Path(path).read_bytes(), str(path))
    meta = {k[len(META_PREFIX):]: v for k, v in tensors.items() if k.startswith(META_PREFIX)}
    momentum = {k[len(OPTIM_PREFIX):]: v for k, v in tensors.items() if k.startswith(OPTIM_PREFIX)}
    rest = {k: v for k, v in tensors.items() if not k.startswith((META_PREFIX, OPTIM_PREFIX))}
    buffers = {k: v for k, v in rest.items() if k.endswith(("running_mean", "running_var"))}
    params = {k: v for k, v in rest.items() if k not in buffers}
    config = json.loads(_tensor_bytes(meta["config_json"]).decode()) if "config_json" in meta else {}
    digest = _tensor_bytes(meta["config_digest"]).hex() if "config_digest" in meta else ""
    if config and digest and config_digest(config) != digest:
        raise CheckpointError(f"{path}: config digest mismatch")
    return Checkpoint(
        params, buffers, momentum,
        int(meta["epoch"][0]) if "epoch" in meta else 0,
        float(meta["lr"][0]) if "lr" in meta else 0.0,
        config, digest,
    )


def apply_checkpoint(network, ckpt: Checkpoint, with_optimizer: bool = True) -> None:
    """Copy checkpoint tensors into a network built from the same config."""
    named = dict(network.named_parameters())
    buffers = dict(network.named_buffers())
    if set(named) != set(ckpt.params):
        missing = sorted(set(named) ^ set(ckpt.params))
        raise CheckpointError(f"parameter names differ from network: {missing[:5]}")
    if set(buffers) != set(ckpt.buffers):
        raise CheckpointError("batchnorm statistics differ from network")
    for name, p in named.items():
        src = ckpt.params[name]
        if src.shape != p.value.shape:
            raise CheckpointError(f"{name}: shape {src.shape} != {p.value.shape}")
        p.value[...] = src
        p.zero_grad()
        if with_optimizer and name in ckpt.momentum:
            p.momentum_buffer[...] = ckpt.momentum[name]
        else:
            p.momentum_buffer.fill(0)
    for name, b in buffers.items():
        b[...] = ckpt.buffers[name]
