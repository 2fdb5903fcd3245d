"""Named parameter store and the single-file binary checkpoint format.

Layout::

    b"ADUCKPT\\0"  magic
    uint32 LE      format version
    uint64 LE      manifest length N
    N bytes        UTF-8 JSON manifest
    payload        raw little-endian tensors, in manifest order
    blob           opaque optimizer state

The manifest lists each tensor's name, shape, dtype, offset and size, the
epoch counter, the optimizer blob size and a SHA-256 over payload + blob.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

MAGIC = b"ADUCKPT\0"
VERSION = 1

_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
}
_TORCH = {v: k for k, v in _DTYPES.items()}


class CheckpointError(RuntimeError):
    pass


class ChecksumError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


@dataclass
class ParameterStore:
    """Hierarchically named tensors (learnable weights plus BN running stats)."""

    tensors: OrderedDict[str, torch.Tensor]
    config_hash: str
    seed: int = 0
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.tensors)) != len(self.tensors):
            raise ValueError("duplicate tensor names")

    @classmethod
    def from_module(cls, module: torch.nn.Module, config) -> ParameterStore:
        state = OrderedDict((k, v.detach().clone()) for k, v in module.state_dict().items())
        return cls(state, config.hash(), config.seed, config.to_dict())

    def load_into(self, module: torch.nn.Module) -> None:
        expected = module.state_dict()
        missing = set(expected) - set(self.tensors)
        extra = set(self.tensors) - set(expected)
        if missing or extra:
            raise ValueError(f"store/network mismatch: missing={sorted(missing)[:3]} extra={sorted(extra)[:3]}")
        for name, t in self.tensors.items():
            if tuple(t.shape) != tuple(expected[name].shape):
                raise ValueError(f"shape mismatch for {name}: {tuple(t.shape)} vs {tuple(expected[name].shape)}")
        module.load_state_dict(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def names(self) -> list[str]:
        return list(self.tensors)


def _tensor_bytes(t: torch.Tensor) -> tuple[str, bytes]:
    t = t.detach().cpu().contiguous()
    if t.dtype not in _DTYPES:
        raise CheckpointError(f"unsupported dtype {t.dtype}")
    code = _DTYPES[t.dtype]
    return code, t.numpy().astype(code, copy=False).tobytes()


def save_checkpoint(store: ParameterStore, optimizer_state: bytes | dict | None, epoch: int,
                    path: str | Path) -> None:
    if isinstance(optimizer_state, dict):
        buf = io.BytesIO()
        torch.save(optimizer_state, buf)
        optimizer_state = buf.getvalue()
    blob = optimizer_state or b""
    entries, chunks, offset = [], [], 0
    for name, t in store.tensors.items():
        code, raw = _tensor_bytes(t)
        entries.append({"name": name, "shape": list(t.shape), "dtype": code, "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    manifest = {
        "version": VERSION,
        "epoch": int(epoch),
        "config_hash": store.config_hash,
        "seed": store.seed,
        "config": store.config,
        "tensors": entries,
        "payload_nbytes": len(payload),
        "optimizer_nbytes": len(blob),
        "sha256": hashlib.sha256(payload + blob).hexdigest(),
    }
    head = json.dumps(manifest).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(head)))
        fh.write(head)
        fh.write(payload)
        fh.write(blob)
    tmp.replace(path)


def read_manifest(path: str | Path) -> tuple[dict, bytes]:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if len(data) < len(MAGIC) + 12:
        raise ChecksumError(f"{path}: truncated header")
    version, n = struct.unpack_from("<IQ", data, len(MAGIC))
    if version != VERSION:
        raise VersionError(f"{path}: checkpoint version {version}, expected {VERSION}")
    start = len(MAGIC) + 12
    try:
        manifest = json.loads(data[start : start + n])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ChecksumError(f"{path}: corrupted manifest") from exc
    return manifest, data[start + n :]


def load_checkpoint(path: str | Path) -> tuple[ParameterStore, bytes, int]:
    """Return ``(store, optimizer_blob, epoch)``; raises on version or checksum mismatch."""
    manifest, body = read_manifest(path)
    expected = manifest["payload_nbytes"] + manifest["optimizer_nbytes"]
    if len(body) != expected or hashlib.sha256(body).hexdigest() != manifest["sha256"]:
        raise ChecksumError(f"{path}: checksum mismatch (file truncated or corrupted)")
    payload = body[: manifest["payload_nbytes"]]
    blob = body[manifest["payload_nbytes"] :]
    tensors = OrderedDict()
    for e in manifest["tensors"]:
        raw = payload[e["offset"] : e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=e["dtype"]).reshape(e["shape"])
        tensors[e["name"]] = torch.from_numpy(arr.astype(arr.dtype.newbyteorder("="), copy=True))
    store = ParameterStore(tensors, manifest["config_hash"], manifest.get("seed", 0), manifest.get("config", {}))
    return store, blob, manifest["epoch"]


def optimizer_state_from_blob(blob: bytes) -> dict | None:
    if not blob:
        return None
    return torch.load(io.BytesIO(blob), weights_only=True)
