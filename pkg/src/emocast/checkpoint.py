"""Binary checkpoints: magic "EMCK", version, config hash, a named entry
directory, little-endian payloads, and a trailing CRC-32.

The arch config rides along as a canonical-JSON entry so a checkpoint alone
rebuilds its model; save -> load -> save is byte-identical.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .model import ArchConfig, EmoCastModel, build_model

MAGIC = b"EMCK"
VERSION = 1

_DTYPE_CODES = {
    np.dtype(np.float32): 0,
    np.dtype(np.float64): 1,
    np.dtype(np.uint64): 2,
    np.dtype(np.uint8): 3,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    version: int
    config_hash: int
    entries: dict[str, np.ndarray]

    def config(self) -> ArchConfig:
        import json

        blob = self.entries["meta/config_json"].tobytes()
        return ArchConfig.from_dict(json.loads(blob.decode()))


def _write_bytes(entries: dict[str, np.ndarray], config_hash: int) -> bytes:
    names = sorted(entries)
    arrays = {}
    dir_size = 0
    for name in names:
        arr = np.ascontiguousarray(entries[name])
        if arr.dtype not in _DTYPE_CODES:
            raise CheckpointError(f"entry {name!r} has unsupported dtype {arr.dtype}")
        arrays[name] = arr
        dir_size += 4 + len(name.encode()) + 1 + 4 + 4 * arr.ndim + 8
    header = MAGIC + struct.pack("<IQI", VERSION, config_hash, len(names))
    offset = len(header) + dir_size
    directory = b""
    payload = b""
    for name in names:
        arr = arrays[name]
        nb = name.encode()
        directory += struct.pack("<I", len(nb)) + nb
        directory += struct.pack("<B", _DTYPE_CODES[arr.dtype])
        directory += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        directory += struct.pack("<Q", offset)
        blob = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        payload += blob
        offset += len(blob)
    body = header + directory + payload
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def write_checkpoint_file(path, entries: dict[str, np.ndarray], config_hash: int) -> None:
    Path(path).write_bytes(_write_bytes(entries, config_hash))


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    if len(blob) < 20:
        raise CheckpointTruncatedError(f"{path}: {len(blob)} bytes is too short")
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    version, config_hash, n_entries = struct.unpack_from("<IQI", blob, 4)
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: version {version}, expected {VERSION}")
    stored_crc = struct.unpack_from("<I", blob, len(blob) - 4)[0]
    actual_crc = zlib.crc32(blob[:-4]) & 0xFFFFFFFF
    pos = 20
    directory = []
    try:
        for _ in range(n_entries):
            (name_len,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos : pos + name_len].decode()
            pos += name_len
            (code,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            (offset,) = struct.unpack_from("<Q", blob, pos)
            pos += 8
            directory.append((name, code, dims, offset))
    except struct.error:
        raise CheckpointTruncatedError(f"{path}: directory cut short") from None
    entries = {}
    for name, code, dims, offset in directory:
        dtype = _CODE_DTYPES.get(code)
        if dtype is None:
            raise CheckpointError(f"{path}: unknown dtype code {code} for {name!r}")
        count = int(np.prod(dims)) if dims else 1
        end = offset + count * dtype.itemsize
        if end > len(blob) - 4:
            raise CheckpointTruncatedError(f"{path}: payload for {name!r} cut short")
        entries[name] = (
            np.frombuffer(blob[offset:end], dtype=dtype.newbyteorder("<")).astype(dtype).reshape(dims)
        )
    if stored_crc != actual_crc:
        raise CheckpointChecksumError(
            f"{path}: CRC mismatch (stored {stored_crc:#x}, actual {actual_crc:#x})"
        )
    return Checkpoint(version=version, config_hash=config_hash, entries=entries)


# ---------------------------------------------------------------------------
# Model-level save / load
# ---------------------------------------------------------------------------


def model_entries(model: EmoCastModel) -> dict[str, np.ndarray]:
    entries = {f"param/{name}": p.data for name, p in model.params.items()}
    for name, buf in model.bank.named_buffers():
        entries[f"buffer/{name}"] = buf
    entries["meta/config_json"] = np.frombuffer(model.config.canonical_json(), dtype=np.uint8)
    entries["meta/build_seed"] = np.array([model.seed], dtype=np.uint64)
    return entries


def save_checkpoint(
    model: EmoCastModel,
    path,
    global_step: int = 0,
    stage: str = "spatial",
    optimizer_entries: Optional[dict[str, np.ndarray]] = None,
    rng_states: Optional[dict[str, np.ndarray]] = None,
) -> None:
    entries = model_entries(model)
    entries["meta/global_step"] = np.array([global_step], dtype=np.uint64)
    entries["meta/stage"] = np.frombuffer(stage.encode(), dtype=np.uint8)
    if optimizer_entries:
        entries.update({f"opt/{k}": v for k, v in optimizer_entries.items()})
    if rng_states:
        entries.update({f"rng/{k}": v for k, v in rng_states.items()})
    write_checkpoint_file(path, entries, model.config.config_hash())


def restore_model(ckpt: Checkpoint) -> EmoCastModel:
    config = ckpt.config()
    if config.config_hash() != ckpt.config_hash:
        raise CheckpointError("embedded config does not match the header hash")
    seed = int(ckpt.entries.get("meta/build_seed", np.array([0], dtype=np.uint64))[0])
    model = build_model(config, seed)
    for name, p in model.params.items():
        key = f"param/{name}"
        if key not in ckpt.entries:
            raise CheckpointError(f"checkpoint lacks parameter {name!r}")
        stored = ckpt.entries[key]
        if stored.shape != p.data.shape:
            raise CheckpointError(f"parameter {name!r}: shape {stored.shape} != {p.data.shape}")
        p.data = stored.astype(p.data.dtype, copy=True)
    for name, buf in model.bank.named_buffers():
        key = f"buffer/{name}"
        if key in ckpt.entries:
            buf[...] = ckpt.entries[key].astype(buf.dtype, copy=False).reshape(buf.shape)
    return model


def load_model(path) -> tuple[EmoCastModel, Checkpoint]:
    ckpt = load_checkpoint(path)
    return restore_model(ckpt), ckpt
