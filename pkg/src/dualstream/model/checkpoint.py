"""Binary checkpoint format (little-endian).

    "FMTC" | u32 version | u32 config length | canonical JSON config
    | u32 entry count | entries sorted by name | u32 CRC32 of everything before

Each entry: u16 name length, UTF-8 name, u8 dtype code, u8 rank,
u32 dims[rank], raw payload.
"""

from __future__ import annotations

import io
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .. import canonical
from .config import ModelConfig
from .network import DualStreamModel, ParameterMismatchError

MAGIC = b"FMTC"
VERSION = 1
_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


def encode(config: dict, tensors: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    blob = canonical.dumps(config).encode()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        dt = arr.dtype.newbyteorder("<")
        if dt not in _CODES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name!r}")
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BB", _CODES[dt], arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def decode(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < 16:
        raise CheckpointError("truncated checkpoint")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise CheckpointError("checkpoint CRC32 mismatch (file corrupted)")
    version, clen = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {VERSION}")
    pos = 12
    config = json.loads(data[pos : pos + clen].decode())
    pos += clen
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + nlen].decode()
        pos += nlen
        code, rank = struct.unpack_from("<BB", data, pos)
        pos += 2
        if code not in _DTYPES:
            raise CheckpointError(f"unknown dtype code {code} for {name!r}")
        dims = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        dt = _DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        tensors[name] = np.frombuffer(data, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(dims).copy()
        pos += nbytes
    if pos != len(data) - 4:
        raise CheckpointError("trailing bytes after last entry")
    return config, tensors


def write(path: str | Path, config: dict, tensors: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(config, tensors))
    return path


def read(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        return decode(Path(path).read_bytes())
    except CheckpointError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc


def model_blob(model: DualStreamModel) -> dict:
    return {"kind": "model", "model": model.config.to_dict(), "provenance": model.provenance, "seed": model.seed}


def save_checkpoint(model: DualStreamModel, path: str | Path) -> Path:
    return write(path, model_blob(model), model.params)


def load_checkpoint(path: str | Path, config: ModelConfig | None = None) -> DualStreamModel:
    """Load a model; with ``config`` given, parameters must fit that architecture."""
    blob, tensors = read(path)
    if blob.get("kind") != "model":
        raise CheckpointError(f"{path}: not a model checkpoint (kind={blob.get('kind')!r})")
    cfg = config if config is not None else ModelConfig.from_dict(blob["model"])
    try:
        return DualStreamModel(cfg, seed=blob.get("seed", 0), params=tensors, provenance=blob.get("provenance"))
    except ParameterMismatchError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
