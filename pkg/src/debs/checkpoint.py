"""Length-prefixed named-tensor container with a trailing CRC32.

Layout (little-endian)::

    b"DBCK" | version u16 | meta_len u32 | meta JSON | n_tensors u32 |
    per tensor: name_len u16, name, dtype_len u8, dtype, ndim u8, dims u64*ndim, nbytes u64, raw bytes |
    crc32 u32 of everything before it
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import torch

from .errors import CheckpointError

MAGIC = b"DBCK"
VERSION = 1

_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
    torch.uint8: "u1",
}
_TORCH = {v: k for k, v in _DTYPES.items()}


def encode(tensors: Mapping[str, torch.Tensor], meta: dict[str, Any]) -> bytes:
    meta_blob = json.dumps(meta, sort_keys=True).encode()
    out = [MAGIC, struct.pack("<HI", VERSION, len(meta_blob)), meta_blob, struct.pack("<I", len(tensors))]
    for name, t in tensors.items():
        if t.dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {t.dtype} for {name}")
        # not ascontiguousarray: it promotes 0-d tensors to shape (1,)
        arr = np.asarray(t.detach().cpu().contiguous().numpy(), dtype=_DTYPES[t.dtype], order="C")
        nb, db = name.encode(), _DTYPES[t.dtype].encode()
        out.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", len(db)) + db)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        raw = arr.tobytes()
        out.append(struct.pack("<Q", len(raw)) + raw)
    payload = b"".join(out)
    return payload + struct.pack("<I", zlib.crc32(payload))


def decode(blob: bytes) -> tuple[dict[str, torch.Tensor], dict[str, Any]]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    if len(blob) < 14:
        raise CheckpointError("checkpoint truncated")
    (stored,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) != stored:
        raise CheckpointError("checkpoint CRC32 mismatch (truncated or corrupted)")
    version, meta_len = struct.unpack_from("<HI", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"checkpoint format version {version}, expected {VERSION}")
    pos = 10
    meta = json.loads(blob[pos : pos + meta_len].decode())
    pos += meta_len
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    tensors: dict[str, torch.Tensor] = {}
    for _ in range(count):
        (nl,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + nl].decode()
        pos += nl
        (dl,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        dtype = blob[pos : pos + dl].decode()
        pos += dl
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
        pos += 8 * ndim
        (nbytes,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        arr = np.frombuffer(blob, dtype=dtype, count=nbytes // np.dtype(dtype).itemsize, offset=pos).reshape(shape)
        pos += nbytes
        tensors[name] = torch.from_numpy(arr.copy()).to(_TORCH[dtype])
    return tensors, meta


def save(path, tensors: Mapping[str, torch.Tensor], meta: dict[str, Any]) -> None:
    """Atomic write: a crash mid-save leaves the previous checkpoint intact."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(tensors, meta))
    os.replace(tmp, path)


def load(path) -> tuple[dict[str, torch.Tensor], dict[str, Any]]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode(blob)
