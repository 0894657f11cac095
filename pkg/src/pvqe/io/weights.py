"""Self-describing checkpoint format.

Layout (all integers little-endian)::

    b"PVQE" | u32 version | u32 len + UTF-8 JSON ModelConfig | u32 n_tensors
    per tensor: u16 len + UTF-8 name | u8 rank | u32 dims[rank] | float32 data (row-major)
    u32 CRC32 of everything before it

Tensors are written in sorted name order. GRU weights stack the gates as
(reset, update, new); the new-gate candidate is
tanh(W_n x + b_n + r * (U_n h + b_hn)) and h' = (1 - z) * n + z * h.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..autodiff import ParamStore
from ..errors import CorruptFileError, UnsupportedVersionError
from ..model.config import ModelConfig
from ..model.graph import Model, check_params
from .binfmt import Reader, seal, unseal

MAGIC = b"PVQE"
VERSION = 1
LE_F32 = np.dtype("<f4")


def dumps_weights(model: Model) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    blob = model.config.to_json().encode("utf-8")
    parts += [struct.pack("<I", len(blob)), blob, struct.pack("<I", len(model.params))]
    for name in model.params:
        arr = np.asarray(model.params[name].data)
        enc = name.encode("utf-8")
        parts.append(struct.pack("<H", len(enc)) + enc)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=LE_F32).tobytes())
    return seal(b"".join(parts))


def save_weights(model: Model, path) -> None:
    Path(path).write_bytes(dumps_weights(model))


def loads_weights(blob: bytes) -> Model:
    what = "weight file"
    if blob[:4] != MAGIC:
        raise CorruptFileError(f"{what}: bad magic {blob[:4]!r}")
    r = Reader(unseal(blob, what), what)
    r.take(4)
    (version,) = r.unpack("I")
    if version != VERSION:
        raise UnsupportedVersionError(f"{what}: version {version} (supported: {VERSION})")
    (n,) = r.unpack("I")
    try:
        cfg = ModelConfig.from_dict(json.loads(r.take(n).decode("utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptFileError(f"{what}: unreadable config blob") from e
    (count,) = r.unpack("I")
    arrays = {}
    for _ in range(count):
        (ln,) = r.unpack("H")
        name = r.take(ln).decode("utf-8")
        (rank,) = r.unpack("B")
        dims = r.unpack(f"{rank}I") if rank else ()
        size = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(r.take(4 * size), dtype=LE_F32).astype(np.float32).reshape(dims)
        if name in arrays:
            raise CorruptFileError(f"{what}: duplicate tensor {name!r}")
        arrays[name] = data
    r.done()
    check_params(cfg, arrays)
    return Model(cfg, ParamStore(arrays))


def load_weights(path) -> Model:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise CorruptFileError(f"cannot read weight file {path}: {e}") from e
    return loads_weights(blob)


__all__ = ["dumps_weights", "load_weights", "loads_weights", "save_weights"]
