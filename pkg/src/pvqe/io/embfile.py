"""Speaker embedding files.

Layout: b"PEMB" | u32 version | u8 provenance | u32 dim | float32[dim] | u32 CRC32.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import CorruptFileError, UnsupportedVersionError
from .binfmt import Reader, seal, unseal

MAGIC = b"PEMB"
VERSION = 1


def dumps_embedding(emb) -> bytes:
    v = np.ascontiguousarray(emb.v, dtype="<f4")
    head = MAGIC + struct.pack("<IBI", VERSION, int(emb.provenance), v.shape[0])
    return seal(head + v.tobytes())


def save_embedding(emb, path) -> None:
    Path(path).write_bytes(dumps_embedding(emb))


def loads_embedding(blob: bytes):
    from ..enrollment import Provenance, SpeakerEmbedding
    what = "embedding file"
    if blob[:4] != MAGIC:
        raise CorruptFileError(f"{what}: bad magic {blob[:4]!r}")
    r = Reader(unseal(blob, what), what)
    r.take(4)
    version, prov, dim = r.unpack("IBI")
    if version != VERSION:
        raise UnsupportedVersionError(f"{what}: version {version} (supported: {VERSION})")
    try:
        prov = Provenance(prov)
    except ValueError as e:
        raise CorruptFileError(f"{what}: unknown provenance code {prov}") from e
    v = np.frombuffer(r.take(4 * dim), dtype="<f4").astype(np.float32)
    r.done()
    return SpeakerEmbedding(v, prov)


def read_embedding(path):
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise CorruptFileError(f"cannot read embedding file {path}: {e}") from e
    return loads_embedding(blob)
