"""Binary on-disk embedding cache.

Layout: ``<cache_dir>/<model_id>/<kind>/<recording_id>.emb``.  Each file is
a 27-byte header followed by the row-major little-endian float32 payload:

    magic "LPEMB1" | u8 kind | u32 L | u32 D | u32 T | u64 checksum

T is 1 for pooled files (payload L x 2D).  The checksum is the first eight
bytes of the payload's SHA-256, read little-endian.  Files are published by
writing to a temporary sibling and renaming, so readers only ever see whole
files; corruption of any kind raises CacheCorrupt rather than returning a
short tensor.
"""

from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from enum import Enum
from pathlib import Path

import numpy as np

from .embeddings import LayerEmbeddings, PooledEmbedding
from .errors import CacheCorrupt, NotCached

MAGIC = b"LPEMB1"
_HEADER = struct.Struct("<6sBIIIQ")


class EmbeddingKind(Enum):
    LAYERS = 0
    POOLED = 1

    @property
    def dirname(self) -> str:
        return "layers" if self is EmbeddingKind.LAYERS else "pooled"


def _checksum(payload: bytes) -> int:
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")


def cache_path(cache_dir: Path | str, model_id: str, kind: EmbeddingKind, recording_id: str) -> Path:
    return Path(cache_dir) / model_id / kind.dirname / f"{recording_id}.emb"


def atomic_write_bytes(path: Path, blob: bytes) -> None:
    """Writes via a temporary sibling + rename so partial files are never visible."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise


def cache_put(embedding: LayerEmbeddings | PooledEmbedding, cache_dir: Path | str) -> Path:
    """Stores an embedding, returning the published file path."""
    if isinstance(embedding, LayerEmbeddings):
        kind = EmbeddingKind.LAYERS
        l, d, t = embedding.tensor.shape
        array = embedding.tensor
    else:
        kind = EmbeddingKind.POOLED
        l, two_d = embedding.vectors.shape
        d, t = two_d // 2, 1
        array = embedding.vectors
    payload = np.ascontiguousarray(array, dtype="<f4").tobytes()
    header = _HEADER.pack(MAGIC, kind.value, l, d, t, _checksum(payload))
    path = cache_path(cache_dir, embedding.model_id, kind, embedding.recording_id)
    atomic_write_bytes(path, header + payload)
    return path


def cache_get(
    recording_id: str,
    model_id: str,
    kind: EmbeddingKind,
    cache_dir: Path | str,
) -> LayerEmbeddings | PooledEmbedding:
    """Loads an embedding; raises NotCached on miss, CacheCorrupt on damage."""
    path = cache_path(cache_dir, model_id, kind, recording_id)
    if not path.exists():
        raise NotCached(f"{kind.dirname}/{recording_id} not in cache under {model_id}")
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise CacheCorrupt(f"{path}: shorter than header")
    magic, kind_byte, l, d, t, checksum = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CacheCorrupt(f"{path}: bad magic {magic!r}")
    if kind_byte != kind.value:
        raise CacheCorrupt(f"{path}: kind byte {kind_byte} does not match {kind.name}")
    count = l * d * t if kind is EmbeddingKind.LAYERS else l * 2 * d
    payload = blob[_HEADER.size:]
    if len(payload) != count * 4:
        raise CacheCorrupt(f"{path}: payload {len(payload)} bytes, expected {count * 4}")
    if _checksum(payload) != checksum:
        raise CacheCorrupt(f"{path}: checksum mismatch")
    array = np.frombuffer(payload, dtype="<f4")
    if kind is EmbeddingKind.LAYERS:
        return LayerEmbeddings(
            recording_id=recording_id, model_id=model_id, tensor=array.reshape(l, d, t)
        )
    return PooledEmbedding(
        recording_id=recording_id, model_id=model_id, vectors=array.reshape(l, 2 * d)
    )


def cache_has(recording_id: str, model_id: str, kind: EmbeddingKind, cache_dir: Path | str) -> bool:
    """True when a readable, uncorrupted entry exists."""
    try:
        cache_get(recording_id, model_id, kind, cache_dir)
        return True
    except (NotCached, CacheCorrupt):
        return False
