"""Embedding stores, cosine scoring and enrollment.

Binary store layout (all integers little-endian)::

    magic      8 bytes   b"SASVEMB1" (speaker/CM embeddings) or b"SASVCML1" (CM logits)
    dimension  uint32
    records    repeated until EOF:
               uint16 id length, UTF-8 id, dimension x float32

CM-logit files always have dimension 2, bona fide logit first.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping

import numpy as np

EMB_MAGIC = b"SASVEMB1"
CML_MAGIC = b"SASVCML1"

DEFAULT_SPK_DIM = 192
DEFAULT_CM_DIM = 160

_F32 = np.dtype("<f4")


class EmbeddingError(ValueError):
    pass


class StoreLoadError(EmbeddingError):
    pass


class BadMagicError(StoreLoadError):
    pass


class BadDimensionError(StoreLoadError):
    pass


class TruncatedRecordError(StoreLoadError):
    pass


class DuplicateIdError(StoreLoadError):
    pass


class NonFiniteValueError(StoreLoadError):
    pass


class DegenerateInputError(EmbeddingError):
    pass


class DimensionMismatchError(EmbeddingError):
    pass


class MissingEmbeddingError(KeyError):
    def __init__(self, key: str, store: str = "store"):
        super().__init__(key)
        self.key = key
        self.store = store

    def __str__(self):
        return f"no embedding for id {self.key!r} in {self.store}"


@dataclass(frozen=True)
class CmOutput:
    id: str
    bonafide: float
    spoof: float

    @property
    def logits(self) -> tuple[float, float]:
        return (self.bonafide, self.spoof)


class EmbeddingStore(Mapping[str, np.ndarray]):
    """Immutable id -> float32 vector map with a fixed dimension.

    Values are kept at file precision (float32) so that saving and loading
    is bit-exact; scoring code promotes to float64.
    """

    def __init__(self, dimension: int, entries: Iterable[tuple[str, np.ndarray]] = (),
                 magic: bytes = EMB_MAGIC):
        if int(dimension) < 1:
            raise BadDimensionError(f"dimension must be positive, got {dimension}")
        self.dimension = int(dimension)
        self.magic = magic
        self._entries: dict[str, np.ndarray] = {}
        for key, values in entries:
            self._add(key, values)

    def _add(self, key: str, values) -> None:
        if not key:
            raise EmbeddingError("empty embedding id")
        if key in self._entries:
            raise DuplicateIdError(f"duplicate id {key!r}")
        vec = np.array(values, dtype=_F32).reshape(-1)
        if vec.shape[0] != self.dimension:
            raise DimensionMismatchError(
                f"{key!r}: dimension {vec.shape[0]} != store dimension {self.dimension}")
        if not np.all(np.isfinite(vec)):
            raise NonFiniteValueError(f"{key!r}: non-finite value")
        vec.flags.writeable = False
        self._entries[key] = vec

    def __getitem__(self, key: str) -> np.ndarray:
        try:
            return self._entries[key]
        except KeyError:
            raise MissingEmbeddingError(key) from None

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        return (self.dimension == other.dimension and self.magic == other.magic
                and list(self._entries) == list(other._entries)
                and all(a.tobytes() == b.tobytes()
                        for a, b in zip(self._entries.values(), other._entries.values())))

    __hash__ = None

    def __repr__(self):
        return f"EmbeddingStore(dimension={self.dimension}, n={len(self)})"

    def cm_output(self, key: str) -> CmOutput:
        """Interpret an entry of a 2-dimensional store as CM logits."""
        if self.dimension != 2:
            raise DimensionMismatchError("CM logits need a 2-dimensional store")
        bona, spoof = self[key]
        return CmOutput(key, float(bona), float(spoof))


def save_store(store: EmbeddingStore) -> bytes:
    parts = [store.magic, struct.pack("<I", store.dimension)]
    for key, vec in store.items():
        raw = key.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise EmbeddingError(f"id too long: {key[:32]!r}...")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(vec.astype(_F32).tobytes())
    return b"".join(parts)


def load_store(data: bytes, magic: bytes = EMB_MAGIC) -> EmbeddingStore:
    data = bytes(data)
    if data[:8] != magic:
        raise BadMagicError(f"expected magic {magic!r}, got {data[:8]!r}")
    if len(data) < 12:
        raise TruncatedRecordError("header truncated")
    (dim,) = struct.unpack_from("<I", data, 8)
    if dim == 0:
        raise BadDimensionError("dimension 0")
    if magic == CML_MAGIC and dim != 2:
        raise BadDimensionError(f"CM logit file must have dimension 2, got {dim}")

    store = EmbeddingStore(dim, magic=magic)
    pos, n = 12, len(data)
    rec_bytes = 4 * dim
    while pos < n:
        if pos + 2 > n:
            raise TruncatedRecordError(f"truncated id length at offset {pos}")
        (klen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        if pos + klen + rec_bytes > n:
            raise TruncatedRecordError(f"truncated record at offset {pos - 2}")
        try:
            key = data[pos:pos + klen].decode("utf-8")
        except UnicodeDecodeError:
            raise StoreLoadError(f"id at offset {pos} is not UTF-8") from None
        pos += klen
        store._add(key, np.frombuffer(data, dtype=_F32, count=dim, offset=pos))
        pos += rec_bytes
    return store


def save_cm_logits(store: EmbeddingStore) -> bytes:
    if store.dimension != 2:
        raise BadDimensionError("CM logit store must have dimension 2")
    return save_store(EmbeddingStore(2, store.items(), magic=CML_MAGIC))


def load_cm_logits(data: bytes) -> EmbeddingStore:
    return load_store(data, magic=CML_MAGIC)


def _vec(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).reshape(-1)


def cosine(a, b) -> float:
    a, b = _vec(a), _vec(b)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine of a zero-norm vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def enroll(embs) -> np.ndarray:
    """Enrollment model: mean of the length-normalised enrollment embeddings."""
    vecs = [_vec(e) for e in embs]
    if not vecs:
        raise EmbeddingError("enrollment needs at least one embedding")
    if len({v.shape for v in vecs}) != 1:
        raise DimensionMismatchError("enrollment embeddings differ in dimension")
    mat = np.stack(vecs)
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateInputError("zero-norm enrollment embedding")
    return (mat / norms).mean(axis=0)
