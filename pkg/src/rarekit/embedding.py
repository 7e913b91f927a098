"""Frame-level embedding storage and pooling.

Store format (little-endian): header ``RDKE`` + u32 version=1 + u32 dim +
u32 record_count; each record is u16 id_length + UTF-8 id bytes + u8
modality (0=speech, 1=text) + u32 T + T*dim float32 values, row-major.
Values are float32 on disk; pooling accumulates in float64.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from ._fileio import atomic_write
from .errors import StoreFormatError, ValidationError

STORE_MAGIC = b"RDKE"
STORE_VERSION = 1

SPEECH = "speech"
TEXT = "text"
_MODALITY_CODE = {SPEECH: 0, TEXT: 1}
_MODALITY_NAME = {0: SPEECH, 1: TEXT}


@dataclass(frozen=True)
class FrameMatrix:
    """T x d float32 matrix of encoder frames for one utterance."""

    utt_id: str
    modality: str
    frames: np.ndarray

    def __post_init__(self):
        if self.modality not in _MODALITY_CODE:
            raise ValidationError(f"unknown modality {self.modality!r}")
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ValidationError(
                f"utterance {self.utt_id!r}: frames must be a T x d matrix with T >= 1"
            )
        if not np.all(np.isfinite(frames)):
            raise ValidationError(f"utterance {self.utt_id!r}: non-finite frame values")
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class AttentionPooler:
    """Single learned query vector; weights are softmax(frames @ query)."""

    query: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.query, dtype=np.float64)
        if q.ndim != 1 or not np.all(np.isfinite(q)):
            raise ValidationError("attention query must be a finite 1-d vector")
        object.__setattr__(self, "query", q)

    @property
    def dim(self) -> int:
        return self.query.shape[0]

    @classmethod
    def zeros(cls, dim: int) -> "AttentionPooler":
        return cls(np.zeros(dim))


@dataclass
class EmbeddingStore:
    """Id-keyed frame matrices of one modality and uniform dimension.

    ``modality`` is None only for an empty store (the file format carries
    modality per record, so an empty file has none to recover).
    """

    dim: int
    modality: str | None
    records: dict[str, FrameMatrix] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise ValidationError(f"store dimension must be >= 1, got {self.dim}")
        if self.modality is not None and self.modality not in _MODALITY_CODE:
            raise ValidationError(f"unknown modality {self.modality!r}")
        for m in self.records.values():
            self._check(m)

    def _check(self, m: FrameMatrix) -> None:
        if m.dim != self.dim:
            raise ValidationError(
                f"utterance {m.utt_id!r}: dimension {m.dim} != store dimension {self.dim}"
            )
        if self.modality is not None and m.modality != self.modality:
            raise ValidationError(
                f"utterance {m.utt_id!r}: modality {m.modality} != store modality {self.modality}"
            )

    def add(self, m: FrameMatrix) -> None:
        if m.utt_id in self.records:
            raise ValidationError(f"duplicate utterance id {m.utt_id!r} in store")
        if self.modality is None:
            self.modality = m.modality
        self._check(m)
        self.records[m.utt_id] = m

    def get(self, utt_id: str) -> FrameMatrix:
        try:
            return self.records[utt_id]
        except KeyError:
            raise ValidationError(f"no embedding for utterance id {utt_id!r}") from None

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, utt_id: str) -> bool:
        return utt_id in self.records

    def ids(self) -> list[str]:
        return list(self.records)


def mean_pool(m: FrameMatrix) -> np.ndarray:
    """Arithmetic mean over the frame axis, accumulated in float64."""
    return m.frames.astype(np.float64).mean(axis=0)


def attention_weights(m: FrameMatrix, pooler: AttentionPooler) -> np.ndarray:
    """Softmax over frames of the frame-query dot products."""
    if pooler.dim != m.dim:
        raise ValidationError(
            f"pooler dimension {pooler.dim} != frame dimension {m.dim}"
        )
    scores = m.frames.astype(np.float64) @ pooler.query
    scores -= scores.max()
    w = np.exp(scores)
    return w / w.sum()


def attention_pool(m: FrameMatrix, pooler: AttentionPooler) -> np.ndarray:
    """Convex combination of frames weighted by softmax attention."""
    return attention_weights(m, pooler) @ m.frames.astype(np.float64)


def write_store(store: EmbeddingStore, path: str | os.PathLike) -> None:
    """Serialize a store; ``read_store`` recovers it bit-exactly."""
    with atomic_write(path, binary=True) as fh:
        fh.write(STORE_MAGIC)
        fh.write(struct.pack("<III", STORE_VERSION, store.dim, len(store.records)))
        for utt_id, m in store.records.items():
            id_bytes = utt_id.encode("utf-8")
            if len(id_bytes) > 0xFFFF:
                raise ValidationError(f"utterance id too long to encode: {utt_id[:40]!r}...")
            fh.write(struct.pack("<H", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(struct.pack("<BI", _MODALITY_CODE[m.modality], m.n_frames))
            fh.write(np.ascontiguousarray(m.frames, dtype="<f4").tobytes())


def read_store(path: str | os.PathLike) -> EmbeddingStore:
    """Read and validate a store file.

    Structural damage (bad magic, wrong version, truncation, trailing
    bytes) raises StoreFormatError with the failing byte offset; NaN or
    infinite payload values raise ValidationError.
    """
    with open(path, "rb") as fh:
        data = fh.read()

    offset = 0

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        if offset + n > len(data):
            raise StoreFormatError(f"truncated while reading {what}", offset)
        chunk = data[offset:offset + n]
        offset += n
        return chunk

    magic = take(4, "magic")
    if magic != STORE_MAGIC:
        raise StoreFormatError(f"bad magic {magic!r}, expected {STORE_MAGIC!r}", 0)
    version, dim, count = struct.unpack("<III", take(12, "header"))
    if version != STORE_VERSION:
        raise StoreFormatError(f"unsupported version {version}", 4)
    if dim < 1:
        raise StoreFormatError(f"invalid dimension {dim}", 8)

    store = EmbeddingStore(dim=dim, modality=None)
    for i in range(count):
        (id_len,) = struct.unpack("<H", take(2, f"record {i} id length"))
        id_start = offset
        try:
            utt_id = take(id_len, f"record {i} id").decode("utf-8")
        except UnicodeDecodeError:
            raise StoreFormatError(f"record {i}: id is not valid UTF-8", id_start) from None
        mod_code, n_frames = struct.unpack("<BI", take(5, f"record {i} shape"))
        if mod_code not in _MODALITY_NAME:
            raise StoreFormatError(f"record {i}: unknown modality code {mod_code}", offset - 5)
        if n_frames < 1:
            raise StoreFormatError(f"record {i}: frame count must be >= 1", offset - 4)
        payload_at = offset
        payload = take(4 * n_frames * dim, f"record {i} payload")
        frames = np.frombuffer(payload, dtype="<f4").reshape(n_frames, dim)
        if not np.all(np.isfinite(frames)):
            raise ValidationError(
                f"record {i} ({utt_id!r}): non-finite payload value near byte {payload_at}"
            )
        try:
            store.add(FrameMatrix(utt_id=utt_id, modality=_MODALITY_NAME[mod_code], frames=frames))
        except ValidationError as exc:
            raise StoreFormatError(str(exc), id_start) from None
    if offset != len(data):
        raise StoreFormatError(f"{len(data) - offset} trailing bytes after last record", offset)
    return store
