"""Dual-encoder retriever over precomputed embeddings.

Query and candidate sides each pool a frame matrix to a fixed vector and
project it through a trainable matrix; relevance is the raw dot product of
the projected vectors. Training minimizes the softmax cross-entropy of each
query against its paired positive, with the other candidates of the batch
acting as in-batch negatives. Gradients are analytic; search is exact.
"""

from __future__ import annotations

import os
import struct
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from ._fileio import atomic_write
from .embedding import (
    SPEECH,
    TEXT,
    AttentionPooler,
    EmbeddingStore,
    FrameMatrix,
    attention_pool,
    attention_weights,
    mean_pool,
)
from .errors import StoreFormatError, ValidationError

MODEL_MAGIC = b"RDKM"
MODEL_VERSION = 1

QUERY = "query"
CANDIDATE = "candidate"

MEAN = "mean"
ATTENTION = "attention"

# Learning-rate preset sized for finetuning full pretrained encoders rather
# than shallow projection heads.
FULL_ENCODER_LR = 2e-5


@dataclass(frozen=True)
class PoolingConfig:
    """How one side reduces frames to a fixed vector."""

    kind: str = MEAN
    pooler: AttentionPooler | None = None
    trainable: bool = False

    def __post_init__(self):
        if self.kind not in (MEAN, ATTENTION):
            raise ValidationError(f"unknown pooling kind {self.kind!r}")
        if self.kind == ATTENTION and self.pooler is None:
            raise ValidationError("attention pooling requires a pooler")
        if self.kind == MEAN and (self.pooler is not None or self.trainable):
            raise ValidationError("mean pooling takes no pooler parameters")

    @classmethod
    def mean(cls) -> "PoolingConfig":
        return cls(kind=MEAN)

    @classmethod
    def attention(cls, dim: int, trainable: bool = False) -> "PoolingConfig":
        return cls(kind=ATTENTION, pooler=AttentionPooler.zeros(dim), trainable=trainable)


@dataclass
class RetrieverModel:
    """Projection heads plus pooling configuration for both sides."""

    w_query: np.ndarray  # k x d
    w_candidate: np.ndarray  # k x d
    pool_query: PoolingConfig = field(default_factory=PoolingConfig.mean)
    pool_candidate: PoolingConfig = field(default_factory=PoolingConfig.mean)
    query_modality: str = SPEECH
    candidate_modality: str = SPEECH

    def __post_init__(self):
        wq = np.asarray(self.w_query, dtype=np.float64)
        wc = np.asarray(self.w_candidate, dtype=np.float64)
        if wq.ndim != 2 or wq.shape[0] < 1:
            raise ValidationError("query projection must be a k x d matrix with k >= 1")
        if wq.shape != wc.shape:
            raise ValidationError(f"projection shapes differ: {wq.shape} vs {wc.shape}")
        if not (np.all(np.isfinite(wq)) and np.all(np.isfinite(wc))):
            raise ValidationError("projection matrices must be finite")
        for side, cfg in ((QUERY, self.pool_query), (CANDIDATE, self.pool_candidate)):
            if cfg.kind == ATTENTION and cfg.pooler.dim != wq.shape[1]:
                raise ValidationError(
                    f"{side} pooler dimension {cfg.pooler.dim} != feature dimension {wq.shape[1]}"
                )
        if self.query_modality not in (SPEECH, TEXT) or self.candidate_modality not in (SPEECH, TEXT):
            raise ValidationError("modalities must be 'speech' or 'text'")
        self.w_query = wq
        self.w_candidate = wc

    @property
    def out_dim(self) -> int:
        return self.w_query.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.w_query.shape[1]

    def copy(self) -> "RetrieverModel":
        return replace(self, w_query=self.w_query.copy(), w_candidate=self.w_candidate.copy())

    @classmethod
    def random_init(
        cls,
        feature_dim: int,
        out_dim: int,
        seed: int,
        pool_query: PoolingConfig | None = None,
        pool_candidate: PoolingConfig | None = None,
        query_modality: str = SPEECH,
        candidate_modality: str = SPEECH,
    ) -> "RetrieverModel":
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(feature_dim)
        return cls(
            w_query=rng.normal(0.0, scale, size=(out_dim, feature_dim)),
            w_candidate=rng.normal(0.0, scale, size=(out_dim, feature_dim)),
            pool_query=pool_query or PoolingConfig.mean(),
            pool_candidate=pool_candidate or PoolingConfig.mean(),
            query_modality=query_modality,
            candidate_modality=candidate_modality,
        )


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4
    learning_rate: float = 1e-3
    epochs: int = 10
    seed: int = 0
    optimizer: str = "adam"  # "adam" or "sgd"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValidationError("batch_size must be >= 2 (in-batch negatives need a negative)")
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be >= 0")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class RetrievalResult:
    """Candidates for one query, best first, ties broken by ascending id."""

    query_id: str
    ranked: tuple[tuple[str, float], ...]

    def __post_init__(self):
        ids = [cid for cid, _ in self.ranked]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"query {self.query_id!r}: duplicate candidate ids")
        scores = [s for _, s in self.ranked]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValidationError(f"query {self.query_id!r}: scores not non-increasing")

    @property
    def top1(self) -> str:
        if not self.ranked:
            raise ValidationError(f"query {self.query_id!r}: empty result")
        return self.ranked[0][0]

    def top_ids(self, k: int) -> list[str]:
        if k > len(self.ranked):
            raise ValidationError(
                f"query {self.query_id!r}: k={k} exceeds result depth {len(self.ranked)}"
            )
        return [cid for cid, _ in self.ranked[:k]]


def _side_config(model: RetrieverModel, side: str) -> tuple[np.ndarray, PoolingConfig, str]:
    if side == QUERY:
        return model.w_query, model.pool_query, model.query_modality
    if side == CANDIDATE:
        return model.w_candidate, model.pool_candidate, model.candidate_modality
    raise ValidationError(f"unknown side {side!r}")


def _pooled(m: FrameMatrix, cfg: PoolingConfig) -> np.ndarray:
    if cfg.kind == MEAN:
        return mean_pool(m)
    return attention_pool(m, cfg.pooler)


def encode(model: RetrieverModel, m: FrameMatrix, side: str) -> np.ndarray:
    """Pool one frame matrix and project it with the side's head."""
    w, cfg, modality = _side_config(model, side)
    if m.modality != modality:
        raise ValidationError(
            f"utterance {m.utt_id!r}: modality {m.modality} does not match "
            f"{side} side ({modality})"
        )
    if m.dim != model.feature_dim:
        raise ValidationError(
            f"utterance {m.utt_id!r}: dimension {m.dim} != model feature dimension "
            f"{model.feature_dim}"
        )
    return w @ _pooled(m, cfg)


def similarity(q_vec: np.ndarray, c_vec: np.ndarray) -> float:
    """Raw dot product of two projected vectors."""
    q = np.asarray(q_vec, dtype=np.float64)
    c = np.asarray(c_vec, dtype=np.float64)
    if q.shape != c.shape or q.ndim != 1:
        raise ValidationError(f"similarity shapes differ: {q.shape} vs {c.shape}")
    return float(q @ c)


def _forward(model: RetrieverModel, batch: Sequence[tuple[FrameMatrix, FrameMatrix]]):
    """Encode a batch and compute the similarity matrix and softmax pieces."""
    if len(batch) < 2:
        raise ValidationError("contrastive batch needs at least 2 pairs")
    x = np.stack([_check_side(model, q, QUERY) for q, _ in batch])  # B x d pooled
    z = np.stack([_check_side(model, c, CANDIDATE) for _, c in batch])
    q_proj = x @ model.w_query.T  # B x k
    c_proj = z @ model.w_candidate.T
    s = q_proj @ c_proj.T  # B x B similarity matrix
    row_max = s.max(axis=1, keepdims=True)
    lse = row_max[:, 0] + np.log(np.exp(s - row_max).sum(axis=1))
    per_sample = lse - np.diag(s)
    return x, z, q_proj, c_proj, s, lse, per_sample


def _check_side(model: RetrieverModel, m: FrameMatrix, side: str) -> np.ndarray:
    _, cfg, modality = _side_config(model, side)
    if m.modality != modality:
        raise ValidationError(
            f"utterance {m.utt_id!r}: modality {m.modality} does not match {side} side"
        )
    if m.dim != model.feature_dim:
        raise ValidationError(f"utterance {m.utt_id!r}: dimension {m.dim} != {model.feature_dim}")
    return _pooled(m, cfg)


def contrastive_loss(
    model: RetrieverModel, batch: Sequence[tuple[FrameMatrix, FrameMatrix]]
) -> tuple[float, list[float]]:
    """In-batch-negative softmax loss: mean over i of -log softmax_i(row i)."""
    *_, per_sample = _forward(model, batch)
    return float(per_sample.mean()), [float(v) for v in per_sample]


@dataclass
class Gradients:
    """Analytic gradients of the contrastive loss."""

    w_query: np.ndarray
    w_candidate: np.ndarray
    pool_query: np.ndarray | None = None
    pool_candidate: np.ndarray | None = None


def grad_contrastive(
    model: RetrieverModel, batch: Sequence[tuple[FrameMatrix, FrameMatrix]]
) -> Gradients:
    """Exact gradient of ``contrastive_loss`` for both projection heads.

    Attention pooler query vectors get gradients only when their side is
    configured trainable.
    """
    x, z, q_proj, c_proj, s, lse, _ = _forward(model, batch)
    b = len(batch)
    p = np.exp(s - lse[:, None])
    g = (p - np.eye(b)) / b  # dL/dS
    d_q = g @ c_proj  # B x k, dL/dQ
    d_c = g.T @ q_proj  # B x k, dL/dC
    grads = Gradients(w_query=d_q.T @ x, w_candidate=d_c.T @ z)
    if model.pool_query.kind == ATTENTION and model.pool_query.trainable:
        grads.pool_query = _pooler_grad(
            model.pool_query.pooler, [q for q, _ in batch], x, d_q @ model.w_query
        )
    if model.pool_candidate.kind == ATTENTION and model.pool_candidate.trainable:
        grads.pool_candidate = _pooler_grad(
            model.pool_candidate.pooler, [c for _, c in batch], z, d_c @ model.w_candidate
        )
    return grads


def _pooler_grad(
    pooler: AttentionPooler,
    mats: Sequence[FrameMatrix],
    pooled: np.ndarray,
    d_pooled: np.ndarray,
) -> np.ndarray:
    """d(loss)/d(attention query): sum_t a_t (f_t - x)(f_t . g) per sample."""
    out = np.zeros_like(pooler.query)
    for m, x_i, g_i in zip(mats, pooled, d_pooled):
        frames = m.frames.astype(np.float64)
        a = attention_weights(m, pooler)
        sens = frames @ g_i  # f_t . g
        out += (a * sens) @ frames - float(a @ sens) * x_i
    return out


def resolve_pairs(
    prepended_pairs, query_store: EmbeddingStore, candidate_store: EmbeddingStore
) -> list[tuple[FrameMatrix, FrameMatrix]]:
    """Look up the frame matrices behind each pair; main is the query side.

    Raises ValidationError naming the first utterance id with no embedding.
    """
    return [
        (query_store.get(p.main.id), candidate_store.get(p.example.id))
        for p in prepended_pairs
    ]


class _Adam:
    def __init__(self, shape, cfg: TrainConfig):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0
        self.cfg = cfg

    def step(self, grad: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        self.t += 1
        self.m = cfg.adam_beta1 * self.m + (1 - cfg.adam_beta1) * grad
        self.v = cfg.adam_beta2 * self.v + (1 - cfg.adam_beta2) * grad * grad
        m_hat = self.m / (1 - cfg.adam_beta1 ** self.t)
        v_hat = self.v / (1 - cfg.adam_beta2 ** self.t)
        return cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


class _Sgd:
    def __init__(self, shape, cfg: TrainConfig):
        self.cfg = cfg

    def step(self, grad: np.ndarray) -> np.ndarray:
        return self.cfg.learning_rate * grad


def evaluate_loss(
    model: RetrieverModel,
    pairs: Sequence[tuple[FrameMatrix, FrameMatrix]],
    batch_size: int,
) -> float:
    """Mean contrastive loss over fixed-order batches (no shuffling).

    This is the quantity recorded in training loss curves, so values are
    comparable across epochs regardless of how batches were shuffled.
    """
    losses: list[float] = []
    for start in range(0, len(pairs), batch_size):
        batch = pairs[start:start + batch_size]
        if len(batch) < 2:
            continue
        losses.append(contrastive_loss(model, batch)[0])
    if not losses:
        raise ValidationError("not enough pairs for a single batch")
    return float(np.mean(losses))


def train(
    model: RetrieverModel,
    pairs: Sequence[tuple[FrameMatrix, FrameMatrix]],
    cfg: TrainConfig,
) -> tuple[RetrieverModel, list[float]]:
    """Train projection heads (and trainable poolers) on positive pairs.

    Pairs are shuffled each epoch with an RNG derived from ``cfg.seed``;
    trailing chunks smaller than two are skipped since they carry no
    negative. The returned curve holds one end-of-epoch evaluation loss
    (fixed batch order) per epoch. Aborts if the loss ever becomes
    non-finite.
    """
    if len(pairs) < 2:
        raise ValidationError("training needs at least 2 pairs")
    model = model.copy()
    opt_cls = _Adam if cfg.optimizer == "adam" else _Sgd
    opts = {
        "w_query": opt_cls(model.w_query.shape, cfg),
        "w_candidate": opt_cls(model.w_candidate.shape, cfg),
    }
    if model.pool_query.kind == ATTENTION and model.pool_query.trainable:
        opts["pool_query"] = opt_cls(model.pool_query.pooler.query.shape, cfg)
    if model.pool_candidate.kind == ATTENTION and model.pool_candidate.trainable:
        opts["pool_candidate"] = opt_cls(model.pool_candidate.pooler.query.shape, cfg)

    rng = np.random.default_rng(cfg.seed)
    curve: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(pairs))
        for start in range(0, len(pairs), cfg.batch_size):
            chunk = order[start:start + cfg.batch_size]
            if len(chunk) < 2:
                continue
            batch = [pairs[i] for i in chunk]
            loss, _ = contrastive_loss(model, batch)
            if not np.isfinite(loss):
                raise ValidationError(
                    f"non-finite loss {loss!r} at epoch {epoch}, step {start // cfg.batch_size}"
                )
            grads = grad_contrastive(model, batch)
            model.w_query = model.w_query - opts["w_query"].step(grads.w_query)
            model.w_candidate = model.w_candidate - opts["w_candidate"].step(grads.w_candidate)
            if grads.pool_query is not None:
                q = model.pool_query.pooler.query - opts["pool_query"].step(grads.pool_query)
                model.pool_query = replace(model.pool_query, pooler=AttentionPooler(q))
            if grads.pool_candidate is not None:
                q = model.pool_candidate.pooler.query - opts["pool_candidate"].step(grads.pool_candidate)
                model.pool_candidate = replace(model.pool_candidate, pooler=AttentionPooler(q))
        curve.append(evaluate_loss(model, pairs, cfg.batch_size))
    if not (np.all(np.isfinite(model.w_query)) and np.all(np.isfinite(model.w_candidate))):
        raise ValidationError("training produced non-finite projection weights")
    return model, curve


@dataclass
class EncodedPool:
    """Candidate vectors encoded once for repeated queries."""

    ids: list[str]
    vectors: np.ndarray  # n x k


def encode_pool(model: RetrieverModel, store: EmbeddingStore) -> EncodedPool:
    ids = store.ids()
    if not ids:
        raise ValidationError("candidate store is empty")
    vectors = np.stack([encode(model, store.get(i), CANDIDATE) for i in ids])
    return EncodedPool(ids=ids, vectors=vectors)


def retrieve_topk(
    model: RetrieverModel,
    query: FrameMatrix,
    pool: EmbeddingStore | EncodedPool,
    k: int,
    exclude_speaker: str | None = None,
    speakers: Mapping[str, str] | None = None,
) -> RetrievalResult:
    """Exact exhaustive top-k search over the candidate pool.

    With ``exclude_speaker`` set, candidates by that speaker are removed
    before ranking (requires ``speakers``: utterance id -> speaker id).
    Returns at most k candidates in descending score order, ties broken by
    ascending candidate id.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if isinstance(pool, EmbeddingStore):
        pool = encode_pool(model, pool)
    ids, vectors = pool.ids, pool.vectors
    if exclude_speaker is not None:
        if speakers is None:
            raise ValidationError("exclude_speaker requires a speakers map")
        keep = []
        for idx, cid in enumerate(ids):
            if cid not in speakers:
                raise ValidationError(f"candidate {cid!r} missing from speakers map")
            if speakers[cid] != exclude_speaker:
                keep.append(idx)
        ids = [ids[i] for i in keep]
        vectors = vectors[keep]
    if not ids:
        raise ValidationError("candidate pool is empty after speaker exclusion")
    scores = vectors @ encode(model, query, QUERY)
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))[:k]
    return RetrievalResult(
        query_id=query.utt_id,
        ranked=tuple((ids[i], float(scores[i])) for i in order),
    )


def same_speaker_proportion(
    results: Sequence[RetrievalResult], speakers: Mapping[str, str]
) -> float:
    """Percentage of results whose top-1 candidate shares the query speaker."""
    if not results:
        raise ValidationError("no retrieval results")
    hits = 0
    for r in results:
        top = r.top1
        for utt_id in (r.query_id, top):
            if utt_id not in speakers:
                raise ValidationError(f"utterance {utt_id!r} missing from speakers map")
        hits += speakers[r.query_id] == speakers[top]
    return 100.0 * hits / len(results)


_POOL_CODE = {(MEAN, False): 0, (ATTENTION, False): 1, (ATTENTION, True): 2}
_POOL_FROM_CODE = {v: k for k, v in _POOL_CODE.items()}
_MOD_CODE = {SPEECH: 0, TEXT: 1}
_MOD_FROM_CODE = {v: k for k, v in _MOD_CODE.items()}


def save_model(model: RetrieverModel, path: str | os.PathLike) -> None:
    """Write an RDKM checkpoint (matrices stored as little-endian float32)."""
    k, d = model.w_query.shape
    with atomic_write(path, binary=True) as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<III", MODEL_VERSION, k, d))
        fh.write(
            struct.pack(
                "<BBBB",
                _MOD_CODE[model.query_modality],
                _MOD_CODE[model.candidate_modality],
                _POOL_CODE[(model.pool_query.kind, model.pool_query.trainable)],
                _POOL_CODE[(model.pool_candidate.kind, model.pool_candidate.trainable)],
            )
        )
        fh.write(np.ascontiguousarray(model.w_query, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(model.w_candidate, dtype="<f4").tobytes())
        for cfg in (model.pool_query, model.pool_candidate):
            if cfg.kind == ATTENTION:
                fh.write(np.ascontiguousarray(cfg.pooler.query, dtype="<f4").tobytes())


def load_model(path: str | os.PathLike) -> RetrieverModel:
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
    if magic != MODEL_MAGIC:
        raise StoreFormatError(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}", 0)
    version, k, d = struct.unpack("<III", take(12, "header"))
    if version != MODEL_VERSION:
        raise StoreFormatError(f"unsupported version {version}", 4)
    qmod, cmod, qpool, cpool = struct.unpack("<BBBB", take(4, "config"))
    for code, what in ((qmod, "query modality"), (cmod, "candidate modality")):
        if code not in _MOD_FROM_CODE:
            raise StoreFormatError(f"unknown {what} code {code}", offset - 4)
    for code, what in ((qpool, "query pooling"), (cpool, "candidate pooling")):
        if code not in _POOL_FROM_CODE:
            raise StoreFormatError(f"unknown {what} code {code}", offset - 2)

    def matrix(rows: int, cols: int, what: str) -> np.ndarray:
        raw = take(4 * rows * cols, what)
        return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(rows, cols)

    w_query = matrix(k, d, "query projection")
    w_candidate = matrix(k, d, "candidate projection")

    def pool_config(code: int, what: str) -> PoolingConfig:
        kind, trainable = _POOL_FROM_CODE[code]
        if kind == MEAN:
            return PoolingConfig.mean()
        vec = np.frombuffer(take(4 * d, what), dtype="<f4").astype(np.float64)
        return PoolingConfig(kind=ATTENTION, pooler=AttentionPooler(vec), trainable=trainable)

    pool_query = pool_config(qpool, "query pooler")
    pool_candidate = pool_config(cpool, "candidate pooler")
    if offset != len(data):
        raise StoreFormatError(f"{len(data) - offset} trailing bytes", offset)
    return RetrieverModel(
        w_query=w_query,
        w_candidate=w_candidate,
        pool_query=pool_query,
        pool_candidate=pool_candidate,
        query_modality=_MOD_FROM_CODE[qmod],
        candidate_modality=_MOD_FROM_CODE[cmod],
    )


def write_results(results: Sequence[RetrievalResult], path: str | os.PathLike) -> None:
    """Write results TSV: query_id, rank, candidate_id, score."""
    with atomic_write(path) as fh:
        fh.write("query_id\trank\tcandidate_id\tscore\n")
        for r in results:
            for rank, (cid, score) in enumerate(r.ranked, start=1):
                fh.write(f"{r.query_id}\t{rank}\t{cid}\t{score!r}\n")


def read_results(path: str | os.PathLike) -> list[RetrievalResult]:
    from .errors import ParseError

    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != "query_id\trank\tcandidate_id\tscore":
        raise ParseError("bad results header", 1)
    grouped: dict[str, list[tuple[str, float]]] = {}
    order: list[str] = []
    for lineno, row in enumerate(lines[1:], start=2):
        cols = row.split("\t")
        if len(cols) != 4:
            raise ParseError(f"expected 4 columns, found {len(cols)}", lineno)
        qid, rank, cid, score = cols
        if qid not in grouped:
            grouped[qid] = []
            order.append(qid)
        if int(rank) != len(grouped[qid]) + 1:
            raise ParseError(f"rank {rank} out of sequence for query {qid!r}", lineno)
        grouped[qid].append((cid, float(score)))
    return [RetrievalResult(query_id=q, ranked=tuple(grouped[q])) for q in order]
