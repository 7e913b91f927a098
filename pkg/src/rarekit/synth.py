"""Deterministic synthetic corpus and embedding generation.

Transcripts are built from three reserved vocabulary classes: function
words (``fw..``, short and acoustically weak), background content words
(``w....``, each planted at corpus frequency >= 4), and rare words
(``rw....``, planted at frequency exactly two or three, at most one per
utterance). Translations mirror transcripts token for token through a fixed
lexicon (``t`` + source token), so position i aligns to position i.

Embeddings assign every token a fixed base vector (seeded hash of its
spelling, norm scaled by word class); the speech modality repeats it
``frames_per_token`` times, adds the speaker's shared offset vector and
per-frame Gaussian noise. Sigmas are per coordinate. Everything is a pure
function of the config seed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, Utterance
from .embedding import SPEECH, TEXT, EmbeddingStore, FrameMatrix
from .errors import ValidationError

FUNCTION_VOCAB_SIZE = 12
UTT_MIN_TOKENS = 5
UTT_MAX_TOKENS = 8

# Base-vector norms per word class: rare words are acoustically prominent,
# function words reduced.
RARE_NORM = 3.0
CONTENT_NORM = 1.0
FUNCTION_NORM = 0.35

_MIN_BACKGROUND_FREQ = 5


@dataclass(frozen=True)
class SynthConfig:
    n_utterances: int = 8000
    vocab_size: int = 2500
    n_rare_words: int = 200
    rare_frequency_mix: float = 0.5  # share of rare words planted at frequency 2
    n_speakers: int = 10
    dim: int = 64
    frames_per_token: int = 4
    noise_sigma: float = 0.02
    speaker_offset_sigma: float = 0.01
    seed: int = 7

    def __post_init__(self):
        for name in ("n_utterances", "vocab_size", "n_rare_words", "n_speakers",
                     "dim", "frames_per_token"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if not 0.0 <= self.rare_frequency_mix <= 1.0:
            raise ValidationError("rare_frequency_mix must lie in [0, 1]")
        if self.noise_sigma < 0 or self.speaker_offset_sigma < 0:
            raise ValidationError("sigmas must be >= 0")


def _derived_rng(*parts) -> np.random.Generator:
    key = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return np.random.default_rng(int.from_bytes(key[:8], "little"))


def rare_word_counts(cfg: SynthConfig) -> dict[str, int]:
    """Planted corpus frequency (2 or 3) per rare word."""
    n_freq2 = round(cfg.n_rare_words * cfg.rare_frequency_mix)
    return {
        f"rw{i:04d}": 2 if i < n_freq2 else 3
        for i in range(cfg.n_rare_words)
    }


def translate_token(token: str) -> str:
    """Fixed synthetic lexicon: target token for a source token."""
    return "t" + token


def gen_corpus(cfg: SynthConfig) -> Corpus:
    """Generate a corpus whose rare words hit their planted counts exactly."""
    counts = rare_word_counts(cfg)
    total_rare_slots = sum(counts.values())
    if total_rare_slots > cfg.n_utterances:
        raise ValidationError(
            f"need {total_rare_slots} host utterances for rare words "
            f"but only {cfg.n_utterances} available"
        )
    rng = _derived_rng(cfg.seed, "corpus")
    lengths = rng.integers(UTT_MIN_TOKENS, UTT_MAX_TOKENS + 1, size=cfg.n_utterances)

    # One rare word per host utterance keeps every planted word satisfiable.
    host_order = rng.permutation(cfg.n_utterances)
    rare_at: dict[int, str] = {}
    cursor = 0
    for word in sorted(counts):
        for _ in range(counts[word]):
            rare_at[int(host_order[cursor])] = word
            cursor += 1

    background_slots = int(lengths.sum()) - total_rare_slots
    function_slots = background_slots // 3
    content_slots = background_slots - function_slots
    n_content_types = min(cfg.vocab_size, content_slots // _MIN_BACKGROUND_FREQ)
    background: list[str] = []
    if n_content_types > 0:
        base, extra = divmod(content_slots, n_content_types)
        for i in range(n_content_types):
            background.extend([f"w{i:05d}"] * (base + (1 if i < extra else 0)))
    else:
        function_slots += content_slots
    background.extend(
        f"fw{int(i):02d}" for i in rng.integers(0, FUNCTION_VOCAB_SIZE, size=function_slots)
    )
    background = [background[i] for i in rng.permutation(len(background))]

    utterances = []
    dealt = 0
    for idx in range(cfg.n_utterances):
        n_tokens = int(lengths[idx])
        tokens = []
        if idx in rare_at:
            tokens.append(rare_at[idx])
            n_tokens -= 1
        tokens.extend(background[dealt:dealt + n_tokens])
        dealt += n_tokens
        order = _derived_rng(cfg.seed, "order", idx).permutation(len(tokens))
        tokens = [tokens[i] for i in order]
        speaker = f"spk{int(rng.integers(0, cfg.n_speakers)):03d}"
        utt_id = f"u{idx:06d}"
        utterances.append(
            Utterance(
                id=utt_id,
                speaker_id=speaker,
                duration_s=round(0.45 * len(tokens), 2),
                transcript_raw=" ".join(tokens),
                translation_raw=" ".join(translate_token(t) for t in tokens),
                embedding_ref=utt_id,
            )
        )
    return Corpus(tuple(utterances), name="synth")


def token_base_vector(token: str, cfg: SynthConfig) -> np.ndarray:
    """Fixed per-token vector: seeded hash direction, class-scaled norm."""
    if token.startswith("rw"):
        scale = RARE_NORM
    elif token.startswith("fw"):
        scale = FUNCTION_NORM
    else:
        scale = CONTENT_NORM
    v = _derived_rng(cfg.seed, "token", token).standard_normal(cfg.dim)
    return scale * v / np.sqrt(cfg.dim)


def speaker_offset(speaker_id: str, cfg: SynthConfig) -> np.ndarray:
    """Additive offset shared by all of a speaker's utterances."""
    rng = _derived_rng(cfg.seed, "speaker", speaker_id)
    return rng.standard_normal(cfg.dim) * cfg.speaker_offset_sigma


def gen_embeddings(corpus: Corpus, cfg: SynthConfig, modality: str) -> EmbeddingStore:
    """Frame-level embeddings for every corpus utterance.

    Text: one clean base-vector frame per token. Speech: each token's base
    vector repeated ``frames_per_token`` times, plus the utterance speaker's
    offset and per-frame noise (both Gaussian, per-coordinate sigmas).
    """
    if modality not in (SPEECH, TEXT):
        raise ValidationError(f"unknown modality {modality!r}")
    store = EmbeddingStore(dim=cfg.dim, modality=modality)
    for idx, utt in enumerate(corpus):
        if not utt.transcript_tokens:
            raise ValidationError(f"utterance {utt.id!r} has no tokens to embed")
        bases = np.stack([token_base_vector(t, cfg) for t in utt.transcript_tokens])
        if modality == TEXT:
            frames = bases
        else:
            frames = np.repeat(bases, cfg.frames_per_token, axis=0)
            frames = frames + speaker_offset(utt.speaker_id, cfg)
            noise_rng = _derived_rng(cfg.seed, "noise", idx)
            frames = frames + noise_rng.standard_normal(frames.shape) * cfg.noise_sigma
        store.add(FrameMatrix(utt_id=utt.id, modality=modality, frames=frames.astype(np.float32)))
    return store


def gen_alignment(corpus: Corpus) -> dict[str, list[tuple[int, list[int]]]]:
    """Identity word alignment: source position i maps to target position i."""
    return {
        utt.id: [(i, [i]) for i in range(len(utt.transcript_tokens))]
        for utt in corpus
    }
