"""Utterance/corpus data model, word normalization, and manifest TSV I/O.

A manifest is a UTF-8 TSV with a header row and the columns
``id, speaker, duration_s, transcript, translation, embedding_ref``.
Tabs, newlines, and backslashes inside fields are escaped as ``\\t``,
``\\n``, ``\\\\``; a missing embedding_ref is the empty string.
"""

from __future__ import annotations

import os
import unicodedata
from dataclasses import dataclass, field

from ._fileio import atomic_write
from .errors import ParseError, ValidationError

MANIFEST_COLUMNS = ("id", "speaker", "duration_s", "transcript", "translation", "embedding_ref")


def _is_edge_punct(ch: str) -> bool:
    # Punctuation and symbol categories; covers quotes, dashes, currency marks.
    return unicodedata.category(ch)[0] in ("P", "S")


def normalize_word(raw: str) -> str:
    """Normalize one whitespace-free token to its counting form.

    Lowercases, applies Unicode NFC, and strips leading/trailing punctuation
    while preserving internal apostrophes and hyphens. Returns "" for
    punctuation-only input. Total and idempotent.
    """
    w = unicodedata.normalize("NFC", raw.lower())
    start, end = 0, len(w)
    while start < end and _is_edge_punct(w[start]):
        start += 1
    while end > start and _is_edge_punct(w[end - 1]):
        end -= 1
    return w[start:end]


def tokenize(text: str) -> tuple[str, ...]:
    """Whitespace-split then normalize; empty normalizations are dropped."""
    return tuple(t for t in (normalize_word(w) for w in text.split()) if t)


@dataclass(frozen=True)
class Utterance:
    """One recording with its transcript and translation.

    ``transcript_tokens`` is always derived from ``transcript_raw`` so the
    tokenization invariant cannot be violated by construction.
    """

    id: str
    speaker_id: str
    duration_s: float
    transcript_raw: str
    translation_raw: str
    embedding_ref: str = ""
    transcript_tokens: tuple[str, ...] = field(init=False, compare=True)

    def __post_init__(self):
        if not self.id:
            raise ValidationError("utterance id must be non-empty")
        if self.duration_s < 0:
            raise ValidationError(f"utterance {self.id!r}: negative duration {self.duration_s}")
        object.__setattr__(self, "transcript_tokens", tokenize(self.transcript_raw))


@dataclass(frozen=True)
class Corpus:
    """Ordered, immutable collection of utterances with unique ids."""

    utterances: tuple[Utterance, ...]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "utterances", tuple(self.utterances))
        index: dict[str, Utterance] = {}
        for utt in self.utterances:
            if utt.id in index:
                raise ValidationError(f"duplicate utterance id {utt.id!r} in corpus {self.name!r}")
            index[utt.id] = utt
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def __contains__(self, utt_id: str) -> bool:
        return utt_id in self._index

    def get(self, utt_id: str) -> Utterance:
        try:
            return self._index[utt_id]
        except KeyError:
            raise ValidationError(f"unknown utterance id {utt_id!r}") from None

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(u.id for u in self.utterances)

    def subset(self, ids, name: str = "") -> "Corpus":
        """Sub-corpus containing ``ids``, preserving this corpus's order."""
        wanted = set(ids)
        missing = wanted - set(self._index)
        if missing:
            raise ValidationError(f"unknown utterance ids: {sorted(missing)[:5]}")
        return Corpus(tuple(u for u in self.utterances if u.id in wanted), name=name or self.name)


_ESCAPES = {"\\": "\\\\", "\t": "\\t", "\n": "\\n"}
_UNESCAPES = {"\\": "\\", "t": "\t", "n": "\n"}


def escape_field(value: str) -> str:
    return "".join(_ESCAPES.get(ch, ch) for ch in value)


def unescape_field(value: str, line: int | None = None) -> str:
    out: list[str] = []
    i = 0
    while i < len(value):
        ch = value[i]
        if ch == "\\":
            if i + 1 >= len(value):
                raise ParseError("dangling backslash in field", line)
            nxt = value[i + 1]
            if nxt not in _UNESCAPES:
                raise ParseError(f"unknown escape sequence \\{nxt}", line)
            out.append(_UNESCAPES[nxt])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def parse_manifest(path: str | os.PathLike, name: str = "") -> Corpus:
    """Read a manifest TSV into a Corpus; tokens are computed eagerly.

    Raises ParseError naming the physical line on malformed rows and
    ValidationError on duplicate ids or invalid field values.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        content = fh.read()
    lines = content.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty manifest: missing header row", 1)
    header = lines[0].split("\t")
    if tuple(header) != MANIFEST_COLUMNS:
        raise ParseError(f"bad header {header!r}; expected {list(MANIFEST_COLUMNS)}", 1)

    utterances = []
    for lineno, row in enumerate(lines[1:], start=2):
        cols = row.split("\t")
        if len(cols) != len(MANIFEST_COLUMNS):
            raise ParseError(f"expected {len(MANIFEST_COLUMNS)} columns, found {len(cols)}", lineno)
        utt_id, speaker, duration, transcript, translation, ref = (
            unescape_field(c, lineno) for c in cols
        )
        try:
            duration_s = float(duration)
        except ValueError:
            raise ParseError(f"bad duration_s {duration!r}", lineno) from None
        try:
            utterances.append(
                Utterance(
                    id=utt_id,
                    speaker_id=speaker,
                    duration_s=duration_s,
                    transcript_raw=transcript,
                    translation_raw=translation,
                    embedding_ref=ref,
                )
            )
        except ValidationError as exc:
            raise ParseError(str(exc), lineno) from None
    return Corpus(tuple(utterances), name=name or os.path.basename(os.fspath(path)))


def write_manifest(corpus: Corpus, path: str | os.PathLike) -> None:
    """Write a Corpus as manifest TSV; round-trips field-for-field."""
    with atomic_write(path) as fh:
        fh.write("\t".join(MANIFEST_COLUMNS) + "\n")
        for u in corpus:
            fields = (
                u.id,
                u.speaker_id,
                repr(u.duration_s),
                u.transcript_raw,
                u.translation_raw,
                u.embedding_ref,
            )
            fh.write("\t".join(escape_field(f) for f in fields) + "\n")
