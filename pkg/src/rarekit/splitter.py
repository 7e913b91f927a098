"""Rare-word corpus re-splitting.

Words whose corpus-level frequency is exactly two or three are selected as
rare words. Each claims distinct utterances for the example pool, the joint
dev/tst set, and (frequency three only) the reduced training set, producing
zero-shot words that never occur in training and one-shot words that occur
exactly once.
"""

from __future__ import annotations

import os
import random
from collections import Counter
from dataclasses import dataclass

from ._fileio import atomic_write
from .corpus import Corpus, escape_field, unescape_field
from .errors import ParseError, ValidationError

RARE_FREQUENCIES = (2, 3)
DEFAULT_TST_SIZE = 2500

ZERO_SHOT = "zero"
ONE_SHOT = "one"


FrequencyTable = Counter  # normalized word -> total occurrence count


@dataclass(frozen=True)
class CatalogEntry:
    """Split assignment for one rare word."""

    word: str
    shot_class: str  # ZERO_SHOT or ONE_SHOT
    pool_utt: str
    devtst_utt: str
    train_utt: str | None = None

    def __post_init__(self):
        if self.shot_class not in (ZERO_SHOT, ONE_SHOT):
            raise ValidationError(f"bad shot class {self.shot_class!r}")
        if (self.shot_class == ZERO_SHOT) != (self.train_utt is None):
            raise ValidationError(
                f"word {self.word!r}: shot class {self.shot_class} inconsistent with train_utt"
            )


@dataclass(frozen=True)
class RareWordCatalog:
    """Map from rare word to its catalog entry."""

    entries: dict[str, CatalogEntry]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries.values())

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    def word_for_utterance(self, utt_id: str) -> str | None:
        """Rare word whose dev/tst occurrence is ``utt_id``, if any."""
        return self._by_devtst.get(utt_id)

    def __post_init__(self):
        object.__setattr__(
            self, "_by_devtst", {e.devtst_utt: w for w, e in self.entries.items()}
        )


@dataclass(frozen=True)
class SplitBundle:
    """The four-way partition plus its rare-word catalog."""

    pool: Corpus
    dev: Corpus
    tst: Corpus
    train_reduced: Corpus
    catalog: RareWordCatalog

    @property
    def corpora(self) -> dict[str, Corpus]:
        return {
            "pool": self.pool,
            "dev": self.dev,
            "tst": self.tst,
            "train_reduced": self.train_reduced,
        }


def count_frequencies(corpus: Corpus) -> FrequencyTable:
    """Corpus-level occurrence counts over normalized transcript tokens.

    An utterance containing a word twice contributes two.
    """
    if len(corpus) == 0:
        raise ValidationError("cannot count frequencies of an empty corpus")
    counts: FrequencyTable = Counter()
    for utt in corpus:
        counts.update(utt.transcript_tokens)
    return counts


def split_dev_tst(joint: Corpus, tst_size: int, seed: int) -> tuple[Corpus, Corpus]:
    """Seeded shuffle of the joint set; first ``tst_size`` become tst.

    Output corpora preserve the joint corpus's original utterance order.
    """
    if not 0 <= tst_size <= len(joint):
        raise ValidationError(f"tst_size {tst_size} out of range [0, {len(joint)}]")
    ids = list(joint.ids)
    random.Random(f"devtst:{seed}").shuffle(ids)
    tst_ids = set(ids[:tst_size])
    dev = joint.subset([i for i in joint.ids if i not in tst_ids], name="dev")
    tst = joint.subset([i for i in joint.ids if i in tst_ids], name="tst")
    return dev, tst


def partition(corpus: Corpus, seed: int, tst_size: int | None = None) -> SplitBundle:
    """Partition a corpus into pool / dev / tst / train-reduced.

    Frequencies are computed once on the input corpus. Rare words are
    processed in ascending lexicographic order; each word's occurrence
    utterances are taken in ascending id order and must be distinct and
    still unassigned, otherwise the word is dropped (no partial moves).
    ``tst_size`` defaults to 2500, clamped to half the joint dev/tst set.
    """
    freqs = count_frequencies(corpus)
    occurrences: dict[str, list[str]] = {}
    for utt in corpus:
        for tok in set(utt.transcript_tokens):
            if freqs[tok] in RARE_FREQUENCIES:
                occurrences.setdefault(tok, []).append(utt.id)

    assigned: dict[str, str] = {}  # utt id -> "pool" | "devtst" | "train"
    entries: dict[str, CatalogEntry] = {}
    for word in sorted(occurrences):
        slots = ("pool", "devtst") if freqs[word] == 2 else ("pool", "devtst", "train")
        hosts = sorted(uid for uid in occurrences[word] if uid not in assigned)
        if len(hosts) < len(slots):
            continue  # starved: some occurrence utterance already claimed
        chosen = hosts[: len(slots)]
        for uid, slot in zip(chosen, slots):
            assigned[uid] = slot
        entries[word] = CatalogEntry(
            word=word,
            shot_class=ZERO_SHOT if freqs[word] == 2 else ONE_SHOT,
            pool_utt=chosen[0],
            devtst_utt=chosen[1],
            train_utt=chosen[2] if len(chosen) == 3 else None,
        )

    pool_ids = [u.id for u in corpus if assigned.get(u.id) == "pool"]
    joint_ids = [u.id for u in corpus if assigned.get(u.id) == "devtst"]
    train_ids = [u.id for u in corpus if assigned.get(u.id) in (None, "train")]

    pool = corpus.subset(pool_ids, name="pool")
    joint = corpus.subset(joint_ids, name="devtst")
    train_reduced = corpus.subset(train_ids, name="train_reduced")
    if tst_size is None:
        tst_size = min(DEFAULT_TST_SIZE, len(joint) // 2)
    dev, tst = split_dev_tst(joint, tst_size, seed)
    return SplitBundle(pool=pool, dev=dev, tst=tst, train_reduced=train_reduced,
                       catalog=RareWordCatalog(entries))


def verify_splits(bundle: SplitBundle, original: Corpus | None = None) -> list[str]:
    """Check every split invariant; returns one message per violation.

    Violations are data, not errors: an empty list means the bundle is sound.
    When ``original`` is given, the partition is also checked for being
    disjoint and exhaustive against it.
    """
    violations: list[str] = []
    corpora = bundle.corpora

    seen: dict[str, str] = {}
    for split_name, corpus in corpora.items():
        for utt in corpus:
            if utt.id in seen:
                violations.append(
                    f"utterance {utt.id!r} appears in both {seen[utt.id]} and {split_name}"
                )
            else:
                seen[utt.id] = split_name

    if original is not None:
        original_ids = set(original.ids)
        union = set(seen)
        for missing in sorted(original_ids - union):
            violations.append(f"utterance {missing!r} from the original corpus is unassigned")
        for extra in sorted(union - original_ids):
            violations.append(f"utterance {extra!r} does not exist in the original corpus")

    def containing(corpus: Corpus, word: str) -> list[str]:
        return [u.id for u in corpus if word in u.transcript_tokens]

    devtst_ids = set(bundle.dev.ids) | set(bundle.tst.ids)
    for entry in bundle.catalog:
        w = entry.word
        if entry.shot_class == ZERO_SHOT and containing(bundle.train_reduced, w):
            violations.append(f"zero-shot word {w!r} occurs in train-reduced")
        if entry.shot_class == ONE_SHOT:
            n = len(containing(bundle.train_reduced, w))
            if n != 1:
                violations.append(
                    f"one-shot word {w!r} occurs in {n} train-reduced utterances, expected 1"
                )
        if not containing(bundle.pool, w):
            violations.append(f"word {w!r} has no pool utterance containing it")
        n_devtst = len(containing(bundle.dev, w)) + len(containing(bundle.tst, w))
        if n_devtst != 1:
            violations.append(
                f"word {w!r} occurs in {n_devtst} dev/tst utterances, expected exactly 1"
            )
        if entry.pool_utt not in bundle.pool:
            violations.append(f"word {w!r}: pool utterance {entry.pool_utt!r} not in pool split")
        if entry.devtst_utt not in devtst_ids:
            violations.append(
                f"word {w!r}: dev/tst utterance {entry.devtst_utt!r} not in dev or tst split"
            )
        if entry.train_utt is not None and entry.train_utt not in bundle.train_reduced:
            violations.append(
                f"word {w!r}: train utterance {entry.train_utt!r} not in train-reduced split"
            )
    return violations


def write_catalog(catalog: RareWordCatalog, path: str | os.PathLike) -> None:
    """Write the catalog TSV: word, shot_class, pool_id, devtst_id, train_id."""
    with atomic_write(path) as fh:
        fh.write("word\tshot_class\tpool_id\tdevtst_id\ttrain_id\n")
        for word in sorted(catalog.entries):
            e = catalog.entries[word]
            fields = (e.word, e.shot_class, e.pool_utt, e.devtst_utt, e.train_utt or "")
            fh.write("\t".join(escape_field(f) for f in fields) + "\n")


def read_catalog(path: str | os.PathLike) -> RareWordCatalog:
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != "word\tshot_class\tpool_id\tdevtst_id\ttrain_id":
        raise ParseError("bad catalog header", 1)
    entries: dict[str, CatalogEntry] = {}
    for lineno, row in enumerate(lines[1:], start=2):
        cols = row.split("\t")
        if len(cols) != 5:
            raise ParseError(f"expected 5 columns, found {len(cols)}", lineno)
        word, shot, pool_id, devtst_id, train_id = (unescape_field(c, lineno) for c in cols)
        if word in entries:
            raise ParseError(f"duplicate catalog word {word!r}", lineno)
        entries[word] = CatalogEntry(
            word=word,
            shot_class=shot,
            pool_utt=pool_id,
            devtst_utt=devtst_id,
            train_utt=train_id or None,
        )
    return RareWordCatalog(entries)
