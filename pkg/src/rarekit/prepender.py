"""Example-prepended dataset construction.

Training pairs link each utterance to another one sharing its sentence-level
rare word (the token with least corpus frequency); gold test pairs link each
test utterance to a pool utterance containing its catalog rare word. Targets
are concatenated as ``example <SEP> main`` with the loss boundary recorded.
"""

from __future__ import annotations

import os
import random
from dataclasses import dataclass

from ._fileio import atomic_write
from .corpus import Corpus, Utterance, escape_field, unescape_field
from .errors import ParseError, ValidationError
from .splitter import FrequencyTable, RareWordCatalog

SEP_TOKEN = "<SEP>"


@dataclass(frozen=True)
class PrependedPair:
    """An example utterance attached to a main utterance."""

    example: Utterance
    main: Utterance
    link_word: str  # empty when the pairing fell back to a random example
    gold: bool

    def __post_init__(self):
        if self.example.id == self.main.id:
            raise ValidationError(f"utterance {self.main.id!r} paired with itself")
        if self.gold:
            if (self.link_word not in self.example.transcript_tokens
                    or self.link_word not in self.main.transcript_tokens):
                raise ValidationError(
                    f"gold pair {self.main.id!r}/{self.example.id!r}: link word "
                    f"{self.link_word!r} missing from a transcript"
                )


def sentence_rare_word(utt: Utterance, freqs: FrequencyTable) -> list[str]:
    """Distinct tokens of ``utt`` ordered by (corpus frequency, spelling).

    The head of the list is the sentence-level rare word. Tokens absent
    from the frequency table are ignored; an utterance with no counted
    token is an error.
    """
    seen = []
    for tok in utt.transcript_tokens:
        if tok in freqs and tok not in seen:
            seen.append(tok)
    if not seen:
        raise ValidationError(f"utterance {utt.id!r} has no token with a known frequency")
    return sorted(seen, key=lambda t: (freqs[t], t))


def build_prepended_train_set(
    train: Corpus, freqs: FrequencyTable, seed: int
) -> list[PrependedPair]:
    """Pair every training utterance with an example sharing its rarest word.

    Candidate words are tried from rarest to most frequent; at the first one
    contained in at least one other utterance, a uniform seeded sample of
    those others becomes the example. Utterances sharing no word with anyone
    get a random example and an empty link word. Each utterance draws from
    its own RNG stream keyed by (seed, utterance id), so pairing is stable
    under reordering.
    """
    if len(train) < 2:
        raise ValidationError("prepended training set needs at least 2 utterances")
    by_word: dict[str, list[str]] = {}
    for utt in train:
        for tok in set(utt.transcript_tokens):
            by_word.setdefault(tok, []).append(utt.id)
    pairs: list[PrependedPair] = []
    all_ids = list(train.ids)
    for utt in train:
        rng = random.Random(f"prepend:{seed}:{utt.id}")
        try:
            candidates = sentence_rare_word(utt, freqs)
        except ValidationError:
            candidates = []
        example_id = None
        link_word = ""
        for word in candidates:
            others = [uid for uid in by_word.get(word, ()) if uid != utt.id]
            if others:
                example_id = others[rng.randrange(len(others))]
                link_word = word
                break
        if example_id is None:
            others = [uid for uid in all_ids if uid != utt.id]
            example_id = others[rng.randrange(len(others))]
        pairs.append(
            PrependedPair(example=train.get(example_id), main=utt, link_word=link_word, gold=False)
        )
    return pairs


def build_gold_test_set(
    tst: Corpus, pool: Corpus, catalog: RareWordCatalog
) -> tuple[list[PrependedPair], list[str]]:
    """Pair each test utterance with the pool utterance holding its rare word.

    When several pool utterances contain the word, the smallest id wins.
    Test utterances without a catalog word, or whose word has no pool
    candidate, are reported as violations rather than raising.
    """
    pairs: list[PrependedPair] = []
    violations: list[str] = []
    for utt in tst:
        word = catalog.word_for_utterance(utt.id)
        if word is None:
            violations.append(f"test utterance {utt.id!r} has no catalog rare word")
            continue
        candidates = sorted(u.id for u in pool if word in u.transcript_tokens)
        if not candidates:
            violations.append(f"word {word!r} of test utterance {utt.id!r} has no pool candidate")
            continue
        pairs.append(
            PrependedPair(example=pool.get(candidates[0]), main=utt, link_word=word, gold=True)
        )
    return pairs, violations


def concat_target(example_translation: str, main_translation: str) -> tuple[str, int]:
    """Join the example translation, the separator, and the main translation.

    Returns the concatenated text and the whitespace-token index of the
    first main-translation token (one past the separator). Either input
    containing the literal separator token is an error.
    """
    for text, which in ((example_translation, "example"), (main_translation, "main")):
        if SEP_TOKEN in text:
            raise ValidationError(f"{which} translation contains the separator token {SEP_TOKEN}")
    prefix = example_translation.split()
    tokens = prefix + [SEP_TOKEN] + main_translation.split()
    return " ".join(tokens), len(prefix) + 1


def write_pairs(pairs, path: str | os.PathLike) -> None:
    """Write pairs TSV: main_id, example_id, link_word, gold (1/0)."""
    with atomic_write(path) as fh:
        fh.write("main_id\texample_id\tlink_word\tgold\n")
        for p in pairs:
            fields = (p.main.id, p.example.id, p.link_word, "1" if p.gold else "0")
            fh.write("\t".join(escape_field(f) for f in fields) + "\n")


def read_pairs(path: str | os.PathLike, main_corpus: Corpus, example_corpus: Corpus) -> list[PrependedPair]:
    """Re-materialize pairs from TSV against the corpora they reference."""
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != "main_id\texample_id\tlink_word\tgold":
        raise ParseError("bad pairs header", 1)
    pairs = []
    for lineno, row in enumerate(lines[1:], start=2):
        cols = row.split("\t")
        if len(cols) != 4:
            raise ParseError(f"expected 4 columns, found {len(cols)}", lineno)
        main_id, example_id, link_word, gold = (unescape_field(c, lineno) for c in cols)
        if gold not in ("0", "1"):
            raise ParseError(f"bad gold flag {gold!r}", lineno)
        pairs.append(
            PrependedPair(
                example=example_corpus.get(example_id),
                main=main_corpus.get(main_id),
                link_word=link_word,
                gold=gold == "1",
            )
        )
    return pairs
