"""Evaluation suite: BLEU, WER, rare-word accuracy, retrieval accuracy.

Word alignments and lemma tables are ingested as sidecar files produced by
external tools; when absent, an identity-lemma / surface-match fallback is
used. BLEU follows the standard corpus-level 4-gram definition with
exponential smoothing of zero precisions and a brevity penalty; its
tokenizer splits punctuation from words (a documented simplification of
moses-style tokenizers, so scores are comparable only to themselves).
"""

from __future__ import annotations

import json
import math
import os
import re
from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

from ._fileio import atomic_write
from .corpus import Corpus, escape_field, normalize_word, tokenize, unescape_field
from .errors import ParseError, ValidationError
from .retriever import RetrievalResult
from .splitter import ONE_SHOT, RareWordCatalog

_BLEU_MAX_ORDER = 4
_BLEU_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)

AlignmentSidecar = dict  # utt_id -> list of (source index, [target indices])
LemmaSidecar = dict  # normalized surface -> lemma


def bleu_tokenize(text: str) -> list[str]:
    """Case-preserving tokenization: words and individual punctuation marks."""
    return _BLEU_TOKEN_RE.findall(text)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses: Sequence[str], references: Sequence[str]) -> float:
    """Corpus-level 4-gram BLEU in [0, 100].

    Zero clipped-match counts at some order are smoothed exponentially
    (the k-th zero order contributes 1 / (2^k * total)); orders with no
    hypothesis n-grams at all are excluded from the geometric mean.
    """
    if len(hypotheses) != len(references):
        raise ValidationError(
            f"hypothesis/reference count mismatch: {len(hypotheses)} vs {len(references)}"
        )
    if not hypotheses:
        raise ValidationError("cannot score an empty corpus")
    matches = [0] * _BLEU_MAX_ORDER
    totals = [0] * _BLEU_MAX_ORDER
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_toks = bleu_tokenize(hyp)
        ref_toks = bleu_tokenize(ref)
        hyp_len += len(hyp_toks)
        ref_len += len(ref_toks)
        for n in range(1, _BLEU_MAX_ORDER + 1):
            hyp_counts = _ngrams(hyp_toks, n)
            ref_counts = _ngrams(ref_toks, n)
            totals[n - 1] += sum(hyp_counts.values())
            matches[n - 1] += sum(
                min(c, ref_counts.get(g, 0)) for g, c in hyp_counts.items()
            )
    if hyp_len == 0:
        return 0.0
    log_sum = 0.0
    orders = 0
    smooth_inv = 1.0
    for n in range(_BLEU_MAX_ORDER):
        if totals[n] == 0:
            continue
        orders += 1
        if matches[n] == 0:
            smooth_inv *= 2.0
            precision = 1.0 / (smooth_inv * totals[n])
        else:
            precision = matches[n] / totals[n]
        log_sum += math.log(precision)
    if orders == 0:
        return 0.0
    geo_mean = math.exp(log_sum / orders)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * geo_mean


def _edit_distance(a: Sequence[str], b: Sequence[str]) -> int:
    # Word-level Levenshtein, two-row dynamic programming.
    prev = list(range(len(b) + 1))
    for i, tok_a in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, tok_b in enumerate(b, start=1):
            cur[j] = min(
                prev[j] + 1,
                cur[j - 1] + 1,
                prev[j - 1] + (tok_a != tok_b),
            )
        prev = cur
    return prev[len(b)]


def wer(hypotheses: Sequence[str], references: Sequence[str]) -> float:
    """Total word edits divided by total reference words, over normalized tokens."""
    if len(hypotheses) != len(references):
        raise ValidationError(
            f"hypothesis/reference count mismatch: {len(hypotheses)} vs {len(references)}"
        )
    edits = 0
    ref_words = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_toks = tokenize(hyp)
        ref_toks = tokenize(ref)
        edits += _edit_distance(hyp_toks, ref_toks)
        ref_words += len(ref_toks)
    if ref_words == 0:
        raise ValidationError("reference corpus has no words")
    return edits / ref_words


@dataclass
class RareWordAccuracy:
    """Unique-word translation accuracy, overall and by shot class."""

    matched_zero: int
    total_zero: int
    matched_one: int
    total_one: int
    warnings: list[str] = field(default_factory=list)

    @staticmethod
    def _pct(matched: int, total: int) -> float:
        return 100.0 * matched / total if total else 0.0

    @property
    def overall_pct(self) -> float:
        return self._pct(self.matched_zero + self.matched_one, self.total_zero + self.total_one)

    @property
    def zero_shot_pct(self) -> float:
        return self._pct(self.matched_zero, self.total_zero)

    @property
    def one_shot_pct(self) -> float:
        return self._pct(self.matched_one, self.total_one)


def _lemma_bag(text: str, lemmas: LemmaSidecar | None, warnings: list[str] | None) -> set[str]:
    bag = set()
    for tok in text.split():
        norm = normalize_word(tok)
        if not norm:
            continue
        if lemmas is None:
            bag.add(norm)
        elif norm in lemmas:
            bag.add(lemmas[norm].lower())
        else:
            if warnings is not None:
                warnings.append(f"no lemma for {norm!r}; using surface form")
            bag.add(norm)
    return bag


def _aligned_target_lemmas(
    word: str,
    source_tokens: Sequence[str],
    ref_text: str,
    utt_align: list | None,
    lemmas: LemmaSidecar | None,
    warnings: list[str],
    utt_id: str,
) -> set[str] | None:
    """Lemmas of reference tokens aligned to ``word``; None = no alignment."""
    if utt_align is None:
        return None
    positions = [i for i, tok in enumerate(source_tokens) if tok == word]
    if not positions:
        warnings.append(f"word {word!r} not found in source tokens of {utt_id!r}")
        return None
    align_map = {src: list(tgts) for src, tgts in utt_align}
    ref_tokens = ref_text.split()
    out: set[str] = set()
    covered = False
    for pos in positions:
        if pos not in align_map:
            continue
        covered = True
        for tgt in align_map[pos]:
            if not 0 <= tgt < len(ref_tokens):
                warnings.append(f"alignment index {tgt} out of range for {utt_id!r}")
                continue
            norm = normalize_word(ref_tokens[tgt])
            if not norm:
                continue
            if lemmas is not None and norm in lemmas:
                out.add(lemmas[norm].lower())
            else:
                if lemmas is not None:
                    warnings.append(f"no lemma for {norm!r}; using surface form")
                out.add(norm)
    if not covered:
        warnings.append(f"no alignment covers {word!r} in {utt_id!r}")
        return None
    return out


def rare_word_accuracy(
    hyps: Mapping[str, str],
    refs: Mapping[str, str],
    catalog: RareWordCatalog,
    align: AlignmentSidecar | None,
    lemmas: LemmaSidecar | None,
    test_corpus: Corpus,
) -> RareWordAccuracy:
    """How many unique catalog words are translated in their test utterance.

    A word counts as translated when some reference token aligned to its
    source position shares a lemma with some hypothesis token
    (case-insensitive). Without an alignment for the utterance, the check
    falls back to the word's own surface form, with a warning.
    """
    warnings: list[str] = []
    matched = {False: 0, True: 0}  # key: is one-shot
    total = {False: 0, True: 0}
    for entry in catalog:
        utt_id = entry.devtst_utt
        if utt_id not in hyps or utt_id not in refs:
            raise ValidationError(
                f"word {entry.word!r}: test utterance {utt_id!r} missing from hyps/refs"
            )
        one_shot = entry.shot_class == ONE_SHOT
        total[one_shot] += 1
        hyp_bag = _lemma_bag(hyps[utt_id], lemmas, None)
        targets = _aligned_target_lemmas(
            entry.word,
            test_corpus.get(utt_id).transcript_tokens,
            refs[utt_id],
            align.get(utt_id) if align is not None else None,
            lemmas,
            warnings,
            utt_id,
        )
        if targets is None:
            warnings.append(
                f"word {entry.word!r}: no usable alignment; falling back to surface match"
            )
            if entry.word in hyp_bag:
                matched[one_shot] += 1
        elif targets & hyp_bag:
            matched[one_shot] += 1
    return RareWordAccuracy(
        matched_zero=matched[False],
        total_zero=total[False],
        matched_one=matched[True],
        total_one=total[True],
        warnings=warnings,
    )


def retrieval_topk_accuracy(
    results: Sequence[RetrievalResult],
    catalog: RareWordCatalog,
    corpora: Sequence[Corpus],
    k_values: Sequence[int],
) -> dict[int, float]:
    """Share of queries whose rare word occurs in a top-k candidate transcript."""
    if not results:
        raise ValidationError("no retrieval results to score")
    transcripts: dict[str, tuple[str, ...]] = {}
    for corpus in corpora:
        for utt in corpus:
            transcripts[utt.id] = utt.transcript_tokens
    correct = {k: 0 for k in k_values}
    for r in results:
        word = catalog.word_for_utterance(r.query_id)
        if word is None:
            raise ValidationError(f"query {r.query_id!r} has no catalog rare word")
        for k in k_values:
            hit = False
            for cid in r.top_ids(k):
                if cid not in transcripts:
                    raise ValidationError(f"candidate {cid!r} not found in supplied corpora")
                if word in transcripts[cid]:
                    hit = True
                    break
            correct[k] += hit
    return {k: 100.0 * correct[k] / len(results) for k in k_values}


def oracle_ceiling(
    catalog: RareWordCatalog,
    gold_pairs,
    refs: Mapping[str, str],
    align: AlignmentSidecar | None,
    lemmas: LemmaSidecar | None,
) -> float:
    """Best achievable unique-word accuracy when copying gold examples.

    A word can be translated at all only if its gold example's translation
    shares a lemma with the reference tokens aligned to it.
    """
    if not gold_pairs:
        raise ValidationError("no gold pairs supplied")
    warnings: list[str] = []
    words: set[str] = set()
    matched: set[str] = set()
    for pair in gold_pairs:
        word = pair.link_word
        if not word:
            raise ValidationError(f"pair for {pair.main.id!r} has no link word")
        words.add(word)
        utt_id = pair.main.id
        if utt_id not in refs:
            raise ValidationError(f"test utterance {utt_id!r} missing from refs")
        example_bag = _lemma_bag(pair.example.translation_raw, lemmas, None)
        targets = _aligned_target_lemmas(
            word,
            pair.main.transcript_tokens,
            refs[utt_id],
            align.get(utt_id) if align is not None else None,
            lemmas,
            warnings,
            utt_id,
        )
        if targets is None:
            if word in example_bag:
                matched.add(word)
        elif targets & example_bag:
            matched.add(word)
    return 100.0 * len(matched) / len(words)


@dataclass
class EvalReport:
    """All evaluation quantities for one run."""

    bleu: float | None = None
    wer: float | None = None
    rare_overall_pct: float | None = None
    rare_zero_shot_pct: float | None = None
    rare_one_shot_pct: float | None = None
    retrieval_topk_pct: dict[int, float] = field(default_factory=dict)
    ceiling_pct: float | None = None
    same_speaker_top1_pct: float | None = None

    def __post_init__(self):
        for name in ("bleu", "rare_overall_pct", "rare_zero_shot_pct",
                     "rare_one_shot_pct", "ceiling_pct", "same_speaker_top1_pct"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 100.0:
                raise ValidationError(f"{name} out of [0, 100]: {value}")
        for k, value in self.retrieval_topk_pct.items():
            if not 0.0 <= value <= 100.0:
                raise ValidationError(f"top-{k} accuracy out of [0, 100]: {value}")
        if self.wer is not None and self.wer < 0:
            raise ValidationError(f"wer must be >= 0: {self.wer}")

    def to_dict(self) -> dict:
        return {
            "bleu": self.bleu,
            "wer": self.wer,
            "rare_overall_pct": self.rare_overall_pct,
            "rare_zero_shot_pct": self.rare_zero_shot_pct,
            "rare_one_shot_pct": self.rare_one_shot_pct,
            "retrieval_topk_pct": {str(k): v for k, v in self.retrieval_topk_pct.items()},
            "ceiling_pct": self.ceiling_pct,
            "same_speaker_top1_pct": self.same_speaker_top1_pct,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls(
            bleu=data.get("bleu"),
            wer=data.get("wer"),
            rare_overall_pct=data.get("rare_overall_pct"),
            rare_zero_shot_pct=data.get("rare_zero_shot_pct"),
            rare_one_shot_pct=data.get("rare_one_shot_pct"),
            retrieval_topk_pct={int(k): v for k, v in data.get("retrieval_topk_pct", {}).items()},
            ceiling_pct=data.get("ceiling_pct"),
            same_speaker_top1_pct=data.get("same_speaker_top1_pct"),
        )


def write_report(report: EvalReport, path: str | os.PathLike) -> None:
    with atomic_write(path) as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report(path: str | os.PathLike) -> EvalReport:
    with open(path, encoding="utf-8") as fh:
        return EvalReport.from_dict(json.load(fh))


def write_report_tsv(report: EvalReport, path: str | os.PathLike) -> None:
    """Flat metric/value TSV rendering of a report."""
    rows: list[tuple[str, object]] = []
    d = report.to_dict()
    topk = d.pop("retrieval_topk_pct")
    for key in sorted(d):
        rows.append((key, d[key]))
    for k in sorted(topk, key=int):
        rows.append((f"retrieval_top{k}_pct", topk[k]))
    with atomic_write(path) as fh:
        fh.write("metric\tvalue\n")
        for key, value in rows:
            fh.write(f"{key}\t{'' if value is None else value!r}\n")


def write_alignment(align: AlignmentSidecar, path: str | os.PathLike) -> None:
    """JSON-lines sidecar: {"id": ..., "align": [[src, [tgt, ...]], ...]}."""
    with atomic_write(path) as fh:
        for utt_id in align:
            record = {"id": utt_id, "align": [[s, list(t)] for s, t in align[utt_id]]}
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_alignment(path: str | os.PathLike) -> AlignmentSidecar:
    out: AlignmentSidecar = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                utt_id = record["id"]
                align = [(int(s), [int(t) for t in tgts]) for s, tgts in record["align"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad alignment record: {exc}", lineno) from None
            if utt_id in out:
                raise ParseError(f"duplicate alignment id {utt_id!r}", lineno)
            out[utt_id] = align
    return out


def write_lemmas(lemmas: LemmaSidecar, path: str | os.PathLike) -> None:
    with atomic_write(path) as fh:
        fh.write("surface\tlemma\n")
        for surface in sorted(lemmas):
            fh.write(f"{escape_field(surface)}\t{escape_field(lemmas[surface])}\n")


def read_lemmas(path: str | os.PathLike) -> LemmaSidecar:
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != "surface\tlemma":
        raise ParseError("bad lemma sidecar header", 1)
    out: LemmaSidecar = {}
    for lineno, row in enumerate(lines[1:], start=2):
        cols = row.split("\t")
        if len(cols) != 2:
            raise ParseError(f"expected 2 columns, found {len(cols)}", lineno)
        surface, lemma = (unescape_field(c, lineno) for c in cols)
        if not lemma:
            raise ParseError("empty lemma", lineno)
        out[surface] = lemma
    return out


def write_hyps(hyps: Mapping[str, str], path: str | os.PathLike) -> None:
    """Hypothesis TSV: utterance id and translation text."""
    with atomic_write(path) as fh:
        fh.write("id\ttext\n")
        for utt_id in hyps:
            fh.write(f"{escape_field(utt_id)}\t{escape_field(hyps[utt_id])}\n")


def read_hyps(path: str | os.PathLike) -> dict[str, str]:
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != "id\ttext":
        raise ParseError("bad hypothesis header", 1)
    out: dict[str, str] = {}
    for lineno, row in enumerate(lines[1:], start=2):
        cols = row.split("\t")
        if len(cols) != 2:
            raise ParseError(f"expected 2 columns, found {len(cols)}", lineno)
        utt_id, text = (unescape_field(c, lineno) for c in cols)
        if utt_id in out:
            raise ParseError(f"duplicate hypothesis id {utt_id!r}", lineno)
        out[utt_id] = text
    return out
