"""Prefix-masked negative log likelihood over gold-token probabilities.

The target of an example-prepended sample is the example translation, a
separator token, and the main translation. Positions before the boundary
(the example and the separator) are masked out of the loss; the reduction
is a sum, so a batch of prepended samples carries the same loss scale as
the same suffixes without prefixes.
"""

from __future__ import annotations

import json
import math
import os
from collections.abc import Sequence
from dataclasses import dataclass

from ._fileio import atomic_write
from .errors import ParseError, ValidationError
from .prepender import SEP_TOKEN


@dataclass(frozen=True)
class TargetLayout:
    """Concatenated target tokens with the prefix boundary.

    ``boundary`` indexes the first main-translation token; ``sep_index`` is
    the separator position (None only in the degenerate no-prefix layout,
    where boundary is 0).
    """

    tokens: tuple[str, ...]
    boundary: int
    sep_index: int | None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if self.sep_index is None:
            if self.boundary != 0:
                raise ValidationError("layout without separator must have boundary 0")
            return
        if not 0 <= self.sep_index < self.boundary <= len(self.tokens):
            raise ValidationError(
                f"need 0 <= sep_index ({self.sep_index}) < boundary ({self.boundary}) "
                f"<= length ({len(self.tokens)})"
            )
        if self.tokens[self.sep_index] != SEP_TOKEN:
            raise ValidationError(
                f"token at sep_index is {self.tokens[self.sep_index]!r}, expected {SEP_TOKEN!r}"
            )

    @classmethod
    def from_texts(cls, example_translation: str, main_translation: str) -> "TargetLayout":
        """Layout for ``example <SEP> main``; boundary is one past the separator."""
        from .prepender import concat_target

        text, boundary = concat_target(example_translation, main_translation)
        return cls(tokens=tuple(text.split()), boundary=boundary, sep_index=boundary - 1)

    @classmethod
    def unprefixed(cls, tokens: Sequence[str]) -> "TargetLayout":
        """Degenerate layout for a plain target with no example prefix."""
        return cls(tokens=tuple(tokens), boundary=0, sep_index=None)


def build_mask(layout: TargetLayout) -> list[int]:
    """0 for prefix positions (example + separator), 1 for the main target."""
    return [0 if t < layout.boundary else 1 for t in range(len(layout.tokens))]


def masked_nll(probs: Sequence[float], layout: TargetLayout) -> float:
    """-sum of log gold-token probabilities over unmasked positions.

    Probabilities must lie in (0, 1] and cover every layout position; a sum
    (not mean) reduction keeps the loss scale equal to the plain loss of
    the suffix alone.
    """
    if len(probs) != len(layout.tokens):
        raise ValidationError(
            f"{len(probs)} probabilities for {len(layout.tokens)} target positions"
        )
    for t, p in enumerate(probs):
        if not 0.0 < p <= 1.0:
            raise ValidationError(f"probability at position {t} out of (0, 1]: {p}")
    return -sum(math.log(p) for t, p in enumerate(probs) if t >= layout.boundary)


def masked_nll_mean(probs: Sequence[float], layout: TargetLayout) -> float:
    """Mean-reduction variant; 0.0 when every position is masked."""
    n = len(layout.tokens) - layout.boundary
    total = masked_nll(probs, layout)
    return total / n if n else 0.0


def validate_prefix(hypothesis_tokens: Sequence[str], layout: TargetLayout) -> bool:
    """True iff the hypothesis starts with the exact forced prefix.

    The prefix is the example translation plus the separator, i.e.
    ``layout.tokens[:boundary]``; a consuming decoder must reproduce it
    verbatim before free generation.
    """
    hyp = tuple(hypothesis_tokens)
    if len(hyp) < layout.boundary:
        return False
    return hyp[: layout.boundary] == layout.tokens[: layout.boundary]


def read_prob_fixtures(path: str | os.PathLike) -> list[tuple[str, TargetLayout, list[float]]]:
    """Read JSON-lines probability fixtures: {"id", "boundary", "probs"}.

    Returns (id, layout, probs) triples; fixture layouts use placeholder
    prefix tokens since only the boundary affects the loss.
    """
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                fixture_id = str(record["id"])
                boundary = int(record["boundary"])
                probs = [float(p) for p in record["probs"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad probability fixture: {exc}", lineno) from None
            if boundary < 0 or boundary > len(probs):
                raise ParseError(f"boundary {boundary} out of range", lineno)
            if boundary == 0:
                layout = TargetLayout.unprefixed(["y"] * len(probs))
            else:
                tokens = ["e"] * (boundary - 1) + [SEP_TOKEN] + ["y"] * (len(probs) - boundary)
                layout = TargetLayout(tuple(tokens), boundary, boundary - 1)
            out.append((fixture_id, layout, probs))
    return out


def write_prob_fixtures(
    fixtures: Sequence[tuple[str, TargetLayout, Sequence[float]]], path: str | os.PathLike
) -> None:
    with atomic_write(path) as fh:
        for fixture_id, layout, probs in fixtures:
            record = {"id": fixture_id, "boundary": layout.boundary, "probs": list(probs)}
            fh.write(json.dumps(record, sort_keys=True) + "\n")
