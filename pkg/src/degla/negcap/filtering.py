"""Hard-positive rejection for candidate negatives.

A candidate is dropped when it
  (a) normalizes to the original text;
  (b) is a pure insertion, for substitution subtypes (token multiset is a
      strict superset of the original);
  (c) changes the token multiset, for reorder subtypes;
  (d) leaves the sequence of content words untouched.
An optional similarity callback adds an embedding-space divergence check.
"""

from __future__ import annotations

from collections import Counter
from typing import Callable, Iterable

from .. import text as textnorm
from ..errors import AllRejected
from ..lexicon import OTHER
from .rules import REORDERING, SUBSTITUTION, Caption, Subtype

SIMILARITY_THRESHOLD = 0.98


def _content(tokens, function_words: set[str]) -> list[str]:
    return [w for w in tokens if w not in function_words]


def rejection_reason(original: Caption, candidate: str, subtype: Subtype,
                     similarity: Callable[[str, str], float] | None = None,
                     threshold: float = SIMILARITY_THRESHOLD) -> str | None:
    """Why ``candidate`` is rejected, or None if it is accepted."""
    subtype = Subtype(subtype)
    cand = textnorm.words(candidate)
    if " ".join(cand) == original.text:
        return "identical"
    orig_counts, cand_counts = Counter(original.tokens), Counter(cand)
    if subtype in SUBSTITUTION and cand_counts != orig_counts and not (orig_counts - cand_counts):
        return "insertion"
    if subtype in REORDERING and cand_counts != orig_counts:
        return "multiset"
    # an untagged caption has no known function words: every token counts as content
    tagged = any(t != OTHER for t in original.tags)
    function_words = {w for w, t in zip(original.tokens, original.tags) if t == OTHER} if tagged else set()
    if _content(cand, function_words) == _content(original.tokens, function_words):
        return "no-content-change"
    if similarity is not None and similarity(original.text, " ".join(cand)) >= threshold:
        return "too-similar"
    return None


def filter_negatives(original: Caption, candidates: Iterable[str], subtype: Subtype,
                     similarity: Callable[[str, str], float] | None = None,
                     threshold: float = SIMILARITY_THRESHOLD) -> list[str]:
    """Normalized candidates that survive every rejection rule, in input order."""
    candidates = list(candidates)
    if not candidates:
        raise ValueError("filter_negatives needs at least one candidate")
    accepted = [textnorm.normalize(c) for c in candidates
                if rejection_reason(original, c, subtype, similarity, threshold) is None]
    if not accepted:
        raise AllRejected(f"all {len(candidates)} {Subtype(subtype).value} candidates rejected")
    return accepted
