"""Caption tagging and the five rule-based negative mutators."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .. import text as textnorm
from ..errors import (EmptyText, InsufficientAdjectives, InsufficientNouns, NoReplaceableAdjective,
                      NoReplaceableNoun, TooShort)
from ..lexicon import ADJ, NOUN, OTHER, Lexicon


class Subtype(str, enum.Enum):
    RESHUFFLE = "RESHUFFLE"
    NOUN_SWAP = "NOUN_SWAP"
    ADJ_SWAP = "ADJ_SWAP"
    ADJ_REPLACE = "ADJ_REPLACE"
    NOUN_REPLACE = "NOUN_REPLACE"


# one-line rewrite rule per subtype; also used verbatim in LLM prompts
RULES = {
    Subtype.RESHUFFLE: "Reshuffle the overall order of the sentence",
    Subtype.NOUN_SWAP: "Swap the nouns in the sentence",
    Subtype.ADJ_SWAP: "Swap the adjectives in the sentence",
    Subtype.ADJ_REPLACE: "Replace the adjectives in the sentence",
    Subtype.NOUN_REPLACE: "Replace the nouns in the sentence",
}

REORDERING = frozenset({Subtype.RESHUFFLE, Subtype.NOUN_SWAP, Subtype.ADJ_SWAP})
SUBSTITUTION = frozenset({Subtype.ADJ_REPLACE, Subtype.NOUN_REPLACE})


class Source(str, enum.Enum):
    RULE = "RULE"
    LLM = "LLM"


@dataclass(frozen=True)
class Caption:
    raw_text: str
    tokens: tuple[str, ...]
    tags: tuple[str, ...]

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    def positions(self, tag: str) -> list[int]:
        return [i for i, t in enumerate(self.tags) if t == tag]


@dataclass(frozen=True)
class NegativeCaption:
    text: str
    subtype: Subtype
    source: Source = Source.RULE

    def to_dict(self) -> dict:
        return {"text": self.text, "subtype": self.subtype.value, "source": self.source.value}

    @classmethod
    def from_dict(cls, d: dict) -> NegativeCaption:
        return cls(d["text"], Subtype(d["subtype"]), Source(d.get("source", "RULE")))


def parse_caption(text: str, lexicon: Lexicon) -> Caption:
    tokens = tuple(textnorm.words(text))
    if not tokens:
        raise EmptyText("caption has no words")
    return Caption(text, tokens, tuple(lexicon.tag(w) for w in tokens))


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def gen_reshuffle(c: Caption, seed) -> NegativeCaption:
    """A seeded permutation of all tokens that changes the order of the content words.

    Content words are the tagged tokens; an untagged caption treats every token as content.
    """
    toks = list(c.tokens)
    tagged = any(t != OTHER for t in c.tags)
    content = [i for i, t in enumerate(c.tags) if t != OTHER] if tagged else list(range(len(toks)))
    if len({toks[i] for i in content}) < 2:
        raise TooShort("reshuffling needs at least two distinct content words")
    is_content = set(content)
    rng = _rng(seed)
    for _ in range(64):
        perm = rng.permutation(len(toks))
        out = [toks[i] for i in perm]
        # content words of `out` are the ones whose source position was tagged
        if [toks[i] for i in perm if i in is_content] != [toks[i] for i in content]:
            return NegativeCaption(" ".join(out), Subtype.RESHUFFLE)
    i = content[0]
    j = next(j for j in content if toks[j] != toks[i])
    toks[i], toks[j] = toks[j], toks[i]
    return NegativeCaption(" ".join(toks), Subtype.RESHUFFLE)


def _swap(c: Caption, tag: str, seed, subtype: Subtype, err) -> NegativeCaption:
    pos = c.positions(tag)
    pairs = [(i, j) for i, j in combinations(pos, 2) if c.tokens[i] != c.tokens[j]]
    if not pairs:
        raise err(f"caption needs two different {tag} words to swap")
    i, j = pairs[int(_rng(seed).integers(len(pairs)))]
    toks = list(c.tokens)
    toks[i], toks[j] = toks[j], toks[i]
    return NegativeCaption(" ".join(toks), subtype)


def gen_noun_swap(c: Caption, seed) -> NegativeCaption:
    return _swap(c, NOUN, seed, Subtype.NOUN_SWAP, InsufficientNouns)


def gen_adj_swap(c: Caption, seed) -> NegativeCaption:
    return _swap(c, ADJ, seed, Subtype.ADJ_SWAP, InsufficientAdjectives)


def _replace(c: Caption, lexicon: Lexicon, tag: str, seed, subtype: Subtype, err) -> NegativeCaption:
    options = [i for i in c.positions(tag) if lexicon.pool(c.tokens[i])]
    if not options:
        raise err(f"no {tag} word with a replacement pool")
    rng = _rng(seed)
    i = options[int(rng.integers(len(options)))]
    pool = lexicon.pool(c.tokens[i])
    toks = list(c.tokens)
    toks[i] = pool[int(rng.integers(len(pool)))]
    return NegativeCaption(" ".join(toks), subtype)


def gen_adj_replace(c: Caption, lexicon: Lexicon, seed) -> NegativeCaption:
    return _replace(c, lexicon, ADJ, seed, Subtype.ADJ_REPLACE, NoReplaceableAdjective)


def gen_noun_replace(c: Caption, lexicon: Lexicon, seed) -> NegativeCaption:
    return _replace(c, lexicon, NOUN, seed, Subtype.NOUN_REPLACE, NoReplaceableNoun)


def generate_rule(c: Caption, subtype: Subtype, lexicon: Lexicon, seed) -> NegativeCaption:
    if subtype is Subtype.RESHUFFLE:
        return gen_reshuffle(c, seed)
    if subtype is Subtype.NOUN_SWAP:
        return gen_noun_swap(c, seed)
    if subtype is Subtype.ADJ_SWAP:
        return gen_adj_swap(c, seed)
    if subtype is Subtype.ADJ_REPLACE:
        return gen_adj_replace(c, lexicon, seed)
    return gen_noun_replace(c, lexicon, seed)
