"""Assembly of K=4 negatives per caption and corpus-level generation."""

from __future__ import annotations

import hashlib
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import (AllRejected, CaptionUnusable, InsufficientAdjectives, InsufficientNouns,
                      MalformedResponse, NoReplaceableAdjective, NoReplaceableNoun, TooShort)
from ..lexicon import Lexicon
from .filtering import filter_negatives, rejection_reason
from .llm import LlmClient, PromptTemplate, llm_generate
from .rules import Caption, NegativeCaption, Source, Subtype, generate_rule, parse_caption

K_NEGATIVES = 4
SWAP_POOL = (Subtype.NOUN_SWAP, Subtype.ADJ_SWAP)
# slot layout: reshuffle, merged swap pool, adjective replacement, noun replacement
SLOTS = (Subtype.RESHUFFLE, SWAP_POOL, Subtype.ADJ_REPLACE, Subtype.NOUN_REPLACE)
_RULE_ATTEMPTS = 8
_INFEASIBLE = (TooShort, InsufficientNouns, InsufficientAdjectives, NoReplaceableAdjective,
               NoReplaceableNoun, AllRejected)


@dataclass
class NegativeSet:
    caption_id: str
    negatives: list[NegativeCaption]

    def __post_init__(self):
        if len(self.negatives) != K_NEGATIVES:
            raise ValueError(f"a negative set holds exactly {K_NEGATIVES} negatives")
        if sum(n.subtype in SWAP_POOL for n in self.negatives) > 1:
            raise ValueError("at most one negative may come from the merged swap pool")


@dataclass
class GenerationStats:
    subtypes: Counter = field(default_factory=Counter)
    rejections: Counter = field(default_factory=Counter)
    fallbacks: int = 0
    llm_calls: int = 0

    def merge(self, other: GenerationStats) -> None:
        self.subtypes.update(other.subtypes)
        self.rejections.update(other.rejections)
        self.fallbacks += other.fallbacks
        self.llm_calls += other.llm_calls

    def summary(self) -> str:
        subs = " ".join(f"{s.value}={self.subtypes.get(s, 0)}" for s in Subtype)
        rej = " ".join(f"{k}={v}" for k, v in sorted(self.rejections.items())) or "none"
        return f"subtypes: {subs} | rejected: {rej} | fallbacks={self.fallbacks} llm_calls={self.llm_calls}"


def child_seed(master_seed: int, caption_id: str) -> int:
    """Per-caption seed, independent of processing order."""
    digest = hashlib.sha256(f"{master_seed}:{caption_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


class RuleGenerator:
    """Rule-based mutators, with each output run through the hard-positive filter."""

    source = Source.RULE

    def __init__(self, lexicon: Lexicon, similarity: Callable[[str, str], float] | None = None):
        self.lexicon = lexicon
        self.similarity = similarity

    def __call__(self, c: Caption, subtype: Subtype, rng: np.random.Generator,
                 stats: GenerationStats) -> NegativeCaption:
        for _ in range(_RULE_ATTEMPTS):
            neg = generate_rule(c, subtype, self.lexicon, int(rng.integers(2**63)))
            reason = rejection_reason(c, neg.text, subtype, self.similarity)
            if reason is None:
                return neg
            stats.rejections[reason] += 1
        raise AllRejected(f"no acceptable {subtype.value} negative after {_RULE_ATTEMPTS} draws")


class LlmGenerator:
    """LLM candidates, filtered per subtype; falls back to the rule mutators when none survive.

    ClientUnavailable propagates so the caller can abort the run.
    """

    source = Source.LLM

    def __init__(self, client: LlmClient, templates: dict[Subtype, PromptTemplate], lexicon: Lexicon,
                 similarity: Callable[[str, str], float] | None = None):
        self.client = client
        self.templates = templates
        self.fallback = RuleGenerator(lexicon, similarity)
        self.similarity = similarity

    def __call__(self, c: Caption, subtype: Subtype, rng: np.random.Generator,
                 stats: GenerationStats) -> NegativeCaption:
        # precondition check: the LLM is only asked for subtypes the caption supports
        generate_rule(c, subtype, self.fallback.lexicon, 0)
        stats.llm_calls += 1
        try:
            candidates = llm_generate(c, subtype, self.templates[subtype], self.client)
            for cand in candidates:
                reason = rejection_reason(c, cand, subtype, self.similarity)
                if reason is not None:
                    stats.rejections[reason] += 1
            accepted = filter_negatives(c, candidates, subtype, self.similarity)
            return NegativeCaption(accepted[int(rng.integers(len(accepted)))], subtype, Source.LLM)
        except (AllRejected, MalformedResponse):
            stats.fallbacks += 1
            return self.fallback(c, subtype, rng, stats)


def assemble_negative_set(c: Caption, lexicon: Lexicon, seed: int, caption_id: str = "",
                          generator=None, stats: GenerationStats | None = None) -> NegativeSet:
    """Fill the four slots; an infeasible slot is filled by an extra reshuffle with a fresh seed."""
    generator = generator or RuleGenerator(lexicon)
    stats = stats if stats is not None else GenerationStats()
    rng = np.random.default_rng(seed)
    slot_rngs = [np.random.default_rng(s) for s in rng.integers(2**63, size=2 * len(SLOTS))]
    negatives = []
    for n, slot in enumerate(SLOTS):
        if isinstance(slot, tuple):
            order = list(slot) if rng.random() < 0.5 else list(reversed(slot))
        else:
            order = [slot]
        neg = None
        for subtype in order:
            try:
                neg = generator(c, subtype, slot_rngs[n], stats)
                break
            except _INFEASIBLE:
                pass
        if neg is None:
            stats.fallbacks += 1
            try:
                neg = generator(c, Subtype.RESHUFFLE, slot_rngs[len(SLOTS) + n], stats)
            except (TooShort, AllRejected) as exc:
                raise CaptionUnusable(f"caption {caption_id!r} cannot fill {K_NEGATIVES} slots: {exc}") from exc
        stats.subtypes[neg.subtype] += 1
        negatives.append(neg)
    return NegativeSet(caption_id, negatives)


def generate_for_records(records: Sequence, lexicon: Lexicon, master_seed: int, generator=None,
                         jobs: int = 1) -> tuple[list[dict], GenerationStats]:
    """Negatives for every record; output order and content do not depend on ``jobs``.

    Records are ``CorpusRecord``-like (``id``, ``caption``, optional ``image_feature``).
    """
    generator = generator or RuleGenerator(lexicon)

    def one(rec):
        st = GenerationStats()
        cap = parse_caption(rec.caption, lexicon)
        nset = assemble_negative_set(cap, lexicon, child_seed(master_seed, rec.id), rec.id, generator, st)
        out = {"id": rec.id, "caption": rec.caption, "negatives": [n.to_dict() for n in nset.negatives]}
        if getattr(rec, "image_feature", None) is not None:
            out["image_feature"] = list(map(float, rec.image_feature))
        return out, st

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, records))
    else:
        results = [one(r) for r in records]
    stats = GenerationStats()
    for _, st in results:
        stats.merge(st)
    return [r for r, _ in results], stats
