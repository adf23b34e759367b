"""Shared test builders."""

import numpy as np

from degla.encoders import EmbeddingBatch
from degla.numerics import Tensor


def unit_rows(rng, *shape):
    x = rng.normal(size=shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def random_batch(rng, B=4, K=4, d=8, grad=False):
    """Unit-norm student/teacher embeddings; student fields as Tensors."""
    v, t = unit_rows(rng, B, d), unit_rows(rng, B, d)
    neg = unit_rows(rng, B, K, d) if K else None
    batch = EmbeddingBatch(
        v=Tensor(v, requires_grad=grad), t=Tensor(t, requires_grad=grad),
        neg=Tensor(neg, requires_grad=grad) if K else None,
        teacher_v=unit_rows(rng, B, d), teacher_t=unit_rows(rng, B, d),
        teacher_neg=unit_rows(rng, B, K, d) if K else None,
    )
    return batch


def as_lists(batch):
    neg = batch.neg.value.tolist() if batch.neg is not None else [[] for _ in range(batch.size)]
    neg_star = batch.teacher_neg.tolist() if batch.teacher_neg is not None else [[] for _ in range(batch.size)]
    return (batch.v.value.tolist(), batch.t.value.tolist(), neg,
            batch.teacher_v.tolist(), batch.teacher_t.tolist(), neg_star)


FUNCTION_WORDS = ("a", "the", "two", "is", "in", "on", "with", "near", "of", "and", "some")


def fuzz_captions(lexicon, n, seed=0, min_len=1, max_len=12):
    """Random word salads over lexicon words plus function words, varied lengths."""
    rng = np.random.default_rng(seed)
    vocab = sorted(lexicon.tags) + list(FUNCTION_WORDS)
    return [" ".join(rng.choice(vocab, size=int(rng.integers(min_len, max_len + 1))))
            for _ in range(n)]


def contract_violations(caption, negative, lexicon):
    """Why ``negative`` breaks its generator's contract, or None."""
    from collections import Counter

    from degla import text as textnorm
    from degla.lexicon import ADJ, NOUN
    from degla.negcap import Subtype

    src = textnorm.words(caption)
    out = textnorm.words(negative.text)
    if out == src:
        return "equals source"
    if negative.subtype in (Subtype.RESHUFFLE, Subtype.NOUN_SWAP, Subtype.ADJ_SWAP):
        if Counter(out) != Counter(src):
            return "multiset changed"
        if negative.subtype is not Subtype.RESHUFFLE:
            tag = NOUN if negative.subtype is Subtype.NOUN_SWAP else ADJ
            moved = [i for i, (a, b) in enumerate(zip(src, out)) if a != b]
            if len(moved) != 2 or any(lexicon.tag(src[i]) != tag for i in moved):
                return "swap touched the wrong positions"
        return None
    tag = ADJ if negative.subtype is Subtype.ADJ_REPLACE else NOUN
    if len(out) != len(src):
        return "length changed"
    changed = [i for i, (a, b) in enumerate(zip(src, out)) if a != b]
    if len(changed) != 1:
        return "replaced more than one token"
    i = changed[0]
    if lexicon.tag(src[i]) != tag or out[i] not in lexicon.pool(src[i]):
        return "replacement not drawn from the tagged word's pool"
    return None
