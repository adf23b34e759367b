"""Desk-scale evaluation: compositional accuracy, retrieval recall, zero-shot, drift."""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import text as textnorm
from .dataio import CorpusRecord, VocabSpec
from .encoders import DualEncoder, ImageEncoder, TextEncoder, Tokenizer
from .errors import KTooLarge
from .lexicon import NOUN, Lexicon

ZERO_SHOT_TEMPLATES = ("a photo of a {label}", "a {label}", "a picture of the {label}")


@dataclass
class CompositionalItem:
    image_feature: np.ndarray
    positive: str
    negatives: list[tuple[str, str]]  # (text, subtype)

    def __post_init__(self):
        if not self.negatives:
            raise ValueError("a compositional item needs at least one negative")


@dataclass
class CompositionalResult:
    overall: float
    per_subtype: dict[str, float]
    counts: dict[str, int]
    n_items: int


def items_from_records(records: Sequence[CorpusRecord]) -> list[CompositionalItem]:
    """One binary item per (record, negative) pair, so chance accuracy is 0.5."""
    items = []
    for r in records:
        for n in r.negatives or ():
            items.append(CompositionalItem(r.image_feature, r.caption, [(n.text, n.subtype.value)]))
    return items


def compositional_accuracy(model: DualEncoder, items: Sequence[CompositionalItem]) -> CompositionalResult:
    """An item is correct iff its image scores the positive strictly above every negative.

    Per-subtype rates count each (item, negative) comparison under that negative's subtype.
    """
    if not items:
        raise ValueError("no items to evaluate")
    v = model.encode_images(np.stack([it.image_feature for it in items])).value
    pos = model.encode_texts([it.positive for it in items]).value
    flat = [(i, text, sub) for i, it in enumerate(items) for text, sub in it.negatives]
    neg = model.encode_texts([t for _, t, _ in flat]).value
    pos_score = (v * pos).sum(axis=1)
    neg_score = (v[[i for i, _, _ in flat]] * neg).sum(axis=1)

    correct = np.ones(len(items), dtype=bool)
    hits: dict[str, int] = defaultdict(int)
    counts: dict[str, int] = defaultdict(int)
    for (i, _, sub), s in zip(flat, neg_score):
        win = pos_score[i] > s
        correct[i] &= win
        hits[sub] += int(win)
        counts[sub] += 1
    return CompositionalResult(
        overall=float(correct.mean()),
        per_subtype={s: hits[s] / counts[s] for s in sorted(counts)},
        counts=dict(sorted(counts.items())),
        n_items=len(items),
    )


def _recall(sim: np.ndarray, ks: Sequence[int], rng: np.random.Generator) -> dict[int, float]:
    n = sim.shape[0]
    true = sim[np.arange(n), np.arange(n)][:, None]
    greater = (sim > true).sum(axis=1)
    ties = (sim == true).sum(axis=1)  # includes the true partner itself
    # the true partner lands uniformly among its ties
    rank = greater + rng.integers(0, ties)
    return {k: float((rank < k).mean()) for k in ks}


def retrieval_recall(model: DualEncoder, features, captions: Sequence[str], ks: Sequence[int] = (1, 5, 10),
                     seed: int = 0) -> dict[str, dict[int, float]]:
    """R@K for image->text and text->image over N aligned pairs; ties broken uniformly at random."""
    n = len(captions)
    if any(k >= n for k in ks):
        raise KTooLarge(f"every k must be < N={n}, got {list(ks)}")
    v = model.encode_images(features).value
    t = model.encode_texts(captions).value
    return recall_from_embeddings(v, t, ks, seed)


def recall_from_embeddings(v: np.ndarray, t: np.ndarray, ks: Sequence[int], seed: int = 0) -> dict[str, dict[int, float]]:
    n = v.shape[0]
    if any(k >= n for k in ks):
        raise KTooLarge(f"every k must be < N={n}, got {list(ks)}")
    rng = np.random.default_rng(seed)
    sim = v @ t.T
    return {"i2t": _recall(sim, ks, rng), "t2i": _recall(sim.T, ks, rng)}


def zero_shot_classify(model: DualEncoder, features, labels: Sequence[int],
                       label_prompts: Sequence[Sequence[str]]) -> float:
    """Accuracy of argmax similarity against per-class mean prompt embeddings.

    Ties go to the lower class index (numpy argmax semantics).
    """
    if not label_prompts:
        raise ValueError("need at least one class")
    protos = []
    for prompts in label_prompts:
        e = model.encode_texts(list(prompts)).value.mean(axis=0)
        norm = np.linalg.norm(e)
        protos.append(e / norm if norm > 0 else e)
    v = model.encode_images(features).value
    pred = np.argmax(v @ np.stack(protos).T, axis=1)
    return float((pred == np.asarray(labels)).mean())


def zero_shot_from_records(model: DualEncoder, records: Sequence[CorpusRecord], lexicon: Lexicon,
                           templates: Sequence[str] = ZERO_SHOT_TEMPLATES) -> float:
    """Classify each image by the first noun of its caption."""
    classes: list[str] = []
    labels = []
    keep = []
    for i, r in enumerate(records):
        noun = next((w for w in textnorm.words(r.caption) if lexicon.tag(w) == NOUN), None)
        if noun is None:
            continue
        if noun not in classes:
            classes.append(noun)
        labels.append(classes.index(noun))
        keep.append(i)
    if not keep:
        return float("nan")
    feats = np.stack([records[i].image_feature for i in keep])
    prompts = [[t.format(label=c) for t in templates] for c in classes]
    return zero_shot_classify(model, feats, labels, prompts)


def drift_score(model: DualEncoder, reference: DualEncoder, features, captions: Sequence[str]) -> float:
    """Mean squared displacement of image and text embeddings relative to ``reference``."""
    dv = model.encode_images(features).value - reference.encode_images(features).value
    dt = model.encode_texts(captions).value - reference.encode_texts(captions).value
    sq = np.concatenate([(dv ** 2).sum(axis=1), (dt ** 2).sum(axis=1)])
    return float(sq.mean())


@dataclass
class EvalReport:
    compositional_accuracy: float
    per_subtype: dict[str, float]
    subtype_counts: dict[str, int]
    retrieval: dict[str, dict[str, float]] = field(default_factory=dict)
    zero_shot_accuracy: float | None = None
    drift: float | None = None
    n_items: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerow(["compositional_accuracy", repr(self.compositional_accuracy)])
        for s, rate in self.per_subtype.items():
            w.writerow([f"compositional_accuracy/{s}", repr(rate)])
        for direction, rec in self.retrieval.items():
            for k, rate in rec.items():
                w.writerow([f"{direction}/R@{k}", repr(rate)])
        if self.zero_shot_accuracy is not None:
            w.writerow(["zero_shot_accuracy", repr(self.zero_shot_accuracy)])
        if self.drift is not None:
            w.writerow(["drift", repr(self.drift)])
        return buf.getvalue()


def evaluate(model: DualEncoder, records: Sequence[CorpusRecord], lexicon: Lexicon,
             reference: DualEncoder | None = None, ks: Sequence[int] = (1, 5, 10), seed: int = 0) -> EvalReport:
    comp = compositional_accuracy(model, items_from_records(records))
    feats = np.stack([r.image_feature for r in records])
    caps = [r.caption for r in records]
    ks = [k for k in ks if k < len(records)]
    retrieval = {}
    if ks:
        rec = retrieval_recall(model, feats, caps, ks, seed)
        retrieval = {d: {str(k): r for k, r in v.items()} for d, v in rec.items()}
    drift = drift_score(model, reference, feats, caps) if reference is not None else None
    return EvalReport(comp.overall, comp.per_subtype, comp.counts, retrieval,
                      zero_shot_from_records(model, records, lexicon), drift, comp.n_items)


def oracle_model(vocab: VocabSpec, tokenizer: Tokenizer | None = None) -> DualEncoder:
    """Hand-built encoder pair that maps a template caption onto its image's slot indicators.

    The text tower reads slot identity off boundary-marked bigrams (first adjective,
    subject noun before the verb, adjective after the verb, last noun) plus the verb
    unigram; both towers are identity perceptrons over that indicator space.
    """
    tok = tokenizer or Tokenizer(vocab.words())
    dim = vocab.feature_dim
    offsets = np.cumsum([0] + [len(s) for s in vocab.slots])
    emb = np.zeros((tok.vocab_size, dim))
    u = tok.n_unigrams

    def bigram(a: str, b: str) -> int:
        return u + tok.index[a] * u + tok.index[b]

    for j, adj in enumerate(vocab.adjectives):
        emb[bigram(tok.BOS, adj), offsets[0] + j] = 1.0
        for verb in vocab.verbs:
            emb[bigram(verb, adj), offsets[3] + j] = 1.0
    for j, noun in enumerate(vocab.nouns):
        for verb in vocab.verbs:
            emb[bigram(noun, verb), offsets[1] + j] = 1.0
        emb[bigram(noun, tok.EOS), offsets[4] + j] = 1.0
    for j, verb in enumerate(vocab.verbs):
        emb[tok.index[verb], offsets[2] + j] = 1.0
    eye = np.eye(dim)
    zeros = np.zeros(dim)
    text = TextEncoder.from_arrays({"embedding": emb, "w1": eye, "b1": zeros, "w2": eye, "b2": zeros})
    image = ImageEncoder.from_arrays({"w1": eye, "b1": zeros, "w2": eye, "b2": zeros})
    return DualEncoder(image, text, tok)
