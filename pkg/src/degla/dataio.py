"""JSONL corpus I/O and the synthetic compositional corpus.

Record schema, one JSON object per line::

    {"id": str, "caption": str, "image_feature": [float, ...],
     "negatives": [{"text": str, "subtype": str, "source": str}, x4]}   # negatives optional
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InconsistentFeatureDim, SchemaError, VocabTooSmall
from .lexicon import ADJ, NOUN, SYNTH_ADJECTIVES, SYNTH_NOUNS, SYNTH_VERBS, VERB, Lexicon
from .negcap.pipeline import generate_for_records
from .negcap.rules import NegativeCaption

K_NEGATIVES = 4


@dataclass
class CorpusRecord:
    id: str
    caption: str
    image_feature: np.ndarray | None = None
    negatives: list[NegativeCaption] | None = None

    def to_dict(self) -> dict:
        d: dict = {"id": self.id, "caption": self.caption}
        if self.image_feature is not None:
            d["image_feature"] = [float(x) for x in self.image_feature]
        if self.negatives is not None:
            d["negatives"] = [n.to_dict() for n in self.negatives]
        return d

    def __eq__(self, other) -> bool:
        if not isinstance(other, CorpusRecord):
            return NotImplemented
        feats_equal = (self.image_feature is None and other.image_feature is None) or (
            self.image_feature is not None and other.image_feature is not None
            and np.array_equal(self.image_feature, other.image_feature))
        return (self.id, self.caption, self.negatives) == (other.id, other.caption, other.negatives) and feats_equal


def _parse_record(obj, line: int, require_feature: bool) -> CorpusRecord:
    if not isinstance(obj, dict):
        raise SchemaError("record is not a JSON object", line)
    for key in ("id", "caption"):
        if key not in obj:
            raise SchemaError(f"missing {key!r}", line)
        if not isinstance(obj[key], str):
            raise SchemaError(f"{key!r} must be a string", line)
    if not obj["caption"].strip():
        raise SchemaError("empty caption", line)
    feature = obj.get("image_feature")
    if feature is None:
        if require_feature:
            raise SchemaError("missing 'image_feature'", line)
    else:
        if not isinstance(feature, list) or not feature or not all(
                isinstance(x, (int, float)) and not isinstance(x, bool) for x in feature):
            raise SchemaError("'image_feature' must be a non-empty list of numbers", line)
        feature = np.asarray(feature, dtype=np.float64)
        if not np.all(np.isfinite(feature)):
            raise SchemaError("'image_feature' holds non-finite values", line)
    negatives = obj.get("negatives")
    if negatives is not None:
        if not isinstance(negatives, list) or len(negatives) != K_NEGATIVES:
            raise SchemaError(f"'negatives' must hold exactly {K_NEGATIVES} entries", line)
        try:
            negatives = [NegativeCaption.from_dict(n) for n in negatives]
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad negative entry: {exc}", line) from exc
    return CorpusRecord(obj["id"], obj["caption"], feature, negatives)


def load_corpus(path, require_feature: bool = True) -> list[CorpusRecord]:
    """Read and validate a JSONL corpus. Blank lines are skipped; errors carry 1-based line numbers."""
    records: list[CorpusRecord] = []
    dim = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc.msg}", line_no) from exc
            rec = _parse_record(obj, line_no, require_feature)
            if rec.image_feature is not None:
                if dim is None:
                    dim = rec.image_feature.shape[0]
                elif rec.image_feature.shape[0] != dim:
                    raise InconsistentFeatureDim(
                        f"line {line_no}: feature length {rec.image_feature.shape[0]} != {dim}")
            records.append(rec)
    return records


def write_corpus(records: Iterable[CorpusRecord | dict], path) -> None:
    # json emits floats via repr (17 significant digits where needed): exact round trip
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            d = rec.to_dict() if isinstance(rec, CorpusRecord) else rec
            fh.write(json.dumps(d) + "\n")


@dataclass(frozen=True)
class VocabSpec:
    """Closed vocabulary for captions of the form ``ADJ NOUN VERB ADJ NOUN``."""

    nouns: tuple[str, ...] = SYNTH_NOUNS
    adjectives: tuple[str, ...] = SYNTH_ADJECTIVES
    verbs: tuple[str, ...] = SYNTH_VERBS

    @property
    def slots(self) -> tuple[tuple[str, ...], ...]:
        return (self.adjectives, self.nouns, self.verbs, self.adjectives, self.nouns)

    @property
    def feature_dim(self) -> int:
        return sum(len(s) for s in self.slots)

    def words(self) -> list[str]:
        return sorted(set(self.nouns) | set(self.adjectives) | set(self.verbs))

    def lexicon(self) -> Lexicon:
        """Tags for every word; replacement pools stay inside the word's own class."""
        tags, pools = {}, {}
        for tag, group in ((NOUN, self.nouns), (ADJ, self.adjectives), (VERB, self.verbs)):
            for w in group:
                tags[w] = tag
                pools[w] = tuple(x for x in group if x != w) if tag != VERB else ()
        return Lexicon(tags, pools)

    def features(self, caption: str) -> np.ndarray:
        """Concatenated one-hot slot indicators for a template caption."""
        words = caption.split()
        if len(words) != len(self.slots):
            raise ValueError(f"{caption!r} does not follow the 5-slot template")
        parts = []
        for word, options in zip(words, self.slots):
            onehot = np.zeros(len(options))
            onehot[options.index(word)] = 1.0
            parts.append(onehot)
        return np.concatenate(parts)


def synth_corpus(vocab: VocabSpec, n_items: int, seed: int, noise_sigma: float = 0.1,
                 id_prefix: str = "syn") -> list[CorpusRecord]:
    """Template captions with distinct noun pair and distinct adjective pair, plus noisy indicator features."""
    if len(set(vocab.nouns)) < 2 or len(set(vocab.adjectives)) < 2 or not vocab.verbs:
        raise VocabTooSmall("need at least 2 nouns, 2 adjectives and 1 verb")
    rng = np.random.default_rng(seed)
    width = max(1, math.ceil(math.log10(max(n_items, 1) + 1)))
    records = []
    for i in range(n_items):
        a1, a2 = rng.choice(len(vocab.adjectives), size=2, replace=False)
        n1, n2 = rng.choice(len(vocab.nouns), size=2, replace=False)
        verb = vocab.verbs[int(rng.integers(len(vocab.verbs)))]
        caption = f"{vocab.adjectives[a1]} {vocab.nouns[n1]} {verb} {vocab.adjectives[a2]} {vocab.nouns[n2]}"
        feat = vocab.features(caption)
        if noise_sigma > 0:
            feat = feat + rng.normal(0.0, noise_sigma, size=feat.shape)
        records.append(CorpusRecord(f"{id_prefix}-{i:0{width}d}", caption, feat))
    return records


def batches(n: int, batch_size: int, rng: np.random.Generator | None = None) -> list[np.ndarray]:
    """Index batches over ``n`` items; shuffled when ``rng`` is given. Last batch may be short."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def records_with_negatives(records: Sequence[CorpusRecord], lexicon: Lexicon, master_seed: int,
                           jobs: int = 1) -> list[CorpusRecord]:
    """Attach rule-based negatives to every record (deterministic in ``master_seed``)."""
    out, _ = generate_for_records(records, lexicon, master_seed, jobs=jobs)
    return [CorpusRecord(r.id, r.caption, r.image_feature, [NegativeCaption.from_dict(n) for n in o["negatives"]])
            for r, o in zip(records, out)]
