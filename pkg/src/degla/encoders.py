"""Desk-scale dual encoder, its EMA teacher, and the checkpoint format.

Both towers are two-layer ReLU perceptrons followed by L2 normalization. The
text tower first mean-pools rows of a token-embedding table; the tokenizer
emits unigram ids plus boundary-marked bigram ids so that mean pooling (which
is order-invariant over ids) still sees word order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import text as textnorm
from .errors import CheckpointError, EmptySequence, OutOfVocab, ShapeMismatch
from .losses import Temperature
from .numerics import Tensor, embedding_bag, l2_normalize, matmul, relu

CHECKPOINT_FORMAT = "degla-checkpoint"
CHECKPOINT_VERSION = 1


class Tokenizer:
    """Closed-vocabulary word tokenizer with ordered bigram features.

    Ids ``[0, U)`` are unigrams (0 is ``<unk>``); ``U + a*U + b`` is the
    bigram (a, b), where sentence start/end markers take part in bigrams only.
    """

    UNK, BOS, EOS = "<unk>", "<s>", "</s>"

    def __init__(self, words: Iterable[str], bigrams: bool = True):
        specials = [self.UNK, self.BOS, self.EOS]
        vocab = sorted(set(words) - set(specials))
        self.words = specials + vocab
        self.index = {w: i for i, w in enumerate(self.words)}
        self.bigrams = bigrams

    @property
    def n_unigrams(self) -> int:
        return len(self.words)

    @property
    def vocab_size(self) -> int:
        u = self.n_unigrams
        return u + u * u if self.bigrams else u

    def unigram_id(self, word: str) -> int:
        return self.index.get(word, 0)

    def encode(self, text: str) -> list[int]:
        toks = textnorm.words(text)
        if not toks:
            raise EmptySequence(f"caption {text!r} has no words")
        ids = [self.unigram_id(w) for w in toks]
        if self.bigrams:
            u = self.n_unigrams
            seq = [self.index[self.BOS]] + ids + [self.index[self.EOS]]
            ids = ids + [u + a * u + b for a, b in zip(seq[:-1], seq[1:])]
        return ids

    def to_dict(self) -> dict:
        return {"words": self.words[3:], "bigrams": self.bigrams}

    @classmethod
    def from_dict(cls, d: dict) -> Tokenizer:
        return cls(d["words"], bigrams=d.get("bigrams", True))


def _init_linear(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))


def _init_out_bias(rng: np.random.Generator, out_dim: int) -> np.ndarray:
    # nonzero so an input that silences every hidden unit still maps to a normalizable vector
    return rng.normal(0.0, 0.01, size=out_dim)


def _perceptron(params: dict[str, Tensor], x: Tensor) -> Tensor:
    h = relu(matmul(x, params["w1"]) + params["b1"])
    return matmul(h, params["w2"]) + params["b2"]


@dataclass
class TextEncoder:
    params: dict[str, Tensor]

    @classmethod
    def init(cls, vocab_size: int, embed_dim: int, hidden_dim: int, out_dim: int,
             rng: np.random.Generator) -> TextEncoder:
        arrays = {
            "embedding": rng.normal(0.0, 1.0, size=(vocab_size, embed_dim)),
            "w1": _init_linear(rng, embed_dim, hidden_dim),
            "b1": np.zeros(hidden_dim),
            "w2": _init_linear(rng, hidden_dim, out_dim),
            "b2": _init_out_bias(rng, out_dim),
        }
        return cls.from_arrays(arrays)

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], trainable: bool = True) -> TextEncoder:
        return cls({k: Tensor(np.array(v, dtype=np.float64), requires_grad=trainable, name=k)
                    for k, v in arrays.items()})

    @property
    def vocab_size(self) -> int:
        return self.params["embedding"].shape[0]

    @property
    def out_dim(self) -> int:
        return self.params["b2"].shape[0]

    def forward(self, bags: Sequence[Sequence[int]]) -> Tensor:
        """Unit-norm embeddings for a list of token-id sequences, one row each."""
        v = self.vocab_size
        for ids in bags:
            if len(ids) == 0:
                raise EmptySequence("token sequence is empty")
            bad = [i for i in ids if not 0 <= i < v]
            if bad:
                raise OutOfVocab(f"token ids {bad[:5]} outside vocabulary of size {v}")
        pooled = embedding_bag(self.params["embedding"], bags)
        return l2_normalize(_perceptron(self.params, pooled))


@dataclass
class ImageEncoder:
    params: dict[str, Tensor]

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, out_dim: int,
             rng: np.random.Generator) -> ImageEncoder:
        arrays = {
            "w1": _init_linear(rng, input_dim, hidden_dim),
            "b1": np.zeros(hidden_dim),
            "w2": _init_linear(rng, hidden_dim, out_dim),
            "b2": _init_out_bias(rng, out_dim),
        }
        return cls.from_arrays(arrays)

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], trainable: bool = True) -> ImageEncoder:
        return cls({k: Tensor(np.array(v, dtype=np.float64), requires_grad=trainable, name=k)
                    for k, v in arrays.items()})

    @property
    def input_dim(self) -> int:
        return self.params["w1"].shape[0]

    @property
    def out_dim(self) -> int:
        return self.params["b2"].shape[0]

    def forward(self, features) -> Tensor:
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if x.shape[1] != self.input_dim:
            raise ShapeMismatch(f"feature length {x.shape[1]} != encoder input dim {self.input_dim}")
        return l2_normalize(_perceptron(self.params, Tensor(x)))


def encode_text(enc: TextEncoder, tokens: Sequence[int]) -> Tensor:
    return enc.forward([tokens]).reshape(enc.out_dim)


def encode_image(enc: ImageEncoder, feature) -> Tensor:
    feature = np.asarray(feature, dtype=np.float64)
    if feature.ndim != 1:
        raise ShapeMismatch("encode_image takes a single feature vector")
    return enc.forward(feature[None, :]).reshape(enc.out_dim)


@dataclass
class DualEncoder:
    """Student model: both towers, the tokenizer, and the learnable temperature."""

    image: ImageEncoder
    text: TextEncoder
    tokenizer: Tokenizer
    temperature: Temperature = field(default_factory=Temperature)

    @classmethod
    def init(cls, tokenizer: Tokenizer, image_dim: int, embed_dim: int = 32, hidden_dim: int = 64,
             out_dim: int = 32, seed: int = 0) -> DualEncoder:
        rng = np.random.default_rng(seed)
        image = ImageEncoder.init(image_dim, hidden_dim, out_dim, rng)
        text = TextEncoder.init(tokenizer.vocab_size, embed_dim, hidden_dim, out_dim, rng)
        return cls(image, text, tokenizer)

    def named_parameters(self) -> dict[str, Tensor]:
        named = {f"image.{k}": p for k, p in self.image.params.items()}
        named.update({f"text.{k}": p for k, p in self.text.params.items()})
        named["log_tau"] = self.temperature.log_value
        return named

    def encode_images(self, features) -> Tensor:
        return self.image.forward(features)

    def encode_texts(self, captions: Sequence[str]) -> Tensor:
        return self.text.forward([self.tokenizer.encode(c) for c in captions])

    def config(self) -> dict:
        return {
            "tokenizer": self.tokenizer.to_dict(),
            "image_dim": self.image.input_dim,
            "embed_dim": self.text.params["embedding"].shape[1],
            "hidden_dim": self.text.params["w1"].shape[1],
            "out_dim": self.text.out_dim,
            "tau_floor": self.temperature.floor,
        }


@dataclass
class TeacherState:
    """Frozen EMA copies of both towers. Parameters never require grad."""

    image: ImageEncoder
    text: TextEncoder
    alpha: float

    @classmethod
    def from_student(cls, student: DualEncoder, alpha: float) -> TeacherState:
        return cls(
            ImageEncoder.from_arrays({k: p.value for k, p in student.image.params.items()}, trainable=False),
            TextEncoder.from_arrays({k: p.value for k, p in student.text.params.items()}, trainable=False),
            alpha,
        )

    def named_parameters(self) -> dict[str, Tensor]:
        named = {f"image.{k}": p for k, p in self.image.params.items()}
        named.update({f"text.{k}": p for k, p in self.text.params.items()})
        return named

    def encode_images(self, features) -> np.ndarray:
        return self.image.forward(features).value

    def encode_texts(self, captions: Sequence[str], tokenizer: Tokenizer) -> np.ndarray:
        return self.text.forward([tokenizer.encode(c) for c in captions]).value


def ema_update(teacher: TeacherState, student: DualEncoder, alpha: float | None = None) -> TeacherState:
    """In place: every teacher array p* <- alpha*p* + (1-alpha)*p. Student is untouched."""
    alpha = teacher.alpha if alpha is None else alpha
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    student_params = student.named_parameters()
    for name, tp in teacher.named_parameters().items():
        sp = student_params.get(name)
        if sp is None or sp.shape != tp.shape:
            raise ShapeMismatch(f"teacher parameter {name} has no same-shape student counterpart")
        if alpha == 1.0:
            continue
        if alpha == 0.0:
            tp.value = sp.value.copy()
        else:
            tp.value = alpha * tp.value + (1.0 - alpha) * sp.value
    return teacher


def parameter_drift(teacher: TeacherState, student: DualEncoder) -> float:
    """L-infinity distance between teacher and student parameters."""
    sp = student.named_parameters()
    return max(float(np.max(np.abs(tp.value - sp[n].value))) for n, tp in teacher.named_parameters().items())


@dataclass
class EmbeddingBatch:
    """Student embeddings (Tensors, may carry grad) and teacher embeddings (arrays).

    ``neg`` / ``teacher_neg`` are B x K x d; ``None`` when K = 0.
    """

    v: Tensor
    t: Tensor
    neg: Tensor | None = None
    teacher_v: np.ndarray | None = None
    teacher_t: np.ndarray | None = None
    teacher_neg: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.v.shape[0]

    @property
    def k(self) -> int:
        return 0 if self.neg is None else self.neg.shape[1]

    def check(self, tol: float = 1e-6) -> None:
        for name in ("v", "t", "neg", "teacher_v", "teacher_t", "teacher_neg"):
            x = getattr(self, name)
            if x is None:
                continue
            arr = x.value if isinstance(x, Tensor) else np.asarray(x)
            norms = np.linalg.norm(arr, axis=-1)
            if np.any(np.abs(norms - 1.0) > tol):
                raise ValueError(f"{name} rows are not unit-norm")
        if self.neg is not None and self.teacher_neg is not None and self.neg.shape != np.shape(self.teacher_neg):
            raise ShapeMismatch("student and teacher negatives disagree in shape")


def embed_batch(model: DualEncoder, teacher: TeacherState | None, features, captions: Sequence[str],
                negatives: Sequence[Sequence[str]] | None = None) -> EmbeddingBatch:
    """Run the student (and teacher, if given) over one raw batch."""
    b = len(captions)
    k = len(negatives[0]) if negatives else 0
    if negatives and any(len(n) != k for n in negatives):
        raise ShapeMismatch("every item in a batch needs the same number of negatives")
    tok = model.tokenizer
    cap_ids = [tok.encode(c) for c in captions]
    neg_ids = [tok.encode(n) for row in (negatives or []) for n in row]
    v = model.image.forward(features)
    texts = model.text.forward(cap_ids + neg_ids)
    d = model.text.out_dim
    t = texts[:b]
    neg = texts[b:].reshape(b, k, d) if k else None
    batch = EmbeddingBatch(v=v, t=t, neg=neg)
    if teacher is not None:
        batch.teacher_v = teacher.image.forward(features).value
        tt = teacher.text.forward(cap_ids + neg_ids).value
        batch.teacher_t = tt[:b]
        batch.teacher_neg = tt[b:].reshape(b, k, d) if k else None
    return batch


# -- checkpoint ---------------------------------------------------------------------------

def _pack(arrays: dict[str, np.ndarray]) -> dict:
    return {name: {"shape": list(a.shape), "data": a.reshape(-1).tolist()} for name, a in arrays.items()}


def _unpack(blob: dict) -> dict[str, np.ndarray]:
    out = {}
    for name, entry in blob.items():
        data = np.asarray(entry["data"], dtype=np.float64)
        shape = tuple(entry["shape"])
        if data.size != int(np.prod(shape)):
            raise CheckpointError(f"parameter {name}: {data.size} values do not fill shape {shape}")
        out[name] = data.reshape(shape)
    return out


def save_checkpoint(path, model: DualEncoder, teacher: TeacherState | None = None) -> None:
    """Write a JSON checkpoint. Floats are serialized via repr, so the round trip is exact."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config(),
        "params": _pack({n: p.value for n, p in model.named_parameters().items()}),
    }
    if teacher is not None:
        doc["teacher_alpha"] = teacher.alpha
        doc["teacher_params"] = _pack({n: p.value for n, p in teacher.named_parameters().items()})
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[DualEncoder, TeacherState | None]:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    try:
        cfg = doc["config"]
        params = _unpack(doc["params"])
        tokenizer = Tokenizer.from_dict(cfg["tokenizer"])
        split = _split_towers(params)
        model = DualEncoder(
            ImageEncoder.from_arrays(split["image"]),
            TextEncoder.from_arrays(split["text"]),
            tokenizer,
            Temperature(Tensor(params["log_tau"].reshape(()), requires_grad=True, name="log_tau"),
                        floor=cfg.get("tau_floor", 0.01)),
        )
        teacher = None
        if "teacher_params" in doc:
            tsplit = _split_towers(_unpack(doc["teacher_params"]))
            teacher = TeacherState(ImageEncoder.from_arrays(tsplit["image"], trainable=False),
                                   TextEncoder.from_arrays(tsplit["text"], trainable=False),
                                   float(doc["teacher_alpha"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc
    if model.text.vocab_size != tokenizer.vocab_size:
        raise CheckpointError("embedding table size does not match the stored tokenizer")
    return model, teacher


def _split_towers(params: dict[str, np.ndarray]) -> dict[str, dict[str, np.ndarray]]:
    towers: dict[str, dict[str, np.ndarray]] = {"image": {}, "text": {}}
    for name, arr in params.items():
        tower, _, key = name.partition(".")
        if tower in towers:
            towers[tower][key] = arr
    for tower, needed in (("image", {"w1", "b1", "w2", "b2"}), ("text", {"embedding", "w1", "b1", "w2", "b2"})):
        missing = needed - towers[tower].keys()
        if missing:
            raise KeyError(f"{tower} tower missing {sorted(missing)}")
    return towers
