"""Optimization loop: AdamW with cosine decay, EMA teacher, per-step metrics."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import text as textnorm
from .dataio import CorpusRecord, batches, load_corpus
from .encoders import (DualEncoder, ImageEncoder, TeacherState, TextEncoder, Tokenizer, ema_update, embed_batch,
                       parameter_drift, save_checkpoint)
from .errors import DatasetInvalid, NonFiniteLoss
from .lexicon import load_lexicon
from .losses import LossBreakdown, Temperature, total_loss
from .numerics import Tensor

log = logging.getLogger(__name__)

METRIC_FIELDS = ("step", "total", "base", "igc", "tgc", "distill", "tau", "lr", "drift")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    negatives: int = 4
    epochs: int = 12
    learning_rate: float = 1e-3
    weight_decay: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_epsilon: float = 1e-6
    ema_alpha: float = 0.9996
    lambda1: float = 0.1
    lambda2: float = 0.1
    lambda3: float = 0.005
    schedule: str = "cosine"
    seed: int = 0
    # desk-scale model size
    embed_dim: int = 32
    hidden_dim: int = 64
    out_dim: int = 32

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.negatives < 0:
            raise ValueError("negatives must be >= 0")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0.0 <= self.ema_alpha <= 1.0:
            raise ValueError("ema_alpha must lie in [0, 1]")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.schedule != "cosine":
            raise ValueError(f"unsupported schedule {self.schedule!r}")

    def with_(self, **changes) -> TrainConfig:
        return replace(self, **changes)


# optimizer and loss scalars for full-scale fine-tuning of pretrained weights
PAPER_PRESET = TrainConfig(batch_size=256, negatives=4, epochs=5, learning_rate=1e-6, weight_decay=0.1,
                           adam_beta1=0.9, adam_beta2=0.98, adam_epsilon=1e-6, ema_alpha=0.9996,
                           lambda1=0.1, lambda2=0.1, lambda3=0.005)
# randomly initialised tiny encoders need a much larger step size; alpha is shortened so the
# teacher's averaging horizon spans a similar fraction of a ~400-step run
DESK_PRESET = TrainConfig(ema_alpha=0.99)
PRESETS = {"paper": PAPER_PRESET, "desk": DESK_PRESET}


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    if total_steps <= 0:
        return base_lr
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def _decays(name: str) -> bool:
    # biases and the temperature are excluded from weight decay
    return not (name.endswith(".b1") or name.endswith(".b2") or name == "log_tau")


class AdamW:
    """Decoupled-weight-decay Adam over a name -> Tensor mapping."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, betas=(0.9, 0.98), eps: float = 1e-6,
                 weight_decay: float = 0.1):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {n: np.zeros_like(p.value) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.value) for n, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            value = p.value
            if self.weight_decay and _decays(name):
                value = value * (1.0 - lr * self.weight_decay)
            p.value = value - lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass(frozen=True)
class StepMetrics:
    step: int
    losses: LossBreakdown
    tau: float
    drift: float
    lr: float

    def row(self) -> dict:
        return {"step": self.step, "total": self.losses.total, "base": self.losses.base, "igc": self.losses.igc,
                "tgc": self.losses.tgc, "distill": self.losses.distill, "tau": self.tau, "lr": self.lr,
                "drift": self.drift}


@dataclass
class RawBatch:
    features: np.ndarray
    captions: list[str]
    negatives: list[list[str]] | None
    batch_id: str = ""

    @classmethod
    def from_records(cls, records: Sequence[CorpusRecord], batch_id: str = "") -> RawBatch:
        feats = np.stack([r.image_feature for r in records])
        negs = None
        if records and records[0].negatives is not None:
            negs = [[n.text for n in r.negatives] for r in records]
        return cls(feats, [r.caption for r in records], negs, batch_id)


def train_step(model: DualEncoder, teacher: TeacherState, batch: RawBatch, optimizer: AdamW,
               cfg: TrainConfig, step: int = 0, total_steps: int = 0) -> StepMetrics:
    """One student update on the combined objective, followed by the EMA teacher update."""
    negatives = batch.negatives if cfg.negatives > 0 else None
    emb = embed_batch(model, teacher, batch.features, batch.captions, negatives)
    optimizer.zero_grad()
    losses = total_loss(emb, model.temperature, cfg.lambda1, cfg.lambda2, cfg.lambda3)
    if not math.isfinite(losses.total):
        raise NonFiniteLoss(f"non-finite loss {losses.total} at step {step} (batch {batch.batch_id!r})",
                            batch_id=batch.batch_id)
    losses.graph.backward()
    lr = cosine_lr(step, total_steps, cfg.learning_rate) if total_steps else cfg.learning_rate
    optimizer.step(lr)
    ema_update(teacher, model, cfg.ema_alpha)
    return StepMetrics(step, replace(losses, graph=None), model.temperature.value,
                       parameter_drift(teacher, model), lr)


def build_tokenizer(records: Sequence[CorpusRecord]) -> Tokenizer:
    """Shipped lexicon words plus every word seen in captions and negatives."""
    words = set(load_lexicon().tags)
    for r in records:
        words.update(textnorm.words(r.caption))
        for n in r.negatives or ():
            words.update(textnorm.words(n.text))
    return Tokenizer(words)


def validate_training_records(records: Sequence[CorpusRecord], cfg: TrainConfig) -> None:
    if not records:
        raise DatasetInvalid("dataset is empty")
    for r in records:
        if r.image_feature is None:
            raise DatasetInvalid(f"record {r.id!r} has no image_feature")
        if cfg.negatives > 0 and (r.negatives is None or len(r.negatives) != cfg.negatives):
            raise DatasetInvalid(f"record {r.id!r} needs exactly {cfg.negatives} negatives")


@dataclass
class TrainResult:
    model: DualEncoder
    teacher: TeacherState
    metrics: list[StepMetrics]
    initial: DualEncoder


def train_on_records(records: Sequence[CorpusRecord], cfg: TrainConfig, model: DualEncoder | None = None,
                     metrics_path=None) -> TrainResult:
    validate_training_records(records, cfg)
    if model is None:
        model = DualEncoder.init(build_tokenizer(records), records[0].image_feature.shape[0], cfg.embed_dim,
                                 cfg.hidden_dim, cfg.out_dim, seed=cfg.seed)
    initial = copy_model(model)
    teacher = TeacherState.from_student(model, cfg.ema_alpha)
    opt = AdamW(model.named_parameters(), cfg.learning_rate, (cfg.adam_beta1, cfg.adam_beta2), cfg.adam_epsilon,
                cfg.weight_decay)
    steps_per_epoch = math.ceil(len(records) / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    metrics: list[StepMetrics] = []
    writer = None
    fh = None
    if metrics_path is not None:
        fh = open(metrics_path, "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        writer.writeheader()
    try:
        step = 0
        for epoch in range(cfg.epochs):
            rng = np.random.default_rng([cfg.seed, epoch])
            for b, idx in enumerate(batches(len(records), cfg.batch_size, rng)):
                raw = RawBatch.from_records([records[i] for i in idx], batch_id=f"epoch{epoch}-batch{b}")
                m = train_step(model, teacher, raw, opt, cfg, step, total)
                metrics.append(m)
                if writer is not None:
                    writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in m.row().items()})
                step += 1
            log.info("epoch %d done: total=%.4f tau=%.4f", epoch, metrics[-1].losses.total, metrics[-1].tau)
    finally:
        if fh is not None:
            fh.close()
    return TrainResult(model, teacher, metrics, initial)


def run_training(dataset_path, cfg: TrainConfig, checkpoint_out=None, metrics_path=None) -> TrainResult:
    """Load a JSONL dataset, train, and write the checkpoint and metrics CSV."""
    records = load_corpus(dataset_path)
    result = train_on_records(records, cfg, metrics_path=metrics_path)
    if checkpoint_out is not None:
        save_checkpoint(checkpoint_out, result.model, result.teacher)
    return result


def copy_model(model: DualEncoder) -> DualEncoder:
    return DualEncoder(
        ImageEncoder.from_arrays({k: p.value for k, p in model.image.params.items()}),
        TextEncoder.from_arrays({k: p.value for k, p in model.text.params.items()}),
        model.tokenizer,
        Temperature(Tensor(model.temperature.log_value.value.copy(), requires_grad=True, name="log_tau"),
                    model.temperature.floor),
    )


def config_fields() -> list[str]:
    return [f.name for f in fields(TrainConfig)]


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
