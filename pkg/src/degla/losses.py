"""Contrastive, local-alignment and distillation losses over an EmbeddingBatch.

Every function returns a scalar ``Tensor`` so the caller can backpropagate.
Per-anchor terms are averaged over the batch, except the distillation term,
which is a plain sum over the batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .errors import InvalidTemperature, MissingNegatives, MissingTeacher
from .numerics import Tensor, as_tensor, clamp_min, concat, exp, logsumexp, similarity_logits, take

if TYPE_CHECKING:
    from .encoders import EmbeddingBatch

TAU_INIT = 0.07
TAU_FLOOR = 0.01


def _default_log_tau() -> Tensor:
    return Tensor(math.log(TAU_INIT), requires_grad=True, name="log_tau")


@dataclass
class Temperature:
    """Learnable temperature; effective value is max(exp(log_value), floor)."""

    log_value: Tensor = field(default_factory=_default_log_tau)
    floor: float = TAU_FLOOR

    def tensor(self) -> Tensor:
        return clamp_min(exp(self.log_value), self.floor)

    @property
    def value(self) -> float:
        return max(math.exp(float(self.log_value.value)), self.floor)


@dataclass
class LossBreakdown:
    base: float
    igc: float
    tgc: float
    distill: float
    total: float
    graph: Tensor | None = field(default=None, repr=False, compare=False)


def _tau(tau) -> Tensor:
    if isinstance(tau, Temperature):
        tau = tau.tensor()
    tau = as_tensor(tau)
    if tau.value.size != 1 or not float(tau.value) > 0:
        raise InvalidTemperature(f"temperature must be positive, got {tau.value}")
    return tau.reshape(())


def _diag(m: Tensor) -> Tensor:
    idx = np.arange(m.shape[0])
    return take(m, (idx, idx))


def _require_negatives(batch: EmbeddingBatch) -> None:
    if batch.neg is None or batch.k == 0:
        raise MissingNegatives("this loss needs K >= 1 negative captions per item")


def _infonce(anchor: Tensor, other: Tensor, tau: Tensor) -> Tensor:
    logits = similarity_logits(anchor, other, tau)
    return (logsumexp(logits, axis=1) - _diag(logits)).mean()


def info_nce_i2t(batch: EmbeddingBatch, tau) -> Tensor:
    return _infonce(as_tensor(batch.v), as_tensor(batch.t), _tau(tau))


def info_nce_t2i(batch: EmbeddingBatch, tau) -> Tensor:
    return _infonce(as_tensor(batch.t), as_tensor(batch.v), _tau(tau))


def clip_loss(batch: EmbeddingBatch, tau) -> Tensor:
    tau = _tau(tau)
    return 0.5 * (info_nce_i2t(batch, tau) + info_nce_t2i(batch, tau))


def augmented_i2t(batch: EmbeddingBatch, tau) -> Tensor:
    """Image-to-text InfoNCE whose denominator also holds every item's hard negatives.

    Each image is contrasted against all B captions and all B*K negatives in the batch.
    """
    tau = _tau(tau)
    if batch.neg is None:
        return info_nce_i2t(batch, tau)
    v, t, neg = as_tensor(batch.v), as_tensor(batch.t), as_tensor(batch.neg)
    b, k, d = neg.shape
    if k == 0:
        return info_nce_i2t(batch, tau)
    pos_logits = similarity_logits(v, t, tau)
    neg_logits = similarity_logits(v, neg.reshape(b * k, d), tau)
    logits = concat([pos_logits, neg_logits], axis=1)
    return (logsumexp(logits, axis=1) - _diag(pos_logits)).mean()


def base_loss(batch: EmbeddingBatch, tau) -> Tensor:
    tau = _tau(tau)
    return 0.5 * (augmented_i2t(batch, tau) + info_nce_t2i(batch, tau))


def _local_contrast(anchor: Tensor, positive, neg: Tensor, tau: Tensor) -> Tensor:
    b, k, d = neg.shape
    pos = (anchor * positive).sum(axis=1) / tau
    negs = (anchor.reshape(b, 1, d) * neg).sum(axis=2) / tau
    logits = concat([pos.reshape(b, 1), negs], axis=1)
    return (logsumexp(logits, axis=1) - pos).mean()


def igc_loss(batch: EmbeddingBatch, tau) -> Tensor:
    """Image-grounded contrast: each image vs its own caption and only its own negatives."""
    _require_negatives(batch)
    return _local_contrast(as_tensor(batch.v), as_tensor(batch.t), as_tensor(batch.neg), _tau(tau))


def tgc_loss(batch: EmbeddingBatch, tau) -> Tensor:
    """Text-grounded contrast anchored on the student caption.

    The positive is the (constant) teacher embedding of the same caption; the
    negatives are the student embeddings of that caption's negatives.
    """
    if batch.teacher_t is None:
        raise MissingTeacher("tgc_loss needs teacher text embeddings")
    _require_negatives(batch)
    teacher_t = np.asarray(batch.teacher_t.value if isinstance(batch.teacher_t, Tensor) else batch.teacher_t)
    return _local_contrast(as_tensor(batch.t), Tensor(teacher_t), as_tensor(batch.neg), _tau(tau))


def _sq_dist(student, teacher) -> Tensor:
    diff = as_tensor(student) - Tensor(np.asarray(teacher.value if isinstance(teacher, Tensor) else teacher))
    return (diff * diff).sum()


def distill_loss(batch: EmbeddingBatch) -> Tensor:
    """Summed squared distance between student and teacher embeddings (images, captions, negatives)."""
    if batch.teacher_v is None or batch.teacher_t is None:
        raise MissingTeacher("distill_loss needs teacher image and text embeddings")
    total = _sq_dist(batch.v, batch.teacher_v) + _sq_dist(batch.t, batch.teacher_t)
    if batch.neg is not None and batch.k > 0:
        if batch.teacher_neg is None:
            raise MissingTeacher("distill_loss needs teacher embeddings for the negatives")
        total = total + _sq_dist(batch.neg, batch.teacher_neg)
    return total


def total_loss(batch: EmbeddingBatch, tau, lambda1: float, lambda2: float, lambda3: float) -> LossBreakdown:
    """base + lambda1*igc + lambda2*tgc + lambda3*distill.

    With K = 0 the local terms are reported as 0. Terms whose weight is 0 are
    still evaluated when their inputs exist, so the breakdown is always informative.
    """
    if min(lambda1, lambda2, lambda3) < 0:
        raise ValueError("loss weights must be non-negative")
    tau = _tau(tau)
    zero = Tensor(0.0)
    base = base_loss(batch, tau)
    has_neg = batch.neg is not None and batch.k > 0
    has_teacher = batch.teacher_v is not None and batch.teacher_t is not None

    igc = igc_loss(batch, tau) if has_neg else zero
    if has_neg and (has_teacher or lambda2 > 0):
        tgc = tgc_loss(batch, tau)
    else:
        tgc = zero
    distill = distill_loss(batch) if (has_teacher or lambda3 > 0) else zero

    graph = base + lambda1 * igc + lambda2 * tgc + lambda3 * distill
    return LossBreakdown(
        base=base.item(), igc=igc.item(), tgc=tgc.item(), distill=distill.item(),
        total=graph.item(), graph=graph,
    )
