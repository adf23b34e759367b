"""Gradient verification suite shared by the CLI and the test-suite."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .encoders import EmbeddingBatch
from .losses import (augmented_i2t, base_loss, clip_loss, distill_loss, igc_loss, info_nce_i2t, info_nce_t2i,
                     tgc_loss, total_loss)
from .numerics import Tensor, _make, _send, exp, grad_check

GRAD_TOL = 1e-4
# fault-injection hook: name a loss here and its gradient is deliberately scaled
CORRUPT_ENV = "DEGLA_GRADCHECK_CORRUPT"
DEFAULT_LAMBDAS = (0.1, 0.1, 0.005)

LOSSES: dict[str, Callable[[EmbeddingBatch, Tensor], Tensor]] = {
    "info_nce_i2t": info_nce_i2t,
    "info_nce_t2i": info_nce_t2i,
    "clip": clip_loss,
    "augmented_i2t": augmented_i2t,
    "base": base_loss,
    "distill": lambda batch, tau: distill_loss(batch),
    "igc": igc_loss,
    "tgc": tgc_loss,
    "total": lambda batch, tau: total_loss(batch, tau, *DEFAULT_LAMBDAS).graph,
}


def _unit(rng: np.random.Generator, *shape) -> np.ndarray:
    x = rng.normal(size=shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def random_embeddings(rng: np.random.Generator, b: int = 4, k: int = 4, d: int = 8) -> dict[str, np.ndarray]:
    return {"v": _unit(rng, b, d), "t": _unit(rng, b, d), "neg": _unit(rng, b, k, d),
            "teacher_v": _unit(rng, b, d), "teacher_t": _unit(rng, b, d), "teacher_neg": _unit(rng, b, k, d),
            "log_tau": np.array(math.log(rng.uniform(0.05, 0.5)))}


def _skewed(x: Tensor, factor: float) -> Tensor:
    """Identity forward, scaled backward."""
    def bw(g):
        _send(x, g * factor)
    return _make(x.value, (x,), bw)


@dataclass
class GradCheckResult:
    loss: str
    worst: float

    @property
    def passed(self) -> bool:
        return self.worst < GRAD_TOL


def check_loss(name: str, emb: dict[str, np.ndarray], corrupt: bool = False) -> float:
    """Worst relative error over the student inputs (v, t, negatives) and the log-temperature."""
    fn = LOSSES[name]
    worst = 0.0
    for wrt in ("v", "t", "neg", "log_tau"):
        def f(x: Tensor, wrt=wrt) -> Tensor:
            if corrupt:
                x = _skewed(x, 1.5)
            vals = {key: Tensor(emb[key]) for key in ("v", "t", "neg", "log_tau")}
            vals[wrt] = x
            batch = EmbeddingBatch(v=vals["v"], t=vals["t"], neg=vals["neg"], teacher_v=emb["teacher_v"],
                                   teacher_t=emb["teacher_t"], teacher_neg=emb["teacher_neg"])
            return fn(batch, exp(vals["log_tau"]))
        worst = max(worst, grad_check(f, emb[wrt]).max_relative_error)
    return worst


def gradcheck_suite(seeds=range(10), b: int = 4, k: int = 4, d: int = 8,
                    corrupt: str | None = None) -> list[GradCheckResult]:
    """Worst relative error per loss across ``seeds``.

    Losses whose gradient is identically zero in some input (e.g. distill w.r.t. temperature)
    compare zero with a zero central difference, which the relative-error floor handles.
    """
    if corrupt is None:
        corrupt = os.environ.get(CORRUPT_ENV) or None
    worst = {name: 0.0 for name in LOSSES}
    for seed in seeds:
        emb = random_embeddings(np.random.default_rng(seed), b, k, d)
        for name in LOSSES:
            worst[name] = max(worst[name], check_loss(name, emb, corrupt=(name == corrupt)))
    return [GradCheckResult(name, w) for name, w in worst.items()]

