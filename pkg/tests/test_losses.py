import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from helpers import as_lists, random_batch, unit_rows
from degla.encoders import EmbeddingBatch
from degla.errors import InvalidTemperature, MissingNegatives, MissingTeacher
from degla.losses import (TAU_FLOOR, TAU_INIT, Temperature, augmented_i2t, base_loss, clip_loss, distill_loss,
                          igc_loss, info_nce_i2t, info_nce_t2i, tgc_loss, total_loss)
from degla.numerics import Tensor, grad_check
from degla.verify import LOSSES, check_loss, random_embeddings


def batch_from(v, t, neg=None, tv=None, tt=None, tneg=None):
    arr = lambda x: None if x is None else np.asarray(x, dtype=float)
    return EmbeddingBatch(Tensor(arr(v)), Tensor(arr(t)), None if neg is None else Tensor(arr(neg)),
                          arr(tv), arr(tt), arr(tneg))


# -- closed forms -------------------------------------------------------------------------

@pytest.mark.parametrize("b", [1, 2, 5, 8])
def test_uniform_similarity_infonce_is_log_b(b):
    v = np.tile([1.0, 0.0, 0.0], (b, 1))
    batch = batch_from(v, v)
    for fn in (info_nce_i2t, info_nce_t2i, clip_loss):
        assert fn(batch, 0.07).item() == pytest.approx(math.log(b), abs=1e-12)


def test_two_item_orthonormal_infonce():
    batch = batch_from(np.eye(2), np.eye(2))
    expected = math.log(1 + math.exp(-1))
    assert expected == pytest.approx(0.313262, abs=1e-6)
    assert info_nce_i2t(batch, 1.0).item() == pytest.approx(expected, abs=1e-12)


def test_single_item_losses_vanish():
    rng = np.random.default_rng(0)
    batch = batch_from(unit_rows(rng, 1, 4), unit_rows(rng, 1, 4))
    for fn in (info_nce_i2t, info_nce_t2i, clip_loss):
        assert fn(batch, 0.1).item() == 0.0


def test_symmetric_batch_directions_agree(rng):
    v = unit_rows(rng, 5, 6)
    batch = batch_from(v, v)
    i2t = info_nce_i2t(batch, 0.2).item()
    assert info_nce_t2i(batch, 0.2).item() == i2t
    assert clip_loss(batch, 0.2).item() == pytest.approx(i2t, abs=1e-15)


@pytest.mark.parametrize("b", [1, 3, 6])
def test_uniform_augmented_is_log_5b(b):
    e = np.array([1.0, 0.0])
    batch = batch_from(np.tile(e, (b, 1)), np.tile(e, (b, 1)), np.tile(e, (b, 4, 1)))
    assert augmented_i2t(batch, 0.05).item() == pytest.approx(math.log(5 * b), abs=1e-12)


def test_uniform_local_losses_are_log_5():
    e = np.array([0.0, 1.0, 0.0])
    b = 3
    batch = batch_from(np.tile(e, (b, 1)), np.tile(e, (b, 1)), np.tile(e, (b, 4, 1)), tt=np.tile(e, (b, 1)))
    assert igc_loss(batch, 0.07).item() == pytest.approx(math.log(5), abs=1e-12)
    assert tgc_loss(batch, 0.07).item() == pytest.approx(math.log(5), abs=1e-12)
    assert math.log(5) == pytest.approx(1.609438, abs=1e-6)


def test_margin_one_local_losses():
    # matched pair at similarity 1, four orthogonal negatives, tau = 1
    expected = math.log(1 + 4 * math.exp(-1))
    assert expected == pytest.approx(0.90483, abs=1e-5)
    v = np.array([[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]])
    negs = np.eye(6)[None, 1:5]
    batch = batch_from(v, v, negs, tt=v)
    assert igc_loss(batch, 1.0).item() == pytest.approx(expected, abs=1e-12)
    assert tgc_loss(batch, 1.0).item() == pytest.approx(expected, abs=1e-12)


def test_igc_decreases_as_temperature_falls():
    v = np.array([[1.0, 0.0, 0.0, 0.0, 0.0]])
    negs = np.eye(5)[None, 1:5] * 0.5 + np.array([0.5, 0, 0, 0, 0])
    batch = batch_from(v, v, negs)
    values = [igc_loss(batch, tau).item() for tau in (1.0, 0.5, 0.1)]
    assert values[0] > values[1] > values[2] > 0


def test_distill_examples(rng):
    b = random_batch(rng)
    same = EmbeddingBatch(b.v, b.t, b.neg, b.v.value, b.t.value, b.neg.value)
    assert distill_loss(same).item() == 0.0
    one = batch_from([[1.0, 0.0]], [[0.0, 1.0]], tv=[[0.0, 1.0]], tt=[[0.0, 1.0]])
    assert distill_loss(one).item() == 2.0


def test_k0_reductions(rng):
    b = random_batch(rng, K=0)
    assert augmented_i2t(b, 0.1).item() == info_nce_i2t(b, 0.1).item()
    assert base_loss(b, 0.1).item() == pytest.approx(clip_loss(b, 0.1).item(), abs=1e-15)


def test_base_loss_large_tau_limit():
    # v = t, negatives orthogonal to every image: at tau = 100 base approaches clip
    v = np.eye(6)[:2]
    negs = np.tile(np.eye(6)[2:6], (2, 1, 1))
    batch = batch_from(v, v, negs)
    base = base_loss(batch, 100.0).item()
    assert base == pytest.approx(oracles.base_loss(v.tolist(), v.tolist(), negs.tolist(), 100.0), abs=1e-12)
    correction = base - clip_loss(batch, 100.0).item()
    assert 0 < correction < 0.5 * math.log(5) + 1e-9


def test_total_weighted_sum(rng):
    b = random_batch(rng)
    out = total_loss(b, 0.07, 0.1, 0.1, 0.005)
    expect = (base_loss(b, 0.07).item() + 0.1 * igc_loss(b, 0.07).item() + 0.1 * tgc_loss(b, 0.07).item()
              + 0.005 * distill_loss(b).item())
    assert out.total == pytest.approx(expect, abs=1e-12)
    assert out.base == base_loss(b, 0.07).item()
    zero = total_loss(b, 0.07, 0, 0, 0)
    assert zero.total == zero.base


def test_total_without_negatives_reports_zero_local_terms(rng):
    b = random_batch(rng, K=0)
    out = total_loss(b, 0.1, 0.1, 0.1, 0.005)
    assert out.igc == 0.0 and out.tgc == 0.0
    assert out.total == pytest.approx(out.base + 0.005 * out.distill, abs=1e-12)


# -- errors --------------------------------------------------------------------------------

def test_missing_inputs(rng):
    no_neg = random_batch(rng, K=0)
    with pytest.raises(MissingNegatives):
        igc_loss(no_neg, 0.1)
    with pytest.raises(MissingNegatives):
        tgc_loss(no_neg, 0.1)
    b = random_batch(rng)
    bare = EmbeddingBatch(b.v, b.t, b.neg)
    with pytest.raises(MissingTeacher):
        tgc_loss(bare, 0.1)
    with pytest.raises(MissingTeacher):
        distill_loss(bare)
    with pytest.raises(InvalidTemperature):
        clip_loss(b, 0.0)
    with pytest.raises(ValueError):
        total_loss(b, 0.1, -0.1, 0, 0)


def test_temperature_parameterisation():
    tau = Temperature()
    assert tau.value == pytest.approx(TAU_INIT)
    low = Temperature(Tensor(math.log(1e-4), requires_grad=True))
    assert low.value == TAU_FLOOR
    assert low.tensor().item() == TAU_FLOOR


# -- oracle equivalence and invariants -------------------------------------------------------

def oracle_values(batch, tau, lambdas=(0.1, 0.1, 0.005)):
    v, t, neg, vs, ts, negs = as_lists(batch)
    return {
        "info_nce_i2t": oracles.info_nce_i2t(v, t, tau),
        "info_nce_t2i": oracles.info_nce_t2i(v, t, tau),
        "clip": oracles.clip_loss(v, t, tau),
        "augmented_i2t": oracles.augmented_i2t(v, t, neg, tau),
        "base": oracles.base_loss(v, t, neg, tau),
        "igc": oracles.igc_loss(v, t, neg, tau),
        "tgc": oracles.tgc_loss(t, ts, neg, tau),
        "distill": oracles.distill_loss(v, t, neg, vs, ts, negs),
        "total": oracles.total_loss(v, t, neg, vs, ts, negs, tau, *lambdas),
    }


def test_batched_losses_match_loop_oracles():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        b, k, d = int(rng.integers(1, 9)), int(rng.integers(1, 5)), int(rng.integers(2, 17))
        tau = float(rng.uniform(0.02, 1.0))
        batch = random_batch(rng, B=b, K=k, d=d)
        want = oracle_values(batch, tau)
        for name, fn in LOSSES.items():
            worst = max(worst, abs(fn(batch, tau).item() - want[name]))
    assert worst < 1e-10


@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 4))
@settings(max_examples=30, deadline=None)
def test_losses_nonnegative_and_augmented_dominates(seed, b, k):
    rng = np.random.default_rng(seed)
    batch = random_batch(rng, B=b, K=k, d=5)
    tau = float(rng.uniform(0.02, 2.0))
    for name, fn in LOSSES.items():
        assert fn(batch, tau).item() >= -1e-12, name
    assert augmented_i2t(batch, tau).item() >= info_nce_i2t(batch, tau).item()


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    batch = random_batch(rng, B=6, K=3, d=5)
    perm = rng.permutation(6)
    shuffled = EmbeddingBatch(Tensor(batch.v.value[perm]), Tensor(batch.t.value[perm]), Tensor(batch.neg.value[perm]),
                              batch.teacher_v[perm], batch.teacher_t[perm], batch.teacher_neg[perm])
    for name, fn in LOSSES.items():
        assert fn(shuffled, 0.1).item() == pytest.approx(fn(batch, 0.1).item(), abs=1e-12), name


def test_igc_monotone_in_negative_similarity(rng):
    batch = random_batch(rng, B=3, K=4, d=6)
    base = igc_loss(batch, 0.1).item()
    neg = batch.neg.value.copy()
    # move one negative towards the antipode of its image: its similarity drops
    neg[1, 2] = neg[1, 2] - 0.3 * batch.v.value[1]
    lowered = EmbeddingBatch(batch.v, batch.t, Tensor(neg), batch.teacher_v, batch.teacher_t, batch.teacher_neg)
    assert (batch.v.value[1] @ neg[1, 2]) < (batch.v.value[1] @ batch.neg.value[1, 2])
    assert igc_loss(lowered, 0.1).item() < base


def test_tgc_positive_is_constant(rng):
    batch = random_batch(rng, B=3, K=2, d=5, grad=True)
    batch.teacher_t = Tensor(batch.teacher_t, requires_grad=True)
    tgc_loss(batch, 0.1).backward()
    assert batch.teacher_t.grad is None
    assert batch.t.grad is not None and batch.neg.grad is not None
    assert batch.v.grad is None


# -- gradients ------------------------------------------------------------------------------

@pytest.mark.parametrize("name", list(LOSSES))
def test_loss_gradients_over_ten_seeds(name):
    worst = max(check_loss(name, random_embeddings(np.random.default_rng(s))) for s in range(10))
    assert worst < 1e-4


def test_clip_gradient_through_normalisation(rng):
    from degla.numerics import l2_normalize
    t = unit_rows(rng, 4, 8)

    def f(x):
        return clip_loss(EmbeddingBatch(l2_normalize(x), Tensor(t)), 0.07)

    assert grad_check(f, rng.normal(size=(4, 8))).max_relative_error < 1e-4
