import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from degla.encoders import (DualEncoder, ImageEncoder, TeacherState, TextEncoder, Tokenizer, EmbeddingBatch,
                            embed_batch, ema_update, encode_image, encode_text, load_checkpoint, parameter_drift,
                            save_checkpoint)
from degla.errors import CheckpointError, EmptySequence, OutOfVocab, ShapeMismatch
from degla.numerics import Tensor

WORDS = ["red", "blue", "dog", "cat", "chases"]


def identity_text(emb):
    d = emb.shape[1]
    eye, zeros = np.eye(d), np.zeros(d)
    return TextEncoder.from_arrays({"embedding": emb, "w1": eye, "b1": zeros, "w2": eye, "b2": zeros})


def small_model(seed=0, image_dim=6):
    return DualEncoder.init(Tokenizer(WORDS), image_dim, embed_dim=5, hidden_dim=7, out_dim=4, seed=seed)


# -- tokenizer ------------------------------------------------------------------------------

def test_tokenizer_ids_and_bigrams():
    tok = Tokenizer(WORDS)
    u = tok.n_unigrams
    assert u == len(WORDS) + 3
    assert tok.vocab_size == u + u * u
    ids = tok.encode("Red dog!")
    red, dog = tok.index["red"], tok.index["dog"]
    bos, eos = tok.index[tok.BOS], tok.index[tok.EOS]
    assert ids == [red, dog, u + bos * u + red, u + red * u + dog, u + dog * u + eos]
    assert tok.encode("zebra")[0] == 0
    with pytest.raises(EmptySequence):
        tok.encode(" ,. ")


def test_word_order_changes_bigram_bag():
    tok = Tokenizer(WORDS)
    a, b = tok.encode("red dog chases blue cat"), tok.encode("blue dog chases red cat")
    assert sorted(a[:5]) == sorted(b[:5])
    assert sorted(a) != sorted(b)


def test_unigram_only_tokenizer():
    tok = Tokenizer(WORDS, bigrams=False)
    assert tok.vocab_size == tok.n_unigrams
    assert len(tok.encode("red dog")) == 2
    assert Tokenizer.from_dict(tok.to_dict()).encode("red dog") == tok.encode("red dog")


# -- encoders -------------------------------------------------------------------------------

def test_single_token_identity_projection():
    emb = np.zeros((3, 4))
    emb[1] = [3.0, 4.0, 0.0, 0.0]
    assert np.allclose(encode_text(identity_text(emb), [1]).value, [0.6, 0.8, 0, 0], atol=1e-15)


def test_permuted_tokens_same_embedding(rng):
    enc = TextEncoder.init(10, 4, 6, 3, rng)
    ids = [1, 4, 4, 7, 9]
    assert np.allclose(encode_text(enc, ids).value, encode_text(enc, ids[::-1]).value, atol=1e-14)


def test_two_token_mean_pooling(rng):
    emb = np.abs(rng.normal(size=(4, 3)))
    got = encode_text(identity_text(emb), [0, 2]).value
    assert np.allclose(got, oracles.normalize(((emb[0] + emb[2]) / 2).tolist()), atol=1e-15)


def test_image_identity_and_constant_maps():
    eye, zeros = np.eye(2), np.zeros(2)
    enc = ImageEncoder.from_arrays({"w1": eye, "b1": zeros, "w2": eye, "b2": zeros})
    assert np.allclose(encode_image(enc, [3.0, 4.0]).value, [0.6, 0.8], atol=1e-15)
    b = np.array([1.0, -2.0, 2.0])
    const = ImageEncoder.from_arrays({"w1": np.zeros((5, 4)), "b1": np.ones(4), "w2": np.zeros((4, 3)), "b2": b})
    out = const.forward(np.random.default_rng(0).normal(size=(6, 5))).value
    assert np.allclose(out, np.tile(b / 3.0, (6, 1)), atol=1e-15)


def test_image_forward_matches_scalar_oracle():
    enc = ImageEncoder.init(8, 16, 6, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=8)
    p = {k: t.value.tolist() for k, t in enc.params.items()}
    want = oracles.normalize(oracles.perceptron(x.tolist(), p["w1"], p["b1"], p["w2"], p["b2"]))
    assert np.max(np.abs(encode_image(enc, x).value - want)) < 1e-12


def test_text_forward_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    enc = TextEncoder.init(12, 5, 9, 4, rng)
    ids = [3, 7, 7, 11]
    p = {k: t.value.tolist() for k, t in enc.params.items()}
    pooled = [sum(p["embedding"][i][j] for i in ids) / len(ids) for j in range(5)]
    want = oracles.normalize(oracles.perceptron(pooled, p["w1"], p["b1"], p["w2"], p["b2"]))
    assert np.max(np.abs(encode_text(enc, ids).value - want)) < 1e-12


def test_outputs_unit_norm_on_many_inputs():
    rng = np.random.default_rng(7)
    model = small_model()
    feats = rng.normal(size=(1000, 6)) * rng.uniform(0.01, 100, size=(1000, 1))
    assert np.allclose(np.linalg.norm(model.encode_images(feats).value, axis=1), 1.0, atol=1e-12)
    bags = [list(rng.integers(0, model.text.vocab_size, size=rng.integers(1, 8))) for _ in range(1000)]
    assert np.allclose(np.linalg.norm(model.text.forward(bags).value, axis=1), 1.0, atol=1e-12)


def test_encoder_errors(rng):
    enc = TextEncoder.init(5, 3, 4, 2, rng)
    with pytest.raises(OutOfVocab):
        enc.forward([[5]])
    with pytest.raises(EmptySequence):
        enc.forward([[]])
    img = ImageEncoder.init(3, 4, 2, rng)
    with pytest.raises(ShapeMismatch):
        img.forward(np.ones((2, 4)))
    with pytest.raises(ShapeMismatch):
        encode_image(img, np.ones((1, 3)))


# -- teacher --------------------------------------------------------------------------------

def test_ema_endpoints_exact():
    student = small_model(seed=1)
    teacher = TeacherState.from_student(small_model(seed=2), 0.5)
    before = {n: p.value.copy() for n, p in teacher.named_parameters().items()}
    ema_update(teacher, student, 1.0)
    assert all(np.array_equal(p.value, before[n]) for n, p in teacher.named_parameters().items())
    ema_update(teacher, student, 0.0)
    sp = student.named_parameters()
    assert all(np.array_equal(p.value, sp[n].value) for n, p in teacher.named_parameters().items())


def test_ema_scalar_arithmetic():
    student = small_model()
    teacher = TeacherState.from_student(student, 0.9996)
    for p in teacher.named_parameters().values():
        p.value = np.ones_like(p.value)
    for n, p in student.named_parameters().items():
        if n != "log_tau":
            p.value = np.zeros_like(p.value)
    ema_update(teacher, student)
    assert all(np.all(p.value == 0.9996) for p in teacher.named_parameters().values())


@given(st.floats(0.0, 1.0), st.integers(1, 6))
@settings(max_examples=30, deadline=None)
def test_ema_contracts_towards_frozen_student(alpha, n):
    student = small_model(seed=3)
    teacher = TeacherState.from_student(small_model(seed=4), alpha)
    gaps = [parameter_drift(teacher, student)]
    for _ in range(n):
        ema_update(teacher, student)
        gaps.append(parameter_drift(teacher, student))
    assert all(b <= a for a, b in zip(gaps, gaps[1:]))


def test_ema_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        ema_update(TeacherState.from_student(small_model(image_dim=6), 0.9), small_model(image_dim=7))


def test_teacher_matches_frozen_student_copy(rng):
    student = small_model(seed=5)
    teacher = TeacherState.from_student(student, 0.99)
    feats = rng.normal(size=(4, 6))
    caps = ["red dog chases blue cat", "blue cat", "dog"]
    assert np.array_equal(teacher.encode_images(feats), student.encode_images(feats).value)
    assert np.array_equal(teacher.encode_texts(caps, student.tokenizer), student.encode_texts(caps).value)
    assert all(not p.requires_grad for p in teacher.named_parameters().values())


def test_embed_batch_shapes_and_unit_rows(rng):
    model = small_model()
    teacher = TeacherState.from_student(model, 0.99)
    caps = ["red dog chases blue cat", "blue cat chases red dog"]
    negs = [["dog red chases blue cat", "red cat chases blue dog"], ["blue dog chases red cat", "cat"]]
    batch = embed_batch(model, teacher, rng.normal(size=(2, 6)), caps, negs)
    assert isinstance(batch, EmbeddingBatch)
    assert batch.size == 2 and batch.k == 2 and batch.neg.shape == (2, 2, 4)
    batch.check(1e-12)
    assert np.array_equal(batch.teacher_t, batch.t.value)
    with pytest.raises(ShapeMismatch):
        embed_batch(model, teacher, rng.normal(size=(2, 6)), caps, [["a"], ["b", "c"]])


# -- checkpoints ----------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    model = small_model(seed=9)
    model.temperature.log_value.value = np.array(np.log(0.05))
    teacher = TeacherState.from_student(small_model(seed=10), 0.995)
    save_checkpoint(tmp_path / "ck.json", model, teacher)
    m2, t2 = load_checkpoint(tmp_path / "ck.json")
    feats = rng.normal(size=(5, 6))
    caps = ["red dog chases blue cat", "cat", "blue blue dog"]
    assert np.max(np.abs(m2.encode_images(feats).value - model.encode_images(feats).value)) < 1e-12
    assert np.max(np.abs(m2.encode_texts(caps).value - model.encode_texts(caps).value)) < 1e-12
    assert m2.temperature.value == model.temperature.value
    assert t2.alpha == 0.995
    assert np.array_equal(t2.encode_images(feats), teacher.encode_images(feats))


def test_checkpoint_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    bad.write_text('{"format": "something-else"}')
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.json")
    model = small_model()
    save_checkpoint(tmp_path / "ok.json", model)
    doc = (tmp_path / "ok.json").read_text().replace('"text.w1"', '"text.wx"')
    bad.write_text(doc)
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)


def test_named_parameters_cover_both_towers_and_temperature():
    names = set(small_model().named_parameters())
    assert names == {"image.w1", "image.b1", "image.w2", "image.b2", "text.embedding", "text.w1", "text.b1",
                     "text.w2", "text.b2", "log_tau"}
    assert isinstance(small_model().named_parameters()["log_tau"], Tensor)
