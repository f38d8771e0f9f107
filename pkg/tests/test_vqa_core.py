"""Fusion oracle equivalence, gradient checks, prediction contracts."""

import math

import numpy as np
import pytest

from cfvqa.nn import functional as F
from cfvqa.nn.gradcheck import check_param_grads, numerical_grad, rel_error
from cfvqa.scenes import MAX_QUESTION_LEN
from cfvqa.vqa_core import VQAConfig, VQAModel, VQATrainConfig, train_vqa

TINY = VQAConfig(image_size=8, conv_channels=(4, 4), embed_dim=3, d_q=5, d_v=4,
                 d_z=6, vocab_size=10, n_answers=4, dtype="float64")


def tiny_model(seed=0):
    return VQAModel(TINY, np.random.default_rng(seed))


def mlb_oracle(q, v, wq, bq, wv, bv, wo, bo):
    """Scalar triple-loop reference for the fused logits."""
    d_z, n_a = wq.shape[0], wo.shape[0]
    logits = []
    for a in range(n_a):
        acc = bo[a]
        for i in range(d_z):
            tq = math.tanh(sum(wq[i][j] * q[j] for j in range(len(q))) + bq[i])
            tv = math.tanh(sum(wv[i][j] * v[j] for j in range(len(v))) + bv[i])
            acc += wo[a][i] * tq * tv
        logits.append(acc)
    return np.array(logits)


def test_mlb_identity_example():
    cfg = VQAConfig(image_size=8, conv_channels=(4, 2), embed_dim=3, d_q=2, d_v=2,
                    d_z=2, vocab_size=10, n_answers=2, dtype="float64")
    m = VQAModel(cfg, np.random.default_rng(0))
    m.proj_q.w.data[...] = np.eye(2)
    m.proj_v.w.data[...] = np.eye(2)
    m.classifier.w.data[...] = np.eye(2)
    for p in (m.proj_q.b, m.proj_v.b, m.classifier.b):
        p.data[...] = 0.0
    logits = m.mlb_fuse(np.array([0.5, 0.0]), np.array([1.0, 1.0]))[0]
    expected = np.array([math.tanh(0.5) * math.tanh(1.0), 0.0])
    assert np.allclose(logits, expected, atol=1e-12)
    assert abs(expected[0] - 0.35196) < 1e-4


def test_mlb_zero_inputs_give_bias():
    m = tiny_model()
    for p in (m.proj_q.b, m.proj_v.b):
        p.data[...] = 0.0
    m.classifier.b.data[...] = np.arange(4, dtype=np.float64)
    logits = m.mlb_fuse(np.zeros(5), np.zeros(4))[0]
    assert np.allclose(logits, np.arange(4))


def test_mlb_matches_loop_oracle_50_instances():
    rng = np.random.default_rng(123)
    worst = 0.0
    for trial in range(50):
        m = tiny_model(seed=trial)
        q = rng.standard_normal(5)
        v = rng.standard_normal(4)
        got = m.mlb_fuse(q, v)[0]
        want = mlb_oracle(
            q, v,
            m.proj_q.w.data, m.proj_q.b.data,
            m.proj_v.w.data, m.proj_v.b.data,
            m.classifier.w.data, m.classifier.b.data,
        )
        worst = max(worst, float(np.max(np.abs(got - want))))
    assert worst <= 1e-6


def test_mlb_softmax_ce_gradients():
    m = tiny_model(3)
    rng = np.random.default_rng(9)
    q = rng.standard_normal((2, 5))
    v = rng.standard_normal((2, 4))
    targets = np.array([1, 3])

    def loss():
        return F.softmax_cross_entropy(m.mlb_fuse(q, v), targets)[0]

    cache = {}
    logits = m.mlb_fuse(q, v, cache)
    _, p = F.softmax_cross_entropy(logits, targets)
    m.zero_grad()
    tq, tv = cache["vqa.fuse"]
    dz = m.classifier.backward(F.softmax_cross_entropy_backward(p, targets), cache)
    m.proj_q.backward(F.tanh_backward(dz * tv, tq), cache)
    m.proj_v.backward(F.tanh_backward(dz * tq, tv), cache)
    params = list(m.proj_q.parameters()) + list(m.proj_v.parameters()) + list(m.classifier.parameters())
    errs = check_param_grads(loss, params)
    assert max(errs.values()) <= 1e-4, errs


def test_full_model_image_gradient():
    # gradient w.r.t. the input image is what the generator trains against
    m = tiny_model(5)
    rng = np.random.default_rng(11)
    img = rng.random((1, 3, 8, 8))
    ids = np.array([[2, 3, 4, 0, 0, 0, 0, 0]])
    target = np.array([2])

    def loss():
        return F.softmax_cross_entropy(m.forward(img, ids), target)[0]

    cache = {}
    logits = m.forward(img, ids, cache)
    _, p = F.softmax_cross_entropy(logits, target)
    m.zero_grad()
    dimg = m.backward_from_logits(F.softmax_cross_entropy_backward(p, target), cache)
    assert rel_error(dimg, numerical_grad(loss, img)) <= 1e-4
    errs = check_param_grads(loss, list(m.parameters()))
    assert max(errs.values()) <= 1e-4, errs


def test_encode_question_contracts():
    m = tiny_model()
    pad = np.zeros(MAX_QUESTION_LEN, dtype=np.int64)
    assert np.allclose(m.encode_question(pad), 0.0)  # initial hidden state
    ids = np.array([2, 5, 1, 0, 0, 0, 0, 0])
    assert np.array_equal(m.encode_question(ids), m.encode_question(ids))
    with pytest.raises(ValueError):
        m.encode_question(np.full(MAX_QUESTION_LEN, 99))
    with pytest.raises(ValueError):
        m.encode_question(np.zeros(3, dtype=np.int64))


def test_predict_tie_break_and_normalization():
    m = tiny_model()
    # force uniform logits: zero fusion output and biases
    m.classifier.w.data[...] = 0.0
    m.classifier.b.data[...] = 0.0
    img = np.random.default_rng(0).random((3, 8, 8))
    ids = np.array([2, 3, 0, 0, 0, 0, 0, 0])
    a_hat, p = m.predict(img, ids)
    assert a_hat == 0  # exact tie resolves to lowest index
    assert abs(p.sum() - 1.0) < 1e-6 and (p >= 0).all()


def test_softmax_argmax_properties_random_and_ties():
    rng = np.random.default_rng(0)
    for _ in range(200):
        z = rng.standard_normal(7) * rng.uniform(0.1, 50)
        if rng.random() < 0.3:            # inject exact ties
            z[rng.integers(7)] = z[rng.integers(7)]
        p = F.softmax(z)
        assert abs(p.sum() - 1.0) < 1e-6 and (p >= 0).all()
        best = np.argmax(p)
        assert p[best] == p.max()
        assert not np.any(p[:best] == p[best])  # lowest-index tie-break


def test_answer_logit_row():
    m = tiny_model()
    m.classifier.w.data[...] = np.eye(4, 6)
    row = m.answer_logit_row(2)
    assert np.allclose(row, np.eye(4, 6)[2])
    row[0] = 99.0  # caller mutation must not reach the model
    assert m.classifier.w.data[2, 0] != 99.0
    assert not np.allclose(m.answer_logit_row(1), m.answer_logit_row(2))
    with pytest.raises(ValueError):
        m.answer_logit_row(4)
    with pytest.raises(ValueError):
        m.answer_logit_row(-1)


class _MiniData:
    def __init__(self, images, token_ids, answers):
        self.images = images
        self.token_ids = token_ids
        self.answers = answers


def test_train_vqa_one_sample_capacity_and_freeze():
    rng = np.random.default_rng(0)
    img = (rng.random((1, 3, 8, 8)) * 255).astype(np.uint8)
    ids = np.array([[2, 3, 4, 0, 0, 0, 0, 0]])
    ans = np.array([1])
    data = _MiniData(img, ids, ans)
    cfg = VQAConfig(image_size=8, conv_channels=(4, 4), embed_dim=4, d_q=6, d_v=4,
                    d_z=8, vocab_size=10, n_answers=4, dtype="float64")
    model, report = train_vqa(data, data, cfg, VQATrainConfig(epochs=60, batch_size=1, lr=3e-3, seed=1,
                                                              augment=False, augment_colors=False))
    assert report.final_train_acc == 1.0
    assert model.frozen
    before = model.checksum()
    for _ in range(3):
        model.predict(img[0] / 255.0, ids[0])
    assert model.checksum() == before
