"""Realism critic and adversarial losses.

The discriminator scores an image in (0,1). Its targets are soft: real
and fake labels are drawn uniformly from configurable bands rather than
pinned at 1 and 0, consumed from a seeded stream so training runs are
reproducible. The generator side uses the non-saturating objective
(mean of -log D(fake)) with unsoftened labels.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict, field

import numpy as np

from .nn import Conv2d, Module
from .nn import functional as F

_EPS = 1e-12


@dataclass
class DiscriminatorConfig:
    image_size: int = 64
    channels: tuple = (16, 32, 64, 1)
    leak: float = 0.2
    dtype: str = "float32"

    def np_dtype(self):
        return np.dtype(self.dtype)


@dataclass
class SoftLabelConfig:
    real_range: tuple = (0.8, 1.0)
    fake_range: tuple = (0.0, 0.2)
    seed: int = 0

    def __post_init__(self):
        lo_r, hi_r = self.real_range
        lo_f, hi_f = self.fake_range
        if not (0.0 <= lo_f <= hi_f <= 1.0 and 0.0 <= lo_r <= hi_r <= 1.0):
            raise ValueError("label ranges must lie within [0,1]")
        if lo_r <= hi_f:
            raise ValueError("real range must sit strictly above fake range")
        self._rng = np.random.default_rng(self.seed)

    def draw_real(self, n):
        lo, hi = self.real_range
        return self._rng.uniform(lo, hi, size=n)

    def draw_fake(self, n):
        lo, hi = self.fake_range
        return self._rng.uniform(lo, hi, size=n)


class Discriminator(Module):
    def __init__(self, config: DiscriminatorConfig, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.config = config
        dt = config.np_dtype()
        self.convs = []
        c_in = 3
        for i, c_out in enumerate(config.channels):
            conv = Conv2d(c_in, c_out, 3, stride=2, pad=1, rng=rng, dtype=dt, prefix=f"disc.conv{i}")
            self.convs.append(self.add_child(conv))
            c_in = c_out

    def _check_images(self, images):
        images = np.asarray(images, dtype=self.config.np_dtype())
        single = images.ndim == 3
        if single:
            images = images[None]
        s = self.config.image_size
        if images.shape[1:] != (3, s, s):
            raise ValueError(f"expected image shape (3,{s},{s}), got {images.shape[1:]}")
        return images, single

    def discriminate(self, images, cache=None):
        """images -> realism scores in (0,1); scalar for a single image."""
        h, single = self._check_images(images)
        pres = []
        for i, conv in enumerate(self.convs):
            pre = conv.forward(h, cache)
            pres.append(pre)
            h = F.leaky_relu(pre, self.config.leak) if i < len(self.convs) - 1 else pre
        pooled = F.global_avg_pool(h)[:, 0]
        scores = F.sigmoid(pooled)
        if cache is not None:
            cache["disc.fwd"] = {"pres": pres, "scores": scores, "gap_in_shape": h.shape}
        return float(scores[0]) if single else scores

    def backward_from_scores(self, dscores, cache):
        """dscores (N,) -> gradient w.r.t. input images; accumulates param grads."""
        fwd = cache["disc.fwd"]
        dpool = F.sigmoid_backward(dscores, fwd["scores"])
        dh = F.global_avg_pool_backward(dpool[:, None], fwd["gap_in_shape"])
        for i, conv in zip(range(len(self.convs) - 1, -1, -1), reversed(self.convs)):
            pre = fwd["pres"][i]
            if i < len(self.convs) - 1:
                dh = F.leaky_relu_backward(dh, pre, self.config.leak)
            dh = conv.backward(dh, cache)
        return dh

    def config_dict(self):
        d = asdict(self.config)
        d["channels"] = list(self.config.channels)
        return d

    @classmethod
    def from_config_dict(cls, d, rng=None):
        d = dict(d)
        d["channels"] = tuple(d["channels"])
        return cls(DiscriminatorConfig(**d), rng=rng)


# ---------------------------------------------------------------------------
# losses


def _bce(scores, labels):
    s = np.clip(scores, _EPS, 1.0 - _EPS)
    return -(labels * np.log(s) + (1.0 - labels) * np.log(1.0 - s))


def d_loss_with_grads(real_scores, fake_scores, cfg: SoftLabelConfig):
    """Soft-label BCE over both batches; returns (loss, dreal, dfake).

    Labels are drawn from cfg's seeded stream: one real draw per real
    score, one fake draw per fake score, in that order.
    """
    real_scores = np.asarray(real_scores, dtype=np.float64)
    fake_scores = np.asarray(fake_scores, dtype=np.float64)
    real_labels = cfg.draw_real(real_scores.shape[0])
    fake_labels = cfg.draw_fake(fake_scores.shape[0])
    n = real_scores.size + fake_scores.size
    loss = (_bce(real_scores, real_labels).sum() + _bce(fake_scores, fake_labels).sum()) / n

    def bce_grad(s, t):
        s = np.clip(s, _EPS, 1.0 - _EPS)
        return (s - t) / (s * (1.0 - s)) / n

    return float(loss), bce_grad(real_scores, real_labels), bce_grad(fake_scores, fake_labels)


def d_loss(real_scores, fake_scores, cfg: SoftLabelConfig):
    """Mean soft-label BCE for the discriminator (scalar)."""
    loss, _, _ = d_loss_with_grads(real_scores, fake_scores, cfg)
    return loss


def g_adv_loss(fake_scores):
    """Non-saturating generator objective: mean of -log(score)."""
    s = np.clip(np.asarray(fake_scores, dtype=np.float64), _EPS, None)
    return float(np.mean(-np.log(s)))


def g_adv_loss_grad(fake_scores):
    s = np.clip(np.asarray(fake_scores, dtype=np.float64), _EPS, None)
    return -1.0 / (s * s.size)
