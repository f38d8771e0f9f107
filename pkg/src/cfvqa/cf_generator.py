"""Counterfactual image generator: a UNet whose skip connections pass
through 1x1 kernels generated from a language/answer conditioning vector.

Conditioning: the frozen VQA model's question encoding is concatenated
with the classifier weight row of the target answer and linearly projected
to a vector c. c is sliced into one piece per encoder level; each slice is
mapped by a trainable affine to a 1x1 channel-mixing kernel that filters
that level's skip feature map before the decoder consumes it.

During warm-up c is identically zero, so the kernels reduce to their
affine biases (initialized to identity) and the network trains as a plain
reconstructing autoencoder.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .nn import Conv2d, ConvTranspose2d, Linear, Module
from .nn import functional as F


@dataclass
class GeneratorConfig:
    image_size: int = 64
    enc_channels: tuple = (8, 16, 32)
    d_c: int = 48
    d_q: int = 64
    d_z: int = 128
    dtype: str = "float32"

    def __post_init__(self):
        if self.d_c % len(self.enc_channels) != 0:
            raise ValueError(
                f"d_c={self.d_c} must divide evenly across {len(self.enc_channels)} conditioned levels"
            )

    @property
    def levels(self):
        return len(self.enc_channels)

    @property
    def slice_dim(self):
        return self.d_c // self.levels

    def np_dtype(self):
        return np.dtype(self.dtype)


@dataclass
class ConditioningVector:
    """Projected (question, answer) conditioning; source kept for provenance."""

    c: np.ndarray
    source: tuple = None


class Generator(Module):
    def __init__(self, config: GeneratorConfig, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.config = config
        dt = config.np_dtype()
        chans = config.enc_channels

        self.conditioning_fc = self.add_child(
            Linear(config.d_q + config.d_z, config.d_c, rng, dtype=dt, prefix="gen.cond_fc")
        )

        self.enc = []
        c_in = 3
        for i, c_out in enumerate(chans):
            self.enc.append(
                self.add_child(Conv2d(c_in, c_out, 3, stride=2, pad=1, rng=rng, dtype=dt, prefix=f"gen.enc{i}"))
            )
            c_in = c_out

        # slice -> flattened 1x1 kernel; weights start at zero and biases at
        # the identity kernel, so an untrained conditioning path is a no-op
        # on top of plain UNet behavior
        self.kernel_affines = []
        for j, cj in enumerate(chans):
            aff = Linear(config.slice_dim, cj * cj, rng, dtype=dt, prefix=f"gen.kaff{j}", zero_init=True)
            aff.b.data[...] = np.eye(cj, dtype=dt).reshape(-1)
            self.kernel_affines.append(self.add_child(aff))

        # decoder mirrors the encoder; skips are concatenated, so inner
        # stages see doubled channel counts
        self.dec = []
        dec_specs = [
            (chans[2], chans[1]),
            (chans[1] * 2, chans[0]),
            (chans[0] * 2, chans[0]),
        ]
        for i, (ci, co) in enumerate(dec_specs):
            self.dec.append(
                self.add_child(ConvTranspose2d(ci, co, 4, stride=2, pad=1, rng=rng, dtype=dt, prefix=f"gen.dec{i}"))
            )
        self.head = self.add_child(Conv2d(chans[0], 3, 3, stride=1, pad=1, rng=rng, dtype=dt, prefix="gen.head"))

    # -- conditioning ---------------------------------------------------------

    def build_conditioning(self, vqa, ids, answers, cache=None):
        """Project [question encoding ; answer classifier row] to c.

        The inputs come from the frozen VQA model and carry no gradient;
        only the projection itself is trainable.
        """
        q = np.atleast_2d(vqa.encode_question(ids))
        answers = np.atleast_1d(np.asarray(answers, dtype=np.int64))
        if answers.min() < 0 or answers.max() >= vqa.config.n_answers:
            raise ValueError("answer index out of range")
        rows = vqa.classifier.w.data[answers]
        x = np.concatenate([q, rows], axis=1).astype(self.config.np_dtype(), copy=False)
        if x.shape[1] != self.config.d_q + self.config.d_z:
            raise ValueError(
                f"conditioning input dim {x.shape[1]} != d_q+d_z={self.config.d_q + self.config.d_z}"
            )
        c = self.conditioning_fc.forward(x, cache)
        single = np.ndim(ids) == 1
        return ConditioningVector(c=c[0] if single else c, source=(ids, answers if not single else int(answers[0])))

    def conditioning_backward(self, dc, cache):
        self.conditioning_fc.backward(dc, cache)

    # -- language kernels -------------------------------------------------------

    def language_kernels(self, c, cache=None):
        """c (N, d_c) -> list of per-sample kernels [(N, c_j, c_j)] by
        contiguous slicing and per-level affine maps."""
        c = np.atleast_2d(self._c_array(c))
        sd = self.config.slice_dim
        kernels = []
        for j, (aff, cj) in enumerate(zip(self.kernel_affines, self.config.enc_channels)):
            s = c[:, j * sd : (j + 1) * sd]
            flat = aff.forward(s, cache)
            kernels.append(flat.reshape(-1, cj, cj))
        return kernels

    def _c_array(self, c):
        if isinstance(c, ConditioningVector):
            return c.c
        return np.asarray(c, dtype=self.config.np_dtype())

    # -- generation ----------------------------------------------------------

    def _check_images(self, images):
        images = np.asarray(images, dtype=self.config.np_dtype())
        single = images.ndim == 3
        if single:
            images = images[None]
        s = self.config.image_size
        if images.shape[1:] != (3, s, s):
            raise ValueError(f"expected image shape (3,{s},{s}), got {images.shape[1:]}")
        return images, single

    def generate(self, images, c, cache=None):
        """images (N,3,H,W) in [0,1] + conditioning -> edited images, same shape/range."""
        x, single = self._check_images(images)
        n = x.shape[0]
        carr = np.atleast_2d(self._c_array(c))
        if carr.shape[0] == 1 and n > 1:
            carr = np.broadcast_to(carr, (n, carr.shape[1]))
        if carr.shape != (n, self.config.d_c):
            raise ValueError(f"conditioning shape {carr.shape} incompatible with batch {n}")

        feats = []
        pres = []
        h = x
        for conv in self.enc:
            pre = conv.forward(h, cache)
            h = F.relu(pre)
            pres.append(pre)
            feats.append(h)

        kernels = self.language_kernels(carr, cache)
        filtered = [F.kernel_conv1x1(f, k) for f, k in zip(feats, kernels)]

        d = filtered[2]
        dec_pres = []
        dec_ins = []
        for i, deconv in enumerate(self.dec):
            dec_ins.append(d)
            pre = deconv.forward(d, cache)
            d = F.relu(pre)
            dec_pres.append(pre)
            if i < 2:
                d = np.concatenate([d, filtered[1 - i]], axis=1)
        out_pre = self.head.forward(d, cache)
        out = F.sigmoid(out_pre)

        if cache is not None:
            cache["gen.fwd"] = {
                "feats": feats,
                "pres": pres,
                "kernels": kernels,
                "filtered": filtered,
                "dec_pres": dec_pres,
                "out": out,
                "n": n,
            }
        return out[0] if single else out

    def generate_warmup(self, images, cache=None):
        """Generation with the conditioning vector replaced by zero."""
        x, single = self._check_images(images)
        zeros = np.zeros((x.shape[0], self.config.d_c), dtype=self.config.np_dtype())
        out = self.generate(x, zeros, cache)
        return out[0] if single and out.ndim == 4 else out

    # -- backward ---------------------------------------------------------------

    def backward(self, dout, cache):
        """Backprop d(loss)/d(output) through the whole generator.

        Accumulates gradients on all generator parameters (conditioning FC
        included when its forward is recorded in the cache) and returns
        (d_images, d_c).
        """
        fwd = cache["gen.fwd"]
        feats, pres = fwd["feats"], fwd["pres"]
        kernels, filtered = fwd["kernels"], fwd["filtered"]
        dec_pres = fwd["dec_pres"]

        dfiltered = [None, None, None]
        c0 = self.config.enc_channels[0]
        c1 = self.config.enc_channels[1]
        dr2 = self.head.backward(F.sigmoid_backward(dout, fwd["out"]), cache)
        du1 = self.dec[2].backward(F.relu_backward(dr2, dec_pres[2]), cache)
        dr1, dfiltered[0] = du1[:, :c0], du1[:, c0:]
        du0 = self.dec[1].backward(F.relu_backward(dr1, dec_pres[1]), cache)
        dr0, dfiltered[1] = du0[:, :c1], du0[:, c1:]
        dfiltered[2] = self.dec[0].backward(F.relu_backward(dr0, dec_pres[0]), cache)

        # skips: gradient to features and to the per-sample kernels
        dfeats = [None, None, None]
        sd = self.config.slice_dim
        dc = np.zeros((fwd["n"], self.config.d_c), dtype=dout.dtype)
        for j in range(3):
            df, dk = F.kernel_conv1x1_backward(dfiltered[j], feats[j], kernels[j])
            dfeats[j] = df
            ds = self.kernel_affines[j].backward(dk.reshape(dk.shape[0], -1), cache)
            dc[:, j * sd : (j + 1) * sd] = ds

        # encoder chain, deepest first
        dh = dfeats[2]
        for j in (2, 1, 0):
            dpre = F.relu_backward(dh, pres[j])
            dx = self.enc[j].backward(dpre, cache)
            if j > 0:
                dh = dx + dfeats[j - 1]
            else:
                dimages = dx

        if id(self.conditioning_fc) in cache:
            self.conditioning_backward(dc, cache)
        return dimages, dc

    # -- serialization -----------------------------------------------------------

    def config_dict(self):
        d = asdict(self.config)
        d["enc_channels"] = list(self.config.enc_channels)
        return d

    @classmethod
    def from_config_dict(cls, d, rng=None):
        d = dict(d)
        d["enc_channels"] = tuple(d["enc_channels"])
        return cls(GeneratorConfig(**d), rng=rng)
