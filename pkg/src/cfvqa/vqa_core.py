"""The answer predictor: conv image encoder, GRU question encoder, low-rank
bilinear fusion, and a linear answer classifier.

The model is trained once on the synthetic dataset, then frozen; every
later stage treats it as a fixed differentiable function. Gradients can
still flow *through* it to an input image, which is how the counterfactual
generator learns, but its parameters are never updated after freezing.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .nn import GRU, Conv2d, Embedding, GroupNorm, Linear, Module
from .nn import functional as F
from .nn.optim import Adam, clip_global_norm
from .scenes import MAX_QUESTION_LEN, images_to_float


class TrainingError(RuntimeError):
    """Raised when a training run diverges (non-finite loss)."""


class FrozenModelError(RuntimeError):
    """Raised on attempts to train a frozen model."""


@dataclass
class VQAConfig:
    image_size: int = 64
    conv_channels: tuple = (16, 32, 64, 64)
    embed_dim: int = 32
    d_q: int = 64
    d_v: int = 64
    d_z: int = 128
    vocab_size: int = 25
    n_answers: int = 16
    dtype: str = "float32"

    def np_dtype(self):
        return np.dtype(self.dtype)


@dataclass
class VQATrainConfig:
    epochs: int = 55
    batch_size: int = 32
    lr: float = 3e-3
    betas: tuple = (0.9, 0.999)
    clip_norm: float = 5.0
    seed: int = 0
    augment: bool = True  # quadrant permutations + flips
    weight_decay: float = 1e-4
    lr_decay_at: tuple = (0.85, 0.95)  # epoch fractions; lr *= 0.3 at each
    augment_colors: bool = True  # palette-permutation symmetry


class VQAModel(Module):
    def __init__(self, config: VQAConfig, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.config = config
        dt = config.np_dtype()
        assert config.conv_channels[-1] == config.d_v, "last conv stage must emit d_v channels"

        self.convs = []
        self.norms = []
        c_in = 3
        for i, c_out in enumerate(config.conv_channels):
            conv = Conv2d(c_in, c_out, 3, stride=2, pad=1, rng=rng, dtype=dt, prefix=f"vqa.conv{i}")
            self.convs.append(self.add_child(conv))
            groups = 8 if c_out % 8 == 0 else (4 if c_out % 4 == 0 else 1)
            self.norms.append(self.add_child(GroupNorm(c_out, groups, dtype=dt, prefix=f"vqa.gn{i}")))
            c_in = c_out

        # embedding variance near 1 keeps the question pathway strong enough
        # at init that the multiplicative fusion passes visual gradients
        self.embedding = self.add_child(
            Embedding(config.vocab_size, config.embed_dim, rng, dtype=dt, prefix="vqa.emb")
        )
        self.embedding.w.data *= 10.0
        self.gru = self.add_child(GRU(config.embed_dim, config.d_q, rng, dtype=dt, prefix="vqa.gru"))

        self.proj_q = self.add_child(Linear(config.d_q, config.d_z, rng, dtype=dt, prefix="vqa.wq"))
        self.proj_v = self.add_child(Linear(config.d_v, config.d_z, rng, dtype=dt, prefix="vqa.wv"))
        # nonzero question-side bias opens the fusion gate at init
        self.proj_q.b.data[...] = rng.uniform(-0.6, 0.6, config.d_z).astype(dt)
        self.classifier = self.add_child(Linear(config.d_z, config.n_answers, rng, dtype=dt, prefix="vqa.wo"))

        self.frozen = False

    # -- question path ------------------------------------------------------

    def _check_ids(self, ids):
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        if ids.shape[1] != MAX_QUESTION_LEN:
            raise ValueError(f"expected length-{MAX_QUESTION_LEN} id sequences, got {ids.shape}")
        if ids.min() < 0 or ids.max() >= self.config.vocab_size:
            raise ValueError("token id outside vocabulary range")
        return ids

    def encode_question(self, ids, cache=None):
        """Token ids -> final GRU hidden state; pad positions never update it."""
        ids2 = self._check_ids(ids)
        emb = self.embedding.forward(ids2, cache)
        mask = (ids2 != 0).astype(emb.dtype)
        q = self.gru.forward(emb, mask, cache)
        if np.ndim(ids) == 1:
            return q[0]
        return q

    # -- image path ----------------------------------------------------------

    def _check_images(self, images):
        images = np.asarray(images)
        single = images.ndim == 3
        if single:
            images = images[None]
        s = self.config.image_size
        if images.shape[1:] != (3, s, s):
            raise ValueError(f"expected image shape (3,{s},{s}), got {images.shape[1:]}")
        return images.astype(self.config.np_dtype(), copy=False), single

    def encode_image(self, images, cache=None):
        h, _ = self._check_images(images)
        h = (h - 0.5) * 2.0  # zero-centered pixels
        acts = []
        for conv, norm in zip(self.convs, self.norms):
            pre = conv.forward(h, cache)
            if norm is not None:
                pre = norm.forward(pre, cache)
            h = F.relu(pre)
            acts.append(pre)
        if cache is not None:
            cache["vqa.conv_pre"] = acts
            cache["vqa.gap_in_shape"] = h.shape
        return F.global_avg_pool(h)

    # -- fusion ---------------------------------------------------------------

    def mlb_fuse(self, q, v, cache=None):
        """logits = W_o (tanh(W_q q + b_q) * tanh(W_v v + b_v)) + b_o."""
        q = np.atleast_2d(q)
        v = np.atleast_2d(v)
        if q.shape[1] != self.config.d_q or v.shape[1] != self.config.d_v:
            raise ValueError(f"fusion dims mismatch: q {q.shape}, v {v.shape}")
        tq = np.tanh(self.proj_q.forward(q, cache))
        tv = np.tanh(self.proj_v.forward(v, cache))
        z = tq * tv
        logits = self.classifier.forward(z, cache)
        if cache is not None:
            cache["vqa.fuse"] = (tq, tv)
        return logits

    def forward(self, images, ids, cache=None):
        v = self.encode_image(images, cache)
        q = self.encode_question(ids, cache)
        return self.mlb_fuse(np.atleast_2d(q), v, cache)

    def predict(self, image, ids):
        """Single (image, question) -> (answer index, probability vector)."""
        logits = self.forward(image[None] if image.ndim == 3 else image, ids)
        p = F.softmax(logits, axis=1)
        if p.shape[0] == 1:
            return int(np.argmax(p[0])), p[0]
        return np.argmax(p, axis=1), p

    def predict_batch(self, images, ids):
        logits = self.forward(images, ids)
        p = F.softmax(logits, axis=1)
        return np.argmax(p, axis=1), p

    def answer_logit_row(self, answer):
        """Copy of classifier weight row for one answer index."""
        if not (0 <= answer < self.config.n_answers):
            raise ValueError(f"answer index {answer} out of range")
        return self.classifier.w.data[int(answer)].copy()

    # -- backward -------------------------------------------------------------

    def backward_from_logits(self, dlogits, cache):
        """Backprop dlogits to the input image; returns d(images).

        Parameter gradients accumulate as a side effect; callers training the
        generator discard them (the model is frozen and has no optimizer).
        """
        tq, tv = cache["vqa.fuse"]
        dz = self.classifier.backward(dlogits, cache)
        dtq = dz * tv
        dtv = dz * tq
        dq = self.proj_q.backward(F.tanh_backward(dtq, tq), cache)
        dv = self.proj_v.backward(F.tanh_backward(dtv, tv), cache)

        # question path ends in the embedding; no image gradient there
        demb = self.gru.backward(dq, cache)
        self.embedding.backward(demb, cache)

        dh = F.global_avg_pool_backward(dv, cache["vqa.gap_in_shape"])
        for conv, norm, pre in zip(reversed(self.convs), reversed(self.norms),
                                   reversed(cache["vqa.conv_pre"])):
            dh = F.relu_backward(dh, pre)
            if norm is not None:
                dh = norm.backward(dh, cache)
            dh = conv.backward(dh, cache)
        return dh * 2.0  # input centering scale

    def freeze(self):
        self.frozen = True
        return self

    # -- serialization ---------------------------------------------------------

    def config_dict(self):
        d = asdict(self.config)
        d["conv_channels"] = list(self.config.conv_channels)
        return d

    @classmethod
    def from_config_dict(cls, d, rng=None):
        d = dict(d)
        d["conv_channels"] = tuple(d["conv_channels"])
        return cls(VQAConfig(**d), rng=rng)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainReport:
    final_train_acc: float
    final_val_acc: float
    epochs: list = field(default_factory=list)  # (epoch, mean_loss, val_acc)


def accuracy(model: VQAModel, images_u8, token_ids, answers, batch_size=256):
    correct = 0
    for i in range(0, len(answers), batch_size):
        imgs = images_to_float(images_u8[i : i + batch_size], model.config.np_dtype())
        pred, _ = model.predict_batch(imgs, token_ids[i : i + batch_size])
        correct += int(np.sum(pred == answers[i : i + batch_size]))
    return correct / max(len(answers), 1)


class _ColorPermuter:
    """Palette-permutation augmentation.

    Permuting the six palette colors in the pixels, the question's color
    words, and the color answers simultaneously is an exact symmetry of the
    dataset generator, so each training sample stands in for 720 views.
    """

    def __init__(self, vocab_q, vocab_a):
        from .scenes import COLORS

        self.names = sorted(COLORS)
        self.triples = np.array([COLORS[c] for c in self.names], dtype=np.float32) / 255.0
        self.q_ids = np.array([vocab_q.index(c) for c in self.names])
        self.a_ids = np.array([vocab_a.index(c) for c in self.names])
        self.n_vocab = len(vocab_q)
        self.n_answers = len(vocab_a)

    def apply(self, imgs, ids, answers, rng):
        ids = ids.copy()
        answers = answers.copy()
        for i in range(imgs.shape[0]):
            perm = rng.permutation(6)
            if np.array_equal(perm, np.arange(6)):
                continue
            masks = [
                np.all(imgs[i] == self.triples[c][:, None, None], axis=0) for c in range(6)
            ]
            for c in range(6):
                imgs[i][:, masks[c]] = self.triples[perm[c]][:, None]
            id_map = np.arange(self.n_vocab)
            id_map[self.q_ids] = self.q_ids[perm]
            ids[i] = id_map[ids[i]]
            ans_map = np.arange(self.n_answers)
            ans_map[self.a_ids] = self.a_ids[perm]
            answers[i] = ans_map[answers[i]]
        return imgs, ids, answers


def _augment(imgs, image_size, rng):
    """Semantics-preserving views: global horizontal flips, random
    permutation of the four quadrant blocks, and per-quadrant horizontal
    flips. Objects sit strictly inside quadrants (see scenes.anchor_layout)
    and all shapes are left-right symmetric, so none of these views changes
    any answer."""
    flip = rng.random(imgs.shape[0]) < 0.5
    imgs[flip] = imgs[flip][:, :, :, ::-1]
    h = image_size // 2
    corners = [(0, 0), (0, h), (h, 0), (h, h)]
    for i in range(imgs.shape[0]):
        perm = rng.permutation(4)
        qflips = rng.random(4) < 0.5
        if np.array_equal(perm, np.arange(4)) and not qflips.any():
            continue
        blocks = [imgs[i][:, y : y + h, x : x + h].copy() for (y, x) in corners]
        for slot, ((y, x), src) in enumerate(zip(corners, perm)):
            block = blocks[src]
            if qflips[slot]:
                block = block[:, :, ::-1]
            imgs[i][:, y : y + h, x : x + h] = block
    return imgs


def train_vqa(train_data, val_data, model_config: VQAConfig, cfg: VQATrainConfig):
    """Cross-entropy training; returns the model frozen plus a report."""
    rng = np.random.default_rng(cfg.seed)
    model = VQAModel(model_config, rng)
    if model.frozen:
        raise FrozenModelError("cannot train a frozen model")
    opt = Adam(model.parameters(), lr=cfg.lr, betas=cfg.betas)
    n = len(train_data.answers)
    dt = model.config.np_dtype()
    permuter = None
    if cfg.augment_colors and train_data.vocab_q and train_data.vocab_a:
        permuter = _ColorPermuter(train_data.vocab_q, train_data.vocab_a)
    report = TrainReport(0.0, 0.0)
    step = 0
    for epoch in range(cfg.epochs):
        decay_steps = sum(1 for f in cfg.lr_decay_at if epoch >= int(f * cfg.epochs))
        opt.lr = cfg.lr * (0.3 ** decay_steps)
        epoch_rng = np.random.default_rng([cfg.seed, epoch])
        order = epoch_rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            imgs = images_to_float(train_data.images[idx], dt)
            ids = train_data.token_ids[idx]
            ans = train_data.answers[idx]
            if permuter is not None:
                imgs, ids, ans = permuter.apply(imgs, ids, ans, epoch_rng)
            if cfg.augment:
                imgs = _augment(imgs, model_config.image_size, epoch_rng)
            cache = {}
            logits = model.forward(imgs, ids, cache)
            loss, p = F.softmax_cross_entropy(logits, ans)
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged (NaN) at step {step}")
            model.zero_grad()
            model.backward_from_logits(F.softmax_cross_entropy_backward(p, ans), cache)
            if cfg.weight_decay:
                for param in model.parameters():
                    param.grad += cfg.weight_decay * param.data
            clip_global_norm(list(model.parameters()), cfg.clip_norm)
            opt.step()
            losses.append(float(loss))
            step += 1
        # subset monitoring keeps epochs cheap; final accuracies use full splits
        val_acc = accuracy(model, val_data.images[:300], val_data.token_ids[:300], val_data.answers[:300])
        report.epochs.append((epoch, float(np.mean(losses)), val_acc))
        print(f"vqa epoch {epoch}: loss {np.mean(losses):.4f}, val[:300] acc {val_acc:.3f}", flush=True)
    report.final_train_acc = accuracy(model, train_data.images, train_data.token_ids, train_data.answers)
    report.final_val_acc = accuracy(model, val_data.images, val_data.token_ids, val_data.answers)
    model.freeze()
    return model, report
