"""Two-phase generator training and checkpoint plumbing.

Phase 1 (warm-up) trains the generator as a plain autoencoder under the
edit loss with zero conditioning. Phase 2 (joint) alternates one
discriminator step and one generator step per batch; the generator
minimizes

    lambda_ans * mean(log p_A(I'))      (push the answer away from A)
  + lambda_l2  * mean((I - I')^2)       (keep the edit small)
  + lambda_adv * mean(-log D(I'))       (keep the edit realistic)

against the frozen VQA model. The VQA parameter checksum is asserted
unchanged across the whole joint phase.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .adversary import Discriminator, SoftLabelConfig, d_loss_with_grads, g_adv_loss, g_adv_loss_grad
from .cf_generator import Generator
from .nn import functional as F
from .nn.optim import Adam, clip_global_norm
from .scenes import images_to_float
from .vqa_core import TrainingError, VQAModel

CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    """Version or hash mismatch while loading a checkpoint."""


class InternalError(RuntimeError):
    """Invariant violation (e.g. frozen model changed under training)."""


@dataclass
class TrainConfig:
    lambda_ans: float = 1.0
    lambda_l2: float = 10.0
    lambda_adv: float = 0.5
    # flip pressure releases once p_A < eps_clamp; 0.03 flips answers
    # decisively (16-way argmax) while keeping edits small
    eps_clamp: float = 0.03
    lr: float = 2e-4
    betas: tuple = (0.9, 0.999)
    clip_norm: float = 5.0
    warmup_epochs: int = 6  # short warm-ups leave reconstruction MSE above 0.01
    joint_epochs: int = 6
    batch_size: int = 32
    seed: int = 0
    real_label_range: tuple = (0.8, 1.0)
    fake_label_range: tuple = (0.0, 0.2)

    def __post_init__(self):
        if min(self.lambda_ans, self.lambda_l2, self.lambda_adv) < 0:
            raise ValueError("loss weights must be nonnegative")
        if not (0.0 < self.eps_clamp < 1.0):
            raise ValueError("eps_clamp must lie in (0,1)")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")


@dataclass
class LossBreakdown:
    step: int
    epoch: int
    l_ans: float
    l_edit: float
    l_adv: float
    total: float
    d_loss: float
    grad_norm: float = 0.0


# ---------------------------------------------------------------------------
# loss functions


def answer_flip_loss(p, answers, eps_clamp=1e-4):
    """Mean log-probability of the original answer (the negated CE).

    Minimizing drives p_A toward zero; the clamp keeps the objective and
    its gradient bounded once p_A is far below eps_clamp.
    """
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    if p.min() < 0 or np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-5:
        raise ValueError("p is not a valid probability vector")
    answers = np.atleast_1d(np.asarray(answers, dtype=np.int64))
    pa = p[np.arange(p.shape[0]), answers]
    return float(np.mean(np.log(np.maximum(pa, eps_clamp))))


def edit_loss(original, generated):
    """Mean squared pixel difference; normalization keeps the value
    resolution-independent."""
    original = np.asarray(original)
    generated = np.asarray(generated)
    if original.shape != generated.shape:
        raise ValueError(f"shape mismatch: {original.shape} vs {generated.shape}")
    diff = original.astype(np.float64) - generated.astype(np.float64)
    return float(np.mean(diff * diff))


def edit_loss_grad(original, generated):
    """d(edit_loss)/d(generated)."""
    diff = generated.astype(np.float64) - original.astype(np.float64)
    return (2.0 / diff.size) * diff


def edit_rms(original, generated):
    """Root-mean-square per-pixel edit magnitude."""
    return float(np.sqrt(edit_loss(original, generated)))


# ---------------------------------------------------------------------------
# warm-up phase


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def heldout_mse(gen: Generator, images_u8, limit=512, batch=256):
    """Reconstruction MSE of the zero-conditioning path over held-out images."""
    total, count = 0.0, 0
    n = len(images_u8) if limit is None else min(limit, len(images_u8))
    for start in range(0, n, batch):
        imgs = images_to_float(images_u8[start : start + batch], gen.config.np_dtype())
        out = gen.generate_warmup(imgs)
        total += edit_loss(imgs, out) * imgs.shape[0]
        count += imgs.shape[0]
    return total / max(count, 1)


def train_warmup(gen: Generator, train_data, cfg: TrainConfig, val_data=None):
    """Reconstruction-only phase; answer and adversarial weights are unused.

    Returns (gen, history) where history records the initial held-out MSE
    and one held-out MSE per epoch.
    """
    opt = Adam(gen.parameters(), lr=cfg.lr, betas=cfg.betas)
    dt = gen.config.np_dtype()
    n = len(train_data.answers)
    val_images = val_data.images if val_data is not None else train_data.images
    history = {"init_mse": heldout_mse(gen, val_images), "epoch_mse": [],
               "step_mse": [], "grad_norms": []}
    step = 0
    for epoch in range(cfg.warmup_epochs):
        rng = np.random.default_rng([cfg.seed, 0, epoch])
        for idx in _batches(n, cfg.batch_size, rng):
            imgs = images_to_float(train_data.images[idx], dt)
            cache = {}
            out = gen.generate_warmup(imgs, cache)
            loss = edit_loss(imgs, out)
            if not np.isfinite(loss):
                raise TrainingError(f"warm-up loss diverged (NaN) at step {step}")
            gen.zero_grad()
            gen.backward(edit_loss_grad(imgs, out).astype(dt), cache)
            norm = clip_global_norm(list(gen.parameters()), cfg.clip_norm)
            history["step_mse"].append(loss)
            history["grad_norms"].append(norm)
            opt.step()
            step += 1
        history["epoch_mse"].append(heldout_mse(gen, val_images))
    return gen, history


# ---------------------------------------------------------------------------
# joint phase


def _g_step(gen, disc, vqa, imgs, ids, answers, cfg, step, epoch, d_loss_value):
    dt = gen.config.np_dtype()
    gen_cache = {}
    cond = gen.build_conditioning(vqa, ids, answers, gen_cache)
    out = gen.generate(imgs, cond, gen_cache)

    # answer-flip term through the frozen VQA model
    vqa_cache = {}
    logits = vqa.forward(out, ids, vqa_cache)
    p = F.softmax(logits, axis=1)
    l_ans = answer_flip_loss(p, answers, cfg.eps_clamp)
    vqa.zero_grad()
    d_ans = vqa.backward_from_logits(
        F.grad_log_p_target(p, answers, cfg.eps_clamp).astype(dt), vqa_cache
    )

    # minimal-edit term
    l_edit = edit_loss(imgs, out)
    d_edit = edit_loss_grad(imgs, out)

    # realism term against the just-updated discriminator
    disc_cache = {}
    scores = disc.discriminate(out, disc_cache)
    l_adv = g_adv_loss(scores)
    disc.zero_grad()
    d_adv = disc.backward_from_scores(g_adv_loss_grad(scores).astype(dt), disc_cache)

    total = cfg.lambda_ans * l_ans + cfg.lambda_l2 * l_edit + cfg.lambda_adv * l_adv
    parts = {"l_ans": l_ans, "l_edit": l_edit, "l_adv": l_adv}
    for name, value in parts.items():
        if not np.isfinite(value):
            raise TrainingError(f"non-finite {name} at step {step} (epoch {epoch})")

    d_total = (cfg.lambda_ans * d_ans + cfg.lambda_l2 * d_edit + cfg.lambda_adv * d_adv).astype(dt)
    gen.zero_grad()
    gen.backward(d_total, gen_cache)
    norm = clip_global_norm(list(gen.parameters()), cfg.clip_norm)
    return LossBreakdown(step, epoch, l_ans, l_edit, l_adv, total, d_loss_value, norm)


def train_joint(gen: Generator, disc: Discriminator, vqa: VQAModel, train_data,
                cfg: TrainConfig, out_dir=None, vocab_hash="", vqa_hash=""):
    """Alternating D/G training with all three losses; returns loss history.

    With lambda_ans == lambda_adv == 0 the generator objective degenerates
    to the warm-up objective, so the phase runs with zero conditioning and
    reproduces a warm-up run bit for bit given the same seed and order.
    """
    if not vqa.frozen:
        raise InternalError("joint training requires a frozen VQA model")
    vqa_checksum = vqa.checksum()
    soft = SoftLabelConfig(cfg.real_label_range, cfg.fake_label_range, seed=cfg.seed)
    opt_g = Adam(gen.parameters(), lr=cfg.lr, betas=cfg.betas)
    opt_d = Adam(disc.parameters(), lr=cfg.lr, betas=cfg.betas)
    dt = gen.config.np_dtype()
    n = len(train_data.answers)
    degenerate = cfg.lambda_ans == 0.0 and cfg.lambda_adv == 0.0
    history = []
    step = 0
    for epoch in range(cfg.joint_epochs):
        rng = np.random.default_rng([cfg.seed, 0, epoch] if degenerate else [cfg.seed, 1, epoch])
        for idx in _batches(n, cfg.batch_size, rng):
            imgs = images_to_float(train_data.images[idx], dt)
            ids = train_data.token_ids[idx]
            answers = train_data.answers[idx]

            if degenerate:
                cache = {}
                out = gen.generate_warmup(imgs, cache)
                l_edit = edit_loss(imgs, out)
                if not np.isfinite(l_edit):
                    raise TrainingError(f"non-finite l_edit at step {step} (epoch {epoch})")
                gen.zero_grad()
                gen.backward(edit_loss_grad(imgs, out).astype(dt), cache)
                norm = clip_global_norm(list(gen.parameters()), cfg.clip_norm)
                opt_g.step()
                history.append(LossBreakdown(step, epoch, 0.0, l_edit, 0.0,
                                             cfg.lambda_l2 * l_edit, 0.0, norm))
                step += 1
                continue

            # generate once; reused for the D step (G unchanged by it)
            gen_cache = {}
            cond = gen.build_conditioning(vqa, ids, answers, gen_cache)
            fake = gen.generate(imgs, cond, gen_cache)

            # -- discriminator step
            cache_r, cache_f = {}, {}
            s_real = disc.discriminate(imgs, cache_r)
            s_fake = disc.discriminate(fake, cache_f)
            loss_d, d_real, d_fake = d_loss_with_grads(s_real, s_fake, soft)
            if not np.isfinite(loss_d):
                raise TrainingError(f"non-finite d_loss at step {step} (epoch {epoch})")
            disc.zero_grad()
            disc.backward_from_scores(d_real.astype(dt), cache_r)
            disc.backward_from_scores(d_fake.astype(dt), cache_f)
            clip_global_norm(list(disc.parameters()), cfg.clip_norm)
            opt_d.step()

            # -- generator step (fresh forward through the updated critic)
            breakdown = _g_step(gen, disc, vqa, imgs, ids, answers, cfg, step, epoch, loss_d)
            opt_g.step()
            history.append(breakdown)
            step += 1

        if vqa.checksum() != vqa_checksum:
            raise InternalError(f"frozen VQA parameters changed during epoch {epoch}")
        if out_dir is not None:
            save_joint(Path(out_dir) / f"joint_epoch{epoch}.npz", gen, disc,
                       vocab_hash=vocab_hash, vqa_hash=vqa_hash,
                       extra={"epoch": epoch, "config": asdict(cfg) | {"betas": list(cfg.betas),
                              "real_label_range": list(cfg.real_label_range),
                              "fake_label_range": list(cfg.fake_label_range)}})

    if vqa.checksum() != vqa_checksum:
        raise InternalError("frozen VQA parameters changed during joint training")
    return gen, disc, history


def write_history_csv(path, history):
    lines = ["step,epoch,l_ans,l_edit,l_adv,total,d_loss"]
    for h in history:
        lines.append(
            f"{h.step},{h.epoch},{h.l_ans:.8f},{h.l_edit:.8f},{h.l_adv:.8f},{h.total:.8f},{h.d_loss:.8f}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# checkpoints (.npz with a JSON metadata entry; byte-deterministic)


def save_checkpoint(path, kind, config, arrays, meta=None):
    meta_doc = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "kind": kind,
        "config": config,
        "meta": meta or {},
    }
    payload = {"__meta__": np.frombuffer(json.dumps(meta_doc, sort_keys=True).encode(), dtype=np.uint8)}
    for key in sorted(arrays):
        payload[f"arr/{key}"] = arrays[key]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path, expect_kind=None):
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no checkpoint at {path}")
    with np.load(path) as z:
        meta_doc = json.loads(bytes(z["__meta__"]).decode())
        arrays = {k[4:]: z[k] for k in z.files if k.startswith("arr/")}
    if meta_doc.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version mismatch: file {meta_doc.get('checkpoint_version')} "
            f"!= supported {CHECKPOINT_VERSION}"
        )
    if expect_kind is not None and meta_doc["kind"] != expect_kind:
        raise CheckpointError(f"checkpoint kind {meta_doc['kind']!r}, expected {expect_kind!r}")
    return meta_doc["kind"], meta_doc["config"], arrays, meta_doc["meta"]


def _require(meta, key, expected, what):
    if expected is not None and meta.get(key) != expected:
        raise CheckpointError(f"{what} mismatch: checkpoint has {meta.get(key)!r}, expected {expected!r}")


def save_vqa(path, model: VQAModel, vocab_hash):
    save_checkpoint(path, "vqa", model.config_dict(), model.state_arrays(),
                    meta={"vocab_hash": vocab_hash, "param_checksum": model.checksum()})


def load_vqa(path, expect_vocab_hash=None):
    _, config, arrays, meta = load_checkpoint(path, expect_kind="vqa")
    _require(meta, "vocab_hash", expect_vocab_hash, "manifest vocab hash")
    model = VQAModel.from_config_dict(config)
    model.load_state_arrays(arrays)
    if meta.get("param_checksum") != model.checksum():
        raise CheckpointError("parameter checksum mismatch after load")
    model.freeze()
    return model, meta


def save_generator(path, gen: Generator, vocab_hash, vqa_hash, extra=None):
    save_checkpoint(path, "generator", gen.config_dict(), gen.state_arrays(),
                    meta={"vocab_hash": vocab_hash, "vqa_hash": vqa_hash} | (extra or {}))


def load_generator(path, expect_vocab_hash=None, expect_vqa_hash=None):
    _, config, arrays, meta = load_checkpoint(path, expect_kind="generator")
    _require(meta, "vocab_hash", expect_vocab_hash, "manifest vocab hash")
    _require(meta, "vqa_hash", expect_vqa_hash, "VQA checkpoint hash")
    gen = Generator.from_config_dict(config)
    gen.load_state_arrays(arrays)
    return gen, meta


def save_joint(path, gen: Generator, disc: Discriminator, vocab_hash, vqa_hash, extra=None):
    arrays = {f"gen/{k}": v for k, v in gen.state_arrays().items()}
    arrays |= {f"disc/{k}": v for k, v in disc.state_arrays().items()}
    config = {"generator": gen.config_dict(), "discriminator": disc.config_dict()}
    save_checkpoint(path, "joint", config, arrays,
                    meta={"vocab_hash": vocab_hash, "vqa_hash": vqa_hash} | (extra or {}))


def load_joint(path, expect_vocab_hash=None, expect_vqa_hash=None):
    _, config, arrays, meta = load_checkpoint(path, expect_kind="joint")
    _require(meta, "vocab_hash", expect_vocab_hash, "manifest vocab hash")
    _require(meta, "vqa_hash", expect_vqa_hash, "VQA checkpoint hash")
    gen = Generator.from_config_dict(config["generator"])
    gen.load_state_arrays({k[4:]: v for k, v in arrays.items() if k.startswith("gen/")})
    disc = Discriminator.from_config_dict(config["discriminator"])
    disc.load_state_arrays({k[5:]: v for k, v in arrays.items() if k.startswith("disc/")})
    return gen, disc, meta
