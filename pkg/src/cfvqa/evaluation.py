"""Evaluation of the three result criteria: change of semantics (accuracy
drop and flip rate), sensitivity to language conditioning (edit-map
divergence across questions on one image), and realism (discriminator
score gap), plus report/grid export.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .scenes import DatasetError, images_to_float, image_to_uint8
from .training import edit_rms

HEATMAP_GAIN = 5.0


@dataclass
class QtypeCell:
    n: int
    acc_orig: float
    acc_cf: float
    flip_rate: float
    mean_edit_rms: float


@dataclass
class SensitivitySummary:
    mean: float
    color_pairs_mean: float
    noncolor_pairs_mean: float
    n_pairs: int
    n_color_pairs: int


@dataclass
class EvalReport:
    split_size: int
    overall: QtypeCell
    per_qtype: dict            # qtype -> QtypeCell
    sensitivity: SensitivitySummary | None = None
    disc_real_mean: float | None = None
    disc_fake_mean: float | None = None

    def to_dict(self):
        d = {
            "split_size": self.split_size,
            "overall": asdict(self.overall),
            "per_qtype": {k: asdict(v) for k, v in sorted(self.per_qtype.items())},
            "sensitivity": asdict(self.sensitivity) if self.sensitivity else None,
            "disc_real_mean": self.disc_real_mean,
            "disc_fake_mean": self.disc_fake_mean,
        }
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            split_size=d["split_size"],
            overall=QtypeCell(**d["overall"]),
            per_qtype={k: QtypeCell(**v) for k, v in d["per_qtype"].items()},
            sensitivity=SensitivitySummary(**d["sensitivity"]) if d.get("sensitivity") else None,
            disc_real_mean=d.get("disc_real_mean"),
            disc_fake_mean=d.get("disc_fake_mean"),
        )


# ---------------------------------------------------------------------------
# core evaluation


def _predictions(vqa, gen, data, batch=128):
    """Original and counterfactual predictions plus per-sample edit RMS."""
    dt = vqa.config.np_dtype()
    n = len(data.answers)
    pred_orig = np.zeros(n, dtype=np.int64)
    pred_cf = np.zeros(n, dtype=np.int64)
    rms = np.zeros(n)
    for start in range(0, n, batch):
        sl = slice(start, min(start + batch, n))
        imgs = images_to_float(data.images[sl], dt)
        ids = data.token_ids[sl]
        pred_orig[sl], _ = vqa.predict_batch(imgs, ids)
        cond = gen.build_conditioning(vqa, ids, data.answers[sl])
        cf = gen.generate(imgs.astype(gen.config.np_dtype()), cond)
        pred_cf[sl], _ = vqa.predict_batch(cf.astype(dt), ids)
        diff = cf.astype(np.float64) - imgs.astype(np.float64)
        rms[sl] = np.sqrt((diff * diff).mean(axis=(1, 2, 3)))
    return pred_orig, pred_cf, rms


def _cell(mask, pred_orig, pred_cf, answers, rms):
    n = int(mask.sum())
    return QtypeCell(
        n=n,
        acc_orig=float(np.mean(pred_orig[mask] == answers[mask])),
        acc_cf=float(np.mean(pred_cf[mask] == answers[mask])),
        flip_rate=float(np.mean(pred_cf[mask] != pred_orig[mask])),
        mean_edit_rms=float(np.mean(rms[mask])),
    )


def evaluate(vqa, gen, data, disc=None, with_sensitivity=True):
    """Deterministic full-split evaluation; same inputs give equal reports."""
    if len(data.answers) == 0:
        raise DatasetError("cannot evaluate an empty split")
    pred_orig, pred_cf, rms = _predictions(vqa, gen, data)
    answers = data.answers
    qtypes = np.array(data.qtypes)

    overall = _cell(np.ones(len(answers), dtype=bool), pred_orig, pred_cf, answers, rms)
    per_qtype = {}
    for qt in sorted(set(data.qtypes)):
        mask = qtypes == qt
        if not mask.any():
            warnings.warn(f"qtype {qt!r} has no samples; omitted from report")
            continue
        per_qtype[qt] = _cell(mask, pred_orig, pred_cf, answers, rms)

    sensitivity = None
    if with_sensitivity:
        try:
            _, table = language_sensitivity(vqa, gen, data)
            sensitivity = _summarize_pairs(table)
        except DatasetError:
            warnings.warn("no multi-question images in split; sensitivity omitted")

    disc_real = disc_fake = None
    if disc is not None:
        disc_real, disc_fake = _disc_means(vqa, gen, disc, data)

    return EvalReport(
        split_size=len(answers),
        overall=overall,
        per_qtype=per_qtype,
        sensitivity=sensitivity,
        disc_real_mean=disc_real,
        disc_fake_mean=disc_fake,
    )


def _disc_means(vqa, gen, disc, data, batch=128):
    dt = gen.config.np_dtype()
    n = len(data.answers)
    real_scores, fake_scores = [], []
    for start in range(0, n, batch):
        sl = slice(start, min(start + batch, n))
        imgs = images_to_float(data.images[sl], dt)
        cond = gen.build_conditioning(vqa, data.token_ids[sl], data.answers[sl])
        cf = gen.generate(imgs, cond)
        real_scores.append(disc.discriminate(imgs))
        fake_scores.append(disc.discriminate(cf))
    return float(np.mean(np.concatenate(real_scores))), float(np.mean(np.concatenate(fake_scores)))


# ---------------------------------------------------------------------------
# language sensitivity


def language_sensitivity(vqa, gen, data):
    """RMS divergence between edit maps of different questions on one image.

    Returns (mean score, per-pair table); raises DatasetError when the split
    has no image with at least two distinct questions.
    """
    by_image = {}
    for i, path in enumerate(data.image_ids):
        by_image.setdefault(path, []).append(i)
    pairs = []
    for path, idxs in sorted(by_image.items()):
        for a in range(len(idxs)):
            for b in range(a + 1, len(idxs)):
                i, j = idxs[a], idxs[b]
                if data.questions[i] != data.questions[j]:
                    pairs.append((path, i, j))
    if not pairs:
        raise DatasetError(
            "split has no image with two distinct questions; regenerate the "
            "dataset with question pairing enabled (questions_per_val_image >= 2)"
        )

    dt = gen.config.np_dtype()
    table = []
    for path, i, j in pairs:
        img = images_to_float(data.images[i][None], dt)
        idx = np.array([i, j])
        cond = gen.build_conditioning(vqa, data.token_ids[idx], data.answers[idx])
        cf = gen.generate(np.repeat(img, 2, axis=0), cond)
        edit_i = cf[0].astype(np.float64) - img[0]
        edit_j = cf[1].astype(np.float64) - img[0]
        diff = edit_i - edit_j
        score = float(np.sqrt((diff * diff).mean()))
        table.append(
            {
                "image": path,
                "q1": data.questions[i],
                "q2": data.questions[j],
                "qtype1": data.qtypes[i],
                "qtype2": data.qtypes[j],
                "rms_diff": score,
            }
        )
    mean = float(np.mean([row["rms_diff"] for row in table]))
    return mean, table


def _summarize_pairs(table):
    color = [r["rms_diff"] for r in table if r["qtype1"] == "color" and r["qtype2"] == "color"]
    noncolor = [r["rms_diff"] for r in table if not (r["qtype1"] == "color" and r["qtype2"] == "color")]
    return SensitivitySummary(
        mean=float(np.mean([r["rms_diff"] for r in table])),
        color_pairs_mean=float(np.mean(color)) if color else 0.0,
        noncolor_pairs_mean=float(np.mean(noncolor)) if noncolor else 0.0,
        n_pairs=len(table),
        n_color_pairs=len(color),
    )


# ---------------------------------------------------------------------------
# grids and export


def heatmap(original, generated, gain=HEATMAP_GAIN):
    """Amplified absolute edit map, single channel in [0,1]."""
    diff = np.abs(np.asarray(generated, dtype=np.float64) - np.asarray(original, dtype=np.float64))
    return np.clip(gain * diff.mean(axis=0), 0.0, 1.0)


@dataclass
class GridCase:
    question: str
    qtype: str
    answer: str
    pred_orig: str
    pred_cf: str
    orig_u8: np.ndarray
    cf_u8: np.ndarray
    heat_u8: np.ndarray


def make_grid_cases(vqa, gen, data, vocab_a, k_per_qtype=4):
    """First K samples of each qtype rendered as grid cases (deterministic)."""
    cases = []
    dt = vqa.config.np_dtype()
    for qt in sorted(set(data.qtypes)):
        picked = [i for i, q in enumerate(data.qtypes) if q == qt][:k_per_qtype]
        for i in picked:
            img = images_to_float(data.images[i][None], dt)
            ids = data.token_ids[i][None]
            po, _ = vqa.predict_batch(img, ids)
            cond = gen.build_conditioning(vqa, ids, data.answers[i : i + 1])
            cf = gen.generate(img.astype(gen.config.np_dtype()), cond)
            pc, _ = vqa.predict_batch(cf.astype(dt), ids)
            cases.append(
                GridCase(
                    question=data.questions[i],
                    qtype=qt,
                    answer=vocab_a[data.answers[i]],
                    pred_orig=vocab_a[int(po[0])],
                    pred_cf=vocab_a[int(pc[0])],
                    orig_u8=data.images[i],
                    cf_u8=image_to_uint8(cf[0]),
                    heat_u8=np.round(heatmap(img[0], cf[0]) * 255.0).astype(np.uint8),
                )
            )
    return cases


def _panel(arr_u8, scale=3):
    if arr_u8.ndim == 2:
        arr_u8 = np.stack([arr_u8] * 3)
    img = Image.fromarray(arr_u8.transpose(1, 2, 0), mode="RGB")
    return img.resize((img.width * scale, img.height * scale), Image.NEAREST)


def render_grid_png(case: GridCase, path):
    """One row: original | counterfactual | amplified heatmap, captioned."""
    panels = [_panel(case.orig_u8), _panel(case.cf_u8), _panel(case.heat_u8)]
    w, h = panels[0].size
    pad, caption_h = 6, 42
    canvas = Image.new("RGB", (3 * w + 4 * pad, h + caption_h + 2 * pad), (24, 24, 24))
    for i, p in enumerate(panels):
        canvas.paste(p, (pad + i * (w + pad), pad))
    draw = ImageDraw.Draw(canvas)
    font = ImageFont.load_default()
    lines = [
        f"{case.question} [{case.qtype}]  gt={case.answer}",
        f"f(I,Q)={case.pred_orig}   f(I',Q)={case.pred_cf}   "
        f"{'FLIPPED' if case.pred_cf != case.pred_orig else 'unchanged'}",
    ]
    for j, line in enumerate(lines):
        draw.text((pad, h + pad + 2 + j * 16), line, fill=(230, 230, 230), font=font)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    canvas.save(path, format="PNG")


def export_report(report: EvalReport, out_dir, cases=None):
    """Write report.json, report.md, and per-case PNG grids."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
    )

    lines = ["# Evaluation report", ""]
    lines.append(f"Split size: {report.split_size}")
    lines.append("")
    lines.append("| qtype | n | acc orig | acc cf | drop | flip rate | edit RMS |")
    lines.append("|---|---|---|---|---|---|---|")
    rows = [("all", report.overall)] + sorted(report.per_qtype.items())
    for name, c in rows:
        lines.append(
            f"| {name} | {c.n} | {c.acc_orig:.4f} | {c.acc_cf:.4f} | "
            f"{c.acc_orig - c.acc_cf:+.4f} | {c.flip_rate:.4f} | {c.mean_edit_rms:.4f} |"
        )
    if report.sensitivity:
        s = report.sensitivity
        lines += [
            "",
            f"Language sensitivity: mean RMS divergence {s.mean:.5f} over {s.n_pairs} pairs "
            f"(color-color {s.color_pairs_mean:.5f} over {s.n_color_pairs}, "
            f"other {s.noncolor_pairs_mean:.5f})",
        ]
    if report.disc_real_mean is not None:
        lines += [
            "",
            f"Discriminator means: real {report.disc_real_mean:.4f}, "
            f"generated {report.disc_fake_mean:.4f}",
        ]
    lines.append("")
    (out_dir / "report.md").write_text("\n".join(lines))

    if cases:
        counters = {}
        for case in cases:
            k = counters.get(case.qtype, 0)
            counters[case.qtype] = k + 1
            render_grid_png(case, out_dir / "grids" / f"{case.qtype}_{k}.png")
    return out_dir
