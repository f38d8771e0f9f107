"""Synthetic colored-shapes VQA dataset: scene sampling, rasterization,
templated questions with analytic answers, manifest IO, and tokenization.

Scenes hold 1-4 non-overlapping hard-edged shapes on a solid background.
Answers are always recomputed from the scene geometry, never annotated,
so ground truth is exact by construction.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

SHAPES = ("circle", "square", "triangle")

# uint8-exact triples so PNG round-trips reproduce them bit-for-bit
COLORS = {
    "red": (255, 0, 0),
    "green": (0, 255, 0),
    "blue": (0, 0, 255),
    "yellow": (255, 255, 0),
    "white": (255, 255, 255),
    "gray": (128, 128, 128),
}

QTYPES = ("color", "count", "exist", "shape")

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1
MAX_QUESTION_LEN = 8

PLURALS = {"circle": "circles", "square": "squares", "triangle": "triangles"}
SINGULARS = {v: k for k, v in PLURALS.items()}

MANIFEST_VERSION = 1


class DatasetError(Exception):
    """Raised when generation constraints cannot be satisfied or files are invalid."""


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class SceneObject:
    shape: str
    color: str
    cx: int
    cy: int
    radius: int


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple[SceneObject, ...]
    background: str
    seed: int

    def signature(self):
        objs = tuple(sorted((o.shape, o.color, o.cx, o.cy, o.radius) for o in self.objects))
        return (self.background, objs)


@dataclass(frozen=True)
class Sample:
    id: str
    image_path: str
    question: str
    answer: str
    qtype: str
    split: str
    scene: SceneSpec


@dataclass
class GenConfig:
    n_train: int = 5000
    n_val: int = 1000
    image_size: int = 64
    qtype_mix: dict = field(default_factory=lambda: {"color": 0.4, "shape": 0.2, "count": 0.2, "exist": 0.2})
    questions_per_train_image: int = 1
    questions_per_val_image: int = 2
    max_objects: int = 4
    max_scene_retries: int = 200


@dataclass
class DatasetManifest:
    version: int
    image_size: tuple  # (H, W, C)
    vocab_q: list
    vocab_a: list
    seed: int
    samples: dict  # split -> list[Sample]

    def vocab_hash(self):
        import hashlib

        payload = json.dumps([self.vocab_q, self.vocab_a, list(self.image_size)]).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


# ---------------------------------------------------------------------------
# vocabularies


def question_vocab():
    """All template words, pad/unk first; list is sorted so index==token id is stable."""
    words = {"what", "color", "is", "the", "shape", "object", "how", "many", "are", "there", "a"}
    words.update(SHAPES)
    words.update(PLURALS.values())
    words.update(COLORS)
    return [PAD_TOKEN, UNK_TOKEN] + sorted(words)


def answer_vocab():
    answers = set(COLORS) | set(SHAPES) | {str(i) for i in range(5)} | {"yes", "no"}
    return sorted(answers)


def tokenize(text, vocab_q):
    """Fixed-length token ids: lowercase, strip punctuation, split on whitespace.

    Pads with PAD_ID to MAX_QUESTION_LEN, truncates beyond it; words outside
    the vocabulary map to UNK_ID.
    """
    if not text:
        raise ValueError("tokenize: empty text")
    table = {w: i for i, w in enumerate(vocab_q)}
    cleaned = text.lower().translate(str.maketrans("", "", string.punctuation))
    ids = [table.get(w, UNK_ID) for w in cleaned.split()][:MAX_QUESTION_LEN]
    ids += [PAD_ID] * (MAX_QUESTION_LEN - len(ids))
    return ids


# ---------------------------------------------------------------------------
# rendering


def _object_mask(obj: SceneObject, size):
    yy, xx = np.ogrid[:size, :size]
    dx = xx - obj.cx
    dy = yy - obj.cy
    r = obj.radius
    if obj.shape == "circle":
        return dx * dx + dy * dy <= r * r
    if obj.shape == "square":
        return (np.abs(dx) <= r) & (np.abs(dy) <= r)
    if obj.shape == "triangle":
        # upward triangle with vertices (cx, cy-r), (cx-r, cy+r), (cx+r, cy+r)
        inside = (dy >= -r) & (dy <= r)
        half_width = (dy + r) / 2.0
        return inside & (np.abs(dx) <= half_width)
    raise ValueError(f"unknown shape {obj.shape!r}")


def render_scene(spec: SceneSpec, size=64):
    """Rasterize to a float array (3, size, size) in [0,1], hard edges, no AA."""
    img = np.empty((3, size, size), dtype=np.float32)
    bg = COLORS[spec.background]
    for c in range(3):
        img[c] = bg[c] / 255.0
    for obj in spec.objects:
        mask = _object_mask(obj, size)
        rgb = COLORS[obj.color]
        for c in range(3):
            img[c][mask] = rgb[c] / 255.0
    return img


def image_to_uint8(img):
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(img, path):
    """img (3,H,W) float in [0,1] -> 8-bit RGB PNG."""
    arr = image_to_uint8(img).transpose(1, 2, 0)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_png(path):
    """PNG -> uint8 array (3,H,W)."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return arr.transpose(2, 0, 1)


# ---------------------------------------------------------------------------
# analytic answers


def compute_answer(scene: SceneSpec, question: str):
    """Recompute the ground-truth answer for a templated question."""
    words = question.lower().rstrip("?").split()
    if words[:4] == ["what", "color", "is", "the"]:
        shape = words[4]
        matches = [o for o in scene.objects if o.shape == shape]
        if len(matches) != 1:
            raise DatasetError(f"color question referent {shape!r} not unique in scene")
        return matches[0].color
    if words[:3] == ["what", "shape", "is"]:
        color = words[4]
        matches = [o for o in scene.objects if o.color == color]
        if len(matches) != 1:
            raise DatasetError(f"shape question referent {color!r} not unique in scene")
        return matches[0].shape
    if words[:2] == ["how", "many"]:
        shape = SINGULARS[words[2]]
        return str(sum(1 for o in scene.objects if o.shape == shape))
    if words[:3] == ["is", "there", "a"]:
        color, shape = words[3], words[4]
        return "yes" if any(o.shape == shape and o.color == color for o in scene.objects) else "no"
    raise DatasetError(f"unrecognized question template: {question!r}")


# ---------------------------------------------------------------------------
# scene + question sampling


def anchor_layout(size):
    """2x2 anchor grid, jitter, and radius band for a given canvas size.

    Objects sit near fixed anchors with a narrow radius band. Both choices
    are deliberate anti-memorization measures: free placement and wide
    radius ranges give every training scene a unique pooled-statistics
    fingerprint that small models memorize instead of learning per-object
    features. Anchored, size-standardized scenes force generalization and
    lose nothing, since no question type refers to position or size.
    """
    scale = size / 64.0
    lo, hi = int(round(18 * scale)), int(round(46 * scale))
    anchors = [(lo, lo), (lo, hi), (hi, lo), (hi, hi)]
    jitter = max(1, int(round(1 * scale)))
    r_hi = max(2, int(round(8 * scale)))
    r_lo = min(max(2, int(round(7 * scale))), r_hi)
    # objects stay strictly inside their image quadrant (anchor +- jitter
    # +- radius < size/2), which makes quadrant-block shuffling an exact,
    # answer-preserving augmentation
    assert lo + jitter + r_hi < size // 2 and hi - jitter - r_hi >= size // 2
    return anchors, jitter, r_lo, r_hi


def anchor_pitch(size):
    """Distance between adjacent anchors; rolling an image by this pitch
    maps the anchor grid onto itself (used for training augmentation)."""
    anchors, _, _, _ = anchor_layout(size)
    return anchors[1][1] - anchors[0][1]


def _place_objects(rng, n_objects, size):
    """Place objects on distinct jittered anchors; None when infeasible."""
    anchors, jitter, r_lo, r_hi = anchor_layout(size)
    if n_objects > len(anchors):
        return None
    slots = rng.permutation(len(anchors))[:n_objects]
    objects = []
    for s in slots:
        ax, ay = anchors[s]
        radius = int(rng.integers(r_lo, r_hi + 1))
        cx = ax + int(rng.integers(-jitter, jitter + 1))
        cy = ay + int(rng.integers(-jitter, jitter + 1))
        # anchor spacing guarantees sqrt(2)*(r1+r2) pixel-space separation
        # (stronger than the documented center-distance > r1+r2 invariant)
        ok = all(
            (cx - o.cx) ** 2 + (cy - o.cy) ** 2 > 2.0 * (radius + o.radius) ** 2
            for o in objects
        )
        if not ok or cx - radius < 0 or cx + radius > size - 1 or cy - radius < 0 or cy + radius > size - 1:
            return None
        objects.append(SceneObject("?", "?", cx, cy, radius))
    return objects


def _sample_scene(rng, config: GenConfig, scene_seed):
    background = str(rng.choice(sorted(COLORS)))
    palette = [c for c in sorted(COLORS) if c != background]
    n_objects = int(rng.integers(1, config.max_objects + 1))
    placed = _place_objects(rng, n_objects, config.image_size)
    if placed is None:
        return None
    objects = tuple(
        SceneObject(str(rng.choice(SHAPES)), str(rng.choice(palette)), o.cx, o.cy, o.radius)
        for o in placed
    )
    return SceneSpec(objects=objects, background=background, seed=scene_seed)


def _unique_shapes(scene):
    counts = {}
    for o in scene.objects:
        counts[o.shape] = counts.get(o.shape, 0) + 1
    return [s for s, n in counts.items() if n == 1]


def _unique_colors(scene):
    counts = {}
    for o in scene.objects:
        counts[o.color] = counts.get(o.color, 0) + 1
    return [c for c, n in counts.items() if n == 1]


def _make_question(rng, scene, qtype, used_questions):
    """Build one question of the given type, distinct from used_questions; None when impossible."""
    if qtype == "color":
        options = [s for s in sorted(_unique_shapes(scene)) if f"what color is the {s}" not in used_questions]
        if not options:
            return None
        shape = str(rng.choice(options))
        return f"what color is the {shape}"
    if qtype == "shape":
        options = [c for c in sorted(_unique_colors(scene)) if f"what shape is the {c} object" not in used_questions]
        if not options:
            return None
        color = str(rng.choice(options))
        return f"what shape is the {color} object"
    if qtype == "count":
        options = [s for s in SHAPES if f"how many {PLURALS[s]} are there" not in used_questions]
        if not options:
            return None
        shape = str(rng.choice(options))
        return f"how many {PLURALS[shape]} are there"
    if qtype == "exist":
        present = sorted({(o.color, o.shape) for o in scene.objects})
        scene_colors = {o.color for o in scene.objects}
        scene_shapes = {o.shape for o in scene.objects}
        absent = sorted(
            (c, s)
            for c in COLORS
            for s in SHAPES
            if (c, s) not in set(present)
        )
        # "no" cases prefer confusable combos (color and shape each present
        # somewhere, just not together), which supervise per-object binding
        hard_absent = [(c, s) for (c, s) in absent if c in scene_colors and s in scene_shapes]
        if rng.random() < 0.5 and present:
            pool = present
        else:
            pool = hard_absent if (hard_absent and rng.random() < 0.7) else absent
        pool = [(c, s) for (c, s) in pool if f"is there a {c} {s}" not in used_questions]
        if not pool:
            return None
        color, shape = pool[int(rng.integers(len(pool)))]
        return f"is there a {color} {shape}"
    raise ValueError(f"unknown qtype {qtype!r}")


def _stratified_qtypes(mix, n):
    """Exact per-qtype counts by largest remainder; ordered by qtype name.

    Sorted output groups same-type questions into the same scene when
    questions_per_image > 1, which is what the sensitivity metric needs.
    """
    names = sorted(mix)
    total = sum(mix[k] for k in names)
    if total <= 0:
        raise DatasetError("qtype_mix must have positive total weight")
    raw = {k: n * mix[k] / total for k in names}
    counts = {k: int(raw[k]) for k in names}
    remainder = n - sum(counts.values())
    by_frac = sorted(names, key=lambda k: (raw[k] - counts[k], k), reverse=True)
    for k in by_frac[:remainder]:
        counts[k] += 1
    out = []
    for k in names:
        out.extend([k] * counts[k])
    return out


# ---------------------------------------------------------------------------
# generation


def generate_dataset(config: GenConfig, seed, out_dir):
    """Render the full dataset to out_dir and return its manifest.

    Deterministic for a given (config, seed): per-scene RNG streams are
    derived from (seed, split index, scene index) only.
    """
    if config.n_train < 1 or config.n_val < 1:
        raise DatasetError("split sizes must be >= 1")
    out_dir = Path(out_dir)
    vocab_q = question_vocab()
    vocab_a = answer_vocab()
    seen_signatures = set()
    samples = {}

    for split_idx, (split, n, qpi) in enumerate(
        [
            ("train", config.n_train, config.questions_per_train_image),
            ("val", config.n_val, config.questions_per_val_image),
        ]
    ):
        qtypes = _stratified_qtypes(config.qtype_mix, n)
        groups = [qtypes[i : i + qpi] for i in range(0, len(qtypes), qpi)]
        split_samples = []
        for g_idx, group in enumerate(groups):
            rng = np.random.default_rng([seed & 0xFFFFFFFF, split_idx, g_idx])
            scene_questions = None
            for _retry in range(config.max_scene_retries):
                scene = _sample_scene(rng, config, scene_seed=g_idx)
                if scene is None or scene.signature() in seen_signatures:
                    continue
                used = set()
                questions = []
                for qt in group:
                    q = _make_question(rng, scene, qt, used)
                    if q is None:
                        break
                    used.add(q)
                    questions.append((qt, q))
                if len(questions) == len(group):
                    scene_questions = (scene, questions)
                    break
            if scene_questions is None:
                raise DatasetError(
                    f"could not satisfy scene constraints for qtypes {group} "
                    f"after {config.max_scene_retries} retries (split={split}, scene={g_idx})"
                )
            scene, questions = scene_questions
            seen_signatures.add(scene.signature())
            image_rel = f"images/{split}/{g_idx:05d}.png"
            save_png(render_scene(scene, config.image_size), out_dir / image_rel)
            for k, (qt, q) in enumerate(questions):
                split_samples.append(
                    Sample(
                        id=f"{split}_{g_idx:05d}_{k}",
                        image_path=image_rel,
                        question=q,
                        answer=compute_answer(scene, q),
                        qtype=qt,
                        split=split,
                        scene=scene,
                    )
                )
        samples[split] = split_samples

    manifest = DatasetManifest(
        version=MANIFEST_VERSION,
        image_size=(config.image_size, config.image_size, 3),
        vocab_q=vocab_q,
        vocab_a=vocab_a,
        seed=seed,
        samples=samples,
    )
    write_manifest(manifest, out_dir)
    return manifest


# ---------------------------------------------------------------------------
# manifest IO (canonical JSON so write -> read -> write is byte-identical)


def _dump_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _scene_to_dict(scene: SceneSpec):
    return {
        "background": scene.background,
        "seed": scene.seed,
        "objects": [
            {"shape": o.shape, "color": o.color, "cx": o.cx, "cy": o.cy, "radius": o.radius}
            for o in scene.objects
        ],
    }


def _scene_from_dict(d):
    return SceneSpec(
        objects=tuple(
            SceneObject(o["shape"], o["color"], o["cx"], o["cy"], o["radius"]) for o in d["objects"]
        ),
        background=d["background"],
        seed=d["seed"],
    )


def _sample_to_dict(s: Sample):
    return {
        "id": s.id,
        "image_path": s.image_path,
        "question": s.question,
        "answer": s.answer,
        "qtype": s.qtype,
        "split": s.split,
        "scene": _scene_to_dict(s.scene),
    }


def write_manifest(manifest: DatasetManifest, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = {
        "version": manifest.version,
        "image_size": list(manifest.image_size),
        "vocab_q": manifest.vocab_q,
        "vocab_a": manifest.vocab_a,
        "seed": manifest.seed,
        "splits": {k: len(v) for k, v in manifest.samples.items()},
    }
    (out_dir / "manifest.json").write_text(_dump_json(header) + "\n")
    for split, split_samples in manifest.samples.items():
        lines = [_dump_json(_sample_to_dict(s)) for s in split_samples]
        (out_dir / f"{split}.jsonl").write_text("\n".join(lines) + ("\n" if lines else ""))


def load_manifest(root):
    root = Path(root)
    header_path = root / "manifest.json"
    if not header_path.exists():
        raise DatasetError(f"no manifest.json under {root}")
    header = json.loads(header_path.read_text())
    if header.get("version") != MANIFEST_VERSION:
        raise DatasetError(f"unsupported manifest version {header.get('version')!r}")
    samples = {}
    for split in header["splits"]:
        entries = []
        for line in (root / f"{split}.jsonl").read_text().splitlines():
            d = json.loads(line)
            entries.append(
                Sample(
                    id=d["id"],
                    image_path=d["image_path"],
                    question=d["question"],
                    answer=d["answer"],
                    qtype=d["qtype"],
                    split=d["split"],
                    scene=_scene_from_dict(d["scene"]),
                )
            )
        samples[split] = entries
    return DatasetManifest(
        version=header["version"],
        image_size=tuple(header["image_size"]),
        vocab_q=header["vocab_q"],
        vocab_a=header["vocab_a"],
        seed=header["seed"],
        samples=samples,
    )


# ---------------------------------------------------------------------------
# tensor views for training


@dataclass
class SplitTensors:
    images: np.ndarray      # (N, 3, H, W) uint8
    token_ids: np.ndarray   # (N, L) int64
    answers: np.ndarray     # (N,) int64
    qtypes: list
    questions: list
    sample_ids: list
    image_ids: list         # image_path per sample; equal paths share a scene
    vocab_q: list = None
    vocab_a: list = None

    def __len__(self):
        return len(self.sample_ids)


def load_split_tensors(manifest: DatasetManifest, split, root):
    """Materialize a split as arrays; images cached per path so paired
    questions on one scene load it once."""
    root = Path(root)
    if split not in manifest.samples:
        raise DatasetError(f"unknown split {split!r}")
    entries = manifest.samples[split]
    a_index = {a: i for i, a in enumerate(manifest.vocab_a)}
    h, w, _ = manifest.image_size
    images = np.zeros((len(entries), 3, h, w), dtype=np.uint8)
    token_ids = np.zeros((len(entries), MAX_QUESTION_LEN), dtype=np.int64)
    answers = np.zeros(len(entries), dtype=np.int64)
    cache = {}
    for i, s in enumerate(entries):
        if s.image_path not in cache:
            cache[s.image_path] = load_png(root / s.image_path)
        images[i] = cache[s.image_path]
        token_ids[i] = tokenize(s.question, manifest.vocab_q)
        answers[i] = a_index[s.answer]
    return SplitTensors(
        images=images,
        token_ids=token_ids,
        answers=answers,
        qtypes=[s.qtype for s in entries],
        questions=[s.question for s in entries],
        sample_ids=[s.id for s in entries],
        image_ids=[s.image_path for s in entries],
        vocab_q=manifest.vocab_q,
        vocab_a=manifest.vocab_a,
    )


def images_to_float(images_u8, dtype=np.float32):
    return images_u8.astype(dtype) / np.asarray(255.0, dtype=dtype)
