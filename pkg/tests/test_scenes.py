"""Dataset generator contracts: determinism, analytic answers, manifest IO."""

import filecmp
import json
from pathlib import Path

import numpy as np
import pytest

from cfvqa import scenes
from cfvqa.scenes import (
    COLORS,
    GenConfig,
    SceneObject,
    SceneSpec,
    compute_answer,
    generate_dataset,
    load_manifest,
    render_scene,
    tokenize,
    question_vocab,
    answer_vocab,
    write_manifest,
)

SMALL = GenConfig(n_train=30, n_val=10)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    manifest = generate_dataset(SMALL, seed=42, out_dir=root)
    return root, manifest


def tree_bytes(root):
    out = {}
    for p in sorted(Path(root).rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = p.read_bytes()
    return out


def test_generation_deterministic(tmp_path, dataset):
    root, _ = dataset
    again = tmp_path / "again"
    generate_dataset(SMALL, seed=42, out_dir=again)
    a, b = tree_bytes(root), tree_bytes(again)
    assert a.keys() == b.keys()
    assert all(a[k] == b[k] for k in a)


def test_different_seed_changes_data(tmp_path, dataset):
    root, _ = dataset
    other = tmp_path / "other"
    generate_dataset(SMALL, seed=43, out_dir=other)
    assert tree_bytes(root) != tree_bytes(other)


def test_stratified_counts_exact(dataset):
    # chosen sizes make every n*frac integral, so counts must match exactly
    _, manifest = dataset
    mix = SMALL.qtype_mix
    for split, n in (("train", 30), ("val", 10)):
        entries = manifest.samples[split]
        assert len(entries) == n
        for qt, frac in mix.items():
            got = sum(1 for s in entries if s.qtype == qt)
            assert got == int(n * frac)


def test_stratified_inexact_fractions_sum_and_bound():
    qtypes = scenes._stratified_qtypes({"color": 0.4, "shape": 0.2, "count": 0.2, "exist": 0.2}, 12)
    assert len(qtypes) == 12
    counts = {k: qtypes.count(k) for k in set(qtypes)}
    for k, c in counts.items():
        assert abs(c - 12 * {"color": 0.4}.get(k, 0.2)) < 1.0


def test_single_qtype_mix(tmp_path):
    cfg = GenConfig(n_train=16, n_val=4, qtype_mix={"color": 1.0})
    manifest = generate_dataset(cfg, seed=1, out_dir=tmp_path / "c")
    assert all(s.qtype == "color" for s in manifest.samples["train"])
    assert all(s.qtype == "color" for s in manifest.samples["val"])


def test_answers_recomputable(dataset):
    _, manifest = dataset
    for split in ("train", "val"):
        for s in manifest.samples[split]:
            assert compute_answer(s.scene, s.question) == s.answer


def test_scene_invariants(dataset):
    _, manifest = dataset
    for split in ("train", "val"):
        for s in manifest.samples[split]:
            objs = s.scene.objects
            assert 1 <= len(objs) <= 4
            for o in objs:
                assert o.cx - o.radius >= 0 and o.cx + o.radius <= 63
                assert o.cy - o.radius >= 0 and o.cy + o.radius <= 63
                assert o.color != s.scene.background
            for i in range(len(objs)):
                for j in range(i + 1, len(objs)):
                    a, b = objs[i], objs[j]
                    dist = np.hypot(a.cx - b.cx, a.cy - b.cy)
                    assert dist > a.radius + b.radius
            if s.qtype == "color":
                shape = s.question.split()[-1]
                assert sum(1 for o in objs if o.shape == shape) == 1


def test_splits_disjoint(dataset):
    _, manifest = dataset
    train_sigs = {s.scene.signature() for s in manifest.samples["train"]}
    val_sigs = {s.scene.signature() for s in manifest.samples["val"]}
    assert not (train_sigs & val_sigs)


def test_val_has_paired_questions(dataset):
    _, manifest = dataset
    by_image = {}
    for s in manifest.samples["val"]:
        by_image.setdefault(s.image_path, set()).add(s.question)
    assert any(len(qs) >= 2 for qs in by_image.values())


def test_manifest_roundtrip_bytes(dataset, tmp_path):
    root, _ = dataset
    loaded = load_manifest(root)
    rewrite = tmp_path / "rewrite"
    write_manifest(loaded, rewrite)
    for name in ["manifest.json", "train.jsonl", "val.jsonl"]:
        assert (root / name).read_bytes() == (rewrite / name).read_bytes()


# ---------------------------------------------------------------------------
# rendering


def test_render_empty_scene_constant():
    spec = SceneSpec(objects=(), background="gray", seed=0)
    img = render_scene(spec)
    assert img.shape == (3, 64, 64)
    assert np.allclose(img, 128 / 255.0)


def test_render_center_pixel_exact():
    obj = SceneObject("circle", "red", cx=30, cy=20, radius=8)
    img = render_scene(SceneSpec(objects=(obj,), background="gray", seed=0))
    assert tuple(img[:, 20, 30]) == (1.0, 0.0, 0.0)
    # triangles and squares cover their center too
    for shape in ("square", "triangle"):
        o = SceneObject(shape, "blue", cx=32, cy=32, radius=7)
        im = render_scene(SceneSpec(objects=(o,), background="white", seed=0))
        assert tuple(im[:, 32, 32]) == (0.0, 0.0, 1.0)


def test_render_deterministic_and_hard_edged():
    obj = SceneObject("triangle", "yellow", cx=32, cy=32, radius=10)
    spec = SceneSpec(objects=(obj,), background="blue", seed=0)
    a, b = render_scene(spec), render_scene(spec)
    assert np.array_equal(a, b)
    # only scene palette values appear: hard edges, no blending
    palette = {tuple(np.array(COLORS[c]) / 255.0) for c in ("yellow", "blue")}
    pixels = {tuple(px) for px in a.reshape(3, -1).T}
    assert pixels <= palette


def test_count_answer_forced_by_construction():
    objs = tuple(
        SceneObject("circle", "red", cx, 32, 6) for cx in (10, 30, 50)
    )
    scene = SceneSpec(objects=objs, background="gray", seed=0)
    assert compute_answer(scene, "how many circles are there") == "3"
    assert compute_answer(scene, "how many squares are there") == "0"
    assert compute_answer(scene, "is there a red circle") == "yes"
    assert compute_answer(scene, "is there a blue square") == "no"


# ---------------------------------------------------------------------------
# tokenization


def test_tokenize_template():
    vq = question_vocab()
    ids = tokenize("What color is the square?", vq)
    words = ["what", "color", "is", "the", "square"]
    assert ids[:5] == [vq.index(w) for w in words]
    assert ids[5:] == [0, 0, 0]


def test_tokenize_single_word_and_unknown():
    vq = question_vocab()
    assert tokenize("red", vq) == [vq.index("red")] + [0] * 7
    assert tokenize("xyzzy", vq)[0] == 1
    with pytest.raises(ValueError):
        tokenize("", vq)


def test_vocabs_sorted_unique():
    vq, va = question_vocab(), answer_vocab()
    assert vq == sorted(vq) and len(set(vq)) == len(vq)
    assert va == sorted(va) and len(set(va)) == len(va)
    assert len(va) == 16
    assert vq[0] == "<pad>" and vq[1] == "<unk>"


def test_generation_error_names_constraint(tmp_path):
    # an oversatured config: one object cannot yield two distinct color questions
    cfg = GenConfig(n_train=2, n_val=2, qtype_mix={"color": 1.0},
                    questions_per_train_image=4, questions_per_val_image=4,
                    max_objects=1, max_scene_retries=5)
    with pytest.raises(scenes.DatasetError, match="scene constraints"):
        generate_dataset(cfg, seed=0, out_dir=tmp_path / "bad")
