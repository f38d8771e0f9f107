"""Single command-line entry point for the full pipeline.

Subcommands: gen-data, train-vqa, train-cf, eval, explain, serve.
Exit codes: 0 success, 1 usage error, 2 data/config error, 3 training or
runtime error. Every run writes a run.json (resolved config + seed +
version + artifact hashes) into its stage directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .adversary import Discriminator
from .cf_generator import Generator
from .config import ConfigError, load_config, to_dict
from .evaluation import evaluate, export_report, heatmap, make_grid_cases
from .explain_service import build_state, file_sha256, serve_forever
from .scenes import (
    DatasetError,
    generate_dataset,
    images_to_float,
    load_manifest,
    load_png,
    load_split_tensors,
    save_png,
    tokenize,
)
from .training import (
    CheckpointError,
    InternalError,
    edit_rms,
    load_joint,
    load_vqa,
    save_generator,
    save_joint,
    save_vqa,
    train_joint,
    train_warmup,
    write_history_csv,
)
from .vqa_core import TrainingError, train_vqa

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage problems exit 1 per the CLI contract (argparse default is 2)
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common_flags(parser):
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--out", help="output root (default $CFVQA_OUT or ./out)")
    parser.add_argument("--seed", type=int, default=42, help="master seed (default 42)")
    parser.add_argument("--set", action="append", dest="overrides", default=[],
                        metavar="KEY=VALUE", help="config override, repeatable")


def build_parser():
    parser = _Parser(prog="cfvqa", description="Counterfactual image generation for a small VQA model")
    sub = parser.add_subparsers(dest="cmd", required=True)
    for name, doc in [
        ("gen-data", "generate the synthetic shapes dataset"),
        ("train-vqa", "train and freeze the VQA model"),
        ("train-cf", "warm-up then joint training of the counterfactual generator"),
        ("eval", "evaluate and export report + grids"),
        ("explain", "run a single what-if explanation"),
        ("serve", "start the HTTP explanation service"),
    ]:
        p = sub.add_parser(name, help=doc, description=doc)
        _common_flags(p)
        if name == "explain":
            p.add_argument("--image", required=True, help="sample id or PNG path")
            p.add_argument("--question", required=True)
            p.add_argument("--answer", help="target answer (defaults to the model's prediction)")
    return parser


def _out_root(args):
    return Path(args.out or os.environ.get("CFVQA_OUT") or "out")


def _write_run_json(stage_dir, cmd, cfg, seed, artifacts):
    stage_dir.mkdir(parents=True, exist_ok=True)
    resolved = to_dict(cfg)
    doc = {
        "subcommand": cmd,
        "version": __version__,
        "seed": seed,
        "config": resolved,
        "config_sha256": hashlib.sha256(
            json.dumps(resolved, sort_keys=True).encode()
        ).hexdigest(),
        "artifacts": artifacts,
    }
    (stage_dir / "run.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args, cfg):
    out = _out_root(args)
    manifest = generate_dataset(cfg.data, args.seed, out / "dataset")
    counts = {k: len(v) for k, v in manifest.samples.items()}
    _write_run_json(out / "dataset", "gen-data", cfg, args.seed,
                    {"vocab_hash": manifest.vocab_hash(), "splits": counts})
    print(f"dataset written to {out / 'dataset'} ({counts})")
    return EXIT_OK


def cmd_train_vqa(args, cfg):
    out = _out_root(args)
    manifest = load_manifest(out / "dataset")
    train = load_split_tensors(manifest, "train", out / "dataset")
    val = load_split_tensors(manifest, "val", out / "dataset")
    cfg.vqa_model.vocab_size = len(manifest.vocab_q)
    cfg.vqa_model.n_answers = len(manifest.vocab_a)
    model, report = train_vqa(train, val, cfg.vqa_model, cfg.vqa_train)
    vqa_dir = out / "vqa"
    vqa_dir.mkdir(parents=True, exist_ok=True)
    ckpt = vqa_dir / "vqa.npz"
    save_vqa(ckpt, model, vocab_hash=manifest.vocab_hash())
    lines = ["epoch,mean_loss,val_acc"] + [f"{e},{l:.6f},{a:.6f}" for e, l, a in report.epochs]
    (vqa_dir / "history.csv").write_text("\n".join(lines) + "\n")
    _write_run_json(vqa_dir, "train-vqa", cfg, cfg.vqa_train.seed, {
        "vqa_hash": file_sha256(ckpt),
        "final_train_acc": report.final_train_acc,
        "final_val_acc": report.final_val_acc,
    })
    print(f"vqa trained: train acc {report.final_train_acc:.4f}, val acc {report.final_val_acc:.4f}")
    return EXIT_OK


def cmd_train_cf(args, cfg):
    out = _out_root(args)
    manifest = load_manifest(out / "dataset")
    train = load_split_tensors(manifest, "train", out / "dataset")
    val = load_split_tensors(manifest, "val", out / "dataset")
    vocab_hash = manifest.vocab_hash()
    vqa_ckpt = out / "vqa" / "vqa.npz"
    vqa, _ = load_vqa(vqa_ckpt, expect_vocab_hash=vocab_hash)
    vqa_hash = file_sha256(vqa_ckpt)

    cf_dir = out / "cf"
    cf_dir.mkdir(parents=True, exist_ok=True)
    gen = Generator(cfg.generator, np.random.default_rng(cfg.cf_train.seed))
    disc = Discriminator(cfg.discriminator, np.random.default_rng(cfg.cf_train.seed + 1))

    gen, warmup_hist = train_warmup(gen, train, cfg.cf_train, val)
    (cf_dir / "warmup.json").write_text(json.dumps(
        {"init_mse": warmup_hist["init_mse"], "epoch_mse": warmup_hist["epoch_mse"]},
        sort_keys=True, indent=2) + "\n")
    print(f"warm-up: init MSE {warmup_hist['init_mse']:.5f} -> {warmup_hist['epoch_mse'][-1]:.5f}")

    gen, disc, history = train_joint(gen, disc, vqa, train, cfg.cf_train,
                                     out_dir=cf_dir, vocab_hash=vocab_hash, vqa_hash=vqa_hash)
    write_history_csv(cf_dir / "losses.csv", history)
    gen_ckpt = cf_dir / "gen.npz"
    save_generator(gen_ckpt, gen, vocab_hash=vocab_hash, vqa_hash=vqa_hash)
    save_joint(cf_dir / "joint.npz", gen, disc, vocab_hash=vocab_hash, vqa_hash=vqa_hash,
               extra={"epochs": cfg.cf_train.joint_epochs})
    _write_run_json(cf_dir, "train-cf", cfg, cfg.cf_train.seed, {
        "vqa_hash": vqa_hash,
        "gen_hash": file_sha256(gen_ckpt),
        "warmup_final_mse": warmup_hist["epoch_mse"][-1] if warmup_hist["epoch_mse"] else None,
    })
    if history:
        last = history[-1]
        print(f"joint done: l_ans {last.l_ans:.4f}, l_edit {last.l_edit:.5f}, l_adv {last.l_adv:.4f}")
    return EXIT_OK


def _load_models(out):
    manifest = load_manifest(out / "dataset")
    vocab_hash = manifest.vocab_hash()
    vqa_ckpt = out / "vqa" / "vqa.npz"
    vqa, _ = load_vqa(vqa_ckpt, expect_vocab_hash=vocab_hash)
    vqa_hash = file_sha256(vqa_ckpt)
    gen, _ = load_generator_checked(out, vocab_hash, vqa_hash)
    return manifest, vqa, gen, vocab_hash, vqa_hash


def load_generator_checked(out, vocab_hash, vqa_hash):
    from .training import load_generator

    return load_generator(out / "cf" / "gen.npz", expect_vocab_hash=vocab_hash, expect_vqa_hash=vqa_hash)


def cmd_eval(args, cfg):
    out = _out_root(args)
    manifest, vqa, gen, vocab_hash, vqa_hash = _load_models(out)
    disc = None
    joint_path = out / "cf" / "joint.npz"
    if joint_path.exists():
        _, disc, _ = load_joint(joint_path, expect_vocab_hash=vocab_hash, expect_vqa_hash=vqa_hash)
    data = load_split_tensors(manifest, cfg.eval.split, out / "dataset")
    report = evaluate(vqa, gen, data, disc=disc)
    cases = make_grid_cases(vqa, gen, data, manifest.vocab_a, cfg.eval.k_per_qtype)
    export_report(report, out / "eval", cases=cases)
    _write_run_json(out / "eval", "eval", cfg, args.seed, {
        "vqa_hash": vqa_hash,
        "overall_acc_orig": report.overall.acc_orig,
        "overall_acc_cf": report.overall.acc_cf,
        "flip_rate": report.overall.flip_rate,
    })
    print(f"report written to {out / 'eval'}: acc {report.overall.acc_orig:.4f} -> "
          f"{report.overall.acc_cf:.4f}, flip rate {report.overall.flip_rate:.4f}")
    return EXIT_OK


def cmd_explain(args, cfg):
    out = _out_root(args)
    manifest, vqa, gen, _, _ = _load_models(out)
    h, w, _ = manifest.image_size

    if args.image.endswith(".png") and Path(args.image).exists():
        image_u8 = load_png(args.image)
        if image_u8.shape[1:] != (h, w):
            raise DatasetError(f"image shape {image_u8.shape[1:]} != dataset shape {(h, w)}")
    else:
        hit = None
        for split, samples in manifest.samples.items():
            for row, s in enumerate(samples):
                if s.id == args.image:
                    hit = (split, s)
                    break
        if hit is None:
            raise DatasetError(f"no sample with id {args.image!r} (and no such PNG file)")
        image_u8 = load_png(out / "dataset" / hit[1].image_path)

    ids = np.array(tokenize(args.question, manifest.vocab_q))
    img = images_to_float(image_u8[None], vqa.config.np_dtype())
    a_hat, _ = vqa.predict_batch(img, ids[None])
    orig_answer = manifest.vocab_a[int(a_hat[0])]
    target = args.answer or orig_answer
    if target not in manifest.vocab_a:
        raise DatasetError(f"answer {target!r} not in the answer vocabulary")
    cond = gen.build_conditioning(vqa, ids[None], [manifest.vocab_a.index(target)])
    cf = gen.generate(images_to_float(image_u8[None], gen.config.np_dtype()), cond)[0]
    cf_hat, _ = vqa.predict_batch(cf[None].astype(vqa.config.np_dtype()), ids[None])
    cf_answer = manifest.vocab_a[int(cf_hat[0])]

    dest = out / "explain"
    dest.mkdir(parents=True, exist_ok=True)
    save_png(images_to_float(image_u8), dest / "original.png")
    save_png(cf, dest / "counterfactual.png")
    heat = heatmap(images_to_float(image_u8), cf)
    save_png(np.stack([heat] * 3), dest / "heatmap.png")
    result = {
        "question": args.question,
        "target_answer": target,
        "orig_answer": orig_answer,
        "cf_answer": cf_answer,
        "flipped": cf_answer != orig_answer,
        "edit_rms": edit_rms(images_to_float(image_u8), cf),
    }
    (dest / "result.json").write_text(json.dumps(result, sort_keys=True, indent=2) + "\n")
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def cmd_serve(args, cfg):
    out = _out_root(args)
    return serve_forever(out, cfg.serve.addr)


# ---------------------------------------------------------------------------


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides, seed=args.seed)
        handler = {
            "gen-data": cmd_gen_data,
            "train-vqa": cmd_train_vqa,
            "train-cf": cmd_train_cf,
            "eval": cmd_eval,
            "explain": cmd_explain,
            "serve": cmd_serve,
        }[args.cmd]
        return handler(args, cfg)
    except (ConfigError, DatasetError, CheckpointError, FileNotFoundError, NotADirectoryError) as e:
        print(f"cfvqa {args.cmd}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, InternalError) as e:
        print(f"cfvqa {args.cmd}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:  # unexpected runtime failure
        print(f"cfvqa {args.cmd}: unexpected error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
