"""Shared fixture: a tiny full pipeline run (dataset -> VQA -> generator)
produced through the real CLI, reused by CLI, service, and UI-contract tests."""

import pytest

from cfvqa import cli

TINY_OVERRIDES = [
    "--set", "data.n_train=24",
    "--set", "data.n_val=8",
    "--set", "data.image_size=16",
    "--set", "vqa_model.image_size=16",
    "--set", "vqa_model.conv_channels=8,8,8,8",
    "--set", "vqa_model.embed_dim=6",
    "--set", "vqa_model.d_q=8",
    "--set", "vqa_model.d_v=8",
    "--set", "vqa_model.d_z=12",
    "--set", "vqa_train.epochs=2",
    "--set", "vqa_train.batch_size=8",
    "--set", "generator.image_size=16",
    "--set", "generator.enc_channels=4,6,8",
    "--set", "generator.d_c=6",
    "--set", "generator.d_q=8",
    "--set", "generator.d_z=12",
    "--set", "discriminator.image_size=16",
    "--set", "discriminator.channels=4,4,4,1",
    "--set", "cf_train.warmup_epochs=1",
    "--set", "cf_train.joint_epochs=1",
    "--set", "cf_train.batch_size=8",
    "--set", "eval.k_per_qtype=1",
]


def run_cli(cmd, out, extra=()):
    return cli.main([cmd, "--out", str(out), "--seed", "7", *TINY_OVERRIDES, *extra])


@pytest.fixture(scope="session")
def tiny_pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipeline")
    for cmd in ("gen-data", "train-vqa", "train-cf", "eval"):
        code = run_cli(cmd, out)
        assert code == 0, f"{cmd} exited {code}"
    return out
