"""Walkthrough: the VQA model and its low-rank bilinear fusion.

Trains a small model on a small dataset (about a minute on CPU), then
inspects predictions and the fusion path: logits come from
W_o (tanh(W_q q) * tanh(W_v v)) + b_o.

Run:  python3 demos/02_vqa_model.py
"""

import tempfile
from pathlib import Path

import numpy as np

from cfvqa.scenes import GenConfig, generate_dataset, images_to_float, load_split_tensors
from cfvqa.vqa_core import VQAConfig, VQATrainConfig, train_vqa

out = Path(tempfile.mkdtemp(prefix="cfvqa_demo_"))
manifest = generate_dataset(GenConfig(n_train=600, n_val=120), seed=1, out_dir=out)
train = load_split_tensors(manifest, "train", out)
val = load_split_tensors(manifest, "val", out)

model, report = train_vqa(train, val, VQAConfig(), VQATrainConfig(epochs=8, seed=0))
print(f"val accuracy after 8 epochs: {report.final_val_acc:.3f}")
for epoch, loss, acc in report.epochs:
    print(f"  epoch {epoch}: loss {loss:.4f}, val acc {acc:.3f}")

# the model is frozen now; predictions are deterministic and read-only
img = images_to_float(val.images[:1])
a_hat, p = model.predict(img[0], val.token_ids[0])
print(f"\nQ: {val.questions[0]!r}")
print(f"ground truth: {manifest.vocab_a[val.answers[0]]}")
print(f"prediction:   {manifest.vocab_a[a_hat]} (p={p[a_hat]:.3f}, sum p = {p.sum():.6f})")

# each answer owns a row of the classifier matrix; the generator uses this
# row as the answer's conditioning embedding
row = model.answer_logit_row(int(val.answers[0]))
print(f"answer logit row shape: {row.shape}, norm {np.linalg.norm(row):.3f}")
