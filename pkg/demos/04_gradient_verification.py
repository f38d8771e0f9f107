"""Walkthrough: every backward pass in this library is checked against
central finite differences. This demo reruns the three headline checks on
small instances in float64 and prints the relative errors.

Run:  python3 demos/04_gradient_verification.py
"""

import numpy as np

from cfvqa.adversary import Discriminator, DiscriminatorConfig
from cfvqa.cf_generator import Generator, GeneratorConfig
from cfvqa.nn import functional as F
from cfvqa.nn.gradcheck import check_param_grads
from cfvqa.vqa_core import VQAConfig, VQAModel

rng = np.random.default_rng(0)

# 1. MLB fusion + softmax cross-entropy
vqa = VQAModel(VQAConfig(image_size=8, conv_channels=(4, 4), embed_dim=3, d_q=5,
                         d_v=4, d_z=6, vocab_size=10, n_answers=4, dtype="float64"),
               np.random.default_rng(1))
q, v = rng.standard_normal((2, 5)), rng.standard_normal((2, 4))
targets = np.array([1, 3])

def fuse_loss():
    return F.softmax_cross_entropy(vqa.mlb_fuse(q, v), targets)[0]

cache = {}
logits = vqa.mlb_fuse(q, v, cache)
_, p = F.softmax_cross_entropy(logits, targets)
vqa.zero_grad()
tq, tv = cache["vqa.fuse"]
dz = vqa.classifier.backward(F.softmax_cross_entropy_backward(p, targets), cache)
vqa.proj_q.backward(F.tanh_backward(dz * tv, tq), cache)
vqa.proj_v.backward(F.tanh_backward(dz * tq, tv), cache)
fusion_params = (list(vqa.proj_q.parameters()) + list(vqa.proj_v.parameters())
                 + list(vqa.classifier.parameters()))
errs = check_param_grads(fuse_loss, fusion_params)
print(f"MLB fusion + CE: worst relative error {max(errs.values()):.2e}")

# 2. generator kernel affines + conditioning FC
gen = Generator(GeneratorConfig(image_size=8, enc_channels=(2, 3, 4), d_c=6,
                                d_q=5, d_z=6, dtype="float64"), np.random.default_rng(2))
for aff in gen.kernel_affines:
    aff.w.data[...] = rng.standard_normal(aff.w.shape) * 0.2
img = rng.random((1, 3, 8, 8))
ids = np.array([2, 3, 4, 0, 0, 0, 0, 0])
proj = rng.standard_normal((1, 3, 8, 8))

def gen_loss():
    return float(np.sum(gen.generate(img, gen.build_conditioning(vqa, ids, [1])) * proj))

cache = {}
cond = gen.build_conditioning(vqa, ids, [1], cache)
gen.generate(img, cond, cache)
gen.zero_grad()
gen.backward(proj, cache)
params = list(gen.conditioning_fc.parameters())
for aff in gen.kernel_affines:
    params += list(aff.parameters())
errs = check_param_grads(gen_loss, params)
print(f"kernel affines + conditioning FC: worst relative error {max(errs.values()):.2e}")

# 3. discriminator stack
disc = Discriminator(DiscriminatorConfig(image_size=8, channels=(3, 4, 4, 1),
                                         dtype="float64"), np.random.default_rng(3))
imgs = rng.random((2, 3, 8, 8))

def disc_loss():
    return float(np.sum(disc.discriminate(imgs)))

cache = {}
disc.discriminate(imgs, cache)
disc.zero_grad()
disc.backward_from_scores(np.ones(2), cache)
errs = check_param_grads(disc_loss, list(disc.parameters()))
print(f"discriminator stack: worst relative error {max(errs.values()):.2e}")
