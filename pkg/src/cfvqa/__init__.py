"""cfvqa: question-conditioned counterfactual image generation for a small
VQA model, at desk scale.

Pipeline: synthetic shapes dataset -> frozen VQA model (conv + GRU + low-rank
bilinear fusion) -> language-conditioned UNet generator trained to minimally
edit images so the frozen model's answer flips -> evaluation and an HTTP
explanation service.
"""

__version__ = "0.1.0"
