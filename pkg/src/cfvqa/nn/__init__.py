from . import functional
from .layers import GRU, Conv2d, ConvTranspose2d, Embedding, GroupNorm, Linear, Module, Param
from .optim import Adam, clip_global_norm

__all__ = [
    "functional",
    "Param",
    "Module",
    "Conv2d",
    "ConvTranspose2d",
    "Linear",
    "Embedding",
    "GroupNorm",
    "GRU",
    "Adam",
    "clip_global_norm",
]
