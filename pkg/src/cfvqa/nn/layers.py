"""Parameter containers and layer objects built on the functional ops.

Layers hold `Param`s and never store per-call state on themselves: forward
passes write into a caller-provided cache dict, so inference on fixed
parameters is safe to run from multiple threads at once.
"""

import hashlib

import numpy as np

from . import functional as F


class Param:
    """A named trainable array plus its gradient accumulator."""

    __slots__ = ("name", "data", "grad")

    def __init__(self, name, data):
        self.name = name
        self.data = data
        self.grad = np.zeros_like(data)

    @property
    def shape(self):
        return self.data.shape


class Module:
    """Minimal base: parameter registry plus checksum support."""

    def __init__(self):
        self._params = []
        self._children = []

    def add_param(self, name, data):
        p = Param(name, data)
        self._params.append(p)
        return p

    def add_child(self, module):
        self._children.append(module)
        return module

    def parameters(self):
        for p in self._params:
            yield p
        for m in self._children:
            yield from m.parameters()

    def zero_grad(self):
        for p in self.parameters():
            p.grad[...] = 0.0

    def state_arrays(self):
        """Ordered (name, array) pairs for checkpointing."""
        seen = {}
        for i, p in enumerate(self.parameters()):
            seen[f"{i:03d}.{p.name}"] = p.data
        return seen

    def load_state_arrays(self, arrays):
        for key, p in zip(sorted(arrays), self.parameters()):
            if arrays[key].shape != p.data.shape:
                raise ValueError(f"shape mismatch for {key}: {arrays[key].shape} vs {p.data.shape}")
            p.data[...] = arrays[key]

    def checksum(self):
        """SHA-256 over all parameter bytes; order-stable."""
        h = hashlib.sha256()
        for p in self.parameters():
            h.update(p.name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()


def he_init(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, stride, pad, rng, dtype=np.float32, prefix="conv"):
        super().__init__()
        self.stride, self.pad = stride, pad
        self.w = self.add_param(f"{prefix}.w", he_init(rng, (c_out, c_in, k, k), c_in * k * k, dtype))
        self.b = self.add_param(f"{prefix}.b", np.zeros(c_out, dtype=dtype))

    def forward(self, x, cache=None):
        y, c = F.conv2d(x, self.w.data, self.b.data, self.stride, self.pad)
        if cache is not None:
            cache[id(self)] = c
        return y

    def backward(self, dy, cache):
        dx, dw, db = F.conv2d_backward(dy, cache[id(self)])
        self.w.grad += dw
        self.b.grad += db
        return dx


class ConvTranspose2d(Module):
    def __init__(self, c_in, c_out, k, stride, pad, rng, dtype=np.float32, prefix="deconv"):
        super().__init__()
        self.stride, self.pad = stride, pad
        self.w = self.add_param(f"{prefix}.w", he_init(rng, (c_in, c_out, k, k), c_in * k * k, dtype))
        self.b = self.add_param(f"{prefix}.b", np.zeros(c_out, dtype=dtype))

    def forward(self, x, cache=None):
        y, c = F.conv_transpose2d(x, self.w.data, self.b.data, self.stride, self.pad)
        if cache is not None:
            cache[id(self)] = c
        return y

    def backward(self, dy, cache):
        dx, dw, db = F.conv_transpose2d_backward(dy, cache[id(self)])
        self.w.grad += dw
        self.b.grad += db
        return dx


class GroupNorm(Module):
    def __init__(self, channels, groups, dtype=np.float32, prefix="gn"):
        super().__init__()
        assert channels % groups == 0, "channels must divide into groups"
        self.groups = groups
        self.gamma = self.add_param(f"{prefix}.gamma", np.ones(channels, dtype=dtype))
        self.beta = self.add_param(f"{prefix}.beta", np.zeros(channels, dtype=dtype))

    def forward(self, x, cache=None):
        y, c = F.group_norm(x, self.gamma.data, self.beta.data, self.groups)
        if cache is not None:
            cache[id(self)] = c
        return y

    def backward(self, dy, cache):
        dx, dgamma, dbeta = F.group_norm_backward(dy, cache[id(self)])
        self.gamma.grad += dgamma
        self.beta.grad += dbeta
        return dx


class Linear(Module):
    def __init__(self, d_in, d_out, rng, dtype=np.float32, prefix="fc", zero_init=False):
        super().__init__()
        if zero_init:
            w = np.zeros((d_out, d_in), dtype=dtype)
        else:
            w = (rng.standard_normal((d_out, d_in)) / np.sqrt(d_in)).astype(dtype)
        self.w = self.add_param(f"{prefix}.w", w)
        self.b = self.add_param(f"{prefix}.b", np.zeros(d_out, dtype=dtype))

    def forward(self, x, cache=None):
        if cache is not None:
            cache[id(self)] = x
        return F.linear(x, self.w.data, self.b.data)

    def backward(self, dy, cache):
        dx, dw, db = F.linear_backward(dy, cache[id(self)], self.w.data)
        self.w.grad += dw
        self.b.grad += db
        return dx


class Embedding(Module):
    def __init__(self, n_vocab, dim, rng, dtype=np.float32, prefix="emb"):
        super().__init__()
        self.w = self.add_param(f"{prefix}.w", (rng.standard_normal((n_vocab, dim)) * 0.1).astype(dtype))

    def forward(self, ids, cache=None):
        if cache is not None:
            cache[id(self)] = ids
        return self.w.data[ids]

    def backward(self, dy, cache):
        ids = cache[id(self)]
        np.add.at(self.w.grad, ids.reshape(-1), dy.reshape(-1, dy.shape[-1]))
        return None


class GRU(Module):
    """Single-layer GRU over (N, L, D) inputs with a per-step keep mask.

    Masked steps (mask 0) leave the hidden state untouched, so trailing
    pad tokens never change the encoding. Initial hidden state is zero.
    """

    def __init__(self, d_in, d_hidden, rng, dtype=np.float32, prefix="gru"):
        super().__init__()
        self.d_hidden = d_hidden
        k = np.sqrt(1.0 / d_hidden)

        def mat(name, shape):
            return self.add_param(f"{prefix}.{name}", (rng.uniform(-k, k, shape)).astype(dtype))

        self.wz, self.wr, self.wh = (mat(f"w{g}", (d_hidden, d_in)) for g in "zrh")
        self.uz, self.ur, self.uh = (mat(f"u{g}", (d_hidden, d_hidden)) for g in "zrh")
        self.bz, self.br, self.bh = (mat(f"b{g}", (d_hidden,)) for g in "zrh")

    def forward(self, x, mask, cache=None):
        """x (N,L,D), mask (N,L) in {0,1} -> final hidden state (N,H)."""
        n, length, _ = x.shape
        h = np.zeros((n, self.d_hidden), dtype=x.dtype)
        steps = []
        for t in range(length):
            xt = x[:, t]
            mt = mask[:, t].astype(x.dtype)[:, None]
            z = F.sigmoid(xt @ self.wz.data.T + h @ self.uz.data.T + self.bz.data)
            r = F.sigmoid(xt @ self.wr.data.T + h @ self.ur.data.T + self.br.data)
            rh = r * h
            hbar = np.tanh(xt @ self.wh.data.T + rh @ self.uh.data.T + self.bh.data)
            hnew = (1.0 - z) * h + z * hbar
            hout = mt * hnew + (1.0 - mt) * h
            steps.append((xt, mt, h, z, r, rh, hbar))
            h = hout
        if cache is not None:
            cache[id(self)] = steps
        return h

    def backward(self, dh, cache):
        """dh (N,H) w.r.t. final state; returns dx (N,L,D)."""
        steps = cache[id(self)]
        dx = np.zeros((dh.shape[0], len(steps), self.wz.data.shape[1]), dtype=dh.dtype)
        for t in range(len(steps) - 1, -1, -1):
            xt, mt, hprev, z, r, rh, hbar = steps[t]
            dhnew = dh * mt
            dhprev_skip = dh * (1.0 - mt)
            dz = dhnew * (hbar - hprev)
            dhbar = dhnew * z
            dhprev = dhnew * (1.0 - z)
            da_h = dhbar * (1.0 - hbar * hbar)
            self.wh.grad += da_h.T @ xt
            self.uh.grad += da_h.T @ rh
            self.bh.grad += da_h.sum(axis=0)
            drh = da_h @ self.uh.data
            dr = drh * hprev
            dhprev += drh * r
            da_z = dz * z * (1.0 - z)
            self.wz.grad += da_z.T @ xt
            self.uz.grad += da_z.T @ hprev
            self.bz.grad += da_z.sum(axis=0)
            dhprev += da_z @ self.uz.data
            da_r = dr * r * (1.0 - r)
            self.wr.grad += da_r.T @ xt
            self.ur.grad += da_r.T @ hprev
            self.br.grad += da_r.sum(axis=0)
            dhprev += da_r @ self.ur.data
            dx[:, t] = da_h @ self.wh.data + da_z @ self.wz.data + da_r @ self.wr.data
            dh = dhprev + dhprev_skip
        return dx
