"""Array-level ops with hand-derived backward passes.

Every forward returns the values needed by its backward; backwards are
verified against central finite differences in the test suite. All ops
preserve the dtype of their inputs so the same code runs in float32 for
training and float64 for gradient checks.
"""

import numpy as np


# ---------------------------------------------------------------------------
# im2col / col2im


def conv_out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, k, stride, pad):
    """(N, C, H, W) -> (N, C*k*k, P) patch matrix, P = out_h*out_w."""
    n, c, h, w = x.shape
    oh = conv_out_size(h, k, stride, pad)
    ow = conv_out_size(w, k, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    sn, sc, sh, sw = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, k, k, oh, ow),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    return np.ascontiguousarray(windows).reshape(n, c * k * k, oh * ow)


def col2im(cols, x_shape, k, stride, pad):
    """Adjoint of im2col: scatter-add patches back to (N, C, H, W)."""
    n, c, h, w = x_shape
    oh = conv_out_size(h, k, stride, pad)
    ow = conv_out_size(w, k, stride, pad)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    cols = cols.reshape(n, c, k, k, oh, ow)
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols[:, :, i, j]
    if pad:
        out = out[:, :, pad : pad + h, pad : pad + w]
    return out


# ---------------------------------------------------------------------------
# convolution


def conv2d(x, w, b, stride=1, pad=0):
    """x (N,Cin,H,W), w (Cout,Cin,k,k), b (Cout,) -> y, cache."""
    n = x.shape[0]
    cout, cin, k, _ = w.shape
    oh = conv_out_size(x.shape[2], k, stride, pad)
    ow = conv_out_size(x.shape[3], k, stride, pad)
    cols = im2col(x, k, stride, pad)                      # (N, Cin*k*k, P)
    y = np.matmul(w.reshape(cout, -1), cols)              # (N, Cout, P)
    y += b[:, None]
    y = y.reshape(n, cout, oh, ow)
    return y, (x.shape, cols, w, stride, pad)


def conv2d_backward(dy, cache):
    """Returns (dx, dw, db)."""
    x_shape, cols, w, stride, pad = cache
    n, cout = dy.shape[:2]
    k = w.shape[2]
    dyf = dy.reshape(n, cout, -1)                         # (N, Cout, P)
    db = dyf.sum(axis=(0, 2))
    dw = np.einsum("nop,nkp->ok", dyf, cols).reshape(w.shape)
    dcols = np.matmul(w.reshape(cout, -1).T, dyf)         # (N, Cin*k*k, P)
    dx = col2im(dcols, x_shape, k, stride, pad)
    return dx, dw, db


def conv_transpose2d(x, w, b, stride=2, pad=1):
    """x (N,Cin,H,W), w (Cin,Cout,k,k) -> y (N,Cout,Ho,Wo), cache.

    Ho = (H-1)*stride - 2*pad + k; the op is the adjoint of conv2d.
    """
    n, cin, h, w_in = x.shape
    _, cout, k, _ = w.shape
    oh = (h - 1) * stride - 2 * pad + k
    ow = (w_in - 1) * stride - 2 * pad + k
    xf = x.reshape(n, cin, -1)                            # (N, Cin, P)
    cols = np.matmul(w.reshape(cin, -1).T, xf)            # (N, Cout*k*k, P)
    y = col2im(cols, (n, cout, oh, ow), k, stride, pad)
    y += b[None, :, None, None]
    return y, (x, w, stride, pad)


def conv_transpose2d_backward(dy, cache):
    x, w, stride, pad = cache
    n, cin = x.shape[:2]
    k = w.shape[2]
    db = dy.sum(axis=(0, 2, 3))
    dcols = im2col(dy, k, stride, pad)                    # (N, Cout*k*k, P)
    xf = x.reshape(n, cin, -1)
    dw = np.einsum("nip,nkp->ik", xf, dcols).reshape(w.shape)
    dx = np.matmul(w.reshape(cin, -1), dcols).reshape(x.shape)
    return dx, dw, db


def kernel_conv1x1(f, kernels):
    """Per-sample 1x1 channel-mixing convolution.

    f (N,C,H,W), kernels (N,Cout,C) -> g (N,Cout,H,W) with
    g[n,o,y,x] = sum_i kernels[n,o,i] * f[n,i,y,x].
    """
    n, c, h, w = f.shape
    g = np.matmul(kernels, f.reshape(n, c, -1))
    return g.reshape(n, kernels.shape[1], h, w)


def kernel_conv1x1_backward(dg, f, kernels):
    """Returns (df, dkernels)."""
    n, c, h, w = f.shape
    dgf = dg.reshape(n, dg.shape[1], -1)
    ff = f.reshape(n, c, -1)
    dk = np.matmul(dgf, ff.transpose(0, 2, 1))
    df = np.matmul(kernels.transpose(0, 2, 1), dgf).reshape(f.shape)
    return df, dk


# ---------------------------------------------------------------------------
# dense / pooling / activations


def linear(x, w, b):
    """x (N,Din), w (Dout,Din), b (Dout,) -> y (N,Dout)."""
    return x @ w.T + b


def linear_backward(dy, x, w):
    """Returns (dx, dw, db)."""
    return dy @ w, dy.T @ x, dy.sum(axis=0)


def global_avg_pool(x):
    """(N,C,H,W) -> (N,C)."""
    return x.mean(axis=(2, 3))


def global_avg_pool_backward(dy, x_shape):
    n, c, h, w = x_shape
    return np.broadcast_to(dy[:, :, None, None], x_shape) / (h * w)


def group_norm(x, gamma, beta, groups, eps=1e-5):
    """Per-sample normalization over channel groups of a (N,C,H,W) map.

    Mode-free (no running statistics), so train and inference paths are
    identical and inference stays read-only.
    """
    n, c, h, w = x.shape
    g = x.reshape(n, groups, -1)
    mu = g.mean(axis=2, keepdims=True)
    var = g.var(axis=2, keepdims=True)
    xhat = (g - mu) / np.sqrt(var + eps)
    xhat = xhat.reshape(n, c, h, w)
    y = xhat * gamma[None, :, None, None] + beta[None, :, None, None]
    return y, (xhat, var, gamma, groups, eps)


def group_norm_backward(dy, cache):
    xhat, var, gamma, groups, eps = cache
    n, c, h, w = dy.shape
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dbeta = dy.sum(axis=(0, 2, 3))
    dxhat = (dy * gamma[None, :, None, None]).reshape(n, groups, -1)
    xhat_g = xhat.reshape(n, groups, -1)
    m = dxhat.shape[2]
    istd = 1.0 / np.sqrt(var + eps)
    dx = istd * (dxhat - dxhat.mean(axis=2, keepdims=True)
                 - xhat_g * (dxhat * xhat_g).mean(axis=2, keepdims=True))
    return dx.reshape(n, c, h, w), dgamma, dbeta


def relu(x):
    return np.maximum(x, 0)


def relu_backward(dy, x):
    return dy * (x > 0)


def leaky_relu(x, alpha=0.2):
    return np.where(x > 0, x, alpha * x)


def leaky_relu_backward(dy, x, alpha=0.2):
    return np.where(x > 0, dy, alpha * dy)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(dy, y):
    return dy * y * (1.0 - y)


def tanh_backward(dy, y):
    return dy * (1.0 - y * y)


# ---------------------------------------------------------------------------
# softmax / cross-entropy


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax_cross_entropy(logits, targets):
    """Mean CE over the batch. logits (N,K), targets (N,) int. Returns (loss, p)."""
    logp = log_softmax(logits, axis=1)
    n = logits.shape[0]
    loss = -logp[np.arange(n), targets].mean()
    return loss, np.exp(logp)


def softmax_cross_entropy_backward(p, targets):
    """d(mean CE)/dlogits given softmax probabilities p."""
    n = p.shape[0]
    d = p.copy()
    d[np.arange(n), targets] -= 1.0
    return d / n


def grad_log_p_target(p, targets, floor):
    """d(mean log p_t)/dlogits, zero where p_t has hit the probability floor."""
    n = p.shape[0]
    pt = p[np.arange(n), targets]
    active = (pt > floor).astype(p.dtype)
    d = -p * active[:, None]
    d[np.arange(n), targets] += active
    return d / n
