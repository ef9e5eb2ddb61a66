"""3D network layers with hand-written backward passes.

Activations are ``(N, C, D, H, W)`` arrays.  Every ``*_forward`` returns
``(out, cache)`` and the matching ``*_backward`` consumes ``(dout, cache)``.
"""
from __future__ import annotations

import numpy as np

from ..errors import InvalidInputError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _check_5d(x, name="input"):
    if x.ndim != 5:
        raise InvalidInputError(f"{name} must be (N, C, D, H, W), got shape {x.shape}")


# -- convolution -------------------------------------------------------------

def _im2col(xp, k, out_shape):
    n, ci = xp.shape[:2]
    do, ho, wo = out_shape
    cols = np.empty((n, ci, k, k, k, do, ho, wo), dtype=xp.dtype)
    for a in range(k):
        for b in range(k):
            for c in range(k):
                cols[:, :, a, b, c] = xp[:, :, a : a + do, b : b + ho, c : c + wo]
    return cols.reshape(n, ci * k**3, do * ho * wo)


def conv3d_forward(x, w, b, padding=None):
    """Dense cross-correlation, stride 1; ``w`` is (C_out, C_in, k, k, k)."""
    _check_5d(x)
    co, ci, k = w.shape[0], w.shape[1], w.shape[2]
    if x.shape[1] != ci or w.shape[2:] != (k, k, k) or b.shape != (co,):
        raise InvalidInputError(f"conv3d shape mismatch: input {x.shape}, kernel {w.shape}, bias {b.shape}")
    if padding is None:
        padding = k // 2
    n = x.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0)) + ((padding, padding),) * 3) if padding else x
    out_shape = tuple(s - k + 1 for s in xp.shape[2:])
    cols = _im2col(xp, k, out_shape)
    out = np.matmul(w.reshape(co, -1), cols) + b[None, :, None]
    return out.reshape((n, co) + out_shape), (cols, xp.shape, w, padding)


def conv3d_backward(dout, cache):
    cols, xp_shape, w, padding = cache
    co, ci, k = w.shape[0], w.shape[1], w.shape[2]
    n = dout.shape[0]
    do, ho, wo = dout.shape[2:]
    g = dout.reshape(n, co, -1)
    dw = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    db = g.sum(axis=(0, 2))
    dcols = np.matmul(w.reshape(co, -1).T, g).reshape(n, ci, k, k, k, do, ho, wo)
    dxp = np.zeros(xp_shape, dtype=dout.dtype)
    for a in range(k):
        for bb in range(k):
            for c in range(k):
                dxp[:, :, a : a + do, bb : bb + ho, c : c + wo] += dcols[:, :, a, bb, c]
    if padding:
        p = padding
        dxp = dxp[:, :, p:-p, p:-p, p:-p]
    return dxp, dw, db


# -- batch norm --------------------------------------------------------------

def batchnorm3d_forward(x, gamma, beta, running_mean, running_var, train=True, update_stats=True):
    """Per-channel normalization over batch and space.

    In train mode the running statistics are updated in place (unless
    ``update_stats`` is False); eval mode uses them instead of batch stats.
    """
    _check_5d(x)
    if x.shape[1] != gamma.shape[0]:
        raise InvalidInputError(f"batchnorm expects {gamma.shape[0]} channels, got {x.shape[1]}")
    shape = (1, -1, 1, 1, 1)
    if train:
        axes = (0, 2, 3, 4)
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        if update_stats:
            m = x.size // x.shape[1]
            unbiased = var * m / max(m - 1, 1)
            running_mean *= 1 - BN_MOMENTUM
            running_mean += BN_MOMENTUM * mean
            running_var *= 1 - BN_MOMENTUM
            running_var += BN_MOMENTUM * unbiased
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    out = gamma.reshape(shape) * xhat + beta.reshape(shape)
    return out, (xhat, inv_std, gamma, train)


def batchnorm3d_backward(dout, cache):
    xhat, inv_std, gamma, train = cache
    shape = (1, -1, 1, 1, 1)
    axes = (0, 2, 3, 4)
    dgamma = np.sum(dout * xhat, axis=axes)
    dbeta = np.sum(dout, axis=axes)
    dxhat = dout * gamma.reshape(shape)
    if train:
        m = dout.size // dout.shape[1]
        dx = (inv_std.reshape(shape) / m) * (
            m * dxhat
            - dxhat.sum(axis=axes).reshape(shape)
            - xhat * np.sum(dxhat * xhat, axis=axes).reshape(shape)
        )
    else:
        dx = dxhat * inv_std.reshape(shape)
    return dx, dgamma, dbeta


# -- pointwise ---------------------------------------------------------------

def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dout, mask):
    return dout * mask


def sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# -- pooling / upsampling ----------------------------------------------------

def maxpool3d_forward(x):
    """2x2x2 max pooling, stride 2.  Ties go to the lowest linear index."""
    _check_5d(x)
    n, c, d, h, w = x.shape
    if d % 2 or h % 2 or w % 2:
        raise InvalidInputError(f"maxpool needs even spatial dims, got {x.shape[2:]}")
    blocks = x.reshape(n, c, d // 2, 2, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 6, 3, 5, 7)
    blocks = blocks.reshape(n, c, d // 2, h // 2, w // 2, 8)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, (arg, x.shape)


def maxpool3d_backward(dout, cache):
    arg, shape = cache
    n, c, d, h, w = shape
    blocks = np.zeros(dout.shape + (8,), dtype=dout.dtype)
    np.put_along_axis(blocks, arg[..., None], dout[..., None], axis=-1)
    blocks = blocks.reshape(n, c, d // 2, h // 2, w // 2, 2, 2, 2).transpose(0, 1, 2, 5, 3, 6, 4, 7)
    return blocks.reshape(shape)


def transposed_conv3d_forward(x, w, b=None):
    """Kernel 2, stride 2, no padding; ``w`` is (C_in, C_out, 2, 2, 2)."""
    _check_5d(x)
    if w.shape[0] != x.shape[1] or w.shape[2:] != (2, 2, 2):
        raise InvalidInputError(f"transposed conv shape mismatch: input {x.shape}, kernel {w.shape}")
    n, _, d, h, wd = x.shape
    co = w.shape[1]
    y = np.einsum("nidhw,ioabc->nodahbwc", x, w, optimize=True).reshape(n, co, 2 * d, 2 * h, 2 * wd)
    if b is not None:
        y = y + b.reshape(1, -1, 1, 1, 1)
    return y, (x, w)


def transposed_conv3d_backward(dout, cache):
    x, w = cache
    n, co, d2, h2, w2 = dout.shape
    g = dout.reshape(n, co, d2 // 2, 2, h2 // 2, 2, w2 // 2, 2)
    dx = np.einsum("nodahbwc,ioabc->nidhw", g, w, optimize=True)
    dw = np.einsum("nidhw,nodahbwc->ioabc", x, g, optimize=True)
    db = dout.sum(axis=(0, 2, 3, 4))
    return dx, dw, db
