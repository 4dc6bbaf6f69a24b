"""Differentiable tensor ops, NHWC layout, explicit forward/backward pairs.

Every forward returns (out, cache); the matching backward consumes the
upstream gradient and the cache and returns gradients for its inputs and
parameters.  Shapes are (batch, height, width, channels) float32 in the
network, float64 inside the gradient-check harness; the code is dtype
agnostic.  NaN/Inf in an op output raises NumericsError.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse

BN_EPS = 1e-5
BN_MOMENTUM = 0.99  # running-statistics decay


class NumericsError(Exception):
    """An op produced non-finite values."""


class ShapeError(Exception):
    pass


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericsError(f"non-finite values out of {where}")
    return x


def conv2d_forward(x, w, b, stride: int = 1):
    """Same-padded convolution; w is (kh, kw, cin, cout)."""
    kh, kw, cin, cout = w.shape
    if x.ndim != 4 or x.shape[3] != cin:
        raise ShapeError(f"conv2d input {x.shape} does not match weight {w.shape}")
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    n, hp, wp, _ = xp.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    out = np.zeros((n, ho, wo, cout), dtype=x.dtype)
    for a in range(kh):
        for c in range(kw):
            patch = xp[:, a : a + stride * ho : stride, c : c + stride * wo : stride, :]
            out += patch @ w[a, c]
    out += b
    cache = (xp, w, stride, x.shape)
    return check_finite(out, "conv2d"), cache


def conv2d_backward(dout, cache):
    xp, w, stride, x_shape = cache
    kh, kw, cin, cout = w.shape
    n, ho, wo, _ = dout.shape
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for a in range(kh):
        for c in range(kw):
            patch = xp[:, a : a + stride * ho : stride, c : c + stride * wo : stride, :]
            dw[a, c] = np.tensordot(patch, dout, axes=([0, 1, 2], [0, 1, 2]))
            dxp[:, a : a + stride * ho : stride, c : c + stride * wo : stride, :] += dout @ w[a, c].T
    db = dout.sum(axis=(0, 1, 2))
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    h, wdt = x_shape[1], x_shape[2]
    dx = dxp[:, ph : ph + h, pw : pw + wdt, :]
    return dx, dw, db


def relu_forward(x):
    return np.maximum(x, 0), x


def relu_backward(dout, cache):
    return dout * (cache > 0)


def sigmoid_forward(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out, out


def sigmoid_backward(dout, cache):
    return dout * cache * (1.0 - cache)


class NormState:
    """Running mean/var of one normalization layer (eval-mode statistics)."""

    def __init__(self, channels: int):
        self.mean = np.zeros(channels, dtype=np.float64)
        self.var = np.ones(channels, dtype=np.float64)

    def update(self, batch_mean, batch_var):
        self.mean = BN_MOMENTUM * self.mean + (1.0 - BN_MOMENTUM) * batch_mean
        self.var = BN_MOMENTUM * self.var + (1.0 - BN_MOMENTUM) * batch_var


def batchnorm_forward(x, gamma, beta, state: NormState | None, training: bool):
    """Per-channel batch normalization over (N, H, W).

    Training mode uses batch statistics and updates the running state;
    eval mode normalizes with the stored running statistics, so output is
    independent of batch composition.
    """
    if training:
        mu = x.mean(axis=(0, 1, 2))
        var = x.var(axis=(0, 1, 2))
        if state is not None:
            state.update(mu, var)
    else:
        if state is None:
            raise ShapeError("eval-mode batchnorm needs running statistics")
        mu, var = state.mean, state.var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mu) * inv_std
    out = gamma * xhat + beta
    cache = (xhat, gamma, inv_std.astype(x.dtype), training, x.shape)
    return check_finite(out, "batchnorm"), cache


def batchnorm_backward(dout, cache):
    xhat, gamma, inv_std, training, x_shape = cache
    dgamma = (dout * xhat).sum(axis=(0, 1, 2))
    dbeta = dout.sum(axis=(0, 1, 2))
    dxhat = dout * gamma
    if not training:
        return dxhat * inv_std, dgamma, dbeta
    m = x_shape[0] * x_shape[1] * x_shape[2]
    dx = (inv_std / m) * (
        m * dxhat
        - dxhat.sum(axis=(0, 1, 2))
        - xhat * (dxhat * xhat).sum(axis=(0, 1, 2))
    )
    return dx, dgamma, dbeta


# --- bilinear resize ---------------------------------------------------------

_RESIZE_CACHE: dict[tuple[int, int, int, int], sparse.csr_matrix] = {}


def _resize_matrix(h, w, ho, wo) -> sparse.csr_matrix:
    """Sparse (ho*wo, h*w) bilinear sampling operator, edge-clamped."""
    key = (h, w, ho, wo)
    mat = _RESIZE_CACHE.get(key)
    if mat is not None:
        return mat
    sy = (np.arange(ho) + 0.5) * h / ho - 0.5
    sx = (np.arange(wo) + 0.5) * w / wo - 0.5
    gy, gx = np.meshgrid(sy, sx, indexing="ij")
    y0 = np.floor(gy).astype(np.int64)
    x0 = np.floor(gx).astype(np.int64)
    fy = gy - y0
    fx = gx - x0
    rows, cols, vals = [], [], []
    out_idx = np.arange(ho * wo)
    for dy, dx, wgt in (
        (0, 0, (1 - fy) * (1 - fx)),
        (0, 1, (1 - fy) * fx),
        (1, 0, fy * (1 - fx)),
        (1, 1, fy * fx),
    ):
        yc = np.clip(y0 + dy, 0, h - 1)
        xc = np.clip(x0 + dx, 0, w - 1)
        rows.append(out_idx)
        cols.append((yc * w + xc).ravel())
        vals.append(wgt.ravel())
    mat = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(ho * wo, h * w),
    )
    _RESIZE_CACHE[key] = mat
    return mat


def bilinear_resize_forward(x, out_hw: tuple[int, int]):
    """Differentiable bilinear resize to (ho, wo), align-corners=False."""
    n, h, w, c = x.shape
    ho, wo = out_hw
    mat = _resize_matrix(h, w, ho, wo)
    flat = x.transpose(1, 2, 0, 3).reshape(h * w, n * c)
    out = (mat @ flat).reshape(ho, wo, n, c).transpose(2, 0, 1, 3)
    cache = (mat, x.shape)
    return np.ascontiguousarray(out), cache


def bilinear_resize_backward(dout, cache):
    mat, x_shape = cache
    n, h, w, c = x_shape
    ho, wo = dout.shape[1], dout.shape[2]
    flat = dout.transpose(1, 2, 0, 3).reshape(ho * wo, n * c)
    dx = (mat.T @ flat).reshape(h, w, n, c).transpose(2, 0, 1, 3)
    return np.ascontiguousarray(dx)


def global_mean_forward(x):
    """Spatial mean over H, W: (N, H, W, C) -> (N, C)."""
    n, h, w, c = x.shape
    return x.mean(axis=(1, 2)), (x.shape,)


def global_mean_backward(dout, cache):
    (x_shape,) = cache
    n, h, w, c = x_shape
    return np.broadcast_to(dout[:, None, None, :] / (h * w), x_shape).astype(dout.dtype).copy()
