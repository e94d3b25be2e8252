"""Neural-network kernels on (B, C, H, W) tensors: convolution, pooling,
nearest upsampling, group normalization and the two explicit bias broadcasts.

Convolutions run stride 1 with "same" zero padding, implemented as im2col plus
one matmul per layer; the backward pass reuses the saved column matrix.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, _accumulate, _result


def _require_4d(x: Tensor, op: str) -> None:
    if x.data.ndim != 4:
        raise ValueError(f"{op}: expects (B, C, H, W), got shape {x.data.shape}")


def _im2col(padded: np.ndarray, k: int, out_h: int, out_w: int) -> np.ndarray:
    """(B, C, Hp, Wp) -> (B*out_h*out_w, C*k*k) patch matrix, row-major over (b, y, x)."""
    b, c = padded.shape[:2]
    s0, s1, s2, s3 = padded.strides
    windows = np.lib.stride_tricks.as_strided(
        padded, (b, c, out_h, out_w, k, k), (s0, s1, s2, s3, s2, s3)
    )
    return np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(
        b * out_h * out_w, c * k * k
    )


def _col2im(dcols: np.ndarray, b: int, c: int, h: int, w: int, k: int) -> np.ndarray:
    """Scatter-add patch gradients back onto the padded input."""
    hp, wp = h + k - 1, w + k - 1
    dpadded = np.zeros((b, c, hp, wp), dtype=dcols.dtype)
    patches = dcols.reshape(b, h, w, c, k, k).transpose(0, 3, 1, 2, 4, 5)
    for i in range(k):
        for j in range(k):
            dpadded[:, :, i : i + h, j : j + w] += patches[:, :, :, :, i, j]
    return dpadded


def conv2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Same-padded stride-1 convolution.

    x (B, Cin, H, W), weight (Cout, Cin, k, k) with odd k, bias (Cout,).
    Output (B, Cout, H, W).
    """
    _require_4d(x, "conv2d")
    if weight.data.ndim != 4 or weight.data.shape[2] != weight.data.shape[3]:
        raise ValueError(f"conv2d: bad weight shape {weight.data.shape}")
    bsz, cin, h, w = x.data.shape
    cout, wcin, k, _ = weight.data.shape
    if wcin != cin:
        raise ValueError(f"conv2d: input has {cin} channels, weight expects {wcin}")
    if k % 2 != 1:
        raise ValueError(f"conv2d: kernel size must be odd, got {k}")
    if bias.data.shape != (cout,):
        raise ValueError(f"conv2d: bias shape {bias.data.shape} != ({cout},)")
    pad = k // 2

    if pad:
        padded = np.zeros((bsz, cin, h + 2 * pad, w + 2 * pad), dtype=x.data.dtype)
        padded[:, :, pad : pad + h, pad : pad + w] = x.data
    else:
        padded = x.data
    cols = _im2col(padded, k, h, w)
    wmat = weight.data.reshape(cout, cin * k * k).T
    out = cols @ wmat + bias.data
    out = out.reshape(bsz, h, w, cout).transpose(0, 3, 1, 2)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(bsz * h * w, cout)
        _accumulate(bias, gmat.sum(axis=0))
        _accumulate(weight, (cols.T @ gmat).T.reshape(cout, cin, k, k))
        if x.requires_grad:
            dcols = gmat @ wmat.T
            dpadded = _col2im(dcols, bsz, cin, h, w, k)
            dx = dpadded[:, :, pad : pad + h, pad : pad + w] if pad else dpadded
            _accumulate(x, dx)

    return _result(np.ascontiguousarray(out), (x, weight, bias), backward)


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 average pooling; spatial dims must be even."""
    _require_4d(x, "avg_pool2")
    b, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2: spatial dims must be even, got {h}x{w}")
    out = x.data.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(g):
        dx = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * x.data.dtype.type(0.25)
        _accumulate(x, dx)

    return _result(out, (x,), backward)


def upsample_nearest2(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling."""
    _require_4d(x, "upsample_nearest2")
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(g):
        b, c, h2, w2 = g.shape
        _accumulate(x, g.reshape(b, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)))

    return _result(out, (x,), backward)


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    """Normalize per (sample, channel group), then apply per-channel affine."""
    _require_4d(x, "group_norm")
    b, c, h, w = x.data.shape
    if c % groups:
        raise ValueError(f"group_norm: {c} channels not divisible into {groups} groups")
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ValueError("group_norm: affine params must have shape (channels,)")
    cg = c // groups
    n = cg * h * w
    xg = x.data.reshape(b, groups, cg, h * w)
    mu = xg.mean(axis=(2, 3), keepdims=True)
    var = xg.var(axis=(2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = (xg - mu) * inv_std
    gam = gamma.data.reshape(1, groups, cg, 1)
    out = (xhat * gam + beta.data.reshape(1, groups, cg, 1)).reshape(b, c, h, w)

    def backward(g):
        gg = g.reshape(b, groups, cg, h * w)
        _accumulate(gamma, (gg * xhat).sum(axis=(0, 3)).reshape(c))
        _accumulate(beta, gg.sum(axis=(0, 3)).reshape(c))
        if x.requires_grad:
            dxhat = gg * gam
            # standard normalization backward over each group of n elements
            dx = (
                inv_std
                / n
                * (
                    n * dxhat
                    - dxhat.sum(axis=(2, 3), keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=(2, 3), keepdims=True)
                )
            )
            _accumulate(x, dx.reshape(b, c, h, w).astype(x.data.dtype, copy=False))

    return _result(out, (x, gamma, beta), backward)


def channel_bias(x: Tensor, v: Tensor) -> Tensor:
    """Add a per-(sample, channel) bias v (B, C) across the spatial dims of x (B, C, H, W)."""
    _require_4d(x, "channel_bias")
    if v.data.ndim != 2 or v.data.shape != x.data.shape[:2]:
        raise ValueError(f"channel_bias: bias shape {v.data.shape} != {x.data.shape[:2]}")

    def backward(g):
        _accumulate(x, g)
        _accumulate(v, g.sum(axis=(2, 3)))

    return _result(x.data + v.data[:, :, None, None], (x, v), backward)


def row_bias(x: Tensor, v: Tensor) -> Tensor:
    """Add a feature bias v (F,) to every row of x (B, F)."""
    if x.data.ndim != 2:
        raise ValueError(f"row_bias: expects (B, F), got {x.data.shape}")
    if v.data.shape != (x.data.shape[1],):
        raise ValueError(f"row_bias: bias shape {v.data.shape} != ({x.data.shape[1]},)")

    def backward(g):
        _accumulate(x, g)
        _accumulate(v, g.sum(axis=0))

    return _result(x.data + v.data, (x, v), backward)
