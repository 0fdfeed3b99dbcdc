"""Neural-net operations composed from (or recorded alongside) tensor primitives.

Everything here works on float64 `Tensor`s. Softmax, layer norm, cosine
similarity and friends are built from primitive ops so their backward rules
come for free; the convolutions are single tape records with hand-written,
vectorized backward passes (a python loop over kernel taps only).
"""

from __future__ import annotations

from typing import Optional, Sequence, Union

import numpy as np

from .tensor import (
    DimensionError,
    Tensor,
    _emit,
    as_tensor,
    concat,
    constant,
    getitem,
    matmul,
    relu,
    reshape,
    stack,
    texp,
    tlog,
    tmean,
    transpose,
    tsqrt,
    tsum,
)

__all__ = [
    "linear",
    "softmax_rows",
    "log_softmax_rows",
    "cross_entropy_with_logits",
    "layer_norm",
    "l2_normalize_rows",
    "pairwise_cosine",
    "cosine_similarity",
    "conv1d_temporal",
    "conv2d",
    "avg_pool_axis",
]


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x @ weight (+ bias). weight is (in, out); bias broadcasts on the last axis."""
    out = matmul(x, weight)
    if bias is not None:
        out = out + bias
    return out


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax along the last axis, shift-stabilized."""
    shift = constant(np.max(x.data, axis=-1, keepdims=True))
    e = texp(x - shift)
    return e / tsum(e, axis=-1, keepdims=True)


def log_softmax_rows(x: Tensor) -> Tensor:
    shift = constant(np.max(x.data, axis=-1, keepdims=True))
    z = x - shift
    return z - tlog(tsum(texp(z), axis=-1, keepdims=True))


def cross_entropy_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer `labels` under row softmax."""
    labels = np.asarray(labels)
    if logits.data.ndim != 2:
        raise DimensionError(f"expected (N, classes) logits, got {logits.data.shape}")
    n = logits.data.shape[0]
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} mismatches batch {n}")
    ncls = logits.data.shape[1]
    if n and (labels.min() < 0 or labels.max() >= ncls):
        raise DimensionError(f"label out of range for {ncls} classes")
    logp = log_softmax_rows(logits)
    picked = getitem(logp, (np.arange(n), labels))
    return -tmean(picked)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = tmean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = tmean(centered * centered, axis=-1, keepdims=True)
    return centered / tsqrt(var + eps) * gain + bias


def l2_normalize_rows(x: Tensor) -> Tensor:
    """Scale each last-axis vector to unit norm; all-zero vectors stay zero.

    The zero-vector case also has zero gradient, so downstream cosine
    similarities involving a degenerate row are flat 0 rather than NaN.
    """
    xd = x.data
    norm = np.sqrt((xd * xd).sum(axis=-1, keepdims=True))
    safe = np.where(norm == 0.0, 1.0, norm)
    out = xd / safe
    nonzero = norm != 0.0

    def bwd(g):
        # d(x/|x|)/dx applied to g: (g - (g.y) y) / |x|, zeroed on zero rows
        dot = (g * out).sum(axis=-1, keepdims=True)
        gx = (g - dot * out) / safe
        return (gx * nonzero,)

    return _emit("l2_normalize_rows", out, (x,), bwd)


def pairwise_cosine(a: Tensor, b: Tensor) -> Tensor:
    """All-pairs cosine similarity between rows of `a` (n, d) and `b` (m, d)."""
    an = l2_normalize_rows(a)
    bn = l2_normalize_rows(b)
    return matmul(an, transpose(bn, (1, 0)))


def cosine_similarity(u: Tensor, v: Tensor) -> Tensor:
    """Cosine similarity along the last axis (broadcasting leading axes).

    Either vector having zero norm gives similarity 0 (with zero gradient).
    """
    un = l2_normalize_rows(u)
    vn = l2_normalize_rows(v)
    return tsum(un * vn, axis=-1)


def avg_pool_axis(x: Tensor, axis: int) -> Tensor:
    """Mean over one axis (global average pooling)."""
    return tmean(x, axis=axis)


def _pair(v) -> tuple:
    if isinstance(v, (tuple, list)):
        if len(v) != 2:
            raise DimensionError(f"expected a pair, got {v!r}")
        return (int(v[0]), int(v[1]))
    return (int(v), int(v))


def _same_pad(length: int, k: int) -> tuple:
    left = (k - 1) // 2
    return left, k - 1 - left


def conv1d_temporal(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
                    stride: int = 1, padding: Union[str, int] = "same") -> Tensor:
    """1-D convolution over the middle (time) axis.

    x: (B, T, Cin); weight: (k, Cin, Cout); bias: (Cout,) or None.
    padding is 'same', 'valid', or an int applied to both ends.
    Returns (B, T_out, Cout).
    """
    if x.data.ndim != 3 or weight.data.ndim != 3:
        raise DimensionError("conv1d_temporal wants x (B,T,Cin) and weight (k,Cin,Cout)")
    B, T, Cin = x.data.shape
    k, wc, Cout = weight.data.shape
    if wc != Cin:
        raise DimensionError(f"channel mismatch: x has {Cin}, weight has {wc}")
    if padding == "same":
        if stride != 1:
            raise DimensionError("'same' padding assumes stride 1")
        pl, pr = _same_pad(T, k)
    elif padding == "valid":
        pl = pr = 0
    else:
        pl = pr = int(padding)
    Tp = T + pl + pr
    if Tp < k:
        raise DimensionError(f"kernel {k} longer than padded length {Tp}")
    T_out = (Tp - k) // stride + 1

    xp = np.pad(x.data, ((0, 0), (pl, pr), (0, 0)))
    wd = weight.data
    out = np.zeros((B, T_out, Cout))
    for j in range(k):
        out += xp[:, j : j + stride * T_out : stride, :] @ wd[j]
    if bias is not None:
        out = out + bias.data

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bwd(g):
        gx = gw = gb = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, j : j + stride * T_out : stride, :] += g @ wd[j].T
            gx = gxp[:, pl : pl + T, :]
        if weight.requires_grad:
            gw = np.empty_like(wd)
            for j in range(k):
                sl = xp[:, j : j + stride * T_out : stride, :]
                gw[j] = np.einsum("bti,bto->io", sl, g)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 1))
        if bias is None:
            return gx, gw
        return gx, gw, gb

    return _emit("conv1d", out, inputs, bwd)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride=1, padding: Union[str, int, tuple] = "valid") -> Tensor:
    """2-D convolution, channels-first.

    x: (B, Cin, H, W); weight: (Cout, Cin, kh, kw); bias: (Cout,) or None.
    stride is an int or (sh, sw); padding is 'valid', 'same' (stride-1 only),
    an int, or an (ph, pw) pair. Returns (B, Cout, H_out, W_out).
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise DimensionError("conv2d wants x (B,Cin,H,W) and weight (Cout,Cin,kh,kw)")
    B, Cin, H, W = x.data.shape
    Cout, wc, kh, kw = weight.data.shape
    if wc != Cin:
        raise DimensionError(f"channel mismatch: x has {Cin}, weight has {wc}")
    sh, sw = _pair(stride)
    if padding == "same":
        if (sh, sw) != (1, 1):
            raise DimensionError("'same' padding assumes stride 1")
        pt, pb = _same_pad(H, kh)
        pl, pr = _same_pad(W, kw)
    elif padding == "valid":
        pt = pb = pl = pr = 0
    else:
        ph, pw = _pair(padding)
        pt = pb = ph
        pl = pr = pw
    Hp, Wp = H + pt + pb, W + pl + pr
    if Hp < kh or Wp < kw:
        raise DimensionError(f"kernel ({kh},{kw}) exceeds padded input ({Hp},{Wp})")
    H_out = (Hp - kh) // sh + 1
    W_out = (Wp - kw) // sw + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    wd = weight.data
    # im2col with channels leading so both the forward and the two backward
    # contractions become single BLAS matmuls
    cols = np.empty((Cin, kh, kw, B, H_out, W_out))
    xp_cf = xp.transpose(1, 0, 2, 3)  # (Cin, B, Hp, Wp) view
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp_cf[:, :, i : i + sh * H_out : sh,
                                  j : j + sw * W_out : sw]
    cols2 = cols.reshape(Cin * kh * kw, B * H_out * W_out)
    out2 = wd.reshape(Cout, Cin * kh * kw) @ cols2
    out = np.ascontiguousarray(
        out2.reshape(Cout, B, H_out, W_out).transpose(1, 0, 2, 3))
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bwd(g):
        gx = gw = gb = None
        g2 = g.transpose(1, 0, 2, 3).reshape(Cout, B * H_out * W_out)
        if x.requires_grad:
            gcols = (wd.reshape(Cout, -1).T @ g2).reshape(cols.shape)
            gxp = np.zeros_like(xp)
            gxp_cf = gxp.transpose(1, 0, 2, 3)
            for i in range(kh):
                for j in range(kw):
                    gxp_cf[:, :, i : i + sh * H_out : sh,
                           j : j + sw * W_out : sw] += gcols[:, i, j]
            gx = gxp[:, :, pt : pt + H, pl : pl + W]
        if weight.requires_grad:
            gw = (g2 @ cols2.T).reshape(Cout, Cin, kh, kw)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if bias is None:
            return gx, gw
        return gx, gw, gb

    return _emit("conv2d", out, inputs, bwd)
