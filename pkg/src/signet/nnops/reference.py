"""Naive direct-loop kernels: the reference path and test oracle.

These accumulate in float64 and favor obviousness over speed. They are the
independent second route for every vectorized kernel in
`signet.nnops.kernels` and must stay loop-based; do not "optimize" them
into the same algorithm they are meant to check.
"""

from __future__ import annotations

import math

import numpy as np

from signet.nnops.kernels import ConvSpec, conv_output_size


def _pad_offsets(n: int, kernel: int, stride: int, padding: str) -> int:
    if padding == "valid":
        return 0
    out = -(-n // stride)
    total = max((out - 1) * stride + kernel - n, 0)
    return total // 2


def conv2d_naive(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Direct convolution: one explicit loop per index."""
    b, h, w, ci = x.shape
    kh, kw, _, co = spec.kernel.shape
    s = spec.stride
    oh = conv_output_size(h, kh, s, spec.padding)
    ow = conv_output_size(w, kw, s, spec.padding)
    pt = _pad_offsets(h, kh, s, spec.padding)
    pl = _pad_offsets(w, kw, s, spec.padding)

    x64 = x.astype(np.float64)
    k64 = spec.kernel.astype(np.float64)
    b64 = None if spec.bias is None else spec.bias.astype(np.float64)
    out = np.zeros((b, oh, ow, co), dtype=np.float64)
    for bi in range(b):
        for oy in range(oh):
            for ox in range(ow):
                for oc in range(co):
                    acc = 0.0 if b64 is None else b64[oc]
                    for ky in range(kh):
                        iy = oy * s + ky - pt
                        if iy < 0 or iy >= h:
                            continue
                        for kx in range(kw):
                            ix = ox * s + kx - pl
                            if ix < 0 or ix >= w:
                                continue
                            for c in range(ci):
                                acc += x64[bi, iy, ix, c] * k64[ky, kx, c, oc]
                    out[bi, oy, ox, oc] = acc
    return out


def depthwise_conv2d_naive(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Per-channel direct convolution."""
    b, h, w, ch = x.shape
    kh, kw, _, _ = spec.kernel.shape
    s = spec.stride
    oh = conv_output_size(h, kh, s, spec.padding)
    ow = conv_output_size(w, kw, s, spec.padding)
    pt = _pad_offsets(h, kh, s, spec.padding)
    pl = _pad_offsets(w, kw, s, spec.padding)

    x64 = x.astype(np.float64)
    k64 = spec.kernel[:, :, :, 0].astype(np.float64)
    b64 = None if spec.bias is None else spec.bias.astype(np.float64)
    out = np.zeros((b, oh, ow, ch), dtype=np.float64)
    for bi in range(b):
        for oy in range(oh):
            for ox in range(ow):
                for c in range(ch):
                    acc = 0.0 if b64 is None else b64[c]
                    for ky in range(kh):
                        iy = oy * s + ky - pt
                        if iy < 0 or iy >= h:
                            continue
                        for kx in range(kw):
                            ix = ox * s + kx - pl
                            if ix < 0 or ix >= w:
                                continue
                            acc += x64[bi, iy, ix, c] * k64[ky, kx, c]
                    out[bi, oy, ox, c] = acc
    return out


def dense_naive(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Matmul element by element, exactly-summed inner products."""
    n, k = x.shape
    _, m = weights.shape
    x64 = x.astype(np.float64)
    w64 = weights.astype(np.float64)
    b64 = bias.astype(np.float64)
    out = np.zeros((n, m), dtype=np.float64)
    for i in range(n):
        row = x64[i]
        for j in range(m):
            out[i, j] = math.fsum(row * w64[:, j]) + b64[j]
    return out


def global_avg_pool_naive(x: np.ndarray) -> np.ndarray:
    """Exactly-summed spatial mean per (batch, channel)."""
    b, h, w, c = x.shape
    x64 = x.astype(np.float64)
    out = np.zeros((b, c), dtype=np.float64)
    for bi in range(b):
        for ci in range(c):
            out[bi, ci] = math.fsum(x64[bi, :, :, ci].ravel()) / (h * w)
    return out
