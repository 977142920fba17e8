"""Brute-force reference implementations, independent of the library's im2col/matmul path."""

import numpy as np


def sequential_matmul(a, b):
    """Plain triple loop; entry (i, j) summed left to right over k in Python floats."""
    m, kk = len(a), len(a[0])
    n = len(b[0])
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for k in range(kk):
                acc = acc + float(a[i][k]) * float(b[k][j])
            out[i, j] = acc
    return out


def direct_conv2d(x, w4, bias=None, stride=1, pad=0):
    """Nested-loop cross-correlation; w4 is (c_o, c_i, k, k)."""
    n, c_i, h, w = x.shape
    c_o, _, k, _ = w4.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    y = np.zeros((n, c_o, oh, ow))
    for b in range(n):
        for o in range(c_o):
            for p in range(oh):
                for q in range(ow):
                    acc = 0.0
                    for i in range(c_i):
                        for ki in range(k):
                            for kj in range(k):
                                r, c = p * stride + ki - pad, q * stride + kj - pad
                                if 0 <= r < h and 0 <= c < w:
                                    acc += x[b, i, r, c] * w4[o, i, ki, kj]
                    y[b, o, p, q] = acc + (0.0 if bias is None else bias[o])
    return y


def numeric_grad(f, x, eps=1e-6):
    """Central differences of scalar f at every coordinate of x."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        plus, minus = x.copy(), x.copy()
        plus[idx] += eps
        minus[idx] -= eps
        g[idx] = (f(plus) - f(minus)) / (2 * eps)
    return g
