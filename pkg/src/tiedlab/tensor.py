"""Dense float64 tensor primitives.

Feature maps are numpy arrays in N x C x H x W layout, matrices are 2-D
arrays.  Every function here returns fresh arrays and leaves its inputs
untouched.
"""

import numpy as np
from numba import njit

from .errors import ShapeError

DTYPE = np.float64

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def as_tensor4(x, name="x"):
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 4:
        raise ShapeError(f"{name} must be rank 4 (N, C, H, W), got shape {x.shape}")
    if min(x.shape) < 1:
        raise ShapeError(f"{name} has an empty dimension: {x.shape}")
    return x


def as_tensor2(x, name="x"):
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 2:
        raise ShapeError(f"{name} must be rank 2, got shape {x.shape}")
    return x


def _splitmix(z):
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def derive_seed(*parts):
    """Fold integers into one 64-bit seed (splitmix64 finalizer per part)."""
    acc = 0
    for p in parts:
        acc = (acc * 0x9E3779B97F4A7C15 + (int(p) & _MASK) + 1) & _MASK
        acc = int(_splitmix(np.array([acc], dtype=np.uint64))[0])
    return acc


class Rng:
    """Portable splitmix64 generator.

    The i-th draw (counting from 1) is ``mix(seed + i * 0x9E3779B97F4A7C15)``
    with the standard splitmix64 finalizer.  Floats use the top 53 bits, so
    ``uniform()`` yields ``2 * (z >> 11) / 2**53 - 1`` in [-1, 1).
    """

    def __init__(self, seed=0):
        self.seed = int(seed) & _MASK
        self._count = 0

    def spawn(self, *key):
        return Rng(derive_seed(self.seed, *key))

    def next_u64(self, size):
        idx = np.arange(self._count + 1, self._count + 1 + size, dtype=np.uint64)
        self._count += size
        with np.errstate(over="ignore"):
            state = np.uint64(self.seed) + idx * _GOLDEN
            return _splitmix(state)

    def random(self, shape=()):
        """Floats in [0, 1)."""
        size = int(np.prod(shape, dtype=np.int64))
        z = self.next_u64(size) >> np.uint64(11)
        return (z.astype(DTYPE) * 2.0**-53).reshape(shape)

    def uniform(self, shape=(), low=-1.0, high=1.0):
        u = self.random(shape)
        if low == -1.0 and high == 1.0:
            return 2.0 * u - 1.0
        return low + (high - low) * u

    def integers(self, low, high, size=None):
        """Integers in [low, high); scalar when ``size`` is None."""
        n = 1 if size is None else int(np.prod(size))
        u = self.random((n,))
        out = low + np.floor(u * (high - low)).astype(np.int64)
        return int(out[0]) if size is None else out.reshape(size)

    def choice(self, options):
        return options[self.integers(0, len(options))]

    def permutation(self, n):
        keys = self.next_u64(n)
        return np.argsort(keys, kind="stable")


@njit(cache=True)
def _matmul_kernel(a, b):
    m, kk = a.shape
    n = b.shape[1]
    c = np.zeros((m, n))
    for i in range(m):
        for k in range(kk):
            aik = a[i, k]
            for j in range(n):
                c[i, j] += aik * b[k, j]
    return c


def matmul(a, b):
    """Matrix product with a fixed accumulation order.

    Each output entry is accumulated as ((0 + a[i,0]b[0,j]) + a[i,1]b[1,j]) + ...,
    strictly in increasing k with no fused multiply-add, so the same row/column
    pair always produces the same bits regardless of the matrix sizes around it.
    """
    a = as_tensor2(a, "a")
    b = as_tensor2(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return _matmul_kernel(np.ascontiguousarray(a), np.ascontiguousarray(b))


def conv_out_size(size, k, stride, pad):
    span = size + 2 * pad - k
    if span < 0 or span % stride:
        raise ShapeError(
            f"output size ({size} + 2*{pad} - {k}) / {stride} + 1 is not a positive integer"
        )
    return span // stride + 1


def im2col(x, k, stride=1, pad=0):
    """Lower a feature map to a (C*k*k) x (N*H'*W') patch matrix.

    Rows run channel-major, then kernel row, then kernel column.  Columns run
    sample-major, then output row, then output column.  Padding is zeros.
    """
    x = as_tensor4(x)
    n, c, h, w = x.shape
    oh = conv_out_size(h, k, stride, pad)
    ow = conv_out_size(w, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((c, k, k, n, oh, ow), dtype=DTYPE)
    for ki in range(k):
        for kj in range(k):
            patch = xp[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride]
            cols[:, ki, kj] = patch.transpose(1, 0, 2, 3)
    return cols.reshape(c * k * k, n * oh * ow)


def col2im(cols, shape, k, stride=1, pad=0):
    """Adjoint of :func:`im2col`: scatter-add patch columns back to a map of ``shape``."""
    n, c, h, w = shape
    oh = conv_out_size(h, k, stride, pad)
    ow = conv_out_size(w, k, stride, pad)
    cols = as_tensor2(cols, "cols")
    if cols.shape != (c * k * k, n * oh * ow):
        raise ShapeError(
            f"col2im expects {(c * k * k, n * oh * ow)} for shape {tuple(shape)}, got {cols.shape}"
        )
    cols = cols.reshape(c, k, k, n, oh, ow)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=DTYPE)
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] += (
                cols[:, ki, kj].transpose(1, 0, 2, 3)
            )
    return out[:, :, pad:pad + h, pad:pad + w].copy()


def split_channels(x, parts):
    x = as_tensor4(x)
    c = x.shape[1]
    if parts < 1 or c % parts:
        raise ShapeError(f"cannot split c={c} channels into parts={parts} equal blocks")
    step = c // parts
    return [x[:, i * step:(i + 1) * step].copy() for i in range(parts)]


def concat_channels(xs):
    return np.concatenate([as_tensor4(x) for x in xs], axis=1)


def fold_blocks_to_batch(x, b):
    """Move B channel blocks into the batch axis: (N, C, H, W) -> (N*B, C/B, H, W).

    Output sample ``i * b + j`` holds block ``j`` of input sample ``i``.
    """
    x = as_tensor4(x)
    n, c, h, w = x.shape
    if b < 1 or c % b:
        raise ShapeError(f"cannot fold c={c} channels into b={b} blocks")
    return x.reshape(n * b, c // b, h, w).copy()


def unfold_batch_to_blocks(x, b):
    """Inverse of :func:`fold_blocks_to_batch`."""
    x = as_tensor4(x)
    nb, c, h, w = x.shape
    if b < 1 or nb % b:
        raise ShapeError(f"batch of {nb} is not a multiple of b={b}")
    return x.reshape(nb // b, c * b, h, w).copy()


def max_rel_error(actual, expected):
    """Largest absolute deviation scaled by the largest reference magnitude."""
    actual = np.asarray(actual, dtype=DTYPE)
    expected = np.asarray(expected, dtype=DTYPE)
    if actual.shape != expected.shape:
        raise ShapeError(f"cannot compare shapes {actual.shape} and {expected.shape}")
    if actual.size == 0:
        return 0.0
    scale = max(float(np.max(np.abs(expected))), np.finfo(DTYPE).tiny)
    return float(np.max(np.abs(actual - expected))) / scale
