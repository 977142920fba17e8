"""Untied reference layers: convolution, group convolution, FC, pooling, loss."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InputError, ShapeError
from .tensor import (
    DTYPE,
    as_tensor2,
    as_tensor4,
    concat_channels,
    conv_out_size,
    im2col,
    matmul,
    split_channels,
)


@dataclass(frozen=True)
class ConvSpec:
    """A possibly grouped, possibly tied square convolution.

    ``groups`` is the group count G, ``blocks`` the tie count B.  G=1, B=1 is a
    standard convolution; G>1, B=1 group convolution; G=1, B>1 tied block
    convolution; G>1, B>1 tied block group convolution.
    """

    c_i: int
    c_o: int
    k: int = 1
    stride: int = 1
    pad: int = 0
    groups: int = 1
    blocks: int = 1
    has_bias: bool = False

    def __post_init__(self):
        for name in ("c_i", "c_o", "k", "stride", "groups", "blocks"):
            if int(getattr(self, name)) < 1:
                raise ShapeError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.pad < 0:
            raise ShapeError(f"pad must be >= 0, got {self.pad}")
        g, b = self.groups, self.blocks
        if self.c_i % g or self.c_o % g:
            raise ShapeError(f"c_i={self.c_i} and c_o={self.c_o} must be divisible by groups G={g}")
        if self.c_i % b or self.c_o % b:
            raise ShapeError(f"c_i={self.c_i} and c_o={self.c_o} must be divisible by blocks B={b}")
        if g > 1 and b > 1 and g % b:
            raise ShapeError(f"groups G={g} must be divisible by blocks B={b}")

    @property
    def partitions(self):
        """Channel partitions each filter sees: G for grouped specs, otherwise B."""
        return self.groups if self.groups > 1 else self.blocks

    @property
    def bank_shape(self):
        """Shape of the stored filter matrix (rows = distinct filters)."""
        return (self.c_o // self.blocks, (self.c_i // self.partitions) * self.k * self.k)

    @property
    def bias_len(self):
        return self.c_o // self.blocks

    def out_hw(self, h, w):
        return (conv_out_size(h, self.k, self.stride, self.pad),
                conv_out_size(w, self.k, self.stride, self.pad))

    def with_(self, **changes):
        fields = dict(self.__dict__)
        fields.update(changes)
        return ConvSpec(**fields)


@dataclass
class ConvWeights:
    """Filter matrix ``w`` (filters x in_per_filter*k*k) and optional bias."""

    w: np.ndarray
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        self.w = as_tensor2(self.w, "w")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=DTYPE).reshape(-1)

    @property
    def size(self):
        return self.w.size + (0 if self.bias is None else self.bias.size)


def _check_bias(spec, wts, expected):
    if spec.has_bias and wts.bias is None:
        raise ShapeError("spec has_bias=True but weights carry no bias")
    if wts.bias is not None and wts.bias.shape != (expected,):
        raise ShapeError(f"bias length {wts.bias.size} != {expected}")


def _conv_core(x, w, k, stride, pad, bias):
    n, _, h, wd = x.shape
    oh = conv_out_size(h, k, stride, pad)
    ow = conv_out_size(wd, k, stride, pad)
    y = matmul(w, im2col(x, k, stride, pad))
    y = y.reshape(w.shape[0], n, oh, ow).transpose(1, 0, 2, 3)
    if bias is not None:
        y = y + bias[None, :, None, None]
    return np.ascontiguousarray(y)


def conv2d(x, spec, wts):
    """Standard convolution via im2col + matmul: y[n,o] = sum_i x[n,i] * w[o,i] + b[o]."""
    x = as_tensor4(x)
    if spec.groups != 1 or spec.blocks != 1:
        raise ShapeError(f"conv2d needs G=1 and B=1, got G={spec.groups}, B={spec.blocks}")
    if x.shape[1] != spec.c_i:
        raise ShapeError(f"input has {x.shape[1]} channels, spec expects c_i={spec.c_i}")
    expected = (spec.c_o, spec.c_i * spec.k * spec.k)
    if wts.w.shape != expected:
        raise ShapeError(f"conv2d weight shape {wts.w.shape} != {expected}")
    _check_bias(spec, wts, spec.c_o)
    return _conv_core(x, wts.w, spec.k, spec.stride, spec.pad, wts.bias)


def group_conv2d(x, spec, wts):
    """G independent convolutions over contiguous channel groups, outputs concatenated."""
    x = as_tensor4(x)
    g = spec.groups
    if spec.blocks != 1:
        raise ShapeError(f"group_conv2d needs B=1, got B={spec.blocks}")
    if x.shape[1] != spec.c_i:
        raise ShapeError(f"input has {x.shape[1]} channels, spec expects c_i={spec.c_i}")
    expected = (spec.c_o, (spec.c_i // g) * spec.k * spec.k)
    if wts.w.shape != expected:
        raise ShapeError(f"group_conv2d weight shape {wts.w.shape} != {expected}")
    _check_bias(spec, wts, spec.c_o)
    if g == 1:
        return conv2d(x, spec, wts)
    sub = spec.with_(c_i=spec.c_i // g, c_o=spec.c_o // g, groups=1)
    rows = spec.c_o // g
    outs = []
    for gi, xg in enumerate(split_channels(x, g)):
        bias = None if wts.bias is None else wts.bias[gi * rows:(gi + 1) * rows]
        outs.append(conv2d(xg, sub, ConvWeights(wts.w[gi * rows:(gi + 1) * rows], bias)))
    return concat_channels(outs)


def _as_rows(x, name="x"):
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim != 2:
        raise ShapeError(f"{name} must be a vector or an (n, features) matrix, got {x.shape}")
    return x, False


def fully_connected(x, w, bias=None):
    """y = W x + b for a vector, or row-wise for an (n, c_i) batch."""
    w = as_tensor2(w, "w")
    rows, single = _as_rows(x)
    if rows.shape[1] != w.shape[1]:
        raise ShapeError(f"fully_connected: input length {rows.shape[1]} != W columns {w.shape[1]}")
    y = matmul(rows, np.ascontiguousarray(w.T))
    if bias is not None:
        bias = np.asarray(bias, dtype=DTYPE).reshape(-1)
        if bias.shape != (w.shape[0],):
            raise ShapeError(f"bias length {bias.size} != {w.shape[0]}")
        y = y + bias
    return y[0] if single else y


def global_avg_pool(x):
    """Per-sample, per-channel spatial mean: (N, C, H, W) -> (N, C)."""
    return as_tensor4(x).mean(axis=(2, 3))


def relu(x):
    return np.maximum(np.asarray(x, dtype=DTYPE), 0.0)


def sigmoid(x):
    x = np.asarray(x, dtype=DTYPE)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over rows and its gradient (softmax - onehot) / n."""
    logits = as_tensor2(logits, "logits")
    labels = np.asarray(labels).reshape(-1)
    n, classes = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"{labels.size} labels for {n} rows of logits")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise InputError(f"labels must lie in [0, {classes}), got range [{labels.min()}, {labels.max()}]")
    labels = labels.astype(np.int64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(lse - shifted[rows, labels]))
    grad = np.exp(shifted - lse[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / n
