"""Tied block layers: TBC, TGC, TFC and TiedSE.

A tied layer partitions its input channels into B equal blocks and runs every
block through one shared, B-times thinner filter bank; block ``b`` writes
output channels ``[b*c_o/B, (b+1)*c_o/B)``.  Biases belong to the shared bank
and are therefore shared too.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ShapeError
from .nn import ConvSpec, ConvWeights, conv2d, fully_connected, global_avg_pool, relu, sigmoid
from .tensor import (
    DTYPE,
    as_tensor2,
    as_tensor4,
    concat_channels,
    fold_blocks_to_batch,
    split_channels,
    unfold_batch_to_blocks,
)


class TiedConvWeights(ConvWeights):
    """Shared filter bank(s) of a TBC or TGC layer.

    TBC: ``w`` is (c_o/B) x ((c_i/B)*k*k).  TGC: the G/B banks, each
    (c_o/G) x ((c_i/G)*k*k), are stacked row-wise into one (c_o/B)-row matrix.
    ``bias`` has length c_o/B in both cases.
    """


@dataclass
class TfcWeights:
    """Shared (c_o/B) x (c_i/B) matrix of a tied fully connected layer."""

    w: np.ndarray
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        self.w = as_tensor2(self.w, "w")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=DTYPE).reshape(-1)
            if self.bias.shape != (self.w.shape[0],):
                raise ShapeError(f"TFC bias length {self.bias.size} != {self.w.shape[0]}")

    @property
    def size(self):
        return self.w.size + (0 if self.bias is None else self.bias.size)


@dataclass
class TiedSeSpec:
    """Squeeze-and-excitation with both FC layers tied: c -> c/r -> c, B blocks."""

    c: int
    r: int
    blocks: int
    fc1: TfcWeights
    fc2: TfcWeights

    def __post_init__(self):
        if self.c < 1 or self.r < 1 or self.blocks < 1:
            raise ShapeError("TiedSE needs c, r, blocks >= 1")
        if self.c % (self.r * self.blocks):
            raise ShapeError(f"TiedSE needs c % (r*B) == 0, got c={self.c}, r={self.r}, B={self.blocks}")
        hidden, b = self.c // self.r, self.blocks
        if self.fc1.w.shape != (hidden // b, self.c // b):
            raise ShapeError(f"TiedSE fc1 shape {self.fc1.w.shape} != {(hidden // b, self.c // b)}")
        if self.fc2.w.shape != (self.c // b, hidden // b):
            raise ShapeError(f"TiedSE fc2 shape {self.fc2.w.shape} != {(self.c // b, hidden // b)}")

    @property
    def hidden(self):
        return self.c // self.r


def _thin_spec(spec, parts):
    return ConvSpec(spec.c_i // parts, spec.c_o // parts, spec.k, spec.stride, spec.pad,
                    has_bias=spec.has_bias)


def _check_tied(x, spec, wts, kind):
    x = as_tensor4(x)
    if x.shape[1] != spec.c_i:
        raise ShapeError(f"{kind}: input has {x.shape[1]} channels, spec expects c_i={spec.c_i}")
    if wts.w.shape != spec.bank_shape:
        raise ShapeError(f"{kind}: bank shape {wts.w.shape} != {spec.bank_shape} for B={spec.blocks}")
    if spec.has_bias and wts.bias is None:
        raise ShapeError(f"{kind}: spec has_bias=True but weights carry no bias")
    if wts.bias is not None and wts.bias.shape != (spec.bias_len,):
        raise ShapeError(f"{kind}: bias length {wts.bias.size} != c_o/B={spec.bias_len}")
    return x


def _check_tbc_spec(spec):
    if spec.groups != 1:
        raise ShapeError(f"TBC spec must have G=1, got G={spec.groups} (use tgc_forward)")


def tbc_forward_direct(x, spec, wts):
    """Convolve each of the B channel blocks with the shared bank and concatenate."""
    _check_tbc_spec(spec)
    x = _check_tied(x, spec, wts, "tbc")
    thin = _thin_spec(spec, spec.blocks)
    bank = ConvWeights(wts.w, wts.bias)
    return concat_channels([conv2d(xb, thin, bank) for xb in split_channels(x, spec.blocks)])


def tbc_forward_fast(x, spec, wts):
    """Single thin convolution over the block-folded batch (N*B samples)."""
    _check_tbc_spec(spec)
    x = _check_tied(x, spec, wts, "tbc")
    thin = _thin_spec(spec, spec.blocks)
    y = conv2d(fold_blocks_to_batch(x, spec.blocks), thin, ConvWeights(wts.w, wts.bias))
    return unfold_batch_to_blocks(y, spec.blocks)


def tgc_forward(x, spec, wts):
    """Group convolution where each run of B consecutive groups shares one bank."""
    g, b = spec.groups, spec.blocks
    if g % b:
        raise ShapeError(f"tgc needs G % B == 0, got G={g}, B={b}")
    x = _check_tied(x, spec, wts, "tgc")
    thin = _thin_spec(spec, g)
    rows = spec.c_o // g
    outs = []
    for gi, xg in enumerate(split_channels(x, g)):
        s = gi // b
        bias = None if wts.bias is None else wts.bias[s * rows:(s + 1) * rows]
        outs.append(conv2d(xg, thin, ConvWeights(wts.w[s * rows:(s + 1) * rows], bias)))
    return concat_channels(outs)


def tied_conv_forward(x, spec, wts):
    """Dispatch a ConvSpec with B > 1 (or B == 1) to the tied kernel it describes."""
    if spec.groups > 1:
        return tgc_forward(x, spec, wts)
    return tbc_forward_fast(x, spec, wts)


def _tfc_check(x, blocks, wts):
    rows, single = (np.asarray(x, dtype=DTYPE), False)
    if rows.ndim == 1:
        rows, single = rows[None, :], True
    if rows.ndim != 2:
        raise ShapeError(f"tfc input must be a vector or (n, c_i) matrix, got {rows.shape}")
    c_i = rows.shape[1]
    if blocks < 1 or c_i % blocks:
        raise ShapeError(f"tfc: c_i={c_i} not divisible by B={blocks}")
    if wts.w.shape[1] != c_i // blocks:
        raise ShapeError(f"tfc: weight has {wts.w.shape[1]} columns, expected c_i/B={c_i // blocks}")
    return rows, single


def tfc_forward(x, blocks, wts):
    """Apply the shared thin matrix to each of the B input blocks and concatenate."""
    rows, single = _tfc_check(x, blocks, wts)
    n, c_i = rows.shape
    folded = rows.reshape(n * blocks, c_i // blocks)
    y = fully_connected(folded, wts.w, wts.bias).reshape(n, -1)
    return y[0] if single else y


def tied_se_forward(x, spec):
    """Channel gating s = sigmoid(tfc2(relu(tfc1(pool(x))))) applied per sample."""
    x = as_tensor4(x)
    if x.shape[1] != spec.c:
        raise ShapeError(f"TiedSE: input has {x.shape[1]} channels, spec expects c={spec.c}")
    z = global_avg_pool(x)
    s = sigmoid(tfc_forward(relu(tfc_forward(z, spec.blocks, spec.fc1)), spec.blocks, spec.fc2))
    return x * s[:, :, None, None]


def untied_spec(spec):
    """The untied layer a tied ConvSpec expands to (TBC -> conv, TGC -> group conv)."""
    return spec.with_(blocks=1)


def _bank_rows(spec):
    """Rows of the stacked bank feeding each partition of the untied expansion."""
    parts, b = spec.partitions, spec.blocks
    rows = spec.c_o // parts
    if spec.groups > 1:
        return [slice((p // b) * rows, (p // b + 1) * rows) for p in range(parts)]
    return [slice(0, rows)] * parts


def expand_conv(spec, wts):
    """Untied weights reproducing a TBC/TGC layer exactly.

    TBC banks land on the block diagonal of a c_o x c_i x k x k tensor (zeros
    elsewhere); TGC banks are replicated across their tied groups.
    """
    if spec.groups > 1 and spec.groups % spec.blocks:
        raise ShapeError(f"tgc needs G % B == 0, got G={spec.groups}, B={spec.blocks}")
    if wts.w.shape != spec.bank_shape:
        raise ShapeError(f"bank shape {wts.w.shape} != {spec.bank_shape}")
    parts = spec.partitions
    rows, kk = spec.c_o // parts, spec.k * spec.k
    slices = _bank_rows(spec)
    bias = None
    if wts.bias is not None:
        bias = np.concatenate([wts.bias[s] for s in slices])
    if spec.groups > 1:
        w = np.concatenate([wts.w[s] for s in slices], axis=0)
        return ConvWeights(w, bias)
    ci = spec.c_i // parts
    w = np.zeros((spec.c_o, spec.c_i * kk), dtype=DTYPE)
    for p, s in enumerate(slices):
        w[p * rows:(p + 1) * rows, p * ci * kk:(p + 1) * ci * kk] = wts.w[s]
    return ConvWeights(w, bias)


def expand_fc(blocks, wts):
    """Block-diagonal (c_o x c_i) matrix and replicated bias reproducing a TFC layer."""
    r, c = wts.w.shape
    w = np.zeros((r * blocks, c * blocks), dtype=DTYPE)
    for b in range(blocks):
        w[b * r:(b + 1) * r, b * c:(b + 1) * c] = wts.w
    bias = None if wts.bias is None else np.tile(wts.bias, blocks)
    return w, bias


def expand_tied_to_untied(spec, wts):
    """Untied equivalent of a tied layer.

    ``spec`` is a ConvSpec for TBC/TGC banks, or the block count B for TFC weights.
    """
    if isinstance(wts, TfcWeights):
        return expand_fc(int(spec), wts)
    return expand_conv(spec, wts)


def sum_tied_copies(spec, untied):
    """Contract untied conv weights (or their gradient) onto the tied bank by summing copies.

    This is the adjoint of :func:`expand_conv`: the gradient of a tied bank is the
    sum of the gradients of its copies in the untied expansion.
    """
    parts = spec.partitions
    rows, kk = spec.c_o // parts, spec.k * spec.k
    ci = spec.c_i // parts
    w = np.zeros(spec.bank_shape, dtype=DTYPE)
    bias = None if untied.bias is None else np.zeros(spec.bias_len, dtype=DTYPE)
    for p, s in enumerate(_bank_rows(spec)):
        if spec.groups > 1:
            w[s] += untied.w[p * rows:(p + 1) * rows]
        else:
            w[s] += untied.w[p * rows:(p + 1) * rows, p * ci * kk:(p + 1) * ci * kk]
        if bias is not None:
            bias[s] += untied.bias[p * rows:(p + 1) * rows]
    return TiedConvWeights(w, bias)


def sum_tied_fc_copies(blocks, w_full, bias_full=None):
    r, c = w_full.shape[0] // blocks, w_full.shape[1] // blocks
    w = np.zeros((r, c), dtype=DTYPE)
    for b in range(blocks):
        w += w_full[b * r:(b + 1) * r, b * c:(b + 1) * c]
    bias = None
    if bias_full is not None:
        bias = np.asarray(bias_full, dtype=DTYPE).reshape(blocks, r).sum(axis=0)
    return TfcWeights(w, bias)


def take_tied_bank(spec, untied):
    """Recover the tied bank from an untied expansion by reading its first copy of each bank."""
    parts = spec.partitions
    rows, kk = spec.c_o // parts, spec.k * spec.k
    ci = spec.c_i // parts
    w = np.zeros(spec.bank_shape, dtype=DTYPE)
    bias = None if untied.bias is None else np.zeros(spec.bias_len, dtype=DTYPE)
    seen = set()
    for p, s in enumerate(_bank_rows(spec)):
        if s.start in seen:
            continue
        seen.add(s.start)
        if spec.groups > 1:
            w[s] = untied.w[p * rows:(p + 1) * rows]
        else:
            w[s] = untied.w[p * rows:(p + 1) * rows, p * ci * kk:(p + 1) * ci * kk]
        if bias is not None:
            bias[s] = untied.bias[p * rows:(p + 1) * rows]
    return TiedConvWeights(w, bias)
