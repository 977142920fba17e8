"""Reverse-mode gradients (vector-Jacobian products) for every layer kind.

Each ``*_backward`` takes the forward inputs plus the upstream gradient and
returns ``(grad_input, grad_weight, grad_bias)``; weightless layers return only
the input gradient.  Conv input gradients go through :func:`col2im`.
"""

import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .nn import global_avg_pool, sigmoid, softmax_cross_entropy
from .tensor import (
    DTYPE,
    Rng,
    as_tensor4,
    col2im,
    fold_blocks_to_batch,
    im2col,
    matmul,
    split_channels,
    unfold_batch_to_blocks,
)
from .tied import _thin_spec, tfc_forward


def _check_grad(gy, shape, kind):
    gy = np.asarray(gy, dtype=DTYPE)
    if gy.shape != tuple(shape):
        raise ShapeError(f"{kind}: grad_out shape {gy.shape} != output shape {tuple(shape)}")
    return gy


def _conv_core_backward(x, w, k, stride, pad, has_bias, gy):
    n = x.shape[0]
    c_o = w.shape[0]
    oh, ow = gy.shape[2], gy.shape[3]
    cols = im2col(x, k, stride, pad)
    g = np.ascontiguousarray(gy.transpose(1, 0, 2, 3)).reshape(c_o, n * oh * ow)
    gw = matmul(g, cols.T)
    gx = col2im(matmul(w.T, g), x.shape, k, stride, pad)
    gb = gy.sum(axis=(0, 2, 3)) if has_bias else None
    return gx, gw, gb


def _out_shape(x, spec):
    oh, ow = spec.out_hw(x.shape[2], x.shape[3])
    return (x.shape[0], spec.c_o, oh, ow)


def conv2d_backward(x, spec, wts, grad_out):
    x = as_tensor4(x)
    gy = _check_grad(grad_out, _out_shape(x, spec), "conv2d")
    return _conv_core_backward(x, wts.w, spec.k, spec.stride, spec.pad, wts.bias is not None, gy)


def group_conv2d_backward(x, spec, wts, grad_out):
    x = as_tensor4(x)
    gy = _check_grad(grad_out, _out_shape(x, spec), "group_conv2d")
    g = spec.groups
    rows = spec.c_o // g
    gxs, gws, gbs = [], [], []
    for gi, (xg, gyg) in enumerate(zip(split_channels(x, g), split_channels(gy, g))):
        gx, gw, gb = _conv_core_backward(xg, wts.w[gi * rows:(gi + 1) * rows], spec.k,
                                         spec.stride, spec.pad, wts.bias is not None, gyg)
        gxs.append(gx)
        gws.append(gw)
        gbs.append(gb)
    gb = None if wts.bias is None else np.concatenate(gbs)
    return np.concatenate(gxs, axis=1), np.concatenate(gws, axis=0), gb


def tbc_backward(x, spec, wts, grad_out):
    """Backward through the folded batch; the bank gradient sums over all blocks."""
    x = as_tensor4(x)
    gy = _check_grad(grad_out, _out_shape(x, spec), "tbc")
    b = spec.blocks
    gx, gw, gb = _conv_core_backward(fold_blocks_to_batch(x, b), wts.w, spec.k, spec.stride,
                                     spec.pad, wts.bias is not None, fold_blocks_to_batch(gy, b))
    return unfold_batch_to_blocks(gx, b), gw, gb


def tgc_backward(x, spec, wts, grad_out):
    x = as_tensor4(x)
    gy = _check_grad(grad_out, _out_shape(x, spec), "tgc")
    g, b = spec.groups, spec.blocks
    rows = spec.c_o // g
    gw = np.zeros_like(wts.w)
    gb = None if wts.bias is None else np.zeros_like(wts.bias)
    gxs = []
    for gi, (xg, gyg) in enumerate(zip(split_channels(x, g), split_channels(gy, g))):
        s = slice((gi // b) * rows, (gi // b + 1) * rows)
        gx, gwi, gbi = _conv_core_backward(xg, wts.w[s], spec.k, spec.stride, spec.pad,
                                           gb is not None, gyg)
        gxs.append(gx)
        gw[s] += gwi
        if gb is not None:
            gb[s] += gbi
    return np.concatenate(gxs, axis=1), gw, gb


def tied_conv_backward(x, spec, wts, grad_out):
    if spec.groups > 1:
        return tgc_backward(x, spec, wts, grad_out)
    return tbc_backward(x, spec, wts, grad_out)


def fc_backward(x, w, bias, grad_out):
    x = np.asarray(x, dtype=DTYPE)
    single = x.ndim == 1
    rows = x[None, :] if single else x
    gy = np.asarray(grad_out, dtype=DTYPE).reshape(rows.shape[0], w.shape[0])
    gx = matmul(gy, w)
    gw = matmul(np.ascontiguousarray(gy.T), rows)
    gb = None if bias is None else gy.sum(axis=0)
    return (gx[0] if single else gx), gw, gb


def tfc_backward(x, blocks, wts, grad_out):
    x = np.asarray(x, dtype=DTYPE)
    single = x.ndim == 1
    rows = x[None, :] if single else x
    n, c_i = rows.shape
    gy = np.asarray(grad_out, dtype=DTYPE).reshape(n * blocks, -1)
    gx, gw, gb = fc_backward(rows.reshape(n * blocks, c_i // blocks), wts.w, wts.bias, gy)
    gx = gx.reshape(n, c_i)
    return (gx[0] if single else gx), gw, gb


def relu_backward(x, grad_out):
    """Subgradient convention: the derivative at exactly 0 is 0."""
    return np.asarray(grad_out, dtype=DTYPE) * (np.asarray(x) > 0)


def sigmoid_backward(x, grad_out):
    s = sigmoid(x)
    return np.asarray(grad_out, dtype=DTYPE) * s * (1.0 - s)


def global_avg_pool_backward(x, grad_out):
    x = as_tensor4(x)
    n, c, h, w = x.shape
    gy = _check_grad(grad_out, (n, c), "global_avg_pool")
    return np.broadcast_to(gy[:, :, None, None] / (h * w), x.shape).copy()


def tied_se_backward(x, spec, grad_out):
    """Returns (grad_input, (grad_w1, grad_w2), (grad_b1, grad_b2))."""
    x = as_tensor4(x)
    gy = _check_grad(grad_out, x.shape, "tied_se")
    b = spec.blocks
    z = global_avg_pool(x)
    h1 = tfc_forward(z, b, spec.fc1)
    a = np.maximum(h1, 0.0)
    s = sigmoid(tfc_forward(a, b, spec.fc2))
    gs = (gy * x).sum(axis=(2, 3))
    gh2 = gs * s * (1.0 - s)
    ga, gw2, gb2 = tfc_backward(a, b, spec.fc2, gh2)
    gz, gw1, gb1 = tfc_backward(z, b, spec.fc1, relu_backward(h1, ga))
    gx = gy * s[:, :, None, None] + global_avg_pool_backward(x, gz)
    return gx, (gw1, gw2), (gb1, gb2)


def softmax_cross_entropy_backward(logits, labels, grad_out=1.0):
    _, grad = softmax_cross_entropy(logits, labels)
    return float(grad_out) * grad


def backward(kind, x, grad_out, spec=None, wts=None):
    """Dispatch to the VJP of ``kind``; returns (grad_input, grad_weights, grad_bias).

    ``spec`` is the layer's ConvSpec, the block count for ``tfc``, the
    TiedSeSpec for ``tied_se`` or the labels for ``softmax_cross_entropy``.
    """
    if kind == "conv2d":
        return conv2d_backward(x, spec, wts, grad_out)
    if kind == "group_conv2d":
        return group_conv2d_backward(x, spec, wts, grad_out)
    if kind == "tbc":
        return tbc_backward(x, spec, wts, grad_out)
    if kind == "tgc":
        return tgc_backward(x, spec, wts, grad_out)
    if kind == "fc":
        return fc_backward(x, wts.w, wts.bias, grad_out)
    if kind == "tfc":
        return tfc_backward(x, spec, wts, grad_out)
    if kind == "tied_se":
        return tied_se_backward(x, spec, grad_out)
    if kind == "relu":
        return relu_backward(x, grad_out), None, None
    if kind == "sigmoid":
        return sigmoid_backward(x, grad_out), None, None
    if kind == "global_avg_pool":
        return global_avg_pool_backward(x, grad_out), None, None
    if kind == "softmax_cross_entropy":
        return softmax_cross_entropy_backward(x, spec, grad_out), None, None
    raise ValueError(f"unknown layer kind {kind!r}")


@dataclass(frozen=True)
class GradReport:
    op: str
    param: str
    max_rel_error: float
    passed: bool
    epsilon: float
    tolerance: float
    seed: int = 0
    checked: int = 0

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} gradcheck {self.op}.{self.param} seed={self.seed} "
                f"coords={self.checked} max_rel_err={self.max_rel_error:.3e} tol={self.tolerance:g}")


GRAD_EPS = 1e-3
GRAD_TOL = 1e-4
MAX_COORDS = 64


def _rel_err(a, f):
    return abs(a - f) / max(1e-8, abs(a) + abs(f))


def gradcheck(kind, spec=None, seed=0, eps=GRAD_EPS, tol=GRAD_TOL, max_coords=MAX_COORDS):
    """Compare analytic gradients of ``kind`` against central differences.

    The scalar objective is ``sum(g * f(x))`` for a fixed random ``g`` (the loss
    itself for ``softmax_cross_entropy``).  At most ``max_coords`` coordinates of
    each tensor are perturbed; the subsample is fixed by ``seed``.  Returns one
    report per differentiated tensor; failures are reported, not raised.
    """
    from .cases import make_case

    rng = _case_rng(kind, seed)
    case = make_case(kind, rng, spec)
    out = case.forward(case.x, case.params)
    g = 1.0 if np.ndim(out) == 0 else rng.uniform(np.shape(out))
    analytic = case.vjp(case.x, case.params, g)

    def objective(x, params):
        return float(np.sum(g * case.forward(x, params)))

    tensors = {"input": case.x, **case.params}
    reports = []
    for name, value in tensors.items():
        flat_n = value.size
        coords = rng.permutation(flat_n)[:max_coords]
        worst = 0.0
        for idx in coords:
            plus = value.copy()
            minus = value.copy()
            plus.flat[idx] += eps
            minus.flat[idx] -= eps
            if name == "input":
                fp, fm = objective(plus, case.params), objective(minus, case.params)
            else:
                fp = objective(case.x, {**case.params, name: plus})
                fm = objective(case.x, {**case.params, name: minus})
            fd = (fp - fm) / (2 * eps)
            worst = max(worst, _rel_err(float(analytic[name].flat[idx]), fd))
        reports.append(GradReport(kind, name, worst, worst <= tol, eps, tol, seed, len(coords)))
    return reports


def _case_rng(kind, seed):
    return Rng(seed).spawn(zlib.crc32(kind.encode()))

