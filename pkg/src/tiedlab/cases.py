"""Seeded random layer instances shared by gradcheck, the verify suites and benchmarks."""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autograd as ag
from .nn import (
    ConvSpec,
    ConvWeights,
    conv2d,
    fully_connected,
    global_avg_pool,
    group_conv2d,
    relu,
    sigmoid,
    softmax_cross_entropy,
)
from .tensor import Rng
from .tied import (
    TfcWeights,
    TiedConvWeights,
    TiedSeSpec,
    tbc_forward_fast,
    tfc_forward,
    tgc_forward,
    tied_se_forward,
)

LAYER_KINDS = (
    "conv2d", "group_conv2d", "tbc", "tgc", "fc", "tfc", "tied_se",
    "relu", "sigmoid", "global_avg_pool", "softmax_cross_entropy",
)


def random_spatial(rng, k, stride, pad, max_out=4):
    """Input size whose output size under (k, stride, pad) is an exact integer >= 1."""
    oh = rng.integers(1, max_out + 1)
    while (oh - 1) * stride + k - 2 * pad < 1:
        oh += 1
    return (oh - 1) * stride + k - 2 * pad


def random_conv_spec(rng, kind="conv2d", blocks=None, k=None, has_bias=None, max_width=2):
    """A random legal ConvSpec of the given kind (conv2d, group_conv2d, tbc, tgc)."""
    k = k if k is not None else rng.choice((1, 3))
    stride = rng.choice((1, 2))
    pad = rng.choice((0, 1)) if k == 3 else 0
    has_bias = bool(rng.integers(0, 2)) if has_bias is None else has_bias
    groups, b = 1, 1
    if kind == "conv2d":
        c_i, c_o = rng.integers(1, 5), rng.integers(1, 5)
    elif kind == "group_conv2d":
        groups = rng.choice((2, 3, 4))
        c_i, c_o = groups * rng.integers(1, max_width + 1), groups * rng.integers(1, max_width + 1)
    elif kind == "tbc":
        b = blocks if blocks is not None else rng.choice((2, 4, 8))
        c_i, c_o = b * rng.integers(1, max_width + 1), b * rng.integers(1, max_width + 1)
    elif kind == "tgc":
        b = blocks if blocks is not None else rng.choice((2, 4))
        groups = b * rng.choice((1, 2))
        c_i, c_o = groups * rng.integers(1, max_width + 1), groups * rng.integers(1, max_width + 1)
    else:
        raise ValueError(f"not a convolution kind: {kind!r}")
    return ConvSpec(c_i, c_o, k, stride, pad, groups, b, has_bias)


def random_input(rng, spec, n=None):
    n = n if n is not None else rng.integers(1, 3)
    h = random_spatial(rng, spec.k, spec.stride, spec.pad)
    w = random_spatial(rng, spec.k, spec.stride, spec.pad)
    return rng.uniform((n, spec.c_i, h, w))


def random_conv_weights(rng, spec, tied=None):
    tied = spec.blocks > 1 if tied is None else tied
    cls = TiedConvWeights if tied else ConvWeights
    bias = rng.uniform((spec.bias_len,)) if spec.has_bias else None
    return cls(rng.uniform(spec.bank_shape), bias)


def random_tfc(rng, blocks=None, has_bias=True):
    b = blocks if blocks is not None else rng.choice((2, 4))
    c_i, c_o = b * rng.integers(1, 4), b * rng.integers(1, 4)
    w = rng.uniform((c_o // b, c_i // b))
    return c_i, c_o, b, TfcWeights(w, rng.uniform((c_o // b,)) if has_bias else None)


def random_tied_se(rng, blocks=None, has_bias=True):
    b = blocks if blocks is not None else rng.choice((1, 2, 4))
    r = rng.choice((2, 4))
    c = r * b * rng.integers(1, 3)
    hb, cb = c // r // b, c // b
    fc1 = TfcWeights(rng.uniform((hb, cb)), rng.uniform((hb,)) if has_bias else None)
    fc2 = TfcWeights(rng.uniform((cb, hb)), rng.uniform((cb,)) if has_bias else None)
    return TiedSeSpec(c, r, b, fc1, fc2)


@dataclass
class LayerCase:
    """One random instance of a layer: input, parameters, forward and VJP closures."""

    kind: str
    desc: str
    x: np.ndarray
    params: dict
    forward: Callable
    vjp: Callable


def _conv_case(kind, rng, spec):
    spec = spec if spec is not None else random_conv_spec(rng, kind, has_bias=True)
    x = random_input(rng, spec)
    wts = random_conv_weights(rng, spec)
    fwd = {"conv2d": conv2d, "group_conv2d": group_conv2d,
           "tbc": tbc_forward_fast, "tgc": tgc_forward}[kind]
    bwd = {"conv2d": ag.conv2d_backward, "group_conv2d": ag.group_conv2d_backward,
           "tbc": ag.tbc_backward, "tgc": ag.tgc_backward}[kind]
    params = {"weight": wts.w}
    if wts.bias is not None:
        params["bias"] = wts.bias

    def forward(x, p):
        return fwd(x, spec, ConvWeights(p["weight"], p.get("bias")))

    def vjp(x, p, g):
        gx, gw, gb = bwd(x, spec, ConvWeights(p["weight"], p.get("bias")), g)
        out = {"input": gx, "weight": gw}
        if gb is not None:
            out["bias"] = gb
        return out

    return LayerCase(kind, repr(spec), x, params, forward, vjp)


def make_case(kind, rng, spec=None):
    """Random instance of ``kind``.  ``spec`` optionally pins a conv-family ConvSpec."""
    if kind in ("conv2d", "group_conv2d", "tbc", "tgc"):
        return _conv_case(kind, rng, spec)
    n = rng.integers(1, 3)
    if kind == "fc":
        c_i, c_o = rng.integers(1, 6), rng.integers(1, 6)
        params = {"weight": rng.uniform((c_o, c_i)), "bias": rng.uniform((c_o,))}
        return LayerCase(
            kind, f"fc(c_i={c_i}, c_o={c_o})", rng.uniform((n, c_i)), params,
            lambda x, p: fully_connected(x, p["weight"], p["bias"]),
            lambda x, p, g: dict(zip(("input", "weight", "bias"),
                                     ag.fc_backward(x, p["weight"], p["bias"], g))),
        )
    if kind == "tfc":
        c_i, c_o, b, wts = random_tfc(rng)

        def vjp(x, p, g):
            gx, gw, gb = ag.tfc_backward(x, b, TfcWeights(p["weight"], p["bias"]), g)
            return {"input": gx, "weight": gw, "bias": gb}

        return LayerCase(
            kind, f"tfc(c_i={c_i}, c_o={c_o}, B={b})", rng.uniform((n, c_i)),
            {"weight": wts.w, "bias": wts.bias},
            lambda x, p: tfc_forward(x, b, TfcWeights(p["weight"], p["bias"])), vjp,
        )
    if kind == "tied_se":
        se = random_tied_se(rng)
        h, w = rng.integers(2, 5), rng.integers(2, 5)
        x = rng.uniform((n, se.c, h, w))
        # keep hidden pre-activations clear of the relu kink so differences stay smooth
        while np.min(np.abs(tfc_forward(global_avg_pool(x), se.blocks, se.fc1))) < 0.05:
            se.fc1.bias = rng.uniform(se.fc1.bias.shape)
        params = {"fc1.weight": se.fc1.w, "fc1.bias": se.fc1.bias,
                  "fc2.weight": se.fc2.w, "fc2.bias": se.fc2.bias}

        def rebuild(p):
            return TiedSeSpec(se.c, se.r, se.blocks,
                              TfcWeights(p["fc1.weight"], p["fc1.bias"]),
                              TfcWeights(p["fc2.weight"], p["fc2.bias"]))

        def vjp(x, p, g):
            gx, (gw1, gw2), (gb1, gb2) = ag.tied_se_backward(x, rebuild(p), g)
            return {"input": gx, "fc1.weight": gw1, "fc1.bias": gb1,
                    "fc2.weight": gw2, "fc2.bias": gb2}

        return LayerCase(kind, f"tied_se(c={se.c}, r={se.r}, B={se.blocks})", x, params,
                         lambda x, p: tied_se_forward(x, rebuild(p)), vjp)
    shape = (n, rng.integers(1, 4), rng.integers(1, 5), rng.integers(1, 5))
    if kind == "relu":
        u = rng.uniform(shape)
        x = np.where(u >= 0, 0.05 + u, u - 0.05)
        return LayerCase(kind, f"relu{shape}", x, {}, lambda x, p: relu(x),
                         lambda x, p, g: {"input": ag.relu_backward(x, g)})
    if kind == "sigmoid":
        return LayerCase(kind, f"sigmoid{shape}", 3.0 * rng.uniform(shape), {},
                         lambda x, p: sigmoid(x),
                         lambda x, p, g: {"input": ag.sigmoid_backward(x, g)})
    if kind == "global_avg_pool":
        return LayerCase(kind, f"global_avg_pool{shape}", rng.uniform(shape), {},
                         lambda x, p: global_avg_pool(x),
                         lambda x, p, g: {"input": ag.global_avg_pool_backward(x, g)})
    if kind == "softmax_cross_entropy":
        classes = rng.integers(2, 6)
        n = rng.integers(1, 5)
        labels = rng.integers(0, classes, size=(n,))
        return LayerCase(
            kind, f"softmax_cross_entropy(n={n}, classes={classes})",
            2.0 * rng.uniform((n, classes)), {},
            lambda x, p: softmax_cross_entropy(x, labels)[0],
            lambda x, p, g: {"input": ag.softmax_cross_entropy_backward(x, labels, g)},
        )
    raise ValueError(f"unknown layer kind {kind!r}")


def case_rng(seed, *key):
    return Rng(seed).spawn(*key)
