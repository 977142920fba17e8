"""Seeded property suites: tied/untied equivalence, gradient checks, counting identities."""

import zlib
from dataclasses import dataclass, field

import numpy as np

from .accounting import macs_count, param_count
from .autograd import gradcheck
from .cases import LAYER_KINDS, random_conv_spec, random_conv_weights, random_input, random_tfc, random_tied_se
from .config import LayerNode
from .model import make_layer
from .nn import ConvSpec, conv2d, fully_connected, global_avg_pool, group_conv2d, relu, sigmoid
from .tensor import Rng, derive_seed, max_rel_error
from .tied import (
    TfcWeights,
    TiedSeSpec,
    expand_conv,
    expand_fc,
    tbc_forward_direct,
    tbc_forward_fast,
    tfc_forward,
    tgc_forward,
    tied_se_forward,
    untied_spec,
)

EQUIV_TOL = 1e-12
SUITES = ("equiv", "gradcheck", "counts")


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: int = 0
    total: int = 0
    max_err: float = 0.0
    failures: list = field(default_factory=list)

    @property
    def ok(self):
        return self.passed == self.total

    def record(self, ok, err=0.0, detail=""):
        self.total += 1
        self.passed += int(ok)
        self.max_err = max(self.max_err, float(err))
        if not ok:
            self.failures.append(detail)

    def lines(self):
        status = "PASS" if self.ok else "FAIL"
        out = [f"{status} {self.suite}.{self.name} {self.passed}/{self.total} max_err={self.max_err:.3e}"]
        out += [f"  failing: {d}" for d in self.failures]
        return out


def _rng(seed, i, tag):
    return Rng(derive_seed(seed, i, zlib.crc32(tag.encode())))


def _bitwise(a, b):
    """(equal, max abs difference) for two arrays."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        return False, float("inf")
    return bool(np.array_equal(a, b)), float(np.max(np.abs(a - b))) if a.size else 0.0


def check_two_path(rng):
    spec = random_conv_spec(rng, "tbc", blocks=rng.choice((2, 4, 8)), k=rng.choice((1, 3)))
    x, wts = random_input(rng, spec), random_conv_weights(rng, spec)
    ok, err = _bitwise(tbc_forward_fast(x, spec, wts), tbc_forward_direct(x, spec, wts))
    return ok, err, spec


def check_tbc_expansion(rng):
    spec = random_conv_spec(rng, "tbc")
    x, wts = random_input(rng, spec), random_conv_weights(rng, spec)
    err = max_rel_error(tbc_forward_direct(x, spec, wts), conv2d(x, untied_spec(spec), expand_conv(spec, wts)))
    return err <= EQUIV_TOL, err, spec


def check_tgc_expansion(rng):
    spec = random_conv_spec(rng, "tgc")
    x, wts = random_input(rng, spec), random_conv_weights(rng, spec)
    err = max_rel_error(tgc_forward(x, spec, wts), group_conv2d(x, untied_spec(spec), expand_conv(spec, wts)))
    return err <= EQUIV_TOL, err, spec


def check_tfc_expansion(rng):
    c_i, c_o, b, wts = random_tfc(rng, has_bias=bool(rng.integers(0, 2)))
    x = rng.uniform((rng.integers(1, 4), c_i))
    w_full, b_full = expand_fc(b, wts)
    err = max_rel_error(tfc_forward(x, b, wts), fully_connected(x, w_full, b_full))
    return err <= EQUIV_TOL, err, f"tfc(c_i={c_i}, c_o={c_o}, B={b})"


def check_degeneracy(rng, which):
    """One link of the chain conv == gconv(G=1) == tbc(B=1) == tgc(G=1,B=1); tgc(B=1) == gconv; tgc(G=B) == tbc."""
    if which == "tbc_b1":
        spec = random_conv_spec(rng, "conv2d")
        x, wts = random_input(rng, spec), random_conv_weights(rng, spec)
        ref = conv2d(x, spec, wts)
        got = [tbc_forward_direct(x, spec, wts), tbc_forward_fast(x, spec, wts), tgc_forward(x, spec, wts)]
    elif which == "gconv_g1":
        spec = random_conv_spec(rng, "conv2d")
        x, wts = random_input(rng, spec), random_conv_weights(rng, spec)
        ref, got = conv2d(x, spec, wts), [group_conv2d(x, spec, wts)]
    elif which == "tgc_b1":
        spec = random_conv_spec(rng, "group_conv2d")
        x, wts = random_input(rng, spec), random_conv_weights(rng, spec)
        ref, got = group_conv2d(x, spec, wts), [tgc_forward(x, spec, wts)]
    elif which == "tgc_g_eq_b":
        spec = random_conv_spec(rng, "tbc", blocks=rng.choice((2, 4)))
        x, wts = random_input(rng, spec), random_conv_weights(rng, spec)
        ref, got = tbc_forward_direct(x, spec, wts), [tgc_forward(x, spec.with_(groups=spec.blocks), wts)]
    else:
        raise ValueError(which)
    ok, err = True, 0.0
    for y in got:
        same, diff = _bitwise(y, ref)
        ok, err = ok and same, max(err, diff)
    return ok, err, spec


def se_composition(x, spec):
    """pool -> tfc -> relu -> tfc -> sigmoid -> scale, spelled out step by step."""
    z = global_avg_pool(x)
    h = relu(tfc_forward(z, spec.blocks, spec.fc1))
    s = sigmoid(tfc_forward(h, spec.blocks, spec.fc2))
    return x * s[:, :, None, None]


def check_tied_se(rng):
    se = random_tied_se(rng, has_bias=bool(rng.integers(0, 2)))
    x = rng.uniform((rng.integers(1, 3), se.c, rng.integers(1, 5), rng.integers(1, 5)))
    ok, err = _bitwise(tied_se_forward(x, se), se_composition(x, se))
    zero = TiedSeSpec(se.c, se.r, se.blocks,
                      TfcWeights(np.zeros_like(se.fc1.w), np.zeros(se.fc1.w.shape[0])),
                      TfcWeights(np.zeros_like(se.fc2.w), np.zeros(se.fc2.w.shape[0])))
    zero_ok, zero_err = _bitwise(tied_se_forward(x, zero), 0.5 * x)
    return ok and zero_ok, max(err, zero_err), f"tied_se(c={se.c}, r={se.r}, B={se.blocks})"


_EQUIV_CHECKS = (
    ("two_path", check_two_path),
    ("tbc_expansion", check_tbc_expansion),
    ("tgc_expansion", check_tgc_expansion),
    ("tfc_expansion", check_tfc_expansion),
    ("degenerate_tbc_b1", lambda r: check_degeneracy(r, "tbc_b1")),
    ("degenerate_gconv_g1", lambda r: check_degeneracy(r, "gconv_g1")),
    ("degenerate_tgc_b1", lambda r: check_degeneracy(r, "tgc_b1")),
    ("degenerate_tgc_g_eq_b", lambda r: check_degeneracy(r, "tgc_g_eq_b")),
    ("tied_se_composition", check_tied_se),
)


def run_check(suite, name, fn, seeds, seed):
    result = CheckResult(suite, name)
    for i in range(seeds):
        ok, err, spec = fn(_rng(seed, i, name))
        result.record(ok, err, f"seed={seed} instance={i} {spec}")
    return result


def suite_equiv(seeds, seed=0, only=None):
    return [run_check("equiv", name, fn, seeds, seed)
            for name, fn in _EQUIV_CHECKS if only is None or name in only]


def suite_gradcheck(seeds, seed=0, kinds=LAYER_KINDS):
    results = []
    for kind in kinds:
        per_param = {}
        for i in range(seeds):
            instance_seed = derive_seed(seed, i)
            for rep in gradcheck(kind, seed=instance_seed):
                res = per_param.setdefault(rep.param, CheckResult("gradcheck", f"{kind}.{rep.param}"))
                res.record(rep.passed, rep.max_rel_error,
                           f"seed={seed} instance={i} gradcheck({kind!r}, seed={instance_seed})")
        results.extend(per_param.values())
    return results


def _random_count_spec(rng):
    b = rng.choice((1, 2, 4, 8))
    g = b * rng.choice((1, 2, 4))
    c_i, c_o = g * rng.integers(1, 33), g * rng.integers(1, 33)
    k = rng.choice((1, 3, 5, 7))
    stride = rng.choice((1, 2))
    return c_i, c_o, k, stride, b, g


def check_counts(rng):
    c_i, c_o, k, stride, b, g = _random_count_spec(rng)
    pad = k // 2
    base = ConvSpec(c_i, c_o, k, stride, pad)
    h = (rng.integers(1, 30) - 1) * stride + k - 2 * pad
    while h < 1:
        h += stride
    shape = (rng.integers(1, 5), c_i, h, h)
    tbc, gc, tgc = base.with_(blocks=b), base.with_(groups=g), base.with_(groups=g, blocks=b)
    p = lambda s: param_count(s, include_bias=False)
    checks = [
        p(tbc) * b * b == p(base),
        p(tgc) * g * b == p(base),
        p(gc) * g == p(base),
        macs_count(tbc, shape) * b == macs_count(base, shape),
        macs_count(gc, shape) * g == macs_count(base, shape),
        macs_count(tgc, shape) * g == macs_count(base, shape),
        param_count(LayerNode("tfc", c_i=c_i, c_o=c_o, blocks=b), include_bias=False) * b * b
        == param_count(LayerNode("fc", c_i=c_i, c_o=c_o), include_bias=False),
    ]
    return all(checks), 0.0, f"c_i={c_i} c_o={c_o} k={k} stride={stride} G={g} B={b} input={shape}"


def check_allocation(rng):
    """param_count matches the element count of the weights a built layer allocates."""
    c_i, c_o, k, stride, b, g = _random_count_spec(rng)
    nodes = [
        LayerNode("conv", c_i=c_i, c_o=c_o, k=k),
        LayerNode("gconv", c_i=c_i, c_o=c_o, k=k, groups=g),
        LayerNode("tbc", c_i=c_i, c_o=c_o, k=k, blocks=b, bias=False),
        LayerNode("tgc", c_i=c_i, c_o=c_o, k=k, groups=g, blocks=b),
        LayerNode("fc", c_i=c_i, c_o=c_o),
        LayerNode("tfc", c_i=c_i, c_o=c_o, blocks=b),
        LayerNode("tied_se", c=b * 4 * rng.integers(1, 5), r=4, blocks=b),
        LayerNode("tied_bottleneck", c_i=c_i, planes=4 * b, blocks=b, se=True, r=4),
    ]
    ok = all(param_count(n) == make_layer(n, rng.spawn(i)).size for i, n in enumerate(nodes))
    return ok, 0.0, f"c_i={c_i} c_o={c_o} k={k} G={g} B={b}"


FIXED_COUNTS = (
    ("conv 64->64 k3 params", lambda: param_count(ConvSpec(64, 64, 3)), 36864),
    ("tbc B=2 params", lambda: param_count(ConvSpec(64, 64, 3, blocks=2)), 9216),
    ("tgc G=4 B=2 params", lambda: param_count(ConvSpec(64, 64, 3, groups=4, blocks=2)), 4608),
    ("gconv G=4 params", lambda: param_count(ConvSpec(64, 64, 3, groups=4)), 9216),
    ("se c=64 r=16 params", lambda: param_count(LayerNode("tied_se", c=64, r=16, bias=False)), 512),
    ("tied_se B=2 params", lambda: param_count(LayerNode("tied_se", c=64, r=16, blocks=2, bias=False)), 128),
    ("conv macs", lambda: macs_count(ConvSpec(64, 64, 3, 1, 1), (1, 64, 56, 56)), 115605504),
    ("tbc B=2 macs", lambda: macs_count(ConvSpec(64, 64, 3, 1, 1, blocks=2), (1, 64, 56, 56)), 57802752),
    ("gconv G=4 macs", lambda: macs_count(ConvSpec(64, 64, 3, 1, 1, groups=4), (1, 64, 56, 56)), 28901376),
)


def suite_counts(seeds, seed=0):
    fixed = CheckResult("counts", "fixed_examples")
    for label, fn, expected in FIXED_COUNTS:
        got = fn()
        fixed.record(got == expected, abs(got - expected), f"{label}: got {got}, expected {expected}")
    return [
        run_check("counts", "ratio_identities", check_counts, seeds, seed),
        run_check("counts", "allocation", check_allocation, seeds, seed),
        fixed,
    ]


def run_suite(name, seeds, seed=0):
    if name == "all":
        return suite_equiv(seeds, seed) + suite_gradcheck(seeds, seed) + suite_counts(seeds, seed)
    return {"equiv": suite_equiv, "gradcheck": suite_gradcheck, "counts": suite_counts}[name](seeds, seed)


__all__ = ["CheckResult", "EQUIV_TOL", "FIXED_COUNTS", "SUITES", "run_suite", "se_composition",
           "suite_counts", "suite_equiv", "suite_gradcheck"]
