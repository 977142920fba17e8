import numpy as np
import pytest
from scipy.linalg import block_diag

from oracles import direct_conv2d
from tiedlab.cases import random_conv_spec, random_conv_weights, random_input, random_tfc, random_tied_se
from tiedlab.errors import ShapeError
from tiedlab.nn import ConvSpec, ConvWeights, conv2d, fully_connected, group_conv2d, relu, sigmoid
from tiedlab.tensor import Rng, max_rel_error
from tiedlab.tied import (
    TfcWeights,
    TiedConvWeights,
    TiedSeSpec,
    expand_tied_to_untied,
    sum_tied_copies,
    take_tied_bank,
    tbc_forward_direct,
    tbc_forward_fast,
    tfc_forward,
    tgc_forward,
    tied_se_forward,
    untied_spec,
)


def test_tbc_b1_is_conv2d_bitwise(rng):
    spec = ConvSpec(3, 4, 3, 1, 1, has_bias=True)
    x, wts = rng.uniform((2, 3, 5, 5)), random_conv_weights(rng, spec, tied=True)
    ref = conv2d(x, spec, wts)
    np.testing.assert_array_equal(tbc_forward_direct(x, spec, wts), ref)
    np.testing.assert_array_equal(tbc_forward_fast(x, spec, wts), ref)


def test_tbc_scalar_bank_per_block():
    x = np.stack([np.full((3, 3), 2.0), np.full((3, 3), 5.0)])[None]
    spec = ConvSpec(2, 2, 1, blocks=2)
    wts = TiedConvWeights([[3.0]])
    for fn in (tbc_forward_direct, tbc_forward_fast):
        y = fn(x, spec, wts)
        np.testing.assert_array_equal(y[0, 0], np.full((3, 3), 6.0))
        np.testing.assert_array_equal(y[0, 1], np.full((3, 3), 15.0))


def test_tbc_equals_block_diagonal_conv(rng):
    spec = ConvSpec(8, 8, 3, 1, 1, blocks=4, has_bias=True)
    x, wts = rng.uniform((2, 8, 6, 6)), random_conv_weights(rng, spec)
    # build the block-diagonal c_o x c_i x k x k tensor by hand
    w4 = np.zeros((8, 8, 3, 3))
    bank = wts.w.reshape(2, 2, 3, 3)
    for b in range(4):
        w4[2 * b:2 * b + 2, 2 * b:2 * b + 2] = bank
    ref = direct_conv2d(x, w4, np.tile(wts.bias, 4), 1, 1)
    assert max_rel_error(tbc_forward_direct(x, spec, wts), ref) <= 1e-12
    expanded = expand_tied_to_untied(spec, wts)
    np.testing.assert_array_equal(expanded.w.reshape(8, 8, 3, 3), w4)


def test_tbc_divisibility_error_names_b():
    with pytest.raises(ShapeError, match="B=4"):
        ConvSpec(6, 8, 3, blocks=4)


def test_tbc_rejects_wrong_bank_shape(rng):
    spec = ConvSpec(4, 4, 1, blocks=2)
    with pytest.raises(ShapeError):
        tbc_forward_fast(rng.uniform((1, 4, 2, 2)), spec, TiedConvWeights(np.zeros((4, 4))))


def test_fast_equals_direct_bitwise_sweep():
    for i in range(100):
        r = Rng(10_000 + i)
        spec = random_conv_spec(r, "tbc", blocks=r.choice((2, 4, 8)), k=r.choice((1, 3)))
        x, wts = random_input(r, spec), random_conv_weights(r, spec)
        np.testing.assert_array_equal(tbc_forward_fast(x, spec, wts), tbc_forward_direct(x, spec, wts))


def test_tgc_degeneracies(rng):
    gspec = ConvSpec(6, 9, 3, 1, 1, groups=3, has_bias=True)
    x, wts = rng.uniform((2, 6, 4, 4)), random_conv_weights(rng, gspec)
    np.testing.assert_array_equal(tgc_forward(x, gspec, wts), group_conv2d(x, gspec, wts))
    tspec = ConvSpec(8, 4, 3, 1, 1, blocks=4, has_bias=True)
    x, wts = rng.uniform((2, 8, 4, 4)), random_conv_weights(rng, tspec)
    np.testing.assert_array_equal(tgc_forward(x, tspec.with_(groups=4), wts), tbc_forward_direct(x, tspec, wts))


def test_tgc_equals_replicated_group_conv(rng):
    spec = ConvSpec(8, 8, 3, 1, 1, groups=4, blocks=2, has_bias=True)
    x, wts = rng.uniform((2, 8, 5, 5)), random_conv_weights(rng, spec)
    assert wts.w.shape == (4, 18)
    # groups 0,1 share bank rows 0:2; groups 2,3 share rows 2:4
    rep = ConvWeights(np.concatenate([wts.w[0:2], wts.w[0:2], wts.w[2:4], wts.w[2:4]]),
                      np.concatenate([wts.bias[0:2], wts.bias[0:2], wts.bias[2:4], wts.bias[2:4]]))
    assert max_rel_error(tgc_forward(x, spec, wts), group_conv2d(x, untied_spec(spec), rep)) <= 1e-12
    expanded = expand_tied_to_untied(spec, wts)
    np.testing.assert_array_equal(expanded.w, rep.w)


def test_tgc_requires_g_divisible_by_b(rng):
    spec = ConvSpec(4, 4, 1, blocks=2)
    with pytest.raises(ShapeError):
        tgc_forward(rng.uniform((1, 4, 2, 2)), spec, TiedConvWeights(np.zeros((2, 2))))


def test_tfc_examples():
    np.testing.assert_array_equal(tfc_forward([1.0, 2.0, 3.0, 4.0], 2, TfcWeights(np.eye(2), np.zeros(2))),
                                  [1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(tfc_forward([1.0, 2.0, 3.0, 4.0], 2, TfcWeights([[1.0, 1.0]])), [3.0, 7.0])
    with pytest.raises(ShapeError):
        tfc_forward([1.0, 2.0, 3.0], 2, TfcWeights([[1.0]]))


def test_tfc_equals_block_diagonal_fc():
    for i in range(30):
        r = Rng(i)
        c_i, c_o, b, wts = random_tfc(r)
        x = r.uniform((3, c_i))
        full = block_diag(*[wts.w] * b)
        ref = fully_connected(x, full, np.tile(wts.bias, b))
        assert max_rel_error(tfc_forward(x, b, wts), ref) <= 1e-12
        np.testing.assert_array_equal(expand_tied_to_untied(b, wts)[0], full)


def test_expand_examples(rng):
    spec = ConvSpec(3, 2, 3, blocks=1)
    wts = random_conv_weights(rng, spec, tied=True)
    np.testing.assert_array_equal(expand_tied_to_untied(spec, wts).w, wts.w)
    w, _ = expand_tied_to_untied(2, TfcWeights([[1.5]]))
    np.testing.assert_array_equal(w, [[1.5, 0.0], [0.0, 1.5]])


@pytest.mark.parametrize("kind", ["tbc", "tgc"])
def test_expanded_layer_matches_tied_sweep(kind):
    for i in range(50):
        r = Rng(500 + i)
        spec = random_conv_spec(r, kind)
        x, wts = random_input(r, spec), random_conv_weights(r, spec)
        untied = conv2d if kind == "tbc" else group_conv2d
        tied = tbc_forward_direct if kind == "tbc" else tgc_forward
        ref = untied(x, untied_spec(spec), expand_tied_to_untied(spec, wts))
        assert max_rel_error(tied(x, spec, wts), ref) <= 1e-12


@pytest.mark.parametrize("kind", ["tbc", "tgc"])
def test_take_bank_inverts_expand(rng, kind):
    spec = random_conv_spec(rng, kind, has_bias=True)
    wts = random_conv_weights(rng, spec)
    back = take_tied_bank(spec, expand_tied_to_untied(spec, wts))
    np.testing.assert_array_equal(back.w, wts.w)
    np.testing.assert_array_equal(back.bias, wts.bias)
    copies = spec.blocks
    summed = sum_tied_copies(spec, expand_tied_to_untied(spec, wts))
    np.testing.assert_allclose(summed.w, copies * wts.w, rtol=1e-15)


def test_block_permutation_equivariance(rng):
    spec = ConvSpec(8, 4, 3, 1, 1, blocks=4, has_bias=True)
    x, wts = rng.uniform((2, 8, 4, 4)), random_conv_weights(rng, spec)
    perm = [2, 0, 3, 1]
    xp = np.concatenate([x[:, 2 * p:2 * p + 2] for p in perm], axis=1)
    y = tbc_forward_fast(x, spec, wts)
    yp = tbc_forward_fast(xp, spec, wts)
    np.testing.assert_array_equal(yp, np.concatenate([y[:, p:p + 1] for p in perm], axis=1))


def _zero_se(c, r, b):
    h = c // r
    return TiedSeSpec(c, r, b, TfcWeights(np.zeros((h // b, c // b)), np.zeros(h // b)),
                      TfcWeights(np.zeros((c // b, h // b)), np.zeros(c // b)))


def test_tied_se_zero_weights_halves_input(rng):
    x = rng.uniform((2, 8, 3, 3))
    np.testing.assert_array_equal(tied_se_forward(x, _zero_se(8, 2, 2)), 0.5 * x)


def test_tied_se_b1_is_standard_se(rng):
    se = random_tied_se(rng, blocks=1)
    x = rng.uniform((2, se.c, 3, 4))
    z = x.mean(axis=(2, 3))
    h = np.maximum(z @ se.fc1.w.T + se.fc1.bias, 0.0)
    s = 1.0 / (1.0 + np.exp(-(h @ se.fc2.w.T + se.fc2.bias)))
    assert max_rel_error(tied_se_forward(x, se), x * s[:, :, None, None]) <= 1e-12


def test_tied_se_equals_composition():
    for i in range(20):
        r = Rng(i)
        se = random_tied_se(r)
        x = r.uniform((2, se.c, 3, 3))
        z = x.mean(axis=(2, 3))
        s = sigmoid(tfc_forward(relu(tfc_forward(z, se.blocks, se.fc1)), se.blocks, se.fc2))
        np.testing.assert_array_equal(tied_se_forward(x, se), x * s[:, :, None, None])


def test_tied_se_legality():
    with pytest.raises(ShapeError):
        _zero_se(12, 4, 2)
