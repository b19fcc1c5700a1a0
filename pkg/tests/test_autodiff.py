"""Tape ops: forward values against numpy, gradients against differences."""

import numpy as np
import pytest

from voroflow import autodiff as ad
from voroflow.autodiff import Binding, Param, Tape, grad_check
from voroflow.errors import (DivisionByZero, LogOfNonPositive,
                             NonScalarRoot, NoPositiveEntries,
                             TapeNotRecording)

GRAD_TOL = 1e-6


def test_forward_values_match_numpy():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 4))
    b = np.abs(rng.standard_normal((3, 4))) + 0.5
    tape = Tape(record=False)
    va, vb = tape.const(a), tape.const(b)
    np.testing.assert_array_equal((va + vb).value, a + b)
    np.testing.assert_array_equal((va - vb).value, a - b)
    np.testing.assert_array_equal((va * vb).value, a * b)
    np.testing.assert_array_equal((va / vb).value, a / b)
    np.testing.assert_array_equal((-va).value, -a)
    np.testing.assert_allclose(ad.exp(va).value, np.exp(a), rtol=1e-15)
    np.testing.assert_allclose(ad.log(vb).value, np.log(b), rtol=1e-15)
    np.testing.assert_allclose(ad.sqrt(vb).value, np.sqrt(b), rtol=1e-15)
    np.testing.assert_allclose(ad.tanh(va).value, np.tanh(a), rtol=1e-15)
    np.testing.assert_allclose(ad.softplus(va).value, np.logaddexp(0.0, a),
                               rtol=1e-15)
    np.testing.assert_allclose(ad.sigmoid(va).value, 1.0 / (1.0 + np.exp(-a)),
                               rtol=1e-14)
    np.testing.assert_allclose(ad.vsum(va, axis=1).value, a.sum(axis=1),
                               rtol=1e-15)
    np.testing.assert_allclose(ad.mean(va).value, a.mean(), rtol=1e-15)
    np.testing.assert_allclose(ad.matmul(va, tape.const(b.T)).value, a @ b.T,
                               rtol=1e-15)
    np.testing.assert_allclose(
        ad.logsumexp(va, axis=1).value,
        np.log(np.exp(a).sum(axis=1)), rtol=1e-14)
    np.testing.assert_allclose(
        ad.log_softmax(tape.const(a[0])).value,
        a[0] - np.log(np.exp(a[0]).sum()), rtol=1e-13, atol=1e-15)


# Each case builds a scalar from leaf arrays; grad_check compares the tape
# gradient of every leaf coordinate against central finite differences.
_RNG = np.random.default_rng(7)
GRAD_CASES = [
    ("arith", lambda t, ps: ad.vsum(ps[0] * ps[1] - ps[0] / ps[1] + ps[1]),
     [_RNG.standard_normal((3, 4)), _RNG.standard_normal((3, 4)) + 3.0]),
    ("broadcast_row", lambda t, ps: ad.vsum(ps[0] + ps[1]),
     [_RNG.standard_normal((5, 3)), _RNG.standard_normal(3)]),
    ("broadcast_col", lambda t, ps: ad.vsum(ps[0] * ps[1]),
     [_RNG.standard_normal((5, 3)), _RNG.standard_normal((5, 1))]),
    ("exp_log", lambda t, ps: ad.vsum(ad.log(ad.exp(ps[0]) + 1.0)),
     [_RNG.standard_normal((2, 6))]),
    ("sqrt", lambda t, ps: ad.vsum(ad.sqrt(ps[0])),
     [_RNG.random((4, 4)) + 0.5]),
    ("tanh_swish", lambda t, ps: ad.vsum(ad.tanh(ps[0]) + ad.swish(ps[0])),
     [_RNG.standard_normal((3, 5))]),
    ("softplus_sigmoid",
     lambda t, ps: ad.vsum(ad.softplus(ps[0]) * ad.sigmoid(ps[0])),
     [2.0 * _RNG.standard_normal((3, 5))]),
    ("absval", lambda t, ps: ad.vsum(ad.absval(ps[0])),
     [_RNG.standard_normal((3, 5)) + 4.0]),
    ("matmul", lambda t, ps: ad.vsum(ad.matmul(ps[0], ps[1])),
     [_RNG.standard_normal((3, 4)), _RNG.standard_normal((4, 2))]),
    ("matvec_dot",
     lambda t, ps: ad.dot(ad.matvec(ps[0], ps[1]), ps[1]),
     [_RNG.standard_normal((4, 4)), _RNG.standard_normal(4)]),
    ("transpose_mean", lambda t, ps: ad.mean(ad.transpose(ps[0]) * 2.0),
     [_RNG.standard_normal((3, 5))]),
    ("reshape", lambda t, ps: ad.vsum(ad.reshape(ps[0], (6, 2)) ** 2 / 2.0),
     [_RNG.standard_normal((3, 4))]),
    ("broadcast_to",
     lambda t, ps: ad.vsum(ad.broadcast_to(ps[0], (4, 3)) * ps[1]),
     [_RNG.standard_normal(3), _RNG.standard_normal((4, 3))]),
    ("concat",
     lambda t, ps: ad.vsum(ad.concat([ps[0], ps[1]], axis=1) ** 2),
     [_RNG.standard_normal((3, 2)), _RNG.standard_normal((3, 4))]),
    ("take_cols", lambda t, ps: ad.vsum(ad.take_cols(ps[0], [2, 0, 2])),
     [_RNG.standard_normal((3, 4))]),
    ("gather_rows_matrix",
     lambda t, ps: ad.vsum(ad.gather_rows(ps[0], np.array([1, 1, 0, 2]))),
     [_RNG.standard_normal((3, 4))]),
    ("gather_rows_vector",
     lambda t, ps: ad.vsum(ad.gather_rows(ps[0], np.array([2, 2, 4])) ** 2),
     [_RNG.standard_normal(5)]),
    ("pick",
     lambda t, ps: ad.vsum(ad.pick(ps[0], np.array([1, 0, 3])) ** 2),
     [_RNG.standard_normal((3, 4))]),
    ("masked_fill",
     lambda t, ps: ad.vsum(ad.masked_fill(ps[0], np.array([True, False, True]),
                                          -5.0)),
     [_RNG.standard_normal(3)]),
    ("clip_interior", lambda t, ps: ad.vsum(ad.clip(ps[0], -10.0, 10.0) ** 2),
     [_RNG.standard_normal((3, 4))]),
    ("logsumexp", lambda t, ps: ad.vsum(ad.logsumexp(ps[0], axis=1)),
     [_RNG.standard_normal((4, 5))]),
    ("log_softmax", lambda t, ps: ad.vsum(ad.log_softmax(ps[0]) * ps[1]),
     [_RNG.standard_normal(6), _RNG.random(6)]),
    ("select_min_positive",
     lambda t, ps: ad.vsum(ad.select_min_positive(ps[0])[0]),
     [_RNG.random((4, 5)) + 0.1]),
    ("mean_axis", lambda t, ps: ad.vsum(ad.mean(ps[0], axis=0) ** 2),
     [_RNG.standard_normal((5, 3))]),
    ("vsum_keepdims",
     lambda t, ps: ad.vsum(ps[0] / ad.vsum(ps[0], axis=1, keepdims=True)),
     [_RNG.random((3, 4)) + 1.0]),
]


@pytest.mark.parametrize("name,f,arrays", GRAD_CASES, ids=[c[0] for c in GRAD_CASES])
def test_gradients_match_finite_differences(name, f, arrays):
    assert grad_check(f, arrays) < GRAD_TOL


def test_gather_rows_accumulates_repeated_indices():
    # both rows point at row 0, so its gradient is the sum of both paths
    tape = Tape()
    m = tape.var(np.array([[1.0, 2.0], [3.0, 4.0]]))
    picked = ad.gather_rows(m, np.array([0, 0]))
    out = ad.vsum(picked * np.array([[1.0, 1.0], [10.0, 10.0]]))
    grads = tape.backward(out)
    np.testing.assert_array_equal(grads[m], [[11.0, 11.0], [0.0, 0.0]])


def test_masked_fill_keeps_and_blocks():
    tape = Tape()
    x = tape.var(np.array([1.0, 2.0, 3.0]))
    y = ad.masked_fill(x, np.array([True, False, True]), -9.0)
    np.testing.assert_array_equal(y.value, [1.0, -9.0, 3.0])
    grads = tape.backward(ad.vsum(y * np.array([1.0, 5.0, 7.0])))
    # the filled slot is a constant, so no gradient flows through it
    np.testing.assert_array_equal(grads[x], [1.0, 0.0, 7.0])


def test_select_min_positive_value_and_validity_mask():
    tape = Tape(record=False)
    a = tape.const(np.array([[3.0, -1.0, 2.0], [-4.0, 5.0, -0.5]]))
    picked, idx = ad.select_min_positive(a)
    np.testing.assert_array_equal(picked.value, [2.0, 5.0])
    np.testing.assert_array_equal(idx, [2, 1])
    masked, midx = ad.select_min_positive(
        a, valid=np.array([[True, True, False], [False, True, True]]))
    np.testing.assert_array_equal(masked.value, [3.0, 5.0])
    np.testing.assert_array_equal(midx, [0, 1])
    with pytest.raises(NoPositiveEntries):
        ad.select_min_positive(tape.const(np.array([[-1.0, -2.0]])))


def test_backward_requires_recording_scalar_root():
    tape = Tape()
    x = tape.var(np.array([1.0, 2.0]))
    with pytest.raises(NonScalarRoot):
        tape.backward(x)
    frozen = Tape(record=False)
    y = frozen.const(np.array(3.0))
    with pytest.raises(TapeNotRecording):
        frozen.backward(y)


def test_domain_errors():
    tape = Tape(record=False)
    with pytest.raises(LogOfNonPositive):
        ad.log(tape.const(np.array([1.0, 0.0])))
    with pytest.raises(DivisionByZero):
        tape.const(np.array([1.0])) / tape.const(np.array([0.0]))


def test_second_backward_on_same_tape_is_independent():
    tape = Tape()
    x = tape.var(np.array([2.0, 3.0]))
    g1 = tape.backward(ad.vsum(x * x))
    g2 = tape.backward(ad.vsum(x * x))
    np.testing.assert_array_equal(g1[x], g2[x])


def test_binding_resolves_params_and_collects_grads():
    p = Param("w", np.array([1.0, -2.0]))
    q = Param("b", np.array([0.5]))
    tape = Tape()
    bind = Binding(tape)
    loss = ad.vsum(bind[p] * bind[p]) + ad.vsum(bind[q])
    grads = bind.grads_by_name(tape.backward(loss), [p, q])
    np.testing.assert_array_equal(grads["w"], [2.0, -4.0])
    np.testing.assert_array_equal(grads["b"], [1.0])
    # binding the same param twice reuses one leaf
    assert bind[p] is bind[p]
