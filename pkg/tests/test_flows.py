"""Coupling flows: masks, invertibility, and base densities."""

import numpy as np
import pytest

from voroflow import autodiff as ad
from voroflow.autodiff import Binding, Param, Tape, grad_check
from voroflow.errors import NonFiniteActivation, ShapeMismatch
from voroflow.flows import (ACTIVATIONS, AffineCoupling, CouplingChain,
                            DiagonalGaussian, FlowStack, Mlp, coupling_masks)


def _bind():
    tape = Tape(record=False)
    return tape, Binding(tape, trainable=False)


def test_coupling_masks_cycle_and_cover():
    masks = coupling_masks(6, 8)
    assert len(masks) == 8
    for m in masks:
        assert m.dtype == bool and m.shape == (6,)
        assert m.any() and (~m).any()
    np.testing.assert_array_equal(masks[0], [True, True, True, False, False, False])
    np.testing.assert_array_equal(masks[1], ~masks[0])
    np.testing.assert_array_equal(masks[2], [False, True, False, True, False, True])
    np.testing.assert_array_equal(masks[3], ~masks[2])
    np.testing.assert_array_equal(masks[4], masks[0])
    with pytest.raises(ShapeMismatch):
        coupling_masks(1, 2)


def test_mlp_output_layer_starts_at_zero():
    net = Mlp("m", 3, 16, 4, rng=np.random.default_rng(0))
    tape, bind = _bind()
    out = net.apply(bind, tape.const(np.random.default_rng(1).standard_normal((5, 3))))
    np.testing.assert_array_equal(out.value, np.zeros((5, 4)))
    with pytest.raises(ShapeMismatch):
        Mlp("m", 3, 16, 4, activation="relu")


def test_fresh_chain_is_identity():
    rng = np.random.default_rng(2)
    chain = CouplingChain("c", 4, 6, rng=rng)
    tape, bind = _bind()
    x = rng.standard_normal((7, 4))
    y, ld = chain.forward(bind, tape.const(x))
    np.testing.assert_array_equal(y.value, x)
    np.testing.assert_array_equal(ld.value, np.zeros(7))


def test_zero_block_chain_is_identity():
    chain = CouplingChain("c", 3, 0)
    assert chain.parameters() == []
    tape, bind = _bind()
    x = np.random.default_rng(0).standard_normal((4, 3))
    y, ld = chain.forward(bind, tape.const(x))
    np.testing.assert_array_equal(y.value, x)
    np.testing.assert_array_equal(ld.value, np.zeros(4))


def _perturb(chain, rng):
    # fresh chains are the identity; shift every parameter off zero
    for p in chain.parameters():
        p.value = p.value + 0.3 * rng.standard_normal(p.value.shape)


def test_chain_roundtrip_and_logdet_sign():
    rng = np.random.default_rng(3)
    chain = CouplingChain("c", 5, 4, hidden=16, rng=rng)
    _perturb(chain, rng)
    tape, bind = _bind()
    x = rng.standard_normal((9, 5))
    y, ld_f = chain.forward(bind, tape.const(x))
    assert not np.allclose(y.value, x)
    back, ld_i = chain.inverse(bind, y)
    np.testing.assert_allclose(back.value, x, atol=1e-10)
    np.testing.assert_allclose(ld_f.value + ld_i.value, np.zeros(9), atol=1e-12)


def test_chain_logdet_matches_finite_difference_jacobian():
    rng = np.random.default_rng(4)
    chain = CouplingChain("c", 3, 4, hidden=8, rng=rng)
    _perturb(chain, rng)
    tape, bind = _bind()
    x = rng.standard_normal(3)

    def fwd(v):
        y, _ = chain.forward(bind, tape.const(v[None, :]))
        return y.value[0]

    step = 1e-6
    jac = np.empty((3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = step
        jac[:, j] = (fwd(x + e) - fwd(x - e)) / (2 * step)
    _, ld = chain.forward(bind, tape.const(x[None, :]))
    sign, ref = np.linalg.slogdet(jac)
    assert sign == 1.0
    assert float(ld.value[0]) == pytest.approx(ref, abs=1e-6)


def test_conditioning_changes_output():
    rng = np.random.default_rng(5)
    chain = CouplingChain("c", 4, 2, hidden=16, cond_dim=3, rng=rng)
    _perturb(chain, rng)
    tape, bind = _bind()
    x = rng.standard_normal((6, 4))
    c1 = tape.const(rng.standard_normal((6, 3)))
    c2 = tape.const(rng.standard_normal((6, 3)))
    y1, _ = chain.forward(bind, tape.const(x), c1)
    y2, _ = chain.forward(bind, tape.const(x), c2)
    assert not np.allclose(y1.value, y2.value)
    back, _ = chain.inverse(bind, y1, c1)
    np.testing.assert_allclose(back.value, x, atol=1e-10)


def test_eval_count_tracks_batched_passes():
    chain = CouplingChain("c", 2, 2, hidden=8, rng=np.random.default_rng(6))
    tape, bind = _bind()
    x = tape.const(np.zeros((3, 2)))
    assert chain.eval_count == 0
    y, _ = chain.forward(bind, x)
    chain.inverse(bind, y)
    assert chain.eval_count == 2


def test_non_finite_network_output_is_reported():
    chain = CouplingChain("c", 2, 1, hidden=4, rng=np.random.default_rng(7))
    bad = chain.parameters()[0]
    bad.value = bad.value.copy()
    bad.value[0, 0] = np.nan
    tape, bind = _bind()
    with pytest.raises(NonFiniteActivation):
        chain.forward(bind, tape.const(np.ones((2, 2))))


def test_scale_clamp_bounds_logdet():
    rng = np.random.default_rng(8)
    chain = CouplingChain("c", 2, 1, hidden=4, scale_clamp=0.5, rng=rng)
    for p in chain.parameters():
        p.value = p.value + 50.0 * rng.standard_normal(p.value.shape)
    tape, bind = _bind()
    _, ld = chain.forward(bind, tape.const(rng.standard_normal((20, 2))))
    assert np.all(np.abs(ld.value) <= 0.5 + 1e-12)


def test_diagonal_gaussian_logprob_closed_form():
    g = DiagonalGaussian("g", 3, mean=0.7, std=2.0)
    tape, bind = _bind()
    x = np.random.default_rng(9).standard_normal((5, 3))
    got = g.logprob(bind, tape.const(x)).value
    want = (-0.5 * ((x - 0.7) / 2.0) ** 2 - np.log(2.0)
            - 0.5 * np.log(2 * np.pi)).sum(axis=1)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_gaussian_noise_paths_are_consistent():
    g = DiagonalGaussian("g", 2, mean=-1.0, std=0.3)
    tape, bind = _bind()
    noise = np.random.default_rng(10).standard_normal((6, 2))
    x = g.transform_noise(bind, noise)
    lp_noise = g.logprob_of_noise(bind, noise)
    lp_direct = g.logprob(bind, x)
    np.testing.assert_allclose(lp_noise.value, lp_direct.value, atol=1e-12)


def test_frozen_gaussian_exposes_no_parameters():
    assert DiagonalGaussian("g", 2, trainable=False).parameters() == []
    assert len(DiagonalGaussian("g", 2).parameters()) == 2


def test_flow_stack_logprob_integrates_to_one():
    # 2D stack, quadrature over a box that captures nearly all the mass
    rng = np.random.default_rng(11)
    flow = FlowStack("f", 2, 2, hidden=8, scale_clamp=1.0, rng=rng)
    _perturb(flow.chain, rng)
    xs = np.linspace(-16.0, 16.0, 641)
    h = xs[1] - xs[0]
    grid = np.stack(np.meshgrid(xs, xs), axis=-1).reshape(-1, 2)
    tape, bind = _bind()
    lp = flow.logprob(bind, tape.const(grid)).value
    assert np.exp(lp).sum() * h * h == pytest.approx(1.0, abs=1e-3)


def test_flow_stack_samples_match_logprob_moments():
    rng = np.random.default_rng(12)
    flow = FlowStack("f", 2, 2, hidden=8, rng=rng)
    _perturb(flow.chain, rng)
    draws = flow.sample(4000, np.random.default_rng(13))
    assert draws.shape == (4000, 2)
    xs = np.linspace(-8.0, 8.0, 301)
    h = xs[1] - xs[0]
    grid = np.stack(np.meshgrid(xs, xs), axis=-1).reshape(-1, 2)
    tape, bind = _bind()
    w = np.exp(flow.logprob(bind, tape.const(grid)).value) * h * h
    np.testing.assert_allclose(draws.mean(axis=0), grid.T @ w,
                               atol=4 * draws.std(axis=0).max() / np.sqrt(4000))


def test_flow_gradients_match_finite_differences():
    rng = np.random.default_rng(14)
    flow = FlowStack("f", 3, 2, hidden=6, n_hidden=1, rng=rng)
    _perturb(flow.chain, rng)
    x = rng.standard_normal((4, 3))
    params = flow.parameters()

    def loss_value():
        tape = Tape(record=False)
        bind = Binding(tape, trainable=False)
        return float(ad.mean(flow.logprob(bind, tape.const(x))).value) * -1.0

    tape = Tape()
    bind = Binding(tape)
    loss = -ad.mean(flow.logprob(bind, tape.const(x)))
    grads = tape.backward(loss)
    step = 1e-5
    worst = 0.0
    for p in params:
        g = grads[bind[p]]
        flat = p.value.reshape(-1)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + step
            hi = loss_value()
            flat[j] = keep - step
            lo = loss_value()
            flat[j] = keep
            fd = (hi - lo) / (2 * step)
            e = g.reshape(-1)[j]
            worst = max(worst, abs(e - fd) / max(1.0, abs(e), abs(fd)))
    assert worst < 1e-6


def test_activation_table_contents():
    assert set(ACTIVATIONS) == {"swish", "tanh"}
    tape, _ = _bind()
    v = tape.const(np.array([[0.0, 1.0, -2.0]]))
    np.testing.assert_allclose(ACTIVATIONS["tanh"](v).value, np.tanh(v.value))
