"""Forward and inverse cell maps, their Jacobians, and the ray geometry."""

import numpy as np
import pytest

from voroflow import cell_map as cm
from voroflow.autodiff import Tape, grad_check
from voroflow.errors import (AlphaOutOfRange, IndexOutOfRange, NegativeInput,
                             NonFiniteInput, NonPositiveScale,
                             NonUnitDirection, PointOutsideCell, ShapeMismatch)
from voroflow.selfcheck import (bisect_ray_exit, fd_jacobian, interior_point,
                                random_tessellation)
from voroflow.tessellation import (HalfSpaceKind, contains, new_tessellation)

RNG_LOOPS = 30


def _line_tess():
    # 1D pair: cell 0 is (-10, 1), cell 1 is (1, 10)
    return new_tessellation(np.array([[0.0], [2.0]]), [-10.0], [10.0])


# ---- squash family ----

def test_squash_values_roundtrip_and_derivative():
    h = np.linspace(0.0, 20.0, 97)
    for scale in (1.0, 0.3, 4.0):
        a = cm.squash(h, scale)
        assert a[0] == 0.0 and np.all(a < 1.0) and np.all(np.diff(a) > 0)
        np.testing.assert_allclose(cm.squash_inv(a, scale), h, atol=1e-10)
        step = 1e-6
        fd = (cm.squash(h + step, scale) - cm.squash(h, scale)) / step
        np.testing.assert_allclose(cm.squash_deriv(h + step / 2, scale), fd,
                                   rtol=1e-6, atol=1e-9)
    assert cm.squash(1.0) == pytest.approx(0.5)
    assert isinstance(cm.squash(1.0), float)


def test_squash_domain_errors():
    with pytest.raises(NegativeInput):
        cm.squash(-0.1)
    with pytest.raises(NegativeInput):
        cm.squash_deriv(np.array([1.0, -2.0]))
    with pytest.raises(NegativeInput):
        cm.squash_inv(-0.5)
    with pytest.raises(AlphaOutOfRange):
        cm.squash_inv(1.0)
    with pytest.raises(NonPositiveScale):
        cm.squash(1.0, scale=0.0)
    with pytest.raises(NonPositiveScale):
        cm.squash_inv(0.5, scale=-1.0)


# ---- worked example with hand-computed numbers ----

def test_forward_line_example():
    tess = _line_tess()
    r = cm.forward(tess, 0, np.array([0.5]))
    # ray hits the bisector at 1, so alpha = 0.5/1.5 and the slope is 4/9
    assert r.lambda_star == pytest.approx(1.0)
    assert r.active_constraint == (HalfSpaceKind.VORONOI, 1)
    assert r.alpha_val == pytest.approx(1.0 / 3.0)
    np.testing.assert_allclose(r.point, [1.0 / 3.0])
    np.testing.assert_allclose(r.direction, [1.0])
    assert r.logdet == pytest.approx(np.log(4.0 / 9.0))
    np.testing.assert_allclose(cm.dense_jacobian_reference(tess, 0, [0.5]),
                               [[4.0 / 9.0]], atol=1e-12)


def test_inverse_line_example():
    tess = _line_tess()
    r = cm.inverse(tess, 0, np.array([1.0 / 3.0]))
    np.testing.assert_allclose(r.point, [0.5], atol=1e-12)
    assert r.logdet == pytest.approx(-np.log(4.0 / 9.0))


def test_ray_exit_line_example():
    tess = _line_tess()
    hit = cm.ray_exit(tess, 0, np.array([-1.0]))
    assert hit.lambda_star == pytest.approx(10.0)
    assert hit.active == (HalfSpaceKind.BOX_LOWER, 0)


# ---- consistency over random geometry ----

def test_roundtrip_and_logdet_antisymmetry():
    rng = np.random.default_rng(7)
    for _ in range(RNG_LOOPS):
        tess = random_tessellation(rng)
        k = int(rng.integers(tess.n_cells))
        x = 3.0 * rng.standard_normal(tess.dim) + tess.anchors[k]
        fwd = cm.forward(tess, k, x)
        assert contains(tess, k, fwd.point)
        inv = cm.inverse(tess, k, fwd.point)
        np.testing.assert_allclose(inv.point, x,
                                   rtol=1e-9, atol=1e-9 * (1 + abs(x).max()))
        assert fwd.logdet + inv.logdet == pytest.approx(0.0, abs=1e-9)


def _fd_stencil_stable(tess, k, x, active, step=1e-6):
    # the map is smooth only while one boundary facet stays active, so a
    # finite-difference stencil that straddles a facet change is invalid
    for j in range(tess.dim):
        e = np.zeros(tess.dim)
        e[j] = step
        for probe in (x + e, x - e):
            if cm.forward(tess, k, probe).active_constraint != active:
                return False
    return True


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(8)
    checked = 0
    for _ in range(RNG_LOOPS):
        tess = random_tessellation(rng, dim=int(rng.integers(1, 5)))
        k = int(rng.integers(tess.n_cells))
        x = interior_point(tess, k, rng)
        r = cm.forward(tess, k, x)
        if not _fd_stencil_stable(tess, k, x, r.active_constraint):
            continue
        checked += 1
        dense = cm.dense_jacobian_reference(tess, k, x)
        np.testing.assert_allclose(dense, fd_jacobian(tess, k, x),
                                   rtol=1e-4, atol=1e-5)
        sign, logdet = np.linalg.slogdet(dense)
        assert sign == 1.0
        assert r.logdet == pytest.approx(logdet, abs=1e-10)
    assert checked >= RNG_LOOPS // 2


def test_ray_exit_matches_bisection():
    rng = np.random.default_rng(9)
    for _ in range(RNG_LOOPS):
        tess = random_tessellation(rng)
        k = int(rng.integers(tess.n_cells))
        d = rng.standard_normal(tess.dim)
        d /= np.linalg.norm(d)
        lam = cm.ray_exit(tess, k, d).lambda_star
        assert lam == pytest.approx(bisect_ray_exit(tess, k, d),
                                    abs=1e-8 * (1.0 + lam))


def test_ray_exit_gradient_along_great_circle():
    # rotate the direction in-plane so perturbed inputs stay unit vectors
    rng = np.random.default_rng(10)
    for _ in range(RNG_LOOPS):
        tess = random_tessellation(rng, dim=int(rng.integers(2, 6)))
        k = int(rng.integers(tess.n_cells))
        d = rng.standard_normal(tess.dim)
        d /= np.linalg.norm(d)
        e = rng.standard_normal(tess.dim)
        e -= (e @ d) * d
        e /= np.linalg.norm(e)
        grad = cm.ray_exit(tess, k, d).dlam_ddirection
        step = 1e-6
        lam_hi = cm.ray_exit(tess, k, np.cos(step) * d + np.sin(step) * e)
        lam_lo = cm.ray_exit(tess, k, np.cos(step) * d - np.sin(step) * e)
        fd = (lam_hi.lambda_star - lam_lo.lambda_star) / (2 * step)
        if lam_hi.active != lam_lo.active:
            continue  # kink between two boundary facets
        assert float(grad @ e) == pytest.approx(fd, rel=1e-4, abs=1e-6)


def test_forward_far_points_stay_inside():
    rng = np.random.default_rng(12)
    tess = random_tessellation(rng, dim=3, n_cells=5)
    for scale in (1.0, 1e3, 1e6):
        x = tess.anchors[2] + scale * np.array([1.0, -2.0, 0.5])
        r = cm.forward(tess, 2, x)
        assert contains(tess, 2, r.point)
        assert r.alpha_val < 1.0


def test_forward_at_anchor_returns_anchor():
    tess = _line_tess()
    r = cm.forward(tess, 1, np.array([2.0]))
    np.testing.assert_array_equal(r.point, tess.anchors[1])
    assert np.isfinite(r.logdet)


# ---- error paths ----

def test_forward_input_validation():
    tess = _line_tess()
    with pytest.raises(IndexOutOfRange):
        cm.forward(tess, 2, np.array([0.0]))
    with pytest.raises(ShapeMismatch):
        cm.forward(tess, 0, np.array([0.0, 0.0]))
    with pytest.raises(NonFiniteInput):
        cm.forward(tess, 0, np.array([np.inf]))


def test_inverse_rejects_outside_and_boundary():
    tess = _line_tess()
    with pytest.raises(PointOutsideCell):
        cm.inverse(tess, 0, np.array([1.5]))  # lies in cell 1
    with pytest.raises(PointOutsideCell):
        cm.inverse(tess, 0, np.array([1.0]))  # exactly on the bisector
    with pytest.raises(AlphaOutOfRange):
        cm.inverse(tess, 0, np.array([1.0 - 1e-15]))


def test_ray_exit_rejects_non_unit_direction():
    tess = _line_tess()
    with pytest.raises(NonUnitDirection):
        cm.ray_exit(tess, 0, np.array([0.5]))


# ---- batched graph layer agrees with the scalar API ----

def test_forward_graph_matches_single_point_calls():
    rng = np.random.default_rng(13)
    tess = random_tessellation(rng, dim=3, n_cells=6)
    ks = rng.integers(tess.n_cells, size=16)
    xs = 2.0 * rng.standard_normal((16, 3))
    tape = Tape(record=False)
    out = cm.forward_graph(tape.const(tess.anchors), tape.const(tess.box_lo),
                           tape.const(tess.box_hi), tape.const(tess.scales),
                           ks, tape.const(xs))
    for i in range(16):
        r = cm.forward(tess, int(ks[i]), xs[i])
        np.testing.assert_allclose(out.point.value[i], r.point, atol=1e-12)
        assert out.logdet.value[i] == pytest.approx(r.logdet, abs=1e-12)


def test_inverse_graph_flags_boundary_rows():
    tess = _line_tess()
    zs = np.array([[0.5], [1.0 - 1e-15], [-3.0]])
    tape = Tape(record=False)
    out = cm.inverse_graph(tape.const(tess.anchors), tape.const(tess.box_lo),
                           tape.const(tess.box_hi), tape.const(tess.scales),
                           np.zeros(3, dtype=np.int64), tape.const(zs))
    np.testing.assert_array_equal(out.bad, [False, True, False])
    assert np.all(np.isfinite(out.logdet.value))
    r = cm.inverse(tess, 0, np.array([-3.0]))
    np.testing.assert_allclose(out.point.value[2], r.point, atol=1e-12)


# ---- gradients through the graph ----

def test_logdet_gradients_wrt_geometry():
    tess = new_tessellation(np.array([[-1.0, 0.2], [1.0, -0.3], [0.1, 1.4]]),
                            [-4.0, -4.0], [4.0, 4.0], [1.0, 0.7, 1.3])
    ks = np.array([0, 1, 2, 0])
    xs = np.array([[-1.2, 0.4], [2.5, -1.0], [0.0, 2.0], [-0.5, -0.1]])

    def f(tape, leaves):
        anchors, lo, hi, scales = leaves
        out = cm.forward_graph(anchors, lo, hi, scales, ks, tape.const(xs))
        return ad_sum(out.logdet, out.point)

    def ad_sum(logdet, point):
        from voroflow import autodiff as ad
        return ad.vsum(logdet) + ad.vsum(ad.mean(point, axis=0))

    arrays = [tess.anchors, tess.box_lo, tess.box_hi, tess.scales]
    assert grad_check(f, arrays, step=1e-6) < 1e-5
