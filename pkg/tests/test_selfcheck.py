"""The built-in invariant suite and its oracle helpers."""

import numpy as np
import pytest

from voroflow import cell_map as cm
from voroflow import selfcheck as sc
from voroflow.tessellation import contains, new_tessellation


def test_run_all_checks_passes():
    rows = sc.run_all_checks(seed=0)
    assert len(rows) == 13
    names = [name for name, ok, detail in rows]
    assert len(set(names)) == len(names)
    for name, ok, detail in rows:
        assert ok, f"{name}: {detail}"
        assert isinstance(detail, str) and detail


def test_checks_catch_a_sign_flip(monkeypatch):
    # sensitivity: corrupt the exposed logdet and the suite must notice
    import dataclasses

    original = cm.forward

    def flipped(tess, k, z):
        out = original(tess, k, z)
        return dataclasses.replace(out, logdet=-out.logdet)

    monkeypatch.setattr(cm, "forward", flipped)
    rows = sc.run_all_checks(seed=0)
    assert any(not ok for name, ok, detail in rows)


def test_bisect_ray_exit_1d_closed_form():
    # two anchors on a line: bisector at the midpoint, box at the far end
    tess = new_tessellation(np.array([[0.0], [2.0]]), [-10.0], [10.0])
    assert sc.bisect_ray_exit(tess, 0, [1.0]) == pytest.approx(1.0, abs=1e-12)
    assert sc.bisect_ray_exit(tess, 0, [-1.0]) == pytest.approx(10.0, abs=1e-9)
    assert sc.bisect_ray_exit(tess, 1, [1.0]) == pytest.approx(8.0, abs=1e-9)


def test_interior_point_is_interior():
    rng = np.random.default_rng(0)
    for _ in range(40):
        tess = sc.random_tessellation(rng)
        k = int(rng.integers(tess.n_cells))
        x = sc.interior_point(tess, k, rng)
        assert contains(tess, k, x)


def test_fd_jacobian_matches_known_derivative():
    # single cell in 1D: f(z) = lo + (hi - lo) * alpha on the negative ray
    tess = new_tessellation(np.array([[0.0]]), [-2.0], [2.0])
    z = np.array([1.0])
    jac = sc.fd_jacobian(tess, 0, z)
    # radius 1, exit 2: alpha(1/2) = 1/3, d point/d z = alpha' / exit * exit
    got = cm.forward(tess, 0, z)
    dense = cm.dense_jacobian_reference(tess, 0, z)
    np.testing.assert_allclose(jac, dense, rtol=1e-6, atol=1e-8)
    assert got.point[0] == pytest.approx(2.0 / 3.0)


def test_grid_quadrature_2d_exact_for_bilinear():
    # midpoint rule integrates any bilinear function exactly
    got = sc.grid_quadrature_2d(
        lambda p: 3.0 + 2.0 * p[:, 0] - p[:, 1] + 0.5 * p[:, 0] * p[:, 1],
        [-1.0, 0.0], [2.0, 3.0], n=37)
    # integral of 3 + 2x - y + xy/2 over [-1,2]x[0,3]
    want = 3.0 * 9 + 2.0 * (3.0 / 2) * 3 - (9.0 / 2) * 3 + 0.5 * (3.0 / 2) * (9.0 / 2)
    assert got == pytest.approx(want, rel=1e-12)


def test_random_tessellation_respects_requests():
    rng = np.random.default_rng(1)
    tess = sc.random_tessellation(rng, dim=3, n_cells=5)
    assert tess.dim == 3 and tess.n_cells == 5
    assert np.all(tess.anchors > tess.box_lo) and np.all(tess.anchors < tess.box_hi)
