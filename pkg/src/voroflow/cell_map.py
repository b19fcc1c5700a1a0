"""Invertible maps between a Voronoi cell and the whole space.

For cell k with anchor x_k, a point x at radius r along the unit ray d is
sent to  x_k + squash(r / L) * L * d,  where L is the distance from the
anchor to the cell boundary along d.  The squash is softsign with a
per-cell scale, so the map is a radial bijection from [0, inf) onto [0, 1)
on every ray and therefore a homeomorphism from R^D onto the open cell.

The Jacobian is an isotropic scale plus two rank-1 terms, so its log
determinant costs O(K + D) per point (no DxD matrix is ever formed).  All
math is built from autodiff primitives; the batched *_graph functions are
what models differentiate through, and the single-point API wraps them on
a non-recording tape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .errors import (
    AlphaOutOfRange,
    NegativeInput,
    NoExit,
    NonFiniteInput,
    NonPositiveScale,
    NonUnitDirection,
    PointOutsideCell,
    ShapeMismatch,
)
from .tessellation import HalfSpaceKind, Tessellation, _check_cell, contains

EPS_ANCHOR = 1e-12     # radius clamp at the anchor
EPS_DEN = 1e-12        # minimum along-ray component for an exit candidate
EPS_BOUNDARY = 1e-12   # margin below alpha = 1 on the inverse side


class ConstraintRef(NamedTuple):
    kind: HalfSpaceKind
    index: int


class Rank2(NamedTuple):
    """Jacobian factors: scale * I + outer(col1, row1) + outer(col2, row2)."""
    scale: float
    col1: np.ndarray
    row1: np.ndarray
    col2: np.ndarray
    row2: np.ndarray


@dataclass(frozen=True)
class MapResult:
    """Outcome of one forward or inverse cell map evaluation."""

    point: np.ndarray
    logdet: float
    lambda_star: float
    active_constraint: ConstraintRef
    direction: np.ndarray
    delta: float
    delta_star: float
    alpha_val: float
    rank2: Rank2


@dataclass(frozen=True)
class RayExit:
    lambda_star: float
    active: ConstraintRef
    dlam_ddirection: np.ndarray


# ---- scalar squash family ----

def _as_float(x, out):
    return float(out) if np.ndim(x) == 0 else out


def _check_scale(scale):
    if np.any(np.asarray(scale) <= 0.0):
        raise NonPositiveScale("squash scale must be positive")


def squash(h, scale=1.0):
    """softsign(scale * h) = s*h / (1 + s*h), mapping [0, inf) onto [0, 1)."""
    _check_scale(scale)
    hv = np.asarray(h, dtype=np.float64)
    if np.any(hv < 0.0):
        raise NegativeInput("squash input must be non-negative")
    t = scale * hv
    return _as_float(h, t / (1.0 + t))


def squash_deriv(h, scale=1.0):
    """d squash / dh = scale / (1 + scale*h)^2."""
    _check_scale(scale)
    hv = np.asarray(h, dtype=np.float64)
    if np.any(hv < 0.0):
        raise NegativeInput("squash input must be non-negative")
    q = 1.0 + scale * hv
    return _as_float(h, scale / (q * q))


def squash_inv(a, scale=1.0):
    """Inverse of squash: a / (scale * (1 - a)) for a in [0, 1)."""
    _check_scale(scale)
    av = np.asarray(a, dtype=np.float64)
    if np.any(av < 0.0):
        raise NegativeInput("squash_inv input must be non-negative")
    if np.any(av >= 1.0):
        raise AlphaOutOfRange("squash_inv input must be below 1")
    return _as_float(a, av / (scale * (1.0 - av)))


# ---- batched graph layer ----

@dataclass
class RayVars:
    exit_len: Var            # (N,) boundary distance along each ray
    active_col: np.ndarray   # (N,) winning candidate column
    den_act: Var             # (N,) normal_act . dir
    normal_act: Var          # (N, D) active constraint normal


@dataclass
class CellMapVars:
    """Batched cell map outputs; ndarray fields are not differentiated."""
    point: Var               # (N, D) mapped points
    logdet: Var              # (N,)
    exit_len: Var            # (N,)
    active_col: np.ndarray   # (N,)
    dirs: Var                # (N, D) unit rays
    radius: Var              # (N,) clamped input (forward) / output (inverse) radius
    alpha: Var               # (N,) squash value in (0, 1)
    bad: np.ndarray          # (N,) inverse only: rows at/outside the boundary
    scale: Var               # rank-2 factors, one row per point
    col1: Var
    row1: Var
    col2: Var
    row2: Var


def _decode_active(col: int, n_cells: int, dim: int) -> ConstraintRef:
    if col < n_cells:
        return ConstraintRef(HalfSpaceKind.VORONOI, int(col))
    if col < n_cells + dim:
        return ConstraintRef(HalfSpaceKind.BOX_LOWER, int(col - n_cells))
    return ConstraintRef(HalfSpaceKind.BOX_UPPER, int(col - n_cells - dim))


def ray_graph(anchors: Var, box_lo: Var, box_hi: Var, k: np.ndarray,
              anchors_k: Var, dirs: Var) -> RayVars:
    """Boundary exit distance for one unit ray per row, from each row's anchor.

    Candidate columns are [all K opposing anchors | D lower faces | D upper
    faces]; the self column never qualifies because its along-ray component
    is zero.  Gradients flow only into the winning candidate, so the winner
    is found with plain ndarray arithmetic and only its exit length is built
    on the tape; the recorded graph stays O(D) wide per row regardless of K.
    """
    n_cells, dim = anchors.value.shape
    n = dirs.value.shape[0]
    av, dv, akv = anchors.value, dirs.value, anchors_k.value

    proj = dv @ av.T                                          # dir . a_i
    den_vor = 2.0 * (proj - proj[np.arange(n), k][:, None])   # normal_i . dir
    sq_all = (av * av).sum(1)
    # ||a_i - a_k||^2, the boundary offset along the ray numerator
    num_vor = sq_all[None, :] + sq_all[k][:, None] - 2.0 * (akv @ av.T)
    valid_vor = den_vor > EPS_DEN
    valid_vor[np.arange(n), k] = False
    lam_vor = np.divide(num_vor, den_vor,
                        out=np.full_like(num_vor, np.inf), where=valid_vor)
    lam_hi = np.divide(box_hi.value[None, :] - akv, dv,
                       out=np.full((n, dim), np.inf), where=dv > EPS_DEN)
    lam_lo = np.divide(akv - box_lo.value[None, :], -dv,
                       out=np.full((n, dim), np.inf), where=-dv > EPS_DEN)
    cands = np.concatenate([lam_vor, lam_lo, lam_hi], axis=1)
    cands[~np.isfinite(cands) | (cands <= 0.0)] = np.inf
    active_col = np.argmin(cands, axis=1)
    if not np.all(np.isfinite(cands[np.arange(n), active_col])):
        bad = int(np.flatnonzero(~np.isfinite(cands[np.arange(n), active_col]))[0])
        raise NoExit(f"row {bad} has no positive exit candidate")

    is_vor = active_col < n_cells
    opposing = np.where(is_vor, active_col, 0)
    a_opp = ad.gather_rows(anchors, opposing)
    normal_vor = 2.0 * (a_opp - anchors_k)
    normal_act = ad.masked_fill(normal_vor, is_vor[:, None], 0.0)
    axes = np.zeros((n, dim))
    low = (active_col >= n_cells) & (active_col < n_cells + dim)
    high = active_col >= n_cells + dim
    axes[low, active_col[low] - n_cells] = -1.0
    axes[high, active_col[high] - n_cells - dim] = 1.0
    normal_act = normal_act + axes

    den_act = ad.vsum(normal_act * dirs, axis=1)
    sq = ad.vsum(anchors * anchors, axis=1)
    num_vor_act = (ad.gather_rows(sq, opposing) + ad.gather_rows(sq, k)
                   - 2.0 * ad.vsum(a_opp * anchors_k, axis=1))
    num_box = ad.concat([anchors_k - ad.reshape(box_lo, (1, dim)),
                         ad.reshape(box_hi, (1, dim)) - anchors_k], axis=1)
    box_col = np.where(is_vor, 0, active_col - n_cells)
    num_act = (ad.masked_fill(num_vor_act, is_vor, 0.0)
               + ad.masked_fill(ad.pick(num_box, box_col), ~is_vor, 0.0))
    exit_len = num_act / den_act

    return RayVars(exit_len, active_col, den_act, normal_act)


def _logdet_graph(dim: int, radius: Var, exit_len: Var, alpha: Var, slope: Var,
                  dirs: Var, ray: RayVars):
    """Log |det| of the forward Jacobian from its rank-2 structure.

    The Jacobian is scale*I + col1 row1^T + col2 row2^T where row1 is the
    gradient of the exit distance with respect to the ray and row2 is the
    ray itself, so the determinant reduces to a 2x2 after dividing out the
    isotropic scale.
    """
    n = dirs.value.shape[0]
    scale = alpha * exit_len / radius
    row1 = ad.reshape(-(exit_len / ray.den_act), (n, 1)) * ray.normal_act
    # slope is d alpha / d (radius/exit_len); dividing by exit_len gives the
    # radius derivative at fixed direction, which is what pairs with row1
    slope_r = slope / exit_len
    col1 = ad.reshape(alpha / radius - slope_r, (n, 1)) * dirs
    r1_dot_dir = ad.vsum(row1 * dirs, axis=1)
    coef2 = slope - alpha * exit_len / radius - (alpha / radius) * r1_dot_dir + slope_r * r1_dot_dir
    col2 = ad.reshape(coef2, (n, 1)) * dirs
    row2 = dirs
    c11 = ad.vsum(row1 * col1, axis=1) / scale
    c12 = ad.vsum(row1 * col2, axis=1) / scale
    c21 = ad.vsum(row2 * col1, axis=1) / scale
    c22 = ad.vsum(row2 * col2, axis=1) / scale
    head = 1.0 + c11
    logdet = ad.log(ad.absval(head)) + ad.log(ad.absval(1.0 + c22 - c12 * c21 / head)) \
        + float(dim) * ad.log(scale)
    return logdet, scale, col1, row1, col2, row2


def _centered_rays(anchors: Var, k: np.ndarray, points: Var):
    """Offsets from each row's anchor with a deterministic fallback ray for
    rows sitting exactly on (or within EPS_ANCHOR of) the anchor."""
    n, dim = points.value.shape
    anchors_k = ad.gather_rows(anchors, k)
    centered = points - anchors_k
    near = np.sqrt(((points.value - anchors.value[k]) ** 2).sum(1)) < EPS_ANCHOR
    if near.any():
        fallback = np.zeros(dim)
        fallback[0] = EPS_ANCHOR
        centered = ad.masked_fill(centered, ~near[:, None], fallback)
    radius = ad.clip(ad.sqrt(ad.vsum(centered * centered, axis=1)), lo=EPS_ANCHOR)
    dirs = centered / ad.reshape(radius, (n, 1))
    return anchors_k, radius, dirs


def forward_graph(anchors: Var, box_lo: Var, box_hi: Var, scales: Var,
                  k: np.ndarray, x: Var) -> CellMapVars:
    """Map rows of x into their cells: one row, one cell index, any point."""
    n, dim = x.value.shape
    anchors_k, radius, dirs = _centered_rays(anchors, k, x)
    ray = ray_graph(anchors, box_lo, box_hi, k, anchors_k, dirs)
    scale_k = ad.gather_rows(scales, k)
    rel = radius / ray.exit_len
    t = scale_k * rel
    inv1p = 1.0 / (1.0 + t)
    alpha = t * inv1p
    slope = scale_k * inv1p * inv1p
    point = anchors_k + ad.reshape(alpha * ray.exit_len, (n, 1)) * dirs
    logdet, jscale, col1, row1, col2, row2 = _logdet_graph(
        dim, radius, ray.exit_len, alpha, slope, dirs, ray)
    return CellMapVars(point, logdet, ray.exit_len, ray.active_col, dirs, radius,
                       alpha, np.zeros(n, dtype=bool), jscale, col1, row1, col2, row2)


def inverse_graph(anchors: Var, box_lo: Var, box_hi: Var, scales: Var,
                  k: np.ndarray, z: Var) -> CellMapVars:
    """Map rows of z (strictly inside their cells) back to the whole space.

    Rows at or outside the cell boundary are flagged in ``bad`` and
    evaluated at a safe placeholder radius; callers decide what to do with
    them.  The log determinant is the negated forward value at the
    recovered point, using the reciprocal of the inverse squash slope.
    """
    n, dim = z.value.shape
    anchors_k, z_radius, dirs = _centered_rays(anchors, k, z)
    ray = ray_graph(anchors, box_lo, box_hi, k, anchors_k, dirs)
    alpha_raw = z_radius / ray.exit_len
    bad = alpha_raw.value >= 1.0 - EPS_BOUNDARY
    alpha = ad.masked_fill(alpha_raw, ~bad, 0.5)
    scale_k = ad.gather_rows(scales, k)
    one_minus = 1.0 - alpha
    rel = alpha / (scale_k * one_minus)
    slope = scale_k * one_minus * one_minus
    radius = rel * ray.exit_len
    point = anchors_k + ad.reshape(radius, (n, 1)) * dirs
    fwd_logdet, jscale, col1, row1, col2, row2 = _logdet_graph(
        dim, radius, ray.exit_len, alpha, slope, dirs, ray)
    return CellMapVars(point, -fwd_logdet, ray.exit_len, ray.active_col, dirs, radius,
                       alpha, bad, jscale, col1, row1, col2, row2)


# ---- single-point API ----

def _check_point(tess: Tessellation, x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (tess.dim,):
        raise ShapeMismatch(f"{name} must be ({tess.dim},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput(f"{name} contains non-finite entries")
    return x


def _tess_consts(tess: Tessellation, tape: Tape):
    return (tape.const(tess.anchors), tape.const(tess.box_lo),
            tape.const(tess.box_hi), tape.const(tess.scales))


def _result_from_graph(out: CellMapVars, tess: Tessellation, point: np.ndarray,
                       delta: float) -> MapResult:
    return MapResult(
        point=point,
        logdet=float(out.logdet.value[0]),
        lambda_star=float(out.exit_len.value[0]),
        active_constraint=_decode_active(int(out.active_col[0]), tess.n_cells, tess.dim),
        direction=out.dirs.value[0].copy(),
        delta=delta,
        delta_star=float(out.exit_len.value[0]),
        alpha_val=float(out.alpha.value[0]),
        rank2=Rank2(float(out.scale.value[0]), out.col1.value[0].copy(),
                    out.row1.value[0].copy(), out.col2.value[0].copy(),
                    out.row2.value[0].copy()),
    )


def forward(tess: Tessellation, k, x) -> MapResult:
    """Map x (anywhere in R^D) into cell k.

    Points within EPS_ANCHOR of the anchor return the anchor itself, with
    the log determinant evaluated at the clamped radius.
    """
    k = _check_cell(tess, k)
    x = _check_point(tess, x, "x")
    tape = Tape(record=False)
    anchors, lo, hi, scales = _tess_consts(tess, tape)
    out = forward_graph(anchors, lo, hi, scales, np.array([k]), tape.const(x[None, :]))
    delta = float(np.linalg.norm(x - tess.anchors[k]))
    point = tess.anchors[k].copy() if delta <= EPS_ANCHOR else out.point.value[0].copy()
    return _result_from_graph(out, tess, point, delta)


def inverse(tess: Tessellation, k, z) -> MapResult:
    """Map z (strictly inside cell k) back to its preimage in R^D."""
    k = _check_cell(tess, k)
    z = _check_point(tess, z, "z")
    if not contains(tess, k, z):
        raise PointOutsideCell(f"z is not strictly inside cell {k}")
    tape = Tape(record=False)
    anchors, lo, hi, scales = _tess_consts(tess, tape)
    out = inverse_graph(anchors, lo, hi, scales, np.array([k]), tape.const(z[None, :]))
    if out.bad[0]:
        raise AlphaOutOfRange("z lies on the cell boundary within tolerance")
    if float(np.linalg.norm(z - tess.anchors[k])) <= EPS_ANCHOR:
        point = tess.anchors[k].copy()
    else:
        point = out.point.value[0].copy()
    return _result_from_graph(out, tess, point, float(out.radius.value[0]))


def ray_exit(tess: Tessellation, k, direction) -> RayExit:
    """Distance from anchor k to the cell boundary along a unit direction,
    the constraint that stops the ray, and the closed-form gradient of the
    distance with respect to the direction."""
    k = _check_cell(tess, k)
    d = _check_point(tess, direction, "direction")
    norm = float(np.linalg.norm(d))
    if abs(norm - 1.0) > 1e-6:
        raise NonUnitDirection(f"|direction| = {norm:.8f}, expected 1")
    tape = Tape(record=False)
    anchors, lo, hi, _ = _tess_consts(tess, tape)
    anchors_k = ad.gather_rows(anchors, np.array([k]))
    ray = ray_graph(anchors, lo, hi, np.array([k]), anchors_k, tape.const(d[None, :]))
    lam = float(ray.exit_len.value[0])
    grad = -lam * ray.normal_act.value[0] / float(ray.den_act.value[0])
    return RayExit(lam, _decode_active(int(ray.active_col[0]), tess.n_cells, tess.dim), grad)


def dense_jacobian_reference(tess: Tessellation, k, x) -> np.ndarray:
    """Materialized DxD forward Jacobian, for testing only."""
    r = forward(tess, k, x)
    s, c1, r1, c2, r2 = r.rank2
    return s * np.eye(tess.dim) + np.outer(c1, r1) + np.outer(c2, r2)
