"""Box-bounded Voronoi tessellations.

A tessellation is K anchor points inside an axis-aligned box.  Cell k is
the open set of points strictly closer to anchor k than to any other
anchor and strictly inside the box, written as an intersection of
half-spaces {x : a.x < b}.  Cells are disjoint and their closures cover
the box, so every point belongs to at most one cell and boundary points
belong to none.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import (
    AnchorOutsideBox,
    DuplicateAnchors,
    IndexOutOfRange,
    NonFiniteInput,
    NonPositiveScale,
    ShapeMismatch,
)

MIN_ANCHOR_SEPARATION = 1e-9


class HalfSpaceKind(enum.Enum):
    VORONOI = "voronoi"
    BOX_LOWER = "box_lower"
    BOX_UPPER = "box_upper"


@dataclass(frozen=True)
class HalfSpace:
    """One constraint a.x < b bounding a cell.

    ``index`` is the opposing anchor for VORONOI constraints and the
    coordinate axis for box constraints.
    """

    normal: np.ndarray
    offset: float
    kind: HalfSpaceKind
    index: int


@dataclass(frozen=True)
class Tessellation:
    """Validated, immutable geometry: anchors (K, D), box bounds (D,) and
    one positive squash scale per cell (K,)."""

    anchors: np.ndarray
    box_lo: np.ndarray
    box_hi: np.ndarray
    scales: np.ndarray

    @property
    def n_cells(self) -> int:
        return self.anchors.shape[0]

    @property
    def dim(self) -> int:
        return self.anchors.shape[1]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def spread_anchors(n: int, dim: int, halfwidth: float, rng, std: float = 0.5,
                   margin: float = 1e-3) -> np.ndarray:
    """i.i.d. N(0, std^2) anchor draws, re-sampled until pairwise distinct
    and strictly inside the origin-centered box of the given half-width."""
    while True:
        a = std * rng.standard_normal((n, dim))
        if np.abs(a).max() >= halfwidth - margin:
            continue
        if n > 1:
            d2 = ((a[:, None, :] - a[None, :, :]) ** 2).sum(-1)
            d2[np.diag_indices(n)] = np.inf
            if d2.min() <= MIN_ANCHOR_SEPARATION ** 2:
                continue
        return a


def simplex_anchors(n: int, dim: int, radius: float, rng) -> np.ndarray:
    """Vertices of a randomly rotated regular simplex at the given radius.

    Centered on the origin, so the cells are congruent and any isotropic
    density puts exactly equal mass in each.  Requires 2 <= n <= dim + 1.
    """
    if not 2 <= n <= dim + 1:
        raise ShapeMismatch(f"a regular simplex of {n} points needs dimension"
                            f" >= {n - 1}, got {dim}")
    verts = np.eye(n) - 1.0 / n
    q, _ = np.linalg.qr(np.concatenate([np.ones((n, 1)), np.eye(n)[:, :-1]], axis=1))
    coords = verts @ q[:, 1:]                     # (n, n-1), equal norms
    coords *= radius / np.linalg.norm(coords[0])
    padded = np.zeros((n, dim))
    padded[:, :n - 1] = coords
    g = rng.standard_normal((dim, dim))
    rot, r = np.linalg.qr(g)
    rot = rot * np.sign(np.diag(r))
    return padded @ rot.T


def new_tessellation(anchors, box_lo, box_hi, scales=None) -> Tessellation:
    """Validate geometry and freeze it into a Tessellation.

    Anchors must be pairwise distinct (separation > 1e-9) and strictly
    inside the box.  ``scales`` defaults to ones.
    """
    anchors = np.asarray(anchors, dtype=np.float64)
    box_lo = np.asarray(box_lo, dtype=np.float64)
    box_hi = np.asarray(box_hi, dtype=np.float64)
    if anchors.ndim != 2 or anchors.shape[0] < 1:
        raise ShapeMismatch(f"anchors must be (K, D), got {anchors.shape}")
    k, d = anchors.shape
    if box_lo.shape != (d,) or box_hi.shape != (d,):
        raise ShapeMismatch(f"box bounds must be ({d},), got {box_lo.shape} and {box_hi.shape}")
    if scales is None:
        scales = np.ones(k, dtype=np.float64)
    scales = np.asarray(scales, dtype=np.float64)
    if scales.shape != (k,):
        raise ShapeMismatch(f"scales must be ({k},), got {scales.shape}")
    for name, arr in (("anchors", anchors), ("box_lo", box_lo), ("box_hi", box_hi), ("scales", scales)):
        if not np.all(np.isfinite(arr)):
            raise NonFiniteInput(f"{name} contains non-finite entries")
    if np.any(scales <= 0.0):
        raise NonPositiveScale("every scale must be positive")
    if np.any(anchors <= box_lo) or np.any(anchors >= box_hi):
        raise AnchorOutsideBox("anchors must lie strictly inside the box")
    if k > 1:
        diff = anchors[:, None, :] - anchors[None, :, :]
        dist = np.sqrt((diff * diff).sum(-1))
        dist[np.diag_indices(k)] = np.inf
        if dist.min() <= MIN_ANCHOR_SEPARATION:
            i, j = np.unravel_index(np.argmin(dist), dist.shape)
            raise DuplicateAnchors(f"anchors {i} and {j} are {dist[i, j]:.3e} apart")
    return Tessellation(_frozen(anchors), _frozen(box_lo), _frozen(box_hi), _frozen(scales))


def _check_cell(tess: Tessellation, k) -> int:
    k = int(k)
    if not 0 <= k < tess.n_cells:
        raise IndexOutOfRange(f"cell {k} outside [0, {tess.n_cells})")
    return k


def cell_constraints(tess: Tessellation, k) -> list[HalfSpace]:
    """The (K-1) + 2D half-spaces whose strict intersection is cell k.

    Order: Voronoi constraints by ascending opposing anchor, then lower box
    faces by axis, then upper box faces by axis.
    """
    k = _check_cell(tess, k)
    a = tess.anchors
    d = tess.dim
    sq = (a * a).sum(1)
    out: list[HalfSpace] = []
    for i in range(tess.n_cells):
        if i == k:
            continue
        out.append(HalfSpace(_frozen(2.0 * (a[i] - a[k])), float(sq[i] - sq[k]),
                             HalfSpaceKind.VORONOI, i))
    eye = np.eye(d)
    for ax in range(d):
        out.append(HalfSpace(_frozen(-eye[ax]), float(-tess.box_lo[ax]),
                             HalfSpaceKind.BOX_LOWER, ax))
    for ax in range(d):
        out.append(HalfSpace(_frozen(eye[ax]), float(tess.box_hi[ax]),
                             HalfSpaceKind.BOX_UPPER, ax))
    return out


def _margins_many(tess: Tessellation, k: int, x: np.ndarray) -> np.ndarray:
    """b - a.x for every constraint of cell k, rows of x; positive inside.

    Uses the same normals and offsets as cell_constraints so the two agree.
    """
    a = tess.anchors
    sq = (a * a).sum(1)
    normals = 2.0 * (a - a[k])
    vor = (sq - sq[k])[None, :] - x @ normals.T
    vor = np.delete(vor, k, axis=1)
    low = x - tess.box_lo[None, :]
    high = tess.box_hi[None, :] - x
    return np.concatenate([vor, low, high], axis=1)


def contains(tess: Tessellation, k, x) -> bool:
    """True iff x strictly satisfies every half-space of cell k."""
    k = _check_cell(tess, k)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (tess.dim,):
        raise ShapeMismatch(f"point must be ({tess.dim},), got {x.shape}")
    return bool(np.all(_margins_many(tess, k, x[None, :]) > 0.0))


def contains_many(tess: Tessellation, k, xs) -> np.ndarray:
    """Vectorized contains over rows of xs; returns a boolean array."""
    k = _check_cell(tess, k)
    xs = np.asarray(xs, dtype=np.float64)
    return np.all(_margins_many(tess, k, xs) > 0.0, axis=1)


def locate(tess: Tessellation, x) -> int:
    """Index of the nearest anchor; ties go to the smallest index."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (tess.dim,):
        raise ShapeMismatch(f"point must be ({tess.dim},), got {x.shape}")
    return int(locate_many(tess, x[None, :])[0])


def locate_many(tess: Tessellation, xs) -> np.ndarray:
    """Vectorized locate over rows of xs; returns an int array."""
    xs = np.asarray(xs, dtype=np.float64)
    n = xs.shape[0]
    out = np.empty(n, dtype=np.intp)
    # argmin_i |x - a_i|^2 = argmin_i (|a_i|^2 - 2 x.a_i), one matmul per
    # chunk instead of a (rows, K, D) difference block
    sq = (tess.anchors * tess.anchors).sum(1)
    step = max(1, 4_000_000 // max(1, tess.n_cells))
    for s in range(0, n, step):
        g = xs[s:s + step] @ tess.anchors.T
        g *= -2.0
        g += sq
        out[s:s + step] = np.argmin(g, axis=1)
    return out
