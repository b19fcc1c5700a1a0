"""Randomized invariant suite with independent oracles.

Every closed-form quantity the library computes is re-derived here the
slow way: ray exits by bisection on the membership predicate, Jacobians by
central differences, log-determinants from densely materialized matrices,
densities by grid quadrature, mixtures by brute force over components.
The CLI exposes the suite as `voroflow check`.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import cell_map as cm
from .autodiff import Binding, Tape
from .dequant import DequantModel, JointDensity
from .errors import NoExit
from .flows import FlowStack
from .mixture import MixtureModel, mixture_logprob, mixture_sample
from .tessellation import Tessellation, contains, locate_many, new_tessellation, spread_anchors


def random_tessellation(rng, dim: int | None = None, n_cells: int | None = None,
                        scale_spread: float = 1.0) -> Tessellation:
    """A valid random tessellation with an off-center box."""
    dim = int(rng.integers(1, 9)) if dim is None else dim
    n_cells = int(rng.integers(2, 33)) if n_cells is None else n_cells
    anchors = spread_anchors(n_cells, dim, 4.0, rng, std=1.2)
    lo = anchors.min(axis=0) - rng.uniform(0.5, 3.0, dim)
    hi = anchors.max(axis=0) + rng.uniform(0.5, 3.0, dim)
    scales = np.exp(rng.uniform(-scale_spread, scale_spread, n_cells))
    return new_tessellation(anchors, lo, hi, scales)


def interior_point(tess: Tessellation, k: int, rng) -> np.ndarray:
    """A point of cell k sampled by shrinking a random ray from the anchor."""
    d = rng.standard_normal(tess.dim)
    d /= np.linalg.norm(d)
    lam = bisect_ray_exit(tess, k, d)
    return tess.anchors[k] + rng.uniform(0.05, 0.95) * lam * d


def bisect_ray_exit(tess: Tessellation, k: int, direction, iters: int = 100) -> float:
    """Exit length of a ray from the anchor, by doubling then bisection on
    the membership predicate.  Knows nothing about half-space algebra."""
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    a = tess.anchors[k]
    hi = 1.0
    lo = 0.0
    for _ in range(200):
        if not contains(tess, k, a + hi * d):
            break
        lo = hi
        hi *= 2.0
    else:
        raise NoExit("ray never left the cell; box should bound it")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if contains(tess, k, a + mid * d):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def fd_jacobian(tess: Tessellation, k: int, x, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of the forward cell map."""
    x = np.asarray(x, dtype=np.float64)
    dim = tess.dim
    jac = np.empty((dim, dim))
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = step
        hi = cm.forward(tess, k, x + e).point
        lo = cm.forward(tess, k, x - e).point
        jac[:, j] = (hi - lo) / (2.0 * step)
    return jac


def grid_quadrature_2d(fn, lo, hi, n: int) -> float:
    """Midpoint-rule integral of fn over the 2D box [lo, hi]."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    xs = lo[0] + (hi[0] - lo[0]) * (np.arange(n) + 0.5) / n
    ys = lo[1] + (hi[1] - lo[1]) * (np.arange(n) + 0.5) / n
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)
    area = (hi - lo).prod() / (n * n)
    return float(np.asarray(fn(pts)).sum() * area)


# ---- the check registry ----

def _check_ray_oracle(rng, cases: int = 150):
    worst = 0.0
    for _ in range(cases):
        tess = random_tessellation(rng)
        k = int(rng.integers(tess.n_cells))
        d = rng.standard_normal(tess.dim)
        d /= np.linalg.norm(d)
        lam = cm.ray_exit(tess, k, d).lambda_star
        ref = bisect_ray_exit(tess, k, d)
        worst = max(worst, abs(lam - ref) / (1.0 + ref))
    return "ray exit vs bisection", worst <= 1e-8, f"worst rel {worst:.2e} over {cases}"


def _check_roundtrip(rng, cases: int = 60):
    worst_pt = 0.0
    worst_ld = 0.0
    for _ in range(cases):
        tess = random_tessellation(rng)
        k = int(rng.integers(tess.n_cells))
        x = tess.anchors[k] + rng.standard_normal(tess.dim) * rng.uniform(0.1, 3.0)
        fwd = cm.forward(tess, k, x)
        back = cm.inverse(tess, k, fwd.point)
        scale = max(1.0, float(np.abs(x).max()))
        worst_pt = max(worst_pt, float(np.abs(back.point - x).max()) / scale)
        worst_ld = max(worst_ld, abs(fwd.logdet + back.logdet))
    ok = worst_pt <= 1e-9 and worst_ld <= 1e-9
    return "forward/inverse roundtrip", ok, f"point {worst_pt:.2e} logdet sum {worst_ld:.2e}"


def _check_logdet_dense(rng, cases: int = 40):
    worst = 0.0
    for _ in range(cases):
        tess = random_tessellation(rng, dim=int(rng.integers(1, 17)))
        k = int(rng.integers(tess.n_cells))
        x = tess.anchors[k] + rng.standard_normal(tess.dim) * rng.uniform(0.1, 2.0)
        res = cm.forward(tess, k, x)
        sign, ld = np.linalg.slogdet(cm.dense_jacobian_reference(tess, k, x))
        if sign <= 0:
            return "logdet vs dense", False, "dense Jacobian not orientation-preserving"
        worst = max(worst, abs(ld - res.logdet) / max(1.0, abs(ld)))
    return "logdet vs dense", worst <= 1e-10, f"worst rel {worst:.2e}"


def _check_jacobian_entries(rng, cases: int = 15):
    # entrywise, not just the determinant: the determinant is blind to any
    # error that shears the update columns along the ray direction
    worst = 0.0
    used = 0
    for _ in range(cases):
        tess = random_tessellation(rng, dim=int(rng.integers(1, 7)))
        k = int(rng.integers(tess.n_cells))
        x = tess.anchors[k] + rng.standard_normal(tess.dim) * rng.uniform(0.2, 1.5)
        active = cm.forward(tess, k, x).active_constraint
        step = 1e-6
        stable = True
        for j in range(tess.dim):
            e = np.zeros(tess.dim)
            e[j] = step
            for probe in (x + e, x - e):
                if cm.forward(tess, k, probe).active_constraint != active:
                    stable = False
        if not stable:
            continue
        used += 1
        diff = np.abs(cm.dense_jacobian_reference(tess, k, x)
                      - fd_jacobian(tess, k, x, step=step)).max()
        worst = max(worst, diff)
    ok = worst <= 1e-4 and used >= cases // 2
    return "jacobian entries vs finite differences", ok, f"worst abs {worst:.2e} over {used}"


def _check_logdet_fd(rng, cases: int = 15):
    worst = 0.0
    for _ in range(cases):
        tess = random_tessellation(rng, dim=int(rng.integers(1, 9)))
        k = int(rng.integers(tess.n_cells))
        x = tess.anchors[k] + rng.standard_normal(tess.dim) * rng.uniform(0.2, 1.5)
        res = cm.forward(tess, k, x)
        sign, ld = np.linalg.slogdet(fd_jacobian(tess, k, x))
        worst = max(worst, abs(ld - res.logdet) / max(1.0, abs(ld)))
    return "logdet vs finite differences", worst <= 1e-4, f"worst rel {worst:.2e}"


def _check_map_gradients(rng):
    tess = random_tessellation(rng, dim=3, n_cells=5)
    xs = tess.anchors[rng.integers(tess.n_cells, size=6)] \
        + 0.5 * rng.standard_normal((6, 3))
    ks = locate_many(tess, xs)

    def objective(tape, leaves):
        anchors, lo, hi, scales = leaves
        out = cm.forward_graph(anchors, lo, hi, scales, ks, tape.const(xs))
        return ad.vsum(out.logdet) + ad.vsum(out.point * out.point)

    err = ad.grad_check(objective, [tess.anchors, tess.box_lo, tess.box_hi,
                                    tess.scales], step=1e-6)
    return "map gradients vs finite differences", err <= 1e-4, f"worst rel {err:.2e}"


def _check_dequant_normalization(rng):
    model = DequantModel([3], dim=2, flow_depth=2, hidden=16, embed_dim=4,
                         seed=int(rng.integers(1 << 31)))
    for p in model.chain_for(0).parameters():
        p.value = p.value + 0.05 * rng.standard_normal(p.value.shape)
    tess = model.tessellation(0)
    y = int(rng.integers(3))

    def density(pts):
        keep = locate_many(tess, pts) == y
        out = np.zeros(pts.shape[0])
        if keep.any():
            tape = Tape(record=False)
            bind = Binding(tape, trainable=False)
            codes = np.full((int(keep.sum()), 1), y, dtype=np.int64)
            lq, _bad = model.logq_given(bind, codes, tape.const(pts[keep]))
            out[keep] = np.exp(lq.value)
        return out

    total = grid_quadrature_2d(density, tess.box_lo, tess.box_hi, 400)
    return "dequantizer cell normalization", abs(total - 1.0) <= 1e-2, f"integral {total:.4f}"


def _check_mixture_normalization(rng):
    mix = MixtureModel(2, 5, comp_depth=2, hidden=16, embed_dim=4,
                       seed=int(rng.integers(1 << 31)))
    for p in mix.comp.chain.parameters():
        p.value = p.value + 0.05 * rng.standard_normal(p.value.shape)
    mix.logits.value[:] = rng.standard_normal(5)
    tess = mix.tessellation()
    total = grid_quadrature_2d(lambda pts: np.exp(mixture_logprob(mix, pts)),
                               tess.box_lo, tess.box_hi, 400)
    return "mixture normalization", abs(total - 1.0) <= 1e-2, f"integral {total:.4f}"


def _check_mixture_brute_force(rng):
    mix = MixtureModel(3, 6, comp_depth=2, hidden=16, embed_dim=4,
                       seed=int(rng.integers(1 << 31)))
    mix.logits.value[:] = rng.standard_normal(6)
    tess = mix.tessellation()
    pts = rng.uniform(tess.box_lo + 0.05, tess.box_hi - 0.05, (500, 3))
    lp = mixture_logprob(mix, pts)
    ks = locate_many(tess, pts)
    logits = mix.logits.value
    log_prior = logits - (np.log(np.exp(logits - logits.max()).sum()) + logits.max())
    brute = np.empty(500)
    for k in range(6):
        rows = np.where(ks == k)[0]
        if rows.size == 0:
            continue
        tape = Tape(record=False)
        bind = Binding(tape, trainable=False)
        anchors, lo, hi, scales = mix.tess_vars(bind)
        inv = cm.inverse_graph(anchors, lo, hi, scales,
                               np.full(rows.size, k), tape.const(pts[rows]))
        cond = ad.gather_rows(bind[mix.embed], np.full(rows.size, k))
        brute[rows] = (mix.comp.logprob(bind, inv.point, cond).value
                       + inv.logdet.value + log_prior[k])
    worst = float(np.abs(brute - lp).max())
    return "mixture vs brute force", worst <= 1e-12, f"worst abs {worst:.2e}"


def _check_dequant_support(rng):
    model = DequantModel([4, 3], dim=3, flow_depth=2, hidden=16, embed_dim=4,
                         seed=int(rng.integers(1 << 31)))
    for c in model.chains:
        for p in c.parameters():
            p.value = p.value + 0.05 * rng.standard_normal(p.value.shape)
    codes = np.stack([rng.integers(0, 4, 400), rng.integers(0, 3, 400)], axis=1)
    noise = rng.standard_normal((400, 2, 3))
    tape = Tape(record=False)
    x, _ = model.sample_parts(Binding(tape, trainable=False), codes, noise)
    hits = int((model.quantize_many(x.value) == codes).all(axis=1).sum())
    return "dequantize/quantize support", hits == 400, f"{hits}/400 rows"


def _check_sample_cells(rng):
    mix = MixtureModel(2, 4, comp_depth=2, hidden=16, embed_dim=4,
                       seed=int(rng.integers(1 << 31)))
    _x, k, z = mixture_sample(mix, 1000, rng, return_parts=True)
    hits = int((locate_many(mix.tessellation(), z) == k).sum())
    return "mixture samples in own cells", hits == 1000, f"{hits}/1000 draws"


def _check_flow_roundtrip(rng):
    flow = FlowStack("chk", 4, 4, hidden=16, rng=rng)
    for p in flow.parameters():
        p.value = p.value + 0.1 * rng.standard_normal(p.value.shape)
    x = rng.standard_normal((64, 4))
    tape = Tape(record=False)
    bind = Binding(tape, trainable=False)
    z, ld_inv = flow.inverse(bind, tape.const(x))
    back, ld_fwd = flow.forward(bind, z)
    worst = float(np.abs(back.value - x).max())
    ld = float(np.abs(ld_inv.value + ld_fwd.value).max())
    ok = worst <= 1e-9 and ld <= 1e-9
    return "coupling flow roundtrip", ok, f"point {worst:.2e} logdet {ld:.2e}"


def _check_squash(rng):
    worst = 0.0
    for _ in range(200):
        gamma = float(np.exp(rng.uniform(-1.5, 1.5)))
        r = float(np.exp(rng.uniform(-4, 3)))
        a = cm.squash(r, gamma)
        back = cm.squash_inv(a, gamma)
        worst = max(worst, abs(back - r) / max(1.0, r))
        step = 1e-6 * max(1.0, r)
        fd = (cm.squash(r + step, gamma) - cm.squash(r - step, gamma)) / (2 * step)
        worst = max(worst, abs(fd - cm.squash_deriv(r, gamma)) / max(1.0, abs(fd)))
    return "squash roundtrip and slope", worst <= 1e-8, f"worst rel {worst:.2e}"


def run_all_checks(seed: int = 0):
    """Run every registered check; returns (name, ok, detail) rows."""
    rng = np.random.default_rng(seed)
    checks = [
        _check_squash,
        _check_ray_oracle,
        _check_roundtrip,
        _check_logdet_dense,
        _check_logdet_fd,
        _check_jacobian_entries,
        _check_map_gradients,
        _check_flow_roundtrip,
        _check_dequant_support,
        _check_sample_cells,
        _check_mixture_brute_force,
        _check_dequant_normalization,
        _check_mixture_normalization,
    ]
    return [fn(rng) for fn in checks]
