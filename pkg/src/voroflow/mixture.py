"""Mixture models with disjoint cell supports.

Each component owns one cell of a tessellation living in a (possibly
flow-transformed) latent space.  Because supports are disjoint, the
likelihood of a point touches exactly one component: locate its cell, pull
it back through that cell's map, and score it under the component flow.
Cost is flat in the number of components.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from . import cell_map as cm
from .autodiff import Binding, Param, Tape, Var
from .errors import NonFiniteInput, ShapeMismatch
from .flows import CouplingChain, DiagonalGaussian, FlowStack
from .optim import TrainReport, fit
from .tessellation import (MIN_ANCHOR_SEPARATION, Tessellation, locate_many,
                           new_tessellation, spread_anchors)

INIT_BOX_HALFWIDTH = 4.0
BOX_MARGIN = 1e-3
NUDGE = 1e-9
SENTINEL_LOGPROB = -1e4


def _kmeans_once(x: np.ndarray, k: int, rng, iters: int):
    chosen = [int(rng.integers(x.shape[0]))]
    d2 = ((x - x[chosen[0]]) ** 2).sum(1)
    for _ in range(k - 1):
        total = d2.sum()
        if total <= 0.0:
            j = int(rng.integers(x.shape[0]))
        else:
            j = int(rng.choice(x.shape[0], p=d2 / total))
        chosen.append(j)
        d2 = np.minimum(d2, ((x - x[j]) ** 2).sum(1))
    centers = x[chosen].copy()
    for _ in range(iters):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        owner = d2.argmin(1)
        moved = 0.0
        for j in range(k):
            rows = owner == j
            if not rows.any():
                centers[j] = x[d2.min(1).argmax()]
                moved = np.inf
                continue
            c = x[rows].mean(0)
            moved = max(moved, float(((c - centers[j]) ** 2).sum()))
            centers[j] = c
        if moved < 1e-12:
            break
    inertia = float(((x[:, None, :] - centers[None, :, :]) ** 2).sum(-1).min(1).sum())
    return centers, inertia


def _kmeans_rows(x: np.ndarray, k: int, rng, iters: int = 30,
                 restarts: int = 6) -> np.ndarray:
    """Best-of-several k-means on the rows of x.

    Lloyd refinement after distance-weighted seeding, keeping the restart
    with the lowest inertia: a centroid stuck between two modes (or two on
    one mode) almost never survives the restart selection, and a bad
    centroid here means a cell boundary slicing through a data mode later.
    """
    best, best_inertia = None, np.inf
    for _ in range(restarts):
        centers, inertia = _kmeans_once(x, k, rng, iters)
        if inertia < best_inertia:
            best, best_inertia = centers, inertia
    return best


class MixtureModel:
    """Component prior + tessellation + per-component conditional flow.

    The component flow is one conditional network shared through per-cell
    embeddings, so adding cells adds parameters but not evaluation cost.
    The base concentrates mass near the anchors (narrow std by default),
    which keeps early training away from cell boundaries.
    """

    def __init__(self, dim: int, n_components: int, *, pre_depth: int = 0,
                 comp_depth: int = 4, hidden: int = 64, n_hidden: int = 2,
                 embed_dim: int = 8, base_std: float = 0.2,
                 train_base: bool = False, train_box: bool = False,
                 activation: str = "swish", scale_clamp: float = 5.0,
                 seed: int = 0):
        if n_components < 1:
            raise ShapeMismatch("need at least one component")
        self.dim = dim
        self.n_components = n_components
        self.train_box = train_box
        rng = np.random.default_rng(seed)

        self.pre = CouplingChain("pre", dim, pre_depth, hidden, n_hidden,
                                 0, activation, scale_clamp, rng)
        self.anchors = Param("anchors", spread_anchors(
            n_components, dim, INIT_BOX_HALFWIDTH, rng, margin=BOX_MARGIN))
        self.box_center = Param("box_center", np.zeros(dim))
        self.box_halfraw = Param("box_halfraw",
                                 np.full(dim, math.log(math.expm1(INIT_BOX_HALFWIDTH))))
        self.logscale = Param("logscale", np.zeros(n_components))
        self.logits = Param("logits", np.zeros(n_components))
        self.embed = Param("embed", 0.1 * rng.standard_normal((n_components, embed_dim)))
        base = DiagonalGaussian("comp.base", dim, std=base_std, trainable=train_base)
        self.comp = FlowStack("comp", dim, comp_depth, hidden, n_hidden,
                              embed_dim, activation, scale_clamp, base, rng)
        self.boundary_nudges = 0
        self.boundary_failures = 0

    def parameters(self) -> list[Param]:
        out = [self.logits, self.anchors, self.logscale, self.embed]
        if self.train_box:
            out += [self.box_center, self.box_halfraw]
        out += self.pre.parameters() + self.comp.parameters()
        return out

    def all_params(self) -> list[Param]:
        """Every parameter including frozen ones, for serialization."""
        return ([self.logits, self.anchors, self.logscale, self.embed,
                 self.box_center, self.box_halfraw]
                + self.pre.parameters() + self.comp.chain.parameters()
                + [self.comp.base.mean, self.comp.base.logstd])

    def tess_vars(self, bind: Binding):
        center = bind[self.box_center]
        half = ad.softplus(bind[self.box_halfraw])
        return (bind[self.anchors], center - half, center + half,
                ad.exp(bind[self.logscale]))

    def tessellation(self) -> Tessellation:
        half = np.logaddexp(0.0, self.box_halfraw.value)
        return new_tessellation(self.anchors.value, self.box_center.value - half,
                                self.box_center.value + half,
                                np.exp(self.logscale.value))

    def project_into_box(self) -> None:
        half = np.logaddexp(0.0, self.box_halfraw.value)
        lo = self.box_center.value - half + BOX_MARGIN
        hi = self.box_center.value + half - BOX_MARGIN
        np.clip(self.anchors.value, lo, hi, out=self.anchors.value)

    def init_from_data(self, x: np.ndarray, rng) -> None:
        """Place the box around the data and the anchors over it.

        The box gets a 25% margin beyond the data range per side; anchors
        spread over a latent-space subsample so no component starts dead.
        """
        x = np.asarray(x, dtype=np.float64)
        sub = x[rng.permutation(x.shape[0])[:2048]]
        tape = Tape(record=False)
        z, _ = self.pre.inverse(Binding(tape, trainable=False), tape.const(sub))
        z = z.value
        lo, hi = z.min(axis=0), z.max(axis=0)
        half = np.maximum(0.75 * (hi - lo), 0.5)
        self.box_center.value[:] = 0.5 * (lo + hi)
        self.box_halfraw.value[:] = np.log(np.expm1(half))
        a = _kmeans_rows(z, self.n_components, rng)
        while True:
            if self.n_components == 1:
                break
            d2 = ((a[:, None, :] - a[None, :, :]) ** 2).sum(-1)
            d2[np.diag_indices(self.n_components)] = np.inf
            if d2.min() > MIN_ANCHOR_SEPARATION ** 2:
                break
            a += 1e-6 * rng.standard_normal(a.shape)
        self.anchors.value[:] = a
        self.project_into_box()

    def logprob_graph(self, bind: Binding, x: Var):
        """Per-row log density and the mask of boundary failures.

        Rows whose latent point sits on a cell boundary are nudged a hair
        toward their anchor and retried; rows still failing (outside the
        box entirely) score a large negative sentinel with zero gradient.
        """
        tape = bind.tape
        anchors, lo, hi, scales = self.tess_vars(bind)
        z, ld_pre = self.pre.inverse(bind, x)
        k = locate_many(self.tessellation(), z.value)
        inv = cm.inverse_graph(anchors, lo, hi, scales, k, z)
        if inv.bad.any():
            self.boundary_nudges += int(inv.bad.sum())
            pull = tape.const(np.where(inv.bad, NUDGE, 0.0)[:, None])
            z = z + pull * (tape.const(self.anchors.value[k]) - z)
            inv = cm.inverse_graph(anchors, lo, hi, scales, k, z)
            self.boundary_failures += int(inv.bad.sum())
        cond = ad.gather_rows(bind[self.embed], k)
        prior = ad.gather_rows(ad.log_softmax(bind[self.logits]), k)
        logp = (self.comp.logprob(bind, inv.point, cond)
                + inv.logdet + prior + ld_pre)
        if inv.bad.any():
            logp = ad.masked_fill(logp, ~inv.bad, SENTINEL_LOGPROB)
        return logp, inv.bad


def mixture_logprob(mix: MixtureModel, x):
    """Log density at one point (returns float) or rows of points."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    rows = np.atleast_2d(x)
    if rows.shape[1] != mix.dim:
        raise ShapeMismatch(f"points must have {mix.dim} columns, got {rows.shape[1]}")
    if not np.all(np.isfinite(rows)):
        raise NonFiniteInput("points contain non-finite entries")
    tape = Tape(record=False)
    lp, _ = mix.logprob_graph(Binding(tape, trainable=False), tape.const(rows))
    return float(lp.value[0]) if single else lp.value.copy()


def mixture_sample(mix: MixtureModel, n: int, rng, return_parts: bool = False):
    """Draw n points: component, base noise, component flow, cell map, and
    the latent-to-data flow, in that order."""
    if n < 1:
        raise ShapeMismatch("n must be at least 1")
    p = np.exp(mix.logits.value - mix.logits.value.max())
    p /= p.sum()
    k = rng.choice(mix.n_components, size=n, p=p)
    u = mix.comp.base.sample(n, rng)
    tape = Tape(record=False)
    bind = Binding(tape, trainable=False)
    cond = ad.gather_rows(bind[mix.embed], k)
    w, _ = mix.comp.forward(bind, tape.const(u), cond)
    anchors, lo, hi, scales = mix.tess_vars(bind)
    z = cm.forward_graph(anchors, lo, hi, scales, k, w).point
    x, _ = mix.pre.forward(bind, z)
    if return_parts:
        return x.value.copy(), k, z.value.copy()
    return x.value.copy()


def train_mixture(mix: MixtureModel, x_train, x_val, *, lr: float = 1e-3,
                  batch_size: int = 256, epochs: int = 200, patience: int = 20,
                  seed: int = 0, init_anchors: bool = True,
                  log=None) -> TrainReport:
    """Maximize mean log density with Adam and validation early stopping."""
    x_train = np.asarray(x_train, dtype=np.float64)
    x_val = np.asarray(x_val, dtype=np.float64)
    for name, arr in (("x_train", x_train), ("x_val", x_val)):
        if arr.ndim != 2 or arr.shape[1] != mix.dim:
            raise ShapeMismatch(f"{name} must be (n, {mix.dim}), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteInput(f"{name} contains non-finite entries")
    if init_anchors:
        mix.init_from_data(x_train, np.random.default_rng(seed))

    def batch_loss(idx, rng):
        tape = Tape()
        bind = Binding(tape)
        lp, _ = mix.logprob_graph(bind, tape.const(x_train[idx]))
        return -ad.mean(lp), bind

    def val_score():
        return float(-mixture_logprob(mix, x_val).mean())

    return fit(mix.parameters(), batch_loss, val_score, x_train.shape[0],
               batch_size=batch_size, epochs=epochs, lr=lr, seed=seed,
               patience=patience, project=mix.project_into_box, log=log)
