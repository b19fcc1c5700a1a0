"""Dequantization of categorical data through cell maps.

Each discrete variable gets its own tessellation with one cell per value.
A value's conditional q(x|y) is built by sampling a per-value Gaussian,
passing it through a conditional coupling chain, and mapping the result
into the value's cell; the density of the draw is exact, so the evidence
bound E_q[log p(x) - log q(x|y)] is computable and trainable end to end.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from . import cell_map as cm
from .autodiff import Binding, Param, Tape, Var
from .errors import IndexOutOfRange, ShapeMismatch
from .flows import LOG_TWO_PI, CouplingChain, FlowStack
from .optim import TrainReport, fit
from .tessellation import (Tessellation, locate_many, new_tessellation,
                           simplex_anchors, spread_anchors)

INIT_BOX_HALFWIDTH = 4.0
BOX_MARGIN = 1e-3
ANCHOR_RADIUS = 1.0


class PerValueGaussian:
    """Diagonal Gaussian per (variable, value) pair, rows indexed flat."""

    def __init__(self, total_values: int, dim: int, std: float = 0.5):
        self.dim = dim
        self.mean = Param("base.mean", np.zeros((total_values, dim)))
        self.logstd = Param("base.logstd", np.full((total_values, dim), math.log(std)))

    def parameters(self) -> list[Param]:
        return [self.mean, self.logstd]

    def sample_rows(self, bind: Binding, flat: np.ndarray, noise: Var):
        """Draw mean + std * noise for the given flat rows, with its density."""
        mean = ad.gather_rows(bind[self.mean], flat)
        logstd = ad.gather_rows(bind[self.logstd], flat)
        u = mean + ad.exp(logstd) * noise
        logq = (-0.5 * ad.vsum(noise * noise, axis=1)
                - 0.5 * self.dim * LOG_TWO_PI - ad.vsum(logstd, axis=1))
        return u, logq

    def logprob_rows(self, bind: Binding, flat: np.ndarray, u: Var) -> Var:
        mean = ad.gather_rows(bind[self.mean], flat)
        logstd = ad.gather_rows(bind[self.logstd], flat)
        z = (u - mean) * ad.exp(-logstd)
        return (-0.5 * ad.vsum(z * z, axis=1)
                - 0.5 * self.dim * LOG_TWO_PI - ad.vsum(logstd, axis=1))


class DequantModel:
    """Trainable dequantizer: one tessellation per variable, a per-value base,
    and a coupling chain conditioned on a per-value embedding.

    Cell index equals value code, so quantization is plain nearest-anchor
    lookup and every dequantized point decodes back to its source value by
    construction.
    """

    def __init__(self, cardinalities, dim: int = 4, flow_depth: int = 4,
                 hidden: int = 128, n_hidden: int = 2, embed_dim: int = 8,
                 base_std: float = 0.5, share_flow: bool = True,
                 train_box: bool = True, activation: str = "swish",
                 scale_clamp: float = 5.0, seed: int = 0):
        if dim < 1:
            raise ShapeMismatch("dim must be positive")
        if any(k < 2 for k in cardinalities):
            raise ShapeMismatch("every variable needs at least two values")
        self.cardinalities = tuple(int(k) for k in cardinalities)
        self.dim = dim
        self.embed_dim = embed_dim
        self.share_flow = share_flow
        self.train_box = train_box
        rng = np.random.default_rng(seed)

        offsets = np.concatenate([[0], np.cumsum(self.cardinalities)])
        self.offsets = offsets[:-1]
        self.total_values = int(offsets[-1])

        self.anchor_params = []
        self.box_center = []
        self.box_halfraw = []
        self.logscale = []
        halfraw0 = math.log(math.expm1(INIT_BOX_HALFWIDTH))
        for v, k in enumerate(self.cardinalities):
            # a symmetric start when it fits: congruent cells share one bump
            # shape and split an isotropic density evenly
            if k <= dim + 1:
                a = simplex_anchors(k, dim, ANCHOR_RADIUS, rng)
            else:
                a = spread_anchors(k, dim, INIT_BOX_HALFWIDTH, rng, margin=BOX_MARGIN)
            self.anchor_params.append(Param(f"anchors.{v}", a))
            self.box_center.append(Param(f"box_center.{v}", np.zeros(dim)))
            self.box_halfraw.append(Param(f"box_halfraw.{v}", np.full(dim, halfraw0)))
            self.logscale.append(Param(f"logscale.{v}", np.zeros(k)))

        self.base = PerValueGaussian(self.total_values, dim, base_std)
        # center each value's bump on its own anchor so draws start well
        # inside their cells rather than near shared boundaries
        self.base.mean.value = np.concatenate(
            [p.value for p in self.anchor_params], axis=0)
        self.embed = Param("embed", 0.1 * rng.standard_normal((self.total_values, embed_dim)))
        n_chains = 1 if share_flow else self.n_variables
        self.chains = [
            CouplingChain(f"cond_flow.{c}", dim, flow_depth, hidden, n_hidden,
                          embed_dim, activation, scale_clamp, rng)
            for c in range(n_chains)
        ]

    @property
    def n_variables(self) -> int:
        return len(self.cardinalities)

    @property
    def total_dim(self) -> int:
        return self.n_variables * self.dim

    def chain_for(self, v: int) -> CouplingChain:
        return self.chains[0] if self.share_flow else self.chains[v]

    def parameters(self) -> list[Param]:
        out = list(self.anchor_params) + list(self.logscale)
        if self.train_box:
            out += self.box_center + self.box_halfraw
        out += self.base.parameters()
        out.append(self.embed)
        for c in self.chains:
            out.extend(c.parameters())
        return out

    def all_params(self) -> list[Param]:
        """Every parameter including frozen ones, for serialization."""
        out = list(self.anchor_params) + list(self.logscale)
        out += self.box_center + self.box_halfraw
        out += [self.base.mean, self.base.logstd, self.embed]
        for c in self.chains:
            out.extend(c.parameters())
        return out

    def tess_vars(self, bind: Binding, v: int):
        """Anchor, box, and scale graph nodes for one variable."""
        center = bind[self.box_center[v]]
        half = ad.softplus(bind[self.box_halfraw[v]])
        return (bind[self.anchor_params[v]], center - half, center + half,
                ad.exp(bind[self.logscale[v]]))

    def tessellation(self, v: int) -> Tessellation:
        """Frozen numpy snapshot of variable v's current tessellation."""
        half = np.logaddexp(0.0, self.box_halfraw[v].value)
        center = self.box_center[v].value
        return new_tessellation(self.anchor_params[v].value, center - half,
                                center + half, np.exp(self.logscale[v].value))

    def project_into_box(self) -> None:
        """Clamp every anchor strictly inside its current box."""
        for v in range(self.n_variables):
            half = np.logaddexp(0.0, self.box_halfraw[v].value)
            center = self.box_center[v].value
            a = self.anchor_params[v].value
            np.clip(a, center - half + BOX_MARGIN, center + half - BOX_MARGIN, out=a)

    def _check_codes(self, codes: np.ndarray) -> np.ndarray:
        codes = np.asarray(codes, dtype=np.int64)
        if codes.ndim != 2 or codes.shape[1] != self.n_variables:
            raise ShapeMismatch(f"codes must be (n, {self.n_variables}), got {codes.shape}")
        for v, k in enumerate(self.cardinalities):
            if codes[:, v].min() < 0 or codes[:, v].max() >= k:
                raise IndexOutOfRange(f"variable {v} has codes outside [0, {k})")
        return codes

    def sample_parts(self, bind: Binding, codes: np.ndarray, noise: np.ndarray):
        """Dequantize a batch given its noise draws.

        codes is (n, V) ints, noise is (n, V, D) standard normal.  Returns
        the concatenated points (n, V*D) and the exact per-row log q(x|y).
        """
        codes = self._check_codes(codes)
        tape = bind.tape
        parts = []
        logq = tape.const(np.zeros(codes.shape[0]))
        for v in range(self.n_variables):
            flat = self.offsets[v] + codes[:, v]
            u, lq = self.base.sample_rows(bind, flat, tape.const(noise[:, v, :]))
            cond = ad.gather_rows(bind[self.embed], flat)
            w, ld_flow = self.chain_for(v).forward(bind, u, cond)
            anchors, lo, hi, scales = self.tess_vars(bind, v)
            out = cm.forward_graph(anchors, lo, hi, scales, codes[:, v], w)
            parts.append(out.point)
            logq = logq + lq - ld_flow - out.logdet
        return ad.concat(parts, axis=1), logq

    def logq_given(self, bind: Binding, codes: np.ndarray, x: Var):
        """log q(x|y) for given points, via the inverse path.

        Rows whose slice falls on or outside its cell score the sentinel
        -1e4 (the density vanishes toward the boundary, so the sliver this
        hides is negligible for integration).  Returns (logq, bad mask).
        """
        codes = self._check_codes(codes)
        if x.value.shape != (codes.shape[0], self.total_dim):
            raise ShapeMismatch(f"x must be (n, {self.total_dim}), got {x.value.shape}")
        logq = bind.tape.const(np.zeros(codes.shape[0]))
        any_bad = np.zeros(codes.shape[0], dtype=bool)
        for v in range(self.n_variables):
            flat = self.offsets[v] + codes[:, v]
            xv = ad.take_cols(x, np.arange(v * self.dim, (v + 1) * self.dim))
            anchors, lo, hi, scales = self.tess_vars(bind, v)
            inv = cm.inverse_graph(anchors, lo, hi, scales, codes[:, v], xv)
            cond = ad.gather_rows(bind[self.embed], flat)
            u, ld_flow_inv = self.chain_for(v).inverse(bind, inv.point, cond)
            lq = self.base.logprob_rows(bind, flat, u) + ld_flow_inv + inv.logdet
            logq = logq + ad.masked_fill(lq, ~inv.bad, -1e4)
            any_bad |= inv.bad
        return logq, any_bad

    def quantize_many(self, x: np.ndarray) -> np.ndarray:
        """Nearest-anchor value codes per variable for rows of points."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.total_dim:
            raise ShapeMismatch(f"points must have {self.total_dim} columns, got {x.shape[1]}")
        codes = np.empty((x.shape[0], self.n_variables), dtype=np.int64)
        for v in range(self.n_variables):
            codes[:, v] = locate_many(self.tessellation(v),
                                      x[:, v * self.dim:(v + 1) * self.dim])
        return codes


class JointDensity(FlowStack):
    """Density model over the concatenation of all dequantized coordinates."""

    def __init__(self, dim: int, n_blocks: int = 16, hidden: int = 128,
                 n_hidden: int = 2, activation: str = "swish",
                 scale_clamp: float = 5.0, seed: int = 0):
        super().__init__("density", dim, n_blocks, hidden, n_hidden, 0,
                         activation, scale_clamp, rng=np.random.default_rng(seed))


def dequantize(model: DequantModel, y, rng):
    """One dequantization draw for a single row of value codes.

    Returns (x, logq): the continuous point and its exact conditional
    log-density.  quantize(model, x) recovers y for every draw.
    """
    codes = np.asarray(y, dtype=np.int64).reshape(1, -1)
    noise = rng.standard_normal((1, model.n_variables, model.dim))
    tape = Tape(record=False)
    x, logq = model.sample_parts(Binding(tape, trainable=False), codes, noise)
    return x.value[0], float(logq.value[0])


def quantize(model: DequantModel, x) -> np.ndarray:
    """Value codes of the cells a single point lies in."""
    return model.quantize_many(np.asarray(x, dtype=np.float64)[None, :])[0]


def elbo(model: DequantModel, density, y, num_samples: int, rng) -> float:
    """Monte-Carlo evidence bound for one row: mean of log p(x) - log q(x|y)."""
    if num_samples < 1:
        raise ShapeMismatch("num_samples must be at least 1")
    codes = np.broadcast_to(np.asarray(y, dtype=np.int64), (num_samples, len(y)))
    noise = rng.standard_normal((num_samples, model.n_variables, model.dim))
    tape = Tape(record=False)
    bind = Binding(tape, trainable=False)
    x, logq = model.sample_parts(bind, codes, noise)
    logp = density.logprob(bind, x)
    return float(np.mean(logp.value - logq.value))


def _bound_terms(model, density, codes, num_samples, seed, chunk=512):
    """log p(x_s) - log q(x_s|y) draws, shape (num_samples, n rows)."""
    codes = np.asarray(codes, dtype=np.int64)
    rng = np.random.default_rng(seed)
    out = np.empty((num_samples, codes.shape[0]))
    for s0 in range(0, codes.shape[0], chunk):
        rows = codes[s0:s0 + chunk]
        for s in range(num_samples):
            noise = rng.standard_normal((rows.shape[0], model.n_variables, model.dim))
            tape = Tape(record=False)
            bind = Binding(tape, trainable=False)
            x, logq = model.sample_parts(bind, rows, noise)
            logp = density.logprob(bind, x)
            out[s, s0:s0 + rows.shape[0]] = logp.value - logq.value
    return out


def nll_bound_rows(model: DequantModel, density, codes, num_samples: int = 8,
                   seed: int = 0) -> np.ndarray:
    """Per-row negative evidence bound in nats, deterministic under the seed."""
    return -_bound_terms(model, density, codes, num_samples, seed).mean(axis=0)


def nll_bound(model: DequantModel, density, codes, num_samples: int = 8,
              seed: int = 0) -> float:
    """Mean per-example negative evidence bound in nats, deterministic
    under the seed."""
    return float(nll_bound_rows(model, density, codes, num_samples, seed).mean())


def iw_log_evidence(model: DequantModel, density, codes, num_samples: int = 128,
                    seed: int = 0) -> np.ndarray:
    """Per-row importance-sampled log-evidence estimate.

    Averages p(x)/q(x|y) over draws from q before taking the log, so in
    expectation it sits above the plain bound and converges to log p(y).
    """
    terms = _bound_terms(model, density, codes, num_samples, seed)
    m = terms.max(axis=0)
    return m + np.log(np.exp(terms - m).mean(axis=0))


def train_dequant(model: DequantModel, density, train_codes, val_codes, *,
                  lr: float = 1e-3, batch_size: int = 512, epochs: int = 100,
                  patience: int = 10, seed: int = 0, val_samples: int = 4,
                  log=None) -> TrainReport:
    """Minimize the mean negative evidence bound over all parameters.

    One noise draw per row per step; validation uses a fixed noise seed so
    early stopping compares like with like.
    """
    train_codes = model._check_codes(train_codes)
    val_codes = model._check_codes(val_codes)
    params = model.parameters() + density.parameters()

    def batch_loss(idx, rng):
        tape = Tape()
        bind = Binding(tape)
        rows = train_codes[idx]
        noise = rng.standard_normal((rows.shape[0], model.n_variables, model.dim))
        x, logq = model.sample_parts(bind, rows, noise)
        logp = density.logprob(bind, x)
        return ad.mean(logq - logp), bind

    def val_score():
        return nll_bound(model, density, val_codes, val_samples, seed + 1)

    return fit(params, batch_loss, val_score, train_codes.shape[0],
               batch_size=batch_size, epochs=epochs, lr=lr, seed=seed,
               patience=patience, project=model.project_into_box, log=log)
