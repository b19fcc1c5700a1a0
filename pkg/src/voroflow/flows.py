"""Affine coupling flows.

A coupling block passes one subset of coordinates through unchanged, feeds
them (plus any conditioning vector) to a small MLP, and applies the
predicted scale and shift to the remaining coordinates.  Blocks are exactly
invertible for any finite network output because the log-scale is clamped.
Masks cycle through four schemes so every coordinate is transformed within
any four consecutive blocks.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Binding, Param, Tape, Var
from .errors import NonFiniteActivation, ShapeMismatch

ACTIVATIONS = {
    "swish": ad.swish,
    "tanh": ad.tanh,
}

LOG_TWO_PI = float(np.log(2.0 * np.pi))


def coupling_masks(dim: int, n_blocks: int) -> list[np.ndarray]:
    """Boolean pass-through masks cycling first half, second half, odd, even."""
    if dim < 2:
        raise ShapeMismatch("coupling blocks need dimension >= 2")
    idx = np.arange(dim)
    schemes = [idx < dim // 2, idx >= dim // 2, idx % 2 == 1, idx % 2 == 0]
    return [schemes[i % 4].copy() for i in range(n_blocks)]


class Mlp:
    """Fully connected network; the output layer starts at zero so whatever
    consumes it begins as an identity transform."""

    def __init__(self, name: str, in_dim: int, hidden: int, out_dim: int,
                 n_hidden: int = 2, activation: str = "swish", rng=None):
        if activation not in ACTIVATIONS:
            raise ShapeMismatch(f"unknown activation {activation!r}")
        self.activation = activation
        rng = rng or np.random.default_rng(0)
        sizes = [in_dim] + [hidden] * n_hidden + [out_dim]
        self.weights: list[Param] = []
        self.biases: list[Param] = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            w = np.zeros((a, b)) if last else rng.normal(0.0, 1.0 / np.sqrt(a), (a, b))
            self.weights.append(Param(f"{name}.w{i}", w))
            self.biases.append(Param(f"{name}.b{i}", np.zeros(b)))

    def parameters(self) -> list[Param]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def apply(self, bind: Binding, x: Var) -> Var:
        act = ACTIVATIONS[self.activation]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.matmul(h, bind[w]) + bind[b]
            if i != last:
                h = act(h)
        return h


class AffineCoupling:
    """One coupling block: y = x * exp(s) + t on the unmasked coordinates."""

    def __init__(self, name: str, mask: np.ndarray, hidden: int, n_hidden: int = 2,
                 cond_dim: int = 0, activation: str = "swish",
                 scale_clamp: float = 5.0, rng=None):
        mask = np.asarray(mask, dtype=bool)
        if not (mask.any() and (~mask).any()):
            raise ShapeMismatch("mask must pass some coordinates and transform others")
        self.mask = mask
        self.pass_idx = np.flatnonzero(mask)
        self.free_idx = np.flatnonzero(~mask)
        self.perm = np.argsort(np.concatenate([self.pass_idx, self.free_idx]))
        self.scale_clamp = float(scale_clamp)
        self.net = Mlp(f"{name}.net", len(self.pass_idx) + cond_dim, hidden,
                       2 * len(self.free_idx), n_hidden, activation, rng)

    def parameters(self) -> list[Param]:
        return self.net.parameters()

    def _scale_shift(self, bind: Binding, passed: Var, cond):
        inp = passed if cond is None else ad.concat([passed, cond], axis=1)
        out = self.net.apply(bind, inp)
        if not np.all(np.isfinite(out.value)):
            raise NonFiniteActivation("coupling network produced non-finite output")
        m = len(self.free_idx)
        scale = ad.clip(out[:, :m], -self.scale_clamp, self.scale_clamp)
        shift = out[:, m:]
        return scale, shift

    def forward(self, bind: Binding, x: Var, cond=None):
        passed = ad.take_cols(x, self.pass_idx)
        free = ad.take_cols(x, self.free_idx)
        scale, shift = self._scale_shift(bind, passed, cond)
        moved = free * ad.exp(scale) + shift
        y = ad.take_cols(ad.concat([passed, moved], axis=1), self.perm)
        return y, ad.vsum(scale, axis=1)

    def inverse(self, bind: Binding, y: Var, cond=None):
        passed = ad.take_cols(y, self.pass_idx)
        moved = ad.take_cols(y, self.free_idx)
        scale, shift = self._scale_shift(bind, passed, cond)
        free = (moved - shift) * ad.exp(-scale)
        x = ad.take_cols(ad.concat([passed, free], axis=1), self.perm)
        return x, -ad.vsum(scale, axis=1)


class CouplingChain:
    """A sequence of coupling blocks with no base distribution.

    ``forward`` applies blocks in order; ``inverse`` unwinds them.  Both
    return (points, per-row log |det J|).  ``eval_count`` tracks how many
    batched passes have run, for cost diagnostics.
    """

    def __init__(self, name: str, dim: int, n_blocks: int, hidden: int = 64,
                 n_hidden: int = 2, cond_dim: int = 0, activation: str = "swish",
                 scale_clamp: float = 5.0, rng=None):
        self.dim = dim
        self.cond_dim = cond_dim
        masks = coupling_masks(dim, n_blocks) if n_blocks > 0 else []
        self.blocks = [
            AffineCoupling(f"{name}.block{i}", m, hidden, n_hidden, cond_dim,
                           activation, scale_clamp, rng)
            for i, m in enumerate(masks)
        ]
        self.eval_count = 0

    def parameters(self) -> list[Param]:
        out = []
        for b in self.blocks:
            out.extend(b.parameters())
        return out

    def _zero(self, x: Var) -> Var:
        return x.tape.const(np.zeros(x.value.shape[0]))

    def forward(self, bind: Binding, z: Var, cond=None):
        self.eval_count += 1
        ld = self._zero(z)
        for b in self.blocks:
            z, d = b.forward(bind, z, cond)
            ld = ld + d
        return z, ld

    def inverse(self, bind: Binding, x: Var, cond=None):
        self.eval_count += 1
        ld = self._zero(x)
        for b in reversed(self.blocks):
            x, d = b.inverse(bind, x, cond)
            ld = ld + d
        return x, ld


class DiagonalGaussian:
    """Diagonal Gaussian with mean and log-std vectors, optionally frozen."""

    def __init__(self, name: str, dim: int, mean: float = 0.0, std: float = 1.0,
                 trainable: bool = True):
        self.dim = dim
        self.trainable = trainable
        self.mean = Param(f"{name}.mean", np.full(dim, float(mean)))
        self.logstd = Param(f"{name}.logstd", np.full(dim, float(np.log(std))))

    def parameters(self) -> list[Param]:
        return [self.mean, self.logstd] if self.trainable else []

    def logprob(self, bind: Binding, x: Var) -> Var:
        ls = bind[self.logstd]
        z = (x - bind[self.mean]) * ad.exp(-ls)
        return -0.5 * ad.vsum(z * z, axis=1) - ad.vsum(ls) - 0.5 * self.dim * LOG_TWO_PI

    def logprob_of_noise(self, bind: Binding, noise: np.ndarray) -> Var:
        """Density of mean + std * noise given the noise draw itself."""
        c = -0.5 * (noise * noise).sum(1) - 0.5 * noise.shape[1] * LOG_TWO_PI
        return bind.tape.const(c) - ad.vsum(bind[self.logstd])

    def transform_noise(self, bind: Binding, noise: np.ndarray) -> Var:
        return bind[self.mean] + ad.exp(bind[self.logstd]) * noise

    def sample(self, n: int, rng) -> np.ndarray:
        noise = rng.standard_normal((n, self.dim))
        return self.mean.value + np.exp(self.logstd.value) * noise


class FlowStack:
    """Coupling chain on top of a diagonal Gaussian base.

    ``forward`` maps base points toward data; ``logprob`` runs the inverse
    direction and adds the base density.
    """

    def __init__(self, name: str, dim: int, n_blocks: int, hidden: int = 64,
                 n_hidden: int = 2, cond_dim: int = 0, activation: str = "swish",
                 scale_clamp: float = 5.0, base: DiagonalGaussian | None = None,
                 rng=None):
        self.dim = dim
        self.chain = CouplingChain(name, dim, n_blocks, hidden, n_hidden,
                                   cond_dim, activation, scale_clamp, rng)
        self.base = base if base is not None else DiagonalGaussian(f"{name}.base", dim)

    @property
    def blocks(self):
        return self.chain.blocks

    @property
    def eval_count(self):
        return self.chain.eval_count

    def parameters(self) -> list[Param]:
        return self.chain.parameters() + self.base.parameters()

    def forward(self, bind: Binding, z: Var, cond=None):
        return self.chain.forward(bind, z, cond)

    def inverse(self, bind: Binding, x: Var, cond=None):
        return self.chain.inverse(bind, x, cond)

    def logprob(self, bind: Binding, x: Var, cond=None) -> Var:
        z, ld = self.chain.inverse(bind, x, cond)
        return self.base.logprob(bind, z) + ld

    def sample(self, n: int, rng, cond=None) -> np.ndarray:
        tape = Tape(record=False)
        bind = Binding(tape, trainable=False)
        z = tape.const(self.base.sample(n, rng))
        c = None if cond is None else tape.const(np.asarray(cond, dtype=np.float64))
        x, _ = self.chain.forward(bind, z, c)
        return x.value
