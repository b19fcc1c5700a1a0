"""Discrete tables, CSV loading, splits, and synthetic generators."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import BadRatios, EmptyFile, RaggedRows, ShapeMismatch


@dataclass(frozen=True)
class DiscreteTable:
    """Integer-coded categorical data.

    codes[n, v] is in [0, cardinalities[v]); vocab[v][c] is the string the
    code c stands for, ordered by first appearance in the source.
    """

    codes: np.ndarray
    cardinalities: tuple[int, ...]
    vocab: tuple[tuple[str, ...], ...]
    columns: tuple[str, ...]

    @property
    def n_rows(self) -> int:
        return self.codes.shape[0]

    @property
    def n_variables(self) -> int:
        return self.codes.shape[1]

    def decode(self, codes=None) -> list[tuple[str, ...]]:
        """Rows of codes back as string tuples; defaults to the whole table."""
        codes = self.codes if codes is None else np.asarray(codes, dtype=np.int64)
        if codes.ndim == 1:
            codes = codes[None, :]
        return [tuple(self.vocab[v][int(c)] for v, c in enumerate(row)) for row in codes]


def _make_table(codes: np.ndarray, vocab, columns) -> DiscreteTable:
    codes = np.ascontiguousarray(codes, dtype=np.int64)
    codes.setflags(write=False)
    return DiscreteTable(
        codes=codes,
        cardinalities=tuple(len(v) for v in vocab),
        vocab=tuple(tuple(v) for v in vocab),
        columns=tuple(columns),
    )


def load_csv_discrete(path) -> DiscreteTable:
    """Read a categorical CSV (header row, RFC-4180 quoting) into codes.

    Vocabulary per column is assigned by order of first appearance, so
    encode -> decode -> encode is exact.  Columns with a single distinct
    value are dropped with a warning because one-value variables carry no
    information.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row]
    if len(rows) < 2:
        raise EmptyFile(f"{path} has no data rows")
    header, data = rows[0], rows[1:]
    width = len(header)
    for i, row in enumerate(data):
        if len(row) != width:
            raise RaggedRows(f"row {i + 2} has {len(row)} fields, expected {width}")
    vocab: list[list[str]] = [[] for _ in range(width)]
    index: list[dict[str, int]] = [{} for _ in range(width)]
    codes = np.empty((len(data), width), dtype=np.int64)
    for r, row in enumerate(data):
        for c, cell in enumerate(row):
            code = index[c].get(cell)
            if code is None:
                code = len(vocab[c])
                vocab[c].append(cell)
                index[c][cell] = code
            codes[r, c] = code
    keep = [c for c in range(width) if len(vocab[c]) > 1]
    dropped = [header[c] for c in range(width) if len(vocab[c]) <= 1]
    if dropped:
        warnings.warn(f"dropping constant columns: {', '.join(dropped)}", stacklevel=2)
    if not keep:
        raise EmptyFile(f"{path} has no non-constant columns")
    return _make_table(codes[:, keep], [vocab[c] for c in keep], [header[c] for c in keep])


@dataclass(frozen=True)
class Split:
    """Disjoint row indices covering a dataset."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def split(n_or_table, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> Split:
    """Shuffle rows and cut at the rounded cumulative ratios, so each part's
    size is within one row of its exact share."""
    n = n_or_table.n_rows if isinstance(n_or_table, DiscreteTable) else int(n_or_table)
    r = np.asarray(ratios, dtype=np.float64)
    if r.shape != (3,) or np.any(r < 0.0) or abs(r.sum() - 1.0) > 1e-9:
        raise BadRatios(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    perm = np.random.default_rng(seed).permutation(n)
    b1 = int(round(n * r[0]))
    b2 = int(round(n * (r[0] + r[1])))
    return Split(perm[:b1], perm[b1:b2], perm[b2:])


# ---- synthetic continuous 2D targets ----

@dataclass(frozen=True)
class GaussianMixture2D:
    """Isotropic Gaussian mixture with a closed-form density."""

    means: np.ndarray
    std: float
    weights: np.ndarray

    def sample(self, n: int, rng) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        return self.means[comp] + self.std * rng.standard_normal((n, 2))

    def logpdf(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        d2 = ((x[:, None, :] - self.means[None, :, :]) ** 2).sum(-1)
        comp = -0.5 * d2 / self.std ** 2 - np.log(2.0 * np.pi * self.std ** 2)
        comp = comp + np.log(self.weights)[None, :]
        m = comp.max(axis=1, keepdims=True)
        return (m + np.log(np.exp(comp - m).sum(axis=1, keepdims=True)))[:, 0]


def gaussian_mixture_2d(shape: str) -> GaussianMixture2D:
    """Generator mixture for the shapes that have one (the Gaussian ones)."""
    if shape == "two_gaussians":
        means = np.array([[-2.0, 0.0], [2.0, 0.0]])
        return GaussianMixture2D(means, 0.3, np.full(2, 0.5))
    if shape == "eight_gaussians":
        ang = 2.0 * np.pi * np.arange(8) / 8.0
        means = 2.0 * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        return GaussianMixture2D(means, 0.2, np.full(8, 0.125))
    raise ShapeMismatch(f"{shape!r} has no closed-form generator density")


_CHECKER_CELLS = np.array([(i, j) for i in range(8) for j in range(8) if (i + j) % 2 == 0])


def synth_continuous_2d(shape: str, n: int, seed: int = 0) -> np.ndarray:
    """Samples from a named 2D target distribution.

    Shapes: two_gaussians, eight_gaussians, checkerboard (8x8 board on
    [-2, 2]^2), two_moons, rings.
    """
    rng = np.random.default_rng(seed)
    if shape in ("two_gaussians", "eight_gaussians"):
        return gaussian_mixture_2d(shape).sample(n, rng)
    if shape == "checkerboard":
        cells = _CHECKER_CELLS[rng.integers(0, len(_CHECKER_CELLS), n)]
        return -2.0 + 0.5 * (cells + rng.random((n, 2)))
    if shape == "two_moons":
        t = np.pi * rng.random(n)
        lower = rng.random(n) < 0.5
        x = np.where(lower, 1.0 - np.cos(t), np.cos(t))
        y = np.where(lower, 0.5 - np.sin(t), np.sin(t))
        pts = np.stack([x, y], axis=1) + 0.08 * rng.standard_normal((n, 2))
        return (pts - np.array([0.5, 0.25])) * 2.0
    if shape == "rings":
        radius = np.where(rng.random(n) < 0.5, 1.0, 2.0)
        t = 2.0 * np.pi * rng.random(n)
        pts = radius[:, None] * np.stack([np.cos(t), np.sin(t)], axis=1)
        return pts + 0.08 * rng.standard_normal((n, 2))
    raise ShapeMismatch(f"unknown shape {shape!r}")


def synth_quantized_2d(shape: str, bins: int, n: int, seed: int = 0) -> DiscreteTable:
    """Quantize a continuous 2D target into equal-width bins per coordinate.

    The result is purely categorical: codes carry no ordering metadata.
    """
    if bins < 2:
        raise ShapeMismatch("bins must be at least 2")
    x = synth_continuous_2d(shape, n, seed)
    codes = np.empty((n, 2), dtype=np.int64)
    for c in range(2):
        lo, hi = x[:, c].min(), x[:, c].max()
        width = (hi - lo) / bins
        codes[:, c] = np.clip(((x[:, c] - lo) / width).astype(np.int64), 0, bins - 1)
    vocab = [[str(i) for i in range(bins)]] * 2
    return _make_table(codes, vocab, ["x0", "x1"])


def binary_toy(n: int, p: float = 0.9, seed: int = 0) -> DiscreteTable:
    """One binary variable whose sample proportion of "a" is exactly
    round(n*p)/n, so the empirical entropy is known in closed form."""
    if not 0.0 < p < 1.0:
        raise ShapeMismatch("p must be strictly between 0 and 1")
    n_a = int(round(n * p))
    codes = np.concatenate([np.zeros(n_a, dtype=np.int64),
                            np.ones(n - n_a, dtype=np.int64)])
    np.random.default_rng(seed).shuffle(codes)
    return _make_table(codes[:, None], [["a", "b"]], ["value"])


# ---- the nursery admission grid ----

_NURSERY_ATTRS = [
    ("parents", ("usual", "pretentious", "great_pret")),
    ("has_nurs", ("proper", "less_proper", "improper", "critical", "very_crit")),
    ("form", ("complete", "completed", "incomplete", "foster")),
    ("children", ("1", "2", "3", "more")),
    ("housing", ("convenient", "less_conv", "critical")),
    ("finance", ("convenient", "inconv")),
    ("social", ("nonprob", "slightly_prob", "problematic")),
    ("health", ("recommended", "priority", "not_recom")),
]


def make_nursery() -> DiscreteTable:
    """The classic nursery-school screening table: the complete grid over
    its eight categorical attributes (3*5*4*4*3*2*3*3 = 12,960 rows).

    The published dataset enumerates exactly this product, so building the
    grid reproduces it (minus the derived outcome column) without any
    download.
    """
    shape = [len(vals) for _, vals in _NURSERY_ATTRS]
    codes = np.indices(shape).reshape(len(shape), -1).T
    return _make_table(codes, [vals for _, vals in _NURSERY_ATTRS],
                       [name for name, _ in _NURSERY_ATTRS])
