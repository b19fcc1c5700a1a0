"""Reverse-mode automatic differentiation over dense float64 arrays.

Evaluation is eager: every operation computes its value immediately and,
when the tape is recording, appends one node holding the operand ids and a
closure that maps the output gradient to operand gradients.  backward()
walks the node list once in reverse creation order, which is a valid
reverse topological order because nodes can only reference earlier nodes.

Values are numpy arrays of rank 0, 1 or 2.  Constants (plain arrays,
Python numbers, or Vars created with ``Tape.const``) participate in
arithmetic but receive no gradient.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    DivisionByZero,
    LogOfNonPositive,
    NegativeInput,
    NonScalarRoot,
    NoPositiveEntries,
    ShapeMismatch,
    TapeNotRecording,
)

__all__ = [
    "Tape", "Var", "Gradients", "Param", "Binding",
    "add", "sub", "mul", "div", "neg",
    "vsum", "mean", "dot", "matvec", "matmul", "transpose",
    "exp", "log", "sqrt", "tanh", "absval", "softplus",
    "reshape", "broadcast_to", "concat", "take_cols", "gather_rows", "pick",
    "masked_fill", "clip", "select_min_positive",
    "sigmoid", "swish", "logsumexp", "log_softmax",
    "grad_check",
]


class Tape:
    """Recording context for one forward pass.

    A tape created with ``record=False`` still supports every operation but
    stores nothing, which makes it a cheap way to evaluate a graph without
    gradients.
    """

    __slots__ = ("record", "_nodes")

    def __init__(self, record: bool = True):
        self.record = record
        self._nodes: list = []

    def var(self, value) -> "Var":
        """Create a differentiable leaf."""
        v = np.asarray(value, dtype=np.float64)
        if not self.record:
            return Var(self, -1, v)
        self._nodes.append(None)
        return Var(self, len(self._nodes) - 1, v)

    def const(self, value) -> "Var":
        """Create a leaf that never receives a gradient."""
        return Var(self, -1, np.asarray(value, dtype=np.float64))

    def _emit(self, value, inputs, vjp) -> "Var":
        # inputs: tuple of Vars; nodes only created when a gradient can flow.
        if self.record and any(x._i >= 0 for x in inputs):
            self._nodes.append((tuple(x._i for x in inputs), vjp))
            return Var(self, len(self._nodes) - 1, value)
        return Var(self, -1, value)

    def backward(self, root: "Var") -> "Gradients":
        """Accumulate d(root)/d(leaf) for every leaf reachable from root.

        The root must be a scalar.  Unreached leaves read back as zero
        tensors.  Node visitation order is deterministic, so identical
        tapes give bitwise-identical gradients.
        """
        if not self.record:
            raise TapeNotRecording("tape was created with record=False")
        if root.tape is not self:
            raise ShapeMismatch("root belongs to a different tape")
        if root.value.shape != ():
            raise NonScalarRoot(f"root has shape {root.value.shape}, expected scalar")
        grads: list = [None] * len(self._nodes)
        if root._i >= 0:
            grads[root._i] = np.ones((), dtype=np.float64)
            for i in range(root._i, -1, -1):
                g = grads[i]
                if g is None:
                    continue
                node = self._nodes[i]
                if node is None:
                    continue
                in_ids, vjp = node
                for j, gj in zip(in_ids, vjp(g)):
                    if j < 0 or gj is None:
                        continue
                    grads[j] = gj if grads[j] is None else grads[j] + gj
        return Gradients(grads)


class Var:
    """A value on a tape.  Supports the usual arithmetic operators."""

    __slots__ = ("tape", "_i", "value")

    def __init__(self, tape: Tape, i: int, value: np.ndarray):
        self.tape = tape
        self._i = i
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, tracked={self._i >= 0})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, n):
        if not isinstance(n, int) or n < 1:
            raise ShapeMismatch("only positive integer powers are supported")
        out = self
        for _ in range(n - 1):
            out = mul(out, self)
        return out

    def __abs__(self):
        return absval(self)

    def __getitem__(self, key):
        x = self
        val = x.value[key]
        shape = x.value.shape

        def vjp(g):
            z = np.zeros(shape, dtype=np.float64)
            z[key] = g
            return (z,)

        return x.tape._emit(np.asarray(val, dtype=np.float64), (x,), vjp)


class Gradients:
    """Read-only view of the gradients produced by one backward pass."""

    def __init__(self, grads: list):
        self._grads = grads

    def __getitem__(self, var: Var) -> np.ndarray:
        if var._i < 0:
            return np.zeros_like(var.value)
        g = self._grads[var._i]
        if g is None:
            return np.zeros_like(var.value)
        return np.asarray(g, dtype=np.float64)


class Param:
    """A named trainable array living outside any tape."""

    __slots__ = ("name", "value")

    def __init__(self, name: str, value):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.value.shape})"


class Binding:
    """Maps Params to Vars on one tape, caching so each param binds once.

    ``trainable=False`` binds every param as a constant, which keeps
    evaluation tapes small.
    """

    def __init__(self, tape: Tape, trainable: bool = True):
        self.tape = tape
        self.trainable = trainable
        self._cache: dict[int, Var] = {}

    def __getitem__(self, p: Param) -> Var:
        v = self._cache.get(id(p))
        if v is None:
            v = self.tape.var(p.value) if self.trainable else self.tape.const(p.value)
            self._cache[id(p)] = v
        return v

    def grads_by_name(self, grads: Gradients, params) -> dict[str, np.ndarray]:
        return {p.name: grads[self[p]] for p in params}


# ---- helpers ----

def _lift(t: Tape, x) -> Var:
    if isinstance(x, Var):
        if x.tape is not t:
            raise ShapeMismatch("operands belong to different tapes")
        return x
    return Var(t, -1, np.asarray(x, dtype=np.float64))


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_op(a, b, fn):
    try:
        return fn(a, b)
    except ValueError as e:
        raise ShapeMismatch(str(e)) from None


# ---- arithmetic ----

def add(a, b):
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    out = _broadcast_op(a.value, b.value, np.add)
    ash, bsh = a.value.shape, b.value.shape

    def vjp(g):
        return (_unbroadcast(g, ash), _unbroadcast(g, bsh))

    return t._emit(out, (a, b), vjp)


def sub(a, b):
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    out = _broadcast_op(a.value, b.value, np.subtract)
    ash, bsh = a.value.shape, b.value.shape

    def vjp(g):
        return (_unbroadcast(g, ash), _unbroadcast(-g, bsh))

    return t._emit(out, (a, b), vjp)


def mul(a, b):
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    out = _broadcast_op(a.value, b.value, np.multiply)
    av, bv = a.value, b.value

    def vjp(g):
        return (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))

    return t._emit(out, (a, b), vjp)


def div(a, b):
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    if np.any(b.value == 0.0):
        raise DivisionByZero("divisor contains an exact zero")
    out = _broadcast_op(a.value, b.value, np.divide)
    av, bv = a.value, b.value

    def vjp(g):
        ga = _unbroadcast(g / bv, av.shape)
        gb = _unbroadcast(-g * av / (bv * bv), bv.shape)
        return (ga, gb)

    return t._emit(out, (a, b), vjp)


def neg(a):
    t = _tape_of(a)
    a = _lift(t, a)
    return t._emit(-a.value, (a,), lambda g: (-g,))


# ---- reductions and linear algebra ----

def vsum(a, axis=None, keepdims: bool = False):
    """Sum over all entries or along one axis."""
    t = _tape_of(a)
    a = _lift(t, a)
    out = a.value.sum(axis=axis, keepdims=keepdims)
    shape = a.value.shape

    def vjp(g):
        g = np.asarray(g, dtype=np.float64)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return t._emit(np.asarray(out, dtype=np.float64), (a,), vjp)


def mean(a, axis=None, keepdims: bool = False):
    a = a if isinstance(a, Var) else _lift(_tape_of(a), a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(vsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def dot(a, b):
    """Inner product of two rank-1 values."""
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    if a.value.ndim != 1 or b.value.ndim != 1 or a.value.shape != b.value.shape:
        raise ShapeMismatch(f"dot needs equal-length vectors, got {a.value.shape} and {b.value.shape}")
    av, bv = a.value, b.value

    def vjp(g):
        return (g * bv, g * av)

    return t._emit(np.asarray(av @ bv), (a, b), vjp)


def matvec(a, x):
    """Rank-2 times rank-1."""
    t = _tape_of(a, x)
    a, x = _lift(t, a), _lift(t, x)
    if a.value.ndim != 2 or x.value.ndim != 1 or a.value.shape[1] != x.value.shape[0]:
        raise ShapeMismatch(f"matvec shapes {a.value.shape} and {x.value.shape} do not align")
    av, xv = a.value, x.value

    def vjp(g):
        return (np.outer(g, xv), av.T @ g)

    return t._emit(av @ xv, (a, x), vjp)


def matmul(a, b):
    """Rank-2 times rank-2."""
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeMismatch(f"matmul shapes {a.value.shape} and {b.value.shape} do not align")
    av, bv = a.value, b.value

    def vjp(g):
        return (g @ bv.T, av.T @ g)

    return t._emit(av @ bv, (a, b), vjp)


def transpose(a):
    t = _tape_of(a)
    a = _lift(t, a)
    if a.value.ndim != 2:
        raise ShapeMismatch("transpose needs a rank-2 value")
    return t._emit(a.value.T.copy(), (a,), lambda g: (g.T,))


# ---- elementwise transcendentals ----

def exp(a):
    t = _tape_of(a)
    a = _lift(t, a)
    out = np.exp(a.value)
    return t._emit(out, (a,), lambda g: (g * out,))


def log(a):
    t = _tape_of(a)
    a = _lift(t, a)
    if np.any(a.value <= 0.0):
        raise LogOfNonPositive("log needs strictly positive input")
    av = a.value
    return t._emit(np.log(av), (a,), lambda g: (g / av,))


def sqrt(a):
    t = _tape_of(a)
    a = _lift(t, a)
    if np.any(a.value < 0.0):
        raise NegativeInput("sqrt needs non-negative input")
    out = np.sqrt(a.value)

    def vjp(g):
        return (g / (2.0 * out),)

    return t._emit(out, (a,), vjp)


def tanh(a):
    t = _tape_of(a)
    a = _lift(t, a)
    out = np.tanh(a.value)
    return t._emit(out, (a,), lambda g: (g * (1.0 - out * out),))


def absval(a):
    t = _tape_of(a)
    a = _lift(t, a)
    s = np.sign(a.value)
    return t._emit(np.abs(a.value), (a,), lambda g: (g * s,))


def _sigmoid_val(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(a):
    """log(1 + exp(a)), computed stably."""
    t = _tape_of(a)
    a = _lift(t, a)
    av = np.atleast_1d(np.asarray(a.value, dtype=np.float64))
    out = np.logaddexp(0.0, av).reshape(a.value.shape)
    sig = _sigmoid_val(av).reshape(a.value.shape)
    return t._emit(out, (a,), lambda g: (g * sig,))


# ---- shape manipulation ----

def reshape(a, shape):
    t = _tape_of(a)
    a = _lift(t, a)
    old = a.value.shape
    out = a.value.reshape(shape)
    return t._emit(out, (a,), lambda g: (g.reshape(old),))


def broadcast_to(a, shape):
    t = _tape_of(a)
    a = _lift(t, a)
    out = np.broadcast_to(a.value, shape).copy()
    old = a.value.shape
    return t._emit(out, (a,), lambda g: (_unbroadcast(g, old),))


def concat(xs, axis: int = 0):
    xs = list(xs)
    t = _tape_of(*xs)
    xs = [_lift(t, x) for x in xs]
    vals = [x.value for x in xs]
    out = np.concatenate(vals, axis=axis)
    sizes = [v.shape[axis] for v in vals]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return t._emit(out, tuple(xs), vjp)


def take_cols(a, cols):
    """Select (or permute) columns of a rank-2 value by integer index."""
    t = _tape_of(a)
    a = _lift(t, a)
    cols = np.asarray(cols, dtype=np.intp)
    if a.value.ndim != 2:
        raise ShapeMismatch("take_cols needs a rank-2 value")
    out = a.value[:, cols]
    shape = a.value.shape

    def vjp(g):
        z = np.zeros(shape, dtype=np.float64)
        np.add.at(z, (slice(None), cols), g)
        return (z,)

    return t._emit(out, (a,), vjp)


def gather_rows(a, idx):
    """Select rows (rank-2) or entries (rank-1) by integer index."""
    t = _tape_of(a)
    a = _lift(t, a)
    idx = np.asarray(idx, dtype=np.intp)
    out = a.value[idx]
    shape = a.value.shape

    def vjp(g):
        z = np.zeros(shape, dtype=np.float64)
        np.add.at(z, idx, g)
        return (z,)

    return t._emit(out, (a,), vjp)


def pick(a, idx):
    """Per-row element selection: out[n] = a[n, idx[n]]."""
    t = _tape_of(a)
    a = _lift(t, a)
    idx = np.asarray(idx, dtype=np.intp)
    if a.value.ndim != 2 or idx.shape != (a.value.shape[0],):
        raise ShapeMismatch("pick needs a rank-2 value and one index per row")
    rows = np.arange(a.value.shape[0])
    out = a.value[rows, idx]
    shape = a.value.shape

    def vjp(g):
        z = np.zeros(shape, dtype=np.float64)
        np.add.at(z, (rows, idx), g)
        return (z,)

    return t._emit(out, (a,), vjp)


# ---- masking and selection ----

def masked_fill(a, keep, fill):
    """Replace entries where ``keep`` is False by the constant ``fill``.

    Gradient flows only through kept entries; ``fill`` may be a scalar or
    an array broadcastable against ``a``.
    """
    t = _tape_of(a)
    a = _lift(t, a)
    keep = np.asarray(keep, dtype=bool)
    fillv = np.asarray(fill, dtype=np.float64)
    out = _broadcast_op(a.value, fillv, lambda x, f: np.where(keep, x, f))
    shape = a.value.shape

    def vjp(g):
        return (_unbroadcast(np.where(keep, g, 0.0), shape),)

    return t._emit(out, (a,), vjp)


def clip(a, lo=None, hi=None):
    """Clamp entries to [lo, hi]; gradient passes where the value is kept."""
    t = _tape_of(a)
    a = _lift(t, a)
    out = np.clip(a.value, lo, hi)
    passed = np.ones(a.value.shape, dtype=bool)
    if lo is not None:
        passed &= a.value >= lo
    if hi is not None:
        passed &= a.value <= hi

    def vjp(g):
        return (np.where(passed, g, 0.0),)

    return t._emit(out, (a,), vjp)


def select_min_positive(a, valid=None):
    """Smallest strictly positive entry and its index.

    Rank-1 input returns a scalar Var and an int; rank-2 input selects per
    row and returns a rank-1 Var plus an index array.  ``valid`` optionally
    masks out candidates.  The gradient is one-hot on the selected entry.
    Ties resolve to the smallest index.
    """
    t = _tape_of(a)
    a = _lift(t, a)
    av = a.value
    ok = (av > 0.0) & np.isfinite(av)
    if valid is not None:
        ok = ok & np.asarray(valid, dtype=bool)
    masked = np.where(ok, av, np.inf)
    shape = av.shape
    if av.ndim == 1:
        idx = int(np.argmin(masked))
        if not np.isfinite(masked[idx]):
            raise NoPositiveEntries("no positive candidate")
        out = np.asarray(av[idx])

        def vjp(g):
            z = np.zeros(shape, dtype=np.float64)
            z[idx] = g
            return (z,)

        return t._emit(out, (a,), vjp), idx
    if av.ndim == 2:
        idx = np.argmin(masked, axis=1)
        rows = np.arange(av.shape[0])
        if not np.all(np.isfinite(masked[rows, idx])):
            bad = int(np.flatnonzero(~np.isfinite(masked[rows, idx]))[0])
            raise NoPositiveEntries(f"row {bad} has no positive candidate")
        out = av[rows, idx]

        def vjp(g):
            z = np.zeros(shape, dtype=np.float64)
            z[rows, idx] = g
            return (z,)

        return t._emit(out, (a,), vjp), idx
    raise ShapeMismatch("select_min_positive needs rank-1 or rank-2 input")


# ---- composed helpers ----

def sigmoid(a):
    # 0.5 * (1 + tanh(x / 2)) is exact and stable at both tails.
    return mul(add(tanh(mul(a, 0.5)), 1.0), 0.5)


def swish(a):
    return mul(a, sigmoid(a))


def logsumexp(a, axis=None, keepdims: bool = False):
    """Stable log-sum-exp; the shift is treated as a constant, which leaves
    the gradient unchanged."""
    t = _tape_of(a)
    a = _lift(t, a)
    m = np.max(a.value, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = add(log(vsum(exp(sub(a, m)), axis=axis, keepdims=True)), m)
    if not keepdims:
        if axis is None:
            out = reshape(out, ())
        else:
            kept = tuple(n for ax, n in enumerate(a.value.shape) if ax != axis % a.value.ndim)
            out = reshape(out, kept)
    return out


def log_softmax(a):
    """Log of the softmax of a rank-1 value."""
    if a.value.ndim != 1:
        raise ShapeMismatch("log_softmax needs a rank-1 value")
    return sub(a, logsumexp(a))


# ---- finite-difference checking ----

def grad_check(f, params, step: float = 1e-5) -> float:
    """Compare tape gradients of ``f`` against central finite differences.

    ``f(tape, vars) -> Var`` must build a scalar from the given leaves.
    Returns the worst relative error over every coordinate of every
    parameter, with the difference measured against max(1, |g|).
    """
    params = [np.asarray(p, dtype=np.float64) for p in params]
    tape = Tape()
    leaves = [tape.var(p) for p in params]
    out = f(tape, leaves)
    grads = tape.backward(out)
    exact = [grads[v] for v in leaves]

    def value_at(ps) -> float:
        t = Tape(record=False)
        return float(f(t, [t.var(p) for p in ps]).value)

    worst = 0.0
    for i, p in enumerate(params):
        flat = p.reshape(-1)
        for j in range(flat.size):
            bump = np.zeros_like(flat)
            bump[j] = step
            hi = [q if m != i else (flat + bump).reshape(p.shape) for m, q in enumerate(params)]
            lo = [q if m != i else (flat - bump).reshape(p.shape) for m, q in enumerate(params)]
            fd = (value_at(hi) - value_at(lo)) / (2.0 * step)
            g = exact[i].reshape(-1)[j]
            err = abs(g - fd) / max(1.0, abs(g), abs(fd))
            worst = max(worst, err)
    return worst
