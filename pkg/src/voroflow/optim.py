"""Adam optimizer and the shared minibatch training loop."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Param
from .errors import DivergedLoss


class Adam:
    """Adaptive-moment gradient descent with bias correction."""

    def __init__(self, params: list[Param], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {p.name: np.zeros_like(p.value) for p in self.params}
        self._v = {p.name: np.zeros_like(p.value) for p in self.params}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p in self.params:
            g = grads[p.name]
            m = self._m[p.name]
            v = self._v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value = p.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class EpochStats:
    epoch: int
    train_nll: float
    val_nll: float
    seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = float("inf")

    def rows(self) -> list[list]:
        return [[e.epoch, e.train_nll, e.val_nll, round(e.seconds, 3)] for e in self.epochs]


def _snapshot(params: list[Param]) -> dict[str, np.ndarray]:
    return {p.name: p.value.copy() for p in params}


def _restore(params: list[Param], snap: dict[str, np.ndarray]) -> None:
    for p in params:
        p.value = snap[p.name].copy()


def fit(params: list[Param], batch_loss, val_score, n_train: int, *,
        batch_size: int, epochs: int, lr: float, seed: int,
        patience: int = 10, project=None, log=None) -> TrainReport:
    """Minimize a per-batch mean NLL with Adam and validation early stopping.

    ``batch_loss(idx, rng) -> (loss Var, Binding)`` builds one recorded
    step on a fresh tape; ``val_score() -> float`` must be deterministic so
    epochs are comparable; ``project()`` runs after every step to clamp
    parameters back into their feasible region.  On a non-finite objective
    the best parameters seen so far are restored and DivergedLoss is raised
    with the partial report attached.
    """
    opt = Adam(params, lr=lr)
    rng = np.random.default_rng(seed)
    report = TrainReport()
    best = _snapshot(params)
    stale = 0
    for epoch in range(epochs):
        t0 = time.perf_counter()
        perm = rng.permutation(n_train)
        total = 0.0
        seen = 0
        for s in range(0, n_train, batch_size):
            idx = perm[s:s + batch_size]
            loss, bind = batch_loss(idx, rng)
            lv = float(loss.value)
            if not np.isfinite(lv):
                _restore(params, best)
                err = DivergedLoss(f"objective became non-finite at epoch {epoch}")
                err.report = report
                raise err
            grads = bind.grads_by_name(bind.tape.backward(loss), params)
            opt.step(grads)
            if project is not None:
                project()
            total += lv * len(idx)
            seen += len(idx)
        val = float(val_score())
        if not np.isfinite(val):
            _restore(params, best)
            err = DivergedLoss(f"validation score became non-finite at epoch {epoch}")
            err.report = report
            raise err
        report.epochs.append(EpochStats(epoch, total / seen, val, time.perf_counter() - t0))
        if log is not None:
            log(report.epochs[-1])
        if val < report.best_val - 1e-12:
            report.best_val = val
            report.best_epoch = epoch
            best = _snapshot(params)
            stale = 0
        else:
            stale += 1
            if stale > patience:
                break
    _restore(params, best)
    return report
