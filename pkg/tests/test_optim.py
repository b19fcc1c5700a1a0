"""Adam updates and the shared fit loop."""

import numpy as np
import pytest

from voroflow import autodiff as ad
from voroflow.autodiff import Binding, Param, Tape
from voroflow.errors import DivergedLoss
from voroflow.optim import Adam, EpochStats, TrainReport, fit


def test_adam_single_step_matches_hand_computation():
    p = Param("w", np.array([1.0, -2.0]))
    opt = Adam([p], lr=0.1)
    g = np.array([0.5, -1.0])
    opt.step({"w": g})
    # first step with bias correction moves each coordinate by lr * sign(g)
    want = np.array([1.0, -2.0]) - 0.1 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(p.value, want, atol=1e-9)


def test_adam_converges_on_quadratic():
    p = Param("w", np.array([3.0, -4.0, 0.5]))
    target = np.array([-1.0, 2.0, 0.0])
    opt = Adam([p], lr=0.05)
    for _ in range(2000):
        opt.step({"w": 2.0 * (p.value - target)})
    np.testing.assert_allclose(p.value, target, atol=1e-6)


def _quadratic_problem(noise_scale=0.0):
    # one scalar parameter fit to the mean of a fixed sample
    data = np.linspace(-1.0, 3.0, 40)
    p = Param("mu", np.array([0.0]))

    def batch_loss(idx, rng):
        tape = Tape()
        bind = Binding(tape)
        x = tape.const(data[idx])
        d = x - bind[p]
        if noise_scale:
            d = d + float(rng.normal(0.0, noise_scale))
        return ad.mean(d * d), bind

    def val_score():
        return float(((data - p.value[0]) ** 2).mean())

    return p, data, batch_loss, val_score


def test_fit_minimizes_and_restores_best():
    p, data, batch_loss, val_score = _quadratic_problem()
    report = fit([p], batch_loss, val_score, len(data), batch_size=8,
                 epochs=200, lr=0.05, seed=0, patience=20)
    assert p.value[0] == pytest.approx(data.mean(), abs=1e-3)
    assert report.best_val == pytest.approx(data.var(), abs=1e-3)
    assert 0 <= report.best_epoch < len(report.epochs)
    # restored parameters reproduce the reported best validation score
    assert val_score() == pytest.approx(report.best_val, abs=1e-12)


def test_fit_is_deterministic_under_seed():
    runs = []
    for _ in range(2):
        p, data, batch_loss, val_score = _quadratic_problem(noise_scale=0.1)
        report = fit([p], batch_loss, val_score, len(data), batch_size=8,
                     epochs=30, lr=0.05, seed=7, patience=30)
        runs.append((p.value[0], report.best_val, len(report.epochs)))
    assert runs[0] == runs[1]


def test_fit_early_stopping_respects_patience():
    p, data, batch_loss, val_score = _quadratic_problem()
    report = fit([p], batch_loss, val_score, len(data), batch_size=40,
                 epochs=500, lr=0.2, seed=0, patience=5)
    # converged long before the epoch cap, so the stale counter must trip
    assert len(report.epochs) < 500
    assert len(report.epochs) == report.best_epoch + 5 + 2


def test_fit_epoch_log_and_rows():
    p, data, batch_loss, val_score = _quadratic_problem()
    seen = []
    report = fit([p], batch_loss, val_score, len(data), batch_size=16,
                 epochs=3, lr=0.01, seed=0, patience=10, log=seen.append)
    assert [s.epoch for s in seen] == [0, 1, 2]
    assert all(isinstance(s, EpochStats) for s in seen)
    rows = report.rows()
    assert len(rows) == 3 and rows[0][0] == 0
    assert rows[1][1] == report.epochs[1].train_nll


def test_fit_project_hook_runs_every_step():
    p, data, batch_loss, val_score = _quadratic_problem()
    calls = []

    def project():
        calls.append(p.value[0])
        p.value = np.minimum(p.value, 0.4)

    fit([p], batch_loss, val_score, len(data), batch_size=8,
        epochs=4, lr=0.05, seed=0, patience=10, project=project)
    assert len(calls) == 4 * 5
    assert p.value[0] <= 0.4


def test_fit_diverged_loss_restores_best_and_reports():
    data = np.linspace(-1.0, 3.0, 40)
    p = Param("mu", np.array([0.0]))
    state = {"batches": 0}

    def batch_loss(idx, rng):
        tape = Tape()
        bind = Binding(tape)
        state["batches"] += 1
        d = tape.const(data[idx]) - bind[p]
        loss = ad.mean(d * d)
        if state["batches"] > 7:
            loss = loss * tape.const(np.nan)
        return loss, bind

    def val_score():
        return float(((data - p.value[0]) ** 2).mean())

    with pytest.raises(DivergedLoss) as exc:
        fit([p], batch_loss, val_score, len(data), batch_size=8,
            epochs=50, lr=0.05, seed=0, patience=10)
    report = exc.value.report
    assert isinstance(report, TrainReport)
    assert len(report.epochs) == 1
    # parameters rolled back to the best epoch-end snapshot
    assert val_score() == pytest.approx(report.best_val, abs=1e-12)


def test_fit_diverged_validation_also_raises():
    p, data, batch_loss, _ = _quadratic_problem()

    def bad_val():
        return float("inf") if p.value[0] > 0.1 else 1.0

    with pytest.raises(DivergedLoss):
        fit([p], batch_loss, bad_val, len(data), batch_size=8,
            epochs=50, lr=0.2, seed=0, patience=10)
