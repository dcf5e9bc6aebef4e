"""Per-entry SGD and Adam trainers for the biased factor model."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .data import RatingMatrix
from .errors import ConfigError, DivergenceError
from .model import FactorState, evaluate, objective

__all__ = [
    "SgdConfig",
    "AdamConfig",
    "TraceRow",
    "TrainTrace",
    "entry_gradient",
    "sgd_epoch",
    "sgd_train",
    "adam_train",
    "AdamMoments",
    "adam_epoch",
]


@dataclass(frozen=True)
class SgdConfig:
    eta: float = 0.015
    lam: float = 0.03
    max_epochs: int = 100
    tol: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigError(f"eta must be positive, got {self.eta}")
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if int(self.max_epochs) < 1:
            raise ConfigError("max_epochs must be at least 1")
        if self.tol < 0:
            raise ConfigError("tol must be non-negative")


@dataclass(frozen=True)
class AdamConfig:
    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_hat: float = 1e-8
    lam: float = 0.03
    max_epochs: int = 100
    tol: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if not self.epsilon_hat > 0:
            raise ConfigError("epsilon_hat must be positive")
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if int(self.max_epochs) < 1:
            raise ConfigError("max_epochs must be at least 1")
        if self.tol < 0:
            raise ConfigError("tol must be non-negative")


@dataclass(frozen=True)
class TraceRow:
    epoch: int
    objective: float
    val_rmse: float
    val_mae: float
    seconds: float


@dataclass
class TrainTrace:
    rows: list[TraceRow] = field(default_factory=list)
    swarm_log: list = field(default_factory=list)

    def append(self, row: TraceRow) -> None:
        if self.rows and row.epoch <= self.rows[-1].epoch:
            raise ValueError("epoch indices must be strictly increasing")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    @property
    def epochs(self) -> int:
        return self.rows[-1].epoch if self.rows else 0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "objective", "val_rmse", "val_mae", "seconds"])
            for r in self.rows:
                w.writerow([r.epoch, repr(r.objective), repr(r.val_rmse), repr(r.val_mae), f"{r.seconds:.3f}"])


def entry_gradient(state: FactorState, e: int, u: int, r: float, lam: float):
    """Gradient of one entry's share of the objective w.r.t. ``p_e, q_u, c_e, d_u``.

    The share is ``0.5*delta**2 + lam/2*(|p_e|^2 + |q_u|^2 + c_e^2 + d_u^2)``.
    """
    p, q = state.P[e], state.Q[u]
    delta = r - float(p @ q) - state.c[e] - state.d[u]
    return -delta * q + lam * p, -delta * p + lam * q, -delta + lam * state.c[e], -delta + lam * state.d[u]


def _epoch_order(n: int, seed, epoch: int) -> np.ndarray:
    return np.random.default_rng([int(seed), int(epoch)]).permutation(n)


def _diverged(e, u, what="non-finite residual"):
    return DivergenceError(f"{what} at triplet (e={e}, u={u}); learning rate too large?", (e, u))


def sgd_epoch(state: FactorState, train: RatingMatrix, cfg: SgdConfig, epoch: int = 0) -> FactorState:
    """One pass of per-entry SGD over ``train`` in seeded shuffled order (in place)."""
    state.check_compatible(train)
    P, Q, c, d = state.P, state.Q, state.c, state.d
    eta, lam = cfg.eta, cfg.lam
    decay = 1.0 - eta * lam
    rows, cols, vals = train.rows.tolist(), train.cols.tolist(), train.vals.tolist()
    with np.errstate(over="ignore", invalid="ignore"):
        for i in _epoch_order(len(vals), cfg.seed, epoch).tolist():
            e, u = rows[i], cols[i]
            p, q = P[e], Q[u]
            delta = vals[i] - float(p @ q) - c[e] - d[u]
            if not math.isfinite(delta):
                raise _diverged(e, u)
            p_old = p.copy()
            # p <- p + eta*(delta*q - lam*p), using pre-update q and p
            p *= decay
            p += (eta * delta) * q
            q *= decay
            q += (eta * delta) * p_old
            c[e] = decay * c[e] + eta * delta
            d[u] = decay * d[u] + eta * delta
    if not state.is_finite():
        raise DivergenceError("non-finite parameters after SGD epoch")
    return state


@dataclass
class AdamMoments:
    mP: np.ndarray
    vP: np.ndarray
    mQ: np.ndarray
    vQ: np.ndarray
    mc: np.ndarray
    vc: np.ndarray
    md: np.ndarray
    vd: np.ndarray
    tE: np.ndarray
    tU: np.ndarray

    @classmethod
    def zeros_like(cls, state: FactorState) -> "AdamMoments":
        z = np.zeros_like
        return cls(
            z(state.P), z(state.P), z(state.Q), z(state.Q), z(state.c), z(state.c), z(state.d), z(state.d),
            np.zeros(state.num_rows, dtype=np.int64), np.zeros(state.num_cols, dtype=np.int64),
        )


def adam_epoch(state: FactorState, train: RatingMatrix, cfg: AdamConfig, moments: AdamMoments, epoch: int = 0) -> FactorState:
    """One pass of sparse Adam: each entry updates only the parameters it touches.

    Row parameters ``(p_e, c_e)`` and column parameters ``(q_u, d_u)`` keep their
    own step counters so bias correction matches the number of updates they saw.
    """
    state.check_compatible(train)
    P, Q, c, d = state.P, state.Q, state.c, state.d
    M = moments
    a, b1, b2, eps, lam = cfg.alpha, cfg.beta1, cfg.beta2, cfg.epsilon_hat, cfg.lam
    rows, cols, vals = train.rows.tolist(), train.cols.tolist(), train.vals.tolist()
    with np.errstate(over="ignore", invalid="ignore"):
        for i in _epoch_order(len(vals), cfg.seed, epoch).tolist():
            e, u = rows[i], cols[i]
            p, q = P[e], Q[u]
            delta = vals[i] - float(p @ q) - c[e] - d[u]
            if not math.isfinite(delta):
                raise _diverged(e, u)
            gp = lam * p - delta * q
            gq = lam * q - delta * p
            gc = lam * c[e] - delta
            gd = lam * d[u] - delta

            M.tE[e] += 1
            te = int(M.tE[e])
            bc1, bc2 = 1.0 - b1**te, 1.0 - b2**te
            M.mP[e] = b1 * M.mP[e] + (1 - b1) * gp
            M.vP[e] = b2 * M.vP[e] + (1 - b2) * gp * gp
            p -= a * (M.mP[e] / bc1) / (np.sqrt(M.vP[e] / bc2) + eps)
            M.mc[e] = b1 * M.mc[e] + (1 - b1) * gc
            M.vc[e] = b2 * M.vc[e] + (1 - b2) * gc * gc
            c[e] -= a * (M.mc[e] / bc1) / (math.sqrt(M.vc[e] / bc2) + eps)

            M.tU[u] += 1
            tu = int(M.tU[u])
            bc1, bc2 = 1.0 - b1**tu, 1.0 - b2**tu
            M.mQ[u] = b1 * M.mQ[u] + (1 - b1) * gq
            M.vQ[u] = b2 * M.vQ[u] + (1 - b2) * gq * gq
            q -= a * (M.mQ[u] / bc1) / (np.sqrt(M.vQ[u] / bc2) + eps)
            M.md[u] = b1 * M.md[u] + (1 - b1) * gd
            M.vd[u] = b2 * M.vd[u] + (1 - b2) * gd * gd
            d[u] -= a * (M.md[u] / bc1) / (math.sqrt(M.vd[u] / bc2) + eps)
    if not state.is_finite():
        raise DivergenceError("non-finite parameters after Adam epoch")
    return state


def train_loop(
    state: FactorState,
    train: RatingMatrix,
    val: RatingMatrix,
    step: Callable[[FactorState, int], FactorState],
    lam: float,
    max_epochs: int,
    tol: float,
    trace: TrainTrace | None = None,
    start_epoch: int = 0,
    clock_start: float | None = None,
) -> tuple[FactorState, TrainTrace]:
    """Shared stopping rule: stop after ``max_epochs`` or once the validation
    RMSE moved by less than ``tol`` on two consecutive epochs. Returns the
    state with the lowest validation RMSE seen, the starting state included.
    """
    trace = trace if trace is not None else TrainTrace()
    t0 = time.perf_counter() if clock_start is None else clock_start
    state = state.copy()
    best = state.copy()
    report = evaluate(state, val)
    best_rmse = prev_rmse = report.rmse
    if not trace.rows:
        trace.append(TraceRow(start_epoch, objective(state, train, lam), report.rmse, report.mae, time.perf_counter() - t0))
    quiet = 0
    for k in range(1, int(max_epochs) + 1):
        epoch = start_epoch + k
        step(state, epoch)
        report = evaluate(state, val)
        trace.append(TraceRow(epoch, objective(state, train, lam), report.rmse, report.mae, time.perf_counter() - t0))
        if report.rmse < best_rmse:
            best_rmse = report.rmse
            best = state.copy()
        quiet = quiet + 1 if abs(report.rmse - prev_rmse) < tol else 0
        prev_rmse = report.rmse
        if quiet >= 2:
            break
    return best, trace


def sgd_train(state: FactorState, train: RatingMatrix, val: RatingMatrix, cfg: SgdConfig) -> tuple[FactorState, TrainTrace]:
    return train_loop(
        state, train, val, lambda s, ep: sgd_epoch(s, train, cfg, ep), cfg.lam, cfg.max_epochs, cfg.tol
    )


def adam_train(state: FactorState, train: RatingMatrix, val: RatingMatrix, cfg: AdamConfig) -> tuple[FactorState, TrainTrace]:
    moments = AdamMoments.zeros_like(state)
    return train_loop(
        state, train, val, lambda s, ep: adam_epoch(s, train, cfg, moments, ep), cfg.lam, cfg.max_epochs, cfg.tol
    )


def with_eta(cfg: SgdConfig, eta: float) -> SgdConfig:
    return replace(cfg, eta=float(eta))
