"""Position-transitional PSO over the SGD learning rate (the PLFA model)."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .data import RatingMatrix
from .errors import ConfigError, DivergenceError
from .model import FactorState, evaluate, objective
from .trainers import SgdConfig, TraceRow, TrainTrace, sgd_epoch, train_loop

__all__ = ["SwarmConfig", "Particle", "Swarm", "SwarmRound", "make_swarm", "pso_step", "plfa_train"]


@dataclass(frozen=True)
class SwarmConfig:
    size: int = 10
    omega_start: float = 0.9
    omega_end: float = 0.4
    gamma1: float = 2.0
    gamma2: float = 2.0
    rho: float = 0.1
    eta_min: float = 1e-4
    eta_max: float = 1e-1
    vel_max: float | None = None
    max_rounds: int = 20
    patience: int = 3
    gbest_tol: float = 1e-4
    metric: str = "rmse"
    seed: int = 0

    def __post_init__(self):
        if self.size < 2:
            raise ConfigError("swarm size must be at least 2")
        if not 0 < self.eta_min < self.eta_max:
            raise ConfigError("need 0 < eta_min < eta_max")
        if self.vel_max is not None and not self.vel_max > 0:
            raise ConfigError("vel_max must be positive")
        if self.max_rounds < 1 or self.patience < 1:
            raise ConfigError("max_rounds and patience must be at least 1")
        if self.metric not in ("rmse", "mae"):
            raise ConfigError("metric must be 'rmse' or 'mae'")

    @property
    def velocity_cap(self) -> float:
        return self.vel_max if self.vel_max is not None else 0.1 * (self.eta_max - self.eta_min)

    def omega(self, round_: int) -> float:
        """Inertia weight decayed linearly from ``omega_start`` to ``omega_end``."""
        if self.max_rounds == 1:
            return self.omega_start
        frac = min(max(round_ / (self.max_rounds - 1), 0.0), 1.0)
        return self.omega_start + (self.omega_end - self.omega_start) * frac


@dataclass
class Particle:
    xp: float
    vp: float = 0.0
    pbest: float = math.nan
    pbest_fit: float = math.inf


@dataclass
class Swarm:
    particles: list[Particle]
    omega: float
    gamma1: float
    gamma2: float
    rho: float
    vel_max: float
    eta_min: float
    eta_max: float
    rng: np.random.Generator
    gbest: float = math.nan
    gbest_fit: float = math.inf

    def record(self, fitness) -> None:
        """Update personal and global bests from one fitness per particle."""
        for p, fit in zip(self.particles, fitness):
            fit = fit if math.isfinite(fit) else math.inf
            if fit < p.pbest_fit:
                p.pbest, p.pbest_fit = p.xp, fit
            elif math.isnan(p.pbest):
                p.pbest = p.xp
            if p.pbest_fit < self.gbest_fit:
                self.gbest, self.gbest_fit = p.pbest, p.pbest_fit
        if math.isnan(self.gbest):
            # every particle diverged: fall back to the smallest rate
            self.gbest = min(p.xp for p in self.particles)


def make_swarm(cfg: SwarmConfig, positions=None) -> Swarm:
    rng = np.random.default_rng(cfg.seed)
    if positions is None:
        positions = cfg.eta_min + (cfg.eta_max - cfg.eta_min) * rng.random(cfg.size)
    cap = cfg.velocity_cap
    vel = rng.uniform(-cap, cap, len(positions))
    particles = [Particle(float(np.clip(x, cfg.eta_min, cfg.eta_max)), float(v)) for x, v in zip(positions, vel)]
    return Swarm(particles, cfg.omega(0), cfg.gamma1, cfg.gamma2, cfg.rho, cap, cfg.eta_min, cfg.eta_max, rng)


def pso_step(swarm: Swarm) -> Swarm:
    """Velocity and position update with the position-injection term, in place.

    ``r1, r2`` are drawn per particle in particle order as ``rng.random(2)``.
    """
    g = swarm.gbest
    for p in swarm.particles:
        r1, r2 = swarm.rng.random(2)
        pull = swarm.gamma1 * r1 + swarm.gamma2 * r2
        v = (
            swarm.omega * p.vp
            + swarm.gamma1 * r1 * (p.pbest - p.xp)
            + swarm.gamma2 * r2 * (g - p.xp)
            + swarm.rho * pull * (p.xp - p.vp)
        )
        p.vp = min(max(v, -swarm.vel_max), swarm.vel_max)
        p.xp = min(max(p.xp + p.vp, swarm.eta_min), swarm.eta_max)
    return swarm


@dataclass(frozen=True)
class SwarmRound:
    round: int
    gbest_eta: float
    gbest_fit: float
    mean_fit: float


def write_swarm_log(rounds, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "gbest_eta", "gbest_fit", "mean_fit"])
        for r in rounds:
            w.writerow([r.round, repr(r.gbest_eta), repr(r.gbest_fit), repr(r.mean_fit)])


def _fitness(state, val, metric):
    report = evaluate(state, val)
    return report.rmse if metric == "rmse" else report.mae


def plfa_train(
    state: FactorState,
    train: RatingMatrix,
    val: RatingMatrix,
    swarm_cfg: SwarmConfig,
    sgd_cfg: SgdConfig,
    positions=None,
) -> tuple[FactorState, TrainTrace]:
    """Tune the learning rate with the swarm, then finish with plain SGD at ``gbest``.

    Every round each particle trains one epoch on its own copy of the shared
    base state; the best copy of the round becomes the next base. A particle
    whose epoch diverges scores ``+inf``.
    """
    t0 = time.perf_counter()
    swarm = make_swarm(swarm_cfg, positions)
    trace = TrainTrace()
    base = state.copy()
    rep = evaluate(base, val)
    trace.append(TraceRow(0, objective(base, train, sgd_cfg.lam), rep.rmse, rep.mae, time.perf_counter() - t0))
    best_state, best_rmse = base.copy(), rep.rmse

    stable, last_gbest = 0, math.nan
    round_ = 0
    for round_ in range(1, swarm_cfg.max_rounds + 1):
        fits, copies = [], []
        for p in swarm.particles:
            trial = base.copy()
            try:
                sgd_epoch(trial, train, replace(sgd_cfg, eta=p.xp), round_)
                fit = _fitness(trial, val, swarm_cfg.metric)
            except DivergenceError:
                fit, trial = math.inf, None
            fits.append(fit if math.isfinite(fit) else math.inf)
            copies.append(trial)
        swarm.record(fits)
        k = int(np.argmin(fits))
        if copies[k] is not None and math.isfinite(fits[k]):
            base = copies[k]
        rep = evaluate(base, val)
        trace.append(TraceRow(round_, objective(base, train, sgd_cfg.lam), rep.rmse, rep.mae, time.perf_counter() - t0))
        if rep.rmse < best_rmse:
            best_state, best_rmse = base.copy(), rep.rmse
        finite = [f for f in fits if math.isfinite(f)]
        trace.swarm_log.append(
            SwarmRound(round_, swarm.gbest, swarm.gbest_fit, float(np.mean(finite)) if finite else math.inf)
        )
        stable = stable + 1 if abs(swarm.gbest - last_gbest) <= swarm_cfg.gbest_tol else 0
        last_gbest = swarm.gbest
        if stable >= swarm_cfg.patience:
            break
        swarm.omega = swarm_cfg.omega(round_)
        pso_step(swarm)

    tail_cfg = replace(sgd_cfg, eta=swarm.gbest)
    final, trace = train_loop(
        base, train, val, lambda s, ep: sgd_epoch(s, train, tail_cfg, ep), sgd_cfg.lam, sgd_cfg.max_epochs,
        sgd_cfg.tol, trace=trace, start_epoch=round_, clock_start=t0,
    )
    if evaluate(final, val).rmse < best_rmse:
        best_state = final
    return best_state, trace
