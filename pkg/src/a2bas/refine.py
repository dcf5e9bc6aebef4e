"""Adam-adjusted-antennae beetle search over single latent-factor vectors,
and the row-then-column refinement loop built on it.

A beetle owns one entity's ``(f+1)``-vector, either ``[p_e, c_e]`` or
``[q_u, d_u]``, and minimises that entity's share of the training loss
while every other parameter stays fixed.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .data import RatingMatrix
from .errors import ConfigError
from .model import FactorState, evaluate

__all__ = [
    "RefineConfig",
    "BeetleState",
    "EntityProblem",
    "row_problem",
    "col_problem",
    "row_fitness",
    "col_fitness",
    "init_row_beetle",
    "init_col_beetle",
    "random_direction",
    "beetle_step",
    "run_beetle",
    "refine_row",
    "refine_col",
    "entity_rng",
    "sequential_refine",
    "RefineRound",
    "RefineTrace",
    "antennae_sweep",
    "SweepRow",
    "SweepReport",
    "AL0_GRID",
]

AL0_GRID = (0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0)

ROW, COL = 0, 1


@dataclass(frozen=True)
class RefineConfig:
    al0: float = 2.0
    al_decay: float = 0.95
    al_min: float = 1e-3
    alpha: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_hat: float = 1e-8
    lam: float = 0.03
    metric: str = "rmse"
    direction: str = "signed"
    l1_weight: float | None = None
    max_beetle_iters: int = 50
    beetle_tol: float = 1e-6
    beetle_patience: int = 3
    max_rounds: int = 10
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if not self.al0 > 0:
            raise ConfigError("al0 must be positive")
        if not 0 < self.al_decay <= 1:
            raise ConfigError("al_decay must lie in (0, 1]")
        if not 0 < self.al_min <= self.al0:
            raise ConfigError("al_min must be positive and no larger than al0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if not self.epsilon_hat > 0 or not self.alpha > 0:
            raise ConfigError("alpha and epsilon_hat must be positive")
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if self.metric not in ("rmse", "mae"):
            raise ConfigError(f"metric must be 'rmse' or 'mae', got {self.metric!r}")
        if self.direction not in ("signed", "positive"):
            raise ConfigError(f"direction must be 'signed' or 'positive', got {self.direction!r}")
        if self.max_beetle_iters < 0 or self.max_rounds < 0 or self.beetle_patience < 1:
            raise ConfigError("iteration limits must be non-negative and patience positive")

    @property
    def l1(self) -> float:
        return self.lam if self.l1_weight is None else self.l1_weight


@dataclass
class BeetleState:
    x_best: np.ndarray
    f_best: float
    m: np.ndarray
    v: np.ndarray
    al: float
    t: int = 0
    # last proposal, kept for inspection
    x_r: np.ndarray | None = None
    x_l: np.ndarray | None = None
    dr: np.ndarray | None = None
    m_hat: np.ndarray | None = None
    v_hat: np.ndarray | None = None


# -- fitness -----------------------------------------------------------------


@dataclass(frozen=True)
class EntityProblem:
    """One entity's fitness as a function of its ``(f+1)``-vector ``x``.

    With the other side frozen, the residual of each known entry is
    ``target - A @ x`` where ``A = [other_factor, 1]`` and
    ``target = r - other_bias``.
    """

    A: np.ndarray
    target: np.ndarray
    lam: float
    l1: float
    metric: str

    def __call__(self, x: np.ndarray) -> float:
        res = self.target - self.A @ x
        if self.metric == "rmse":
            return 0.5 * float(res @ res) + 0.5 * self.lam * float(x @ x)
        return float(np.abs(res).sum()) + self.l1 * float(np.abs(x).sum())

    def data_term(self, x: np.ndarray) -> float:
        res = self.target - self.A @ x
        return 0.5 * float(res @ res)


def _problem(other_f, other_b, idx, pos, train: RatingMatrix, cfg: RefineConfig) -> EntityProblem:
    k = len(pos)
    A = np.empty((k, other_f.shape[1] + 1))
    A[:, :-1] = other_f[idx]
    A[:, -1] = 1.0
    return EntityProblem(A, train.vals[pos] - other_b[idx], cfg.lam, cfg.l1, cfg.metric)


def row_problem(state: FactorState, e: int, train: RatingMatrix, cfg: RefineConfig) -> EntityProblem:
    pos = train.row_positions(e)
    return _problem(state.Q, state.d, train.cols[pos], pos, train, cfg)


def col_problem(state: FactorState, u: int, train: RatingMatrix, cfg: RefineConfig) -> EntityProblem:
    pos = train.col_positions(u)
    return _problem(state.P, state.c, train.rows[pos], pos, train, cfg)


def row_fitness(x, e: int, state: FactorState, train: RatingMatrix, cfg: RefineConfig) -> float:
    return row_problem(state, e, train, cfg)(np.asarray(x, dtype=np.float64))


def col_fitness(x, u: int, state: FactorState, train: RatingMatrix, cfg: RefineConfig) -> float:
    return col_problem(state, u, train, cfg)(np.asarray(x, dtype=np.float64))


# -- the beetle --------------------------------------------------------------


def _new_beetle(x0: np.ndarray, fitness: Callable, cfg: RefineConfig) -> BeetleState:
    x0 = np.array(x0, dtype=np.float64)
    return BeetleState(x0, float(fitness(x0)), np.zeros_like(x0), np.zeros_like(x0), float(cfg.al0), 0)


def init_row_beetle(state: FactorState, e: int, train: RatingMatrix, cfg: RefineConfig) -> BeetleState:
    x0 = np.append(state.P[e], state.c[e])
    return _new_beetle(x0, row_problem(state, e, train, cfg), cfg)


def init_col_beetle(state: FactorState, u: int, train: RatingMatrix, cfg: RefineConfig) -> BeetleState:
    x0 = np.append(state.Q[u], state.d[u])
    return _new_beetle(x0, col_problem(state, u, train, cfg), cfg)


def random_direction(dim: int, rng: np.random.Generator, signed: bool = False) -> np.ndarray:
    """Unit vector from uniform [0, 1) components, or [-1, 1) with ``signed``."""
    if dim < 1:
        raise ValueError("dim must be at least 1")
    while True:
        x = rng.uniform(-1.0, 1.0, dim) if signed else rng.random(dim)
        norm = math.sqrt(float(x @ x))
        if norm > 0.0:
            return x / norm


def _safe(value: float) -> float:
    return value if math.isfinite(value) else math.inf


def beetle_step(b: BeetleState, fitness: Callable, cfg: RefineConfig, rng: np.random.Generator) -> BeetleState:
    """Advance the beetle one iteration (in place) and return it.

    One moment pair tracks the random direction; the two antennae sit
    symmetrically at ``x_best +/- alpha*al*m_hat/sqrt(v_hat+eps)``.

    With ``direction="positive"`` every step lies in the positive orthant
    (or its negation), so the beetle can only search near the all-ones
    diagonal; ``"signed"`` directions cover the whole space.
    """
    b.t += 1
    dr = random_direction(b.x_best.size, rng, cfg.direction == "signed")
    b.m = cfg.beta1 * b.m + (1.0 - cfg.beta1) * dr
    b.v = cfg.beta2 * b.v + (1.0 - cfg.beta2) * (dr * dr)
    m_hat = b.m / (1.0 - cfg.beta1**b.t)
    v_hat = b.v / (1.0 - cfg.beta2**b.t)
    step = (cfg.alpha * b.al) * m_hat / np.sqrt(v_hat + cfg.epsilon_hat)
    x_r = b.x_best + step
    x_l = b.x_best - step
    f_r, f_l = _safe(fitness(x_r)), _safe(fitness(x_l))
    # right antenna only on strictly smaller fitness
    x_temp, f_temp = (x_r, f_r) if f_r < f_l else (x_l, f_l)
    if f_temp < b.f_best:
        b.x_best, b.f_best = x_temp.copy(), f_temp
    b.al = max(b.al * cfg.al_decay, cfg.al_min)
    b.x_r, b.x_l, b.dr, b.m_hat, b.v_hat = x_r, x_l, dr, m_hat, v_hat
    return b


StepHook = Callable[[int, int, BeetleState, float], None]


def run_beetle(b: BeetleState, fitness: Callable, cfg: RefineConfig, rng, on_step=None) -> BeetleState:
    """Step until no improvement above ``beetle_tol`` for ``beetle_patience``
    consecutive steps, or ``max_beetle_iters`` steps."""
    stale = 0
    for _ in range(cfg.max_beetle_iters):
        before = b.f_best
        beetle_step(b, fitness, cfg, rng)
        if on_step is not None:
            on_step(b, before)
        stale = stale + 1 if before - b.f_best <= cfg.beetle_tol else 0
        if stale >= cfg.beetle_patience:
            break
    return b


def entity_rng(seed, round_: int, side: int, entity: int) -> np.random.Generator:
    """Independent stream per (seed, round, side, entity), so row and column
    phases give the same result whatever order or thread runs them."""
    return np.random.default_rng([int(seed), int(round_), int(side), int(entity)])


def refine_row(state: FactorState, e: int, train: RatingMatrix, cfg: RefineConfig, rng=None, on_step=None):
    rng = rng if rng is not None else entity_rng(cfg.seed, 0, ROW, e)
    problem = row_problem(state, e, train, cfg)
    b = run_beetle(_new_beetle(np.append(state.P[e], state.c[e]), problem, cfg), problem, cfg, rng, on_step)
    return b.x_best, b.f_best


def refine_col(state: FactorState, u: int, train: RatingMatrix, cfg: RefineConfig, rng=None, on_step=None):
    rng = rng if rng is not None else entity_rng(cfg.seed, 0, COL, u)
    problem = col_problem(state, u, train, cfg)
    b = run_beetle(_new_beetle(np.append(state.Q[u], state.d[u]), problem, cfg), problem, cfg, rng, on_step)
    return b.x_best, b.f_best


# -- sequential refinement ---------------------------------------------------


@dataclass(frozen=True)
class RefineRound:
    round: int
    val_rmse: float
    val_mae: float
    committed: bool
    seconds: float
    beetle_steps: int = 0
    improved_entities: int = 0


@dataclass
class RefineTrace:
    initial_rmse: float = math.nan
    initial_mae: float = math.nan
    rounds: list[RefineRound] = field(default_factory=list)

    @property
    def rounds_run(self) -> int:
        return len(self.rounds)

    @property
    def committed_rounds(self) -> int:
        return sum(r.committed for r in self.rounds)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["round", "val_rmse", "val_mae", "committed", "seconds"])
            for r in self.rounds:
                w.writerow([r.round, repr(r.val_rmse), repr(r.val_mae), int(r.committed), f"{r.seconds:.3f}"])


def _refine_phase(state, train, cfg, round_, side, on_step, executor):
    n = state.num_rows if side == ROW else state.num_cols
    refine = refine_row if side == ROW else refine_col
    counter = {"steps": 0, "improved": 0}

    def work(i):
        steps = 0

        def hook(b, before):
            nonlocal steps
            steps += 1
            if on_step is not None:
                on_step(side, i, b, before)

        x, _ = refine(state, i, train, cfg, entity_rng(cfg.seed, round_, side, i), hook)
        return i, x, steps

    results = executor.map(work, range(n)) if executor is not None else map(work, range(n))
    # results are computed against the frozen pre-phase snapshot, then written back
    updates = list(results)
    F, B = (state.P, state.c) if side == ROW else (state.Q, state.d)
    for i, x, n_steps in updates:
        counter["steps"] += n_steps
        if not (np.array_equal(F[i], x[:-1]) and B[i] == x[-1]):
            counter["improved"] += 1
        F[i] = x[:-1]
        B[i] = x[-1]
    return counter


def _gate(report, metric):
    return report.rmse if metric == "rmse" else report.mae


def sequential_refine(
    state: FactorState,
    train: RatingMatrix,
    val: RatingMatrix,
    cfg: RefineConfig,
    on_step=None,
) -> tuple[FactorState, RefineTrace]:
    """Rounds of row refinement then column refinement, each round kept only
    if it strictly lowers the validation metric selected by ``cfg.metric``.

    ``on_step(side, entity, beetle, f_best_before)`` is called after every
    beetle step when given.
    """
    t0 = time.perf_counter()
    committed = state.copy()
    report = evaluate(committed, val)
    best = _gate(report, cfg.metric)
    trace = RefineTrace(report.rmse, report.mae)
    executor = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        for round_ in range(1, cfg.max_rounds + 1):
            candidate = committed.copy()
            rows = _refine_phase(candidate, train, cfg, round_, ROW, on_step, executor)
            cols = _refine_phase(candidate, train, cfg, round_, COL, on_step, executor)
            report = evaluate(candidate, val)
            metric = _gate(report, cfg.metric)
            accept = metric < best
            trace.rounds.append(
                RefineRound(
                    round_, report.rmse, report.mae, accept, time.perf_counter() - t0,
                    rows["steps"] + cols["steps"], rows["improved"] + cols["improved"],
                )
            )
            if not accept:
                break
            committed, best = candidate, metric
    finally:
        if executor is not None:
            executor.shutdown()
    return committed, trace


# -- antennae-length sweep ---------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    al0: float
    test_rmse: float
    test_mae: float
    rounds: int
    seconds: float
    val_rmse: float = math.nan
    val_mae: float = math.nan
    committed_rounds: int = 0


@dataclass
class SweepReport:
    rows: list[SweepRow] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["al0", "test_rmse", "test_mae", "rounds", "seconds"])
            for r in self.rows:
                w.writerow([repr(r.al0), repr(r.test_rmse), repr(r.test_mae), r.rounds, f"{r.seconds:.3f}"])

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.rows]


def antennae_sweep(
    state: FactorState,
    train: RatingMatrix,
    val: RatingMatrix,
    test: RatingMatrix,
    cfg: RefineConfig,
    al_values: Sequence[float] = AL0_GRID,
) -> SweepReport:
    """Refine a fresh copy of ``state`` once per initial antennae length."""
    if len(al_values) == 0:
        raise ConfigError("al_values must be non-empty")
    report = SweepReport()
    for al0 in al_values:
        run_cfg = replace(cfg, al0=float(al0), al_min=min(cfg.al_min, float(al0)))
        t0 = time.perf_counter()
        refined, trace = sequential_refine(state.copy(), train, val, run_cfg)
        seconds = time.perf_counter() - t0
        t = evaluate(refined, test)
        v = evaluate(refined, val)
        report.rows.append(SweepRow(float(al0), t.rmse, t.mae, trace.rounds_run, seconds, v.rmse, v.mae, trace.committed_rounds))
    return report
