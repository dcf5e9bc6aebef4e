import csv
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from a2bas.data import RatingMatrix, SplitSpec, split
from a2bas.errors import ConfigError
from a2bas.model import FactorState, data_term, evaluate, init_factors, predict
from a2bas.pso import SwarmConfig, plfa_train
from a2bas.refine import (
    AL0_GRID,
    BeetleState,
    RefineConfig,
    antennae_sweep,
    beetle_step,
    col_fitness,
    col_problem,
    init_col_beetle,
    init_row_beetle,
    random_direction,
    refine_col,
    refine_row,
    row_fitness,
    row_problem,
    sequential_refine,
)
from a2bas.synthetic import low_rank_ratings
from a2bas.trainers import SgdConfig

from conftest import random_matrix, random_state

# generous search budget used wherever a beetle is compared against a grid optimum
CONVERGE = dict(max_beetle_iters=1000, beetle_patience=1000, al_decay=0.98, al_min=1e-5)


def fresh_beetle(x0, fitness, al0=2.0):
    x0 = np.array(x0, dtype=float)
    return BeetleState(x0, fitness(x0), np.zeros_like(x0), np.zeros_like(x0), al0)


def grid_min_2d(problem, center, half, n=2001):
    ps = np.linspace(center[0] - half, center[0] + half, n)
    cs = np.linspace(center[1] - half, center[1] + half, n)
    P, C = np.meshgrid(ps, cs, indexing="ij")
    a, y = problem.A, problem.target
    res = y[:, None, None] - a[:, 0, None, None] * P[None] - a[:, 1, None, None] * C[None]
    if problem.metric == "rmse":
        vals = 0.5 * (res**2).sum(0) + 0.5 * problem.lam * (P**2 + C**2)
    else:
        vals = np.abs(res).sum(0) + problem.l1 * (np.abs(P) + np.abs(C))
    return float(vals.min())


# -- config --


@pytest.mark.parametrize(
    "bad",
    [{"al0": 0.0}, {"al_decay": 0.0}, {"al_decay": 1.5}, {"al_min": 3.0}, {"beta2": 1.0}, {"metric": "x"},
     {"direction": "up"}, {"max_rounds": -1}],
)
def test_config_rejects(bad):
    with pytest.raises(ConfigError):
        RefineConfig(**bad)


def test_config_defaults():
    cfg = RefineConfig()
    assert (cfg.al0, cfg.al_decay, cfg.al_min, cfg.alpha) == (2.0, 0.95, 1e-3, 1.0)
    assert cfg.l1 == cfg.lam and RefineConfig(l1_weight=1.0).l1 == 1.0
    assert AL0_GRID == (0.5, 1, 2, 3, 4, 5, 6, 7)


# -- initialisation and fitness --


def test_init_row_beetle_concatenates():
    s = FactorState(np.array([[1.0, 2.0]]), np.zeros((1, 2)), np.array([3.0]), np.zeros(1))
    b = init_row_beetle(s, 0, RatingMatrix([], [], [], 1, 1), RefineConfig())
    assert b.x_best.tolist() == [1.0, 2.0, 3.0]
    assert b.t == 0 and b.al == 2.0 and not b.m.any() and not b.v.any()


def test_init_col_beetle_concatenates_and_empty_column():
    s = FactorState(np.zeros((1, 2)), np.array([[4.0, 5.0]]), np.zeros(1), np.array([6.0]))
    b = init_col_beetle(s, 0, RatingMatrix([], [], [], 1, 1), RefineConfig(lam=0.0))
    assert b.x_best.tolist() == [4.0, 5.0, 6.0]
    assert b.f_best == 0.0


def test_zero_state_single_rating_fitness():
    s = FactorState(np.zeros((1, 3)), np.zeros((2, 3)), np.zeros(1), np.zeros(2))
    b = init_row_beetle(s, 0, RatingMatrix([0], [1], [4.0], 1, 2), RefineConfig(lam=0.0))
    assert b.f_best == 8.0


def brute_row_fitness(state, e, train, lam):
    total = 0.0
    for ee, u, r in zip(train.rows.tolist(), train.cols.tolist(), train.vals.tolist()):
        if ee == e:
            total += 0.5 * (r - predict(state, e, u)) ** 2
    return total + 0.5 * lam * (sum(x * x for x in state.P[e]) + state.c[e] ** 2)


def brute_col_fitness(state, u, train, lam):
    total = 0.0
    for e, uu, r in zip(train.rows.tolist(), train.cols.tolist(), train.vals.tolist()):
        if uu == u:
            total += 0.5 * (r - predict(state, e, u)) ** 2
    return total + 0.5 * lam * (sum(x * x for x in state.Q[u]) + state.d[u] ** 2)


def test_beetle_fitness_matches_brute_force(rng):
    s = random_state(rng, 12, 9, 4)
    train = random_matrix(rng, 12, 9, 0.4)
    cfg = RefineConfig(lam=0.05)
    for e in range(12):
        assert init_row_beetle(s, e, train, cfg).f_best == pytest.approx(brute_row_fitness(s, e, train, 0.05), rel=1e-12, abs=1e-12)
    for u in range(9):
        assert init_col_beetle(s, u, train, cfg).f_best == pytest.approx(brute_col_fitness(s, u, train, 0.05), rel=1e-12, abs=1e-12)


def test_fitness_special_cases():
    s = FactorState(np.zeros((2, 1)), np.array([[1.0]]), np.zeros(2), np.array([0.5]))
    train = RatingMatrix([1], [0], [4.0], 2, 1)
    for metric in ("rmse", "mae"):
        cfg = RefineConfig(lam=0.0, metric=metric)
        assert row_fitness(np.zeros(2), 0, s, train, cfg) == 0.0
        # p*1 + c + 0.5 == 4
        assert row_fitness([3.0, 0.5], 1, s, train, cfg) == 0.0
    # perfect-fit column leaves only the penalty
    cfg = RefineConfig(lam=0.2)
    s2 = FactorState(np.array([[0.0], [2.0]]), np.zeros((1, 1)), np.zeros(2), np.zeros(1))
    assert col_fitness([1.5, 1.0], 0, s2, train, cfg) == pytest.approx(0.5 * 0.2 * (1.5**2 + 1.0**2))


def test_mae_fitness_uses_l1_terms():
    s = FactorState(np.zeros((1, 2)), np.array([[1.0, -1.0], [0.5, 0.0]]), np.zeros(1), np.array([0.0, 1.0]))
    train = RatingMatrix([0, 0], [0, 1], [2.0, 3.0], 1, 2)
    x = np.array([0.5, -0.5, 0.25])
    res = [2.0 - (0.5 + 0.5 + 0.25), 3.0 - (0.25 + 0.25 + 1.0)]
    want = sum(abs(r) for r in res) + 0.1 * (0.5 + 0.5 + 0.25)
    assert row_fitness(x, 0, s, train, RefineConfig(lam=0.1, metric="mae")) == pytest.approx(want)
    want_free = sum(abs(r) for r in res) + 1.0 * (0.5 + 0.5 + 0.25)
    assert row_fitness(x, 0, s, train, RefineConfig(lam=0.1, metric="mae", l1_weight=1.0)) == pytest.approx(want_free)


def test_partition_identity_small(rng):
    s = random_state(rng, 15, 11, 3)
    train = random_matrix(rng, 15, 11, 0.3)
    cfg = RefineConfig(lam=0.0)
    rows = math.fsum(row_problem(s, e, train, cfg).data_term(np.append(s.P[e], s.c[e])) for e in range(15))
    cols = math.fsum(col_problem(s, u, train, cfg).data_term(np.append(s.Q[u], s.d[u])) for u in range(11))
    total = data_term(s, train)
    assert rows == pytest.approx(total, rel=1e-9) and cols == pytest.approx(total, rel=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["rmse", "mae"]))
def test_row_fitness_locality(seed, metric):
    rng = np.random.default_rng(seed)
    s = random_state(rng, 6, 5, 2)
    train = random_matrix(rng, 6, 5, 0.5, low=-2, high=2)
    cfg = RefineConfig(metric=metric)
    e = int(rng.integers(6))
    x = rng.standard_normal(3)
    base = row_fitness(x, e, s, train, cfg)
    # perturb other rows' factors and ratings outside row e
    s2 = s.copy()
    others = np.arange(6) != e
    s2.P[others] += rng.standard_normal((5, 2))
    s2.c[others] -= 1.0
    vals = train.vals.copy()
    vals[train.rows != e] += rng.standard_normal(int((train.rows != e).sum()))
    train2 = RatingMatrix(train.rows, train.cols, vals, 6, 5)
    assert row_fitness(x, e, s2, train2, cfg) == base
    u = int(rng.integers(5))
    cbase = col_fitness(x, u, s, train, cfg)
    s3 = s.copy()
    oc = np.arange(5) != u
    s3.Q[oc] *= 3.0
    s3.d[oc] += 0.5
    vals = train.vals.copy()
    vals[train.cols != u] -= 1.0
    assert col_fitness(x, u, s3, RatingMatrix(train.rows, train.cols, vals, 6, 5), cfg) == cbase


# -- directions and steps --


def test_random_direction_contract():
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert random_direction(1, rng).tolist() == [1.0]
    draws = np.array([random_direction(21, rng) for _ in range(2000)])
    assert np.all(draws >= 0)
    assert np.allclose(np.linalg.norm(draws, axis=1), 1.0, atol=1e-12)
    a = [random_direction(5, np.random.default_rng(9)) for _ in range(2)]
    assert np.array_equal(a[0], a[1])
    signed = np.array([random_direction(4, rng, signed=True) for _ in range(200)])
    assert (signed < 0).any() and np.allclose(np.linalg.norm(signed, axis=1), 1.0, atol=1e-12)
    with pytest.raises(ValueError):
        random_direction(0, rng)


def test_constant_fitness_never_moves():
    cfg = RefineConfig()
    b = fresh_beetle([1.0, -2.0, 0.5], lambda x: 7.0)
    x0 = b.x_best.copy()
    rng = np.random.default_rng(1)
    for t in range(10):
        beetle_step(b, lambda x: 7.0, cfg, rng)
        assert np.array_equal(b.x_best, x0) and b.f_best == 7.0
    assert b.al == pytest.approx(2.0 * 0.95**10)


def test_dim1_first_step_left_antenna_wins():
    cfg = RefineConfig(direction="positive", alpha=1.0)
    sq = lambda x: float(x @ x)
    b = fresh_beetle([5.0], sq)
    beetle_step(b, sq, cfg, np.random.default_rng(0))
    assert b.x_r[0] == pytest.approx(7.0, abs=1e-6) and b.x_l[0] == pytest.approx(3.0, abs=1e-6)
    assert b.x_best[0] == b.x_l[0]


def test_dim1_quadratic_fifty_steps_near_grid():
    sq = lambda x: float((x[0] - 0.3) ** 2)
    grid = np.linspace(5.0 - 6.0, 5.0 + 6.0, 2001)
    best = float(((grid - 0.3) ** 2).min())
    for seed in range(5):
        b = fresh_beetle([5.0], sq)
        rng = np.random.default_rng(seed)
        for _ in range(50):
            beetle_step(b, sq, RefineConfig(al0=2.0, al_decay=0.95), rng)
        assert b.f_best <= best + 1e-3


def test_tie_goes_to_left_antenna():
    x0 = np.array([1.0, 2.0])
    bowl = lambda x: -float((x - x0) @ (x - x0))  # symmetric about x0, both sides improve
    b = fresh_beetle(x0, bowl)
    beetle_step(b, bowl, RefineConfig(), np.random.default_rng(3))
    assert np.array_equal(b.x_best, b.x_l)


def test_non_finite_antenna_is_ignored():
    def f(x):
        return math.nan if x[0] > 0 else float(x @ x)

    b = fresh_beetle([-0.5], f)
    b.f_best = 10.0
    beetle_step(b, f, RefineConfig(al0=0.1, al_min=0.1), np.random.default_rng(0))
    assert math.isfinite(b.f_best) and b.x_best[0] < 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.sampled_from(["signed", "positive"]))
def test_step_invariants(seed, dim, direction):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((dim + 2, dim))
    y = rng.standard_normal(dim + 2)
    fit = lambda x: float(0.5 * np.sum((y - A @ x) ** 2))
    cfg = RefineConfig(al0=1.5, al_decay=0.9, al_min=0.01, direction=direction)
    b = fresh_beetle(rng.standard_normal(dim), fit, al0=cfg.al0)
    prev_f, prev_al = b.f_best, b.al
    for t in range(1, 31):
        x_prev = b.x_best.copy()
        beetle_step(b, fit, cfg, rng)
        assert b.t == t
        np.testing.assert_allclose(b.x_r + b.x_l, 2 * x_prev, rtol=0, atol=1e-12 * max(1.0, np.abs(x_prev).max()))
        if t == 1:
            np.testing.assert_allclose(b.m_hat, b.dr, rtol=0, atol=1e-12)
            np.testing.assert_allclose(b.v_hat, b.dr * b.dr, rtol=0, atol=1e-12)
        assert b.f_best <= prev_f
        assert b.f_best == fit(b.x_best)
        assert np.all(b.v >= 0)
        assert cfg.al_min <= b.al <= prev_al
        if not np.array_equal(b.x_best, x_prev):
            assert b.f_best < prev_f
        prev_f, prev_al = b.f_best, b.al


# -- single-entity refinement --


def test_zero_iterations_is_noop(rng):
    s = random_state(rng, 4, 4, 3)
    train = random_matrix(rng, 4, 4, 0.5)
    cfg = RefineConfig(max_beetle_iters=0)
    x, fx = refine_row(s, 1, train, cfg)
    assert np.array_equal(x, np.append(s.P[1], s.c[1])) and fx == init_row_beetle(s, 1, train, cfg).f_best
    x, fx = refine_col(s, 2, train, cfg)
    assert np.array_equal(x, np.append(s.Q[2], s.d[2]))


def test_empty_entities_shrink_toward_zero(rng):
    s = random_state(rng, 3, 3, 2)
    train = RatingMatrix([0], [0], [1.0], 3, 3)  # row 2 and column 2 are empty
    cfg = RefineConfig(lam=0.1, **CONVERGE)
    x, fx = refine_row(s, 2, train, cfg)
    assert np.linalg.norm(x) < 0.05 * np.linalg.norm(np.append(s.P[2], s.c[2]))
    x, fx = refine_col(s, 2, train, cfg)
    assert np.linalg.norm(x) < 0.05 * np.linalg.norm(np.append(s.Q[2], s.d[2]))


def test_refine_never_worse(rng):
    s = random_state(rng, 8, 8, 3)
    train = random_matrix(rng, 8, 8, 0.4)
    cfg = RefineConfig()
    for e in range(8):
        assert refine_row(s, e, train, cfg)[1] <= init_row_beetle(s, e, train, cfg).f_best
        assert refine_col(s, e, train, cfg)[1] <= init_col_beetle(s, e, train, cfg).f_best


@pytest.mark.parametrize("side", ["row", "col"])
def test_single_rating_grid_oracle(side):
    rng = np.random.default_rng(11 if side == "row" else 12)
    for trial in range(3):
        s = FactorState(rng.standard_normal((2, 1)), rng.standard_normal((2, 1)), rng.standard_normal(2), rng.standard_normal(2))
        train = RatingMatrix([1], [1], [float(rng.uniform(1, 5))], 2, 2)
        cfg = RefineConfig(al0=2.0, lam=0.03, **CONVERGE)
        if side == "row":
            x, fx = refine_row(s, 1, train, cfg, np.random.default_rng(trial))
            problem, x0 = row_problem(s, 1, train, cfg), (s.P[1, 0], s.c[1])
        else:
            x, fx = refine_col(s, 1, train, cfg, np.random.default_rng(trial))
            problem, x0 = col_problem(s, 1, train, cfg), (s.Q[1, 0], s.d[1])
        assert fx <= grid_min_2d(problem, x0, 3 * cfg.al0) + 1e-3


# -- sequential refinement --


@pytest.fixture(scope="module")
def trained():
    m, _, _ = low_rank_ratings(80, 80, 2, 0.12, 0.1, seed=2)
    train, val, test = split(m, SplitSpec(seed=0))
    s = init_factors(80, 80, 4, seed=0)
    out, _ = plfa_train(s, train, val, SwarmConfig(max_rounds=5), SgdConfig(max_epochs=40))
    return out, train, val, test


def test_zero_rounds_returns_input(trained):
    s, train, val, _ = trained
    out, trace = sequential_refine(s, train, val, RefineConfig(max_rounds=0))
    assert out.equals(s) and trace.rounds_run == 0
    assert evaluate(out, val).rmse == evaluate(s, val).rmse


def test_rejected_round_rolls_back(rng):
    s = random_state(rng, 10, 10, 2, scale=0.5)
    train = random_matrix(rng, 10, 10, 0.5)
    # validation ratings reproduce the state exactly, so nothing can beat it
    rows, cols = np.nonzero(rng.random((10, 10)) < 0.2)
    val = RatingMatrix(rows, cols, [predict(s, e, u) for e, u in zip(rows, cols)], 10, 10)
    out, trace = sequential_refine(s, train, val, RefineConfig(max_rounds=3))
    assert trace.rounds_run == 1 and trace.committed_rounds == 0
    assert out.equals(s)


def test_gate_and_determinism(trained, tmp_path):
    s, train, val, _ = trained
    for metric in ("rmse", "mae"):
        cfg = RefineConfig(metric=metric, max_rounds=3, al0=0.1)
        out, trace = sequential_refine(s, train, val, cfg)
        before, after = evaluate(s, val), evaluate(out, val)
        gate = (lambda r: r.rmse) if metric == "rmse" else (lambda r: r.mae)
        assert gate(after) <= gate(before)
        best = gate(before)
        for r in trace.rounds:
            value = r.val_rmse if metric == "rmse" else r.val_mae
            assert r.committed == (value < best)
            if r.committed:
                best = value
        again, _ = sequential_refine(s, train, val, cfg)
        assert out.equals(again)
        threaded, _ = sequential_refine(s, train, val, replace(cfg, threads=3))
        assert out.equals(threaded)
    trace.to_csv(tmp_path / "r.csv")
    assert next(csv.reader(open(tmp_path / "r.csv"))) == ["round", "val_rmse", "val_mae", "committed", "seconds"]


def test_refined_not_worse_than_plfa(trained):
    s, train, val, _ = trained
    out, _ = sequential_refine(s, train, val, RefineConfig())
    assert evaluate(out, val).rmse <= evaluate(s, val).rmse


def test_beetle_steps_monotone_in_full_run(trained):
    s, train, val, _ = trained
    seen = {"n": 0, "bad": 0}

    def hook(side, entity, beetle, before):
        seen["n"] += 1
        seen["bad"] += beetle.f_best > before

    sequential_refine(s, train, val, RefineConfig(max_rounds=2, al0=0.1), on_step=hook)
    assert seen["n"] > 0 and seen["bad"] == 0


def test_sweep_singleton_and_shape(trained, tmp_path):
    s, train, val, test = trained
    cfg = RefineConfig(max_rounds=2)
    report = antennae_sweep(s, train, val, test, cfg, [0.3])
    direct, trace = sequential_refine(s, train, val, replace(cfg, al0=0.3))
    row = report.rows[0]
    t = evaluate(direct, test)
    assert (row.test_rmse, row.test_mae, row.rounds) == (t.rmse, t.mae, trace.rounds_run)
    report = antennae_sweep(s, train, val, test, cfg, [0.5, 2.0, 0.0005])
    assert len(report.rows) == 3
    report.to_csv(tmp_path / "sweep.csv")
    rows = list(csv.reader(open(tmp_path / "sweep.csv")))
    assert rows[0] == ["al0", "test_rmse", "test_mae", "rounds", "seconds"] and len(rows) == 4
    with pytest.raises(ConfigError):
        antennae_sweep(s, train, val, test, cfg, [])
