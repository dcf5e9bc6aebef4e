"""Planted low-rank rating matrices for experiments and tests."""

from __future__ import annotations

import numpy as np

from .data import RatingMatrix


def low_rank_ratings(
    num_rows: int,
    num_cols: int,
    rank: int = 2,
    density: float = 0.05,
    noise: float = 0.0,
    seed=0,
    offset: float = 0.0,
    factor_scale: float = 1.0,
) -> tuple[RatingMatrix, np.ndarray, np.ndarray]:
    """Sample ``round(density * rows * cols)`` distinct cells of ``P Q^T + offset``.

    Planted factors are standard normal times ``factor_scale``; Gaussian noise
    with std ``noise`` is added to every observed cell. Returns the matrix and
    the planted ``(P, Q)``.
    """
    rng = np.random.default_rng(seed)
    P = factor_scale * rng.standard_normal((num_rows, rank))
    Q = factor_scale * rng.standard_normal((num_cols, rank))
    n = int(round(density * num_rows * num_cols))
    cells = np.sort(rng.choice(num_rows * num_cols, size=n, replace=False))
    rows, cols = cells // num_cols, cells % num_cols
    vals = np.einsum("ij,ij->i", P[rows], Q[cols]) + offset
    if noise:
        vals = vals + noise * rng.standard_normal(n)
    return RatingMatrix(rows, cols, vals, num_rows, num_cols), P, Q
