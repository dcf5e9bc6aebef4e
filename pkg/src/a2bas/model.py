"""Biased low-rank factor model: state, prediction, objective and metrics."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import RatingMatrix
from .errors import CheckpointError, ConfigError, EvaluationError

__all__ = [
    "FactorState",
    "EvalReport",
    "init_factors",
    "predict",
    "residuals",
    "objective",
    "data_term",
    "evaluate",
    "save_checkpoint",
    "load_checkpoint",
]

DEFAULT_INIT_SCALE = 0.004


@dataclass(eq=False)
class FactorState:
    """Row factors ``P`` (|E| x f), column factors ``Q`` (|U| x f) and biases ``c``, ``d``."""

    P: np.ndarray
    Q: np.ndarray
    c: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        self.P = np.ascontiguousarray(self.P, dtype=np.float64)
        self.Q = np.ascontiguousarray(self.Q, dtype=np.float64)
        self.c = np.ascontiguousarray(self.c, dtype=np.float64)
        self.d = np.ascontiguousarray(self.d, dtype=np.float64)
        if self.P.ndim != 2 or self.Q.ndim != 2 or self.P.shape[1] != self.Q.shape[1]:
            raise ValueError("P and Q must be 2-D with the same number of columns")
        if self.c.shape != (self.P.shape[0],) or self.d.shape != (self.Q.shape[0],):
            raise ValueError("bias vectors must match the factor matrix heights")

    @property
    def f(self) -> int:
        return self.P.shape[1]

    @property
    def num_rows(self) -> int:
        return self.P.shape[0]

    @property
    def num_cols(self) -> int:
        return self.Q.shape[0]

    def copy(self) -> "FactorState":
        return FactorState(self.P.copy(), self.Q.copy(), self.c.copy(), self.d.copy())

    def is_finite(self) -> bool:
        return bool(
            np.isfinite(self.P).all() and np.isfinite(self.Q).all() and np.isfinite(self.c).all() and np.isfinite(self.d).all()
        )

    def check_compatible(self, data: RatingMatrix) -> None:
        if data.num_rows > self.num_rows or data.num_cols > self.num_cols:
            raise ValueError(
                f"state is {self.num_rows}x{self.num_cols} but data is {data.num_rows}x{data.num_cols}"
            )

    def equals(self, other: "FactorState") -> bool:
        return all(
            np.array_equal(a, b) for a, b in ((self.P, other.P), (self.Q, other.Q), (self.c, other.c), (self.d, other.d))
        )


@dataclass(frozen=True)
class EvalReport:
    rmse: float
    mae: float
    n: int

    def as_dict(self) -> dict:
        return {"rmse": self.rmse, "mae": self.mae, "n": self.n}


def init_factors(num_rows: int, num_cols: int, f: int, seed=0, scale: float = DEFAULT_INIT_SCALE) -> FactorState:
    """Uniform (0, scale] factors and zero biases."""
    if f <= 0:
        raise ConfigError(f"latent dimension f must be positive, got {f}")
    if num_rows <= 0 or num_cols <= 0:
        raise ConfigError("matrix dimensions must be positive")
    if not scale > 0:
        raise ConfigError("init scale must be positive")
    rng = np.random.default_rng(seed)
    P = scale * (1.0 - rng.random((num_rows, f)))
    Q = scale * (1.0 - rng.random((num_cols, f)))
    return FactorState(P, Q, np.zeros(num_rows), np.zeros(num_cols))


def predict(state: FactorState, e: int, u: int) -> float:
    if not 0 <= e < state.num_rows:
        raise IndexError(f"row {e} out of range")
    if not 0 <= u < state.num_cols:
        raise IndexError(f"column {u} out of range")
    return float(state.P[e] @ state.Q[u] + state.c[e] + state.d[u])


def predict_many(state: FactorState, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", state.P[rows], state.Q[cols]) + state.c[rows] + state.d[cols]


def residuals(state: FactorState, data: RatingMatrix) -> np.ndarray:
    state.check_compatible(data)
    return data.vals - predict_many(state, data.rows, data.cols)


def data_term(state: FactorState, data: RatingMatrix) -> float:
    """Half the sum of squared residuals over the known entries."""
    res = residuals(state, data)
    return 0.5 * math.fsum(res * res)


def objective(state: FactorState, data: RatingMatrix, lam: float) -> float:
    """Squared loss plus L2 penalty, the penalty counted once per known entry.

    Both sums use exact (``fsum``) accumulation so the value does not depend
    on the triplet order.
    """
    if lam < 0:
        raise ConfigError("lambda must be non-negative")
    if len(data) == 0:
        return 0.0
    loss = data_term(state, data)
    if lam == 0:
        return loss
    row_sq = np.einsum("ij,ij->i", state.P, state.P) + state.c**2
    col_sq = np.einsum("ij,ij->i", state.Q, state.Q) + state.d**2
    penalty = math.fsum(row_sq[data.rows]) + math.fsum(col_sq[data.cols])
    return loss + 0.5 * lam * penalty


def evaluate(state: FactorState, data: RatingMatrix) -> EvalReport:
    n = len(data)
    if n == 0:
        raise EvaluationError("cannot evaluate on an empty rating set")
    res = np.abs(residuals(state, data))
    # scale by the largest residual so tiny values do not underflow when squared;
    # both metrics share the scale, keeping rmse >= mae exact when residuals tie
    scale = float(res.max())
    if scale == 0.0 or not math.isfinite(scale):
        return EvalReport(math.sqrt(math.fsum(res * res) / n), math.fsum(res) / n, n)
    z = res / scale
    rmse = scale * math.sqrt(math.fsum(z * z) / n)
    mae = scale * (math.fsum(z) / n)
    return EvalReport(rmse, mae, n)


# -- checkpoints -------------------------------------------------------------

_MAGIC = b"A2BF"
_VERSION = 1
_HEADER = struct.Struct("<4sIQQQ")


def save_checkpoint(state: FactorState, path) -> None:
    """Write ``state`` to ``path``; ``.json`` suffix selects JSON, anything else binary."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        doc = {
            "format": "a2bas-factors",
            "version": _VERSION,
            "num_rows": state.num_rows,
            "num_cols": state.num_cols,
            "f": state.f,
            "P": state.P.ravel().tolist(),
            "Q": state.Q.ravel().tolist(),
            "c": state.c.tolist(),
            "d": state.d.tolist(),
        }
        path.write_text(json.dumps(doc, separators=(",", ":")) + "\n")
        return
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, state.num_rows, state.num_cols, state.f))
        for arr in (state.P, state.Q, state.c, state.d):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> FactorState:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from exc
    if raw[:4] == _MAGIC:
        if len(raw) < _HEADER.size:
            raise CheckpointError("truncated checkpoint header")
        _, version, n_rows, n_cols, f = _HEADER.unpack_from(raw)
        if version != _VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
        expected = n_rows * f + n_cols * f + n_rows + n_cols
        if body.size != expected:
            raise CheckpointError(f"checkpoint body has {body.size} values, expected {expected}")
        body = body.astype(np.float64)
        a, b, c_end = n_rows * f, n_rows * f + n_cols * f, n_rows * f + n_cols * f + n_rows
        return FactorState(
            body[:a].reshape(n_rows, f), body[a:b].reshape(n_cols, f), body[b:c_end], body[c_end:]
        )
    try:
        doc = json.loads(raw)
        n_rows, n_cols, f = doc["num_rows"], doc["num_cols"], doc["f"]
        if doc.get("format") != "a2bas-factors" or doc.get("version") != _VERSION:
            raise CheckpointError("unrecognised checkpoint format")
        return FactorState(
            np.array(doc["P"], dtype=np.float64).reshape(n_rows, f),
            np.array(doc["Q"], dtype=np.float64).reshape(n_cols, f),
            np.array(doc["c"], dtype=np.float64),
            np.array(doc["d"], dtype=np.float64),
        )
    except (ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc
