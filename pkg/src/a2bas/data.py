"""Sparse rating data: ingestion, row/column indexing and seeded splitting."""

from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataFileError, DuplicateEntryError, ParseError

__all__ = [
    "RatingTriplet",
    "RatingMatrix",
    "SplitSpec",
    "parse_ratings",
    "read_ratings",
    "write_ratings",
    "split",
    "row_slice",
    "col_slice",
    "save_split",
    "load_split",
]


@dataclass(frozen=True)
class RatingTriplet:
    e: int
    u: int
    r: float


def _build_index(keys: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(keys, kind="stable")
    counts = np.bincount(keys, minlength=size) if size else np.zeros(0, dtype=np.int64)
    indptr = np.zeros(size + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, order


@dataclass(frozen=True, eq=False)
class RatingMatrix:
    """Known entries of an incomplete matrix, stored as COO arrays.

    ``row_index`` and ``col_index`` are CSR-style ``(indptr, positions)``
    pairs: the triplets of row ``e`` sit at ``positions[indptr[e]:indptr[e+1]]``
    in their original order.
    """

    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    num_rows: int
    num_cols: int
    row_ids: tuple | None = None
    col_ids: tuple | None = None
    row_index: tuple[np.ndarray, np.ndarray] = field(init=False, repr=False)
    col_index: tuple[np.ndarray, np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        rows = np.ascontiguousarray(self.rows, dtype=np.int64)
        cols = np.ascontiguousarray(self.cols, dtype=np.int64)
        vals = np.ascontiguousarray(self.vals, dtype=np.float64)
        if not (rows.ndim == cols.ndim == vals.ndim == 1) or not (len(rows) == len(cols) == len(vals)):
            raise ValueError("rows, cols and vals must be 1-D arrays of equal length")
        n_rows, n_cols = int(self.num_rows), int(self.num_cols)
        if len(rows):
            if rows.min() < 0 or rows.max() >= n_rows:
                raise IndexError("row id out of range")
            if cols.min() < 0 or cols.max() >= n_cols:
                raise IndexError("column id out of range")
            if not np.all(np.isfinite(vals)):
                raise ValueError("ratings must be finite")
            keys = rows * n_cols + cols
            uniq, counts = np.unique(keys, return_counts=True)
            if len(uniq) != len(keys):
                dup = int(uniq[np.argmax(counts > 1)])
                raise DuplicateEntryError(dup // n_cols, dup % n_cols)
        for arr in (rows, cols, vals):
            arr.setflags(write=False)
        set_ = object.__setattr__
        set_(self, "rows", rows)
        set_(self, "cols", cols)
        set_(self, "vals", vals)
        set_(self, "num_rows", n_rows)
        set_(self, "num_cols", n_cols)
        set_(self, "row_index", _build_index(rows, n_rows))
        set_(self, "col_index", _build_index(cols, n_cols))

    @classmethod
    def from_triplets(cls, triplets: Iterable, num_rows=None, num_cols=None) -> "RatingMatrix":
        items = [tuple(t) if not isinstance(t, RatingTriplet) else (t.e, t.u, t.r) for t in triplets]
        rows = np.array([t[0] for t in items], dtype=np.int64)
        cols = np.array([t[1] for t in items], dtype=np.int64)
        vals = np.array([t[2] for t in items], dtype=np.float64)
        if num_rows is None:
            num_rows = int(rows.max()) + 1 if len(rows) else 0
        if num_cols is None:
            num_cols = int(cols.max()) + 1 if len(cols) else 0
        return cls(rows, cols, vals, num_rows, num_cols)

    def __len__(self) -> int:
        return len(self.vals)

    @property
    def shape(self) -> tuple[int, int]:
        return self.num_rows, self.num_cols

    def triplets(self) -> list[RatingTriplet]:
        return [RatingTriplet(int(e), int(u), float(r)) for e, u, r in zip(self.rows, self.cols, self.vals)]

    def subset(self, positions: np.ndarray) -> "RatingMatrix":
        """Matrix holding the triplets at ``positions``, same dimensions and id maps."""
        positions = np.asarray(positions, dtype=np.int64)
        return RatingMatrix(
            self.rows[positions],
            self.cols[positions],
            self.vals[positions],
            self.num_rows,
            self.num_cols,
            self.row_ids,
            self.col_ids,
        )

    def row_positions(self, e: int) -> np.ndarray:
        if not 0 <= e < self.num_rows:
            raise IndexError(f"row {e} out of range [0, {self.num_rows})")
        indptr, order = self.row_index
        return order[indptr[e] : indptr[e + 1]]

    def col_positions(self, u: int) -> np.ndarray:
        if not 0 <= u < self.num_cols:
            raise IndexError(f"column {u} out of range [0, {self.num_cols})")
        indptr, order = self.col_index
        return order[indptr[u] : indptr[u + 1]]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.array([self.num_rows, self.num_cols, len(self)], dtype="<i8").tobytes())
        h.update(self.rows.astype("<i8").tobytes())
        h.update(self.cols.astype("<i8").tobytes())
        h.update(self.vals.astype("<f8").tobytes())
        return h.hexdigest()


def row_slice(matrix: RatingMatrix, e: int) -> list[tuple[int, float]]:
    pos = matrix.row_positions(e)
    return [(int(u), float(r)) for u, r in zip(matrix.cols[pos], matrix.vals[pos])]


def col_slice(matrix: RatingMatrix, u: int) -> list[tuple[int, float]]:
    pos = matrix.col_positions(u)
    return [(int(e), float(r)) for e, r in zip(matrix.rows[pos], matrix.vals[pos])]


def _split_fields(line: str, delimiter: str | None) -> list[str]:
    if delimiter is None or delimiter.isspace():
        return line.split()
    return [s.strip() for s in line.split(delimiter)]


def _as_index(token: str) -> int | None:
    try:
        value = int(token)
    except ValueError:
        return None
    return value if value >= 0 else None


def parse_ratings(source, delimiter: str | None = ",", densify: bool = False) -> RatingMatrix:
    """Parse delimited ``row, col, rating[, ...]`` lines into a RatingMatrix.

    Non-negative integer ids are used as-is unless ``densify`` is set; any
    other id (or ``densify=True``) triggers remapping to contiguous ids in
    first-seen order, kept on the result as ``row_ids`` / ``col_ids``.
    Lines starting with ``#`` are skipped, as is a single header line when
    it is the first data line and its rating field is not numeric.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    raw_rows, raw_cols, vals, lines = [], [], [], []
    first = True
    for lineno, line in enumerate(source, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        parts = _split_fields(text, delimiter)
        if len(parts) < 3:
            raise ParseError(f"expected at least 3 fields, got {len(parts)}", lineno)
        try:
            value = float(parts[2])
        except ValueError:
            if first:
                first = False  # header line
                continue
            raise ParseError(f"rating {parts[2]!r} is not a number", lineno) from None
        first = False
        if not math.isfinite(value):
            raise ParseError(f"rating {parts[2]!r} is not finite", lineno)
        if not parts[0] or not parts[1]:
            raise ParseError("empty id field", lineno)
        raw_rows.append(parts[0])
        raw_cols.append(parts[1])
        vals.append(value)
        lines.append(lineno)

    row_int = [_as_index(t) for t in raw_rows]
    col_int = [_as_index(t) for t in raw_cols]
    use_raw = not densify and None not in row_int and None not in col_int
    row_ids = col_ids = None
    if use_raw:
        rows, cols = row_int, col_int
        num_rows = max(rows) + 1 if rows else 0
        num_cols = max(cols) + 1 if cols else 0
    else:
        row_map: dict[str, int] = {}
        col_map: dict[str, int] = {}
        rows = [row_map.setdefault(t, len(row_map)) for t in raw_rows]
        cols = [col_map.setdefault(t, len(col_map)) for t in raw_cols]
        num_rows, num_cols = len(row_map), len(col_map)
        row_ids, col_ids = tuple(row_map), tuple(col_map)

    seen: set[tuple[int, int]] = set()
    for i, pair in enumerate(zip(rows, cols)):
        if pair in seen:
            raise DuplicateEntryError(raw_rows[i], raw_cols[i], line=lines[i])
        seen.add(pair)
    return RatingMatrix(
        np.array(rows, dtype=np.int64),
        np.array(cols, dtype=np.int64),
        np.array(vals, dtype=np.float64),
        num_rows,
        num_cols,
        row_ids,
        col_ids,
    )


def read_ratings(path, delimiter: str | None = ",", densify: bool = False) -> RatingMatrix:
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as fh:
            return parse_ratings(fh, delimiter, densify)
    except OSError as exc:
        raise DataFileError(f"cannot read {path}: {exc.strerror or exc}") from exc


def write_ratings(matrix: RatingMatrix, path, delimiter: str = ",") -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for e, u, r in zip(matrix.rows, matrix.cols, matrix.vals):
            fh.write(f"{e}{delimiter}{u}{delimiter}{float(r)!r}\n")


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.7
    val_frac: float = 0.1
    test_frac: float = 0.2
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if not all(0.0 < f < 1.0 for f in fracs):
            raise ConfigError(f"split fractions must lie in (0, 1), got {fracs}")
        if abs(math.fsum(fracs) - 1.0) > 1e-12:
            raise ConfigError(f"split fractions must sum to 1, got {math.fsum(fracs)!r}")

    def sizes(self, n: int) -> tuple[int, int, int]:
        # floor for val/test; the 1e-9 guard absorbs products like 0.29*100 = 28.999...
        n_val = int(math.floor(self.val_frac * n + 1e-9))
        n_test = int(math.floor(self.test_frac * n + 1e-9))
        return n - n_val - n_test, n_val, n_test


def split(matrix: RatingMatrix, spec: SplitSpec) -> tuple[RatingMatrix, RatingMatrix, RatingMatrix]:
    """Seeded uniform shuffle of the triplets into train/validation/test."""
    if not isinstance(spec, SplitSpec):
        raise ConfigError("spec must be a SplitSpec")
    n = len(matrix)
    if n == 0:
        raise ValueError("cannot split an empty matrix")
    n_train, n_val, _ = spec.sizes(n)
    perm = np.random.default_rng(spec.seed).permutation(n)
    parts = (perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :])
    return tuple(matrix.subset(np.sort(p)) for p in parts)


def save_split(out_dir, train: RatingMatrix, val: RatingMatrix, test: RatingMatrix, spec: SplitSpec, source_hash=None) -> dict:
    """Write ``train.csv``, ``val.csv``, ``test.csv`` and ``manifest.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    parts = {"train": train, "val": val, "test": test}
    for name, part in parts.items():
        write_ratings(part, out_dir / f"{name}.csv")
    manifest = split_manifest(train, val, test, spec, source_hash)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def split_manifest(train, val, test, spec: SplitSpec, source_hash=None) -> dict:
    parts = {"train": train, "val": val, "test": test}
    return {
        "seed": spec.seed,
        "fractions": [spec.train_frac, spec.val_frac, spec.test_frac],
        "num_rows": train.num_rows,
        "num_cols": train.num_cols,
        "sizes": {k: len(v) for k, v in parts.items()},
        "hashes": {k: v.content_hash() for k, v in parts.items()},
        "source_hash": source_hash,
    }


def load_split(split_dir) -> tuple[RatingMatrix, RatingMatrix, RatingMatrix, dict]:
    split_dir = Path(split_dir)
    try:
        manifest = json.loads((split_dir / "manifest.json").read_text())
    except OSError as exc:
        raise DataFileError(f"cannot read split manifest in {split_dir}") from exc
    shape = manifest["num_rows"], manifest["num_cols"]
    parts = []
    for name in ("train", "val", "test"):
        m = read_ratings(split_dir / f"{name}.csv")
        parts.append(RatingMatrix(m.rows, m.cols, m.vals, *shape))
    for name, part in zip(("train", "val", "test"), parts):
        if part.content_hash() != manifest["hashes"][name]:
            raise DataFileError(f"{name}.csv does not match the manifest hash")
    return (*parts, manifest)


def concat(matrices: Sequence[RatingMatrix]) -> RatingMatrix:
    first = matrices[0]
    return RatingMatrix(
        np.concatenate([m.rows for m in matrices]),
        np.concatenate([m.cols for m in matrices]),
        np.concatenate([m.vals for m in matrices]),
        first.num_rows,
        first.num_cols,
        first.row_ids,
        first.col_ids,
    )
