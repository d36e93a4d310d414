"""Tabular data container, CSV ingestion, standardization and a seeded synthetic generator."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from xai_concord.errors import DataError

NUMERIC = "numeric"
BINARY = "binary"

#: Name of the bit generator behind every random draw in this package.
PRNG_ALGORITHM = "numpy.random.PCG64"

_CONSTANT_STD = 1e-12


def make_rng(seed: int) -> np.random.Generator:
    """Return the package's seeded generator (PCG64, 128-bit LCG with permuted output)."""
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str = NUMERIC
    expert_flagged: bool = False
    observed_min: float = 0.0
    observed_max: float = 0.0

    def __post_init__(self):
        if not self.name:
            raise DataError("feature names must be non-empty")
        if self.kind not in (NUMERIC, BINARY):
            raise DataError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.observed_min > self.observed_max:
            raise DataError(f"feature {self.name!r}: observed_min > observed_max")


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix with named columns and binary labels.

    ``rows`` and ``labels`` are read-only float/int arrays, so a Dataset can be
    shared freely between workers.
    """

    features: tuple
    rows: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        features = tuple(self.features)
        rows = _frozen(self.rows)
        labels = np.array(self.labels, dtype=np.int64)
        labels.setflags(write=False)
        if rows.ndim != 2:
            raise DataError(f"rows must be a 2-D matrix, got shape {rows.shape}")
        if rows.shape[1] != len(features):
            raise DataError(f"rows have {rows.shape[1]} columns but {len(features)} features were given")
        if labels.shape != (rows.shape[0],):
            raise DataError(f"{rows.shape[0]} rows but {labels.size} labels")
        if not np.all(np.isfinite(rows)):
            raise DataError("rows contain non-finite values")
        if not np.all((labels == 0) | (labels == 1)):
            raise DataError("labels must be 0 or 1")
        names = [f.name for f in features]
        if len(set(names)) != len(names):
            raise DataError(f"duplicate feature names in {names}")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def expert_names(self) -> list[str]:
        return [f.name for f in self.features if f.expert_flagged]

    def subset(self, index) -> "Dataset":
        """Rows selected by ``index``; feature metadata is kept as is."""
        return Dataset(self.features, self.rows[index], self.labels[index])

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.features == other.features
            and self.rows.shape == other.rows.shape
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.labels, other.labels)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class StandardizationParams:
    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _frozen(self.mean))
        object.__setattr__(self, "scale", _frozen(self.scale))
        if np.any(self.scale <= 0):
            raise DataError("standardization scale must be positive")

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.scale

    def invert(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.scale + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizationParams":
        return cls(np.array(d["mean"], dtype=float), np.array(d["scale"], dtype=float))


@dataclass(frozen=True, eq=False)
class SyntheticSpec:
    """Logistic generative model over correlated standard Gaussian features."""

    d: int
    n: int
    beta: np.ndarray
    intercept: float = 0.0
    correlation: np.ndarray | None = None
    seed: int = 0
    names: tuple | None = None
    expert_names: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.d < 1 or self.n < 1:
            raise DataError(f"synthetic spec needs n >= 1 and d >= 1 (got n={self.n}, d={self.d})")
        beta = _frozen(self.beta)
        if beta.shape != (self.d,):
            raise DataError(f"beta has length {beta.size}, expected d={self.d}")
        corr = np.eye(self.d) if self.correlation is None else np.array(self.correlation, dtype=float)
        if corr.shape != (self.d, self.d):
            raise DataError(f"correlation must be {self.d}x{self.d}, got {corr.shape}")
        if not np.allclose(corr, corr.T, atol=1e-12):
            raise DataError("correlation matrix is not symmetric")
        if not np.allclose(np.diag(corr), 1.0, atol=1e-12):
            raise DataError("correlation matrix must have a unit diagonal")
        corr.setflags(write=False)
        names = tuple(self.names) if self.names is not None else tuple(f"x{j}" for j in range(self.d))
        if len(names) != self.d:
            raise DataError(f"{len(names)} names given for d={self.d}")
        experts = frozenset(self.expert_names)
        if not experts <= set(names):
            raise DataError(f"expert names not among features: {sorted(experts - set(names))}")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "correlation", corr)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "expert_names", experts)
        object.__setattr__(self, "seed", int(self.seed))

    def cholesky(self) -> np.ndarray:
        """Lower Cholesky factor, with a tiny diagonal jitter for singular PSD input."""
        eig_min = float(np.linalg.eigvalsh(self.correlation).min())
        if eig_min < -1e-8:
            raise DataError(f"correlation matrix is not positive semidefinite (min eigenvalue {eig_min:.3g})")
        jitter = 0.0 if eig_min > 1e-10 else 1e-10 - min(eig_min, 0.0)
        try:
            return np.linalg.cholesky(self.correlation + jitter * np.eye(self.d))
        except np.linalg.LinAlgError as exc:
            raise DataError(f"Cholesky factorization failed: {exc}") from exc


def sigmoid(s):
    """Numerically stable logistic function (scalar or array)."""
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    e = np.exp(s[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


def _feature_specs(names, rows, kinds=None, experts=frozenset()):
    specs = []
    for j, name in enumerate(names):
        col = rows[:, j]
        if kinds is None:
            kind = BINARY if col.size and np.all((col == 0) | (col == 1)) else NUMERIC
        else:
            kind = kinds[j]
        lo, hi = (float(col.min()), float(col.max())) if col.size else (0.0, 0.0)
        specs.append(FeatureSpec(name, kind, name in experts, lo, hi))
    return tuple(specs)


def load_csv(path, label_column: str, expert_names: Iterable[str] = ()) -> Dataset:
    """Read a headered, comma-separated file of numbers into a :class:`Dataset`.

    Columns holding only 0/1 values become binary features. Cells must parse
    as floats; errors name the offending line and column.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header row expected") from None
        if len(set(header)) != len(header):
            dupes = sorted({h for h in header if header.count(h) > 1})
            raise DataError(f"{path}: duplicate header names {dupes}")
        if label_column not in header:
            raise DataError(f"{path}: label column {label_column!r} not in header")
        experts = set(expert_names)
        missing = experts - set(header)
        if missing:
            raise DataError(f"{path}: expert names not in header: {sorted(missing)}")
        label_idx = header.index(label_column)
        values = []
        for lineno, record in enumerate(reader, start=2):
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} cells, found {len(record)}")
            parsed = []
            for col, cell in zip(header, record):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: column {col!r}: cannot parse {cell!r} as a number") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}:{lineno}: column {col!r}: non-finite value {cell!r}")
                parsed.append(v)
            values.append(parsed)

    table = np.array(values, dtype=float).reshape(len(values), len(header))
    y = table[:, label_idx]
    bad = ~((y == 0) | (y == 1))
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise DataError(f"{path}: label {y[i]!r} on data row {i + 1} is not 0 or 1")
    names = [h for k, h in enumerate(header) if k != label_idx]
    rows = np.delete(table, label_idx, axis=1)
    return Dataset(_feature_specs(names, rows, experts=experts), rows, y.astype(np.int64))


def write_csv(data: Dataset, path, label_column: str = "label") -> Path:
    """Write ``data`` as CSV with full-precision values (round-trips exactly)."""
    path = Path(path)
    if label_column in data.names:
        raise DataError(f"label column name {label_column!r} collides with a feature name")
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(data.names + [label_column])
        for row, y in zip(data.rows, data.labels):
            w.writerow([repr(float(v)) for v in row] + [str(int(y))])
    return path


def synthesize(spec: SyntheticSpec) -> Dataset:
    """Draw a dataset from ``spec``.

    Rows are ``z @ L.T`` for standard normal ``z`` and the Cholesky factor ``L``
    of the correlation matrix; labels are Bernoulli(sigmoid(beta . x + intercept)).
    Everything comes from one PCG64 stream seeded with ``spec.seed``.
    """
    chol = spec.cholesky()
    rng = make_rng(spec.seed)
    z = rng.standard_normal((spec.n, spec.d))
    rows = z @ chol.T
    p = sigmoid(rows @ spec.beta + spec.intercept)
    labels = (rng.random(spec.n) < p).astype(np.int64)
    kinds = [NUMERIC] * spec.d
    return Dataset(_feature_specs(spec.names, rows, kinds, spec.expert_names), rows, labels)


def standardize(data: Dataset) -> tuple[Dataset, StandardizationParams]:
    """Center and scale numeric columns to zero mean and unit population std.

    Binary columns are untouched (mean 0, scale 1 in the returned params) and
    constant columns are only centered.
    """
    if data.n < 1:
        raise DataError("cannot standardize an empty dataset")
    mean = data.rows.mean(axis=0)
    std = data.rows.std(axis=0)
    scale = np.where(std < _CONSTANT_STD, 1.0, std)
    binary = np.array([f.kind == BINARY for f in data.features], dtype=bool)
    mean = np.where(binary, 0.0, mean)
    scale = np.where(binary, 1.0, scale)
    params = StandardizationParams(mean, scale)
    return _rebuild(data, params.apply(data.rows)), params


def invert(data: Dataset, params: StandardizationParams) -> Dataset:
    """Undo :func:`standardize`."""
    return _rebuild(data, params.invert(data.rows))


def _rebuild(data: Dataset, rows: np.ndarray) -> Dataset:
    specs = []
    for j, f in enumerate(data.features):
        col = rows[:, j]
        specs.append(FeatureSpec(f.name, f.kind, f.expert_flagged, float(col.min()), float(col.max())))
    return Dataset(tuple(specs), rows, data.labels)


def input_bounds(data: Dataset) -> np.ndarray:
    """Per-feature ``[observed_min, observed_max]`` as a (d, 2) array."""
    return np.array([[f.observed_min, f.observed_max] for f in data.features], dtype=float).reshape(-1, 2)


def correlation_block(d: int, members: Sequence[int], rho: float) -> np.ndarray:
    """Identity correlation except pairwise ``rho`` among ``members``."""
    c = np.eye(d)
    for a in members:
        for b in members:
            if a != b:
                c[a, b] = rho
    return c
