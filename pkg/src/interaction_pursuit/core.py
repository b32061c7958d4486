"""Data model shared by every stage: datasets, feature ids and true models.

Indices are 0-based inside the library.  Anything rendered for a user
(feature names, JSON dumps, CLI output) is 1-based, so ``Main(0)`` prints as
``x1`` and ``Interaction(0, 4)`` as ``x1:x5``.

All moments use the n-denominator convention.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed or degenerate input data."""


# ---------------------------------------------------------------------------
# Feature ids
# ---------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class Main:
    """Main effect of covariate ``j`` (0-based)."""

    j: int

    def __post_init__(self):
        if self.j < 0:
            raise ValueError(f"negative covariate index {self.j}")

    @property
    def name(self) -> str:
        return f"x{self.j + 1}"

    def columns(self) -> tuple[int, ...]:
        return (self.j,)


@dataclass(frozen=True, order=True)
class Interaction:
    """Product of covariates ``k < l`` (0-based)."""

    k: int
    l: int

    def __post_init__(self):
        if not 0 <= self.k < self.l:
            raise ValueError(
                f"interaction indices must satisfy 0 <= k < l, got ({self.k}, {self.l})")

    @property
    def name(self) -> str:
        return f"x{self.k + 1}:x{self.l + 1}"

    def columns(self) -> tuple[int, ...]:
        return (self.k, self.l)


FeatureId = Main | Interaction


def interaction(k: int, l: int) -> Interaction:
    """Build an interaction id from an unordered pair."""
    if k == l:
        raise ValueError(f"interaction of covariate {k} with itself")
    return Interaction(min(k, l), max(k, l))


def feature_key(f: FeatureId) -> tuple:
    """Canonical order: main effects ascending, then pairs lexicographically."""
    if isinstance(f, Main):
        return (0, f.j, -1)
    return (1, f.k, f.l)


def sort_features(features: Iterable[FeatureId]) -> list[FeatureId]:
    return sorted(features, key=feature_key)


def parse_feature(name: str) -> FeatureId:
    """Inverse of ``FeatureId.name``: ``"x3"`` or ``"x1:x5"`` (1-based)."""
    parts = name.strip().split(":")
    try:
        idx = [int(p.strip().lstrip("xX")) - 1 for p in parts]
    except ValueError:
        raise ValueError(f"cannot parse feature name {name!r}") from None
    if len(idx) == 1:
        return Main(idx[0])
    if len(idx) == 2:
        return interaction(*idx)
    raise ValueError(f"cannot parse feature name {name!r}")


# ---------------------------------------------------------------------------
# True model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrueModel:
    """Coefficients of ``Y = beta0 + sum beta_j X_j + sum gamma_kl X_k X_l + eps``.

    ``beta`` is keyed by covariate index, ``gamma`` by ``(k, l)`` with
    ``k < l``; explicit zeros are dropped on construction.
    """

    beta0: float = 0.0
    beta: Mapping[int, float] = field(default_factory=dict)
    gamma: Mapping[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        beta = {int(j): float(v) for j, v in self.beta.items() if v != 0}
        gamma = {}
        for (k, l), v in self.gamma.items():
            if v == 0:
                continue
            f = interaction(int(k), int(l))
            gamma[(f.k, f.l)] = float(v)
        object.__setattr__(self, "beta", dict(sorted(beta.items())))
        object.__setattr__(self, "gamma", dict(sorted(gamma.items())))

    def coefficients(self) -> dict[FeatureId, float]:
        """Nonzero coefficients keyed by feature id, in canonical order."""
        out: dict[FeatureId, float] = {Main(j): v for j, v in self.beta.items()}
        out.update({Interaction(k, l): v for (k, l), v in self.gamma.items()})
        return out

    def max_index(self) -> int:
        """Largest covariate index used, or -1 for the empty model."""
        idx = list(self.beta) + [l for _, l in self.gamma]
        return max(idx, default=-1)

    def signal(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the noiseless regression function on rows of ``x``."""
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape[0], self.beta0)
        for j, v in self.beta.items():
            out += v * x[:, j]
        for (k, l), v in self.gamma.items():
            out += v * x[:, k] * x[:, l]
        return out

    def to_dict(self) -> dict:
        return {
            "beta0": self.beta0,
            "beta": {f"x{j + 1}": v for j, v in self.beta.items()},
            "gamma": {f"x{k + 1}:x{l + 1}": v for (k, l), v in self.gamma.items()},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrueModel":
        beta = {parse_feature(k).j: float(v) for k, v in d.get("beta", {}).items()}
        gamma = {}
        for k, v in d.get("gamma", {}).items():
            f = parse_feature(k)
            gamma[(f.k, f.l)] = float(v)
        return cls(float(d.get("beta0", 0.0)), beta, gamma)


def true_sets(m: TrueModel):
    """Index sets (I, A, B, M) of a true model.

    I holds the important interactions, A the covariates taking part in one,
    B the important main effects and M = A | B.  Returned as Python sets of
    0-based indices (pairs for I).
    """
    I = set(m.gamma)
    A = {k for pair in I for k in pair}
    B = set(m.beta)
    return I, A, B, A | B


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Standardization:
    """Per-column centre and scale applied by :func:`standardize`."""

    mean: np.ndarray
    sd: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.sd

    def invert(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) * self.sd + self.mean

    @classmethod
    def identity(cls, p: int) -> "Standardization":
        return cls(np.zeros(p), np.ones(p))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Covariates ``x`` (n x p) and response ``y``.

    Immutable.  ``transform`` records the standardization that produced ``x``
    from the raw covariates (identity for raw data), so fitted models can be
    applied to new raw rows.
    """

    x: np.ndarray
    y: np.ndarray
    standardized: bool = False
    names: tuple[str, ...] | None = None
    transform: Standardization | None = None

    def __post_init__(self):
        x = _readonly(self.x)
        y = _readonly(np.ravel(self.y))
        if x.ndim != 2:
            raise DataError("x must be a 2-d array")
        n, p = x.shape
        if y.shape[0] != n:
            raise DataError(f"x has {n} rows but y has {y.shape[0]}")
        if n < 3:
            raise DataError(f"need at least 3 observations, got {n}")
        if p < 1:
            raise DataError("need at least one covariate")
        if not np.all(np.isfinite(x)):
            i, j = np.argwhere(~np.isfinite(x))[0]
            raise DataError(f"non-finite covariate at row {i + 1}, column {j + 1}")
        if not np.all(np.isfinite(y)):
            i = int(np.argwhere(~np.isfinite(y))[0, 0])
            raise DataError(f"non-finite response at row {i + 1}")
        if self.names is not None and len(self.names) != p:
            raise DataError("names must have one entry per covariate")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if self.transform is None:
            object.__setattr__(self, "transform", Standardization.identity(p))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def with_response(self, y: np.ndarray) -> "Dataset":
        return Dataset(self.x, y, self.standardized, self.names, self.transform)

    def permute_columns(self, perm: Sequence[int]) -> "Dataset":
        perm = np.asarray(perm)
        names = None if self.names is None else tuple(self.names[i] for i in perm)
        tr = Standardization(self.transform.mean[perm], self.transform.sd[perm])
        return Dataset(self.x[:, perm], self.y, self.standardized, names, tr)

    def column_names(self) -> list[str]:
        if self.names is not None:
            return list(self.names)
        return [f"x{j + 1}" for j in range(self.p)]


def standardize(d: Dataset) -> tuple[Dataset, Standardization]:
    """Centre each column and scale it to unit n-denominator variance.

    Returns the standardized dataset and the (mean, sd) pair used.  The
    response is left untouched.
    """
    # column-contiguous copy: per-column sums then do not depend on column position
    x = np.asfortranarray(d.x)
    mean = x.mean(axis=0)
    xc = x - mean
    sd = np.sqrt((xc * xc).mean(axis=0))
    const = np.flatnonzero(np.ptp(x, axis=0) == 0)
    if const.size:
        raise DataError(f"constant column {const[0] + 1}")
    z = xc / sd
    # compose with any earlier transform so raw rows can still be mapped
    prev = d.transform
    total = Standardization(prev.mean + prev.sd * mean, prev.sd * sd)
    return Dataset(z, d.y, True, d.names, total), Standardization(mean, sd)


def check_standardized(d: Dataset, atol_mean: float = 1e-12, atol_var: float = 1e-10):
    """Raise unless every column has mean 0 and second moment 1."""
    if not d.standardized:
        raise DataError("dataset is not standardized")
    m = d.x.mean(axis=0)
    s2 = (d.x * d.x).mean(axis=0)
    bad = np.flatnonzero((np.abs(m) > atol_mean) | (np.abs(s2 - 1) > atol_var))
    if bad.size:
        raise DataError(f"column {bad[0] + 1} is not standardized")


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def format_float(v: float) -> str:
    """Shortest decimal that round-trips (never more than 17 significant digits)."""
    return repr(float(v))


def load_csv(path, response_column: str | int = -1, header: bool = True) -> Dataset:
    """Read a comma-separated numeric table.

    Parameters
    ----------
    path : path-like
    response_column : str or int
        Column name (requires ``header``) or 0-based position; negative
        positions count from the end.
    header : bool
        Whether the first row holds column names.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    names = None
    if header:
        names = [c.strip() for c in rows[0]]
        rows = rows[1:]
    width = len(names) if names is not None else len(rows[0])
    values = np.empty((len(rows), width))
    first_data_line = 2 if header else 1
    for i, row in enumerate(rows):
        line = i + first_data_line
        if len(row) != width:
            raise DataError(f"{path}: line {line} has {len(row)} fields, expected {width}")
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: cannot parse {cell!r} at line {line}, column {j + 1}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: non-finite value {cell!r} at line {line}, column {j + 1}")
            values[i, j] = v

    if isinstance(response_column, str):
        if names is None:
            raise DataError("response given by name but the file has no header")
        if response_column not in names:
            raise DataError(f"{path}: no column named {response_column!r}")
        r = names.index(response_column)
    else:
        r = int(response_column)
        if not -width <= r < width:
            raise DataError(f"{path}: response column {r} out of range")
        r %= width
    keep = [j for j in range(width) if j != r]
    y = values[:, r]
    if np.ptp(y) == 0:
        warnings.warn(f"{path}: response is constant", stacklevel=2)
    xnames = tuple(names[j] for j in keep) if names is not None else None
    return Dataset(values[:, keep], y, False, xnames)


def dataset_to_csv(d: Dataset, response_name: str = "y", header: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(d.column_names() + [response_name])
    for xi, yi in zip(d.x, d.y):
        w.writerow([format_float(v) for v in xi] + [format_float(yi)])
    return buf.getvalue()


def save_csv(d: Dataset, path, response_name: str = "y", header: bool = True) -> None:
    """Write covariates followed by the response as the last column."""
    Path(path).write_text(dataset_to_csv(d, response_name, header), encoding="utf-8")
