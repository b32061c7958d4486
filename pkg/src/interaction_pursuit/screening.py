"""Marginal screening of interaction variables and main effects.

IP ranks covariates by two plug-in utilities computed on standardized data:

* ``omega_k = cov(X_k^2, Y^2) / sd(X_k^2)`` flags covariates that take part
  in an interaction (squaring exposes interaction signal that is invisible
  to the plain marginal correlation);
* ``omega*_j = mean(X_j Y)`` is the usual SIS utility for main effects.

SIS and DC-SIS comparators rank by ``|omega*|`` and by distance correlation.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np
from numba import njit

from .core import DataError, Dataset, Interaction, Main, check_standardized, standardize


@dataclass(frozen=True)
class TopD:
    """Keep the ``d`` largest utilities in magnitude."""

    d: int

    def __post_init__(self):
        if int(self.d) < 1:
            raise ValueError("budget must be positive")

    def to_dict(self):
        return {"top_d": int(self.d)}


@dataclass(frozen=True)
class Threshold:
    """Keep every utility with ``|u| >= tau``."""

    tau: float

    def __post_init__(self):
        if not self.tau >= 0:
            raise ValueError("threshold must be nonnegative")

    def to_dict(self):
        return {"threshold": float(self.tau)}


SelectionRule = TopD | Threshold


def rule_from_dict(d: dict) -> SelectionRule:
    if "top_d" in d:
        return TopD(int(d["top_d"]))
    return Threshold(float(d["threshold"]))


def default_budget(n: int, c: float = 1.0) -> int:
    """``floor(c n / log n)`` with the natural log, at least 1."""
    return max(1, int(math.floor(c * n / math.log(n))))


@dataclass(frozen=True)
class ScreeningResult:
    """Utilities and retained sets (0-based indices, ascending)."""

    omega: np.ndarray
    omega_star: np.ndarray
    a_hat: tuple[int, ...]
    b_hat: tuple[int, ...]
    i_hat: tuple[tuple[int, int], ...]
    m_hat: tuple[int, ...]
    rule_a: SelectionRule
    rule_b: SelectionRule
    interactions_from: str = "a_hat"
    passes: int = 1

    def features(self) -> list:
        """Main effects over M-hat followed by the constructed interactions."""
        return [Main(j) for j in self.m_hat] + [Interaction(k, l) for k, l in self.i_hat]

    def n_features(self) -> int:
        return len(self.m_hat) + len(self.i_hat)

    def to_dict(self) -> dict:
        return {
            "omega": [float(v) for v in self.omega],
            "omega_star": [float(v) for v in self.omega_star],
            "a_hat": [j + 1 for j in self.a_hat],
            "b_hat": [j + 1 for j in self.b_hat],
            "i_hat": [[k + 1, l + 1] for k, l in self.i_hat],
            "m_hat": [j + 1 for j in self.m_hat],
            "rule": {"a": self.rule_a.to_dict(), "b": self.rule_b.to_dict()},
            "interactions_from": self.interactions_from,
            "passes": self.passes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "ScreeningResult":
        return cls(
            omega=np.asarray(d["omega"], dtype=float),
            omega_star=np.asarray(d["omega_star"], dtype=float),
            a_hat=tuple(j - 1 for j in d["a_hat"]),
            b_hat=tuple(j - 1 for j in d["b_hat"]),
            i_hat=tuple((k - 1, l - 1) for k, l in d["i_hat"]),
            m_hat=tuple(j - 1 for j in d["m_hat"]),
            rule_a=rule_from_dict(d["rule"]["a"]),
            rule_b=rule_from_dict(d["rule"]["b"]),
            interactions_from=d.get("interactions_from", "a_hat"),
            passes=int(d.get("passes", 1)),
        )


# ---------------------------------------------------------------------------
# Utilities
# ---------------------------------------------------------------------------

def _omega(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x2 = x * x
    x2c = x2 - x2.mean(axis=0)
    y2 = y * y
    y2c = y2 - y2.mean()
    cov = (x2c * y2c[:, None]).mean(axis=0)
    var = (x2c * x2c).mean(axis=0)
    bad = np.flatnonzero(var <= 0)
    if bad.size:
        raise DataError(f"squared column {bad[0] + 1} has zero sample variance")
    return cov / np.sqrt(var)


def omega_utilities(d: Dataset, require_standardized: bool = True) -> np.ndarray:
    """Plug-in ``cov(X_k^2, Y^2) / sqrt(var(X_k^2))`` for every column."""
    if require_standardized:
        check_standardized(d)
    return _omega(d.x, d.y)


def omega_star_utilities(d: Dataset, require_standardized: bool = True) -> np.ndarray:
    """Plug-in ``E(X_j Y)`` for every column."""
    if require_standardized:
        check_standardized(d)
    return (d.x * d.y[:, None]).mean(axis=0)


def select(utilities: Sequence[float], rule: SelectionRule,
           candidates: Iterable[int] | None = None) -> tuple[int, ...]:
    """Indices retained by ``rule``, sorted ascending.

    Ties under ``TopD`` go to the smaller index.  ``candidates`` restricts
    the pool (used by the iterative driver).
    """
    u = np.abs(np.asarray(utilities, dtype=float))
    pool = np.arange(u.size) if candidates is None else np.array(sorted(set(candidates)), dtype=int)
    if isinstance(rule, Threshold):
        keep = pool[u[pool] >= rule.tau]
    else:
        if rule.d > u.size:
            raise ValueError(f"budget d={rule.d} exceeds p={u.size}")
        d = min(rule.d, pool.size)
        order = np.argsort(-u[pool], kind="stable")
        keep = pool[order[:d]]
    return tuple(int(j) for j in np.sort(keep))


def build_interactions(a_hat: Iterable[int]) -> tuple[tuple[int, int], ...]:
    """All pairs ``(k, l)``, ``k < l``, from ``a_hat`` in lexicographic order."""
    return tuple(combinations(sorted(set(a_hat)), 2))


def _prepare(d: Dataset, standardize_data: bool) -> Dataset:
    if standardize_data:
        return standardize(d)[0]
    return d


def ip_screen(d: Dataset, rule_a: SelectionRule, rule_b: SelectionRule,
              interactions_from: str = "a_hat", standardize_data: bool = True) -> ScreeningResult:
    """Two-set IP screening.

    ``interactions_from="m_hat"`` builds pairs from all retained variables,
    the more conservative variant for small samples.
    """
    if interactions_from not in ("a_hat", "m_hat"):
        raise ValueError("interactions_from must be 'a_hat' or 'm_hat'")
    s = _prepare(d, standardize_data)
    omega = _omega(s.x, s.y)
    omega_star = (s.x * s.y[:, None]).mean(axis=0)
    a_hat = select(omega, rule_a)
    b_hat = select(omega_star, rule_b)
    m_hat = tuple(sorted(set(a_hat) | set(b_hat)))
    i_hat = build_interactions(a_hat if interactions_from == "a_hat" else m_hat)
    return ScreeningResult(omega, omega_star, a_hat, b_hat, i_hat, m_hat,
                           rule_a, rule_b, interactions_from)


def sis_screen(d: Dataset, rule: SelectionRule, standardize_data: bool = True) -> tuple[int, ...]:
    """Rank by ``|mean(X_j Y)|`` on standardized covariates."""
    s = _prepare(d, standardize_data)
    return select((s.x * s.y[:, None]).mean(axis=0), rule)


# ---------------------------------------------------------------------------
# Distance correlation
# ---------------------------------------------------------------------------

@njit(cache=True)
def _dcov_terms(u, v):
    # V-statistic pieces: sum_ij |du||dv|, sum_i a_i b_i, sum a, sum b
    n = u.shape[0]
    a = np.zeros(n)
    b = np.zeros(n)
    s1 = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            du = abs(u[i] - u[j])
            dv = abs(v[i] - v[j])
            s1 += du * dv
            a[i] += du
            a[j] += du
            b[i] += dv
            b[j] += dv
    s1 *= 2.0
    return s1, np.dot(a, b), a.sum(), b.sum()


@njit(cache=True)
def _dcov2(u, v):
    n = u.shape[0]
    s1, s2, sa, sb = _dcov_terms(u, v)
    nf = float(n)
    return s1 / nf**2 - 2.0 * s2 / nf**3 + sa * sb / nf**4


def distance_correlation(u, v) -> float:
    """Sample distance correlation (V-statistic) of two 1-d samples."""
    return float(distance_correlations(np.asarray(u, dtype=float)[:, None], v)[0])


def distance_correlations(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Distance correlation of every column of ``x`` with ``y``.

    O(n^2) time and O(n) memory per column.  Constant columns, or a
    constant ``y``, give 0.
    """
    x = np.asarray(x, dtype=float)
    y = np.ascontiguousarray(np.asarray(y, dtype=float).ravel())
    p = x.shape[1]
    out = np.zeros(p)
    if np.ptp(y) == 0:
        return out
    dvar_y = _dcov2(y, y)
    for j in range(p):
        u = np.ascontiguousarray(x[:, j])
        if np.ptp(u) == 0:
            continue
        dvar_x = _dcov2(u, u)
        r2 = _dcov2(u, y) / np.sqrt(dvar_x * dvar_y)
        out[j] = np.sqrt(min(max(r2, 0.0), 1.0))
    return out


def dcsis_screen(d: Dataset, rule: SelectionRule) -> tuple[int, ...]:
    """Rank covariates by distance correlation with the response."""
    if d.n < 4:
        raise DataError("DC-SIS needs at least 4 observations")
    return select(distance_correlations(d.x, d.y), rule)


# ---------------------------------------------------------------------------
# Iterative IP
# ---------------------------------------------------------------------------

def _design_columns(x: np.ndarray, mains: Sequence[int], pairs: Sequence[tuple[int, int]]) -> np.ndarray:
    cols = [x[:, j] for j in mains] + [x[:, k] * x[:, l] for k, l in pairs]
    return np.column_stack(cols) if cols else np.empty((x.shape[0], 0))


def least_squares_residual(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Residual of an intercept + OLS fit, falling back to a tiny ridge.

    The ridge penalty is ``1e-8 * trace(Z'Z) / q`` and is used whenever the
    centred Gram matrix is not numerically positive definite.
    """
    yc = y - y.mean()
    if z.shape[1] == 0:
        return yc
    zc = z - z.mean(axis=0)
    g = zc.T @ zc
    rhs = zc.T @ yc
    try:
        if np.linalg.cond(g) > 1e12:
            raise np.linalg.LinAlgError
        coef = np.linalg.solve(g, rhs)
    except np.linalg.LinAlgError:
        q = g.shape[0]
        ridge = 1e-8 * np.trace(g) / q
        coef = np.linalg.solve(g + ridge * np.eye(q), rhs)
    return yc - zc @ coef


def iterative_ip(d: Dataset, rule_a: SelectionRule, rule_b: SelectionRule,
                 max_features: int | None = None, max_passes: int = 50,
                 standardize_data: bool = True) -> ScreeningResult:
    """Repeat IP screening on least-squares residuals.

    Each new pass excludes covariates already retained as interaction
    variables from the interaction pool and covariates already in M-hat from
    the main-effect pool.  The feature count is ``|M-hat| + |I-hat|``;
    newly ranked candidates are admitted in rank order only while the count
    stays within ``max_features``.  Stops when a pass adds nothing.

    The default budget is ``n - 1``, raised to the first-pass size when that
    is larger (then only one pass runs).
    """
    s = _prepare(d, standardize_data)
    n, p = s.x.shape
    first = ip_screen(s, rule_a, rule_b, standardize_data=False)
    if max_features is None:
        max_features = max(n - 1, first.n_features())
    if max_features < first.n_features():
        raise ValueError(
            f"max_features={max_features} is below the first-pass size {first.n_features()}")
    a_cum = set(first.a_hat)
    m_cum = set(first.m_hat)
    b_cum = set(first.b_hat)
    passes = 1

    def count(a, m):
        return len(m) + len(a) * (len(a) - 1) // 2

    while passes < max_passes and count(a_cum, m_cum) < max_features:
        z = _design_columns(s.x, sorted(m_cum), build_interactions(a_cum))
        r = least_squares_residual(z, s.y)
        if np.ptp(r) == 0:
            break
        omega = _omega(s.x, r)
        omega_star = (s.x * r[:, None]).mean(axis=0)
        pool_a = [j for j in range(p) if j not in a_cum]
        pool_b = [j for j in range(p) if j not in m_cum]
        new_a = _ranked(omega, rule_a, pool_a)
        new_b = _ranked(omega_star, rule_b, pool_b)
        added = False
        for j in new_a:
            a_try, m_try = a_cum | {j}, m_cum | {j}
            if count(a_try, m_try) > max_features:
                break
            a_cum, m_cum, added = a_try, m_try, True
        for j in new_b:
            if j in m_cum:
                continue
            if count(a_cum, m_cum | {j}) > max_features:
                break
            m_cum = m_cum | {j}
            b_cum = b_cum | {j}
            added = True
        if not added:
            break
        passes += 1

    a_hat = tuple(sorted(a_cum))
    return ScreeningResult(first.omega, first.omega_star, a_hat, tuple(sorted(b_cum)),
                           build_interactions(a_hat), tuple(sorted(m_cum)),
                           rule_a, rule_b, "a_hat", passes)


def _ranked(u: np.ndarray, rule: SelectionRule, pool: list[int]) -> list[int]:
    """Members of ``select(u, rule, pool)`` in decreasing ``|u|`` order."""
    if not pool:
        return []
    chosen = select(u, rule if isinstance(rule, Threshold) else TopD(min(rule.d, len(pool))), pool)
    return sorted(chosen, key=lambda j: (-abs(u[j]), j))
