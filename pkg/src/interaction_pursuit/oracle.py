"""Closed-form Gaussian moments for the interaction model.

Every population quantity here reduces to products of zero-mean Gaussian
coordinates, whose expectations are sums over perfect matchings of
covariance entries.  The engine works with any numeric type that supports
``+`` and ``*`` (floats, or ``fractions.Fraction`` for exact checks).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Dataset, FeatureId, Interaction, Main, TrueModel

MAX_ORDER = 6
MAX_TERMS = 10**6


class OracleError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Covariance structures
# ---------------------------------------------------------------------------

def _check_rho(rho):
    if not -1 < rho < 1:
        raise ValueError(f"rho must lie in (-1, 1), got {rho}")


@dataclass(frozen=True)
class Identity:
    def matrix(self, p: int) -> np.ndarray:
        return np.eye(p)

    def entry(self, j: int, k: int):
        return 1.0 if j == k else 0.0

    def to_dict(self):
        return {"kind": "identity"}


@dataclass(frozen=True)
class AR1:
    """``sigma_jk = rho^|j-k|``."""

    rho: float

    def __post_init__(self):
        _check_rho(self.rho)

    def matrix(self, p: int) -> np.ndarray:
        idx = np.arange(p)
        return float(self.rho) ** np.abs(idx[:, None] - idx[None, :])

    def entry(self, j: int, k: int):
        return self.rho ** abs(j - k)

    def to_dict(self):
        return {"kind": "ar1", "rho": self.rho}


@dataclass(frozen=True)
class Equicorr:
    """Unit diagonal, every off-diagonal entry ``rho``."""

    rho: float

    def __post_init__(self):
        _check_rho(self.rho)

    def matrix(self, p: int) -> np.ndarray:
        m = np.full((p, p), float(self.rho))
        np.fill_diagonal(m, 1.0)
        return m

    def entry(self, j: int, k: int):
        return 1 if j == k else self.rho

    def to_dict(self):
        return {"kind": "equicorr", "rho": self.rho}


@dataclass(frozen=True)
class Tridiagonal:
    """Unit diagonal, ``rho`` on the first off-diagonals, zero elsewhere."""

    rho: float

    def __post_init__(self):
        _check_rho(self.rho)

    def matrix(self, p: int) -> np.ndarray:
        m = np.eye(p)
        i = np.arange(p - 1)
        m[i, i + 1] = m[i + 1, i] = float(self.rho)
        return m

    def entry(self, j: int, k: int):
        if j == k:
            return 1
        return self.rho if abs(j - k) == 1 else 0

    def to_dict(self):
        return {"kind": "tridiagonal", "rho": self.rho}


Covariance = Identity | AR1 | Equicorr | Tridiagonal


def covariance_from_dict(d: dict) -> Covariance:
    kind = d["kind"]
    if kind == "identity":
        return Identity()
    cls = {"ar1": AR1, "equicorr": Equicorr, "tridiagonal": Tridiagonal}.get(kind)
    if cls is None:
        raise ValueError(f"unknown covariance kind {kind!r}")
    return cls(float(d["rho"]))


class _Entries:
    """Index access ``sigma[j][k]`` for either a matrix or a structure."""

    def __init__(self, sigma):
        if hasattr(sigma, "entry"):
            self._f = sigma.entry
            self.p = None
        else:
            rows = [list(r) for r in sigma]
            p = len(rows)
            if any(len(r) != p for r in rows):
                raise OracleError("covariance must be square")
            self._rows = rows
            self._f = lambda j, k: self._rows[j][k]
            self.p = p

    def __call__(self, j, k):
        return self._f(j, k)


# ---------------------------------------------------------------------------
# Isserlis engine
# ---------------------------------------------------------------------------

class MomentEngine:
    """Memoised ``E[prod X_i]`` for a fixed zero-mean Gaussian law.

    ``sigma`` is a square matrix (nested sequences or ndarray) or one of the
    covariance structures, in which case any index is admissible.
    """

    def __init__(self, sigma, max_order: int = MAX_ORDER):
        self._s = _Entries(sigma)
        self.max_order = max_order
        self._cache: dict[tuple[int, ...], object] = {(): 1}

    def moment(self, indices: Sequence[int]):
        idx = tuple(sorted(int(i) for i in indices))
        if len(idx) > self.max_order:
            raise OracleError(f"moment order {len(idx)} exceeds {self.max_order}")
        if idx and (idx[0] < 0 or (self._s.p is not None and idx[-1] >= self._s.p)):
            raise OracleError(f"index out of range in {list(indices)}")
        return self._pairings(idx)

    def _pairings(self, idx: tuple[int, ...]):
        if len(idx) % 2:
            return 0
        hit = self._cache.get(idx)
        if hit is not None:
            return hit
        first, rest = idx[0], idx[1:]
        total = 0
        for t in range(len(rest)):
            pair = self._s(first, rest[t])
            if pair != 0:
                total = total + pair * self._pairings(rest[:t] + rest[t + 1:])
        self._cache[idx] = total
        return total


def isserlis_moment(sigma, indices: Sequence[int]):
    """``E[X_{i1} ... X_{ik}]`` for ``x ~ N(0, sigma)``, ``k <= 6``.

    Indices may repeat; odd orders give 0.
    """
    return MomentEngine(sigma).moment(indices)


# ---------------------------------------------------------------------------
# Model moments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianSpec:
    """Gaussian covariates, a true model and the error variance."""

    sigma: object
    model: TrueModel
    error_variance: float = 1.0

    def __post_init__(self):
        if not self.error_variance >= 0:
            raise OracleError("error variance must be nonnegative")
        if not hasattr(self.sigma, "entry"):
            mat = np.asarray(self.sigma, dtype=float)
            if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
                raise OracleError("covariance must be square")
            if self.model.max_index() >= mat.shape[0]:
                raise OracleError("model refers to a covariate beyond the covariance size")
            if not np.allclose(mat, mat.T):
                raise OracleError("covariance must be symmetric")
            try:
                np.linalg.cholesky(mat)
            except np.linalg.LinAlgError:
                raise OracleError("covariance is not positive definite") from None


def _monomials(model: TrueModel, with_intercept: bool = True):
    terms = [((), model.beta0)] if (with_intercept and model.beta0 != 0) else []
    terms += [((j,), v) for j, v in model.beta.items()]
    terms += [((k, l), v) for (k, l), v in model.gamma.items()]
    return terms


def _check_budget(n_terms: int):
    if n_terms * n_terms > MAX_TERMS:
        raise OracleError(f"{n_terms}^2 monomial pairs exceed the {MAX_TERMS} term budget; "
                          "use a Monte Carlo estimate instead")


def cov_xsq_ysq(spec: GaussianSpec, j: int, engine: MomentEngine | None = None):
    """Population ``cov(X_j^2, Y^2)``.

    With ``Y = f(x) + eps`` and ``eps`` independent of ``x`` with mean 0, the
    error contributes nothing, so the result is
    ``E[X_j^2 f^2] - sigma_jj E[f^2]`` expanded over monomial pairs.
    """
    eng = engine or MomentEngine(spec.sigma)
    return cov_xsq_terms(eng, _monomials(spec.model), j)


def cov_xsq_terms(engine: MomentEngine, terms, j: int):
    """``cov(X_j^2, f^2)`` for ``f = sum c * prod(x[idx])`` given as
    ``[(idx_tuple, c), ...]``; coefficients may be exact rationals."""
    _check_budget(len(terms))
    s_jj = engine.moment((j, j))
    total = 0
    for a, (ma, ca) in enumerate(terms):
        for b in range(a, len(terms)):
            mb, cb = terms[b]
            w = ca * cb * (1 if a == b else 2)
            mono = tuple(ma) + tuple(mb)
            total = total + w * (engine.moment((j, j) + mono) - s_jj * engine.moment(mono))
    return total


def signal_variance(spec: GaussianSpec, which: FeatureId | None = None,
                    engine: MomentEngine | None = None):
    """``var(f(x))`` or, for a feature id, the variance of that single term."""
    eng = engine or MomentEngine(spec.sigma)
    if which is None:
        terms = _monomials(spec.model, with_intercept=False)
    else:
        coefs = spec.model.coefficients()
        if which not in coefs:
            return 0
        terms = [(tuple(which.columns()) if isinstance(which, Interaction) else (which.j,),
                  coefs[which])]
    _check_budget(len(terms))
    second = 0
    first = 0
    for a, (ma, ca) in enumerate(terms):
        first = first + ca * eng.moment(ma)
        for b in range(a, len(terms)):
            mb, cb = terms[b]
            second = second + ca * cb * (1 if a == b else 2) * eng.moment(ma + mb)
    return second - first * first


def snr(spec: GaussianSpec, which: str | FeatureId = "overall"):
    """Signal-to-noise ratio ``var(signal) / var(eps)``.

    ``which="overall"`` uses the full regression function; a feature id uses
    that term alone.
    """
    if spec.error_variance == 0:
        raise OracleError("SNR undefined for zero error variance")
    target = None if (isinstance(which, str) and which == "overall") else which
    if isinstance(which, str) and which != "overall":
        raise ValueError("which must be 'overall' or a feature id")
    return signal_variance(spec, target) / spec.error_variance


def population_omega(spec: GaussianSpec, j: int) -> float:
    """``cov(X_j^2, Y^2) / sqrt(var(X_j^2))`` with ``var(X_j^2) = 2 sigma_jj^2``."""
    eng = MomentEngine(spec.sigma)
    s = float(eng.moment((j, j)))
    return float(cov_xsq_ysq(spec, j, eng)) / math.sqrt(2.0) / s


def population_omega_star(spec: GaussianSpec, j: int):
    """``E(X_j Y)``."""
    eng = MomentEngine(spec.sigma)
    return sum((c * eng.moment((j,) + m) for m, c in _monomials(spec.model)), 0)


def identity_cov_xsq_ysq(model: TrueModel, j: int) -> float:
    """Identity-covariance closed form
    ``2 (beta_j^2 + sum_k gamma_kj^2 + sum_l gamma_jl^2)``."""
    g = sum(v * v for (k, l), v in model.gamma.items() if j in (k, l))
    return 2 * (model.beta.get(j, 0) ** 2 + g)


# ---------------------------------------------------------------------------
# Single-interaction models under a tridiagonal covariance
# ---------------------------------------------------------------------------

def heredity_case_support(case: str, s: int) -> tuple[tuple[int, ...], tuple[int, int]]:
    """Main-effect support and interacting pair (1-based) of the three cases.

    ``strong``: pair (1, 2); ``weak``: pair (1, s+1); ``anti``: pair (s, s+1),
    the pair for which the published closed form was derived.
    """
    mains = tuple(range(1, s + 1))
    pairs = {"strong": (1, 2), "weak": (1, s + 1), "anti": (s, s + 1)}
    if case not in pairs:
        raise ValueError("case must be 'strong', 'weak' or 'anti'")
    return mains, pairs[case]


def _main_part(s: int, j: int, rho, beta):
    # cov(X_j^2, J1^2) with J1 = beta (X_1 + ... + X_s)
    b2 = 2 * beta * beta
    if s == 1:
        return b2 if j == 1 else (b2 * rho * rho if j == 2 else 0)
    if s == 2:
        if j in (1, 2):
            return b2 * (1 + rho) ** 2
        return b2 * rho * rho if j == 3 else 0
    if j in (1, s):
        return b2 * (1 + rho) ** 2
    if 2 <= j <= s - 1:
        return b2 * (1 + 2 * rho) ** 2
    return b2 * rho * rho if j == s + 1 else 0


def _pair_part(case: str, s: int, j: int, rho, gamma):
    g2 = 2 * gamma * gamma
    strong_like = case == "strong" or (case == "weak" and s == 1)
    if strong_like:
        if j in (1, 2):
            return g2 * (1 + 5 * rho * rho)
        return g2 * rho * rho if j == 3 else 0
    if case == "weak":
        if s == 2:
            if j in (1, 3):
                return g2
            if j == 2:
                return 2 * g2 * rho * rho
            return g2 * rho * rho if j == 4 else 0
        if j in (1, s + 1):
            return g2
        return g2 * rho * rho if j in (2, s, s + 2) else 0
    # anti: pair (s, s+1)
    if j in (s, s + 1):
        return g2 * (1 + 5 * rho * rho)
    return g2 * rho * rho if j in (s - 1, s + 2) else 0


def heredity_case_cov(case: str, s: int, j: int, rho, beta=1, gamma=1):
    """Piecewise closed form of ``cov(X_j^2, Y^2)`` (1-based ``j``) for
    ``Y = beta (X_1 + ... + X_s) + gamma X_k X_l + eps`` under a tridiagonal
    covariance; the main and interaction parts add because their cross term
    is an odd-order moment."""
    if s < 1:
        raise ValueError("s must be at least 1")
    return _main_part(s, j, rho, beta) + _pair_part(case, s, j, rho, gamma)


def heredity_case_model(case: str, s: int, beta=1.0, gamma=1.0,
                        pair: tuple[int, int] | None = None) -> TrueModel:
    """0-based :class:`TrueModel` of a heredity case (``pair`` is 1-based)."""
    mains, default_pair = heredity_case_support(case, s)
    k, l = pair or default_pair
    return TrueModel(0.0, {j - 1: beta for j in mains}, {(k - 1, l - 1): gamma})


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def _equicorr_factor(rho: float, p: int):
    # Cholesky of (1-rho) I + rho 11^T: row j holds c_0..c_{j-1} then d_j
    d = np.empty(p)
    c = np.empty(p)
    acc = 0.0
    for i in range(p):
        if not acc < 1.0:
            raise OracleError("equicorrelation matrix is not positive definite")
        d[i] = math.sqrt(1.0 - acc)
        c[i] = (rho - acc) / d[i]
        acc += c[i] * c[i]
    return c, d


def _tridiag_factor(rho: float, p: int):
    d = np.empty(p)
    off = np.zeros(p)
    d[0] = 1.0
    for i in range(1, p):
        off[i] = rho / d[i - 1]
        d[i] = math.sqrt(1.0 - off[i] * off[i])
    return off, d


def apply_cholesky(z: np.ndarray, cov: Covariance | np.ndarray) -> np.ndarray:
    """Rows ``L z_i`` with ``L`` the lower Cholesky factor of the covariance.

    Structured covariances use their banded or rank-one factor form, so the
    cost is ``O(n p)``; a dense matrix goes through ``numpy.linalg.cholesky``.
    """
    n, p = z.shape
    if isinstance(cov, Identity):
        return z.copy()
    if isinstance(cov, AR1):
        r = float(cov.rho)
        x = np.empty_like(z)
        x[:, 0] = z[:, 0]
        s = math.sqrt(1.0 - r * r)
        for j in range(1, p):
            x[:, j] = r * x[:, j - 1] + s * z[:, j]
        return x
    if isinstance(cov, Tridiagonal):
        off, d = _tridiag_factor(float(cov.rho), p)
        x = z * d
        x[:, 1:] += z[:, :-1] * off[1:]
        return x
    if isinstance(cov, Equicorr):
        c, d = _equicorr_factor(float(cov.rho), p)
        prefix = np.zeros(n)
        x = np.empty_like(z)
        for j in range(p):
            x[:, j] = prefix + d[j] * z[:, j]
            prefix += c[j] * z[:, j]
        return x
    mat = np.asarray(cov, dtype=float)
    try:
        chol = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        raise OracleError("covariance is not positive definite") from None
    return z @ chol.T


def cholesky_factor(cov: Covariance | np.ndarray, p: int | None = None) -> np.ndarray:
    """Dense lower factor (used to cross-check :func:`apply_cholesky`)."""
    if hasattr(cov, "matrix"):
        return apply_cholesky(np.eye(p), cov).T
    return np.linalg.cholesky(np.asarray(cov, dtype=float))


def rng_from_seed(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(ss))


def sample_covariates(cov: Covariance | np.ndarray, n: int, p: int | None, seed) -> np.ndarray:
    """``n`` rows from ``N(0, cov)``: standard-normal draws times the Cholesky factor."""
    if p is None:
        p = np.asarray(cov).shape[0]
    z = rng_from_seed(seed).standard_normal((n, p))
    return apply_cholesky(z, cov)


def sample_gaussian(spec: GaussianSpec, n: int, p: int, seed) -> Dataset:
    """Covariates from ``spec.sigma`` and ``y = f(x) + N(0, error_variance)``.

    The covariate and error streams are spawned from the same seed.
    """
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    sx, se = root.spawn(2)
    x = sample_covariates(spec.sigma, n, p, sx)
    eps = math.sqrt(spec.error_variance) * rng_from_seed(se).standard_normal(n)
    return Dataset(x, spec.model.signal(x) + eps)
