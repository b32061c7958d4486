"""Regularised selection on the reduced augmented design.

Cyclic coordinate descent on the rescaled columns minimising

    (2n)^{-1} ||y - W theta*||^2 + sum_m pen(|theta*_m|)

where ``W = z D^{-1}`` and ``theta* = D theta``.  Each coordinate update is
an exact univariate minimisation, so the objective never increases.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from numba import njit

from .core import Dataset, FeatureId, Interaction, Main, TrueModel
from .design import AugmentedDesign, feature_matrix
from .penalties import (ENET, LASSO, SICA, ElasticNet, L1PlusSICA, Lasso, PenaltySpec,
                        penalty, penalty_value, prox)


class SelectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 10_000
    tolerance: float = 1e-7
    kkt_tolerance: float = 1e-6
    # objective history is checked for monotonicity when set (or IP_DEBUG=1)
    debug: bool = False


@dataclass
class FitResult:
    """Coefficients on the column scale of ``z`` (theta, not theta*)."""

    theta: dict
    intercept: float
    objective: float
    iterations: int
    converged: bool
    kkt_max_violation: float
    penalty: PenaltySpec | None = None
    objective_history: list = field(default_factory=list, repr=False)
    coef: np.ndarray | None = field(default=None, repr=False)
    design: AugmentedDesign | None = field(default=None, repr=False)

    @property
    def df(self) -> int:
        return len(self.theta)

    def predict(self, x_raw: np.ndarray) -> np.ndarray:
        """Predict from raw covariate rows (same coordinates as the training data)."""
        if self.design is None:
            raise SelectionError("fit has no design attached")
        feats = list(self.theta)
        if not feats:
            return np.full(x_raw.shape[0], self.intercept)
        # standardize only the covariates the fitted model touches
        cols = sorted({j for f in feats for j in f.columns()})
        pos = {j: i for i, j in enumerate(cols)}
        tr = self.design.transform
        xs = (np.asarray(x_raw, dtype=float)[:, cols] - tr.mean[cols]) / tr.sd[cols]
        local = [Main(pos[f.j]) if isinstance(f, Main) else Interaction(pos[f.k], pos[f.l])
                 for f in feats]
        return self.intercept + feature_matrix(xs, local) @ np.array([self.theta[f] for f in feats])

    def to_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "coefficients": [{"feature": f.name, "value": v} for f, v in self.theta.items()],
            "objective": self.objective,
            "converged": self.converged,
            "kkt_max_violation": self.kkt_max_violation,
            "iterations": self.iterations,
            "penalty": None if self.penalty is None else self.penalty.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2)


def _jsonable(o):
    if isinstance(o, dict):
        return {k: _jsonable(v) for k, v in o.items()}
    if isinstance(o, list):
        return [_jsonable(v) for v in o]
    if isinstance(o, float) and not math.isfinite(o):
        return None
    return o


# ---------------------------------------------------------------------------
# Coordinate descent kernel
# ---------------------------------------------------------------------------

@njit(cache=True)
def _objective(r, theta, n, kind, lam0, lam, alpha, a):
    val = 0.5 * np.dot(r, r) / n
    for m in range(theta.shape[0]):
        if theta[m] != 0.0:
            val += penalty_value(theta[m], kind, lam0, lam, alpha, a)
    return val


@njit(cache=True)
def _sweep(w, curv, r, theta, idx, kind, lam0, lam, alpha, a):
    n = w.shape[0]
    maxd = 0.0
    for t in range(idx.shape[0]):
        m = idx[t]
        col = w[:, m]
        old = theta[m]
        zm = old + np.dot(col, r) / (n * curv[m])
        new = prox(zm, curv[m], kind, lam0, lam, alpha, a)
        if new != old:
            delta = new - old
            for i in range(n):
                r[i] -= delta * col[i]
            theta[m] = new
            d = abs(delta)
            if d > maxd:
                maxd = d
    return maxd


@njit(cache=True)
def _coordinate_descent(w, y, theta, kind, lam0, lam, alpha, a, max_iter, tol, hist):
    n, q = w.shape
    curv = np.empty(q)
    for m in range(q):
        curv[m] = np.dot(w[:, m], w[:, m]) / n
    r = y - w @ theta
    all_idx = np.arange(q)
    it = 0
    converged = False
    while it < max_iter:
        maxd = _sweep(w, curv, r, theta, all_idx, kind, lam0, lam, alpha, a)
        hist[it] = _objective(r, theta, n, kind, lam0, lam, alpha, a)
        it += 1
        if maxd < tol:
            converged = True
            break
        active = np.flatnonzero(theta != 0.0)
        while it < max_iter:
            maxd = _sweep(w, curv, r, theta, active, kind, lam0, lam, alpha, a)
            hist[it] = _objective(r, theta, n, kind, lam0, lam, alpha, a)
            it += 1
            if maxd < tol:
                break
    return it, converged, r


def _debug_enabled(opts: SolverOptions) -> bool:
    return opts.debug or os.environ.get("IP_DEBUG", "") not in ("", "0")


def check_monotone(history: Sequence[float], rtol: float = 1e-12) -> None:
    """Raise AssertionError if an objective trace ever increases."""
    h = np.asarray(history, dtype=float)
    if h.size < 2:
        return
    slack = rtol * np.maximum(1.0, np.abs(h[:-1]))
    bad = np.flatnonzero(h[1:] > h[:-1] + slack)
    if bad.size:
        i = bad[0]
        raise AssertionError(f"objective increased at sweep {i + 1}: {h[i]!r} -> {h[i + 1]!r}")


def _solve_star(w, y, theta_star, pen: PenaltySpec, opts: SolverOptions):
    kind, lam0, lam, alpha, a = pen.code
    theta_star = np.array(theta_star, dtype=float)
    hist = np.empty(opts.max_iterations)
    it, conv, r = _coordinate_descent(w, y, theta_star, kind, lam0, lam, alpha, a,
                                      opts.max_iterations, opts.tolerance, hist)
    return theta_star, r, int(it), bool(conv), hist[:it]


def _kkt_star(w, r, theta_star, pen: PenaltySpec) -> float:
    n = w.shape[0]
    grad = -(w.T @ r) / n
    if isinstance(pen, Lasso):
        l1, ridge = pen.lam0, 0.0
    elif isinstance(pen, ElasticNet):
        l1, ridge = pen.lam * pen.alpha, pen.lam * (1 - pen.alpha)
    else:
        raise SelectionError("KKT check applies to convex penalties only; "
                             "use the coordinate-stationarity check for L1+SICA")
    active = theta_star != 0
    viol = np.empty_like(grad)
    viol[active] = np.abs(grad[active] + ridge * theta_star[active] + l1 * np.sign(theta_star[active]))
    viol[~active] = np.maximum(0.0, np.abs(grad[~active]) - l1)
    return float(viol.max(initial=0.0))


def kkt_check(design: AugmentedDesign, pen: PenaltySpec, theta) -> float:
    """Largest KKT violation of a coefficient vector (theta scale) for a convex penalty."""
    if isinstance(pen, L1PlusSICA):
        raise SelectionError("KKT check applies to convex penalties only; "
                             "use the coordinate-stationarity check for L1+SICA")
    theta = _as_vector(theta, design)
    ts = design.d_scale * theta
    r = design.y_centered - design.w @ ts
    return _kkt_star(design.w, r, ts, pen)


def stationarity_violation(design: AugmentedDesign, pen: PenaltySpec, theta) -> float:
    """Largest change a single exact coordinate update would make (theta* scale)."""
    theta = _as_vector(theta, design)
    ts = design.d_scale * theta
    w = design.w
    n = design.n
    r = design.y_centered - w @ ts
    kind, lam0, lam, alpha, a = pen.code
    worst = 0.0
    for m in range(design.q):
        c = float(w[:, m] @ w[:, m]) / n
        zm = ts[m] + float(w[:, m] @ r) / (n * c)
        worst = max(worst, abs(prox(zm, c, kind, lam0, lam, alpha, a) - ts[m]))
    return worst


def _as_vector(theta, design: AugmentedDesign) -> np.ndarray:
    if isinstance(theta, Mapping):
        idx = design.index()
        v = np.zeros(design.q)
        for f, val in theta.items():
            v[idx[f]] = val
        return v
    v = np.asarray(theta, dtype=float)
    if v.shape != (design.q,):
        raise ValueError("coefficient vector does not match the design")
    return v


def fit(design: AugmentedDesign, pen: PenaltySpec, opts: SolverOptions | None = None,
        warm_start=None) -> FitResult:
    """Minimise the penalised least-squares objective by coordinate descent.

    Non-convergence within ``max_iterations`` is reported through
    ``converged=False``; the best iterate is still returned.
    """
    opts = opts or SolverOptions()
    w, y = design.w, design.y_centered
    ts0 = np.zeros(design.q) if warm_start is None else design.d_scale * _as_vector(warm_start, design)
    ts, r, it, conv, hist = _solve_star(w, y, ts0, pen, opts)
    history = list(hist)
    kkt = float("nan")
    if not isinstance(pen, L1PlusSICA):
        kkt = _kkt_star(w, r, ts, pen)
        tol = opts.tolerance
        total = it
        # tighten the step tolerance until the optimality certificate holds
        while conv and kkt > opts.kkt_tolerance and tol > 1e-15 and total < opts.max_iterations:
            tol /= 10.0
            sub = replace(opts, tolerance=tol, max_iterations=opts.max_iterations - total)
            ts, r, it2, conv, hist = _solve_star(w, y, ts, pen, sub)
            history.extend(hist)
            total += it2
            kkt = _kkt_star(w, r, ts, pen)
        it = total
        conv = conv and kkt <= opts.kkt_tolerance
    if _debug_enabled(opts):
        check_monotone(history)
    return _result(design, pen, ts, r, it, conv, kkt, history)


def _result(design, pen, ts, r, it, conv, kkt, history) -> FitResult:
    theta = ts / design.d_scale
    coef = {design.features[m]: float(theta[m]) for m in np.flatnonzero(theta)}
    intercept = design.y_mean - float(design.col_means @ theta)
    obj = 0.5 * float(r @ r) / design.n + float(penalty(ts, pen).sum()) if pen is not None \
        else 0.5 * float(r @ r) / design.n
    return FitResult(coef, intercept, obj, it, conv, kkt, pen, history, theta, design)


def ols(design: AugmentedDesign) -> FitResult:
    """Unpenalised least squares on every column of the design."""
    coef, *_ = np.linalg.lstsq(design.z, design.y_centered, rcond=None)
    r = design.y_centered - design.z @ coef
    ts = design.d_scale * coef
    return _result(design, None, ts, r, 1, True, 0.0, [])


def rss(fit_: FitResult) -> float:
    d = fit_.design
    r = d.y_centered - d.z @ fit_.coef
    return float(r @ r)


# ---------------------------------------------------------------------------
# Tuning
# ---------------------------------------------------------------------------

def default_lam0_grid(design: AugmentedDesign, c0=(0.25, 0.5, 1.0)) -> list[float]:
    """``c0 * sqrt(log(p_tilde) / n)`` with ``p_tilde = p (p + 1) / 2``."""
    p = design.n_covariates
    p_tilde = max(p * (p + 1) // 2, 2)
    base = math.sqrt(math.log(p_tilde) / design.n)
    return [c * base for c in c0]


def lambda_max(design: AugmentedDesign) -> float:
    """Smallest Lasso level at which every coefficient is zero."""
    return float(np.max(np.abs(design.w.T @ design.y_centered)) / design.n)


def _sica_zero_level(zmax: float, lam0: float, a: float) -> float:
    # smallest lam (up to a factor 2) for which the univariate L1+SICA prox of zmax is 0
    lam = max(zmax, 1e-12)
    while univ_prox_sica(zmax, lam0, lam, a) != 0.0:
        lam *= 2.0
    return lam


def univ_prox_sica(z, lam0, lam, a):
    return float(prox(float(z), 1.0, SICA, lam0, lam, 1.0, a))


def geometric_grid(hi: float, ratio: float, size: int) -> np.ndarray:
    if size == 1:
        return np.array([hi])
    return hi * np.geomspace(1.0, ratio, size)


def bic(rss_: float, df: int, n: int) -> float:
    if rss_ <= 0:
        return -math.inf
    return n * math.log(rss_ / n) + df * math.log(n)


@dataclass
class TuningResult:
    penalty: PenaltySpec
    fit: FitResult
    path: list = field(default_factory=list, repr=False)


def tune_bic(design: AugmentedDesign, lam0_grid: Sequence[float] | None = None,
             lam_grid: Sequence[float] | None = None, a_grid: Sequence[float] = (0.5,),
             n_lambda: int = 30, ratio: float = 0.01, max_df: int | None = None,
             opts: SolverOptions | None = None) -> tuple[L1PlusSICA, FitResult]:
    """Pick L1+SICA tuning parameters minimising ``n log(RSS/n) + df log n``.

    Each ``(lam0, a)`` pair runs a warm-started path from the largest to the
    smallest ``lam``.  A path stops once the model exceeds ``max_df``
    nonzeros (default ``n // 2``), where the BIC is no longer informative.
    Ties go to the sparser model, then the smaller ``lam``.
    """
    opts = opts or SolverOptions()
    n = design.n
    max_df = n // 2 if max_df is None else max_df
    lam0_grid = default_lam0_grid(design) if lam0_grid is None else list(lam0_grid)
    zmax = lambda_max(design)
    best = None
    path = []
    for a in a_grid:
        for lam0 in lam0_grid:
            if lam_grid is None:
                lams = geometric_grid(_sica_zero_level(zmax, lam0, a), ratio, n_lambda)
            else:
                lams = np.sort(np.asarray(lam_grid, dtype=float))[::-1]
            warm = None
            for lam in lams:
                pen = L1PlusSICA(float(lam0), float(lam), float(a))
                f = fit(design, pen, opts, warm_start=warm)
                warm = f.coef
                score = bic(rss(f), f.df, n)
                path.append((pen, score, f.df, f.converged))
                if f.converged:
                    key = (score, f.df, lam)
                    if best is None or key < best[0]:
                        best = (key, pen, f)
                if f.df > max_df:
                    break
    if best is None:
        raise SelectionError("no fit on the BIC grid converged")
    return best[1], best[2]


def fold_assignment(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Seeded random permutation cut into ``folds`` contiguous blocks."""
    if not 2 <= folds <= n:
        raise ValueError(f"folds must lie in [2, n={n}], got {folds}")
    perm = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed))).permutation(n)
    return [np.sort(b) for b in np.array_split(perm, folds)]


def _make_penalty(family: str, lam: float, alpha: float) -> PenaltySpec:
    if family == "lasso":
        return Lasso(float(lam))
    if family == "enet":
        return ElasticNet(float(lam), alpha)
    raise ValueError("cross-validation supports 'lasso' and 'enet'")


def tune_cv(design: AugmentedDesign, family: str = "lasso", lam_grid: Sequence[float] | None = None,
            folds: int = 5, seed: int = 0, alpha: float = 0.5, n_lambda: int = 50,
            ratio: float | None = None, opts: SolverOptions | None = None,
            return_curve: bool = False):
    """K-fold CV of mean squared prediction error over a decreasing ``lam`` path.

    Returns the chosen penalty and the refit on all rows (plus the CV curve
    when ``return_curve``).
    """
    opts = opts or SolverOptions()
    n = design.n
    parts = fold_assignment(n, folds, seed)
    if any(len(p) == 0 for p in parts):
        raise ValueError("a fold has no test rows")
    if lam_grid is None:
        hi = lambda_max(design)
        if family == "enet":
            hi /= max(alpha, 1e-3)
        if ratio is None:
            ratio = 0.01 if design.q > n else 1e-4
        lams = geometric_grid(hi, ratio, n_lambda)
    else:
        lams = np.sort(np.asarray(lam_grid, dtype=float))[::-1]
    err = np.zeros(lams.size)
    all_rows = np.arange(n)
    for test_rows in parts:
        train_rows = np.setdiff1d(all_rows, test_rows)
        sub = design.subset(train_rows)
        z_test = design.z[test_rows] + design.col_means
        y_test = design.y_centered[test_rows] + design.y_mean
        warm = None
        for i, lam in enumerate(lams):
            f = fit(sub, _make_penalty(family, lam, alpha), opts, warm_start=warm)
            warm = f.coef
            pred = f.intercept + z_test @ f.coef
            err[i] += float(((y_test - pred) ** 2).sum())
    err /= n
    best = int(np.argmin(err))
    warm = None
    for lam in lams[:best + 1]:
        final = fit(design, _make_penalty(family, lam, alpha), opts, warm_start=warm)
        warm = final.coef
    pen = _make_penalty(family, lams[best], alpha)
    if return_curve:
        return pen, final, (lams, err)
    return pen, final


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Metrics:
    pe: float
    fp: int
    fn: int
    fs: int

    def to_dict(self):
        return {"pe": self.pe, "fp": self.fp, "fn": self.fn, "fs": self.fs}


def support_metrics(theta_hat: Mapping, theta_true: Mapping) -> tuple[int, int, int]:
    """(FP, FN, FS) between two sparse coefficient maps keyed alike."""
    est = {k for k, v in theta_hat.items() if v != 0}
    tru = {k for k, v in theta_true.items() if v != 0}
    fp = len(est - tru)
    fn = len(tru - est)
    fs = sum(1 for k in est | tru
             if np.sign(theta_hat.get(k, 0.0)) != np.sign(theta_true.get(k, 0.0)))
    return fp, fn, fs


def evaluate(fit_: FitResult, truth: TrueModel, test: Dataset) -> Metrics:
    """Test-set mean squared prediction error and support recovery counts."""
    pred = fit_.predict(test.x)
    pe = float(np.mean((test.y - pred) ** 2))
    fp, fn, fs = support_metrics(fit_.theta, truth.coefficients())
    return Metrics(pe, fp, fn, fs)
