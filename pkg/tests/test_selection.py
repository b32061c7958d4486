import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from interaction_pursuit.core import Dataset, Interaction, Main, TrueModel, standardize
from interaction_pursuit.design import build_design, screened_features
from interaction_pursuit.penalties import ElasticNet, L1PlusSICA, Lasso
from interaction_pursuit.selection import (FitResult, SelectionError, SolverOptions, check_monotone,
                                           evaluate, fit, fold_assignment, kkt_check, lambda_max, ols,
                                           stationarity_violation, support_metrics, tune_bic, tune_cv)


def orthonormal_design(n=50, q=4, seed=0, beta=None, noise=0.3):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, q))
    a -= a.mean(0)
    qmat, _ = np.linalg.qr(a)
    x = math.sqrt(n) * qmat
    beta = np.arange(1, q + 1, dtype=float) if beta is None else np.asarray(beta, float)
    y = x @ beta + noise * rng.standard_normal(n)
    d = Dataset(x, y, standardized=True)
    return build_design(d, [Main(j) for j in range(q)], require_standardized=False)


def soft(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0)


def test_orthonormal_lasso_is_soft_threshold():
    des = orthonormal_design()
    lam0 = 0.7
    f = fit(des, Lasso(lam0), SolverOptions(tolerance=1e-12))
    expected = soft(des.w.T @ des.y_centered / des.n, lam0)
    np.testing.assert_allclose(f.coef * des.d_scale, expected, atol=1e-8)
    assert f.converged and f.kkt_max_violation <= 1e-10
    assert kkt_check(des, Lasso(lam0), f.coef) <= 1e-10


def test_full_shrinkage_above_lambda_max():
    des = orthonormal_design(seed=3)
    lam = lambda_max(des) * 1.0001
    f = fit(des, Lasso(lam))
    assert f.theta == {} and np.all(f.coef == 0)
    assert kkt_check(des, Lasso(lam), np.zeros(des.q)) == 0.0
    assert f.intercept == pytest.approx(des.y_mean)


def test_kkt_detects_perturbation():
    des = orthonormal_design(seed=4)
    pen = Lasso(0.5)
    f = fit(des, pen, SolverOptions(tolerance=1e-12))
    m = int(np.flatnonzero(f.coef)[0])
    bumped = f.coef.copy()
    bumped[m] += 0.1
    v = kkt_check(des, pen, bumped)
    expected = 0.1 * des.d_scale[m] * (des.w[:, m] @ des.w[:, m]) / des.n
    assert v == pytest.approx(expected, rel=1e-6)
    assert v > 1e-6


def test_kkt_rejects_sica():
    des = orthonormal_design()
    with pytest.raises(SelectionError):
        kkt_check(des, L1PlusSICA(0.1, 0.5), np.zeros(des.q))


def _lasso_brute_force(w, y, lam):
    n, q = w.shape
    best = (math.inf, None)
    for signs in itertools.product((-1, 0, 1), repeat=q):
        s = np.array(signs, float)
        act = np.flatnonzero(s)
        theta = np.zeros(q)
        if act.size:
            g = w[:, act].T @ w[:, act] / n
            rhs = w[:, act].T @ y / n - lam * s[act]
            try:
                sol = np.linalg.solve(g, rhs)
            except np.linalg.LinAlgError:
                continue
            if np.any(np.sign(sol) != s[act]):
                continue
            theta[act] = sol
        obj = 0.5 * np.sum((y - w @ theta) ** 2) / n + lam * np.abs(theta).sum()
        if obj < best[0]:
            best = (obj, theta)
    return best[1]


def test_lasso_matches_sign_pattern_enumeration():
    rng = np.random.default_rng(99)
    for _ in range(200):
        n = int(rng.integers(8, 30))
        q = int(rng.integers(1, 4))
        x = rng.standard_normal((n, 3)) @ rng.standard_normal((3, 3))
        y = x @ rng.standard_normal(3) + rng.standard_normal(n)
        s, _ = standardize(Dataset(x, y))
        feats = [Main(0), Main(1), Interaction(0, 2)][:q]
        des = build_design(s, feats)
        lam = rng.uniform(0.01, 1.0) * lambda_max(des)
        f = fit(des, Lasso(lam), SolverOptions(tolerance=1e-12))
        ref = _lasso_brute_force(des.w, des.y_centered, lam)
        np.testing.assert_allclose(f.coef * des.d_scale, ref, atol=1e-6)


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1))
def test_lasso_scaling_homogeneity(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((40, 5))
    y = x[:, 0] - 2 * x[:, 3] * x[:, 4] + rng.standard_normal(40)
    s, _ = standardize(Dataset(x, y))
    feats = screened_features(range(5), [(0, 1), (3, 4)])
    d1 = build_design(s, feats)
    d2 = build_design(s.with_response(2 * s.y), feats)
    lam = 0.2 * lambda_max(d1)
    opts = SolverOptions(tolerance=1e-13, max_iterations=100_000)
    f1 = fit(d1, Lasso(lam), opts)
    f2 = fit(d2, Lasso(2 * lam), opts)
    np.testing.assert_allclose(f2.coef, 2 * f1.coef, atol=1e-8)


def test_enet_kkt_and_warm_start():
    des = orthonormal_design(seed=8, q=6)
    pen = ElasticNet(0.8, 0.3)
    f = fit(des, pen, SolverOptions(tolerance=1e-12))
    assert f.converged and kkt_check(des, pen, f.coef) <= 1e-6
    g = fit(des, pen, SolverOptions(tolerance=1e-12), warm_start=f.coef)
    np.testing.assert_allclose(g.coef, f.coef, atol=1e-10)
    assert g.iterations <= 2


def test_sica_fit_is_coordinatewise_stationary():
    rng = np.random.default_rng(12)
    x = rng.standard_normal((80, 6))
    y = 3 * x[:, 0] * x[:, 1] + 2 * x[:, 2] + rng.standard_normal(80)
    s, _ = standardize(Dataset(x, y))
    des = build_design(s, screened_features(range(6), [(0, 1), (2, 3), (4, 5)]))
    pen = L1PlusSICA(0.05, 0.5, 0.5)
    f = fit(des, pen, SolverOptions(tolerance=1e-12))
    assert f.converged
    assert stationarity_violation(des, pen, f.coef) <= 1e-9
    assert set(f.theta) >= {Interaction(0, 1), Main(2)}


def test_non_convergence_is_reported():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((40, 1)) + 0.1 * rng.standard_normal((40, 8))
    s, _ = standardize(Dataset(x, x @ rng.standard_normal(8) + rng.standard_normal(40)))
    des = build_design(s, [Main(j) for j in range(8)])
    f = fit(des, Lasso(1e-4), SolverOptions(max_iterations=2))
    assert not f.converged and f.iterations <= 2
    assert len(f.objective_history) == f.iterations
    assert fit(des, Lasso(1e-4)).converged


def test_check_monotone():
    check_monotone([3.0, 2.0, 2.0, 1.0])
    with pytest.raises(AssertionError):
        check_monotone([3.0, 2.0, 2.5])


def test_fit_json_format():
    des = orthonormal_design()
    f = fit(des, Lasso(0.5))
    d = json.loads(f.to_json())
    assert set(d) >= {"intercept", "coefficients", "objective", "converged", "kkt_max_violation"}
    assert {c["feature"] for c in d["coefficients"]} <= {"x1", "x2", "x3", "x4"}
    sica = fit(des, L1PlusSICA(0.1, 0.5))
    assert json.loads(sica.to_json())["kkt_max_violation"] is None


def test_support_metrics_definition():
    est = {Main(0): 1.0, Main(1): -1.0}
    tru = {Main(0): 1.0}
    assert support_metrics(est, tru) == (1, 0, 1)
    assert support_metrics(tru, tru) == (0, 0, 0)
    assert support_metrics({Main(0): -2.0}, tru) == (0, 0, 1)


def test_evaluate_perfect_noiseless():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((50, 4))
    truth = TrueModel(1.0, {0: 2.0}, {(1, 2): 1.5})
    d = Dataset(x, truth.signal(x))
    des = build_design(d, list(truth.coefficients()), require_standardized=False)
    f = ols(des)
    xt = rng.standard_normal((100, 4))
    m = evaluate(f, truth, Dataset(xt, truth.signal(xt)))
    assert m.pe < 1e-20 and (m.fp, m.fn, m.fs) == (0, 0, 0)


def _bic_design(y, x, pairs=True):
    s, _ = standardize(Dataset(x, y))
    p = x.shape[1]
    return build_design(s, screened_features(range(p), list(itertools.combinations(range(p), 2)) if pairs else []))


def test_bic_grid_of_size_one_returns_that_fit():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((60, 4))
    des = _bic_design(x[:, 0] + rng.standard_normal(60), x)
    pen, f = tune_bic(des, lam0_grid=[0.1], lam_grid=[0.3])
    assert pen == L1PlusSICA(0.1, 0.3, 0.5)
    g = fit(des, pen)
    np.testing.assert_allclose(f.coef, g.coef)


@pytest.mark.parametrize("pairs", [False, True])
def test_bic_recovers_single_main_effect(pairs):
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((200, 10))
        des = _bic_design(2 * x[:, 0] + 0.1 * rng.standard_normal(200), x, pairs)
        _, f = tune_bic(des)
        hits += set(f.theta) == {Main(0)}
    assert hits >= 95


def test_bic_null_model_is_empty():
    # ten-column design; with all 45 pairs added the empty-model rate is near 0.89
    empty = 0
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        x = rng.standard_normal((200, 10))
        des = _bic_design(rng.standard_normal(200), x, pairs=False)
        _, f = tune_bic(des)
        empty += f.df == 0
    assert empty >= 90


def test_fold_assignment():
    a = fold_assignment(23, 5, seed=3)
    b = fold_assignment(23, 5, seed=3)
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    assert sorted(np.concatenate(a).tolist()) == list(range(23))
    assert {len(f) for f in a} <= {4, 5}
    with pytest.raises(ValueError):
        fold_assignment(10, 1, 0)
    with pytest.raises(ValueError):
        fold_assignment(10, 11, 0)


def test_cv_strong_signal_and_determinism():
    des = orthonormal_design(n=100, q=8, seed=5, beta=[3, 0, 0, -3, 0, 2, 0, 0], noise=0.5)
    pen1, f1 = tune_cv(des, "lasso", folds=5, seed=11)
    pen2, f2 = tune_cv(des, "lasso", folds=5, seed=11)
    assert pen1 == pen2 and np.array_equal(f1.coef, f2.coef)
    assert {Main(0), Main(3), Main(5)} <= set(f1.theta)
    pen, f = tune_cv(des, "lasso", lam_grid=[0.2, 0.2, 0.2], folds=4, seed=0)
    assert pen == Lasso(0.2)
    pen, f = tune_cv(des, "enet", folds=3, seed=0, alpha=0.5)
    assert isinstance(pen, ElasticNet) and {Main(0), Main(3), Main(5)} <= set(f.theta)
    with pytest.raises(ValueError):
        tune_cv(des, "l1sica")
