"""Penalty families and their exact univariate proximal maps.

The coordinate problem solved for every penalty is

    argmin_t  (c / 2) (t - z)^2 + pen(|t|)

with ``pen`` one of

* Lasso:        ``lam0 * t``
* elastic net:  ``lam * (alpha * t + (1 - alpha) * t^2 / 2)``
* L1 + SICA:    ``lam0 * t + lam * (a + 1) * t / (a + t)``
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

LASSO = 0
ENET = 1
SICA = 2


@dataclass(frozen=True)
class Lasso:
    lam0: float

    def __post_init__(self):
        _check_nonneg(lam0=self.lam0)

    @property
    def code(self):
        return LASSO, self.lam0, 0.0, 1.0, 1.0

    def to_dict(self):
        return {"family": "lasso", "lam0": self.lam0}


@dataclass(frozen=True)
class ElasticNet:
    lam: float
    alpha: float = 0.5

    def __post_init__(self):
        _check_nonneg(lam=self.lam)
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")

    @property
    def code(self):
        return ENET, 0.0, self.lam, self.alpha, 1.0

    def to_dict(self):
        return {"family": "enet", "lam": self.lam, "alpha": self.alpha}


@dataclass(frozen=True)
class L1PlusSICA:
    lam0: float
    lam: float
    a: float = 0.5

    def __post_init__(self):
        _check_nonneg(lam0=self.lam0, lam=self.lam)
        if not (self.a > 0 and math.isfinite(self.a)):
            raise ValueError("SICA shape a must be positive")

    @property
    def code(self):
        return SICA, self.lam0, self.lam, 1.0, self.a

    def to_dict(self):
        return {"family": "l1sica", "lam0": self.lam0, "lam": self.lam, "a": self.a}


PenaltySpec = Lasso | ElasticNet | L1PlusSICA


def penalty_from_dict(d: dict) -> PenaltySpec:
    fam = d["family"]
    if fam == "lasso":
        return Lasso(d["lam0"])
    if fam == "enet":
        return ElasticNet(d["lam"], d.get("alpha", 0.5))
    if fam == "l1sica":
        return L1PlusSICA(d["lam0"], d["lam"], d.get("a", 0.5))
    raise ValueError(f"unknown penalty family {fam!r}")


def _check_nonneg(**kw):
    for k, v in kw.items():
        if not (v >= 0 and math.isfinite(v)):
            raise ValueError(f"{k} must be finite and nonnegative, got {v}")


# ---------------------------------------------------------------------------
# Scalar kernels (shared by the coordinate-descent solver)
# ---------------------------------------------------------------------------

@njit(cache=True)
def penalty_value(t, kind, lam0, lam, alpha, a):
    t = abs(t)
    if kind == LASSO:
        return lam0 * t
    if kind == ENET:
        return lam * (alpha * t + 0.5 * (1.0 - alpha) * t * t)
    return lam0 * t + lam * (a + 1.0) * t / (a + t)


@njit(cache=True)
def _sica_positive(u, c, lam0, lam, a):
    # minimiser over t >= 0 of (c/2)(t-u)^2 + lam0 t + lam (a+1) t/(a+t), u >= 0.
    # g(t) = c(t-u) + lam0 + lam a (a+1)/(a+t)^2 is convex on t > 0, so the only
    # interior local minimum is its larger root, which lies below u.
    k = lam * a * (a + 1.0)
    tm = (2.0 * k / c) ** (1.0 / 3.0) - a
    lo = tm if tm > 0.0 else 0.0
    g_lo = c * (lo - u) + lam0 + k / ((a + lo) * (a + lo))
    if g_lo >= 0.0:
        return 0.0
    t = u
    for _ in range(200):
        g = c * (t - u) + lam0 + k / ((a + t) * (a + t))
        dg = c - 2.0 * k / ((a + t) * (a + t) * (a + t))
        step = g / dg
        t_new = t - step
        if t_new < lo:
            t_new = 0.5 * (t + lo)
        if abs(t_new - t) <= 1e-15 * (1.0 + t):
            t = t_new
            break
        t = t_new
    h_t = 0.5 * c * (t - u) * (t - u) + lam0 * t + lam * (a + 1.0) * t / (a + t)
    h_0 = 0.5 * c * u * u
    if h_t < h_0:
        return t
    return 0.0


@njit(cache=True)
def prox(z, c, kind, lam0, lam, alpha, a):
    """Exact minimiser of ``(c/2)(t - z)^2 + pen(|t|)``."""
    u = abs(z)
    s = 1.0 if z >= 0.0 else -1.0
    if kind == LASSO:
        v = u - lam0 / c
        return s * v if v > 0.0 else 0.0
    if kind == ENET:
        v = c * u - lam * alpha
        return s * v / (c + lam * (1.0 - alpha)) if v > 0.0 else 0.0
    if lam == 0.0:
        v = u - lam0 / c
        return s * v if v > 0.0 else 0.0
    return s * _sica_positive(u, c, lam0, lam, a)


def univariate_prox(z: float, c: float, pen: PenaltySpec) -> float:
    """Argmin over t of ``(c/2)(t - z)^2 + pen(|t|)`` for a single coordinate."""
    if not c > 0:
        raise ValueError("curvature c must be positive")
    kind, lam0, lam, alpha, a = pen.code
    return float(prox(float(z), float(c), kind, lam0, lam, alpha, a))


def penalty(t, pen: PenaltySpec) -> np.ndarray:
    """Vectorised penalty value ``pen(|t|)``."""
    kind, lam0, lam, alpha, a = pen.code
    t = np.abs(np.asarray(t, dtype=float))
    if kind == LASSO:
        return lam0 * t
    if kind == ENET:
        return lam * (alpha * t + 0.5 * (1 - alpha) * t * t)
    return lam0 * t + lam * (a + 1) * t / (a + t)


def sica(t, lam: float, a: float) -> np.ndarray:
    """SICA penalty ``lam (a + 1) t / (a + t)`` for ``t >= 0``."""
    t = np.abs(np.asarray(t, dtype=float))
    return lam * (a + 1) * t / (a + t)


def hard_threshold_penalty(t, lam: float) -> np.ndarray:
    """``(lam^2 - (lam - t)_+^2) / 2``."""
    t = np.abs(np.asarray(t, dtype=float))
    return 0.5 * (lam * lam - np.maximum(lam - t, 0.0) ** 2)
