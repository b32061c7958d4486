"""Augmented design over a reduced feature set.

Interaction columns are products of the (standardized) covariate columns.
Every column is de-meaned afterwards, the response is centred, and the
scale ``D_mm = ||z_m|| / sqrt(n)`` turns the design into one whose columns
all have norm ``sqrt(n)``; penalties act on ``theta* = D theta``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (DataError, Dataset, FeatureId, Interaction, Main, Standardization,
                   check_standardized, feature_key, format_float, sort_features)


def feature_matrix(x: np.ndarray, features: Sequence[FeatureId]) -> np.ndarray:
    """Raw (not centred) feature columns evaluated on rows of ``x``."""
    out = np.empty((x.shape[0], len(features)), order="F")
    for m, f in enumerate(features):
        if isinstance(f, Main):
            out[:, m] = x[:, f.j]
        else:
            out[:, m] = x[:, f.k] * x[:, f.l]
    return out


@dataclass(frozen=True, eq=False)
class AugmentedDesign:
    """De-meaned feature columns ``z`` with their scale vector.

    ``col_means`` and ``y_mean`` are the centring constants; ``transform``
    maps raw covariates to the coordinates the features were built in.
    """

    features: tuple[FeatureId, ...]
    z: np.ndarray
    d_scale: np.ndarray
    y_centered: np.ndarray
    col_means: np.ndarray
    y_mean: float
    n_covariates: int
    transform: Standardization

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def q(self) -> int:
        return self.z.shape[1]

    @cached_property
    def w(self) -> np.ndarray:
        """Rescaled columns ``z D^{-1}`` (each of norm sqrt(n)), Fortran order."""
        return np.asfortranarray(self.z / self.d_scale)

    def index(self) -> dict[FeatureId, int]:
        return {f: m for m, f in enumerate(self.features)}

    def subset(self, rows) -> "AugmentedDesign":
        """Design restricted to ``rows``, re-centred and re-scaled on them."""
        rows = np.asarray(rows)
        raw = self.z[rows] + self.col_means
        y = self.y_centered[rows] + self.y_mean
        return _assemble(self.features, raw, y, self.n_covariates, self.transform)

    def predict_raw(self, x_raw: np.ndarray, theta: np.ndarray, intercept: float) -> np.ndarray:
        """Predictions for raw covariate rows given coefficients on this design."""
        feats = feature_matrix(self.transform.apply(x_raw), self.features)
        return intercept + feats @ theta

    def to_csv(self, path=None) -> str:
        """Debug dump of ``z`` with feature names as the header."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f.name for f in self.features])
        for row in self.z:
            w.writerow([format_float(v) for v in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def _assemble(features, raw, y, n_covariates, transform) -> AugmentedDesign:
    n = raw.shape[0]
    means = raw.mean(axis=0)
    z = np.asfortranarray(raw - means)
    d_scale = np.sqrt((z * z).sum(axis=0) / n)
    bad = np.flatnonzero(~(d_scale > 0))
    if bad.size:
        raise DataError(f"feature {features[bad[0]].name} has a zero-norm column")
    y_mean = float(y.mean())
    return AugmentedDesign(tuple(features), z, d_scale, y - y_mean, means, y_mean,
                           n_covariates, transform)


def build_design(d: Dataset, features: Sequence[FeatureId],
                 require_standardized: bool = True) -> AugmentedDesign:
    """Assemble the reduced augmented design.

    Columns are placed in canonical order (main effects ascending, then
    interaction pairs lexicographically) regardless of the input order.
    """
    features = list(features)
    if not features:
        raise ValueError("feature list is empty")
    if len(set(features)) != len(features):
        raise ValueError("duplicate features")
    for f in features:
        if max(f.columns()) >= d.p:
            raise ValueError(f"feature {f.name} refers to a covariate beyond p={d.p}")
    if require_standardized:
        check_standardized(d)
    features = sort_features(features)
    raw = feature_matrix(d.x, features)
    return _assemble(features, raw, d.y, d.p, d.transform)


def rescale_to_theta_star(theta, design: AugmentedDesign) -> np.ndarray:
    """``theta* = D theta``."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != design.d_scale.shape:
        raise ValueError("coefficient vector does not match the design")
    return design.d_scale * theta


def rescale_from_theta_star(theta_star, design: AugmentedDesign) -> np.ndarray:
    """``theta = D^{-1} theta*``."""
    theta_star = np.asarray(theta_star, dtype=float)
    if theta_star.shape != design.d_scale.shape:
        raise ValueError("coefficient vector does not match the design")
    return theta_star / design.d_scale


def screened_features(mains: Sequence[int], pairs: Sequence[tuple[int, int]]) -> list[FeatureId]:
    """Feature list for a screening outcome, in canonical order."""
    feats = [Main(j) for j in mains] + [Interaction(k, l) for k, l in pairs]
    return sorted(feats, key=feature_key)
