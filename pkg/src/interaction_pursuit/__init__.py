"""Interaction screening and selection for high-dimensional linear models.

Typical use::

    from interaction_pursuit import Dataset, TopD, ip_screen, build_design, tune_bic
    res = ip_screen(data, TopD(37), TopD(37))
    design = build_design(standardize(data)[0], res.features())
    penalty, fit = tune_bic(design)
"""

__version__ = "0.1.0"

from .core import (DataError, Dataset, Interaction, Main, Standardization, TrueModel, interaction,
                   load_csv, parse_feature, save_csv, standardize, true_sets)
from .design import AugmentedDesign, build_design
from .oracle import GaussianSpec, cov_xsq_ysq, isserlis_moment, snr
from .penalties import ElasticNet, L1PlusSICA, Lasso, univariate_prox
from .screening import (ScreeningResult, Threshold, TopD, dcsis_screen, default_budget, ip_screen,
                        iterative_ip, sis_screen)
from .selection import FitResult, Metrics, SolverOptions, evaluate, fit, kkt_check, tune_bic, tune_cv
from .simulation import (ExperimentSpec, SimModel, SummaryTable, builtin_model, generate,
                         named_experiment, rsd, run_experiment)

__all__ = [name for name in dir() if not name.startswith("_")]
