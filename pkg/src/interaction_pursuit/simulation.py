"""Simulation models, the Monte Carlo driver and summary tables.

Randomness: replication ``r`` of stream ``s`` uses
``SeedSequence(seed, spawn_key=(r, s))`` with a Philox generator, so every
replication is reproducible on its own and independent of worker count,
method list and scheduling.
"""
from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .core import Dataset, FeatureId, Interaction, Main, TrueModel, format_float, standardize
from .design import build_design
from .oracle import (AR1, Covariance, Equicorr, GaussianSpec, covariance_from_dict,
                     rng_from_seed, sample_covariates)
from .screening import TopD, default_budget, dcsis_screen, ip_screen, sis_screen, build_interactions
from .selection import SolverOptions, evaluate, ols, tune_bic, tune_cv

STREAM_COVARIATES = 0
STREAM_PERTURBATION = 1
STREAM_NOISE = 2
STREAM_TEST_COVARIATES = 3
STREAM_TEST_PERTURBATION = 4
STREAM_TEST_NOISE = 5
STREAM_TUNING = 6


# ---------------------------------------------------------------------------
# Model description
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Normal:
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def variance(self) -> float:
        return self.sigma ** 2

    def draw(self, rng, n):
        return self.sigma * rng.standard_normal(n)

    def to_dict(self):
        return {"law": "normal", "sigma": self.sigma}


@dataclass(frozen=True)
class StudentT:
    df: float

    def __post_init__(self):
        if not self.df > 2:
            raise ValueError("df must exceed 2")

    def variance(self) -> float:
        return self.df / (self.df - 2)

    def draw(self, rng, n):
        return rng.standard_t(self.df, n)

    def to_dict(self):
        return {"law": "t", "df": self.df}


@dataclass(frozen=True)
class UniformAdd:
    """Adds independent ``U[-h, h]`` noise to every covariate."""

    half_width: float

    def __post_init__(self):
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")

    def to_dict(self):
        return {"kind": "uniform_add", "half_width": self.half_width}


ErrorLaw = Normal | StudentT


def error_from_dict(d: dict) -> ErrorLaw:
    if d["law"] == "normal":
        return Normal(float(d["sigma"]))
    if d["law"] == "t":
        return StudentT(float(d["df"]))
    raise ValueError(f"unknown error law {d['law']!r}")


@dataclass(frozen=True)
class SimModel:
    name: str
    covariance: Covariance
    truth: TrueModel
    error: ErrorLaw
    perturbation: UniformAdd | None = None

    def targets(self) -> list[FeatureId]:
        """Important features in the order the retention tables list them."""
        feats = list(self.truth.coefficients())
        mains = [f for f in feats if isinstance(f, Main)]
        return mains + [f for f in feats if isinstance(f, Interaction)]

    def gaussian_spec(self) -> GaussianSpec:
        if self.perturbation is not None:
            raise ValueError("perturbed covariates are not Gaussian")
        return GaussianSpec(self.covariance, self.truth, self.error.variance())

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "covariance": self.covariance.to_dict(),
            "truth": self.truth.to_dict(),
            "error": self.error.to_dict(),
            "perturbation": None if self.perturbation is None else self.perturbation.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimModel":
        pert = d.get("perturbation")
        return cls(d["name"], covariance_from_dict(d["covariance"]), TrueModel.from_dict(d["truth"]),
                   error_from_dict(d["error"]),
                   None if pert is None else UniformAdd(float(pert["half_width"])))


_PATTERNS = {
    # 0-based indices: X1 -> 0
    "M1": ({0: 2.0, 4: 2.0}, {(0, 4): 3.0}),
    "M2": ({0: 2.0, 9: 2.0}, {(0, 4): 3.0}),
    "M3": ({9: 2.0, 14: 2.0}, {(0, 4): 3.0}),
    "M4": ({}, {(0, 4): 3.0, (9, 14): 3.0}),
    "M5": ({0: 1.0, 4: 1.0, 9: 1.0, 14: 1.0}, {}),
}
# error sd by noise level: 0 is the main setting, 1-3 the lower-SNR variants
_SIGMA = {
    "M1": (2.5, 3.0, 3.5, 4.0),
    "M2": (2.0, 2.5, 3.0, 3.5),
    "M3": (2.0, 2.5, 3.0, 3.5),
    "M4": (1.5, 2.0, 2.5, 3.0),
}
_T_DF = {"M1": 3, "M2": 4, "M3": 4, "M4": 8}
MODEL_NAMES = ("M1", "M2", "M3", "M4", "M5", "M3p", "M4p")


def builtin_model(name: str, example: int = 1, rho: float = 0.0, noise_level: int = 0) -> SimModel:
    """Named generative model.

    ``example=2`` switches to t errors with uniform covariate perturbation
    (for M5: t(3) errors only).  ``M3p``/``M4p`` use an equicorrelated
    covariance with off-diagonal 0.2 and ignore ``rho``.
    """
    if name not in MODEL_NAMES:
        raise ValueError(f"unknown model {name!r}; expected one of {', '.join(MODEL_NAMES)}")
    if example not in (1, 2):
        raise ValueError("example must be 1 or 2")
    base = name[:2]
    beta, gamma = _PATTERNS[base]
    truth = TrueModel(0.0, beta, gamma)
    cov = Equicorr(0.2) if name.endswith("p") else AR1(rho)
    if base == "M5":
        if noise_level:
            raise ValueError("M5 has a single noise level")
        err = Normal(2.0) if example == 1 else StudentT(3)
        return SimModel(name, cov, truth, err)
    if example == 2:
        if noise_level:
            raise ValueError("lower-SNR variants exist for the Gaussian example only")
        return SimModel(name, cov, truth, StudentT(_T_DF[base]), UniformAdd(0.5))
    if not 0 <= noise_level <= 3:
        raise ValueError("noise_level must be 0..3")
    return SimModel(name, cov, truth, Normal(_SIGMA[base][noise_level]))


# ---------------------------------------------------------------------------
# Data generation
# ---------------------------------------------------------------------------

def stream(seed: int, replication: int, stream_id: int) -> np.random.Generator:
    return rng_from_seed(np.random.SeedSequence(seed, spawn_key=(replication, stream_id)))


@dataclass
class GeneratedData:
    train: Dataset
    test: Dataset | None
    truth: TrueModel
    noise: np.ndarray

    def __iter__(self) -> Iterator:
        return iter((self.train, self.test, self.truth))


def _draw(model: SimModel, n, p, seed, rep, s_cov, s_pert, s_noise, noiseless):
    x = sample_covariates(model.covariance, n, p, stream(seed, rep, s_cov))
    if model.perturbation is not None:
        h = model.perturbation.half_width
        x += stream(seed, rep, s_pert).uniform(-h, h, size=(n, p))
    eps = np.zeros(n) if noiseless else model.error.draw(stream(seed, rep, s_noise), n)
    return x, eps


def generate(model: SimModel, n: int, p: int, seed: int, replication: int = 0,
             test_size: int = 10_000, noiseless: bool = False) -> GeneratedData:
    """Training sample of size ``n`` and an independent test sample.

    ``noiseless=True`` drops the error term in both samples.
    """
    need = model.truth.max_index() + 1
    if p < need:
        raise ValueError(f"model {model.name} needs p >= {need}")
    x, eps = _draw(model, n, p, seed, replication, STREAM_COVARIATES, STREAM_PERTURBATION,
                   STREAM_NOISE, noiseless)
    train = Dataset(x, model.truth.signal(x) + eps)
    test = None
    if test_size:
        xt, et = _draw(model, test_size, p, seed, replication, STREAM_TEST_COVARIATES,
                       STREAM_TEST_PERTURBATION, STREAM_TEST_NOISE, noiseless)
        test = Dataset(xt, model.truth.signal(xt) + et)
    return GeneratedData(train, test, model.truth, eps)


def draw_noise(model: SimModel, n: int, seed: int, replication: int = 0) -> np.ndarray:
    """The training error vector ``generate`` uses for this replication."""
    return model.error.draw(stream(seed, replication, STREAM_NOISE), n)


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

def quantile(values: Sequence[float], q: float) -> float:
    """Linear interpolation between order statistics at position ``1 + (n-1) q``."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("no values")
    return float(np.quantile(v, q, method="linear"))


def rsd(values: Sequence[float]) -> float:
    """Robust standard deviation ``IQR / 1.34``."""
    if len(values) < 2:
        raise ValueError("rsd needs at least 2 values")
    return (quantile(values, 0.75) - quantile(values, 0.25)) / 1.34


def median(values: Sequence[float]) -> float:
    return quantile(values, 0.5)


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

SCREEN_METHODS = ("IP", "SIS2", "DC-SIS2")
SELECT_METHODS = ("IP-Lasso", "IP-L1+SICA", "SIS2-Lasso", "SIS2-L1+SICA",
                  "DC-SIS2-Lasso", "DC-SIS2-L1+SICA", "Oracle")


@dataclass(frozen=True)
class ExperimentSpec:
    """One Monte Carlo experiment over a list of models sharing ``(n, p)``."""

    name: str
    kind: str
    models: tuple[SimModel, ...]
    n: int
    p: int
    replications: int
    seed: int
    methods: tuple[str, ...]
    budget_factor: float = 1.0
    test_size: int = 10_000
    cv_folds: int = 5
    a_grid: tuple[float, ...] = (0.5,)
    n_lambda: int = 30

    def __post_init__(self):
        if self.kind not in ("screening", "selection"):
            raise ValueError("kind must be 'screening' or 'selection'")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if not self.methods:
            raise ValueError("methods must be non-empty")
        allowed = SCREEN_METHODS if self.kind == "screening" else SELECT_METHODS
        bad = [m for m in self.methods if m not in allowed]
        if bad:
            raise ValueError(f"unknown {self.kind} method(s) {bad}; allowed: {', '.join(allowed)}")
        if not self.models:
            raise ValueError("models must be non-empty")
        if self.n < 4:
            raise ValueError("n must be at least 4")

    @property
    def budget(self) -> int:
        return default_budget(self.n, self.budget_factor)

    def to_dict(self) -> dict:
        return {
            "name": self.name, "kind": self.kind,
            "models": [m.to_dict() for m in self.models],
            "n": self.n, "p": self.p, "replications": self.replications, "seed": self.seed,
            "methods": list(self.methods), "budget_factor": self.budget_factor,
            "test_size": self.test_size, "cv_folds": self.cv_folds,
            "a_grid": list(self.a_grid), "n_lambda": self.n_lambda,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        return cls(
            name=d["name"], kind=d["kind"],
            models=tuple(SimModel.from_dict(m) for m in d["models"]),
            n=int(d["n"]), p=int(d["p"]), replications=int(d["replications"]),
            seed=int(d["seed"]), methods=tuple(d["methods"]),
            budget_factor=float(d.get("budget_factor", 1.0)),
            test_size=int(d.get("test_size", 10_000)), cv_folds=int(d.get("cv_folds", 5)),
            a_grid=tuple(float(a) for a in d.get("a_grid", (0.5,))),
            n_lambda=int(d.get("n_lambda", 30)),
        )


def _screened_sets(method: str, train: Dataset, d: int):
    """(mains, pairs) retained by a screening method with the matched budget."""
    ip = ip_screen(train, TopD(d), TopD(d))
    if method == "IP":
        return list(ip.m_hat), list(ip.i_hat)
    size = min(len(ip.m_hat), train.p)
    keep = sis_screen(train, TopD(size)) if method == "SIS2" else dcsis_screen(train, TopD(size))
    return list(keep), list(build_interactions(keep))


def _screening_replication(spec: ExperimentSpec, model_idx: int, rep: int) -> dict:
    model = spec.models[model_idx]
    data = generate(model, spec.n, spec.p, spec.seed, rep, test_size=0)
    targets = model.targets()
    out = {}
    for method in spec.methods:
        mains, pairs = _screened_sets(method, data.train, spec.budget)
        mset, pset = set(mains), set(pairs)
        hits = [int(t.j in mset) if isinstance(t, Main) else int((t.k, t.l) in pset) for t in targets]
        out[method] = {"hits": hits, "all": int(all(hits)), "size": len(mset) + len(pset)}
    return out


def _tuning_seed(spec: ExperimentSpec, rep: int) -> int:
    ss = np.random.SeedSequence(spec.seed, spawn_key=(rep, STREAM_TUNING))
    return int(ss.generate_state(1)[0])


def _selection_replication(spec: ExperimentSpec, model_idx: int, rep: int) -> dict:
    model = spec.models[model_idx]
    data = generate(model, spec.n, spec.p, spec.seed, rep, test_size=spec.test_size)
    std, _ = standardize(data.train)
    d = spec.budget
    screens: dict[str, tuple] = {}
    out = {}
    opts = SolverOptions()
    cv_seed = _tuning_seed(spec, rep)
    for method in spec.methods:
        rec: dict = {}
        try:
            if method == "Oracle":
                feats = list(data.truth.coefficients())
                design = build_design(data.train, feats, require_standardized=False)
                fit_ = ols(design)
            else:
                scr, pen = method.rsplit("-", 1)
                if scr not in screens:
                    screens[scr] = _screened_sets(scr, std, d)
                mains, pairs = screens[scr]
                feats = [Main(j) for j in mains] + [Interaction(k, l) for k, l in pairs]
                design = build_design(std, feats)
                if pen == "Lasso":
                    _, fit_ = tune_cv(design, "lasso", folds=spec.cv_folds, seed=cv_seed, opts=opts)
                    rec["kkt"] = fit_.kkt_max_violation
                else:
                    _, fit_ = tune_bic(design, a_grid=spec.a_grid, n_lambda=spec.n_lambda, opts=opts)
            m = evaluate(fit_, data.truth, data.test)
            rec.update(m.to_dict())
            rec["converged"] = bool(fit_.converged)
            rec["df"] = fit_.df
        except Exception as exc:  # recorded and excluded from the summary
            rec = {"error": f"{type(exc).__name__}: {exc}"}
        out[method] = rec
    return out


def _run_one(args):
    spec_dict, model_idx, rep = args
    spec = ExperimentSpec.from_dict(spec_dict)
    with threadpool_limits(limits=1):
        fn = _screening_replication if spec.kind == "screening" else _selection_replication
        return model_idx, rep, fn(spec, model_idx, rep)


def default_threads() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def run_replications(spec: ExperimentSpec, threads: int | None = None) -> list[tuple[int, int, dict]]:
    """Per-replication records sorted by (model, replication)."""
    tasks = [(spec.to_dict(), mi, r) for mi in range(len(spec.models)) for r in range(spec.replications)]
    threads = default_threads() if threads is None else threads
    if threads < 1:
        raise ValueError("threads must be at least 1")
    if threads == 1 or len(tasks) == 1:
        results = [_run_one(t) for t in tasks]
    else:
        import multiprocessing as mp
        ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else None
        with ProcessPoolExecutor(max_workers=min(threads, len(tasks)), mp_context=ctx) as ex:
            results = list(ex.map(_run_one, tasks, chunksize=1))
    return sorted(results, key=lambda t: (t[0], t[1]))


@dataclass
class SummaryTable:
    kind: str
    columns: list[str]
    rows: list[dict]
    metadata: dict
    records: list = field(default_factory=list, repr=False)
    wall_time: float | None = None

    def value(self, model: str, method: str, column: str):
        for r in self.rows:
            if r["model"] == model and r["method"] == method:
                return r[column]
        raise KeyError((model, method))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "method"] + self.columns)
        for r in self.rows:
            w.writerow([r["model"], r["method"]] + [_fmt(r.get(c)) for c in self.columns])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"kind": self.kind, "columns": self.columns, "rows": self.rows, "metadata": self.metadata}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    def write(self, path, fmt: str = "csv") -> None:
        """Write the table; wall time goes to ``<path>.timing.json`` so the
        table itself stays bit-reproducible."""
        text = self.to_csv() if fmt == "csv" else self.to_json()
        if fmt == "csv":
            meta = json.dumps(self.metadata, sort_keys=True)
            text = "".join(f"# {line}\n" for line in meta.splitlines()) + text
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        if self.wall_time is not None:
            with open(f"{path}.timing.json", "w", encoding="utf-8") as fh:
                json.dump({"wall_time_seconds": self.wall_time}, fh)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return format_float(v)
    return str(v)


def _target_label(f: FeatureId) -> str:
    return f.name.upper().replace(":", "")


def _summarise_screening(spec, records) -> SummaryTable:
    rows = []
    columns: list[str] = []
    for mi, model in enumerate(spec.models):
        labels = [_target_label(t) for t in model.targets()]
        for c in labels + ["All"]:
            if c not in columns:
                columns.append(c)
        recs = [r for (m, _, r) in records if m == mi]
        for method in spec.methods:
            hits = np.array([r[method]["hits"] for r in recs], dtype=float)
            row = {"model": model.name, "method": method}
            for k, lab in enumerate(labels):
                row[lab] = float(hits[:, k].mean())
            row["All"] = float(np.mean([r[method]["all"] for r in recs]))
            row["mean_size"] = float(np.mean([r[method]["size"] for r in recs]))
            rows.append(row)
    return SummaryTable("screening", columns + ["mean_size"], rows, _metadata(spec), records)


def _summarise_selection(spec, records) -> SummaryTable:
    cols = ["pe_median", "pe_rsd", "fp_median", "fp_rsd", "fn_median", "fn_rsd",
            "n_ok", "n_failed", "n_nonconverged", "kkt_max"]
    rows = []
    for mi, model in enumerate(spec.models):
        recs = [r for (m, _, r) in records if m == mi]
        for method in spec.methods:
            ok = [r[method] for r in recs if "error" not in r[method]]
            row = {"model": model.name, "method": method, "n_ok": len(ok),
                   "n_failed": len(recs) - len(ok),
                   "n_nonconverged": sum(1 for r in ok if not r["converged"])}
            for key in ("pe", "fp", "fn"):
                vals = [r[key] for r in ok]
                row[f"{key}_median"] = median(vals) if vals else None
                row[f"{key}_rsd"] = rsd(vals) if len(vals) >= 2 else None
            kkts = [r["kkt"] for r in ok if "kkt" in r and r["converged"]]
            row["kkt_max"] = max(kkts) if kkts else None
            rows.append(row)
    return SummaryTable("selection", cols, rows, _metadata(spec), records)


def _metadata(spec: ExperimentSpec) -> dict:
    return {"spec": spec.to_dict(), "budget": spec.budget,
            "seeding": "SeedSequence(seed, spawn_key=(replication, stream)) with Philox"}


def run_experiment(spec: ExperimentSpec, threads: int | None = None) -> SummaryTable:
    t0 = time.perf_counter()
    records = run_replications(spec, threads)
    table = (_summarise_screening if spec.kind == "screening" else _summarise_selection)(spec, records)
    table.wall_time = time.perf_counter() - t0
    return table


def run_screening_experiment(spec: ExperimentSpec, threads: int | None = None) -> SummaryTable:
    if spec.kind != "screening":
        raise ValueError("spec is not a screening experiment")
    return run_experiment(spec, threads)


def run_selection_experiment(spec: ExperimentSpec, threads: int | None = None) -> SummaryTable:
    if spec.kind != "selection":
        raise ValueError("spec is not a selection experiment")
    return run_experiment(spec, threads)


# ---------------------------------------------------------------------------
# Named experiments
# ---------------------------------------------------------------------------

SETTINGS = {1: (200, 2000, 0.0), 2: (200, 2000, 0.5), 3: (300, 5000, 0.0), 4: (300, 5000, 0.5)}


def _named() -> dict:
    out = {}
    four = ("M1", "M2", "M3", "M4")
    for s, (n, p, rho) in SETTINGS.items():
        for table, example, kind in (("table1", 1, "screening"), ("table2", 2, "screening"),
                                     ("table4", 1, "selection"), ("table5", 2, "selection")):
            out[f"{table}-setting{s}"] = dict(
                kind=kind, n=n, p=p, models=[(m, example, rho, 0) for m in four])
        out[f"tableA3-setting{s}"] = dict(
            kind="screening", n=n, p=p, models=[("M5", 1, rho, 0), ("M5", 2, rho, 0)])
    n, p, rho = SETTINGS[1]
    for case in (1, 2, 3):
        out[f"tableA1-case{case}"] = dict(kind="screening", n=n, p=p,
                                          models=[(m, 1, rho, case) for m in four])
    out["tableA4"] = dict(kind="screening", n=n, p=p, models=[("M3p", 1, 0.0, 0), ("M4p", 1, 0.0, 0)])
    return out


NAMED_EXPERIMENTS = _named()


def named_experiment(name: str, replications: int = 100, seed: int = 0,
                     methods: Sequence[str] | None = None) -> ExperimentSpec:
    if name not in NAMED_EXPERIMENTS:
        raise KeyError(f"unknown experiment {name!r}; valid names: {', '.join(sorted(NAMED_EXPERIMENTS))}")
    cfg = NAMED_EXPERIMENTS[name]
    models = []
    for m, example, rho, level in cfg["models"]:
        model = builtin_model(m, example, rho, level)
        if m == "M5":
            model = SimModel(f"M5-{'normal' if example == 1 else 't3'}", model.covariance,
                             model.truth, model.error, model.perturbation)
        models.append(model)
    default = SCREEN_METHODS if cfg["kind"] == "screening" else SELECT_METHODS
    return ExperimentSpec(name, cfg["kind"], tuple(models), cfg["n"], cfg["p"], replications, seed,
                          tuple(methods) if methods else default)
