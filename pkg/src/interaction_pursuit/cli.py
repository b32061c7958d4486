"""Command-line interface: ``interaction-pursuit {screen,select,simulate,oracle}``.

Exit status 0 on success, 2 on usage or input errors, 1 on internal errors.
``IP_OUTPUT_DIR`` redirects every written file into that directory.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__
from .core import DataError, Main, TrueModel, load_csv, parse_feature, standardize
from .design import build_design
from .oracle import (AR1, Equicorr, GaussianSpec, Identity, OracleError, Tridiagonal,
                     cov_xsq_ysq, population_omega, snr)
from .penalties import ElasticNet, L1PlusSICA, Lasso
from .screening import (ScreeningResult, Threshold, TopD, build_interactions, dcsis_screen,
                        default_budget, ip_screen, iterative_ip, sis_screen)
from .selection import SolverOptions, fit, tune_bic, tune_cv
from .simulation import (NAMED_EXPERIMENTS, ExperimentSpec, builtin_model, default_threads,
                         named_experiment, run_experiment)

OUTPUT_DIR_ENV = "IP_OUTPUT_DIR"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, formats=("json", "csv")):
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="base seed for all randomness (default 0)")
    g.add_argument("--threads", type=int, default=None,
                   help="worker processes for replications (default: available cores)")
    g.add_argument("--output", default=None, help="output file (default: stdout)")
    g.add_argument("--format", choices=formats, default=formats[0], help="output format")
    g.add_argument("--config", default=None,
                   help="key = value file; keys are long option names, flags override it")


def _data_args(p):
    p.add_argument("--input", required=True, help="CSV file with a header row")
    p.add_argument("--response", default="y", help="response column name or 0-based index (default y)")
    p.add_argument("--no-header", action="store_true", help="CSV has no header row")


def _budget_args(p):
    p.add_argument("--method", choices=("ip", "sis", "dcsis", "iip"), default="ip",
                   help="screening method")
    p.add_argument("--top-d", default="auto",
                   help="retain this many per set, or 'auto' for floor(n/log n)")
    p.add_argument("--top-d-interaction", default=None, help="override --top-d for the interaction set")
    p.add_argument("--top-d-main", default=None, help="override --top-d for the main-effect set")
    p.add_argument("--threshold-interaction", type=float, default=None,
                   help="keep variables with |omega| >= this instead of a top-d rule")
    p.add_argument("--threshold-main", type=float, default=None,
                   help="keep variables with |omega*| >= this instead of a top-d rule")
    p.add_argument("--interactions-from", choices=("a_hat", "m_hat"), default="a_hat",
                   help="build pairs from the interaction set (default) or from the union")
    p.add_argument("--max-features", type=int, default=None,
                   help="feature budget of the iterative method (default n-1, at least the first-pass size)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="interaction-pursuit",
                                     description="Screening and selection of interactions and main effects.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("screen", help="screen main effects and interaction variables")
    _data_args(s)
    _budget_args(s)
    _common(s)

    s = sub.add_parser("select", help="screen, then fit a penalised model on the reduced design")
    _data_args(s)
    _budget_args(s)
    s.add_argument("--screening", default=None, help="reuse a screening result JSON instead of screening")
    s.add_argument("--penalty", choices=("lasso", "enet", "l1sica"), default="l1sica")
    s.add_argument("--tune", choices=("bic", "cv", "none"), default=None,
                   help="tuning rule (default: bic for l1sica, cv otherwise)")
    s.add_argument("--folds", type=int, default=5, help="cross-validation folds")
    s.add_argument("--lam0", type=float, default=None, help="L1 level (fixed fits, or fixes lam0 in BIC)")
    s.add_argument("--lam", type=float, default=None, help="SICA or elastic-net level for fixed fits")
    s.add_argument("--a", type=float, default=None, help="SICA shape (default 0.5)")
    s.add_argument("--alpha", type=float, default=0.5, help="elastic-net mixing")
    s.add_argument("--n-lambda", type=int, default=30, help="path length for tuning")
    s.add_argument("--max-iterations", type=int, default=10_000)
    s.add_argument("--tolerance", type=float, default=1e-7)
    _common(s)

    s = sub.add_parser("simulate", help="run a named Monte Carlo experiment or a spec file")
    s.add_argument("experiment", nargs="?", default=None,
                   help=f"experiment name ({len(NAMED_EXPERIMENTS)} available, see --list)")
    s.add_argument("--spec", default=None, help="experiment spec JSON (or a table JSON with metadata)")
    s.add_argument("--reps", type=int, default=None, help="replications (default 100)")
    s.add_argument("--methods", default=None, help="comma-separated method names")
    s.add_argument("--list", action="store_true", help="list experiment names and exit")
    _common(s)

    s = sub.add_parser("oracle", help="analytic Gaussian moments of an interaction model")
    s.add_argument("query", choices=("cov-xsq-ysq", "omega", "snr"))
    s.add_argument("target", nargs="?", default=None,
                   help="1-based covariate index, or a feature name / 'overall' for snr")
    s.add_argument("--model", default=None, help="built-in model name (M1..M5, M3p, M4p)")
    s.add_argument("--example", type=int, default=1, help="built-in model example (1 or 2)")
    s.add_argument("--covariance", choices=("identity", "ar1", "equicorr", "tridiagonal"), default=None)
    s.add_argument("--rho", type=float, default=0.0)
    s.add_argument("--beta", default="", help="main effects, e.g. '1=2,5=2' (1-based)")
    s.add_argument("--gamma", default="", help="interactions, e.g. '1:5=3'")
    s.add_argument("--beta0", type=float, default=0.0)
    s.add_argument("--error-variance", type=float, default=None,
                   help="var(eps); default 1, or the built-in model's value")
    _common(s, formats=("text", "json"))
    return parser


# ---------------------------------------------------------------------------
# Config file
# ---------------------------------------------------------------------------

def read_config(path) -> dict[str, str]:
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        k, v = (t.strip() for t in line.split("=", 1))
        out[k.replace("_", "-")] = v
    return out


def _config_tokens(sub: argparse.ArgumentParser, cfg: dict[str, str]) -> list[str]:
    actions = {opt: a for a in sub._actions for opt in a.option_strings}
    tokens = []
    for key, val in cfg.items():
        opt = f"--{key}"
        if key == "config" or opt not in actions:
            raise UsageError(f"unknown config key {key!r}")
        a = actions[opt]
        if isinstance(a, argparse._StoreTrueAction):
            if val.lower() in ("1", "true", "yes", "on"):
                tokens.append(opt)
            elif val.lower() not in ("0", "false", "no", "off"):
                raise UsageError(f"config key {key!r} expects a boolean")
        else:
            tokens += [opt, val]
    return tokens


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        cfg_tokens = _config_tokens(sub, read_config(args.config))
        i = argv.index(args.command)
        args = parser.parse_args(argv[: i + 1] + cfg_tokens + argv[i + 1:])
    if args.threads is not None and args.threads < 1:
        raise UsageError("--threads must be at least 1")
    return args


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def output_path(args, default_name: str) -> Path | None:
    env = os.environ.get(OUTPUT_DIR_ENV)
    if args.output is None and not env:
        return None
    name = Path(args.output).name if args.output else default_name
    if env:
        Path(env).mkdir(parents=True, exist_ok=True)
        return Path(env) / name
    return Path(args.output)


def _emit(args, text: str, default_name: str) -> Path | None:
    path = output_path(args, default_name)
    if path is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        path.write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _load(args):
    if not Path(args.input).is_file():
        raise UsageError(f"input file not found: {args.input}")
    resp = args.response
    if isinstance(resp, str) and resp.lstrip("-").isdigit():
        resp = int(resp)
    return load_csv(args.input, response_column=resp, header=not args.no_header)


def _rule(n, top, threshold, fallback):
    if threshold is not None:
        return Threshold(threshold)
    val = fallback if top is None else top
    if str(val).lower() == "auto":
        return TopD(default_budget(n))
    try:
        d = int(val)
    except ValueError:
        raise UsageError(f"budget must be an integer or 'auto', got {val!r}") from None
    return TopD(d)


def _screen(args, data):
    """Returns (result dict, mains, pairs)."""
    rule_a = _rule(data.n, args.top_d_interaction, args.threshold_interaction, args.top_d)
    rule_b = _rule(data.n, args.top_d_main, args.threshold_main, args.top_d)
    if args.method in ("ip", "iip"):
        if args.method == "ip":
            res = ip_screen(data, rule_a, rule_b, args.interactions_from)
        else:
            res = iterative_ip(data, rule_a, rule_b, max_features=args.max_features)
        return res.to_dict(), list(res.m_hat), list(res.i_hat)
    if not isinstance(rule_b, TopD) and not isinstance(rule_a, TopD):
        raise UsageError("sis and dcsis need a top-d budget")
    # matched budget: as many variables as IP keeps in its union
    ip = ip_screen(data, rule_a, rule_b)
    size = len(ip.m_hat)
    keep = sis_screen(data, TopD(size)) if args.method == "sis" else dcsis_screen(data, TopD(size))
    pairs = build_interactions(keep)
    out = {"method": args.method, "retained": [j + 1 for j in keep],
           "interactions": [[k + 1, l + 1] for k, l in pairs]}
    return out, list(keep), list(pairs)


def _screen_csv(mains, pairs, names) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "feature"])
    for j in mains:
        w.writerow(["main", names[j]])
    for k, l in pairs:
        w.writerow(["interaction", f"{names[k]}:{names[l]}"])
    return buf.getvalue()


def cmd_screen(args) -> int:
    data = _load(args)
    res, mains, pairs = _screen(args, data)
    res["columns"] = data.column_names()
    text = json.dumps(res, indent=2) if args.format == "json" else _screen_csv(mains, pairs, data.column_names())
    _emit(args, text, f"screen.{args.format}")
    return 0


def cmd_select(args) -> int:
    tune = args.tune or ("bic" if args.penalty == "l1sica" else "cv")
    if args.penalty == "l1sica" and tune == "cv":
        raise UsageError("BIC required for l1sica")
    if args.penalty != "l1sica" and tune == "bic":
        raise UsageError("BIC tuning is implemented for l1sica; use --tune cv")
    if tune == "cv" and args.folds < 2:
        raise UsageError("--folds must be at least 2")
    data = _load(args)
    if tune == "cv" and args.folds > data.n:
        raise UsageError(f"--folds must not exceed n={data.n}")
    std, _ = standardize(data)
    if args.screening:
        try:
            saved = json.loads(Path(args.screening).read_text(encoding="utf-8"))
        except OSError:
            raise UsageError(f"screening file not found: {args.screening}") from None
        if "m_hat" in saved:
            r = ScreeningResult.from_dict(saved)
            mains, pairs = list(r.m_hat), list(r.i_hat)
        else:
            mains = [j - 1 for j in saved["retained"]]
            pairs = [(k - 1, l - 1) for k, l in saved["interactions"]]
    else:
        _, mains, pairs = _screen(args, data)
    feats = [Main(j) for j in mains] + [parse_feature(f"x{k + 1}:x{l + 1}") for k, l in pairs]
    design = build_design(std, feats)
    opts = SolverOptions(max_iterations=args.max_iterations, tolerance=args.tolerance)
    a = 0.5 if args.a is None else args.a
    if tune == "bic":
        lam0_grid = None if args.lam0 is None else [args.lam0]
        _, res = tune_bic(design, lam0_grid=lam0_grid, a_grid=(a,), n_lambda=args.n_lambda, opts=opts)
    elif tune == "cv":
        _, res = tune_cv(design, args.penalty, folds=args.folds, seed=args.seed,
                         alpha=args.alpha, n_lambda=args.n_lambda, opts=opts)
    else:
        if args.penalty == "lasso":
            pen = Lasso(_need(args.lam0, "--lam0"))
        elif args.penalty == "enet":
            pen = ElasticNet(_need(args.lam, "--lam"), args.alpha)
        else:
            pen = L1PlusSICA(_need(args.lam0, "--lam0"), _need(args.lam, "--lam"), a)
        res = fit(design, pen, opts)
    if args.format == "json":
        text = res.to_json()
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["feature", "value"])
        w.writerow(["(intercept)", repr(res.intercept)])
        for f, v in res.theta.items():
            w.writerow([f.name, repr(v)])
        text = buf.getvalue()
    _emit(args, text, f"select.{args.format}")
    return 0


def _need(v, flag):
    if v is None:
        raise UsageError(f"{flag} is required with --tune none")
    return v


def _load_spec_file(path) -> ExperimentSpec:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError:
        raise UsageError(f"spec file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"spec file {path} is not valid JSON: {exc}") from None
    if "metadata" in d:
        d = d["metadata"]
    if "spec" in d:
        d = d["spec"]
    return ExperimentSpec.from_dict(d)


def cmd_simulate(args) -> int:
    if args.list:
        sys.stdout.write("\n".join(sorted(NAMED_EXPERIMENTS)) + "\n")
        return 0
    if args.reps is not None and args.reps < 1:
        raise UsageError("--reps must be at least 1")
    methods = None if args.methods is None else tuple(m.strip() for m in args.methods.split(",") if m.strip())
    if args.spec:
        spec = _load_spec_file(args.spec)
        d = spec.to_dict()
        if args.reps is not None:
            d["replications"] = args.reps
        if methods:
            d["methods"] = list(methods)
        spec = ExperimentSpec.from_dict(d)
    elif args.experiment:
        if args.experiment not in NAMED_EXPERIMENTS:
            raise UsageError(f"unknown experiment {args.experiment!r}; valid names: "
                             + ", ".join(sorted(NAMED_EXPERIMENTS)))
        spec = named_experiment(args.experiment, args.reps or 100, args.seed, methods)
    else:
        raise UsageError("give an experiment name or --spec")
    threads = args.threads or default_threads()
    table = run_experiment(spec, threads)
    path = output_path(args, f"{spec.name}.{args.format}")
    if path is None:
        sys.stdout.write(table.to_csv() if args.format == "csv" else table.to_json() + "\n")
    else:
        table.write(path, args.format)
    return 0


def _parse_coefs(text: str, pair: bool):
    out = {}
    for item in filter(None, (t.strip() for t in text.split(","))):
        if "=" not in item:
            raise UsageError(f"expected 'index=value', got {item!r}")
        k, v = item.split("=", 1)
        try:
            if pair:
                a, b = (int(t) - 1 for t in k.split(":"))
                out[(a, b)] = float(v)
            else:
                out[int(k) - 1] = float(v)
        except ValueError:
            raise UsageError(f"cannot parse coefficient {item!r}") from None
    return out


def cmd_oracle(args) -> int:
    if args.model:
        try:
            m = builtin_model(args.model, args.example, args.rho)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        cov, truth = m.covariance, m.truth
        var = m.error.variance() if args.error_variance is None else args.error_variance
        if args.example == 2:
            raise UsageError("perturbed covariates are not Gaussian; the oracle covers example 1")
    else:
        kind = args.covariance or "identity"
        cov = {"identity": lambda: Identity(), "ar1": lambda: AR1(args.rho),
               "equicorr": lambda: Equicorr(args.rho), "tridiagonal": lambda: Tridiagonal(args.rho)}[kind]()
        truth = TrueModel(args.beta0, _parse_coefs(args.beta, False), _parse_coefs(args.gamma, True))
        var = 1.0 if args.error_variance is None else args.error_variance
    spec = GaussianSpec(cov, truth, var)
    if args.query == "snr":
        target = args.target or "overall"
        which = "overall" if target == "overall" else parse_feature(target)
        value = snr(spec, which)
    else:
        if args.target is None or not args.target.isdigit() or int(args.target) < 1:
            raise UsageError(f"{args.query} needs a 1-based covariate index")
        j = int(args.target) - 1
        value = cov_xsq_ysq(spec, j) if args.query == "cov-xsq-ysq" else population_omega(spec, j)
    text = f"{float(value):.12g}"
    if args.format == "json":
        text = json.dumps({"query": args.query, "target": args.target, "value": float(value)})
    _emit(args, text, f"oracle.{'json' if args.format == 'json' else 'txt'}")
    return 0


COMMANDS = {"screen": cmd_screen, "select": cmd_select, "simulate": cmd_simulate, "oracle": cmd_oracle}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        with threadpool_limits(limits=1):
            return COMMANDS[args.command](args)
    except (UsageError, DataError, OracleError, ValueError, KeyError, FileNotFoundError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - reported, not hidden
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
