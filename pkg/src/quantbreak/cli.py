"""Command-line interface.

Subcommands: `analyze` runs quantile predictability and break tests on a
CSV dataset, `simulate` drives the Monte Carlo harness, `tabulate` fills
the critical-value cache, and `gen` emits synthetic datasets. A JSON
config file can preset any flag; explicit flags win. Exit codes: 0
success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import warnings
from dataclasses import dataclass

import numpy as np

from . import __version__
from .breaktests import make_grid, sq_test, sw_test, _d_cols
from .ivx import (
    IvxConfig,
    build_instruments,
    dequantile,
    ivx_fit,
    ivz_fit,
    predictability_wald,
)
from .limitsim import LEVELS, LimitProcessId, cache_path, load_or_simulate
from .mcharness import (
    ExperimentConfig,
    emit_tables,
    innovation_preset,
    run_power,
    run_size,
)
from .qrsolve import ConvergenceError, qr_fit
from .tsgen import (
    BreakScenario,
    InnovationSpec,
    PersistenceSpec,
    Sample,
    gen_innovations,
    gen_regressors,
)

__all__ = [
    "DatasetSpec",
    "UsageError",
    "DataError",
    "NumericalError",
    "load_csv",
    "run_analysis",
    "tabulate",
    "main",
]

SCHEMA_VERSION = 1

NA_TOKENS = {"", "na", "nan", "null", "none", "."}


class UsageError(Exception):
    """Bad flags or option values; exit code 1."""


class DataError(Exception):
    """Unreadable, malformed, or insufficient input data; exit code 2."""


class NumericalError(Exception):
    """A solver or simulation failed on valid input; exit code 3."""


@dataclass(frozen=True)
class DatasetSpec:
    """Where the series live in a CSV file and how to lag them."""

    path: str
    response_column: str
    predictor_columns: tuple
    lag: int = 1
    date_column: str | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "predictor_columns", tuple(self.predictor_columns)
        )
        if not self.predictor_columns:
            raise ValueError("at least one predictor column is required")
        if self.lag < 1:
            raise ValueError("lag must be >= 1")


def _parse_cell(token, column, row_number):
    text = token.strip() if token is not None else ""
    if text.lower() in NA_TOKENS:
        return None
    try:
        return float(text)
    except ValueError:
        raise DataError(
            "cli.load_csv: column %r row %d is not numeric: %r"
            % (column, row_number, token)
        )


def load_csv(spec):
    """Read the dataset and align the response with lagged predictors.

    Rows with any missing value are dropped (interior gaps therefore
    splice the lag window across the gap). Returns (Sample, info) where
    info reports the drop count and the aligned size.
    """
    columns = (spec.response_column,) + spec.predictor_columns
    try:
        with open(spec.path, newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            for name in columns + ((spec.date_column,) if spec.date_column else ()):
                if name not in header:
                    raise DataError(
                        "cli.load_csv: column %r not in %s (has %s)"
                        % (name, spec.path, ", ".join(header))
                    )
            raw = list(reader)
    except OSError as exc:
        raise DataError("cli.load_csv: cannot read %s: %s" % (spec.path, exc))

    kept, dropped = [], 0
    for i, row in enumerate(raw, start=2):
        values = [_parse_cell(row[name], name, i) for name in columns]
        if any(v is None for v in values):
            dropped += 1
            continue
        kept.append(values)
    if not kept:
        raise DataError("cli.load_csv: no complete rows in %s" % spec.path)

    data = np.asarray(kept, dtype=np.float64)
    y_all, x_all = data[:, 0], data[:, 1:]
    p = x_all.shape[1]
    n = data.shape[0] - spec.lag
    if n <= p + 11:
        raise DataError(
            "cli.load_csv: only %d aligned rows after lag %d; need more than %d"
            % (max(n, 0), spec.lag, p + 11)
        )
    sample = Sample(
        y=y_all[spec.lag :],
        x_lagged=x_all[: -spec.lag],
        has_intercept=True,
        n=n,
        p=p,
    )
    info = {
        "rows_read": len(raw),
        "rows_dropped": dropped,
        "n": n,
        "p": p,
        "lag": spec.lag,
    }
    return sample, info


def _fit_payload(theta, objective, sparsity):
    return {
        "theta": [float(v) for v in np.atleast_1d(theta)],
        "objective": float(objective),
        "sparsity": float(sparsity),
    }


def run_analysis(
    spec,
    *,
    tests=("SQ-IVZ", "SW-IVZ"),
    taus=(0.25, 0.5, 0.75),
    eta=0.15,
    ivx_config=None,
    persistence="auto",
    levels=LEVELS,
    B=199,
    seed=0,
    sim_grid_steps=2000,
    sim_reps=100_000,
    sim_seed=0,
    cache_dir=None,
):
    """Run the full per-quantile pipeline on a dataset; returns the report.

    Per tau: OLS and IVZ full-sample fits, joint zero-slope predictability
    Wald statistics for the IVX and IVZ estimators, and the selected break
    tests with their per-lambda paths.
    """
    sample, info = load_csv(spec)
    cfg = ivx_config if ivx_config is not None else IvxConfig.default(sample.p)
    kinds = []
    for entry in tests:
        family, _, kind = entry.partition("-")
        if family not in ("SQ", "SW") or kind not in ("OLS", "IVX", "IVZ"):
            raise UsageError("cli.run_analysis: unknown test %r" % (entry,))
        kinds.append((family, kind))

    design = np.column_stack([np.ones(sample.n), sample.x_lagged])
    instruments = build_instruments(sample.x_lagged, cfg)
    restriction = np.eye(sample.p)
    zero = np.zeros(sample.p)
    per_tau = []
    for tau in taus:
        try:
            ols = qr_fit(sample.y, design, tau)
            y_tau, alpha_hat = dequantile(sample.y, sample, tau)
            ivz = ivz_fit(y_tau, instruments, tau, alpha_hat=alpha_hat)
            ivx = ivx_fit(
                y_tau, sample.x_lagged, instruments, tau, alpha_hat=alpha_hat
            )
            predictability = {}
            for label, fit in (("ivx", ivx), ("ivz", ivz)):
                stat, df, p_value = predictability_wald(
                    fit, sample.x_lagged, instruments, restriction, zero
                )
                predictability[label] = {
                    "statistic": stat,
                    "df": df,
                    "p_value": p_value,
                }
            break_results = []
            for family, kind in kinds:
                grid = make_grid(sample.n, eta, _d_cols(kind, sample.p))
                test_fn = sq_test if family == "SQ" else sw_test
                res = test_fn(
                    kind,
                    sample,
                    tau,
                    grid,
                    cfg,
                    persistence=persistence,
                    levels=levels,
                    B=B,
                    seed=seed,
                    sim_grid_steps=sim_grid_steps,
                    sim_reps=sim_reps,
                    sim_seed=sim_seed,
                    cache_dir=cache_dir,
                )
                payload = res.to_payload()
                payload["test"] = "%s-%s" % (family, kind)
                payload["fractions"] = [float(v) for v in grid.fractions]
                break_results.append(payload)
        except (ConvergenceError, np.linalg.LinAlgError) as exc:
            raise NumericalError("quantbreak numeric failure at tau=%g: %s" % (tau, exc))
        per_tau.append(
            {
                "tau": float(tau),
                "fits": {
                    "ols": _fit_payload(ols.theta, ols.objective, ols.sparsity),
                    "ivz": {
                        "alpha": float(ivz.alpha_hat),
                        "beta": [float(v) for v in ivz.beta],
                        "sparsity": float(ivz.sparsity),
                    },
                    "ivx": {
                        "alpha": float(ivx.alpha_hat),
                        "beta": [float(v) for v in ivx.beta],
                        "sparsity": float(ivx.sparsity),
                    },
                },
                "predictability": predictability,
                "break_tests": break_results,
            }
        )
    return {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "dataset": dict(info, path=spec.path),
        "settings": {
            "tests": list(tests),
            "taus": [float(t) for t in taus],
            "eta": float(eta),
            "persistence": persistence,
            "ivx": cfg.to_json_dict(),
            "levels": [float(lv) for lv in levels],
            "bootstrap_draws": int(B),
            "seed": int(seed),
        },
        "per_tau": per_tau,
    }


def tabulate(family, p, eta, *, reps=100_000, grid_steps=2000, seed=0, c=None, cache_dir=None):
    """Fill (or reuse) one critical-value cache entry; returns (path, table).

    A corrupted cache file is discarded with a warning and recomputed.
    """
    if eta is None and family != "CHI_SQUARE":
        raise UsageError("tabulate: --eta is required for the %s family" % family)
    if c is None and family == "OU_WALD_LUR":
        raise UsageError("tabulate: --c is required for the OU_WALD_LUR family")
    id_ = LimitProcessId(
        family=family,
        p=int(p),
        eta=None if eta is None else float(eta),
        c=None if c is None else tuple(np.atleast_1d(np.asarray(c, dtype=float))),
    )
    path = cache_path(id_, grid_steps, reps, seed, cache_dir)
    try:
        table = load_or_simulate(
            id_, grid_steps=grid_steps, reps=reps, seed=seed, cache_dir=cache_dir
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError):
        warnings.warn("discarding corrupted cache file %s" % path)
        path.unlink(missing_ok=True)
        table = load_or_simulate(
            id_, grid_steps=grid_steps, reps=reps, seed=seed, cache_dir=cache_dir
        )
    return str(path), table


def _write_paths_csv(report, out_path):
    """Per-lambda break-test paths in long plot-ready form."""
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["tau", "test", "lambda", "value"])
        for section in report["per_tau"]:
            for res in section["break_tests"]:
                for lam, value in zip(res["fractions"], res["path"]):
                    writer.writerow(
                        [
                            "%g" % section["tau"],
                            res["test"],
                            repr(float(lam)),
                            repr(float(value)),
                        ]
                    )


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text):
    return tuple(float(v) for v in str(text).split(","))


def _c_groups(text):
    groups = []
    for group in str(text).split(";"):
        values = _floats(group)
        groups.append(values[0] if len(values) == 1 else values)
    return tuple(groups)


def _build_parser():
    parser = _Parser(prog="quantbreak", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    an = sub.add_parser("analyze", help="test a CSV dataset")
    an.add_argument("--config", help="JSON file presetting any flag")
    an.add_argument("--data")
    an.add_argument("--response")
    an.add_argument("--predictors", help="comma-separated predictor columns")
    an.add_argument("--lag", type=int)
    an.add_argument("--date-column")
    an.add_argument("--tests", help="comma-separated, e.g. SQ-IVZ,SW-IVZ")
    an.add_argument("--tau", help="comma-separated quantile levels")
    an.add_argument("--eta", type=float)
    an.add_argument("--persistence", choices=["lur", "mi", "auto"])
    an.add_argument("--c-z", help="comma-separated instrument persistence")
    an.add_argument("--gamma-z", type=float)
    an.add_argument("--bootstrap-draws", type=int)
    an.add_argument("--seed", type=int)
    an.add_argument("--sim-grid-steps", type=int)
    an.add_argument("--sim-reps", type=int)
    an.add_argument("--sim-seed", type=int)
    an.add_argument("--cache-dir")
    an.add_argument("--out", help="report JSON path (default stdout)")
    an.add_argument("--paths-out", help="per-lambda path CSV")

    si = sub.add_parser("simulate", help="Monte Carlo size/power sweep")
    si.add_argument("--config", help="JSON ExperimentConfig document")
    si.add_argument("--n-list")
    si.add_argument("--c-list", help="groups split by ';', coordinates by ','")
    si.add_argument("--gamma-x-list")
    si.add_argument("--tau-list")
    si.add_argument("--tests")
    si.add_argument("--reps", type=int)
    si.add_argument("--alpha-level", type=float)
    si.add_argument("--eta", type=float)
    si.add_argument("--master-seed", type=int)
    si.add_argument("--theta1")
    si.add_argument("--theta2")
    si.add_argument("--lambda0", type=float)
    si.add_argument("--innovation", choices=["endogenous", "exogenous"])
    si.add_argument("--workers", type=int, default=1)
    si.add_argument("--bootstrap-draws", type=int, default=199)
    si.add_argument("--cache-dir")
    si.add_argument("--sim-grid-steps", type=int, default=2000)
    si.add_argument("--sim-reps", type=int, default=100_000)
    si.add_argument("--sim-seed", type=int, default=0)
    si.add_argument("--format", choices=["csv", "json"], default="csv")
    si.add_argument("--out", help="output path (default stdout)")

    ta = sub.add_parser("tabulate", help="fill the critical-value cache")
    ta.add_argument("--family", required=True)
    ta.add_argument("--p", type=int, required=True)
    ta.add_argument("--eta", type=float)
    ta.add_argument("--c", help="comma-separated persistence (OU family)")
    ta.add_argument("--reps", type=int, default=100_000)
    ta.add_argument("--grid-steps", type=int, default=2000)
    ta.add_argument("--seed", type=int, default=0)
    ta.add_argument("--cache-dir")

    ge = sub.add_parser("gen", help="emit a synthetic CSV dataset")
    ge.add_argument("--n", type=int, required=True)
    ge.add_argument("--theta1", required=True, help="alpha,beta1,...,betap")
    ge.add_argument("--theta2")
    ge.add_argument("--lambda0", type=float)
    ge.add_argument("--c", default="-1")
    ge.add_argument("--gamma-x", type=float, default=0.75)
    ge.add_argument("--rho", default="0")
    ge.add_argument("--sigma-uu", type=float, default=1.0)
    ge.add_argument("--seed", type=int, default=0)
    ge.add_argument("--out", required=True)
    return parser


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataError("cli: cannot read config %s: %s" % (path, exc))
    except json.JSONDecodeError as exc:
        raise DataError("cli: config %s is not valid JSON: %s" % (path, exc))


def _merged(args, config, key, fallback=None):
    value = getattr(args, key.replace("-", "_"), None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return fallback


def _cmd_analyze(args):
    config = _load_config(args.config)
    data = _merged(args, config, "data")
    response = _merged(args, config, "response")
    predictors = _merged(args, config, "predictors")
    if data is None or response is None or predictors is None:
        raise UsageError("analyze needs --data, --response and --predictors")
    if isinstance(predictors, str):
        predictors = tuple(s.strip() for s in predictors.split(","))
    try:
        spec = DatasetSpec(
            path=data,
            response_column=response,
            predictor_columns=tuple(predictors),
            lag=int(_merged(args, config, "lag", 1)),
            date_column=_merged(args, config, "date-column"),
        )
    except ValueError as exc:
        raise UsageError(str(exc))
    tests = _merged(args, config, "tests", "SQ-IVZ,SW-IVZ")
    if isinstance(tests, str):
        tests = tuple(s.strip() for s in tests.split(","))
    taus = _merged(args, config, "tau", (0.25, 0.5, 0.75))
    if isinstance(taus, str):
        taus = _floats(taus)
    c_z = _merged(args, config, "c-z")
    gamma_z = _merged(args, config, "gamma-z")
    ivx_config = None
    if c_z is not None or gamma_z is not None:
        c_z_values = _floats(c_z) if isinstance(c_z, str) else c_z
        if c_z_values is None:
            c_z_values = -np.ones(len(spec.predictor_columns))
        ivx_config = IvxConfig(
            c_z=np.asarray(c_z_values, dtype=np.float64),
            gamma_z=float(gamma_z) if gamma_z is not None else 0.95,
        )
    report = run_analysis(
        spec,
        tests=tests,
        taus=tuple(taus),
        eta=float(_merged(args, config, "eta", 0.15)),
        ivx_config=ivx_config,
        persistence=_merged(args, config, "persistence", "auto"),
        B=int(_merged(args, config, "bootstrap-draws", 199)),
        seed=int(_merged(args, config, "seed", 0)),
        sim_grid_steps=int(_merged(args, config, "sim-grid-steps", 2000)),
        sim_reps=int(_merged(args, config, "sim-reps", 100_000)),
        sim_seed=int(_merged(args, config, "sim-seed", 0)),
        cache_dir=_merged(args, config, "cache-dir"),
    )
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.paths_out:
        _write_paths_csv(report, args.paths_out)
    return 0


def _experiment_config(args, config):
    if "n_list" in config:
        # full ExperimentConfig document (also the "config" block of an
        # emitted JSON report, so a report re-runs itself); scalar flags
        # still override
        try:
            base = ExperimentConfig.from_json_dict(config)
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError("simulate: bad config document: %s" % exc)
        overrides = {}
        for flag, field_name in (
            ("reps", "reps"),
            ("alpha_level", "alpha_level"),
            ("eta", "eta"),
            ("master_seed", "master_seed"),
        ):
            value = getattr(args, flag)
            if value is not None:
                overrides[field_name] = value
        return dataclasses.replace(base, **overrides) if overrides else base

    def merged_list(key, parser, fallback=None):
        value = _merged(args, config, key, fallback)
        if value is None:
            raise UsageError("simulate needs --%s (flag or config)" % key)
        return parser(value) if isinstance(value, str) else tuple(value)

    scenario_cfg = config.get("scenario")
    if scenario_cfg is not None and args.theta1 is None:
        scenario = BreakScenario.from_json_dict(scenario_cfg)
    else:
        theta1 = _merged(args, config, "theta1")
        if theta1 is None:
            raise UsageError("simulate needs --theta1 or a config scenario")
        theta1 = _floats(theta1) if isinstance(theta1, str) else theta1
        theta2 = _merged(args, config, "theta2")
        if isinstance(theta2, str):
            theta2 = _floats(theta2)
        try:
            scenario = BreakScenario(
                theta1=np.asarray(theta1, dtype=np.float64),
                theta2=None
                if theta2 is None
                else np.asarray(theta2, dtype=np.float64),
                lambda0=_merged(args, config, "lambda0"),
            )
        except ValueError as exc:
            raise UsageError("simulate: %s" % exc)
    p = scenario.theta1.shape[0] - 1

    if args.innovation is not None:
        innov = innovation_preset(args.innovation, p)
    elif config.get("innov") is not None:
        innov = InnovationSpec.from_json_dict(config["innov"])
    else:
        innov = None
    try:
        return ExperimentConfig(
            n_list=merged_list(
                "n-list", lambda s: tuple(int(v) for v in s.split(","))
            ),
            c_list=merged_list("c-list", _c_groups, ((-1.0,) * p,)),
            gamma_x_list=merged_list("gamma-x-list", _floats, (0.75,)),
            tau_list=merged_list("tau-list", _floats, (0.25, 0.5, 0.75)),
            tests=merged_list(
                "tests", lambda s: tuple(v.strip() for v in s.split(","))
            ),
            reps=int(_merged(args, config, "reps", 1000)),
            scenario=scenario,
            innov=innov,
            ivx=None
            if config.get("ivx") is None
            else IvxConfig.from_json_dict(config["ivx"]),
            alpha_level=float(_merged(args, config, "alpha-level", 0.05)),
            eta=float(_merged(args, config, "eta", 0.15)),
            master_seed=int(_merged(args, config, "master-seed", 0)),
        )
    except ValueError as exc:
        raise UsageError("simulate: %s" % exc)


def _cmd_simulate(args):
    config = _load_config(args.config)
    if config and "config" in config:
        config = config["config"]
    experiment = _experiment_config(args, config)
    runner = run_size if experiment.scenario.lambda0 is None else run_power
    report = runner(
        experiment,
        max_workers=args.workers,
        bootstrap_b=args.bootstrap_draws,
        cache_dir=args.cache_dir,
        sim_grid_steps=args.sim_grid_steps,
        sim_reps=args.sim_reps,
        sim_seed=args.sim_seed,
    )
    document = emit_tables(report, args.format.upper())
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(document)
    else:
        sys.stdout.write(document)
    return 0


def _cmd_tabulate(args):
    c = None if args.c is None else _floats(args.c)
    path, table = tabulate(
        args.family,
        args.p,
        args.eta,
        reps=args.reps,
        grid_steps=args.grid_steps,
        seed=args.seed,
        c=c,
        cache_dir=args.cache_dir,
    )
    sys.stdout.write(
        json.dumps(
            {"path": path, "quantiles": {"%g" % k: v for k, v in table.quantiles.items()}},
            sort_keys=True,
        )
        + "\n"
    )
    return 0


def _cmd_gen(args):
    theta1 = np.asarray(_floats(args.theta1), dtype=np.float64)
    p = theta1.shape[0] - 1
    if p < 1:
        raise UsageError("gen: theta1 must be alpha plus at least one slope")
    theta2 = theta1 if args.theta2 is None else np.asarray(_floats(args.theta2))
    if theta2.shape != theta1.shape:
        raise UsageError("gen: theta2 length must match theta1")
    c = np.asarray(_floats(args.c), dtype=np.float64)
    if c.shape == (1,) and p > 1:
        c = np.repeat(c, p)
    rho = np.asarray(_floats(args.rho), dtype=np.float64)
    if rho.shape == (1,) and p > 1:
        rho = np.repeat(rho, p)
    try:
        persistence = PersistenceSpec(c=c, gamma_x=args.gamma_x)
        innov = InnovationSpec(
            sigma_uu=args.sigma_uu, rho=rho, sigma_vv=np.eye(p)
        )
        scenario = BreakScenario(
            theta1=theta1,
            theta2=None if args.theta2 is None else theta2,
            lambda0=args.lambda0,
        )
    except ValueError as exc:
        raise UsageError("gen: %s" % exc)

    u, V = gen_innovations(innov, args.n, args.seed)
    x = gen_regressors(persistence, V, np.zeros(p))
    x_lag = np.vstack([np.zeros(p), x[:-1]])
    k = args.n if scenario.lambda0 is None else int(np.floor(scenario.lambda0 * args.n))
    design = np.column_stack([np.ones(args.n), x_lag])
    y = np.where(
        np.arange(1, args.n + 1) <= k,
        design @ scenario.theta1,
        design @ scenario.theta2,
    ) + u
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "y"] + ["x%d" % (j + 1) for j in range(p)])
        for t in range(args.n):
            writer.writerow(
                [t + 1, repr(float(y[t]))] + [repr(float(v)) for v in x[t]]
            )
    return 0


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {
            "analyze": _cmd_analyze,
            "simulate": _cmd_simulate,
            "tabulate": _cmd_tabulate,
            "gen": _cmd_gen,
        }[args.command]
        return handler(args)
    except (UsageError, ValueError) as exc:
        print("usage error: %s" % exc, file=sys.stderr)
        return 1
    except DataError as exc:
        print("data error: %s" % exc, file=sys.stderr)
        return 2
    except (NumericalError, ConvergenceError, np.linalg.LinAlgError) as exc:
        print("numerical failure: %s" % exc, file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
