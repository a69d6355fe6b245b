"""Monte Carlo orchestration: size and power sweeps over design cells.

A sweep runs every combination of (n, c, gamma_x, tau, test) from an
ExperimentConfig, draws `reps` samples per cell with seeds derived from the
master seed, and reduces rejection decisions into an McReport. Reductions
are ordered by (cell, replication), so reports are byte-identical for any
worker count.
"""

from __future__ import annotations

import csv
import io
import json
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product

import numpy as np
import scipy

from . import __version__
from .breaktests import (
    DEFAULT_ROUTING,
    SIMULATED_LIMIT,
    _d_cols,
    _simulated_crit,
    _sq_statistic,
    _sw_statistic,
    make_grid,
    sq_test,
    sw_test,
)
from .ivx import IvxConfig
from .qrsolve import ConvergenceError
from .tsgen import BreakScenario, InnovationSpec, PersistenceSpec, gen_sample

__all__ = [
    "ExperimentConfig",
    "CellResult",
    "McReport",
    "innovation_preset",
    "run_size",
    "run_power",
    "emit_tables",
    "parse_report",
]

FAMILIES = ("SQ", "SW")
KINDS = ("OLS", "IVX", "IVZ")

CSV_COLUMNS = (
    "n",
    "c",
    "gamma_x",
    "tau",
    "test",
    "rejection_rate",
    "rep_count",
    "mean_lambda_hat",
)


def innovation_preset(name, p):
    """Shipped innovation laws: "endogenous" (rho = -0.5) or "exogenous"."""
    if name == "endogenous":
        rho = np.full(int(p), -0.5)
    elif name == "exogenous":
        rho = np.zeros(int(p))
    else:
        raise ValueError("unknown innovation preset %r" % (name,))
    return InnovationSpec(sigma_uu=1.0, rho=rho, sigma_vv=np.eye(int(p)))


def _normalize_test(entry):
    if isinstance(entry, str):
        parts = entry.split("-")
    else:
        parts = list(entry)
    if len(parts) != 2 or parts[0] not in FAMILIES or parts[1] not in KINDS:
        raise ValueError("test must combine %s with %s, got %r" % (FAMILIES, KINDS, entry))
    return "%s-%s" % tuple(parts)


def _normalize_c(entry, p):
    arr = np.atleast_1d(np.asarray(entry, dtype=np.float64))
    if arr.shape == (1,) and p > 1:
        arr = np.repeat(arr, p)
    if arr.shape != (p,):
        raise ValueError("c entry must be a scalar or length-p, got %r" % (entry,))
    return tuple(float(v) for v in arr)


@dataclass(frozen=True)
class ExperimentConfig:
    """Design grid plus replication and seeding policy for one sweep.

    c_list entries may be scalars (broadcast over the p regressors) or
    length-p sequences. innov=None selects the endogenous preset at the
    scenario's dimension. ivx=None uses the default instrument recursion.
    """

    n_list: tuple
    c_list: tuple
    gamma_x_list: tuple
    tau_list: tuple
    tests: tuple
    reps: int
    scenario: BreakScenario
    innov: InnovationSpec | None = None
    ivx: IvxConfig | None = None
    alpha_level: float = 0.05
    eta: float = 0.15
    master_seed: int = 0

    def __post_init__(self):
        p = self.p
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))
        object.__setattr__(
            self, "c_list", tuple(_normalize_c(c, p) for c in self.c_list)
        )
        object.__setattr__(
            self, "gamma_x_list", tuple(float(g) for g in self.gamma_x_list)
        )
        object.__setattr__(self, "tau_list", tuple(float(t) for t in self.tau_list))
        object.__setattr__(
            self, "tests", tuple(_normalize_test(t) for t in self.tests)
        )
        for name in ("n_list", "c_list", "gamma_x_list", "tau_list", "tests"):
            if not getattr(self, name):
                raise ValueError("%s must be non-empty" % name)
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if not 0.0 < self.alpha_level < 1.0:
            raise ValueError("alpha_level must lie in (0, 1)")
        if not 0.0 < self.eta < 0.5:
            raise ValueError("eta must lie in (0, 0.5)")
        if self.innov is not None and self.innov.p != p:
            raise ValueError("innovation dimension differs from scenario")
        if self.ivx is not None and self.ivx.c_z.shape[0] != p:
            raise ValueError("instrument dimension differs from scenario")

    @property
    def p(self):
        return self.scenario.theta1.shape[0] - 1

    def cell_keys(self):
        """Cells in fixed sweep order: n, c, gamma_x, tau, test."""
        return list(
            product(self.n_list, self.c_list, self.gamma_x_list, self.tau_list, self.tests)
        )

    def resolved_innov(self):
        return self.innov if self.innov is not None else innovation_preset("endogenous", self.p)

    def to_json_dict(self):
        return {
            "n_list": list(self.n_list),
            "c_list": [list(c) for c in self.c_list],
            "gamma_x_list": list(self.gamma_x_list),
            "tau_list": list(self.tau_list),
            "tests": list(self.tests),
            "reps": self.reps,
            "scenario": self.scenario.to_json_dict(),
            "innov": None if self.innov is None else self.innov.to_json_dict(),
            "ivx": None if self.ivx is None else self.ivx.to_json_dict(),
            "alpha_level": self.alpha_level,
            "eta": self.eta,
            "master_seed": self.master_seed,
        }

    @classmethod
    def from_json_dict(cls, d):
        return cls(
            n_list=d["n_list"],
            c_list=d["c_list"],
            gamma_x_list=d["gamma_x_list"],
            tau_list=d["tau_list"],
            tests=d["tests"],
            reps=d["reps"],
            scenario=BreakScenario.from_json_dict(d["scenario"]),
            innov=None if d.get("innov") is None else InnovationSpec.from_json_dict(d["innov"]),
            ivx=None if d.get("ivx") is None else IvxConfig.from_json_dict(d["ivx"]),
            alpha_level=d["alpha_level"],
            eta=d["eta"],
            master_seed=d["master_seed"],
        )


@dataclass(frozen=True)
class CellResult:
    rejection_rate: float
    rep_count: int
    mean_lambda_hat: float | None


@dataclass
class McReport:
    """Sweep outcome: per-cell rates plus reproducibility metadata.

    wall_time is excluded from equality so reruns of the same config
    compare equal.
    """

    config: ExperimentConfig
    cells: dict
    failures: list
    versions: dict
    wall_time: float = field(compare=False, default=0.0)


def _versions():
    return {
        "quantbreak": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def _rep_seed(master_seed, rep):
    return np.random.SeedSequence([int(master_seed), int(rep)])


def _cell_plan(key, config, sim_kwargs, cache_dir):
    """Pre-resolved per-cell pieces shared by all replications."""
    n, c, gamma_x, tau, test = key
    family, kind = test.split("-")
    persistence = "lur" if gamma_x >= 1.0 else "mi"
    method = DEFAULT_ROUTING[(family, kind, persistence)]
    grid = make_grid(n, config.eta, _d_cols(kind, config.p))
    level = round(1.0 - config.alpha_level, 10)
    plan = {
        "family": family,
        "kind": kind,
        "persistence": persistence,
        "method": method,
        "grid": grid,
        "level": level,
        "pers_spec": PersistenceSpec(c=np.asarray(c), gamma_x=gamma_x),
    }
    if method == SIMULATED_LIMIT:
        plan["crit"] = _simulated_crit(
            family,
            _d_cols(kind, config.p),
            config.eta,
            (level,),
            sim_kwargs["sim_grid_steps"],
            sim_kwargs["sim_reps"],
            sim_kwargs["sim_seed"],
            cache_dir,
        )[level]
    return plan


def _run_rep(key, rep, config, plan, innov, bootstrap_b, cache_dir, sim_kwargs):
    """One replication; returns (rejected, lambda_hat) or raises."""
    n, _, _, tau, _ = key
    sample = gen_sample(
        config.scenario,
        plan["pers_spec"],
        innov,
        n,
        _rep_seed(config.master_seed, rep),
    )
    statistic_only = plan["method"] == SIMULATED_LIMIT
    if statistic_only:
        compute = _sq_statistic if plan["family"] == "SQ" else _sw_statistic
        stat, lambda_hat, _, diagnostics = compute(
            plan["kind"], sample, tau, plan["grid"], config.ivx
        )
        # an indefinite IVX normalizer reroutes that sample to the bootstrap
        if not diagnostics.get("normalizer_fallback"):
            return bool(stat > plan["crit"]), float(lambda_hat)
    test_fn = sq_test if plan["family"] == "SQ" else sw_test
    res = test_fn(
        plan["kind"],
        sample,
        tau,
        plan["grid"],
        config.ivx,
        persistence=plan["persistence"],
        levels=(plan["level"],),
        B=bootstrap_b,
        seed=config.master_seed * 1_000_003 + rep,
        cache_dir=cache_dir,
        **sim_kwargs,
    )
    return bool(res.decision[plan["level"]]), float(res.lambda_hat)


def _sweep(config, *, max_workers, bootstrap_b, cache_dir, sim_kwargs):
    keys = config.cell_keys()
    innov = config.resolved_innov()
    plans = {key: _cell_plan(key, config, sim_kwargs, cache_dir) for key in keys}
    start = time.perf_counter()

    def job(key_rep):
        key, rep = key_rep
        try:
            return key_rep, _run_rep(
                key, rep, config, plans[key], innov, bootstrap_b, cache_dir, sim_kwargs
            ), None
        except (ConvergenceError, ValueError, np.linalg.LinAlgError) as exc:
            return key_rep, None, "%s: %s" % (type(exc).__name__, exc)

    tasks = [(key, rep) for key in keys for rep in range(config.reps)]
    outcomes = {}
    if max_workers <= 1:
        for task in tasks:
            key_rep, value, err = job(task)
            outcomes[key_rep] = (value, err)
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            for key_rep, value, err in pool.map(job, tasks):
                outcomes[key_rep] = (value, err)

    cells, failures = {}, []
    for key in keys:
        rejected = 0
        lambda_hats = []
        for rep in range(config.reps):
            value, err = outcomes[(key, rep)]
            if err is not None:
                failures.append({"cell": _cell_row(key), "rep": rep, "reason": err})
                continue
            rejected += value[0]
            lambda_hats.append(value[1])
        count = len(lambda_hats)
        cells[key] = CellResult(
            rejection_rate=rejected / count if count else 0.0,
            rep_count=count,
            mean_lambda_hat=float(np.mean(lambda_hats)) if lambda_hats else None,
        )
    return McReport(
        config=config,
        cells=cells,
        failures=failures,
        versions=_versions(),
        wall_time=time.perf_counter() - start,
    )


def _sim_kwargs(sim_grid_steps, sim_reps, sim_seed):
    return {
        "sim_grid_steps": int(sim_grid_steps),
        "sim_reps": int(sim_reps),
        "sim_seed": int(sim_seed),
    }


def run_size(
    config,
    *,
    max_workers=1,
    bootstrap_b=199,
    cache_dir=None,
    sim_grid_steps=2000,
    sim_reps=100_000,
    sim_seed=0,
):
    """Empirical size sweep; the scenario must hold no break."""
    if not config.scenario.is_null:
        raise ValueError("run_size requires a no-break scenario")
    return _sweep(
        config,
        max_workers=max_workers,
        bootstrap_b=bootstrap_b,
        cache_dir=cache_dir,
        sim_kwargs=_sim_kwargs(sim_grid_steps, sim_reps, sim_seed),
    )


def run_power(
    config,
    *,
    max_workers=1,
    bootstrap_b=199,
    cache_dir=None,
    sim_grid_steps=2000,
    sim_reps=100_000,
    sim_seed=0,
):
    """Power sweep under a break scenario; also reports mean_lambda_hat."""
    if config.scenario.lambda0 is None:
        raise ValueError("run_power requires a scenario with a break fraction")
    return _sweep(
        config,
        max_workers=max_workers,
        bootstrap_b=bootstrap_b,
        cache_dir=cache_dir,
        sim_kwargs=_sim_kwargs(sim_grid_steps, sim_reps, sim_seed),
    )


def _cell_row(key):
    n, c, gamma_x, tau, test = key
    return {
        "n": n,
        "c": list(c),
        "gamma_x": gamma_x,
        "tau": tau,
        "test": test,
    }


def _row_key(row):
    return (
        int(row["n"]),
        tuple(float(v) for v in row["c"]),
        float(row["gamma_x"]),
        float(row["tau"]),
        str(row["test"]),
    )


def emit_tables(report, format="CSV", *, include_timing=False):
    """Render a report as a CSV table or a JSON document.

    Cell order follows the config sweep order in both formats. Timing is
    volatile, so it is only embedded on request; everything else is a pure
    function of config and versions, making documents byte-stable.
    """
    fmt = format.upper()
    if fmt == "CSV":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for key in report.config.cell_keys():
            cell = report.cells[key]
            n, c, gamma_x, tau, test = key
            writer.writerow(
                [
                    n,
                    "|".join("%g" % v for v in c),
                    "%g" % gamma_x,
                    "%g" % tau,
                    test,
                    repr(cell.rejection_rate),
                    cell.rep_count,
                    "" if cell.mean_lambda_hat is None else repr(cell.mean_lambda_hat),
                ]
            )
        return buf.getvalue()
    if fmt == "JSON":
        payload = {
            "config": report.config.to_json_dict(),
            "cells": [
                dict(
                    _cell_row(key),
                    rejection_rate=report.cells[key].rejection_rate,
                    rep_count=report.cells[key].rep_count,
                    mean_lambda_hat=report.cells[key].mean_lambda_hat,
                )
                for key in report.config.cell_keys()
            ],
            "failures": report.failures,
            "versions": report.versions,
        }
        if include_timing:
            payload["wall_time"] = report.wall_time
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"
    raise ValueError("format must be CSV or JSON, got %r" % (format,))


def parse_report(document):
    """Rebuild an McReport from its JSON document form."""
    payload = json.loads(document)
    config = ExperimentConfig.from_json_dict(payload["config"])
    cells = {}
    for row in payload["cells"]:
        cells[_row_key(row)] = CellResult(
            rejection_rate=row["rejection_rate"],
            rep_count=row["rep_count"],
            mean_lambda_hat=row["mean_lambda_hat"],
        )
    return McReport(
        config=config,
        cells=cells,
        failures=payload.get("failures", []),
        versions=payload.get("versions", {}),
        wall_time=payload.get("wall_time", 0.0),
    )
