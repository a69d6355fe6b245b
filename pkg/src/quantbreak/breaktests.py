"""Structural-break tests for quantile predictive regressions.

Two statistic families in OLS/IVX/IVZ variants: fluctuation (sup-Q)
statistics built from recentered subgradient partial sums, and sup-Wald
statistics built from split-sample estimates. Also provides the
known-break-point Wald test, a multi-quantile double-sup wrapper, and
fixed-regressor wild-bootstrap critical values for the nonpivotal cases.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .ivx import IvxConfig, build_instruments, dequantile, ivx_fit, ivz_fit
from .limitsim import LEVELS, LimitProcessId, load_or_simulate
from .qrsolve import ConvergenceError, qr_fit
from .qrsolve import _solve as _raw_solve
from .tsgen import Sample

SIMULATED_LIMIT = "SIMULATED_LIMIT"
WILD_BOOTSTRAP = "WILD_BOOTSTRAP"
CHI_SQUARE = "CHI_SQUARE"

KINDS = ("OLS", "IVX", "IVZ")
STATISTIC_FAMILIES = ("SQ", "SW")
PERSISTENCE_CLASSES = ("lur", "mi", "auto")


def _build_routing():
    # IVZ limits are pivotal for every persistence class; OLS/IVX are
    # pivotal only under MI, and "auto" plays safe with the bootstrap.
    table = {}
    for fam in STATISTIC_FAMILIES:
        for kind in KINDS:
            for pers in PERSISTENCE_CLASSES:
                if kind == "IVZ" or pers == "mi":
                    table[(fam, kind, pers)] = SIMULATED_LIMIT
                else:
                    table[(fam, kind, pers)] = WILD_BOOTSTRAP
    return table


DEFAULT_ROUTING = _build_routing()


@dataclass(frozen=True)
class LambdaGrid:
    """Candidate break fractions with their integer break indices."""

    eta: float
    fractions: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "fractions", np.asarray(self.fractions, dtype=np.float64)
        )
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=np.int64))
        if not 0.0 < self.eta < 0.5:
            raise ValueError("eta must lie in (0, 0.5)")
        if self.fractions.shape != self.indices.shape or self.fractions.size == 0:
            raise ValueError("fractions and indices must be equal-length, non-empty")
        if np.any(np.diff(self.fractions) <= 0):
            raise ValueError("fractions must be strictly increasing")
        if self.fractions[0] < self.eta - 1e-12 or self.fractions[-1] > 1 - self.eta + 1e-12:
            raise ValueError("fractions must lie inside [eta, 1 - eta]")

    def __len__(self):
        return self.fractions.size


def make_grid(n, eta, d_cols):
    """Every feasible integer break index inside the trimmed range.

    A break index kappa is feasible when strictly more than d_cols + 1
    observations fall strictly before and strictly after it, so both
    regime fits are overdetermined.
    """
    if not 0.0 < eta < 0.5:
        raise ValueError("eta must lie in (0, 0.5)")
    lo = int(np.ceil(eta * n))
    hi = int(np.floor((1.0 - eta) * n))
    kappas = [k for k in range(lo, hi + 1) if _feasible_kappa(k, n, d_cols)]
    if not kappas:
        raise ValueError("no feasible break index: sample too small for the trimming")
    kappas = np.asarray(kappas, dtype=np.int64)
    return LambdaGrid(eta=eta, fractions=kappas / n, indices=kappas)


def _feasible_kappa(k, n, d_cols):
    return k - 1 >= d_cols + 1 and n - k - 1 >= d_cols + 1


@dataclass
class BreakTestResult:
    """Outcome of a structural-break test over a break-fraction grid."""

    kind: str
    tau: float | tuple
    statistic: float
    lambda_hat: float
    path: np.ndarray
    crit: dict
    crit_method: str
    decision: dict
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.path = np.asarray(self.path, dtype=np.float64)
        if self.statistic < 0:
            raise ValueError("statistic must be nonnegative")
        if self.path.size and abs(self.statistic - self.path.max()) > 1e-12:
            raise ValueError("statistic must equal the path maximum")

    def to_payload(self):
        tau = list(self.tau) if isinstance(self.tau, tuple) else float(self.tau)
        return {
            "kind": self.kind,
            "tau": tau,
            "statistic": float(self.statistic),
            "lambda_hat": float(self.lambda_hat),
            "path": [float(v) for v in self.path],
            "crit": {"%g" % lv: float(cv) for lv, cv in self.crit.items()},
            "crit_method": self.crit_method,
            "decision": {"%g" % lv: bool(d) for lv, d in self.decision.items()},
            "diagnostics": self.diagnostics,
        }

    def to_json(self):
        return json.dumps(self.to_payload(), sort_keys=True)

    @classmethod
    def from_payload(cls, payload):
        tau = payload["tau"]
        tau = tuple(tau) if isinstance(tau, list) else float(tau)
        return cls(
            kind=payload["kind"],
            tau=tau,
            statistic=payload["statistic"],
            lambda_hat=payload["lambda_hat"],
            path=np.asarray(payload["path"], dtype=np.float64),
            crit={float(k): float(v) for k, v in payload["crit"].items()},
            crit_method=payload["crit_method"],
            decision={float(k): bool(v) for k, v in payload["decision"].items()},
            diagnostics=payload.get("diagnostics", {}),
        )


def _check_kind(kind):
    kind = str(kind).upper()
    if kind not in KINDS:
        raise ValueError("kind must be one of %s" % (KINDS,))
    return kind


def _check_persistence(persistence):
    persistence = str(persistence).lower()
    if persistence not in PERSISTENCE_CLASSES:
        raise ValueError("persistence must be one of %s" % (PERSISTENCE_CLASSES,))
    return persistence


def _check_levels(levels):
    levels = tuple(float(lv) for lv in levels)
    if not levels or any(not 0.0 < lv < 1.0 for lv in levels):
        raise ValueError("levels must lie in (0, 1)")
    return levels


def _d_cols(kind, p):
    return p + 1 if kind == "OLS" else p


def _design_ols(sample):
    return np.column_stack([np.ones(sample.n), sample.x_lagged])


def _with_response(sample, y):
    return Sample(
        y=np.asarray(y, dtype=np.float64),
        x_lagged=sample.x_lagged,
        has_intercept=sample.has_intercept,
        n=sample.n,
        p=sample.p,
    )


def _resolve_config(config, p):
    return config if config is not None else IvxConfig.default(p)


def _sym_inv_sqrt(m):
    """Symmetric inverse square root, rejecting non-PD input."""
    sym = 0.5 * (m + m.T)
    vals, vecs = np.linalg.eigh(sym)
    if vals[0] <= 1e-12 * max(abs(vals[-1]), 1e-300):
        raise ValueError("normalizer matrix is not positive definite")
    return (vecs / np.sqrt(vals)) @ vecs.T


def _argmax_by_lambda(path, fractions):
    """Leading maximum of the path; ties resolved to the smallest fraction."""
    i = int(np.argmax(path))
    return float(path[i]), float(fractions[i])


def _sq_statistic(kind, sample, tau, grid, config):
    """Recentered-subgradient sup statistic plus its per-fraction path.

    Scores w_{t-1} psi_tau(residual_t) are accumulated once; each grid
    fraction reuses the cumulative sums, so the whole path costs a single
    full-sample fit.
    """
    x = sample.x_lagged
    diagnostics = {"fractions": [float(v) for v in grid.fractions]}
    if kind == "OLS":
        design = _design_ols(sample)
        fit = qr_fit(sample.y, design, tau)
        weights = design
        normalizer = design.T @ design
    else:
        cfg = _resolve_config(config, sample.p)
        y_tau, alpha_hat = dequantile(sample.y, sample, tau)
        instruments = build_instruments(x, cfg)
        if kind == "IVZ":
            fit = ivz_fit(y_tau, instruments, tau, alpha_hat=alpha_hat)
            normalizer = instruments.T @ instruments
        else:
            fit = ivx_fit(y_tau, x, instruments, tau, alpha_hat=alpha_hat)
            normalizer = 0.5 * (x.T @ instruments + instruments.T @ x)
        weights = instruments
    try:
        root = _sym_inv_sqrt(normalizer)
    except ValueError:
        if kind != "IVX":
            raise
        # the symmetrized cross-moment can fail PD-ness; the instrument
        # Gram matrix cannot, but the limit is then nonpivotal
        root = _sym_inv_sqrt(weights.T @ weights)
        diagnostics["normalizer_fallback"] = True
    cums = np.cumsum(weights * fit.psi_values[:, None], axis=0)
    centered = cums[grid.indices - 1] - grid.fractions[:, None] * cums[-1]
    path = np.abs(centered @ root).max(axis=1) / np.sqrt(tau * (1.0 - tau))
    statistic, lambda_hat = _argmax_by_lambda(path, grid.fractions)
    return statistic, lambda_hat, path, diagnostics


def _sw_ingredients(kind, sample, tau, config):
    """Full-sample objects shared by every split evaluation."""
    if kind == "OLS":
        fit = qr_fit(sample.y, _design_ols(sample), tau)
        return {"fhat": fit.sparsity, "y": sample.y}
    cfg = _resolve_config(config, sample.p)
    y_tau, alpha_hat = dequantile(sample.y, sample, tau)
    instruments = build_instruments(sample.x_lagged, cfg)
    if kind == "IVZ":
        fit = ivz_fit(y_tau, instruments, tau, alpha_hat=alpha_hat)
    else:
        fit = ivx_fit(y_tau, sample.x_lagged, instruments, tau, alpha_hat=alpha_hat)
    return {
        "fhat": fit.sparsity,
        "y_tau": y_tau,
        "config": cfg,
        "instruments": instruments,
    }


def _sw_at(kind, sample, tau, kappa, shared):
    """Single split-sample Wald value; raises on singular regime algebra."""
    x = sample.x_lagged
    scale = tau * (1.0 - tau) / shared["fhat"] ** 2
    if kind == "OLS":
        design = _design_ols(sample)
        d1, d2 = design[:kappa], design[kappa:]
        vee = (np.linalg.inv(d1.T @ d1) + np.linalg.inv(d2.T @ d2)) * scale
        theta1, _ = _raw_solve(d1, shared["y"][:kappa], tau)
        theta2, _ = _raw_solve(d2, shared["y"][kappa:], tau)
        delta = theta2 - theta1
    else:
        cfg = shared["config"]
        y_tau = shared["y_tau"]
        if kind == "IVZ":
            # Regime blocks reuse rows of the one full-sample instrument
            # build; a per-regime rebuild restarts the recursion at zero and
            # the late regime inherits a long warm-up transient.
            z = shared["instruments"]
            z1, z2 = z[:kappa], z[kappa:]
            vee = (np.linalg.inv(z1.T @ z1) + np.linalg.inv(z2.T @ z2)) * scale
            beta1, _ = _raw_solve(z1, y_tau[:kappa], tau)
            beta2, _ = _raw_solve(z2, y_tau[kappa:], tau)
        else:
            z1 = build_instruments(x[:kappa], cfg)
            z2 = build_instruments(x[kappa:], cfg)
            inv_a1 = np.linalg.inv(z1.T @ x[:kappa])
            inv_a2 = np.linalg.inv(z2.T @ x[kappa:])
            vee = (
                inv_a1 @ (z1.T @ z1) @ inv_a1.T + inv_a2 @ (z2.T @ z2) @ inv_a2.T
            ) * scale
            beta1 = inv_a1 @ (z1.T @ y_tau[:kappa])
            beta2 = inv_a2 @ (z2.T @ y_tau[kappa:])
        delta = beta2 - beta1
    value = float(delta @ np.linalg.solve(vee, delta))
    if not np.isfinite(value):
        raise np.linalg.LinAlgError("non-finite Wald value")
    return max(value, 0.0)


def _sw_statistic(kind, sample, tau, grid, config):
    """Sup-Wald statistic with singular grid points dropped."""
    shared = _sw_ingredients(kind, sample, tau, config)
    path, kept, dropped = [], [], []
    for frac, kappa in zip(grid.fractions, grid.indices):
        try:
            path.append(_sw_at(kind, sample, tau, int(kappa), shared))
            kept.append(float(frac))
        except (np.linalg.LinAlgError, ConvergenceError) as exc:
            dropped.append({"lambda": float(frac), "reason": str(exc)})
    if not path:
        raise ValueError("every break fraction was dropped as singular")
    path = np.asarray(path)
    statistic, lambda_hat = _argmax_by_lambda(path, np.asarray(kept))
    diagnostics = {"fractions": kept, "dropped": dropped}
    return statistic, lambda_hat, path, diagnostics


def _simulated_crit(family, p, eta, levels, grid_steps, reps, seed, cache_dir):
    limit_family = "BB_SUP_INF_NORM" if family == "SQ" else "BB_SUP_NORMALIZED_SQ"
    table = load_or_simulate(
        LimitProcessId(family=limit_family, p=p, eta=eta),
        grid_steps=grid_steps,
        reps=reps,
        seed=seed,
        cache_dir=cache_dir,
    )
    missing = [lv for lv in levels if lv not in table.quantiles]
    if missing:
        raise ValueError("levels %s are not tabulated" % (missing,))
    return {lv: float(table.quantiles[lv]) for lv in levels}


def wild_bootstrap_critvals(statistic_fn, sample, fit, B=199, seed=0, levels=LEVELS):
    """Fixed-regressor wild-bootstrap critical values.

    Holding the regressors fixed, responses are regenerated from the
    null fit as X theta_hat + |residual| * Rademacher sign, and the
    statistic is recomputed per draw. Draw b uses the seed sequence
    (seed, b), so results do not depend on evaluation order.
    """
    if B < 99:
        raise ValueError("B must be at least 99")
    levels = _check_levels(levels)
    design = _design_ols(sample)
    base = design @ fit.theta
    spread = np.abs(fit.residuals)
    stats = np.empty(B)
    for b in range(B):
        rng = np.random.default_rng(np.random.SeedSequence([seed, b]))
        signs = rng.integers(0, 2, sample.n) * 2 - 1
        stats[b] = statistic_fn(base + spread * signs)
    return {lv: float(np.quantile(stats, lv)) for lv in levels}


def sq_test(
    kind,
    sample,
    tau,
    grid,
    config=None,
    *,
    persistence="auto",
    routing=None,
    levels=LEVELS,
    B=199,
    seed=0,
    sim_grid_steps=2000,
    sim_reps=100_000,
    sim_seed=0,
    cache_dir=None,
):
    """Fluctuation (sup-Q) break test at a fixed quantile level.

    Critical values follow the routing table: the pivotal cases read a
    simulated Brownian-bridge sup table of dimension d_cols, the
    nonpivotal ones run a fixed-regressor wild bootstrap.
    """
    kind = _check_kind(kind)
    persistence = _check_persistence(persistence)
    levels = _check_levels(levels)
    statistic, lambda_hat, path, diagnostics = _sq_statistic(
        kind, sample, tau, grid, config
    )
    routing = DEFAULT_ROUTING if routing is None else routing
    method = routing[("SQ", kind, persistence)]
    if diagnostics.get("normalizer_fallback"):
        method = WILD_BOOTSTRAP
    if method == SIMULATED_LIMIT:
        crit = _simulated_crit(
            "SQ",
            _d_cols(kind, sample.p),
            grid.eta,
            levels,
            sim_grid_steps,
            sim_reps,
            sim_seed,
            cache_dir,
        )
    else:
        null_fit = qr_fit(sample.y, _design_ols(sample), tau)
        crit = wild_bootstrap_critvals(
            lambda y_star: _sq_statistic(
                kind, _with_response(sample, y_star), tau, grid, config
            )[0],
            sample,
            null_fit,
            B=B,
            seed=seed,
            levels=levels,
        )
    decision = {lv: bool(statistic > crit[lv]) for lv in levels}
    return BreakTestResult(
        kind="SQ-%s" % kind,
        tau=float(tau),
        statistic=statistic,
        lambda_hat=lambda_hat,
        path=path,
        crit=crit,
        crit_method=method,
        decision=decision,
        diagnostics=diagnostics,
    )


def sw_test(
    kind,
    sample,
    tau,
    grid,
    config=None,
    *,
    persistence="auto",
    routing=None,
    levels=LEVELS,
    B=199,
    seed=0,
    sim_grid_steps=2000,
    sim_reps=100_000,
    sim_seed=0,
    cache_dir=None,
):
    """Sup-Wald break test at a fixed quantile level.

    Split estimates are recomputed at every grid fraction. IVX rebuilds
    its instruments inside each regime; IVZ fits each regime on the
    corresponding rows of the full-sample instruments. Pivotal cases
    read a simulated table of sup ||BB||^2 / (lambda (1 - lambda)).
    """
    kind = _check_kind(kind)
    persistence = _check_persistence(persistence)
    levels = _check_levels(levels)
    statistic, lambda_hat, path, diagnostics = _sw_statistic(
        kind, sample, tau, grid, config
    )
    routing = DEFAULT_ROUTING if routing is None else routing
    method = routing[("SW", kind, persistence)]
    if method == SIMULATED_LIMIT:
        crit = _simulated_crit(
            "SW",
            _d_cols(kind, sample.p),
            grid.eta,
            levels,
            sim_grid_steps,
            sim_reps,
            sim_seed,
            cache_dir,
        )
    else:
        null_fit = qr_fit(sample.y, _design_ols(sample), tau)
        crit = wild_bootstrap_critvals(
            lambda y_star: _sw_statistic(
                kind, _with_response(sample, y_star), tau, grid, config
            )[0],
            sample,
            null_fit,
            B=B,
            seed=seed,
            levels=levels,
        )
    decision = {lv: bool(statistic > crit[lv]) for lv in levels}
    return BreakTestResult(
        kind="SW-%s" % kind,
        tau=float(tau),
        statistic=statistic,
        lambda_hat=lambda_hat,
        path=path,
        crit=crit,
        crit_method=method,
        decision=decision,
        diagnostics=diagnostics,
    )


def known_break_wald(kind, sample, tau, lambda0, config=None):
    """Wald test at a known break fraction; chi-square reference.

    Returns (statistic, df, p_value) with df the broken parameter count.
    """
    kind = _check_kind(kind)
    if not 0.0 < lambda0 < 1.0:
        raise ValueError("lambda0 must lie in (0, 1)")
    kappa = int(np.floor(lambda0 * sample.n))
    d = _d_cols(kind, sample.p)
    if not _feasible_kappa(kappa, sample.n, d):
        raise ValueError("break point leaves a regime too small to fit")
    shared = _sw_ingredients(kind, sample, tau, config)
    statistic = _sw_at(kind, sample, tau, kappa, shared)
    p_value = float(chi2.sf(statistic, d))
    return statistic, d, p_value


def _parse_double_kind(kind):
    if isinstance(kind, str):
        family, _, estimator = kind.partition("-")
    else:
        family, estimator = kind
    family = str(family).upper()
    if family not in STATISTIC_FAMILIES:
        raise ValueError("statistic family must be one of %s" % (STATISTIC_FAMILIES,))
    return family, _check_kind(estimator)


def double_sup_test(
    kind,
    sample,
    tau_set,
    grid,
    config=None,
    *,
    B=199,
    seed=0,
    levels=LEVELS,
):
    """Break test across a quantile set: max over tau of the fixed-tau statistic.

    The joint break-fraction/quantile limit is not tabulated, so critical
    values always come from the wild bootstrap, resampling from the
    full-sample fit at the quantile nearest the median.
    """
    family, estimator = _parse_double_kind(kind)
    taus = tuple(float(t) for t in tau_set)
    if not taus:
        raise ValueError("tau_set must be non-empty")
    if any(not 0.05 <= t <= 0.95 for t in taus):
        raise ValueError("every tau must lie in [0.05, 0.95]")
    levels = _check_levels(levels)
    stat_fn = _sq_statistic if family == "SQ" else _sw_statistic

    def per_tau(s):
        return [stat_fn(estimator, s, t, grid, config) for t in taus]

    results = per_tau(sample)
    stats = np.asarray([r[0] for r in results])
    best = int(np.argmax(stats))
    statistic = float(stats[best])
    tau_star = taus[int(np.argmin([abs(t - 0.5) for t in taus]))]
    null_fit = qr_fit(sample.y, _design_ols(sample), tau_star)
    crit = wild_bootstrap_critvals(
        lambda y_star: max(r[0] for r in per_tau(_with_response(sample, y_star))),
        sample,
        null_fit,
        B=B,
        seed=seed,
        levels=levels,
    )
    decision = {lv: bool(statistic > crit[lv]) for lv in levels}
    diagnostics = {
        "tau_statistics": {"%g" % t: float(r[0]) for t, r in zip(taus, results)},
        "tau_paths": {"%g" % t: [float(v) for v in r[2]] for t, r in zip(taus, results)},
        "fractions": results[best][3]["fractions"],
        "bootstrap_tau": tau_star,
    }
    return BreakTestResult(
        kind="%s-%s" % (family, estimator),
        tau=taus,
        statistic=statistic,
        lambda_hat=results[best][1],
        path=results[best][2],
        crit=crit,
        crit_method=WILD_BOOTSTRAP,
        decision=decision,
        diagnostics=diagnostics,
    )
