"""Instrumented quantile regression for persistent covariates.

A mildly integrated instrument is built from the regressor first
differences, the response is dequantiled with the full-sample intercept at
tau, and the slope is estimated either by exact quantile regression on the
instruments (IVZ) or by driving the instrumented first-order condition to
zero (IVX). A self-normalized Wald statistic with a chi-square limit tests
linear restrictions on the slope.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.signal import lfilter
from scipy.stats import chi2

from .qrsolve import QrFit, check_loss, estimate_sparsity, psi, qr_fit, subgradient_process

__all__ = [
    "IvxConfig",
    "IvxFit",
    "build_instruments",
    "dequantile",
    "ivz_fit",
    "ivx_fit",
    "predictability_wald",
]


@dataclass
class IvxConfig:
    """Instrument recursion parameters.

    c_z holds the p instrument persistence coefficients, each < 0 in
    statistical use (0 only as a degenerate testing value), and gamma_z the
    mild-integration exponent in (0, 1). The default working values are
    c_z = -1 per coordinate and gamma_z = 0.95.
    """

    c_z: np.ndarray
    gamma_z: float = 0.95

    def __post_init__(self):
        self.c_z = np.atleast_1d(np.asarray(self.c_z, dtype=np.float64))
        if np.any(self.c_z > 0.0):
            raise ValueError("instrument persistence coefficients must be <= 0")
        if not 0.0 < self.gamma_z < 1.0:
            raise ValueError("gamma_z must lie in (0, 1)")

    @classmethod
    def default(cls, p):
        return cls(c_z=-np.ones(int(p)), gamma_z=0.95)

    def to_json_dict(self):
        return {"c_z": self.c_z.tolist(), "gamma_z": self.gamma_z}

    @classmethod
    def from_json_dict(cls, d):
        return cls(c_z=np.asarray(d["c_z"], dtype=np.float64), gamma_z=d["gamma_z"])


@dataclass
class IvxFit:
    """Result of an instrumented quantile fit.

    foc_norm is the Euclidean norm of sum_t z_{t-1} psi_tau(residual_t) at
    the solution. method tags the estimator ("IVX" or "IVZ"). diagnostics
    carries the tolerance and convergence flag for IVX fits.
    """

    tau: float
    beta: np.ndarray
    alpha_hat: float
    residuals: np.ndarray
    psi_values: np.ndarray
    sparsity: float
    foc_norm: float
    method: str
    diagnostics: dict = field(default_factory=dict)


def build_instruments(x_lagged, config):
    """Mildly integrated instrument series aligned with x_lagged.

    Runs z_t = R z_{t-1} + (x_t - x_{t-1}) with z_0 = 0 and
    R = I + diag(c_z)/n^gamma_z, so z_t equals the weighted difference sum
    sum_{j=0}^{t-1} R^j (x_{t-j} - x_{t-j-1}). Row t of the output holds
    z_{t-1}, pairing with the x_{t-1} in row t of x_lagged; the first row
    is zero.
    """
    x_lagged = np.atleast_2d(np.asarray(x_lagged, dtype=np.float64))
    n, p = x_lagged.shape
    if config.c_z.shape[0] != p:
        raise ValueError("c_z length must match regressor count")
    r = 1.0 + config.c_z / float(n) ** config.gamma_z
    dx = np.zeros_like(x_lagged)
    dx[1:] = np.diff(x_lagged, axis=0)
    out = np.empty_like(x_lagged)
    for i in range(p):
        out[:, i] = lfilter([1.0], [1.0, -r[i]], dx[:, i])
    return out


def dequantile(y, sample, tau):
    """Remove the full-sample quantile intercept from y.

    Fits y on (1, x_lagged) at tau and returns (y - alpha_hat, alpha_hat)
    with alpha_hat the fitted intercept.
    """
    if not sample.has_intercept:
        raise ValueError("dequantiling requires an intercept in the model")
    y = np.asarray(y, dtype=np.float64).ravel()
    design = np.column_stack([np.ones(sample.n), sample.x_lagged])
    fit = qr_fit(y, design, tau)
    alpha_hat = float(fit.theta[0])
    return y - alpha_hat, alpha_hat


def _foc(beta, y_tau, x_lagged, instruments, tau):
    resid = y_tau - x_lagged @ beta
    return instruments.T @ psi(tau, resid)


def _dequantiled_sparsity(tau, beta, residuals, design, diagnostics):
    # the difference quotient needs an intercept column to express the
    # quantile shift of a dequantiled response, so augment the design
    n = design.shape[0]
    aug = np.column_stack([np.ones(n), design])
    shadow = QrFit(
        tau=tau,
        theta=np.concatenate([[0.0], beta]),
        residuals=residuals,
        psi_values=psi(tau, residuals),
        sparsity=None,
        objective=float(np.sum(check_loss(tau, residuals))),
        iterations=0,
    )
    return estimate_sparsity(shadow, aug, diagnostics=diagnostics)


def ivz_fit(y_tau, instruments, tau, alpha_hat=0.0):
    """Exact quantile regression of the dequantiled response on the
    instruments.

    The slope solves the convex program directly, so the subgradient bound
    of qr_fit applies with the instruments as design.
    """
    instruments = np.atleast_2d(np.asarray(instruments, dtype=np.float64))
    fit = qr_fit(y_tau, instruments, tau)
    foc = subgradient_process(fit, instruments, 1.0)
    diagnostics = dict(fit.diagnostics)
    sparsity = _dequantiled_sparsity(
        fit.tau, fit.theta, fit.residuals, instruments, diagnostics
    )
    return IvxFit(
        tau=fit.tau,
        beta=fit.theta,
        alpha_hat=float(alpha_hat),
        residuals=fit.residuals,
        psi_values=fit.psi_values,
        sparsity=sparsity,
        foc_norm=float(np.linalg.norm(foc)),
        method="IVZ",
        diagnostics=diagnostics,
    )


def _nm_simplex(x0, scale):
    p = x0.shape[0]
    simplex = np.tile(x0, (p + 1, 1))
    for i in range(p):
        simplex[i + 1, i] += 0.5 * scale[i]
    return simplex


def ivx_fit(y_tau, x_lagged, instruments, tau, alpha_hat=0.0):
    """Drive the instrumented first-order condition toward zero in beta.

    Minimizes ||sum_t z_{t-1} psi_tau(y_t(tau) - x_{t-1}'beta)||^2 by
    Nelder-Mead from the plain no-intercept quantile estimate, restarting
    from the IVZ slope if needed. The objective is piecewise constant, so
    success means foc_norm <= sqrt(p) * max_t ||z_{t-1}||_inf, the largest
    jump a single observation can produce. Both starts failing leaves
    diagnostics["converged"] False with the best candidate retained.
    """
    y_tau = np.asarray(y_tau, dtype=np.float64).ravel()
    x_lagged = np.atleast_2d(np.asarray(x_lagged, dtype=np.float64))
    instruments = np.atleast_2d(np.asarray(instruments, dtype=np.float64))
    n, p = x_lagged.shape
    if instruments.shape != (n, p) or y_tau.shape[0] != n:
        raise ValueError("y_tau, x_lagged, and instruments must conform")
    tol = float(np.sqrt(p) * np.max(np.abs(instruments))) if n else 0.0
    col_peak = np.max(np.abs(instruments), axis=0)
    degenerate = bool(np.any(col_peak == 0.0))

    def objective(beta):
        g = _foc(beta, y_tau, x_lagged, instruments, tau)
        return float(g @ g)

    x_peak = np.max(np.abs(x_lagged), axis=0)
    y_peak = max(np.max(np.abs(y_tau)), 1e-12)
    scale = np.where(x_peak > 0.0, y_peak / np.maximum(x_peak, 1e-12), 1.0)

    def polish(start):
        res = minimize(
            objective,
            start,
            method="Nelder-Mead",
            options={
                "initial_simplex": _nm_simplex(start, scale),
                "xatol": 1e-8 * max(float(np.max(scale)), 1.0),
                "fatol": 1e-12,
                "maxiter": 400 * p,
                "maxfev": 400 * p,
            },
        )
        return np.asarray(res.x, dtype=np.float64)

    starts_tried = []
    candidates = []
    start1 = qr_fit(y_tau, x_lagged, tau).theta
    starts_tried.append("plain-qr")
    beta1 = polish(start1)
    candidates.append(beta1)
    best = min(candidates, key=objective)
    if np.sqrt(objective(best)) > tol and not degenerate:
        try:
            start2 = qr_fit(y_tau, instruments, tau).theta
        except ValueError:
            start2 = None
        if start2 is not None:
            starts_tried.append("ivz")
            candidates.append(polish(start2))
            best = min(candidates, key=objective)

    foc_norm = float(np.sqrt(objective(best)))
    resid = y_tau - x_lagged @ best
    psi_vals = psi(tau, resid)
    converged = foc_norm <= tol and not degenerate
    diagnostics = {
        "foc_tol": tol,
        "converged": converged,
        "starts_tried": starts_tried,
    }
    if degenerate:
        diagnostics["failure_reason"] = "degenerate instrument column"
    sparsity = _dequantiled_sparsity(tau, best, resid, x_lagged, diagnostics)
    return IvxFit(
        tau=float(tau),
        beta=best,
        alpha_hat=float(alpha_hat),
        residuals=resid,
        psi_values=psi_vals,
        sparsity=sparsity,
        foc_norm=foc_norm,
        method="IVX",
        diagnostics=diagnostics,
    )


def predictability_wald(fit, x_lagged, instruments, R, q):
    """Self-normalized Wald test of R beta = q.

    statistic = [f^2/(tau(1-tau))] (R beta - q)' [R A^{-1} R']^{-1}
    (R beta - q) with A = (X'Z)(Z'Z)^{-1}(Z'X) for IVX fits and A = Z'Z
    for IVZ fits; the p-value comes from chi-square with r degrees of
    freedom.
    """
    x_lagged = np.atleast_2d(np.asarray(x_lagged, dtype=np.float64))
    instruments = np.atleast_2d(np.asarray(instruments, dtype=np.float64))
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    q = np.atleast_1d(np.asarray(q, dtype=np.float64))
    r, p = R.shape
    if q.shape[0] != r or fit.beta.shape[0] != p:
        raise ValueError("restriction dimensions do not conform")
    zz = instruments.T @ instruments
    if fit.method == "IVZ":
        a = zz
    else:
        xz = x_lagged.T @ instruments
        try:
            a = xz @ np.linalg.solve(zz, xz.T)
        except np.linalg.LinAlgError:
            raise ValueError("singular instrument Gram matrix in Wald statistic")
    try:
        middle = R @ np.linalg.solve(a, R.T)
        dev = R @ fit.beta - q
        inner = np.linalg.solve(middle, dev)
    except np.linalg.LinAlgError:
        raise ValueError("singular covariance in Wald statistic")
    tau = fit.tau
    statistic = float(fit.sparsity**2 / (tau * (1.0 - tau)) * (dev @ inner))
    statistic = max(statistic, 0.0)
    return statistic, r, float(chi2.sf(statistic, r))
