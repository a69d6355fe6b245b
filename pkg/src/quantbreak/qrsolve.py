"""Linear quantile regression with exact vertex solutions.

Check-function loss and its piecewise derivative, an interior-point solver
polished onto a basic solution (exactly d residuals are zero at the
optimum), subgradient partial sums, and sparsity (density-at-zero)
estimation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ._qr_backend import BACKEND, solve as _backend_solve

__all__ = [
    "ConvergenceError",
    "QrFit",
    "check_loss",
    "psi",
    "qr_fit",
    "subgradient_process",
    "estimate_sparsity",
]


class ConvergenceError(RuntimeError):
    """The solver could not certify an optimum within its iteration caps."""


@dataclass
class QrFit:
    """A fitted linear quantile regression.

    Attributes
    ----------
    tau : float
        Quantile level.
    theta : ndarray
        Coefficient vector (intercept first when the design carries one).
    residuals : ndarray
        y - design @ theta.
    psi_values : ndarray
        tau - 1{residual <= 0} per observation.
    sparsity : float
        Estimated error density at zero, > 0.
    objective : float
        Attained check loss, sum of check_loss(tau, residuals).
    iterations : int
        Solver iterations plus polish pivots.
    diagnostics : dict
        Solver and sparsity-estimation flags.
    """

    tau: float
    theta: np.ndarray
    residuals: np.ndarray
    psi_values: np.ndarray
    sparsity: float
    objective: float
    iterations: int
    diagnostics: dict = field(default_factory=dict)


def check_loss(tau, u):
    """Check-function loss u * (tau - 1{u < 0}); vectorized in u."""
    u = np.asarray(u, dtype=np.float64)
    return u * (tau - (u < 0.0))


def psi(tau, u):
    """Piecewise derivative of the check loss, tau - 1{u <= 0}."""
    u = np.asarray(u, dtype=np.float64)
    return tau - (u <= 0.0)


def _solve(design, y, tau, gap_tol=1e-9):
    """Raw standardized solve; returns (theta, iterations).

    Columns are scaled to unit max-abs (and y likewise) for conditioning;
    coefficients come back on the original scale. Raises ConvergenceError
    when the vertex polish cannot certify optimality.
    """
    X = np.ascontiguousarray(design, dtype=np.float64)
    yv = np.asarray(y, dtype=np.float64).ravel()
    col_scale = np.abs(X).max(axis=0)
    if np.any(col_scale == 0.0):
        raise ValueError("design has an all-zero column")
    y_scale = float(np.abs(yv).max())
    if y_scale == 0.0:
        y_scale = 1.0
    theta, iters, status = _backend_solve(
        X / col_scale, yv / y_scale, float(tau), gap_tol
    )
    if status != 0:
        raise ConvergenceError(
            "quantile regression did not certify an optimal vertex "
            "(n=%d, d=%d, tau=%g)" % (X.shape[0], X.shape[1], tau)
        )
    return theta * (y_scale / col_scale), iters


def qr_fit(y, design, tau):
    """Fit min_theta sum_t check_loss(tau, y_t - design_t' theta).

    Parameters
    ----------
    y : (n,) array_like
    design : (n, d) array_like
        Full column rank, n > d.
    tau : float
        Quantile level in (0, 1).

    Returns
    -------
    QrFit

    Raises
    ------
    ValueError
        Rank-deficient design or malformed inputs.
    ConvergenceError
        Iteration caps exhausted without a certified optimum.
    """
    X = np.ascontiguousarray(design, dtype=np.float64)
    yv = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2:
        raise ValueError("design must be 2-D")
    n, d = X.shape
    if yv.shape[0] != n:
        raise ValueError("y and design row counts differ")
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    if n <= d:
        raise ValueError("need more observations than design columns")
    if np.linalg.matrix_rank(X) < d:
        raise ValueError("design is rank deficient")

    theta, iters = _solve(X, yv, tau)
    residuals = yv - X @ theta
    fit = QrFit(
        tau=float(tau),
        theta=theta,
        residuals=residuals,
        psi_values=psi(tau, residuals),
        sparsity=np.nan,
        objective=float(np.sum(check_loss(tau, residuals))),
        iterations=iters,
        diagnostics={"backend": BACKEND},
    )
    fit.sparsity = estimate_sparsity(fit, X, diagnostics=fit.diagnostics)
    return fit


def subgradient_process(fit, design, lam):
    """Partial subgradient sum over the first floor(lam * n) observations.

    Returns sum_{t <= floor(lam n)} design_t * psi_values_t, unnormalized;
    callers apply their own scaling.
    """
    if not 0.0 < lam <= 1.0:
        raise ValueError("lam must lie in (0, 1]")
    X = np.asarray(design, dtype=np.float64)
    k = int(np.floor(lam * X.shape[0]))
    return X[:k].T @ fit.psi_values[:k]


def hall_sheather_bandwidth(n, tau, alpha=0.05):
    """Hall-Sheather bandwidth for the sparsity difference quotient."""
    z = stats.norm.ppf(1.0 - alpha / 2.0)
    zt = stats.norm.ppf(tau)
    num = 1.5 * stats.norm.pdf(zt) ** 2
    return n ** (-1.0 / 3.0) * z ** (2.0 / 3.0) * (num / (2.0 * zt ** 2 + 1.0)) ** (1.0 / 3.0)


def _kernel_density_at_zero(residuals):
    # Gaussian kernel with Silverman's bandwidth, evaluated at zero
    r = np.asarray(residuals, dtype=np.float64)
    n = r.size
    sd = float(np.std(r))
    iqr = float(np.subtract(*np.percentile(r, [75, 25])))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    if spread <= 0.0:
        spread = max(sd, 1e-6)
    b = 0.9 * spread * n ** (-0.2)
    return float(np.mean(stats.norm.pdf(r / b)) / b)


def estimate_sparsity(fit, design, diagnostics=None):
    """Estimate the residual density at zero for a fitted quantile regression.

    Hendricks-Koenker difference quotient
    f(0) = 2 h_n / (qhat(tau + h_n) - qhat(tau - h_n)) with the
    Hall-Sheather bandwidth, where qhat are fitted quantile predictions
    averaged over the sample. A non-monotone crossing (or a bandwidth
    putting tau +/- h outside (0, 1)) falls back to a Gaussian-kernel
    density of the residuals at zero with Silverman's bandwidth, flagged in
    ``diagnostics``. The result is clamped below at 1e-6.
    """
    X = np.ascontiguousarray(design, dtype=np.float64)
    n = X.shape[0]
    tau = fit.tau
    h = hall_sheather_bandwidth(n, tau)
    fallback_reason = None
    value = None
    if tau - h <= 0.0 or tau + h >= 1.0:
        fallback_reason = "bandwidth out of range"
    else:
        y_rec = X @ fit.theta + fit.residuals
        try:
            th_hi, _ = _solve(X, y_rec, tau + h)
            th_lo, _ = _solve(X, y_rec, tau - h)
            denom = float(np.mean(X @ th_hi) - np.mean(X @ th_lo))
            if denom <= 0.0:
                fallback_reason = "quantile crossing"
            else:
                value = 2.0 * h / denom
        except ConvergenceError:
            fallback_reason = "auxiliary fit did not converge"
    if fallback_reason is not None:
        value = _kernel_density_at_zero(fit.residuals)
    if diagnostics is not None:
        diagnostics["sparsity_fallback"] = fallback_reason
    return max(float(value), 1e-6)
