"""Simulation of predictive-regression samples with persistent covariates.

Regressors follow x_t = (I + C/n^gamma_x) x_{t-1} + v_t: a local-to-unity
array when gamma_x = 1 (LUR) and a mildly integrated one when
0 < gamma_x < 1 (MI). Innovations (u_t, v_t') are jointly Gaussian with an
optional finite moving-average filter on v.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

__all__ = [
    "PersistenceSpec",
    "InnovationSpec",
    "Sample",
    "BreakScenario",
    "gen_innovations",
    "gen_regressors",
    "gen_sample",
]


@dataclass
class PersistenceSpec:
    """Local-to-unity law of the regressors.

    Attributes
    ----------
    gamma_x : float
        Exponent in (0, 1]; 1 gives the LUR class, below 1 the MI class.
    c : ndarray
        p persistence coefficients, each <= 0 (0 only as the degenerate
        unit-root test case).
    persistence_class : str
        "LUR" or "MI"; derived from gamma_x when omitted. Serialized under
        the JSON key "class".
    """

    gamma_x: float
    c: np.ndarray
    persistence_class: str = ""

    def __post_init__(self):
        self.c = np.atleast_1d(np.asarray(self.c, dtype=np.float64))
        if not 0.0 < self.gamma_x <= 1.0:
            raise ValueError("gamma_x must lie in (0, 1]")
        if np.any(self.c > 0.0):
            raise ValueError("persistence coefficients must be <= 0")
        derived = "LUR" if self.gamma_x == 1.0 else "MI"
        if not self.persistence_class:
            self.persistence_class = derived
        elif self.persistence_class != derived:
            raise ValueError(
                "persistence_class %r inconsistent with gamma_x=%g"
                % (self.persistence_class, self.gamma_x)
            )

    @property
    def p(self):
        return self.c.shape[0]

    def to_json_dict(self):
        return {
            "gamma_x": self.gamma_x,
            "c": self.c.tolist(),
            "class": self.persistence_class,
        }

    @classmethod
    def from_json_dict(cls, d):
        return cls(
            gamma_x=d["gamma_x"],
            c=np.asarray(d["c"], dtype=np.float64),
            persistence_class=d.get("class", ""),
        )


@dataclass
class InnovationSpec:
    """Joint law of the model innovations (u_t, v_t').

    sigma_uu is the variance of u_t, rho the p covariances between u_t and
    v_t, sigma_vv the p x p covariance of v_t. The stacked (p+1) x (p+1)
    covariance must be positive definite. ma_weights optionally filters v
    through a finite moving average v_t = sum_j phi_j eps_{t-j} with
    phi_0 = ma_weights[0].
    """

    sigma_uu: float
    rho: np.ndarray
    sigma_vv: np.ndarray
    ma_weights: list | None = None

    def __post_init__(self):
        self.rho = np.atleast_1d(np.asarray(self.rho, dtype=np.float64))
        self.sigma_vv = np.atleast_2d(np.asarray(self.sigma_vv, dtype=np.float64))
        if self.sigma_vv.shape != (self.p, self.p):
            raise ValueError("sigma_vv must be p x p")
        if self.ma_weights is not None:
            self.ma_weights = [
                np.atleast_2d(np.asarray(w, dtype=np.float64)) for w in self.ma_weights
            ]
            for w in self.ma_weights:
                if w.shape != (self.p, self.p):
                    raise ValueError("each MA weight must be p x p")

    @property
    def p(self):
        return self.rho.shape[0]

    def stacked_cov(self):
        """The (p+1) x (p+1) innovation covariance, u first."""
        p = self.p
        cov = np.empty((p + 1, p + 1))
        cov[0, 0] = self.sigma_uu
        cov[0, 1:] = self.rho
        cov[1:, 0] = self.rho
        cov[1:, 1:] = self.sigma_vv
        return cov

    def to_json_dict(self):
        return {
            "sigma_uu": self.sigma_uu,
            "rho": self.rho.tolist(),
            "sigma_vv": self.sigma_vv.tolist(),
            "ma_weights": None
            if self.ma_weights is None
            else [w.tolist() for w in self.ma_weights],
        }

    @classmethod
    def from_json_dict(cls, d):
        return cls(
            sigma_uu=d["sigma_uu"],
            rho=np.asarray(d["rho"], dtype=np.float64),
            sigma_vv=np.asarray(d["sigma_vv"], dtype=np.float64),
            ma_weights=d.get("ma_weights"),
        )


@dataclass
class Sample:
    """Aligned (y_t, x_{t-1}) observation panel.

    Row t of x_lagged holds x_{t-1}; the first row is the initialization
    value x_0. has_intercept indicates that the regression model carries an
    intercept column (the DGP includes alpha).
    """

    y: np.ndarray
    x_lagged: np.ndarray
    has_intercept: bool
    n: int
    p: int

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64).ravel()
        self.x_lagged = np.atleast_2d(np.asarray(self.x_lagged, dtype=np.float64))
        if self.x_lagged.shape[0] != self.y.shape[0]:
            raise ValueError("x_lagged row count must equal len(y)")
        if (self.n, self.p) != self.x_lagged.shape:
            raise ValueError("n, p inconsistent with x_lagged shape")


@dataclass
class BreakScenario:
    """Regime parameters (alpha, beta') with an optional break fraction.

    lambda0 absent means the null scenario; regime 2 starts at
    t = floor(lambda0 * n) + 1 otherwise.
    """

    theta1: np.ndarray
    theta2: np.ndarray | None = None
    lambda0: float | None = None

    def __post_init__(self):
        self.theta1 = np.atleast_1d(np.asarray(self.theta1, dtype=np.float64))
        if self.theta2 is None:
            self.theta2 = self.theta1.copy()
        else:
            self.theta2 = np.atleast_1d(np.asarray(self.theta2, dtype=np.float64))
        if self.theta2.shape != self.theta1.shape:
            raise ValueError("theta1 and theta2 must have equal length")
        if self.lambda0 is not None and not 0.0 < self.lambda0 < 1.0:
            raise ValueError("lambda0 must lie in (0, 1)")
        if self.lambda0 is None and not np.array_equal(self.theta1, self.theta2):
            raise ValueError("null scenario (no lambda0) requires theta1 == theta2")

    @property
    def is_null(self):
        return self.lambda0 is None or np.array_equal(self.theta1, self.theta2)

    def to_json_dict(self):
        return {
            "theta1": self.theta1.tolist(),
            "theta2": self.theta2.tolist(),
            "lambda0": self.lambda0,
        }

    @classmethod
    def from_json_dict(cls, d):
        return cls(
            theta1=np.asarray(d["theta1"], dtype=np.float64),
            theta2=None if d.get("theta2") is None else np.asarray(d["theta2"]),
            lambda0=d.get("lambda0"),
        )


def gen_innovations(spec, n, seed):
    """Draw n rows of (u_t, v_t') from the specified joint Gaussian law.

    Returns (u, V) with u of shape (n,) and V of shape (n, p). With MA
    weights, V is the filtered series v_t = sum_j phi_j eps_{t-j} using a
    presample of eps draws so every v_t has a full window; u stays aligned
    with the contemporaneous eps_t. Deterministic given seed.
    """
    cov = spec.stacked_cov()
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ValueError("stacked innovation covariance is not positive definite")
    rng = np.random.default_rng(seed)
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    pre = 0 if spec.ma_weights is None else len(spec.ma_weights) - 1
    draws = rng.standard_normal((n + pre, cov.shape[0])) @ chol.T
    u = draws[pre:, 0].copy()
    eps = draws[:, 1:]
    if spec.ma_weights is None:
        return u, eps.copy()
    V = np.zeros((n, spec.p))
    for j, w in enumerate(spec.ma_weights):
        V += eps[pre - j : pre - j + n] @ w.T
    return u, V


def gen_regressors(spec, V, x0):
    """Run x_t = (I + diag(c)/n^gamma_x) x_{t-1} + v_t from x_0 = x0.

    V holds the innovations v_1..v_n row-wise; the returned array holds
    x_1..x_n row-wise.
    """
    V = np.atleast_2d(np.asarray(V, dtype=np.float64))
    n, p = V.shape
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    if x0.shape[0] != p:
        raise ValueError("x0 length must match regressor count")
    if p != spec.p:
        raise ValueError("V column count must match persistence spec")
    phi = 1.0 + spec.c / float(n) ** spec.gamma_x
    out = np.empty((n, p))
    for i in range(p):
        out[:, i] = lfilter([1.0], [1.0, -phi[i]], V[:, i])
        if x0[i] != 0.0:
            out[:, i] += x0[i] * phi[i] ** np.arange(1, n + 1)
    return out


def gen_sample(scenario, persistence, innov, n, seed, x0=None):
    """Assemble a Sample from the regime scenario and the two laws.

    y_t = (alpha1 + beta1' x_{t-1}) 1{t <= k} + (alpha2 + beta2' x_{t-1})
    1{t > k} + u_t with k = floor(lambda0 * n); a null scenario uses the
    first regime throughout.
    """
    p = persistence.p
    if scenario.theta1.shape[0] != p + 1:
        raise ValueError("scenario parameters must have length p + 1")
    if innov.p != p:
        raise ValueError("innovation and persistence dimensions differ")
    if x0 is None:
        x0 = np.zeros(p)
    u, V = gen_innovations(innov, n, seed)
    x = gen_regressors(persistence, V, x0)
    x_lagged = np.vstack([np.asarray(x0, dtype=np.float64)[None, :], x[:-1]])
    mean1 = scenario.theta1[0] + x_lagged @ scenario.theta1[1:]
    if scenario.lambda0 is None:
        y = mean1 + u
    else:
        k = int(np.floor(scenario.lambda0 * n))
        mean2 = scenario.theta2[0] + x_lagged @ scenario.theta2[1:]
        t = np.arange(1, n + 1)
        y = np.where(t <= k, mean1, mean2) + u
    return Sample(y=y, x_lagged=x_lagged, has_intercept=True, n=int(n), p=p)
