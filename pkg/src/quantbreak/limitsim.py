"""Simulation of limit-process critical values.

Tabulates quantiles of the limit laws the break tests route to: supremum
norms of Brownian bridges, the normalized sup-Wald law over a trimmed
window, an Ornstein-Uhlenbeck Wald functional for local-to-unity
diagnostics, and chi-square references. Tables are cached on disk as JSON
keyed by a content hash of the identifying parameters.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gammaincinv

__all__ = [
    "LimitProcessId",
    "CritTable",
    "simulate_bb_sup",
    "simulate_andrews_sup",
    "simulate_ou_wald_lur",
    "chisq_quantile",
    "load_or_simulate",
    "cache_path",
]

LEVELS = (0.90, 0.95, 0.99)

FAMILIES = ("BB_SUP_INF_NORM", "BB_SUP_NORMALIZED_SQ", "OU_WALD_LUR", "CHI_SQUARE")


@dataclass(frozen=True)
class LimitProcessId:
    """Identity of a limit process.

    eta is the trimming fraction (unused by CHI_SQUARE and by the
    untrimmed bridge supremum, where it is carried only for bookkeeping).
    c and correlation apply to the OU family: the persistence coefficients
    of the diffusion and an optional p x p cross-correlation between the
    regressor and score Brownian motions.
    """

    family: str
    p: int
    eta: float | None = None
    c: tuple | None = None
    correlation: tuple | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError("unknown limit family %r" % (self.family,))
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.eta is not None and not 0.0 < self.eta < 0.5:
            raise ValueError("eta must lie in (0, 0.5)")
        if self.c is not None:
            object.__setattr__(self, "c", tuple(float(v) for v in self.c))
        if self.correlation is not None:
            object.__setattr__(
                self,
                "correlation",
                tuple(tuple(float(v) for v in row) for row in self.correlation),
            )

    def to_payload(self):
        return {
            "family": self.family,
            "p": self.p,
            "eta": self.eta,
            "c": None if self.c is None else list(self.c),
            "correlation": None
            if self.correlation is None
            else [list(r) for r in self.correlation],
        }

    @classmethod
    def from_payload(cls, d):
        return cls(
            family=d["family"],
            p=d["p"],
            eta=d.get("eta"),
            c=None if d.get("c") is None else tuple(d["c"]),
            correlation=None
            if d.get("correlation") is None
            else tuple(tuple(r) for r in d["correlation"]),
        )


@dataclass
class CritTable:
    """Simulated quantile table for one limit process."""

    id: LimitProcessId
    grid_steps: int
    reps: int
    quantiles: dict
    seed: int
    discarded: int = 0

    def to_json_dict(self):
        return {
            "id": self.id.to_payload(),
            "grid_steps": self.grid_steps,
            "reps": self.reps,
            "seed": self.seed,
            "quantiles": {("%g" % k): v for k, v in self.quantiles.items()},
            "discarded": self.discarded,
        }

    @classmethod
    def from_json_dict(cls, d):
        return cls(
            id=LimitProcessId.from_payload(d["id"]),
            grid_steps=d["grid_steps"],
            reps=d["reps"],
            quantiles={float(k): v for k, v in d["quantiles"].items()},
            seed=d["seed"],
            discarded=d.get("discarded", 0),
        )


def _check_sim_args(grid_steps, reps):
    if grid_steps < 1000:
        raise ValueError("grid_steps must be >= 1000")
    if reps < 10_000:
        raise ValueError("reps must be >= 10000")


def _bridges(rng, n_rep, grid_steps, p):
    """Brownian bridge paths, shape (n_rep, grid_steps + 1, p).

    Endpoints are exactly zero: the bridge is W(lambda) - lambda W(1) with
    W built from scaled Gaussian increments and a prepended zero.
    """
    k = grid_steps
    inc = rng.standard_normal((n_rep, k, p)) * np.sqrt(1.0 / k)
    w = np.empty((n_rep, k + 1, p))
    w[:, 0] = 0.0
    np.cumsum(inc, axis=1, out=w[:, 1:])
    lam = np.arange(k + 1) / k
    return w - lam[None, :, None] * w[:, -1:, :]


def _batch_size(grid_steps, p, budget=6_000_000):
    # keeps each (batch, grid, p)-shaped working array near 50 MB
    return max(1, int(budget / (max(grid_steps, 1) * max(p, 1))))


def _empirical_table(stats, id_, grid_steps, reps, seed, discarded=0):
    qs = {lvl: float(np.quantile(stats, lvl)) for lvl in LEVELS}
    return CritTable(
        id=id_,
        grid_steps=grid_steps,
        reps=reps,
        quantiles=qs,
        seed=seed,
        discarded=discarded,
    )


def _segment_extrema(rng, bb, grid_steps):
    """Exact within-interval sup of |path| given the node values.

    Conditional on its endpoints a, b each interval is a Brownian bridge
    with variance dt, whose running maximum satisfies
    P(M <= x) = 1 - exp(-2(x-a)(x-b)/dt); inverting at a uniform draw
    samples the interval maximum (and, reflected, the minimum). Using
    independent draws for the two extremes overstates the joint event of
    both mattering, an O(exp(-2|a||b|/dt)) effect that is negligible
    against the O(sqrt(dt)) bias of the plain discrete maximum.
    """
    dt = 1.0 / grid_steps
    a = bb[:, :-1, :]
    b = bb[:, 1:, :]
    gap_sq = (a - b) ** 2
    u = rng.random(a.shape)
    v = rng.random(a.shape)
    top = 0.5 * (a + b + np.sqrt(gap_sq - 2.0 * dt * np.log(u)))
    bot = 0.5 * (a + b - np.sqrt(gap_sq - 2.0 * dt * np.log(v)))
    return np.maximum(top, -bot)


def simulate_bb_sup(p, eta, grid_steps=2000, reps=100_000, seed=0):
    """Quantiles of sup over [0, 1] of the max-abs coordinate of a
    p-dimensional Brownian bridge.

    The supremum is untrimmed; eta rides along in the identity only. The
    plain maximum over grid nodes understates the continuous supremum by
    about 0.58 sqrt(dt), so the within-interval extrema are sampled from
    their exact conditional law instead of being ignored.
    """
    _check_sim_args(grid_steps, reps)
    rng = np.random.default_rng(seed)
    stats = np.empty(reps)
    done = 0
    batch = _batch_size(grid_steps, p, budget=2_000_000)
    while done < reps:
        b = min(batch, reps - done)
        bb = _bridges(rng, b, grid_steps, p)
        seg = _segment_extrema(rng, bb, grid_steps)
        stats[done : done + b] = seg.max(axis=(1, 2))
        done += b
    id_ = LimitProcessId(family="BB_SUP_INF_NORM", p=p, eta=eta)
    return _empirical_table(stats, id_, grid_steps, reps, seed)


def simulate_andrews_sup(p, eta, grid_steps=2000, reps=100_000, seed=0):
    """Quantiles of sup over [eta, 1-eta] of ||BB_p(lambda)||^2 /
    (lambda(1-lambda))."""
    _check_sim_args(grid_steps, reps)
    if not 0.0 < eta < 0.5:
        raise ValueError("eta must lie in (0, 0.5)")
    rng = np.random.default_rng(seed)
    lam = np.arange(grid_steps + 1) / grid_steps
    keep = (lam >= eta) & (lam <= 1.0 - eta)
    denom = lam[keep] * (1.0 - lam[keep])
    stats = np.empty(reps)
    done = 0
    batch = _batch_size(grid_steps, p)
    while done < reps:
        b = min(batch, reps - done)
        bb = _bridges(rng, b, grid_steps, p)[:, keep, :]
        norm_sq = np.einsum("rkp,rkp->rk", bb, bb)
        stats[done : done + b] = (norm_sq / denom).max(axis=1)
        done += b
    id_ = LimitProcessId(family="BB_SUP_NORMALIZED_SQ", p=p, eta=eta)
    return _empirical_table(stats, id_, grid_steps, reps, seed)


def _ou_increments(rng, b, k, p, correlation):
    # joint (dB, dW) increments with optional cross-correlation block
    if correlation is None:
        dB = rng.standard_normal((b, k, p)) * np.sqrt(1.0 / k)
        dW = rng.standard_normal((b, k, p)) * np.sqrt(1.0 / k)
        return dB, dW
    g = np.asarray(correlation, dtype=np.float64)
    if g.shape != (p, p):
        raise ValueError("correlation must be p x p")
    cov = np.block([[np.eye(p), g], [g.T, np.eye(p)]])
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ValueError("correlation block makes the joint covariance indefinite")
    z = rng.standard_normal((b, k, 2 * p)) @ chol.T * np.sqrt(1.0 / k)
    return z[:, :, :p], z[:, :, p:]


def _ou_paths(rng, b, k, p, c, correlation):
    """Euler paths of dJ = diag(c) J dlam + dB plus the score BM W.

    Returns (J, W), each of shape (b, k + 1, p) with zero first rows.
    """
    dB, dW = _ou_increments(rng, b, k, p, correlation)
    dlam = 1.0 / k
    J = np.empty((b, k + 1, p))
    J[:, 0] = 0.0
    decay = 1.0 + np.asarray(c, dtype=np.float64) * dlam
    for t in range(k):
        J[:, t + 1] = J[:, t] * decay + dB[:, t]
    W = np.empty((b, k + 1, p))
    W[:, 0] = 0.0
    np.cumsum(dW, axis=1, out=W[:, 1:])
    return J, W


def _sigma(lam, psi):
    """Sigma(lambda) = lam (I-Psi)(I-Psi)' + (1-lam) Psi Psi', batched."""
    eye = np.eye(psi.shape[-1])
    lam = np.asarray(lam, dtype=np.float64)[..., None, None]
    i_minus = eye - psi
    return lam * (i_minus @ np.swapaxes(i_minus, -1, -2)) + (1.0 - lam) * (
        psi @ np.swapaxes(psi, -1, -2)
    )


def simulate_ou_wald_lur(
    p,
    eta,
    c,
    grid_steps=2000,
    reps=100_000,
    seed=0,
    omega=None,
    correlation=None,
):
    """Quantiles of the local-to-unity sup-Wald limit functional.

    Per replication: J follows dJ = diag(c) J dlambda + dB by Euler steps;
    J_mu is the path demeaned with its trapezoid average; stochastic
    integrals use left-point sums. With S(lambda) = int_0^lambda J_mu dJ',
    Psi(lambda) = (lambda Omega + S(lambda)) (Omega + S(1))^{-1}, the
    statistic is the sup over the trimmed grid of Delta' Sigma^{-1} Delta
    where Delta = W(lambda) - Psi(lambda) W(1) and Sigma =
    lambda (I-Psi)(I-Psi)' + (1-lambda) Psi Psi'. Omega defaults to the
    identity; no plug-in estimator is prescribed for it. Replications
    hitting a singular Sigma on the grid are discarded and counted.

    This table is a diagnostic: production inference for the LUR case uses
    the wild bootstrap because c is not identified.
    """
    _check_sim_args(grid_steps, reps)
    if not 0.0 < eta < 0.5:
        raise ValueError("eta must lie in (0, 0.5)")
    c = np.broadcast_to(np.asarray(c, dtype=np.float64).ravel(), (p,)).copy()
    om = np.eye(p) if omega is None else np.asarray(omega, dtype=np.float64)
    k = grid_steps
    dlam = 1.0 / k
    lam = np.arange(k + 1) / k
    keep = np.flatnonzero((lam >= eta) & (lam <= 1.0 - eta))
    lam_keep = lam[keep]
    eye = np.eye(p)

    rng = np.random.default_rng(seed)
    stats = np.empty(reps)
    got = 0
    discarded = 0
    batch = max(1, _batch_size(grid_steps, p * p * 4))
    # trapezoid weights over the full path
    tw = np.full(k + 1, dlam)
    tw[0] = tw[-1] = 0.5 * dlam

    while got < reps:
        b = min(batch, reps - got)
        J, W = _ou_paths(rng, b, k, p, c, correlation)
        J_mu = J - np.einsum("k,bkp->bp", tw, J)[:, None, :]
        dJ = np.diff(J, axis=1)
        # left-point integral S(lambda) as a cumulative outer-product sum
        incr = np.einsum("bkp,bkq->bkpq", J_mu[:, :-1, :], dJ)
        S = np.zeros((b, k + 1, p, p))
        np.cumsum(incr, axis=1, out=S[:, 1:])

        inv_full = np.linalg.inv(om[None] + S[:, -1])
        numer = lam[None, keep, None, None] * om[None, None] + S[:, keep]
        psi_mat = numer @ inv_full[:, None]
        delta = W[:, keep] - np.einsum("bkpq,bq->bkp", psi_mat, W[:, -1])
        sig = _sigma(lam_keep[None, :], psi_mat)
        det = np.linalg.det(sig)
        scale = np.abs(sig).max(axis=(-1, -2)) ** p
        bad = det <= 1e-13 * np.maximum(scale, 1e-300)
        bad_rep = bad.any(axis=1)
        sig[bad] = eye
        sol = np.linalg.solve(sig, delta[..., None])[..., 0]
        wald = np.einsum("bkp,bkp->bk", delta, sol)
        wald[bad] = -np.inf
        batch_stats = wald.max(axis=1)
        good = batch_stats[~bad_rep]
        take = min(good.shape[0], reps - got)
        stats[got : got + take] = good[:take]
        got += take
        discarded += int(bad_rep.sum())

    id_ = LimitProcessId(
        family="OU_WALD_LUR",
        p=p,
        eta=eta,
        c=tuple(c),
        correlation=None
        if correlation is None
        else tuple(tuple(row) for row in np.asarray(correlation)),
    )
    return _empirical_table(stats, id_, grid_steps, reps, seed, discarded=discarded)


def chisq_quantile(df, level):
    """Inverse chi-square CDF via regularized incomplete gamma inversion."""
    if df < 1:
        raise ValueError("df must be >= 1")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    return float(2.0 * gammaincinv(df / 2.0, level))


def _default_cache_dir():
    env = os.environ.get("QUANTBREAK_CACHE_DIR")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "quantbreak"


def cache_path(id_, grid_steps, reps, seed, cache_dir=None):
    """Cache file for a table: a content hash of identity and run size."""
    payload = dict(id_.to_payload(), grid_steps=grid_steps, reps=reps, seed=seed)
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    digest = hashlib.sha256(blob.encode()).hexdigest()[:24]
    base = Path(cache_dir) if cache_dir is not None else _default_cache_dir()
    return base / ("crit_%s.json" % digest)


def load_or_simulate(id_, grid_steps=2000, reps=100_000, seed=0, cache_dir=None):
    """Return the cached table for id_, simulating and caching on a miss.

    CHI_SQUARE tables are computed exactly (no simulation); grid_steps and
    reps are recorded but unused there.
    """
    path = cache_path(id_, grid_steps, reps, seed, cache_dir)
    if path.exists():
        with open(path) as fh:
            return CritTable.from_json_dict(json.load(fh))
    if id_.family == "CHI_SQUARE":
        table = CritTable(
            id=id_,
            grid_steps=grid_steps,
            reps=reps,
            quantiles={lvl: chisq_quantile(id_.p, lvl) for lvl in LEVELS},
            seed=seed,
        )
    elif id_.family == "BB_SUP_INF_NORM":
        table = simulate_bb_sup(id_.p, id_.eta, grid_steps, reps, seed)
    elif id_.family == "BB_SUP_NORMALIZED_SQ":
        table = simulate_andrews_sup(id_.p, id_.eta, grid_steps, reps, seed)
    else:
        table = simulate_ou_wald_lur(
            id_.p,
            id_.eta,
            np.asarray(id_.c, dtype=np.float64),
            grid_steps,
            reps,
            seed,
            correlation=None
            if id_.correlation is None
            else np.asarray(id_.correlation, dtype=np.float64),
        )
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(table.to_json_dict(), fh, indent=1)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return table
