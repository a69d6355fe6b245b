"""Quantile-regression core, numpy implementation.

Fallback backend mirroring the compiled extension ``_qr_core``: a Mehrotra
predictor-corrector interior-point solve of the bounded-variable dual LP

    max y'a   s.t.   X'a = (1 - tau) X'1,   0 <= a <= 1,

whose equality multipliers recover the coefficient vector, followed by a
pivoting polish onto an optimal basic solution so that exactly d residuals
are zero and the attained objective is the exact LP optimum.
"""

from __future__ import annotations

import numpy as np

__all__ = ["solve"]

_DAMP = 0.9995


def solve(X, y, tau, gap_tol=1e-9, max_iter=100, max_pivots=0):
    """Minimize sum_t rho_tau(y_t - X_t'theta) over theta.

    Parameters
    ----------
    X : (n, d) ndarray
        Design matrix, full column rank, pre-scaled by the caller.
    y : (n,) ndarray
        Response, pre-scaled by the caller.
    tau : float
        Quantile level in (0, 1).
    gap_tol : float
        Duality-gap tolerance for the interior-point stage.
    max_iter : int
        Interior-point iteration cap.
    max_pivots : int
        Pivot cap for the vertex polish; 0 selects 10*n + 100.

    Returns
    -------
    theta : (d,) ndarray
    iterations : int
        Interior-point iterations plus polish pivots.
    status : int
        0 when the polish certifies an optimal vertex, 1 otherwise.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(np.asarray(y, dtype=np.float64).ravel())
    n, d = X.shape
    tau = float(tau)
    if max_pivots <= 0:
        max_pivots = 10 * n + 100

    beta, ip_iters = _interior_point(X, y, tau, gap_tol, max_iter)
    beta, pivots, certified = _polish(X, y, tau, beta, max_pivots)
    return beta, ip_iters + pivots, (0 if certified else 1)


def _chol_solve(M, rhs):
    # Cholesky with a ridge retry; the polish absorbs any inexactness.
    try:
        c = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        ridge = 1e-12 * (np.trace(M) / M.shape[0] + 1.0)
        c = np.linalg.cholesky(M + ridge * np.eye(M.shape[0]))
    z = np.linalg.solve(c, rhs)
    return np.linalg.solve(c.T, z)


def _max_step(v, dv, w, dw):
    # largest alpha with v + alpha dv > 0 and w + alpha dw > 0, capped at 1
    alpha = 1.0
    neg = dv < 0
    if neg.any():
        alpha = min(alpha, np.min(v[neg] / -dv[neg]))
    neg = dw < 0
    if neg.any():
        alpha = min(alpha, np.min(w[neg] / -dw[neg]))
    return alpha


def _interior_point(X, y, tau, gap_tol, max_iter):
    n, d = X.shape
    c = -y
    x = np.full(n, 1.0 - tau)
    s = np.full(n, tau)
    nu = np.linalg.lstsq(X, c, rcond=None)[0]
    r = c - X @ nu
    eps0 = max(1.0, float(np.abs(r).mean()))
    z = np.maximum(r, 0.0) + eps0
    w = z - r

    ones = np.full(n, 1.0 - tau)
    for it in range(1, max_iter + 1):
        gap = x @ z + s @ w
        if gap <= gap_tol * (1.0 + abs(c @ x)):
            return -nu, it
        xinv_z = z / x
        sinv_w = w / s
        theta = 1.0 / (xinv_z + sinv_w)
        r_p = X.T @ (ones - x)
        r_d = c - X @ nu - z + w
        r_u = 1.0 - x - s

        M = X.T @ (theta[:, None] * X)
        # affine scaling probe
        rhs_x = r_d + z - w - sinv_w * r_u
        dnu = _chol_solve(M, r_p + X.T @ (theta * rhs_x))
        dx = theta * (X @ dnu - rhs_x)
        ds = r_u - dx
        dz = -z - xinv_z * dx
        dw = -w - sinv_w * ds
        ap = _max_step(x, dx, s, ds)
        ad = _max_step(z, dz, w, dw)
        mu = gap / (2.0 * n)
        mu_aff = ((x + ap * dx) @ (z + ad * dz) + (s + ap * ds) @ (w + ad * dw)) / (2.0 * n)
        sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3 if mu > 0 else 0.0

        # corrector with second-order complementarity targets
        gxz = sigma * mu - dx * dz
        gsw = sigma * mu - ds * dw
        rhs_x = r_d + z - w - gxz / x + gsw / s - sinv_w * r_u
        dnu = _chol_solve(M, r_p + X.T @ (theta * rhs_x))
        dx = theta * (X @ dnu - rhs_x)
        ds = r_u - dx
        dz = gxz / x - z - xinv_z * dx
        dw = gsw / s - w - sinv_w * ds
        ap = _DAMP * _max_step(x, dx, s, ds)
        ad = _DAMP * _max_step(z, dz, w, dw)
        if ap < 1e-13 and ad < 1e-13:
            return -nu, it
        x += ap * dx
        s += ap * ds
        nu += ad * dnu
        z += ad * dz
        w += ad * dw
    return -nu, max_iter


def _initial_basis(X, order, d):
    # greedy selection of d independent rows, preferring small |residual|
    rows = []
    basis = []
    for i in order:
        v = X[i].astype(np.float64).copy()
        nv0 = np.linalg.norm(v)
        if nv0 == 0.0:
            continue
        for u in rows:
            v -= (u @ v) * u
        for u in rows:
            v -= (u @ v) * u
        nv = np.linalg.norm(v)
        if nv > 1e-10 * nv0:
            rows.append(v / nv)
            basis.append(i)
            if len(basis) == d:
                return np.asarray(basis, dtype=np.intp)
    return None


def _polish(X, y, tau, beta, max_pivots, ztol=1e-11):
    n, d = X.shape
    r = y - X @ beta
    basis = _initial_basis(X, np.argsort(np.abs(r), kind="stable"), d)
    if basis is None:
        return beta, 0, False

    pivots = 0
    eye = np.eye(d)
    while True:
        XB = X[basis]
        try:
            G = np.linalg.solve(XB, eye)  # columns: XB^{-1} e_j
        except np.linalg.LinAlgError:
            return beta, pivots, False
        beta = G @ y[basis]
        r = y - X @ beta
        r[basis] = 0.0
        mask = np.ones(n, dtype=bool)
        mask[basis] = False
        idx = np.nonzero(mask)[0]
        rn = r[idx]
        Q = X[idx] @ G  # Q[i, j] = x_i' g_j

        zero = np.abs(rn) <= ztol
        psi_n = np.where(zero, 0.0, tau - (rn < 0.0))
        base = Q.T @ psi_n
        if zero.any():
            Qz = Q[zero]
            posp = np.where(Qz > 0.0, Qz * (1.0 - tau), -Qz * tau).sum(axis=0)
            posm = np.where(Qz < 0.0, -Qz * (1.0 - tau), Qz * tau).sum(axis=0)
        else:
            posp = posm = np.zeros(d)
        # one-sided directional derivatives along +/- each basis direction
        dplus = (1.0 - tau) - base + posp
        dminus = tau + base + posm
        tol = 1e-11 * (1.0 + np.abs(Q).sum(axis=0))

        jp = int(np.argmin(dplus))
        jm = int(np.argmin(dminus))
        worst_p = dplus[jp] + tol[jp]
        worst_m = dminus[jm] + tol[jm]
        if worst_p >= 0.0 and worst_m >= 0.0:
            return beta, pivots, True
        if worst_p <= worst_m:
            jstar, sigma, slope = jp, 1.0, dplus[jp]
        else:
            jstar, sigma, slope = jm, -1.0, dminus[jm]

        if pivots >= max_pivots:
            return beta, pivots, False

        q = sigma * Q[:, jstar]
        with np.errstate(divide="ignore", invalid="ignore"):
            tcross = rn / q
        valid = np.isfinite(tcross) & (tcross > 0.0) & (q != 0.0)
        vidx = np.nonzero(valid)[0]
        if vidx.size == 0:
            return beta, pivots, False
        order = vidx[np.argsort(tcross[vidx], kind="stable")]
        entering = -1
        for k in order:
            slope += abs(q[k])
            if slope >= 0.0:
                entering = idx[k]
                break
        if entering < 0:
            return beta, pivots, False
        basis[jstar] = entering
        pivots += 1
