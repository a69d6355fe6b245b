# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# cython: language_level=3, embedsignature=True
"""Compiled quantile-regression core.

Same algorithm as the numpy fallback ``_qr_numpy``: a Mehrotra
predictor-corrector interior-point solve of the bounded-variable dual LP,
followed by a pivoting polish onto an optimal vertex. The whole solve runs
without the GIL so threaded Monte Carlo loops scale.
"""

import numpy as np

from libc.math cimport fabs, sqrt
from libc.stdlib cimport free, malloc, qsort

cdef double DAMP = 0.9995


cdef struct KV:
    double t
    long i


cdef int _cmp_kv(const void* a, const void* b) noexcept nogil:
    cdef double ta = (<const KV*> a).t
    cdef double tb = (<const KV*> b).t
    if ta < tb:
        return -1
    if ta > tb:
        return 1
    if (<const KV*> a).i < (<const KV*> b).i:
        return -1
    if (<const KV*> a).i > (<const KV*> b).i:
        return 1
    return 0


cdef int _chol(double* M, double* L, int d) noexcept nogil:
    cdef int i, j, k
    cdef double s
    for i in range(d):
        for j in range(i + 1):
            s = M[i * d + j]
            for k in range(j):
                s -= L[i * d + k] * L[j * d + k]
            if i == j:
                if s <= 0.0:
                    return 1
                L[i * d + i] = sqrt(s)
            else:
                L[i * d + j] = s / L[j * d + j]
    return 0


cdef void _factor_spd(double* M, double* L, int d) noexcept nogil:
    # Cholesky with an escalating ridge; the polish absorbs any inexactness
    cdef int i
    cdef double tr = 0.0, ridge
    if _chol(M, L, d) == 0:
        return
    for i in range(d):
        tr += M[i * d + i]
    ridge = 1e-12 * (tr / d + 1.0)
    while True:
        for i in range(d):
            M[i * d + i] += ridge
        if _chol(M, L, d) == 0:
            return
        ridge *= 1000.0


cdef void _chol_solve(double* L, double* b, double* out, int d) noexcept nogil:
    cdef int i, k
    cdef double s
    for i in range(d):
        s = b[i]
        for k in range(i):
            s -= L[i * d + k] * out[k]
        out[i] = s / L[i * d + i]
    for i in range(d - 1, -1, -1):
        s = out[i]
        for k in range(i + 1, d):
            s -= L[k * d + i] * out[k]
        out[i] = s / L[i * d + i]


cdef int _lu_factor(double* A, int* piv, int d) noexcept nogil:
    cdef int i, j, k, pr
    cdef double mx, tmp, m
    for k in range(d):
        pr = k
        mx = fabs(A[k * d + k])
        for i in range(k + 1, d):
            if fabs(A[i * d + k]) > mx:
                mx = fabs(A[i * d + k])
                pr = i
        if mx == 0.0:
            return 1
        piv[k] = pr
        if pr != k:
            for j in range(d):
                tmp = A[k * d + j]
                A[k * d + j] = A[pr * d + j]
                A[pr * d + j] = tmp
        for i in range(k + 1, d):
            m = A[i * d + k] / A[k * d + k]
            A[i * d + k] = m
            for j in range(k + 1, d):
                A[i * d + j] -= m * A[k * d + j]
    return 0


cdef void _lu_solve(double* LU, int* piv, double* b, int d) noexcept nogil:
    cdef int i, k
    cdef double tmp, s
    # apply all row interchanges before substitution: the stored multipliers
    # sit in their final (post-swap) row positions
    for k in range(d):
        if piv[k] != k:
            tmp = b[k]
            b[k] = b[piv[k]]
            b[piv[k]] = tmp
    for k in range(d):
        for i in range(k + 1, d):
            b[i] -= LU[i * d + k] * b[k]
    for i in range(d - 1, -1, -1):
        s = b[i]
        for k in range(i + 1, d):
            s -= LU[i * d + k] * b[k]
        b[i] = s / LU[i * d + i]


cdef long _ip(double* X, double* y, long n, int d, double tau, double gap_tol,
              int max_iter, double* nu, double* wk) noexcept nogil:
    # work layout: 12 n-vectors, then 3 d-vectors, then M and L (d*d each)
    cdef double* x = wk
    cdef double* s = wk + n
    cdef double* z = wk + 2 * n
    cdef double* w = wk + 3 * n
    cdef double* th = wk + 4 * n
    cdef double* r_d = wk + 5 * n
    cdef double* r_u = wk + 6 * n
    cdef double* rhs_x = wk + 7 * n
    cdef double* dx = wk + 8 * n
    cdef double* ds = wk + 9 * n
    cdef double* dz = wk + 10 * n
    cdef double* dw = wk + 11 * n
    cdef double* r_p = wk + 12 * n
    cdef double* rhs_nu = wk + 12 * n + d
    cdef double* dnu = wk + 12 * n + 2 * d
    cdef double* M = wk + 12 * n + 3 * d
    cdef double* L = wk + 12 * n + 3 * d + d * d

    cdef long i, it
    cdef int j, k
    cdef double eps0, gap, cobj, mu, mu_aff, sigma, ap, ad, ratio, v, gxz, gsw

    # start: primal at the feasible center of the box constraints
    for i in range(n):
        x[i] = 1.0 - tau
        s[i] = tau
    # dual start from the normal equations of -y on X
    for j in range(d):
        for k in range(d):
            M[j * d + k] = 0.0
        r_p[j] = 0.0
    for i in range(n):
        for j in range(d):
            v = X[i * d + j]
            r_p[j] -= v * y[i]
            for k in range(j + 1):
                M[j * d + k] += v * X[i * d + k]
    for j in range(d):
        for k in range(j + 1, d):
            M[j * d + k] = M[k * d + j]
    _factor_spd(M, L, d)
    _chol_solve(L, r_p, nu, d)
    eps0 = 0.0
    for i in range(n):
        v = -y[i]
        for j in range(d):
            v -= X[i * d + j] * nu[j]
        r_d[i] = v
        eps0 += fabs(v)
    eps0 = eps0 / n
    if eps0 < 1.0:
        eps0 = 1.0
    for i in range(n):
        if r_d[i] > 0.0:
            z[i] = r_d[i] + eps0
        else:
            z[i] = eps0
        w[i] = z[i] - r_d[i]

    for it in range(1, max_iter + 1):
        gap = 0.0
        cobj = 0.0
        for i in range(n):
            gap += x[i] * z[i] + s[i] * w[i]
            cobj -= y[i] * x[i]
        if gap <= gap_tol * (1.0 + fabs(cobj)):
            return it
        for j in range(d):
            r_p[j] = 0.0
            for k in range(d):
                M[j * d + k] = 0.0
        for i in range(n):
            th[i] = 1.0 / (z[i] / x[i] + w[i] / s[i])
            v = -y[i]
            for j in range(d):
                v -= X[i * d + j] * nu[j]
            r_d[i] = v - z[i] + w[i]
            r_u[i] = 1.0 - x[i] - s[i]
            for j in range(d):
                r_p[j] += X[i * d + j] * ((1.0 - tau) - x[i])
                for k in range(j + 1):
                    M[j * d + k] += th[i] * X[i * d + j] * X[i * d + k]
        for j in range(d):
            for k in range(j + 1, d):
                M[j * d + k] = M[k * d + j]
        _factor_spd(M, L, d)

        # affine probe
        for i in range(n):
            rhs_x[i] = r_d[i] + z[i] - w[i] - (w[i] / s[i]) * r_u[i]
        for j in range(d):
            v = r_p[j]
            for i in range(n):
                v += X[i * d + j] * th[i] * rhs_x[i]
            rhs_nu[j] = v
        _chol_solve(L, rhs_nu, dnu, d)
        ap = 1.0
        ad = 1.0
        for i in range(n):
            v = -rhs_x[i]
            for j in range(d):
                v += X[i * d + j] * dnu[j]
            dx[i] = th[i] * v
            ds[i] = r_u[i] - dx[i]
            dz[i] = -z[i] - (z[i] / x[i]) * dx[i]
            dw[i] = -w[i] - (w[i] / s[i]) * ds[i]
            if dx[i] < 0.0:
                ratio = -x[i] / dx[i]
                if ratio < ap:
                    ap = ratio
            if ds[i] < 0.0:
                ratio = -s[i] / ds[i]
                if ratio < ap:
                    ap = ratio
            if dz[i] < 0.0:
                ratio = -z[i] / dz[i]
                if ratio < ad:
                    ad = ratio
            if dw[i] < 0.0:
                ratio = -w[i] / dw[i]
                if ratio < ad:
                    ad = ratio
        mu = gap / (2.0 * n)
        mu_aff = 0.0
        for i in range(n):
            mu_aff += (x[i] + ap * dx[i]) * (z[i] + ad * dz[i])
            mu_aff += (s[i] + ap * ds[i]) * (w[i] + ad * dw[i])
        mu_aff = mu_aff / (2.0 * n)
        if mu > 0.0:
            sigma = mu_aff / mu
            if sigma < 0.0:
                sigma = 0.0
            if sigma > 1.0:
                sigma = 1.0
            sigma = sigma * sigma * sigma
        else:
            sigma = 0.0

        # corrector with second-order complementarity targets
        for i in range(n):
            gxz = sigma * mu - dx[i] * dz[i]
            gsw = sigma * mu - ds[i] * dw[i]
            rhs_x[i] = (r_d[i] + z[i] - w[i] - gxz / x[i] + gsw / s[i]
                        - (w[i] / s[i]) * r_u[i])
            dz[i] = gxz / x[i]
            dw[i] = gsw / s[i]
        for j in range(d):
            v = r_p[j]
            for i in range(n):
                v += X[i * d + j] * th[i] * rhs_x[i]
            rhs_nu[j] = v
        _chol_solve(L, rhs_nu, dnu, d)
        ap = 1.0
        ad = 1.0
        for i in range(n):
            v = -rhs_x[i]
            for j in range(d):
                v += X[i * d + j] * dnu[j]
            dx[i] = th[i] * v
            ds[i] = r_u[i] - dx[i]
            dz[i] = dz[i] - z[i] - (z[i] / x[i]) * dx[i]
            dw[i] = dw[i] - w[i] - (w[i] / s[i]) * ds[i]
            if dx[i] < 0.0:
                ratio = -x[i] / dx[i]
                if ratio < ap:
                    ap = ratio
            if ds[i] < 0.0:
                ratio = -s[i] / ds[i]
                if ratio < ap:
                    ap = ratio
            if dz[i] < 0.0:
                ratio = -z[i] / dz[i]
                if ratio < ad:
                    ad = ratio
            if dw[i] < 0.0:
                ratio = -w[i] / dw[i]
                if ratio < ad:
                    ad = ratio
        ap = DAMP * ap
        ad = DAMP * ad
        if ap > 1.0:
            ap = 1.0
        if ad > 1.0:
            ad = 1.0
        if ap < 1e-13 and ad < 1e-13:
            return it
        for i in range(n):
            x[i] += ap * dx[i]
            s[i] += ap * ds[i]
            z[i] += ad * dz[i]
            w[i] += ad * dw[i]
        for j in range(d):
            nu[j] += ad * dnu[j]
    return max_iter


cdef int _initial_basis(double* X, long n, int d, KV* kv, double* ortho,
                        double* tmp, long* basis) noexcept nogil:
    # greedy pick of d independent rows following the kv order
    cdef int nb = 0, j, k, rep
    cdef long ii, i
    cdef double nv0, nv, dot
    for ii in range(n):
        i = kv[ii].i
        nv0 = 0.0
        for j in range(d):
            tmp[j] = X[i * d + j]
            nv0 += tmp[j] * tmp[j]
        nv0 = sqrt(nv0)
        if nv0 == 0.0:
            continue
        for rep in range(2):
            for k in range(nb):
                dot = 0.0
                for j in range(d):
                    dot += ortho[k * d + j] * tmp[j]
                for j in range(d):
                    tmp[j] -= dot * ortho[k * d + j]
        nv = 0.0
        for j in range(d):
            nv += tmp[j] * tmp[j]
        nv = sqrt(nv)
        if nv > 1e-10 * nv0:
            for j in range(d):
                ortho[nb * d + j] = tmp[j] / nv
            basis[nb] = i
            nb += 1
            if nb == d:
                return 0
    return 1


cdef int _polish(double* X, double* y, long n, int d, double tau,
                 long max_pivots, double* beta, double* wk, long* lbuf,
                 int* piv, KV* kv, long* pivots) noexcept nogil:
    cdef double ztol = 1e-11
    cdef double* r = wk
    cdef double* Q = wk + n
    cdef double* XB = wk + n + n * d
    cdef double* G = XB + d * d
    cdef double* ortho = G + d * d
    cdef double* col = ortho + d * d
    cdef double* base = col + d
    cdef double* posp = base + d
    cdef double* posm = posp + d
    cdef double* abscol = posm + d
    cdef double* dplus = abscol + d
    cdef double* dminus = dplus + d
    cdef long* basis = lbuf
    cdef long* inb = lbuf + d

    cdef long i, nc, kk, entering
    cdef int j, k, jstar, jp, jm
    cdef double v, q, worst_p, worst_m, sgn, slope, psi_i, tolj

    pivots[0] = 0
    for i in range(n):
        v = y[i]
        for j in range(d):
            v -= X[i * d + j] * beta[j]
        kv[i].t = fabs(v)
        kv[i].i = i
    qsort(kv, n, sizeof(KV), _cmp_kv)
    if _initial_basis(X, n, d, kv, ortho, col, basis):
        return 1

    while True:
        for j in range(d):
            for k in range(d):
                XB[j * d + k] = X[basis[j] * d + k]
        if _lu_factor(XB, piv, d):
            return 1
        for j in range(d):
            for k in range(d):
                col[k] = 1.0 if k == j else 0.0
            _lu_solve(XB, piv, col, d)
            for k in range(d):
                G[k * d + j] = col[k]
        for j in range(d):
            v = 0.0
            for k in range(d):
                v += G[j * d + k] * y[basis[k]]
            beta[j] = v
        for i in range(n):
            inb[i] = 0
        for j in range(d):
            inb[basis[j]] = 1
        for j in range(d):
            base[j] = 0.0
            posp[j] = 0.0
            posm[j] = 0.0
            abscol[j] = 0.0
        for i in range(n):
            if inb[i]:
                r[i] = 0.0
                continue
            v = y[i]
            for j in range(d):
                v -= X[i * d + j] * beta[j]
            r[i] = v
            psi_i = tau - (1.0 if v < 0.0 else 0.0)
            for j in range(d):
                q = 0.0
                for k in range(d):
                    q += X[i * d + k] * G[k * d + j]
                Q[i * d + j] = q
                abscol[j] += fabs(q)
                if fabs(v) <= ztol:
                    if q > 0.0:
                        posp[j] += q * (1.0 - tau)
                        posm[j] += q * tau
                    elif q < 0.0:
                        posp[j] -= q * tau
                        posm[j] -= q * (1.0 - tau)
                else:
                    base[j] += q * psi_i

        jp = 0
        jm = 0
        for j in range(d):
            dplus[j] = (1.0 - tau) - base[j] + posp[j]
            dminus[j] = tau + base[j] + posm[j]
            if dplus[j] < dplus[jp]:
                jp = j
            if dminus[j] < dminus[jm]:
                jm = j
        worst_p = dplus[jp] + 1e-11 * (1.0 + abscol[jp])
        worst_m = dminus[jm] + 1e-11 * (1.0 + abscol[jm])
        if worst_p >= 0.0 and worst_m >= 0.0:
            return 0
        if worst_p <= worst_m:
            jstar = jp
            sgn = 1.0
            slope = dplus[jp]
        else:
            jstar = jm
            sgn = -1.0
            slope = dminus[jm]

        if pivots[0] >= max_pivots:
            return 1

        nc = 0
        for i in range(n):
            if inb[i]:
                continue
            q = sgn * Q[i * d + jstar]
            if q == 0.0:
                continue
            v = r[i] / q
            if v > 0.0:
                kv[nc].t = v
                kv[nc].i = i
                nc += 1
        if nc == 0:
            return 1
        qsort(kv, nc, sizeof(KV), _cmp_kv)
        entering = -1
        for kk in range(nc):
            i = kv[kk].i
            slope += fabs(sgn * Q[i * d + jstar])
            if slope >= 0.0:
                entering = i
                break
        if entering < 0:
            return 1
        basis[jstar] = entering
        pivots[0] += 1


def solve(X, y, double tau, double gap_tol=1e-9, int max_iter=100,
          long max_pivots=0):
    """Minimize sum_t rho_tau(y_t - X_t'theta); see the numpy twin for details.

    Returns (theta, iterations, status); status 0 means the polish certified
    an optimal vertex.
    """
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[::1] yv = np.ascontiguousarray(
        np.asarray(y, dtype=np.float64).ravel())
    cdef long n = Xv.shape[0]
    cdef int d = <int> Xv.shape[1]
    if yv.shape[0] != n:
        raise ValueError("X and y length mismatch")
    if max_pivots <= 0:
        max_pivots = 10 * n + 100

    theta_arr = np.empty(d, dtype=np.float64)
    cdef double[::1] theta = theta_arr
    cdef long ip_need = 12 * n + 3 * d + 2 * d * d
    cdef long pol_need = n + n * d + 3 * d * d + 7 * d
    cdef long need = ip_need if ip_need > pol_need else pol_need
    cdef double* wk = <double*> malloc(need * sizeof(double))
    cdef long* lbuf = <long*> malloc((n + d) * sizeof(long))
    cdef int* piv = <int*> malloc(d * sizeof(int))
    cdef KV* kv = <KV*> malloc(n * sizeof(KV))
    if wk == NULL or lbuf == NULL or piv == NULL or kv == NULL:
        free(wk)
        free(lbuf)
        free(piv)
        free(kv)
        raise MemoryError
    cdef long iters = 0, pivots = 0
    cdef int fail, jj
    try:
        with nogil:
            iters = _ip(&Xv[0, 0], &yv[0], n, d, tau, gap_tol, max_iter,
                        &theta[0], wk)
            for jj in range(d):
                # the IP writes nu; the coefficient vector is -nu
                theta[jj] = -theta[jj]
            fail = _polish(&Xv[0, 0], &yv[0], n, d, tau, max_pivots,
                           &theta[0], wk, lbuf, piv, kv, &pivots)
    finally:
        free(wk)
        free(lbuf)
        free(piv)
        free(kv)
    return theta_arr, int(iters + pivots), int(fail)
