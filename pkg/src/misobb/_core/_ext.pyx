# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled centering and grid kernels.

Same algorithms and return conventions as :mod:`._fallback`; block
factorizations go through LAPACK.
"""

import numpy as np
from ._fallback import singular_direction

from libc.math cimport INFINITY, fabs, isfinite, log, log1p, pow
from scipy.linalg.cython_lapack cimport dpotrf, dpotri, dpotrs

OK, MAX_ITER, STALL = 0, 1, 2
cdef double FTOL = 16.0 * 2.220446049250313e-16  # roundoff allowance in the Armijo test


cdef class _Packed:
    cdef Py_ssize_t n, mT, mG, nb, pmax, d, nu
    cdef double alpha, rate_floor
    cdef double[::1] c, t0, denom, weights, h, bw
    cdef double[:, ::1] T, G
    cdef Py_ssize_t[:, ::1] idx
    cdef Py_ssize_t[::1] user, bobj, bdim
    cdef double[:, :, :, ::1] F
    cdef double[:, :, ::1] R0
    # work
    cdef double[::1] s, a, r, d1, d2, v, ye
    cdef double[:, ::1] R, Hw
    cdef double[:, :, ::1] B

    def __init__(self, prob):
        self.n = prob.n
        self.c = prob.c
        self.T = prob.T
        self.t0 = prob.t0
        self.denom = prob.denom
        self.user = prob.user.astype(np.intp)
        self.weights = prob.weights
        self.alpha = prob.alpha
        self.rate_floor = prob.rate_floor
        self.G = prob.G
        self.h = prob.h
        self.idx = prob.idx.astype(np.intp)
        self.F = prob.F
        self.R0 = prob.R0
        self.bw = prob.bw
        self.bobj = prob.bobj.astype(np.intp)
        self.bdim = prob.bdim.astype(np.intp)
        self.mT = prob.T.shape[0]
        self.mG = prob.G.shape[0]
        self.nb = prob.idx.shape[0]
        self.pmax = prob.idx.shape[1]
        self.d = prob.R0.shape[1] if self.nb else 1
        self.nu = prob.weights.shape[0]
        self.s = np.zeros(self.mT)
        self.a = np.zeros(self.mT)
        self.r = np.zeros(max(self.nu, 1))
        self.d1 = np.zeros(max(self.nu, 1))
        self.d2 = np.zeros(max(self.nu, 1))
        self.v = np.zeros(self.n)
        self.ye = np.zeros(self.n + 1)
        self.R = np.zeros((self.d, self.d))
        self.Hw = np.zeros((self.n, self.n))
        self.B = np.zeros((self.pmax, self.d, self.d))

    cdef bint _signals(self, const double[::1] y) noexcept:
        cdef Py_ssize_t i, j
        cdef double acc
        for i in range(self.mT):
            acc = self.t0[i]
            for j in range(self.n):
                acc += self.T[i, j] * y[j]
            self.s[i] = acc
            if self.denom[i] + acc <= 0:
                return False
        return True

    cdef double _rate_value(self) noexcept:
        cdef Py_ssize_t u, i
        cdef double val = 0.0, rf, f
        if self.mT == 0:
            return 0.0
        for u in range(self.nu):
            self.r[u] = 0.0
        for i in range(self.mT):
            self.r[self.user[i]] += log1p(self.s[i] / self.denom[i])
        for u in range(self.nu):
            rf = self.r[u]
            if self.alpha >= 1 and rf < self.rate_floor:
                rf = self.rate_floor
            if self.alpha == 0:
                f = rf
            elif self.alpha == 1:
                f = log(rf)
            else:
                f = pow(rf, 1.0 - self.alpha) / (1.0 - self.alpha)
            val -= self.weights[u] * f
        return val

    cdef int _block(self, Py_ssize_t b) noexcept:
        """Build R_b in ``self.R`` and Cholesky-factor it; returns LAPACK info."""
        cdef Py_ssize_t i, j, p, ix
        cdef int db = <int>self.bdim[b], lda = <int>self.d, info = 0
        cdef double yv
        cdef char uplo = b'L'
        for i in range(db):
            for j in range(db):
                self.R[i, j] = self.R0[b, i, j]
        for p in range(self.pmax):
            ix = self.idx[b, p]
            if ix >= self.n:
                continue
            yv = self.ye[ix]
            if yv == 0:
                continue
            for i in range(db):
                for j in range(db):
                    self.R[i, j] += yv * self.F[b, p, i, j]
        dpotrf(&uplo, &db, &self.R[0, 0], &lda, &info)
        return info

    cdef double evaluate(self, const double[::1] y, double t):
        cdef Py_ssize_t i, j, b
        cdef double val = 0.0, acc, logdet, contrib
        cdef int info
        for i in range(self.mG):
            acc = self.h[i]
            for j in range(self.n):
                acc -= self.G[i, j] * y[j]
            if acc <= 0:
                return INFINITY
            val -= log(acc)
        if not self._signals(y):
            return INFINITY
        for j in range(self.n):
            self.ye[j] = y[j]
        self.ye[self.n] = 0.0
        for b in range(self.nb):
            info = self._block(b)
            if info != 0:
                return INFINITY
            logdet = 0.0
            for i in range(self.bdim[b]):
                if self.R[i, i] <= 0:
                    return INFINITY
                logdet += 2.0 * log(self.R[i, i])
            if not isfinite(logdet):
                return INFINITY
            contrib = -self.bw[b] * logdet
            val += contrib if self.bobj[b] == 0 else t * contrib
        acc = self._rate_value()
        for j in range(self.n):
            acc += self.c[j] * y[j]
        return val + t * acc

    cdef void derivatives(self, const double[::1] y, double t, double[::1] g,
                          double[:, ::1] H) noexcept:
        cdef Py_ssize_t i, j, k, u, p, q, b, ip, iq, a
        cdef double acc, inv, scale, wt, tr, rf
        cdef int db, lda = <int>self.d, info = 0
        cdef char uplo = b'L'
        cdef Py_ssize_t n = self.n
        for i in range(n):
            g[i] = t * self.c[i]
            for j in range(n):
                H[i, j] = 0.0
        # rate terms
        if self.mT:
            self._signals(y)
            self._rate_value()
            for u in range(self.nu):
                if self.alpha == 0:
                    self.d1[u] = 1.0
                    self.d2[u] = 0.0
                elif self.r[u] < self.rate_floor:
                    self.d1[u] = 0.0
                    self.d2[u] = 0.0
                else:
                    rf = self.r[u]
                    self.d1[u] = pow(rf, -self.alpha)
                    self.d2[u] = -self.alpha * pow(rf, -self.alpha - 1.0)
            for a in range(self.mT):
                self.a[a] = 1.0 / (self.denom[a] + self.s[a])
                u = self.user[a]
                wt = self.weights[u] * self.d1[u] * self.a[a]
                for i in range(n):
                    g[i] -= t * wt * self.T[a, i]
                wt *= t * self.a[a]
                if wt != 0:
                    for i in range(n):
                        if self.T[a, i] != 0:
                            for j in range(n):
                                H[i, j] += wt * self.T[a, i] * self.T[a, j]
            for u in range(self.nu):
                wt = -t * self.weights[u] * self.d2[u]
                if wt == 0:
                    continue
                for i in range(n):
                    self.v[i] = 0.0
                for a in range(self.mT):
                    if self.user[a] == u:
                        for i in range(n):
                            self.v[i] += self.a[a] * self.T[a, i]
                for i in range(n):
                    if self.v[i] != 0:
                        for j in range(n):
                            H[i, j] += wt * self.v[i] * self.v[j]
        # linear inequalities
        for k in range(self.mG):
            acc = self.h[k]
            for j in range(n):
                acc -= self.G[k, j] * y[j]
            inv = 1.0 / acc
            for i in range(n):
                if self.G[k, i] != 0:
                    g[i] += self.G[k, i] * inv
                    for j in range(n):
                        H[i, j] += inv * inv * self.G[k, i] * self.G[k, j]
        # matrix blocks
        for j in range(n):
            self.ye[j] = y[j]
        self.ye[n] = 0.0
        for b in range(self.nb):
            db = <int>self.bdim[b]
            self._block(b)
            dpotri(&uplo, &db, &self.R[0, 0], &lda, &info)
            for i in range(db):
                for j in range(i):
                    self.R[i, j] = self.R[j, i]
            scale = self.bw[b] * (t if self.bobj[b] == 1 else 1.0)
            for p in range(self.pmax):
                if self.idx[b, p] >= n:
                    continue
                tr = 0.0
                for i in range(db):
                    for j in range(db):
                        acc = 0.0
                        for k in range(db):
                            acc += self.R[i, k] * self.F[b, p, k, j]
                        self.B[p, i, j] = acc
                    tr += self.B[p, i, i]
                g[self.idx[b, p]] -= scale * tr
            for p in range(self.pmax):
                ip = self.idx[b, p]
                if ip >= n:
                    continue
                for q in range(p, self.pmax):
                    iq = self.idx[b, q]
                    if iq >= n:
                        continue
                    acc = 0.0
                    for i in range(db):
                        for j in range(db):
                            acc += self.B[p, i, j] * self.B[q, j, i]
                    acc *= scale
                    H[ip, iq] += acc
                    if q != p:
                        H[iq, ip] += acc

    cdef void newton(self, double[::1] g, double[:, ::1] H, double[::1] dy):
        cdef Py_ssize_t i, j
        cdef int n = <int>self.n, info = 0, one = 1
        cdef char uplo = b'L'
        for i in range(n):
            dy[i] = -g[i]
            for j in range(n):
                self.Hw[i, j] = H[i, j]
        dpotrf(&uplo, &n, &self.Hw[0, 0], &n, &info)
        if info == 0:
            dpotrs(&uplo, &n, &one, &self.Hw[0, 0], &n, &dy[0], &n, &info)
        if info != 0:
            sol = singular_direction(np.asarray(g), np.asarray(H))
            for i in range(n):
                dy[i] = sol[i]


def evaluate(prob, y, t):
    """Centering objective at ``y``; ``inf`` outside the domain."""
    cdef _Packed P = _Packed(prob)
    return float(P.evaluate(np.ascontiguousarray(y, dtype=np.float64), t))


def derivatives(prob, y, t):
    """Gradient and Hessian of the centering objective (``y`` assumed interior)."""
    cdef _Packed P = _Packed(prob)
    g = np.zeros(prob.n)
    H = np.zeros((prob.n, prob.n))
    P.derivatives(np.ascontiguousarray(y, dtype=np.float64), t, g, H)
    return g, H


def center(prob, y, double t, double tol=1e-10, int max_iter=100, double ls_alpha=0.3,
           double ls_beta=0.5, int max_backtrack=60):
    """Damped Newton on the centering objective.

    Returns ``(y, iterations, newton_decrement_sq, status)``.
    """
    cdef _Packed P = _Packed(prob)
    cdef Py_ssize_t n = prob.n, i
    cdef int it, bt
    cdef double fy, fn, lam2 = INFINITY, step, slope, ftol
    yv = np.array(y, dtype=np.float64)
    cdef double[::1] yy = yv
    cdef double[::1] g = np.zeros(n), dy = np.zeros(n), trial = np.zeros(n)
    cdef double[:, ::1] H = np.zeros((n, n))
    fy = P.evaluate(yy, t)
    if not isfinite(fy):
        raise ValueError("centering started outside the barrier domain")
    for it in range(max_iter):
        P.derivatives(yy, t, g, H)
        P.newton(g, H, dy)
        lam2 = 0.0
        for i in range(n):
            lam2 -= g[i] * dy[i]
        if lam2 / 2.0 <= tol:
            return yv, it, lam2, OK
        step = 1.0
        slope = ls_alpha * (-lam2)
        ftol = FTOL * (fabs(fy) if fabs(fy) > 1.0 else 1.0)
        for bt in range(max_backtrack):
            for i in range(n):
                trial[i] = yy[i] + step * dy[i]
            fn = P.evaluate(trial, t)
            if fn <= fy + step * slope + ftol:
                break
            step *= ls_beta
        else:
            return yv, it + 1, lam2, STALL
        for i in range(n):
            yy[i] = trial[i]
        fy = fn
    return yv, max_iter, lam2, MAX_ITER


def grid_pairs(double[::1] g11, double[::1] g12, double[::1] g21, double[::1] g22,
               double[::1] p1max, double[:, ::1] p2cap, double[:, :, ::1] p2coef,
               double noise1, double noise2, double w1, double w2, double alpha,
               int n_pow, double rate_floor):
    """Best power pair of a two-user rank-one point for every direction pair.

    Same contract as the numpy version: returns ``(cost, i1, i2)`` of shape ``(A, B)``.
    """
    cdef Py_ssize_t A = g11.shape[0], Bn = g22.shape[0], C = p2cap.shape[0]
    cdef Py_ssize_t a, b, c, i1, i2
    cdef double p1, cap, cc, p2, r1, r2, cst, best
    cdef Py_ssize_t b1, b2
    cost_arr = np.empty((A, Bn))
    i1_arr = np.empty((A, Bn), np.intp)
    i2_arr = np.empty((A, Bn), np.intp)
    cdef double[:, ::1] cost = cost_arr
    cdef Py_ssize_t[:, ::1] j1 = i1_arr
    cdef Py_ssize_t[:, ::1] j2 = i2_arr
    # equal-weight sum rate: rank by the product of SINR terms, no logs in the loop
    cdef bint prod = alpha == 0 and w1 == w2
    cdef double s1, s2, i1n, pr, best_pr
    for a in range(A):
        for b in range(Bn):
            best = INFINITY
            best_pr = -1.0
            b1 = -1
            b2 = -1
            for i1 in range(n_pow + 1):
                p1 = (<double>i1 / n_pow) * p1max[a]
                s1 = p1 * g11[a]
                i1n = noise2 + p1 * g12[a]
                cap = INFINITY
                for c in range(C):
                    cc = p2cap[c, b] - p2coef[c, a, b] * p1
                    if cc < cap:
                        cap = cc
                if cap < 0:
                    cap = 0.0
                for i2 in range(n_pow + 1):
                    p2 = cap * (<double>i2 / n_pow)
                    if prod:
                        pr = (1.0 + s1 / (noise1 + p2 * g21[b])) * (1.0 + p2 * g22[b] / i1n)
                        if pr > best_pr:
                            best_pr, b1, b2 = pr, i1, i2
                        continue
                    r1 = log1p(s1 / (noise1 + p2 * g21[b]))
                    r2 = log1p(p2 * g22[b] / i1n)
                    cst = -(w1 * _futil(r1, alpha, rate_floor) + w2 * _futil(r2, alpha, rate_floor))
                    if cst < best:
                        best, b1, b2 = cst, i1, i2
            if prod:
                p1 = (<double>b1 / n_pow) * p1max[a]
                cap = INFINITY
                for c in range(C):
                    cc = p2cap[c, b] - p2coef[c, a, b] * p1
                    if cc < cap:
                        cap = cc
                if cap < 0:
                    cap = 0.0
                p2 = cap * (<double>b2 / n_pow)
                best = -w1 * (log1p(p1 * g11[a] / (noise1 + p2 * g21[b]))
                              + log1p(p2 * g22[b] / (noise2 + p1 * g12[a])))
            cost[a, b] = best
            j1[a, b] = b1
            j2[a, b] = b2
    return cost_arr, i1_arr, i2_arr


cdef inline double _futil(double r, double alpha, double floor) noexcept:
    if alpha == 0:
        return r
    if r < floor:
        r = floor
    if alpha == 1:
        return log(r)
    return pow(r, 1.0 - alpha) / (1.0 - alpha)
