# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels.

Same signatures and semantics as ``_kernels_py``. The loops release the GIL
so the thread pool in ``svd``/``analysis`` runs them in parallel.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs
from libc.stdlib cimport malloc, free
from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport dgemm
from scipy.linalg.cython_lapack cimport dgesdd

cnp.import_array()

LAMBDA_INIT = 1e-3
LAMBDA_MIN = 1e-15
LAMBDA_MAX = 1e16
COST_ATOL = 1e-28

cdef double _LAMBDA_INIT = 1e-3
cdef double _LAMBDA_MIN = 1e-15
cdef double _LAMBDA_MAX = 1e16
cdef double _COST_ATOL = 1e-28


# ---------------------------------------------------------------- Lorentzian

cdef void _model(const double* p, int P, const double* off, int M, double* out) noexcept nogil:
    cdef int K = P // 3
    cdef int k, m
    cdef double c0 = p[2], cen, x, s
    for m in range(M):
        s = 1.0
        for k in range(K):
            cen = p[3 * k + 2] if k == 0 else p[3 * k + 2] + c0
            x = 2.0 * (off[m] - cen) / p[3 * k + 1]
            s -= p[3 * k] / (1.0 + x * x)
        out[m] = s


cdef void _jac(const double* p, int P, const double* off, int M, double* J) noexcept nogil:
    # J is row-major (M, P)
    cdef int K = P // 3
    cdef int k, m
    cdef double c0 = p[2], cen, x, d, a, w, dc, tot
    for m in range(M):
        tot = 0.0
        for k in range(K):
            a = p[3 * k]
            w = p[3 * k + 1]
            cen = p[3 * k + 2] if k == 0 else p[3 * k + 2] + c0
            x = 2.0 * (off[m] - cen) / w
            d = 1.0 + x * x
            J[m * P + 3 * k] = -1.0 / d
            J[m * P + 3 * k + 1] = -2.0 * a * x * x / (w * d * d)
            dc = -4.0 * a * x / (w * d * d)
            J[m * P + 3 * k + 2] = dc
            tot += dc
        J[m * P + 2] = tot


def lorentzian_eval(p, offsets):
    """Model z-spectra for parameter rows ``p`` (N, 3K) at ``offsets`` (M,)."""
    cdef const double[:, ::1] pv = np.ascontiguousarray(np.atleast_2d(p), dtype=np.float64)
    cdef const double[::1] ov = np.ascontiguousarray(offsets, dtype=np.float64)
    cdef Py_ssize_t N = pv.shape[0], i
    cdef int P = <int>pv.shape[1], M = <int>ov.shape[0]
    out = np.empty((N, M))
    cdef double[:, ::1] outv = out
    with nogil:
        for i in range(N):
            _model(&pv[i, 0], P, &ov[0], M, &outv[i, 0])
    return out


def lorentzian_jac(p, offsets):
    """Analytic Jacobian, shape (N, M, 3K)."""
    cdef const double[:, ::1] pv = np.ascontiguousarray(np.atleast_2d(p), dtype=np.float64)
    cdef const double[::1] ov = np.ascontiguousarray(offsets, dtype=np.float64)
    cdef Py_ssize_t N = pv.shape[0], i
    cdef int P = <int>pv.shape[1], M = <int>ov.shape[0]
    out = np.empty((N, M, P))
    cdef double[:, :, ::1] outv = out
    with nogil:
        for i in range(N):
            _jac(&pv[i, 0], P, &ov[0], M, &outv[i, 0, 0])
    return out


# ---------------------------------------------------------------- LM fit

cdef int _solve(double* A, double* b, int n) noexcept nogil:
    # Gaussian elimination with partial pivoting, in place; solution in b.
    cdef int i, j, k, piv
    cdef double mx, t, f
    for k in range(n):
        piv = k
        mx = fabs(A[k * n + k])
        for i in range(k + 1, n):
            if fabs(A[i * n + k]) > mx:
                mx = fabs(A[i * n + k])
                piv = i
        if mx == 0.0:
            return -1
        if piv != k:
            for j in range(n):
                t = A[k * n + j]; A[k * n + j] = A[piv * n + j]; A[piv * n + j] = t
            t = b[k]; b[k] = b[piv]; b[piv] = t
        for i in range(k + 1, n):
            f = A[i * n + k] / A[k * n + k]
            if f != 0.0:
                for j in range(k, n):
                    A[i * n + j] -= f * A[k * n + j]
                b[i] -= f * b[k]
    for i in range(n - 1, -1, -1):
        t = b[i]
        for j in range(i + 1, n):
            t -= A[i * n + j] * b[j]
        b[i] = t / A[i * n + i]
    return 0


cdef double _resid(const double* p, int P, const double* off, const double* z, int M, double* r) noexcept nogil:
    cdef int m
    cdef double c = 0.0
    _model(p, P, off, M, r)
    for m in range(M):
        r[m] -= z[m]
        c += r[m] * r[m]
    return 0.5 * c


cdef void _fit_one(const double* off, int M, const double* z, double* p, int P,
                   const double* lo, const double* hi, int max_iter, double rtol,
                   double* work, char* blocked,
                   double* cost_out, long* nit_out, char* conv_out) noexcept nogil:
    cdef double* r = work
    cdef double* rn = r + M
    cdef double* J = rn + M
    cdef double* H = J + M * P
    cdef double* A = H + P * P
    cdef double* g = A + P * P
    cdef double* step = g + P
    cdef double* pn = step + P
    cdef double lam = _LAMBDA_INIT, cost, cn, dmax, sc, old
    cdef long nit = 0
    cdef char conv
    cdef int i, j, m, anyg

    for i in range(P):
        if p[i] < lo[i]:
            p[i] = lo[i]
        if p[i] > hi[i]:
            p[i] = hi[i]
    cost = _resid(p, P, off, z, M, r)
    conv = cost <= _COST_ATOL
    if max_iter <= 0 or conv:
        cost_out[0] = cost; nit_out[0] = 0; conv_out[0] = conv
        return

    while True:
        _jac(p, P, off, M, J)
        for i in range(P):
            g[i] = 0.0
            for j in range(P):
                H[i * P + j] = 0.0
        for m in range(M):
            for i in range(P):
                g[i] += J[m * P + i] * r[m]
                for j in range(P):
                    H[i * P + j] += J[m * P + i] * J[m * P + j]
        anyg = 0
        for i in range(P):
            blocked[i] = (lo[i] >= hi[i]) or (p[i] <= lo[i] and g[i] > 0) or (p[i] >= hi[i] and g[i] < 0)
            if blocked[i]:
                g[i] = 0.0
            if g[i] != 0.0:
                anyg = 1
        if not anyg:
            conv = 1
            break

        dmax = 0.0
        for i in range(P):
            if not blocked[i] and H[i * P + i] > dmax:
                dmax = H[i * P + i]
        if dmax < 1e-300:
            dmax = 1e-300
        for i in range(P):
            for j in range(P):
                A[i * P + j] = 0.0 if (blocked[i] or blocked[j]) else H[i * P + j]
            if blocked[i]:
                A[i * P + i] = 1.0
            else:
                sc = H[i * P + i]
                if sc < 1e-12 * dmax:
                    sc = 1e-12 * dmax
                A[i * P + i] = H[i * P + i] + lam * sc
            step[i] = -g[i]

        if _solve(A, step, P) == 0:
            for i in range(P):
                if blocked[i]:
                    step[i] = 0.0
                pn[i] = p[i] + step[i]
                if pn[i] < lo[i]:
                    pn[i] = lo[i]
                if pn[i] > hi[i]:
                    pn[i] = hi[i]
            cn = _resid(pn, P, off, z, M, rn)
        else:
            cn = cost + 1.0

        old = cost
        if cn < old:
            for i in range(P):
                p[i] = pn[i]
            for m in range(M):
                r[m] = rn[m]
            cost = cn
            lam = lam / 10.0
            if lam < _LAMBDA_MIN:
                lam = _LAMBDA_MIN
            nit += 1
            if (old - cn) <= rtol * old or cn <= _COST_ATOL:
                conv = 1
                break
            if nit >= max_iter:
                break
        else:
            lam *= 10.0
            if lam > _LAMBDA_MAX:
                conv = 1
                break

    cost_out[0] = cost
    nit_out[0] = nit
    conv_out[0] = conv


def lm_fit(offsets, Z, p0, lower, upper, max_iter=200, rtol=1e-8):
    """Bound-constrained Levenberg-Marquardt, one spectrum at a time.

    Returns ``(params, cost, n_iter, converged)``; see ``_kernels_py.lm_fit``.
    """
    cdef const double[::1] off = np.ascontiguousarray(offsets, dtype=np.float64)
    cdef const double[:, ::1] Zv = np.ascontiguousarray(Z, dtype=np.float64)
    p = np.array(p0, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] pv = p
    cdef const double[::1] lo = np.ascontiguousarray(lower, dtype=np.float64)
    cdef const double[::1] hi = np.ascontiguousarray(upper, dtype=np.float64)
    cdef Py_ssize_t N = pv.shape[0], n
    cdef int P = <int>pv.shape[1], M = <int>off.shape[0]
    cdef int mi = int(max_iter)
    cdef double rt = float(rtol)
    cost = np.zeros(N)
    nit = np.zeros(N, dtype=np.int64)
    conv = np.zeros(N, dtype=np.int8)
    cdef double[::1] cv = cost
    cdef long[::1] nv = nit
    cdef signed char[::1] kv = conv
    cdef double* work = <double*>malloc((2 * M + M * P + 2 * P * P + 3 * P) * sizeof(double))
    cdef char* blocked = <char*>malloc(P * sizeof(char))
    if work == NULL or blocked == NULL:
        free(work); free(blocked)
        raise MemoryError()
    try:
        with nogil:
            for n in range(N):
                _fit_one(&off[0], M, &Zv[n, 0], &pv[n, 0], P, &lo[0], &hi[0], mi, rt,
                         work, blocked, &cv[n], &nv[n], <char*>&kv[n])
    finally:
        free(work)
        free(blocked)
    return p, cost, nit, conv.astype(bool)


# ---------------------------------------------------------------- patch SVD

cdef class _Svd:
    """Workspace for the thin SVD of an (n, C) row-major patch via dgesdd.

    LAPACK sees the same memory as the (C, n) column-major transpose
    ``A^T = U' S V'^T``, so ``A = V' S U'^T``: the row-major view of ``V'^T``
    holds the left vectors of ``A`` as an (n, k) matrix and the row-major
    view of ``U'`` holds ``V^T`` as a (k, C) matrix.
    """

    cdef int n, C, k, lwork
    cdef double* a
    cdef double* s
    cdef double* u
    cdef double* vt
    cdef double* work
    cdef int* iwork

    def __cinit__(self, int n, int C):
        cdef int info = 0, m = C, nn = n, k = min(n, C), lw = -1
        cdef double q = 0
        cdef char jobz = b'S'
        self.n = n; self.C = C; self.k = k
        self.a = <double*>malloc(n * C * sizeof(double))
        self.s = <double*>malloc(k * sizeof(double))
        self.u = <double*>malloc(C * k * sizeof(double))
        self.vt = <double*>malloc(k * n * sizeof(double))
        self.iwork = <int*>malloc(8 * k * sizeof(int))
        dgesdd(&jobz, &m, &nn, self.a, &m, self.s, self.u, &m, &q, &k, &q, &lw, self.iwork, &info)
        self.lwork = <int>q + 1
        self.work = <double*>malloc(self.lwork * sizeof(double))
        if not (self.a and self.s and self.u and self.vt and self.work and self.iwork):
            raise MemoryError()

    def __dealloc__(self):
        free(self.a); free(self.s); free(self.u); free(self.vt); free(self.work); free(self.iwork)

    cdef int run(self) noexcept nogil:
        cdef int info = 0, m = self.C, nn = self.n, k = self.k, lw = self.lwork
        cdef char jobz = b'S'
        dgesdd(&jobz, &m, &nn, self.a, &m, self.s, self.u, &m, self.vt, &k,
               self.work, &lw, self.iwork, &info)
        return info


cdef void _gather(const double[:, :, ::1] Y, Py_ssize_t r0, Py_ssize_t c0, int s, int C, double* dst) noexcept nogil:
    # (s*s, C) row-major copy of the patch at (r0, c0)
    cdef int i
    for i in range(s * s):
        memcpy(dst + i * C, &Y[r0 + i // s, c0 + i % s, 0], C * sizeof(double))


cdef void _matmul(const double* coef, const double* vt, int n, int k, int C, double* out) noexcept nogil:
    # out (n, C) = coef (n, k) @ vt (k, C), all row-major
    cdef char tr = b'N'
    cdef double one = 1.0, zero = 0.0
    dgemm(&tr, &tr, &C, &n, &k, &one, <double*>vt, &C, <double*>coef, &k, &zero, out, &C)


cdef void _project(const double* g, const double* vt, int n, int k, int C, double* out) noexcept nogil:
    # out (n, k) = g (n, C) @ vt^T, row-major
    cdef char ta = b'T', tb = b'N'
    cdef double one = 1.0, zero = 0.0
    dgemm(&ta, &tb, &k, &n, &C, &one, <double*>vt, &C, <double*>g, &C, &zero, out, &k)


cdef void _scatter(double[:, :, ::1] acc, double[:, ::1] wgt, const double* rec,
                   Py_ssize_t r0, Py_ssize_t c0, int s, int C, double w) noexcept nogil:
    cdef int i, c
    cdef double* dst
    for i in range(s * s):
        dst = &acc[r0 + i // s, c0 + i % s, 0]
        for c in range(C):
            dst[c] += rec[i * C + c] * w
        wgt[r0 + i // s, c0 + i % s] += w


def patch_hard(Y, double sigma, int s, positions):
    """Hard-threshold accumulation over patches of ``Y`` (H, W, C)."""
    cdef const double[:, :, ::1] Yv = np.ascontiguousarray(Y, dtype=np.float64)
    cdef const long[:, ::1] pos = np.ascontiguousarray(positions, dtype=np.int64).reshape(-1, 2)
    cdef int H = <int>Yv.shape[0], W = <int>Yv.shape[1], C = <int>Yv.shape[2]
    cdef int n = s * s
    acc = np.zeros((H, W, C))
    wgt = np.zeros((H, W))
    cdef double[:, :, ::1] av = acc
    cdef double[:, ::1] wv = wgt
    cdef _Svd svd = _Svd(n, C)
    cdef int k = svd.k
    cdef double* coef = <double*>malloc(n * k * sizeof(double))
    cdef double* rec = <double*>malloc(n * C * sizeof(double))
    cdef double thr = 3.0 * sigma, v
    cdef Py_ssize_t q
    cdef int i, j, kept, info = 0
    if coef == NULL or rec == NULL:
        free(coef); free(rec)
        raise MemoryError()
    try:
        with nogil:
            for q in range(pos.shape[0]):
                _gather(Yv, pos[q, 0], pos[q, 1], s, C, svd.a)
                info = svd.run()
                if info != 0:
                    break
                kept = 0
                for i in range(n):
                    for j in range(k):
                        v = svd.vt[i * k + j] * svd.s[j]
                        if fabs(v) >= thr:
                            coef[i * k + j] = v
                            kept += 1
                        else:
                            coef[i * k + j] = 0.0
                _matmul(coef, svd.u, n, k, C, rec)
                _scatter(av, wv, rec, pos[q, 0], pos[q, 1], s, C, 1.0 / (1.0 + kept))
    finally:
        free(coef); free(rec)
    if info != 0:
        raise np.linalg.LinAlgError(f"dgesdd failed with info={info}")
    return acc, wgt


def patch_wiener(Y, G, double sigma, int s, positions):
    """Wiener-shrinkage accumulation guided by ``G`` (same shape as ``Y``)."""
    cdef const double[:, :, ::1] Yv = np.ascontiguousarray(Y, dtype=np.float64)
    cdef const double[:, :, ::1] Gv = np.ascontiguousarray(G, dtype=np.float64)
    cdef const long[:, ::1] pos = np.ascontiguousarray(positions, dtype=np.int64).reshape(-1, 2)
    cdef int H = <int>Yv.shape[0], W = <int>Yv.shape[1], C = <int>Yv.shape[2]
    cdef int n = s * s
    acc = np.zeros((H, W, C))
    wgt = np.zeros((H, W))
    cdef double[:, :, ::1] av = acc
    cdef double[:, ::1] wv = wgt
    cdef _Svd svd = _Svd(n, C)
    cdef int k = svd.k
    cdef double* coef = <double*>malloc(n * k * sizeof(double))
    cdef double* gp = <double*>malloc(n * C * sizeof(double))
    cdef double* ug = <double*>malloc(n * k * sizeof(double))
    cdef double s2 = sigma * sigma, u2, rho, srho
    cdef Py_ssize_t q
    cdef int i, j, info = 0
    if coef == NULL or gp == NULL or ug == NULL:
        free(coef); free(gp); free(ug)
        raise MemoryError()
    try:
        with nogil:
            for q in range(pos.shape[0]):
                _gather(Yv, pos[q, 0], pos[q, 1], s, C, svd.a)
                info = svd.run()
                if info != 0:
                    break
                _gather(Gv, pos[q, 0], pos[q, 1], s, C, gp)
                _project(gp, svd.u, n, k, C, ug)
                srho = 0.0
                for i in range(n):
                    for j in range(k):
                        u2 = ug[i * k + j] * ug[i * k + j]
                        rho = u2 / (u2 + s2)
                        srho += rho * rho
                        coef[i * k + j] = svd.vt[i * k + j] * svd.s[j] * rho
                _matmul(coef, svd.u, n, k, C, gp)
                _scatter(av, wv, gp, pos[q, 0], pos[q, 1], s, C, 1.0 / (1.0 + srho))
    finally:
        free(coef); free(gp); free(ug)
    if info != 0:
        raise np.linalg.LinAlgError(f"dgesdd failed with info={info}")
    return acc, wgt
