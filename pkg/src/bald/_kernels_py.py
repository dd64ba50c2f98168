"""Pure-numpy implementations of the hot kernels.

These mirror ``_ext.pyx`` step for step. They are used when the compiled
extension is unavailable or when ``BALD_PURE_PYTHON=1`` is set.

Lorentzian parameter layout: three entries per pool ``(A, width, center)``.
Pool 0 is the water pool and its center is absolute; the center of every
other pool is relative to the water center.
"""

import numpy as np

LAMBDA_INIT = 1e-3
LAMBDA_MIN = 1e-15
LAMBDA_MAX = 1e16
COST_ATOL = 1e-28
# patches per batched SVD call
CHUNK = 256


def _centers(p):
    c = p[..., 2::3].copy()
    c[..., 1:] += p[..., 2:3]
    return c


def lorentzian_eval(p, offsets):
    """Model z-spectra for parameter rows ``p`` (N, 3K) at ``offsets`` (M,)."""
    p = np.atleast_2d(p)
    amp, wid, cen = p[:, 0::3], p[:, 1::3], _centers(p)
    x = 2.0 * (offsets[None, :, None] - cen[:, None, :]) / wid[:, None, :]
    return 1.0 - np.sum(amp[:, None, :] / (1.0 + x * x), axis=2)


def lorentzian_jac(p, offsets):
    """Analytic Jacobian, shape (N, M, 3K)."""
    p = np.atleast_2d(p)
    n, P = p.shape
    amp, wid, cen = p[:, 0::3], p[:, 1::3], _centers(p)
    x = 2.0 * (offsets[None, :, None] - cen[:, None, :]) / wid[:, None, :]
    d = 1.0 + x * x
    J = np.empty((n, offsets.size, P))
    J[:, :, 0::3] = -1.0 / d
    J[:, :, 1::3] = -2.0 * amp[:, None, :] * x * x / (wid[:, None, :] * d * d)
    dc = -4.0 * amp[:, None, :] * x / (wid[:, None, :] * d * d)
    J[:, :, 2::3] = dc
    J[:, :, 2] = dc.sum(axis=2)
    return J


def lm_fit(offsets, Z, p0, lower, upper, max_iter=200, rtol=1e-8):
    """Bound-constrained Levenberg-Marquardt, batched over spectra.

    Each round every unfinished spectrum makes one trial step. A step that
    lowers the cost is accepted (damping / 10); otherwise the damping grows
    tenfold. Parameters sitting on a bound with the gradient pushing outward
    are frozen for that step; parameters with ``lower == upper`` are fixed.

    Returns ``(params, cost, n_iter, converged)`` where ``cost`` is half the
    squared residual norm and ``n_iter`` counts accepted steps.
    """
    offsets = np.ascontiguousarray(offsets, dtype=np.float64)
    Z = np.ascontiguousarray(Z, dtype=np.float64)
    N, P = p0.shape
    fixed = lower >= upper
    p = np.clip(p0.astype(np.float64), lower, upper)
    r = lorentzian_eval(p, offsets) - Z
    cost = 0.5 * np.einsum("nm,nm->n", r, r)
    lam = np.full(N, LAMBDA_INIT)
    n_iter = np.zeros(N, dtype=np.int64)
    converged = cost <= COST_ATOL
    active = ~converged
    if max_iter <= 0:
        active[:] = False
    eye = np.eye(P, dtype=bool)

    while active.any():
        a = np.flatnonzero(active)
        pa = p[a]
        J = lorentzian_jac(pa, offsets)
        g = np.einsum("nmp,nm->np", J, r[a])
        H = np.einsum("nmp,nmq->npq", J, J)
        blocked = fixed[None, :] | ((pa <= lower) & (g > 0)) | ((pa >= upper) & (g < 0))
        g = np.where(blocked, 0.0, g)

        flat = ~np.any(g != 0.0, axis=1)
        if flat.any():
            converged[a[flat]] = True
            active[a[flat]] = False
            keep = ~flat
            a, pa, g, H, blocked = a[keep], pa[keep], g[keep], H[keep], blocked[keep]
            if a.size == 0:
                continue

        diag = np.diagonal(H, axis1=1, axis2=2)
        dmax = np.max(np.where(blocked, 0.0, diag), axis=1, keepdims=True)
        scale = np.maximum(diag, 1e-12 * np.maximum(dmax, 1e-300))
        free2 = ~blocked[:, :, None] & ~blocked[:, None, :]
        A = np.where(free2, H, 0.0)
        damp = np.where(blocked, 1.0, diag + lam[a, None] * scale)
        A[:, eye] = damp
        step = -np.linalg.solve(A, g[..., None])[..., 0]
        step[blocked] = 0.0

        pn = np.clip(pa + step, lower, upper)
        rn = lorentzian_eval(pn, offsets) - Z[a]
        cn = 0.5 * np.einsum("nm,nm->n", rn, rn)
        old = cost[a]
        acc = cn < old

        ia = a[acc]
        p[ia], r[ia], cost[ia] = pn[acc], rn[acc], cn[acc]
        lam[ia] = np.maximum(lam[ia] / 10.0, LAMBDA_MIN)
        n_iter[ia] += 1
        small = (old[acc] - cn[acc]) <= rtol * old[acc]
        done = small | (cn[acc] <= COST_ATOL)
        converged[ia[done]] = True
        active[ia[done]] = False
        out = ~done & (n_iter[ia] >= max_iter)
        active[ia[out]] = False

        ir = a[~acc]
        lam[ir] *= 10.0
        stuck = lam[ir] > LAMBDA_MAX
        converged[ir[stuck]] = True
        active[ir[stuck]] = False

    return p, cost, n_iter, converged


def _patches(Y, s, positions):
    C = Y.shape[2]
    return np.stack([Y[r:r + s, c:c + s].reshape(s * s, C) for r, c in positions])


def patch_hard(Y, sigma, s, positions):
    """Hard-threshold accumulation over patches of ``Y`` (H, W, C).

    Returns the weighted accumulator (H, W, C) and weight plane (H, W).
    """
    H, W, C = Y.shape
    acc = np.zeros((H, W, C))
    wgt = np.zeros((H, W))
    for start in range(0, len(positions), CHUNK):
        pos = positions[start:start + CHUNK]
        U, S, Vt = np.linalg.svd(_patches(Y, s, pos), full_matrices=False)
        coef = U * S[:, None, :]
        keep = np.abs(coef) >= 3.0 * sigma
        coef = np.where(keep, coef, 0.0)
        w = 1.0 / (1.0 + keep.sum(axis=(1, 2)))
        rec = coef @ Vt
        for (r, c), blk, wi in zip(pos, rec, w):
            acc[r:r + s, c:c + s] += blk.reshape(s, s, C) * wi
            wgt[r:r + s, c:c + s] += wi
    return acc, wgt


def patch_wiener(Y, G, sigma, s, positions):
    """Wiener-shrinkage accumulation guided by ``G`` (same shape as ``Y``)."""
    H, W, C = Y.shape
    acc = np.zeros((H, W, C))
    wgt = np.zeros((H, W))
    for start in range(0, len(positions), CHUNK):
        pos = positions[start:start + CHUNK]
        U, S, Vt = np.linalg.svd(_patches(Y, s, pos), full_matrices=False)
        coef = U * S[:, None, :]
        ug = _patches(G, s, pos) @ np.swapaxes(Vt, 1, 2)
        ug2 = ug * ug
        rho = ug2 / (ug2 + sigma * sigma)
        w = 1.0 / (1.0 + np.sum(rho * rho, axis=(1, 2)))
        rec = (coef * rho) @ Vt
        for (r, c), blk, wi in zip(pos, rec, w):
            acc[r:r + s, c:c + s] += blk.reshape(s, s, C) * wi
            wgt[r:r + s, c:c + s] += wi
    return acc, wgt
