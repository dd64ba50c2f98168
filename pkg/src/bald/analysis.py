"""CEST quantification: MTR asymmetry and multi-pool Lorentzian fitting."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .core import SpectralSequence
from .errors import ConfigurationError, DataError


@dataclass(frozen=True)
class PoolSpec:
    """One saturation pool of the Lorentzian model.

    ``center`` is relative to the water resonance, except for the water pool
    itself (always first in a pool list) whose center is absolute.
    ``center_tolerance`` of 0 fixes the center; otherwise it may move by
    that many ppm either way.
    """

    name: str
    center: float
    amplitude_init: float = 0.1
    width_init: float = 1.0
    amplitude_bounds: tuple = (0.0, 1.0)
    width_bounds: tuple = (0.2, 100.0)
    center_tolerance: float = 0.0

    def __post_init__(self):
        alo, ahi = self.amplitude_bounds
        wlo, whi = self.width_bounds
        if not alo <= ahi:
            raise ConfigurationError(f"pool {self.name}: amplitude bounds out of order")
        if not 0 < wlo <= whi:
            raise ConfigurationError(f"pool {self.name}: width bounds must satisfy 0 < min <= max")
        if self.center_tolerance < 0:
            raise ConfigurationError(f"pool {self.name}: negative center tolerance")

    def init(self) -> list:
        return [
            float(np.clip(self.amplitude_init, *self.amplitude_bounds)),
            float(np.clip(self.width_init, *self.width_bounds)),
            float(self.center),
        ]

    def bounds(self) -> tuple:
        lo = [self.amplitude_bounds[0], self.width_bounds[0], self.center - self.center_tolerance]
        hi = [self.amplitude_bounds[1], self.width_bounds[1], self.center + self.center_tolerance]
        return lo, hi


WATER = PoolSpec("water", 0.0, amplitude_init=0.9, width_init=1.0, center_tolerance=1.0)
APT = PoolSpec("APT", 3.5)
NOE = PoolSpec("NOE", -3.5)
MT = PoolSpec("MT", -2.5, width_init=20.0)

DEFAULT_POOLS = (WATER, APT, NOE, MT)
KNOWN_POOLS = {p.name: p for p in DEFAULT_POOLS}


def pools_by_name(names: Sequence[str]) -> tuple:
    """Water plus the named exchange pools from the default set."""
    out = [WATER]
    for n in names:
        if n == "water":
            continue
        if n not in KNOWN_POOLS:
            raise ConfigurationError(f"unknown pool {n!r}; known: {sorted(KNOWN_POOLS)}")
        out.append(KNOWN_POOLS[n])
    return tuple(out)


def pack(pools: Sequence[PoolSpec]) -> tuple:
    """Initial vector and bounds for a pool list."""
    p0, lo, hi = [], [], []
    for pool in pools:
        p0 += pool.init()
        a, b = pool.bounds()
        lo += a
        hi += b
    return np.array(p0), np.array(lo, dtype=float), np.array(hi, dtype=float)


def lorentzian(params, offsets) -> np.ndarray:
    """Evaluate the multi-pool model.

    ``params`` holds ``(A, width, center)`` triples, water first. Exchange
    pool centers are relative to the water center. A 1-D ``params`` gives a
    1-D spectrum; a 2-D stack gives one row per parameter row.
    """
    p = np.asarray(params, dtype=np.float64)
    out = _kernels.lorentzian_eval(np.atleast_2d(p), np.asarray(offsets, dtype=np.float64))
    return out[0] if p.ndim == 1 else out


def lorentzian_jacobian(params, offsets) -> np.ndarray:
    """Analytic derivatives of :func:`lorentzian`, shape (M, 3K) for 1-D params."""
    p = np.asarray(params, dtype=np.float64)
    out = _kernels.lorentzian_jac(np.atleast_2d(p), np.asarray(offsets, dtype=np.float64))
    return out[0] if p.ndim == 1 else out


def _interp_axis0(x_sorted, y, xq):
    i = np.clip(np.searchsorted(x_sorted, xq, side="right") - 1, 0, x_sorted.size - 2)
    t = (xq - x_sorted[i]) / (x_sorted[i + 1] - x_sorted[i])
    return y[i] * (1.0 - t) + y[i + 1] * t


def mtr_asym(offsets, z, dw: float = 3.5):
    """``z(-dw) - z(+dw)``, interpolating linearly between sampled offsets.

    ``z`` may carry extra trailing axes (e.g. a whole (C, H, W) stack).
    """
    off = np.asarray(offsets, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if off.ndim != 1 or z.shape[0] != off.size or off.size < 2:
        raise ConfigurationError("offsets must be 1-D and match the first axis of z")
    order = np.argsort(off)
    off, z = off[order], z[order]
    dw = abs(float(dw))
    if -dw < off[0] or dw > off[-1]:
        raise ConfigurationError(f"offset +/-{dw} ppm outside sampled range [{off[0]}, {off[-1]}]")
    return _interp_axis0(off, z, -dw) - _interp_axis0(off, z, dw)


def aptw_map(seq: SpectralSequence, dw: float = 3.5) -> np.ma.MaskedArray:
    """APT-weighted map in percent; off-mask pixels are 0 and masked."""
    fg = seq.foreground
    vals = 100.0 * mtr_asym(seq.offsets_ppm, seq.frames, dw)
    vals = np.where(fg, vals, 0.0)
    return np.ma.MaskedArray(vals, mask=~fg)


@dataclass(frozen=True, eq=False)
class FitResult:
    """Outcome of one spectrum fit; ``params`` is the packed vector."""

    params: np.ndarray
    pools: tuple
    residual_norm: float
    converged: bool
    n_iter: int

    def pool_params(self, name: str) -> dict:
        for k, pool in enumerate(self.pools):
            if pool.name == name:
                a, w, c = self.params[3 * k:3 * k + 3]
                center = c if k == 0 else c + self.params[2]
                return {"amplitude": float(a), "width": float(w), "center": float(center)}
        raise KeyError(name)

    def amplitudes(self) -> dict:
        return {pool.name: float(self.params[3 * k]) for k, pool in enumerate(self.pools)}


def _check_samples(n_samples, pools):
    need = 2 + 3 + 2 * (len(pools) - 1)
    if n_samples < need:
        raise ConfigurationError(f"{n_samples} samples cannot support {len(pools)} pools (need {need})")


def fit_lorentzian(
    offsets,
    z,
    pools: Sequence[PoolSpec] = DEFAULT_POOLS,
    max_iter: int = 200,
    rtol: float = 1e-8,
    p0=None,
    backend: Optional[str] = None,
) -> FitResult:
    """Bounded damped least-squares fit of one z-spectrum.

    Steps are accepted only when they lower ``0.5 * ||model - z||^2``;
    rejected steps raise the damping. If ``max_iter`` accepted steps pass
    without meeting the tolerance the best point so far is returned with
    ``converged=False``.
    """
    off = np.asarray(offsets, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if z.shape != off.shape:
        raise ConfigurationError("offsets and spectrum lengths differ")
    if not np.all(np.isfinite(z)):
        raise DataError("spectrum contains non-finite values")
    pools = tuple(pools)
    _check_samples(off.size, pools)
    init, lo, hi = pack(pools)
    if p0 is not None:
        init = np.clip(np.asarray(p0, dtype=float), lo, hi)
    k = _kernels.get(backend)
    p, cost, nit, conv = k.lm_fit(off, z[None], init[None], lo, hi, max_iter, rtol)
    return FitResult(p[0], pools, float(np.sqrt(2.0 * cost[0])), bool(conv[0]), int(nit[0]))


@dataclass(frozen=True, eq=False)
class ContrastMaps:
    """Per-pixel fit results over an image.

    ``amplitudes`` maps pool name to an (H, W) amplitude map; off-mask
    pixels are 0. ``converged`` is False where the fit hit the iteration cap
    (and off-mask).
    """

    amplitudes: dict
    params: np.ndarray
    converged: np.ndarray
    residual_norm: np.ndarray
    mask: np.ndarray
    pools: tuple
    metadata: dict = field(default_factory=dict)

    @property
    def failed(self) -> np.ndarray:
        return self.mask & ~self.converged


def contrast_maps(
    seq: SpectralSequence,
    pools: Sequence[PoolSpec] = DEFAULT_POOLS,
    max_iter: int = 200,
    rtol: float = 1e-8,
    workers: int = 1,
    backend: Optional[str] = None,
) -> ContrastMaps:
    """Fit every foreground pixel independently and collect amplitude maps."""
    pools = tuple(pools)
    _check_samples(seq.n_offsets, pools)
    fg = seq.foreground
    Z = seq.frames[:, fg].T
    if not np.all(np.isfinite(Z)):
        raise DataError("sequence contains non-finite values inside the mask")
    init, lo, hi = pack(pools)
    P0 = np.tile(init, (Z.shape[0], 1))
    k = _kernels.get(backend)
    off = np.ascontiguousarray(seq.offsets_ppm)

    def run(sl):
        return k.lm_fit(off, np.ascontiguousarray(Z[sl]), np.ascontiguousarray(P0[sl]), lo, hi, max_iter, rtol)

    n = Z.shape[0]
    workers = max(1, min(int(workers), n))
    bounds = np.linspace(0, n, workers + 1).astype(int)
    slices = [slice(bounds[i], bounds[i + 1]) for i in range(workers)]
    if workers == 1:
        parts = [run(slices[0])]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(run, slices))
    p = np.concatenate([q[0] for q in parts])
    cost = np.concatenate([q[1] for q in parts])
    conv = np.concatenate([q[3] for q in parts])

    H, W = fg.shape
    params = np.zeros((H, W, init.size))
    params[fg] = p
    converged = np.zeros((H, W), dtype=bool)
    converged[fg] = conv
    resid = np.zeros((H, W))
    resid[fg] = np.sqrt(2.0 * cost)
    amps = {pool.name: params[..., 3 * i].copy() for i, pool in enumerate(pools)}
    meta = {
        "pools": [
            {"name": q.name, "center": q.center, "init": q.init(), "bounds": [list(b) for b in q.bounds()]}
            for q in pools
        ],
        "max_iter": max_iter,
        "rtol": rtol,
    }
    return ContrastMaps(amps, params, converged, resid, fg.copy(), pools, meta)
