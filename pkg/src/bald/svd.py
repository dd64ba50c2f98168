"""Two-stage patch-local SVD denoising.

Each s x s x C patch is flattened to an (s*s, C) matrix and decomposed as
U S V^T. The first stage zeroes spatial coefficients ``U S`` smaller than
``3 sigma`` in magnitude; the second stage shrinks them with Wiener factors
computed from the first-stage output projected on the same spectral basis.
Overlapping patches are merged with per-patch weights (1 + N_p)^-1 and
(1 + S_P)^-1 respectively.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .core import SpectralSequence, check_finite
from .errors import ConfigurationError, ContractError


@dataclass(frozen=True)
class PatchConfig:
    """Patch size and stride; ``stride=None`` means ``size // 2``."""

    size: int = 8
    stride: Optional[int] = None

    def __post_init__(self):
        if self.size < 1:
            raise ConfigurationError(f"patch size must be >= 1, got {self.size}")
        st = max(self.size // 2, 1) if self.stride is None else self.stride
        if not 1 <= st <= self.size:
            raise ConfigurationError(f"stride must satisfy 1 <= stride <= size, got {st}")
        object.__setattr__(self, "stride", int(st))

    def check(self, height: int, width: int) -> None:
        if self.size > min(height, width):
            raise ConfigurationError(
                f"patch size {self.size} exceeds image dimensions {height}x{width}"
            )


def _axis_starts(n: int, size: int, stride: int) -> list:
    starts = list(range(0, n - size + 1, stride))
    if starts[-1] != n - size:
        starts.append(n - size)
    return starts


def patch_positions(height: int, width: int, cfg: PatchConfig) -> np.ndarray:
    """Top-left corners of all patches, row-major.

    The last row/column of positions is shifted inward so patches stay
    in bounds and cover every pixel.
    """
    cfg.check(height, width)
    rows = _axis_starts(height, cfg.size, cfg.stride)
    cols = _axis_starts(width, cfg.size, cfg.stride)
    return np.array([(r, c) for r in rows for c in cols], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class PatchDecomposition:
    """Thin SVD of one flattened patch, ``patch = U diag(S) V^T``."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    @property
    def rank(self) -> int:
        return self.S.size

    @property
    def coefficients(self) -> np.ndarray:
        return self.U * self.S

    def reconstruct(self, coefficients: Optional[np.ndarray] = None) -> np.ndarray:
        coef = self.coefficients if coefficients is None else coefficients
        return coef @ self.V.T


def patch_svd(patch: np.ndarray) -> PatchDecomposition:
    """Thin SVD with a fixed sign convention.

    Each left singular vector is flipped so its largest-magnitude entry is
    nonnegative (the matching right vector flips with it).
    """
    patch = np.asarray(patch, dtype=np.float64)
    U, S, Vt = np.linalg.svd(patch, full_matrices=False)
    pivot = U[np.argmax(np.abs(U), axis=0), np.arange(U.shape[1])]
    sign = np.where(pivot < 0, -1.0, 1.0)
    return PatchDecomposition(U * sign, S, Vt.T * sign)


def _to_hwc(seq: SpectralSequence) -> np.ndarray:
    return np.ascontiguousarray(np.moveaxis(seq.frames, 0, -1))


def _run(kernel, arrays, sigma, cfg, shape, workers):
    H, W = shape
    pos = patch_positions(H, W, cfg)
    workers = max(1, min(int(workers), len(pos)))
    if workers == 1:
        acc, wgt = kernel(*arrays, sigma, cfg.size, pos)
    else:
        chunks = np.array_split(pos, workers)
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(lambda p: kernel(*arrays, sigma, cfg.size, p), chunks))
        acc = np.zeros_like(parts[0][0])
        wgt = np.zeros_like(parts[0][1])
        for a, w in parts:
            acc += a
            wgt += w
    if np.any(wgt <= 0):
        raise ContractError("patch tiling left pixels with zero aggregation weight")
    return np.moveaxis(acc / wgt[..., None], -1, 0)


def _check_sigma(sigma):
    if not (np.isfinite(sigma) and sigma > 0):
        raise ConfigurationError(f"sigma must be positive and finite, got {sigma}")


def denoise_hard(
    seq: SpectralSequence,
    sigma: float,
    cfg: PatchConfig = PatchConfig(),
    workers: int = 1,
    backend: Optional[str] = None,
) -> SpectralSequence:
    """First stage: hard thresholding of patch coefficients at ``3 sigma``."""
    _check_sigma(sigma)
    check_finite(seq)
    k = _kernels.get(backend)
    out = _run(k.patch_hard, (_to_hwc(seq),), float(sigma), cfg, seq.shape[1:], workers)
    return seq.with_frames(out)


def denoise_wiener(
    seq: SpectralSequence,
    guide: SpectralSequence,
    sigma: float,
    cfg: PatchConfig = PatchConfig(),
    workers: int = 1,
    backend: Optional[str] = None,
) -> SpectralSequence:
    """Second stage: Wiener shrinkage with factors from the ``guide`` oracle."""
    _check_sigma(sigma)
    if guide.shape != seq.shape:
        raise ConfigurationError(f"guide shape {guide.shape} differs from input {seq.shape}")
    check_finite(seq)
    check_finite(guide)
    k = _kernels.get(backend)
    arrays = (_to_hwc(seq), _to_hwc(guide))
    out = _run(k.patch_wiener, arrays, float(sigma), cfg, seq.shape[1:], workers)
    return seq.with_frames(out)
