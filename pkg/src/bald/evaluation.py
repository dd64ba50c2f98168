"""Image-quality and ROI statistics used to score denoising runs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from .core import Roi
from .errors import ConfigurationError, DataError

#: PSNR returned when the two inputs are identical.
PSNR_IDENTICAL = math.inf


def _values(x):
    return x.frames if hasattr(x, "frames") else np.asarray(x, dtype=np.float64)


def psnr(reference, test, peak: Optional[float] = None, mask: Optional[np.ndarray] = None) -> float:
    """Peak signal-to-noise ratio in dB.

    Parameters
    ----------
    reference, test : SpectralSequence or array_like
        Same shape. For sequences the reference mask is used unless ``mask``
        is given; a 2-D mask applies to every frame.
    peak : float, optional
        Defaults to the maximum of ``reference`` over the mask.

    Returns
    -------
    float
        ``10 log10(peak^2 / MSE)``; ``inf`` when the inputs are identical.
    """
    ref, tst = _values(reference), _values(test)
    if ref.shape != tst.shape:
        raise ConfigurationError(f"shape mismatch {ref.shape} vs {tst.shape}")
    if mask is None and getattr(reference, "mask", None) is not None:
        mask = reference.mask
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), ref.shape)
        ref, tst = ref[mask], tst[mask]
    if ref.size == 0:
        raise ConfigurationError("mask selects no values")
    if peak is None:
        peak = float(np.max(ref))
    if not peak > 0:
        raise ConfigurationError(f"peak must be > 0, got {peak}")
    mse = float(np.mean((ref - tst) ** 2))
    if mse == 0.0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(peak * peak / mse)


def welch_t_test(sample_a, sample_b) -> float:
    """Two-sided Welch unequal-variance t-test p-value."""
    return welch_t_test_full(sample_a, sample_b)[2]


def welch_t_test_full(sample_a, sample_b) -> tuple:
    """``(t, df, p)`` of the two-sided Welch test."""
    a = np.asarray(sample_a, dtype=np.float64).ravel()
    b = np.asarray(sample_b, dtype=np.float64).ravel()
    if a.size < 2 or b.size < 2:
        raise DataError("each sample needs at least 2 values")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    se2 = va + vb
    if se2 == 0:
        raise DataError("both samples have zero variance")
    diff = a.mean() - b.mean()
    t = diff / math.sqrt(se2)
    df = se2 * se2 / (va * va / (a.size - 1) + vb * vb / (b.size - 1))
    # P(|T| > t) = I_{df/(df+t^2)}(df/2, 1/2)
    p = float(special.betainc(0.5 * df, 0.5, df / (df + t * t)))
    return float(t), float(df), min(p, 1.0)


@dataclass(frozen=True)
class RoiStats:
    label: str
    n: int
    mean: float
    std: float
    q1: float
    q2: float
    q3: float

    def row(self) -> list:
        return [self.label, self.n, self.mean, self.std, self.q1, self.q2, self.q3]


def roi_values(image: np.ndarray, roi: Roi) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ConfigurationError("ROI statistics need a 2-D map")
    roi.check_bounds(*image.shape)
    return image[roi.index()]


def roi_stats(image: np.ndarray, roi: Roi) -> RoiStats:
    """Count, mean, sample deviation (ddof=1) and linear-interpolated quartiles."""
    v = roi_values(image, roi)
    if v.size < 2:
        raise DataError(f"ROI {roi.label!r} has {v.size} pixel(s); need at least 2")
    q1, q2, q3 = np.percentile(v, [25, 50, 75])
    return RoiStats(roi.label, int(v.size), float(v.mean()), float(v.std(ddof=1)), float(q1), float(q2), float(q3))
