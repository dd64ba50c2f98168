"""Blind estimation of the intensity-dependent noise curve and the
adaptive variance-stabilizing transform built from it.

The noise of every interior frame is read off the normalized second
difference along the offset axis, binned by intensity, reduced to one RMS
per bin, and the per-frame curves are merged with a median so that a few
corrupted frames cannot drag the estimate.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .core import SpectralSequence
from .errors import ConfigurationError, EstimationError

log = logging.getLogger(__name__)

#: Bins whose deviation falls below this fraction of the intensity range are
#: treated as invalid; the transform divides by the curve.
FLOOR_FRACTION = 1e-6
#: Frame bins holding fewer samples than this are left out of the median.
MIN_BIN_COUNT = 16


@dataclass(frozen=True, eq=False)
class NoiseSamples:
    """Per-frame (intensity, noise sample) pairs of the interior frames.

    ``intensity_min`` / ``intensity_max`` span every frame of the source
    sequence (inside the mask), not only the interior ones.
    """

    frame_index: tuple
    intensities: tuple
    samples: tuple
    intensity_min: float
    intensity_max: float

    @property
    def intensity_range(self) -> float:
        return self.intensity_max - self.intensity_min

    def __len__(self) -> int:
        return len(self.samples)


def extract_noise_samples(seq: SpectralSequence, intensity: str = "local_mean") -> NoiseSamples:
    """Second-difference noise samples ``(2u_k - u_{k-1} - u_{k+1}) / sqrt(6)``.

    Every foreground pixel of every interior frame contributes one pair
    (intensity, sample); the first and last frames contribute nothing.

    Parameters
    ----------
    intensity : {"local_mean", "center"}
        Intensity each sample is filed under. ``"center"`` uses ``u_k``,
        which shares its noise term with the sample; binning on it
        over-weights large-noise samples wherever the intensity histogram is
        uneven. ``"local_mean"`` uses ``(u_{k-1} + u_k + u_{k+1}) / 3``, which
        is uncorrelated with the second difference under locally constant
        noise.
    """
    if seq.n_offsets < 3:
        raise ConfigurationError(f"noise extraction needs at least 3 offsets, got {seq.n_offsets}")
    if intensity not in ("local_mean", "center"):
        raise ConfigurationError(f"unknown intensity pairing {intensity!r}")
    fg = seq.foreground
    if not fg.any():
        raise ConfigurationError("mask selects no pixels")
    fr = seq.frames
    diff2 = (2.0 * fr[1:-1] - fr[:-2] - fr[2:]) / math.sqrt(6.0)
    if intensity == "center":
        level = fr[1:-1]
    else:
        level = (fr[:-2] + fr[1:-1] + fr[2:]) / 3.0
    inside = fr[:, fg]
    return NoiseSamples(
        frame_index=tuple(range(1, seq.n_offsets - 1)),
        intensities=tuple(level[k][fg] for k in range(seq.n_offsets - 2)),
        samples=tuple(diff2[k][fg] for k in range(seq.n_offsets - 2)),
        intensity_min=float(inside.min()),
        intensity_max=float(inside.max()),
    )


def bin_index(u: np.ndarray, lo: float, span: float, t1: int) -> np.ndarray:
    """Equal-width bin of each intensity; half-open bins, the last one closed."""
    idx = np.floor((np.asarray(u, dtype=np.float64) - lo) / span * t1).astype(np.intp)
    return np.clip(idx, 0, t1 - 1)


def frame_bin_rms(samples: NoiseSamples, t1: int, min_count: int = 1) -> tuple:
    """Per-frame, per-bin RMS of the noise samples.

    Returns
    -------
    rms : ndarray, shape (n_frames, t1)
        NaN where a frame has fewer than ``min_count`` samples in a bin.
    counts : ndarray, shape (n_frames, t1)
    """
    lo, span = samples.intensity_min, samples.intensity_range
    rms = np.full((len(samples), t1), np.nan)
    counts = np.zeros((len(samples), t1), dtype=np.int64)
    for i, (u, n) in enumerate(zip(samples.intensities, samples.samples)):
        b = bin_index(u, lo, span, t1)
        c = np.bincount(b, minlength=t1)
        ss = np.bincount(b, weights=n * n, minlength=t1)
        ok = c >= max(min_count, 1)
        rms[i, ok] = np.sqrt(ss[ok] / c[ok])
        counts[i] = c
    return rms, counts


def _fill_invalid(values: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Replace invalid entries with the nearest valid neighbour (lower wins ties)."""
    good = np.flatnonzero(valid)
    out = values.copy()
    for i in np.flatnonzero(~valid):
        j = good[np.argmin(np.abs(good - i))]
        out[i] = values[j]
    return out


@dataclass(frozen=True, eq=False)
class NoiseCurve:
    """Piecewise-linear map from intensity to noise standard deviation.

    Attributes
    ----------
    intensity, sigma : ndarray, shape (t2,)
        Knot coordinates, intensities strictly increasing.
    intensity_min, intensity_max : float
        Range the curve was estimated on.
    t1, t2 : int
        Bin count used during estimation and number of knots.
    bin_centers, bin_sigma, bin_counts : ndarray or None
        Merged per-bin estimate and total samples per bin (diagnostics; absent
        for curves read from CSV).
    """

    intensity: np.ndarray
    sigma: np.ndarray
    intensity_min: float
    intensity_max: float
    t1: int
    t2: int
    bin_centers: Optional[np.ndarray] = None
    bin_sigma: Optional[np.ndarray] = None
    bin_counts: Optional[np.ndarray] = None

    def __post_init__(self):
        u = np.asarray(self.intensity, dtype=np.float64)
        g = np.asarray(self.sigma, dtype=np.float64)
        if u.shape != g.shape or u.ndim != 1:
            raise ConfigurationError("noise curve knots must be two equal-length 1-D arrays")
        if u.size < 2 or np.any(np.diff(u) <= 0):
            raise ConfigurationError("noise curve intensities must be strictly increasing")
        if np.any(~np.isfinite(g)) or np.any(g <= 0):
            raise ConfigurationError("noise curve deviations must be positive and finite")
        if not (self.t2 >= self.t1 >= 2):
            raise ConfigurationError(f"need t2 >= t1 >= 2, got t1={self.t1}, t2={self.t2}")
        object.__setattr__(self, "intensity", u)
        object.__setattr__(self, "sigma", g)

    @property
    def intensity_range(self) -> float:
        return self.intensity_max - self.intensity_min

    @property
    def mean_sigma(self) -> float:
        return float(np.mean(self.sigma))

    def __call__(self, u):
        return np.interp(u, self.intensity, self.sigma)

    def to_csv(self, path: Union[str, Path, None] = None) -> str:
        """Write ``intensity,sigma`` rows; returns the text as well."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["intensity", "sigma"])
        for u, g in zip(self.intensity, self.sigma):
            w.writerow([repr(float(u)), repr(float(g))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="ascii")
        return text

    @classmethod
    def from_csv(cls, source: Union[str, Path]) -> "NoiseCurve":
        """Read a curve written by :meth:`to_csv` (path or CSV text)."""
        if isinstance(source, Path) or "\n" not in str(source):
            text = Path(source).read_text(encoding="ascii")
        else:
            text = str(source)
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [h.strip() for h in rows[0]] != ["intensity", "sigma"]:
            raise ConfigurationError("noise curve CSV must start with header 'intensity,sigma'")
        data = np.array([[float(a), float(b)] for a, b in rows[1:] if a.strip()], dtype=np.float64)
        if data.shape[0] < 2:
            raise ConfigurationError("noise curve CSV needs at least two knots")
        u, g = data[:, 0], data[:, 1]
        n = len(u)
        return cls(u, g, float(u[0]), float(u[-1]), t1=n, t2=n)


def estimate_noise_curve(
    samples: NoiseSamples, t1: int = 10, t2: int = 100, min_count: int = MIN_BIN_COUNT
) -> NoiseCurve:
    """Merge per-frame binned noise estimates into one curve with ``t2`` knots.

    Per frame, intensities fall into ``t1`` equal-width bins over the
    sequence range and each bin gets the RMS of its samples. Frame bins with
    fewer than ``min_count`` samples are skipped; the remaining frames are
    merged per bin by their median. Bins left without an estimate, or below
    the deviation floor, take the value of the nearest valid bin. The bin
    values, placed at the bin centers, are linearly interpolated onto ``t2``
    equally spaced knots spanning the range.
    """
    if t1 < 2:
        raise ConfigurationError(f"t1 must be >= 2, got {t1}")
    if t2 < t1:
        raise ConfigurationError(f"t2 must be >= t1, got t1={t1}, t2={t2}")
    if len(samples) == 0:
        raise EstimationError("no frame contributed noise samples")
    span = samples.intensity_range
    if not span > 0:
        raise EstimationError("intensity range is zero; the noise curve is undefined")

    rms, counts = frame_bin_rms(samples, t1, min_count)
    nonempty = ~np.isnan(rms)
    if not nonempty.any():
        raise EstimationError("every intensity bin is empty")
    merged = np.full(t1, np.nan)
    has = nonempty.any(axis=0)
    merged[has] = np.nanmedian(rms[:, has], axis=0)

    floor = FLOOR_FRACTION * span
    valid = has & (merged >= floor)
    if valid.any():
        filled = _fill_invalid(merged, valid)
    else:
        log.warning("all noise bins fall below the deviation floor %.3g", floor)
        filled = np.full(t1, floor)

    lo, hi = samples.intensity_min, samples.intensity_max
    centers = lo + (np.arange(t1) + 0.5) * span / t1
    knots = np.linspace(lo, hi, t2)
    sigma = np.interp(knots, centers, filled)
    return NoiseCurve(
        intensity=knots,
        sigma=sigma,
        intensity_min=lo,
        intensity_max=hi,
        t1=t1,
        t2=t2,
        bin_centers=centers,
        bin_sigma=filled,
        bin_counts=counts.sum(axis=0),
    )


@dataclass(frozen=True, eq=False)
class VstTransform:
    """Monotone lookup tables for the stabilizing transform and its inverse.

    ``forward_u -> forward_v`` is f; the inverse table is the same pair with
    the roles swapped, so the round trip is exact at every knot.
    """

    forward_u: np.ndarray
    forward_v: np.ndarray
    sigma_target: float
    curve: Optional[NoiseCurve] = field(default=None, repr=False)

    @property
    def intensity_min(self) -> float:
        return float(self.forward_u[0])

    @property
    def intensity_max(self) -> float:
        return float(self.forward_u[-1])

    @property
    def inverse_u(self) -> np.ndarray:
        return self.forward_v

    @property
    def inverse_v(self) -> np.ndarray:
        return self.forward_u

    def forward(self, u):
        return np.interp(u, self.forward_u, self.forward_v)

    def inverse(self, v):
        return np.interp(v, self.forward_v, self.forward_u)


def build_vst(curve: NoiseCurve) -> VstTransform:
    """Integrate ``sigma / g`` with the trapezoid rule over the knot grid.

    The target deviation ``sigma`` is the mean of the knot deviations.
    """
    sigma = curve.mean_sigma
    u = curve.intensity
    h = sigma / curve.sigma
    f = np.concatenate(([0.0], np.cumsum(0.5 * (h[1:] + h[:-1]) * np.diff(u))))
    return VstTransform(forward_u=u.copy(), forward_v=f, sigma_target=sigma, curve=curve)


def _lookup(seq, xp, fp, return_clamped, what):
    frames = seq.frames
    lo, hi = xp[0], xp[-1]
    fg = seq.foreground
    outside = ((frames < lo) | (frames > hi)) & fg[None]
    n_clamped = int(outside.sum())
    if n_clamped:
        log.info("%s: clamped %d value(s) to [%.6g, %.6g]", what, n_clamped, lo, hi)
    out = seq.with_frames(np.interp(np.clip(frames, lo, hi), xp, fp))
    return (out, n_clamped) if return_clamped else out


def apply_vst(seq: SpectralSequence, t: VstTransform, return_clamped: bool = False):
    """Map intensities through f. Values outside the curve range are clamped.

    With ``return_clamped=True`` the number of clamped foreground values is
    returned alongside the sequence.
    """
    return _lookup(seq, t.forward_u, t.forward_v, return_clamped, "apply_vst")


def apply_ivst(seq: SpectralSequence, t: VstTransform, return_clamped: bool = False):
    """Inverse of :func:`apply_vst`."""
    return _lookup(seq, t.forward_v, t.forward_u, return_clamped, "apply_ivst")
