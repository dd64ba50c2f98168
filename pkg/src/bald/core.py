"""Sequence container, ROIs and M0 normalization."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DataError


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def average_m0(m0_stack: np.ndarray) -> np.ndarray:
    """Average repeated M0 acquisitions of shape (k, H, W) into one frame.

    A single (H, W) frame is returned unchanged (as float64).
    """
    m0_stack = np.asarray(m0_stack, dtype=np.float64)
    if m0_stack.ndim == 2:
        return m0_stack.copy()
    if m0_stack.ndim != 3 or m0_stack.shape[0] == 0:
        raise ConfigurationError(f"M0 stack must be (k, H, W), got shape {m0_stack.shape}")
    return m0_stack.mean(axis=0)


@dataclass(frozen=True, eq=False)
class SpectralSequence:
    """Stack of C saturation-offset frames of size H x W.

    Parameters
    ----------
    frames : array_like, shape (C, H, W)
        Intensities, stored as float64.
    offsets_ppm : array_like, shape (C,)
        Saturation offsets; strictly monotone.
    m0 : array_like, optional
        Reference frame (H, W), or a (k, H, W) stack that is averaged.
    mask : array_like of bool, optional
        Foreground mask (H, W). All pixels are foreground when omitted.

    Instances are immutable: arrays are copied and flagged read-only.
    """

    frames: np.ndarray
    offsets_ppm: np.ndarray
    m0: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        frames = np.array(self.frames, dtype=np.float64, copy=True)
        if frames.ndim != 3:
            raise ConfigurationError(f"frames must be 3-D (C, H, W), got shape {frames.shape}")
        offsets = np.array(self.offsets_ppm, dtype=np.float64, copy=True).ravel()
        if offsets.shape[0] != frames.shape[0]:
            raise ConfigurationError(
                f"{offsets.shape[0]} offsets given for {frames.shape[0]} frames"
            )
        if offsets.size > 1:
            d = np.diff(offsets)
            if not (np.all(d > 0) or np.all(d < 0)):
                raise ConfigurationError("offsets_ppm must be strictly monotone without duplicates")
        object.__setattr__(self, "frames", _readonly(frames))
        object.__setattr__(self, "offsets_ppm", _readonly(offsets))

        if self.m0 is not None:
            m0 = average_m0(self.m0)
            if m0.shape != frames.shape[1:]:
                raise ConfigurationError(f"m0 shape {m0.shape} does not match frames {frames.shape[1:]}")
            object.__setattr__(self, "m0", _readonly(m0))
        if self.mask is not None:
            mask = np.array(self.mask, dtype=bool, copy=True)
            if mask.shape != frames.shape[1:]:
                raise ConfigurationError(f"mask shape {mask.shape} does not match frames {frames.shape[1:]}")
            object.__setattr__(self, "mask", _readonly(mask))
        object.__setattr__(self, "metadata", dict(self.metadata))

    @property
    def n_offsets(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def shape(self) -> tuple:
        return self.frames.shape

    @property
    def foreground(self) -> np.ndarray:
        """Boolean (H, W) mask; all True when no mask was given."""
        if self.mask is None:
            return np.ones(self.frames.shape[1:], dtype=bool)
        return self.mask

    def with_frames(self, frames: np.ndarray, **changes) -> "SpectralSequence":
        """Copy of this sequence with new frames (same offsets, m0, mask)."""
        return replace(self, frames=frames, **changes)


@dataclass(frozen=True)
class Roi:
    """Named set of (row, col) pixel coordinates."""

    label: str
    pixels: tuple

    def __post_init__(self):
        pix = tuple(sorted({(int(r), int(c)) for r, c in self.pixels}))
        if not pix:
            raise ConfigurationError(f"ROI {self.label!r} is empty")
        object.__setattr__(self, "pixels", pix)

    @classmethod
    def from_mask(cls, label: str, mask: np.ndarray) -> "Roi":
        rows, cols = np.nonzero(np.asarray(mask, dtype=bool))
        return cls(label, tuple(zip(rows.tolist(), cols.tolist())))

    def check_bounds(self, height: int, width: int) -> None:
        for r, c in self.pixels:
            if not (0 <= r < height and 0 <= c < width):
                raise ConfigurationError(
                    f"ROI {self.label!r} pixel ({r}, {c}) outside {height}x{width} image"
                )

    def index(self) -> tuple:
        """Row and column index arrays suitable for fancy indexing."""
        arr = np.asarray(self.pixels, dtype=np.intp)
        return arr[:, 0], arr[:, 1]


def rois_from_label_map(labels: np.ndarray, names: Optional[dict] = None) -> list:
    """Split an integer label map into ROIs; label 0 is background."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ConfigurationError("label map must be 2-D")
    names = names or {}
    out = []
    for value in np.unique(labels):
        if value == 0:
            continue
        out.append(Roi.from_mask(names.get(int(value), f"roi{int(value)}"), labels == value))
    return out


def normalize_by_m0(seq: SpectralSequence) -> SpectralSequence:
    """Divide every frame by M0 pixel-wise.

    Off-mask pixels are set to 0 and the returned M0 is all ones, so a
    second application is a no-op.
    """
    if seq.m0 is None:
        raise ConfigurationError("normalize_by_m0 requires an M0 frame")
    fg = seq.foreground
    m0 = seq.m0
    bad = fg & ~(m0 > 0)
    if bad.any():
        raise DataError(f"M0 is non-positive at {int(bad.sum())} foreground pixel(s)")
    safe = np.where(fg, m0, 1.0)
    frames = np.where(fg[None], seq.frames / safe[None], 0.0)
    return seq.with_frames(frames, m0=np.ones_like(m0))


def extract_zspectrum(seq: SpectralSequence, row: int, col: int) -> list:
    """Return the (offset_ppm, z) pairs of one pixel in stored offset order."""
    if not (0 <= row < seq.height and 0 <= col < seq.width):
        raise IndexError(f"pixel ({row}, {col}) outside {seq.height}x{seq.width} image")
    values = seq.frames[:, row, col]
    return [(float(o), float(v)) for o, v in zip(seq.offsets_ppm, values)]


def check_finite(seq: SpectralSequence) -> None:
    if not np.all(np.isfinite(seq.frames)):
        raise DataError("sequence contains non-finite intensities")

