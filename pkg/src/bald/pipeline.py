"""End-to-end pipeline: stabilize, denoise in two stages, restore.

Any callable ``denoiser(seq, sigma) -> seq`` can be run inside the
stabilized domain through :func:`wrap_denoiser`; the built-in two-stage SVD
denoiser is one such callable.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Optional, Protocol

import numpy as np

from .core import SpectralSequence, check_finite
from .errors import ConfigurationError, ContractError
from .noise import (
    NoiseCurve,
    VstTransform,
    apply_ivst,
    apply_vst,
    build_vst,
    estimate_noise_curve,
    extract_noise_samples,
)
from .svd import PatchConfig, denoise_hard, denoise_wiener


class Denoiser(Protocol):
    def __call__(self, seq: SpectralSequence, sigma: float) -> SpectralSequence: ...


@dataclass(frozen=True)
class BaldParams:
    t1: int = 10
    t2: int = 100
    patch_size: int = 8
    stride: Optional[int] = None
    workers: int = 1

    def __post_init__(self):
        if self.t1 < 2:
            raise ConfigurationError(f"t1 must be >= 2, got {self.t1}")
        if self.t2 < self.t1:
            raise ConfigurationError(f"t2 must be >= t1, got t1={self.t1}, t2={self.t2}")
        PatchConfig(self.patch_size, self.stride)

    @property
    def patch(self) -> PatchConfig:
        return PatchConfig(self.patch_size, self.stride)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stride"] = self.patch.stride
        return d


def two_stage_svd(cfg: PatchConfig = PatchConfig(), workers: int = 1, backend=None) -> Denoiser:
    """Hard-threshold pass whose output guides a Wiener pass, same ``sigma``."""

    def denoise(seq: SpectralSequence, sigma: float) -> SpectralSequence:
        guide = denoise_hard(seq, sigma, cfg, workers=workers, backend=backend)
        return denoise_wiener(seq, guide, sigma, cfg, workers=workers, backend=backend)

    denoise.__name__ = "two_stage_svd"
    return denoise


DENOISERS: dict = {"svd2": two_stage_svd}


def register_denoiser(name: str, factory: Callable[..., Denoiser]) -> None:
    DENOISERS[name] = factory


def estimate_transform(seq: SpectralSequence, t1: int = 10, t2: int = 100) -> tuple:
    """Noise curve and stabilizing transform estimated from ``seq`` itself."""
    curve = estimate_noise_curve(extract_noise_samples(seq), t1, t2)
    return curve, build_vst(curve)


def wrap_denoiser(
    seq: SpectralSequence,
    external: Denoiser,
    transform: Optional[VstTransform] = None,
    t1: int = 10,
    t2: int = 100,
) -> SpectralSequence:
    """Run ``external`` on the stabilized sequence and map the result back.

    ``external`` receives the stabilized sequence and the target deviation
    and must return a sequence of the same shape. When ``transform`` is
    omitted it is estimated from ``seq``.
    """
    check_finite(seq)
    if transform is None:
        _, transform = estimate_transform(seq, t1, t2)
    stabilized = apply_vst(seq, transform)
    result = external(stabilized, transform.sigma_target)
    frames = getattr(result, "frames", result)
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape != seq.shape:
        raise ContractError(f"denoiser changed shape {seq.shape} -> {frames.shape}")
    restored = apply_ivst(stabilized.with_frames(frames), transform)
    fg = seq.foreground
    if not fg.all():
        restored = restored.with_frames(np.where(fg[None], restored.frames, seq.frames))
    return restored


def bald(
    seq: SpectralSequence,
    params: BaldParams = BaldParams(),
    curve: Optional[NoiseCurve] = None,
    backend: Optional[str] = None,
) -> tuple:
    """Blind denoising of ``seq``; returns ``(denoised, noise_curve)``.

    The curve is estimated from the data unless one is supplied (used to
    study mismatched noise models).
    """
    if seq.n_offsets < 3:
        raise ConfigurationError("need at least 3 offsets")
    check_finite(seq)
    params.patch.check(seq.height, seq.width)
    if curve is None:
        curve = estimate_noise_curve(extract_noise_samples(seq), params.t1, params.t2)
    transform = build_vst(curve)
    denoiser = two_stage_svd(params.patch, params.workers, backend)
    out = wrap_denoiser(seq, denoiser, transform=transform)
    meta = dict(seq.metadata)
    meta["bald"] = {"params": params.to_dict(), "sigma": transform.sigma_target}
    return out.with_frames(out.frames, metadata=meta), curve
