"""Blind adaptive local denoising of CEST z-spectrum image sequences.

Typical use::

    from bald import SpectralSequence, bald, contrast_maps
    denoised, curve = bald(seq)
    maps = contrast_maps(denoised)
"""

__version__ = "0.1.0"

from ._kernels import BACKEND
from .analysis import (
    DEFAULT_POOLS,
    ContrastMaps,
    FitResult,
    PoolSpec,
    aptw_map,
    contrast_maps,
    fit_lorentzian,
    lorentzian,
    lorentzian_jacobian,
    mtr_asym,
)
from .container import read_container, read_sequence, write_container, write_maps, write_sequence
from .core import Roi, SpectralSequence, extract_zspectrum, normalize_by_m0, rois_from_label_map
from .errors import BaldError, ConfigurationError, ContractError, DataError, EstimationError
from .evaluation import psnr, roi_stats, welch_t_test
from .noise import NoiseCurve, VstTransform, apply_ivst, apply_vst, build_vst, estimate_noise_curve, extract_noise_samples
from .phantom import PhantomSpec, add_model_noise, add_rician_noise, generate_phantom
from .pipeline import BaldParams, bald, wrap_denoiser
from .svd import PatchConfig, denoise_hard, denoise_wiener
