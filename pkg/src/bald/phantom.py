"""Synthetic CEST phantoms from the Lorentzian forward model, plus noise.

The default phantom is a 3 x 3 grid of compartments: APT concentration
grows left to right (0, 0.4, 0.8 M), NOE concentration grows top to bottom
(0, 0.8, 1.6 M), and every compartment shares water and a 15 M MT pool.
Concentrations map linearly to Lorentzian amplitudes through the
``amplitude_per_molar`` coefficients below; those coefficients, the line
widths and the A-D noise curves are our own choices.

Random numbers come from numpy's PCG64 bit generator seeded with the given
integer; Gaussian deviates use ``Generator.standard_normal``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .analysis import lorentzian
from .core import SpectralSequence
from .errors import ConfigurationError


@dataclass(frozen=True)
class SimPool:
    """Pool used for simulation; ``center`` is relative to water except for water."""

    name: str
    center: float
    width: float
    amplitude_per_molar: float
    concentration: float = 1.0


@dataclass(frozen=True)
class GradedPool:
    """Pool whose concentration steps along grid rows or columns."""

    pool: SimPool
    axis: str
    levels: tuple

    def __post_init__(self):
        if self.axis not in ("row", "col"):
            raise ConfigurationError(f"graded pool axis must be 'row' or 'col', got {self.axis!r}")
        if any(c < 0 for c in self.levels):
            raise ConfigurationError("concentrations must be >= 0")


def default_offsets() -> tuple:
    return tuple(np.round(np.arange(-40, 41) * 0.25, 10).tolist())


@dataclass(frozen=True)
class PhantomSpec:
    """Grid phantom layout.

    ``gap`` pixels between compartments (and at the image border) hold the
    background composition only (water + background pools).
    """

    height: int = 64
    width: int = 64
    grid: int = 3
    gap: int = 0
    offsets: tuple = field(default_factory=default_offsets)
    water: SimPool = SimPool("water", 0.0, 3.0, 0.8)
    background: tuple = (SimPool("MT", -2.5, 25.0, 0.1 / 15.0, 15.0),)
    graded: tuple = (
        GradedPool(SimPool("APT", 3.5, 1.5, 0.075), "col", (0.0, 0.4, 0.8)),
        GradedPool(SimPool("NOE", -3.5, 2.5, 0.05), "row", (0.0, 0.8, 1.6)),
    )

    def __post_init__(self):
        if self.grid < 1 or self.height < self.grid or self.width < self.grid:
            raise ConfigurationError("image too small for the compartment grid")
        if self.gap < 0:
            raise ConfigurationError("gap must be >= 0")
        for gp in self.graded:
            if len(gp.levels) != self.grid:
                raise ConfigurationError(f"pool {gp.pool.name}: need {self.grid} levels")
        if len(self.offsets) < 3:
            raise ConfigurationError("need at least 3 offsets")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        d = dict(d)
        kw = {}
        for key in ("height", "width", "grid", "gap"):
            if key in d:
                kw[key] = int(d.pop(key))
        if "size" in d:
            kw["height"] = kw["width"] = int(d.pop("size"))
        if "offsets" in d:
            off = d.pop("offsets")
            if isinstance(off, dict):
                n = int(round((off["stop"] - off["start"]) / off["step"]))
                off = (off["start"] + off["step"] * np.arange(n + 1)).round(10).tolist()
            kw["offsets"] = tuple(float(o) for o in off)
        if "water" in d:
            kw["water"] = SimPool(**d.pop("water"))
        if "background" in d:
            kw["background"] = tuple(SimPool(**b) for b in d.pop("background"))
        if "graded" in d:
            kw["graded"] = tuple(
                GradedPool(SimPool(**g["pool"]), g["axis"], tuple(g["levels"])) for g in d.pop("graded")
            )
        if d:
            raise ConfigurationError(f"unknown phantom spec keys: {sorted(d)}")
        return cls(**kw)


def load_phantom_spec(path: Union[str, Path]) -> PhantomSpec:
    """Read a phantom spec from a JSON document."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
    return PhantomSpec.from_dict(data)


def _edges(n, grid, gap):
    inner = n - gap * (grid + 1)
    if inner < grid:
        raise ConfigurationError("gap too large for the image")
    cuts = np.linspace(0, inner, grid + 1).round().astype(int)
    return [(gap * (i + 1) + cuts[i], gap * (i + 1) + cuts[i + 1]) for i in range(grid)]


def compartment_labels(spec: PhantomSpec) -> np.ndarray:
    """(H, W) int map: compartment ``row * grid + col + 1``; 0 for gaps."""
    lab = np.zeros((spec.height, spec.width), dtype=np.int64)
    for i, (r0, r1) in enumerate(_edges(spec.height, spec.grid, spec.gap)):
        for j, (c0, c1) in enumerate(_edges(spec.width, spec.grid, spec.gap)):
            lab[r0:r1, c0:c1] = i * spec.grid + j + 1
    return lab


def compartment_params(spec: PhantomSpec, row: Optional[int], col: Optional[int]) -> np.ndarray:
    """Packed Lorentzian parameters of one compartment (``None`` = background)."""
    w = spec.water
    p = [w.amplitude_per_molar * w.concentration, w.width, w.center]
    for b in spec.background:
        p += [b.amplitude_per_molar * b.concentration, b.width, b.center]
    for gp in spec.graded:
        if row is None:
            conc = 0.0
        else:
            conc = gp.levels[col if gp.axis == "col" else row]
        p += [gp.pool.amplitude_per_molar * conc, gp.pool.width, gp.pool.center]
    return np.array(p, dtype=np.float64)


def pool_names(spec: PhantomSpec) -> list:
    return [spec.water.name] + [b.name for b in spec.background] + [g.pool.name for g in spec.graded]


def ground_truth_amplitudes(spec: PhantomSpec) -> dict:
    """Per-pool (H, W) amplitude maps of the clean phantom."""
    lab = compartment_labels(spec)
    names = pool_names(spec)
    maps = {n: np.zeros(lab.shape) for n in names}
    for value in np.unique(lab):
        if value == 0:
            p = compartment_params(spec, None, None)
        else:
            p = compartment_params(spec, *divmod(int(value) - 1, spec.grid))
        for k, n in enumerate(names):
            maps[n][lab == value] = p[3 * k]
    return maps


def generate_phantom(spec: PhantomSpec = PhantomSpec()) -> SpectralSequence:
    """Clean phantom sequence (normalized; M0 is all ones)."""
    offsets = np.asarray(spec.offsets, dtype=np.float64)
    lab = compartment_labels(spec)
    frames = np.empty((offsets.size, spec.height, spec.width))
    for value in np.unique(lab):
        if value == 0:
            p = compartment_params(spec, None, None)
        else:
            p = compartment_params(spec, *divmod(int(value) - 1, spec.grid))
        z = lorentzian(p, offsets)
        frames[:, lab == value] = z[:, None]
    meta = {"phantom": spec.to_dict()}
    return SpectralSequence(frames, offsets, m0=np.ones((spec.height, spec.width)), metadata=meta)


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def add_rician_noise(seq: SpectralSequence, sigma_n: float, seed: int) -> SpectralSequence:
    """Magnitude of the signal plus complex Gaussian noise of deviation ``sigma_n``."""
    if not sigma_n > 0:
        raise ConfigurationError(f"noise level must be > 0, got {sigma_n}")
    rng = rng_for(seed)
    n = rng.standard_normal((2,) + seq.shape) * sigma_n
    out = np.sqrt((seq.frames + n[0]) ** 2 + n[1] ** 2)
    return seq.with_frames(out)


#: g(u) = a + b * exp(-u / c) for the four analytic noise curves.
NOISE_MODELS = {
    "A": (0.025, 0.035, 0.3),
    "B": (0.04, 0.025, 0.4),
    "C": (0.015, 0.04, 0.35),
    "D": (0.05, 0.015, 0.3),
}


def noise_model(curve_id: str = "A", params: Optional[tuple] = None):
    """Return the analytic curve ``g`` for ``curve_id`` (or explicit ``params``)."""
    if params is None:
        if curve_id not in NOISE_MODELS:
            raise ConfigurationError(f"unknown noise model {curve_id!r}; known: {sorted(NOISE_MODELS)}")
        params = NOISE_MODELS[curve_id]
    a, b, c = (float(v) for v in params)
    if a < 0 or b < 0 or c <= 0 or a + b <= 0:
        raise ConfigurationError(f"invalid noise model parameters {params}")

    def g(u):
        return a + b * np.exp(-np.asarray(u, dtype=np.float64) / c)

    g.params = (a, b, c)
    return g


def add_model_noise(
    seq: SpectralSequence, curve_id: str, seed: int, params: Optional[tuple] = None
) -> SpectralSequence:
    """Signal-dependent Gaussian noise ``v + g(v) * n`` with ``n ~ N(0, 1)``."""
    g = noise_model(curve_id, params)
    n = rng_for(seed).standard_normal(seq.shape)
    return seq.with_frames(seq.frames + g(seq.frames) * n)


@dataclass(frozen=True)
class NoiseSpec:
    """``kind`` is ``"rician"`` (uses ``level``) or ``"model"`` (uses ``curve_id``)."""

    kind: str = "rician"
    level: float = 0.05
    curve_id: str = "A"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("rician", "model"):
            raise ConfigurationError(f"unknown noise kind {self.kind!r}")
        if self.kind == "rician" and not self.level > 0:
            raise ConfigurationError("rician noise level must be > 0")

    def apply(self, seq: SpectralSequence) -> SpectralSequence:
        if self.kind == "rician":
            return add_rician_noise(seq, self.level, self.seed)
        return add_model_noise(seq, self.curve_id, self.seed)
