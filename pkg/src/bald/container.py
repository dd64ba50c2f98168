"""On-disk container: a JSON sidecar plus a raw little-endian float32 payload.

Layout of ``<stem>.json``::

    {
      "format": "bald-container", "version": 1,
      "dims": {"channels": C, "height": H, "width": W},
      "order": "channel-major, row-major",
      "dtype": "float32", "endianness": "little",
      "payload": "<stem>.raw", "payload_bytes": C*H*W*4,
      "offsets_ppm": [...]          # sequences
      "channels": ["APT", ...]      # named maps (fit output, label maps)
      "m0": "<stem>.m0.raw"         # optional, float32 (H, W)
      "mask": "<stem>.mask.raw"     # optional, uint8 (H, W)
      "metadata": {...}, "provenance": {...}
    }

Exactly one of ``offsets_ppm`` / ``channels`` is present. Sidecars are
written with sorted keys and no timestamps so equal inputs give equal bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .core import SpectralSequence
from .errors import ConfigurationError, DataError

FORMAT = "bald-container"
VERSION = 1
_F32 = np.dtype("<f4")
_U8 = np.dtype("u1")

PathLike = Union[str, Path]


def sidecar_path(path: PathLike) -> Path:
    """``x``, ``x.json`` and ``x.raw`` all name the sidecar ``x.json``."""
    p = Path(path)
    if p.suffix in (".json", ".raw"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".json")


@dataclass(frozen=True, eq=False)
class Container:
    """Raw contents of a container; ``data`` is float64 of the stored float32 values."""

    data: np.ndarray
    offsets_ppm: Optional[np.ndarray] = None
    channels: Optional[list] = None
    m0: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def to_sequence(self) -> SpectralSequence:
        if self.offsets_ppm is None:
            raise ConfigurationError("container holds named maps, not a spectral sequence")
        return SpectralSequence(self.data, self.offsets_ppm, m0=self.m0, mask=self.mask, metadata=self.metadata)

    def channel(self, name: str) -> np.ndarray:
        if not self.channels or name not in self.channels:
            raise ConfigurationError(f"no channel {name!r}; have {self.channels}")
        return self.data[self.channels.index(name)]


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def write_container(
    path: PathLike,
    data,
    offsets_ppm=None,
    channels=None,
    m0=None,
    mask=None,
    metadata: Optional[dict] = None,
    provenance: Optional[dict] = None,
) -> Path:
    """Write ``data`` (C, H, W) and return the sidecar path."""
    data = np.asarray(data)
    if data.ndim != 3:
        raise ConfigurationError(f"container data must be (C, H, W), got {data.shape}")
    if (offsets_ppm is None) == (channels is None):
        raise ConfigurationError("give exactly one of offsets_ppm or channels")
    C, H, W = data.shape
    side = sidecar_path(path)
    side.parent.mkdir(parents=True, exist_ok=True)
    stem = side.with_suffix("")
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "dims": {"channels": C, "height": H, "width": W},
        "order": "channel-major, row-major",
        "dtype": "float32",
        "endianness": "little",
        "payload": stem.name + ".raw",
        "payload_bytes": C * H * W * 4,
        "metadata": _json_safe(metadata or {}),
        "provenance": _json_safe(provenance or {}),
    }
    if offsets_ppm is not None:
        off = np.asarray(offsets_ppm, dtype=np.float64).ravel()
        if off.size != C:
            raise ConfigurationError(f"{off.size} offsets for {C} frames")
        doc["offsets_ppm"] = off.tolist()
    else:
        channels = [str(c) for c in channels]
        if len(channels) != C:
            raise ConfigurationError(f"{len(channels)} channel names for {C} channels")
        doc["channels"] = channels
    stem.with_name(doc["payload"]).write_bytes(np.ascontiguousarray(data, dtype=_F32).tobytes())
    if m0 is not None:
        m0 = np.asarray(m0)
        if m0.shape != (H, W):
            raise ConfigurationError(f"m0 shape {m0.shape} != {(H, W)}")
        doc["m0"] = stem.name + ".m0.raw"
        stem.with_name(doc["m0"]).write_bytes(np.ascontiguousarray(m0, dtype=_F32).tobytes())
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (H, W):
            raise ConfigurationError(f"mask shape {mask.shape} != {(H, W)}")
        doc["mask"] = stem.name + ".mask.raw"
        stem.with_name(doc["mask"]).write_bytes(mask.astype(_U8).tobytes())
    side.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return side


def write_sequence(path: PathLike, seq: SpectralSequence, provenance: Optional[dict] = None) -> Path:
    return write_container(
        path, seq.frames, offsets_ppm=seq.offsets_ppm, m0=seq.m0, mask=seq.mask,
        metadata=seq.metadata, provenance=provenance,
    )


def write_maps(path: PathLike, maps: dict, mask=None, metadata=None, provenance=None) -> Path:
    """Named (H, W) maps as a channel container, in insertion order."""
    names = list(maps)
    if not names:
        raise ConfigurationError("no maps to write")
    data = np.stack([np.asarray(maps[n], dtype=np.float64) for n in names])
    return write_container(path, data, channels=names, mask=mask, metadata=metadata, provenance=provenance)


def _read_raw(path: Path, dtype, count: int) -> np.ndarray:
    try:
        buf = path.read_bytes()
    except FileNotFoundError:
        raise FileNotFoundError(f"container payload missing: {path}") from None
    if len(buf) != count * dtype.itemsize:
        raise DataError(f"{path}: {len(buf)} bytes, expected {count * dtype.itemsize}")
    return np.frombuffer(buf, dtype=dtype)


def read_container(path: PathLike) -> Container:
    side = sidecar_path(path)
    try:
        doc = json.loads(side.read_text())
    except FileNotFoundError:
        raise FileNotFoundError(f"no such container: {side}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{side}: invalid sidecar ({exc})") from None
    if doc.get("format") != FORMAT:
        raise DataError(f"{side}: not a {FORMAT} sidecar")
    if doc.get("dtype") != "float32" or doc.get("endianness") != "little":
        raise DataError(f"{side}: unsupported dtype/endianness {doc.get('dtype')}/{doc.get('endianness')}")
    try:
        C, H, W = (int(doc["dims"][k]) for k in ("channels", "height", "width"))
    except (KeyError, TypeError, ValueError):
        raise DataError(f"{side}: malformed dims") from None
    if doc.get("payload_bytes") != C * H * W * 4:
        raise DataError(f"{side}: payload_bytes inconsistent with dims")
    base = side.parent
    data = _read_raw(base / doc["payload"], _F32, C * H * W).reshape(C, H, W).astype(np.float64)
    offsets = channels = None
    if "offsets_ppm" in doc:
        offsets = np.asarray(doc["offsets_ppm"], dtype=np.float64)
        if offsets.size != C:
            raise DataError(f"{side}: {offsets.size} offsets for {C} frames")
    elif "channels" in doc:
        channels = list(doc["channels"])
        if len(channels) != C:
            raise DataError(f"{side}: {len(channels)} channel names for {C} channels")
    else:
        raise DataError(f"{side}: neither offsets_ppm nor channels")
    m0 = mask = None
    if doc.get("m0"):
        m0 = _read_raw(base / doc["m0"], _F32, H * W).reshape(H, W).astype(np.float64)
    if doc.get("mask"):
        mask = _read_raw(base / doc["mask"], _U8, H * W).reshape(H, W).astype(bool)
    return Container(data, offsets, channels, m0, mask, doc.get("metadata", {}), doc.get("provenance", {}))


def read_sequence(path: PathLike) -> SpectralSequence:
    return read_container(path).to_sequence()
