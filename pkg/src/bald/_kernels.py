"""Backend selection for the hot kernels.

The compiled extension ``bald._ext`` is used when it imports; otherwise, or
when the environment variable ``BALD_PURE_PYTHON`` is set to a non-empty
value other than ``0``, the numpy fallback is used.
"""

import os

from . import _kernels_py

_force_py = os.environ.get("BALD_PURE_PYTHON", "") not in ("", "0")

try:
    if _force_py:
        raise ImportError("pure-python backend forced")
    from . import _ext as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _kernels_py
    BACKEND = "python"

BACKENDS = {"python": _kernels_py}
if BACKEND == "cython":
    BACKENDS["cython"] = _impl
else:
    try:
        from . import _ext

        BACKENDS["cython"] = _ext
    except ImportError:
        pass


def get(name=None):
    """Kernel module by name; ``None`` means the active backend."""
    if name is None:
        return _impl
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available; have {sorted(BACKENDS)}") from None


lorentzian_eval = _impl.lorentzian_eval
lorentzian_jac = _impl.lorentzian_jac
lm_fit = _impl.lm_fit
patch_hard = _impl.patch_hard
patch_wiener = _impl.patch_wiener
