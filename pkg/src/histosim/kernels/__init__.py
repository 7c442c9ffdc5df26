"""Hot per-pixel kernels with a compiled core and a numpy fallback.

The compiled extension (``histosim.kernels._native``, Cython) is preferred
when it imported cleanly; otherwise the numpy reference backend is used.
``HISTOSIM_KERNELS=numpy|native`` forces a backend at import time and
:func:`set_backend` switches at runtime (used by tests and the benchmark).
"""

import os

from . import _reference

_backends = {"numpy": _reference}
try:
    from . import _native

    _backends["native"] = _native
except ImportError:
    pass

_forced = os.environ.get("HISTOSIM_KERNELS")
if _forced:
    if _forced not in _backends:
        raise ImportError(
            f"HISTOSIM_KERNELS={_forced!r} but only {sorted(_backends)} available"
        )
    _active = _backends[_forced]
else:
    _active = _backends.get("native", _reference)


def available_backends() -> list[str]:
    return sorted(_backends)


def active_backend() -> str:
    return _active.BACKEND_NAME


def set_backend(name: str) -> None:
    global _active
    if name not in _backends:
        raise ValueError(f"unknown kernel backend {name!r}; have {sorted(_backends)}")
    _active = _backends[name]


def get_backend(name: str):
    """Direct handle to a backend module (benchmark / parity tests)."""
    return _backends[name]


def median_filter(img, k=3):
    return _active.median_filter(img, k)


def joint_histogram(a, b, bins=64):
    return _active.joint_histogram(a, b, bins)


def bilinear_sample(img, rows, cols):
    return _active.bilinear_sample(img, rows, cols)


def clahe(img, grid=(8, 8), clip_limit=2.0, nbins=256):
    return _active.clahe(img, grid=grid, clip_limit=clip_limit, nbins=nbins)
