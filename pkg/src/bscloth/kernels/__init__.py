"""Hot kernels with a compiled backend and a numpy fallback.

The compiled module is used when it was built; ``BSCLOTH_KERNELS=python``
forces the fallback and ``BSCLOTH_KERNELS=cython`` makes a missing build an
error.
"""

from __future__ import annotations

import importlib
import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)

_NAMES = ("classify_pt", "classify_ee", "segment_sum", "accumulate_keyed")


def _load_compiled():
    try:
        return importlib.import_module("bscloth.kernels._ckernels")
    except ImportError:
        return None


_compiled = _load_compiled()


def get_backend(name: str | None = None):
    """Module providing the kernel functions for ``name`` in {auto, cython, python}."""
    name = (name or os.environ.get("BSCLOTH_KERNELS", "auto")).lower()
    if name == "python":
        return _pykernels
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels requested but bscloth.kernels._ckernels is not built")
        return _compiled
    if name != "auto":
        raise ValueError(f"unknown kernel backend {name!r}")
    return _compiled if _compiled is not None else _pykernels


def available_backends() -> list[str]:
    return ["python"] + (["cython"] if _compiled is not None else [])


backend = get_backend()
BACKEND = "cython" if backend is _compiled and _compiled is not None else "python"
log.debug("kernel backend: %s", BACKEND)

classify_pt = backend.classify_pt
classify_ee = backend.classify_ee
segment_sum = backend.segment_sum
accumulate_keyed = backend.accumulate_keyed

__all__ = ["BACKEND", "available_backends", "get_backend", *_NAMES]
