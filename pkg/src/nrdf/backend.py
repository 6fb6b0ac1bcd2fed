"""Selects the alternating-minimization kernel at import time.

The compiled extension is preferred when importable; the pure-numpy twin is
the fallback.  NRDF_BACKEND=pure|compiled forces a choice (forcing
``compiled`` when the extension is missing raises at first use).
"""

from __future__ import annotations

import os

from . import _ampure
from .errors import ValidationError

try:
    from . import _amcore as _compiled
except ImportError:  # extension not built
    _compiled = None

_FORCED = os.environ.get("NRDF_BACKEND", "").strip().lower() or None


def compiled_available() -> bool:
    return _compiled is not None


def get_kernel(name: str | None = None):
    """Return the kernel module for ``name`` (None = environment/default)."""
    choice = name or _FORCED
    if choice in (None, "auto"):
        return _compiled if _compiled is not None else _ampure
    if choice == "pure":
        return _ampure
    if choice == "compiled":
        if _compiled is None:
            raise ValidationError(
                "compiled backend requested but nrdf._amcore is not built; "
                "run `python setup.py build_ext --inplace` or `pip install .`"
            )
        return _compiled
    raise ValidationError(f"unknown backend {choice!r}; expected 'pure' or 'compiled'")


def active_name(name: str | None = None) -> str:
    return get_kernel(name).NAME
