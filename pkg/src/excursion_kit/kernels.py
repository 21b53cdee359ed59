"""Kernel dispatch: compiled ``_core`` when importable, numpy fallback otherwise.

Set ``EXCURSION_KIT_PURE=1`` to force the fallback (used by the benchmark and
by the equivalence tests).
"""
import os

import numpy as np

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("EXCURSION_KIT_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _core as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        BACKEND = "cython"


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _starts(s):
    return np.ascontiguousarray(s, dtype=np.int64)


def logistic_terms(X, y, w, beta, lam):
    return _impl.logistic_terms(_f64(X), _f64(y), _f64(w), _f64(beta), float(lam))


def grouped_cumprod(values, starts):
    return _impl.grouped_cumprod(_f64(values), _starts(starts))


def group_sums(values, starts):
    return _impl.group_sums(_f64(values), _starts(starts))


def clamp(values, lo, hi):
    return _impl.clamp(_f64(values), float(lo), float(hi))


def use_backend(name):
    """Switch implementation at runtime ('cython' or 'python'); returns the previous name."""
    global _impl, BACKEND
    previous = BACKEND
    if name == "python":
        _impl, BACKEND = _fallback, "python"
    elif name == "cython":
        from . import _core
        _impl, BACKEND = _core, "cython"
    else:
        raise ValueError(f"unknown backend {name!r}")
    return previous
