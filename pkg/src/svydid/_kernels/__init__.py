"""Hot grouped kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``SVYDID_BACKEND=python`` is set, the numpy versions
are used. Both backends take C-contiguous float64 arrays and int64 codes;
the wrappers below enforce that so callers can pass anything array-like.
"""

import importlib
import os

import numpy as np

from svydid._kernels import _pykernels

_ckernels = None
if os.environ.get("SVYDID_BACKEND", "").lower() != "python":
    try:
        _ckernels = importlib.import_module("svydid._kernels._ckernels")
    except ImportError:  # extension not built
        _ckernels = None

BACKEND = "cython" if _ckernels is not None else "python"

__all__ = [
    "BACKEND",
    "backend_module",
    "group_sum",
    "stratified_meat",
    "demean_one_way",
    "demean_two_way",
]


def backend_module(name=None):
    """Return the kernel module for ``name`` ("cython" or "python")."""
    name = name or BACKEND
    if name == "cython":
        if _ckernels is None:
            raise ImportError("compiled kernels are not available")
        return _ckernels
    if name == "python":
        return _pykernels
    raise ValueError(f"unknown backend {name!r}")


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def group_sum(values, codes, n_groups, backend=None):
    """Column sums of a 2-D array within integer-coded groups."""
    values = _f64(values)
    squeeze = values.ndim == 1
    if squeeze:
        values = values[:, None]
    out = backend_module(backend).group_sum(values, _i64(codes), int(n_groups))
    return out[:, 0] if squeeze else out


def stratified_meat(totals, psu_stratum, factor, n_strata, backend=None):
    """Sum over strata of ``factor[h] * sum_j c_hj c_hj'`` with ``c`` centred within stratum.

    Returns the (k, k) total and the (H, k, k) per-stratum pieces.
    """
    totals = _f64(totals)
    if totals.ndim == 1:
        totals = totals[:, None]
    return backend_module(backend).stratified_meat(
        totals, _i64(psu_stratum), _f64(factor), int(n_strata)
    )


def demean_one_way(x, codes, w, n_groups, backend=None):
    """Return ``x`` minus its weighted group means (copy)."""
    x = np.array(x, dtype=np.float64, order="C", copy=True)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    backend_module(backend).demean_one_way(x, _i64(codes), _f64(w), int(n_groups))
    return x[:, 0] if squeeze else x


def demean_two_way(x, codes1, n1, codes2, n2, w, tol=1e-10, max_iter=1000, backend=None):
    """Alternating weighted demeaning by two factors.

    Returns ``(demeaned copy, iterations, last correction)``. ``tol`` is
    absolute on the largest second-factor correction of a sweep.
    """
    x = np.array(x, dtype=np.float64, order="C", copy=True)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    it, delta = backend_module(backend).demean_two_way(
        x, _i64(codes1), int(n1), _i64(codes2), int(n2), _f64(w), float(tol), int(max_iter)
    )
    return (x[:, 0] if squeeze else x), int(it), float(delta)
