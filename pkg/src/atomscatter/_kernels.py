"""Hot loops with a numba implementation and a pure numpy/scipy fallback.

Set ``ATOMSCATTER_DISABLE_NUMBA=1`` to force the fallback (also used when
numba cannot be imported).  Both paths take 2-d float arrays shaped
(replicas, bins) and are checked against each other in the test suite.
"""
from __future__ import annotations

import os

import numpy as np
from scipy.signal import lfilter

_DISABLED = os.environ.get("ATOMSCATTER_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:
    if _DISABLED:
        raise ImportError("disabled by ATOMSCATTER_DISABLE_NUMBA")
    from numba import njit
    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


def first_order_recursion_numpy(x: np.ndarray, a: float) -> np.ndarray:
    """y[:, n] = a * y[:, n-1] + x[:, n] with y[:, -1] = 0."""
    return lfilter([1.0], [1.0, -a], x, axis=-1)


def parabolic_peak_numpy(y: np.ndarray):
    """Row-wise argmax (earliest on ties) refined by a 3-point parabola.

    Returns (value, offset, index) where offset is the vertex position in
    units of samples relative to ``index``.
    """
    n_rows, n = y.shape
    idx = np.argmax(y, axis=1)
    rows = np.arange(n_rows)
    value = y[rows, idx].copy()
    offset = np.zeros(n_rows)
    interior = (idx > 0) & (idx < n - 1)
    if np.any(interior):
        r, i = rows[interior], idx[interior]
        y0, y1, y2 = y[r, i - 1], y[r, i], y[r, i + 1]
        curv = y0 - 2.0 * y1 + y2
        ok = curv < 0
        off = np.where(ok, 0.5 * (y0 - y2) / np.where(ok, curv, -1.0), 0.0)
        offset[interior] = off
        value[interior] = y1 - 0.25 * (y0 - y2) * off
    return value, offset, idx


if HAS_NUMBA:

    @njit(cache=True)
    def first_order_recursion_numba(x, a):
        out = np.empty_like(x)
        n_rows, n = x.shape
        for r in range(n_rows):
            acc = 0.0
            for i in range(n):
                acc = a * acc + x[r, i]
                out[r, i] = acc
        return out

    @njit(cache=True)
    def parabolic_peak_numba(y):
        n_rows, n = y.shape
        value = np.empty(n_rows)
        offset = np.zeros(n_rows)
        idx = np.empty(n_rows, dtype=np.int64)
        for r in range(n_rows):
            best = 0
            for i in range(1, n):
                if y[r, i] > y[r, best]:
                    best = i
            idx[r] = best
            value[r] = y[r, best]
            if 0 < best < n - 1:
                y0 = y[r, best - 1]
                y1 = y[r, best]
                y2 = y[r, best + 1]
                curv = y0 - 2.0 * y1 + y2
                if curv < 0:
                    off = 0.5 * (y0 - y2) / curv
                    offset[r] = off
                    value[r] = y1 - 0.25 * (y0 - y2) * off
        return value, offset, idx

    first_order_recursion = first_order_recursion_numba
    parabolic_peak = parabolic_peak_numba
else:
    first_order_recursion = first_order_recursion_numpy
    parabolic_peak = parabolic_peak_numpy


def backend() -> str:
    return "numba" if HAS_NUMBA else "numpy"
