"""Shared numerical helpers: sequence extrapolation and power-law fits."""

from __future__ import annotations

import numpy as np


def richardson_limit(xs, values, terms: int = 3):
    """Limit of values(x) as x -> infinity assuming an expansion in 1/x.

    Fits values = L + c1/x + ... + c_{terms-1}/x^{terms-1} through the last
    ``terms`` samples and returns (L, tail) where tail estimates the
    correction |L - values[-1]|.  Works on scalars or arrays of values.
    """
    xs = np.asarray(xs, dtype=float)
    vals = np.asarray(values, dtype=float)
    if len(xs) < 2:
        return vals[-1], np.inf
    terms = min(terms, len(xs))
    x_fit = xs[-terms:]
    v_fit = vals[-terms:]
    mat = np.vander(1.0 / x_fit, terms, increasing=True)
    coeff = np.linalg.solve(mat, v_fit.reshape(terms, -1))
    limit = coeff[0].reshape(v_fit.shape[1:])
    tail = float(np.max(np.abs(limit - v_fit[-1])))
    if v_fit.ndim == 1:
        limit = float(limit)
    return limit, tail


def loglog_slope(xs, ys, floor: float = 0.0) -> float:
    """Least-squares slope of log|y| against log x, ignoring values <= floor."""
    xs = np.asarray(xs, dtype=float)
    ys = np.abs(np.asarray(ys, dtype=float))
    keep = ys > floor
    if np.count_nonzero(keep) < 2:
        return -np.inf
    slope, _ = np.polyfit(np.log(xs[keep]), np.log(ys[keep]), 1)
    return float(slope)
