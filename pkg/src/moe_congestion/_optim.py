"""Scalar minimization helpers used by the fitting routines."""

from __future__ import annotations

import math

import numpy as np

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section_min(f, lo: float, hi: float, tol: float = 1e-6):
    """Golden-section search for the minimizer of a unimodal f on [lo, hi].

    Returns (x, f(x)).  The original endpoints are also evaluated so a
    boundary minimum is returned exactly rather than within tol of it.
    """
    if not hi > lo:
        raise ValueError(f"need hi > lo, got [{lo}, {hi}]")
    a, b = lo, hi
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    fx = f(x)
    for xe in (lo, hi):
        fe = f(xe)
        if fe < fx:
            x, fx = xe, fe
    return x, fx


def grid_then_golden(f, lo: float, hi: float, n_grid: int = 64, tol: float = 1e-6,
                     log_spacing: bool = False):
    """Coarse grid scan followed by golden-section refinement.

    Robust to objectives that are only piecewise unimodal: the scan brackets
    the best grid point, golden-section polishes inside that bracket.
    """
    if log_spacing:
        if lo <= 0:
            raise ValueError("log spacing needs lo > 0")
        xs = np.geomspace(lo, hi, n_grid)
    else:
        xs = np.linspace(lo, hi, n_grid)
    vals = [f(float(x)) for x in xs]
    i = int(np.argmin(vals))
    a = float(xs[max(i - 1, 0)])
    b = float(xs[min(i + 1, n_grid - 1)])
    if b <= a:
        return float(xs[i]), vals[i]
    return golden_section_min(f, a, b, tol=tol)
