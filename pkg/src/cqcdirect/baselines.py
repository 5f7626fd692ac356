"""Comparison estimators: CDF-contrast inversion and the S-learner.

Both evaluate the contrast F1(y1|x) - F0(y0|x) on an equispaced y1 grid,
isotonically project it, and read off a root. The inversion estimator picks
the grid point with contrast closest to zero; the S-learner picks the
smallest grid point whose projected contrast is nonnegative, mirroring the
inf convention of the quantile function.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = ["ContrastGrid", "contrast_grid", "isotonic_project", "invert_cqc",
           "invert_cqc_batch", "s_learner_cqc", "s_learner_cqc_batch",
           "default_grid_spec"]


@dataclass(frozen=True)
class ContrastGrid:
    """Candidate treated outcomes with their projected contrast values."""

    y1_grid: np.ndarray
    values: np.ndarray


def contrast_grid(nuisances, y0: float, x, grid_spec) -> ContrastGrid:
    """Tabulate F1(y1|x) - F0(y0|x) on the candidate grid and project it."""
    grid = _grid(grid_spec)
    x = np.asarray(x, dtype=float).reshape(1, -1)
    f1 = nuisances.ccdf1.evaluate_grid(grid.reshape(1, -1), x)[0]
    f0 = float(np.atleast_1d(nuisances.ccdf0.evaluate(np.array([y0]), x))[0])
    return ContrastGrid(y1_grid=grid, values=isotonic_project(f1 - f0))


def isotonic_project(values) -> np.ndarray:
    """L2 projection onto nondecreasing sequences (pool adjacent violators)."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        return _pava_rows(values.reshape(1, -1))[0]
    return _pava_rows(values)


def _pava_rows(rows: np.ndarray) -> np.ndarray:
    out = np.empty_like(rows)
    # fast path: genuine CDF contrasts along a sorted grid are already monotone
    mono = np.all(np.diff(rows, axis=1) >= 0.0, axis=1)
    out[mono] = rows[mono]
    for r in np.flatnonzero(~mono):
        out[r] = _pava(rows[r])
    return out


def _pava(v: np.ndarray) -> np.ndarray:
    n = len(v)
    means = np.empty(n)
    counts = np.empty(n, dtype=np.int64)
    top = 0
    for i in range(n):
        means[top] = v[i]
        counts[top] = 1
        top += 1
        while top > 1 and means[top - 2] > means[top - 1]:
            total = means[top - 2] * counts[top - 2] + means[top - 1] * counts[top - 1]
            counts[top - 2] += counts[top - 1]
            means[top - 2] = total / counts[top - 2]
            top -= 1
    return np.repeat(means[:top], counts[:top])


def _grid(grid_spec) -> np.ndarray:
    lo, hi, m = grid_spec
    if m < 2:
        raise ConfigError("grid needs at least 2 points")
    if not lo < hi:
        raise ConfigError("grid lower bound must be below upper bound")
    return np.linspace(lo, hi, int(m))


def default_grid_spec(outcomes, m: int = 1001) -> tuple:
    """Observed outcome range widened by three standard deviations."""
    outcomes = np.asarray(outcomes, dtype=float)
    sd = float(np.std(outcomes))
    return (float(np.min(outcomes)) - 3.0 * sd, float(np.max(outcomes)) + 3.0 * sd, m)


def invert_cqc_batch(nuisances, y0s, xs, grid_spec) -> np.ndarray:
    """Contrast-inversion estimate at each (y0, x) query row.

    Ties at equal |projected contrast| resolve to the smaller candidate.
    """
    grid = _grid(grid_spec)
    y0s = np.asarray(y0s, dtype=float)
    xs = np.asarray(xs, dtype=float)
    if xs.ndim == 1:
        xs = xs.reshape(len(y0s), -1)
    t = np.broadcast_to(grid, (len(y0s), len(grid)))
    f1 = nuisances.ccdf1.evaluate_grid(t, xs)
    f0 = np.atleast_1d(nuisances.ccdf0.evaluate(y0s, xs))
    contrast = _pava_rows(f1 - f0[:, None])
    return grid[np.argmin(np.abs(contrast), axis=1)]


def invert_cqc(nuisances, y0: float, x, grid_spec) -> float:
    """Single-query contrast inversion; see invert_cqc_batch."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return float(invert_cqc_batch(nuisances, np.array([y0]), x, grid_spec)[0])


class _TwoCcdfs:
    """Adapter giving a pair of fitted conditional CDFs the nuisance interface."""

    def __init__(self, ccdf0, ccdf1):
        self.ccdf0 = ccdf0
        self.ccdf1 = ccdf1


def s_learner_cqc_batch(ccdf0, ccdf1, y0s, xs, grid_spec) -> np.ndarray:
    """Quantile-style root of the contrast of two independently fitted CDFs.

    Returns the smallest grid point whose projected contrast is >= 0 (the
    last grid point when none is).
    """
    grid = _grid(grid_spec)
    y0s = np.asarray(y0s, dtype=float)
    xs = np.asarray(xs, dtype=float)
    if xs.ndim == 1:
        xs = xs.reshape(len(y0s), -1)
    t = np.broadcast_to(grid, (len(y0s), len(grid)))
    f1 = ccdf1.evaluate_grid(t, xs)
    f0 = np.atleast_1d(ccdf0.evaluate(y0s, xs))
    contrast = _pava_rows(f1 - f0[:, None])
    nonneg = contrast >= 0.0
    idx = np.where(nonneg.any(axis=1), np.argmax(nonneg, axis=1), len(grid) - 1)
    return grid[idx]


def s_learner_cqc(ccdf0, ccdf1, y0: float, x, grid_spec) -> float:
    """Single-query S-learner estimate; see s_learner_cqc_batch."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return float(s_learner_cqc_batch(ccdf0, ccdf1, np.array([y0]), x, grid_spec)[0])
