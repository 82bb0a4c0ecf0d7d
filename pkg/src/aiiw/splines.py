"""Clamped B-spline basis over the reporting window.

The mean curve is modeled as a linear combination of clamped (open-uniform)
B-splines on [a, b]: boundary knots repeated degree+1 times, simple interior
knots.  Basis dimension is ``degree + 1 + len(interior_knots)``.

All time integrals in the package use one quadrature convention: a midpoint
rule on the ``grid_step`` lattice over [a, b].  ``grid_cells`` is the single
source of that lattice; the Gram matrix, augmentation integrals, truth
averages and plausibility scans all share it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class SplineSpec:
    """Basis configuration for the mean-curve model.

    Parameters
    ----------
    domain : tuple of float
        Reporting window [a, b], a < b.
    interior_knots : tuple of float
        Strictly increasing knots strictly inside (a, b).
    degree : int
        Polynomial degree, >= 1 (cubic by default).
    grid_step : float
        Width of the quadrature/reporting lattice in days.
    """

    domain: tuple[float, float]
    interior_knots: tuple[float, ...] = ()
    degree: int = 3
    grid_step: float = 1.0

    def __post_init__(self):
        a, b = self.domain
        if not (math.isfinite(a) and math.isfinite(b) and a < b):
            raise ConfigError(f"domain must be finite with a < b, got {self.domain}")
        if self.degree < 1:
            raise ConfigError(f"degree must be >= 1, got {self.degree}")
        prev = a
        for k in self.interior_knots:
            if not (a < k < b):
                raise ConfigError(f"interior knot {k} outside open domain ({a}, {b})")
            if k <= prev and prev != a:
                raise ConfigError("interior knots must be strictly increasing")
            prev = k
        if not (0 < self.grid_step <= b - a):
            raise ConfigError(f"grid_step must lie in (0, b - a], got {self.grid_step}")

    @property
    def n_basis(self) -> int:
        return self.degree + 1 + len(self.interior_knots)

    @cached_property
    def knots(self) -> np.ndarray:
        a, b = self.domain
        return np.concatenate([
            np.full(self.degree + 1, a),
            np.asarray(self.interior_knots, dtype=float),
            np.full(self.degree + 1, b),
        ])


def _spans(spec: SplineSpec, t: np.ndarray) -> np.ndarray:
    # knot interval index s with knots[s] <= t < knots[s+1], clamped so the
    # right endpoint evaluates in the last nonempty interval
    knots = spec.knots
    s = np.searchsorted(knots, t, side="right") - 1
    return np.clip(s, spec.degree, spec.n_basis - 1)


def basis_matrix(spec: SplineSpec, t) -> np.ndarray:
    """Evaluate all basis functions at times ``t``.

    Parameters
    ----------
    t : array_like
        Times inside [a, b].

    Returns
    -------
    ndarray of shape (len(t), n_basis)
        Row i holds B_1(t_i), ..., B_p(t_i); each row sums to one.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    a, b = spec.domain
    if not np.all(np.isfinite(t)):
        raise ValueError("times must be finite")
    if np.any(t < a) or np.any(t > b):
        bad = t[(t < a) | (t > b)][0]
        raise ValueError(f"t={bad} outside basis domain [{a}, {b}]")

    knots = spec.knots
    d = spec.degree
    span = _spans(spec, t)
    n = t.shape[0]

    # iterative Cox-de Boor triangle (vectorized over evaluation points)
    left = np.empty((n, d + 1))
    right = np.empty((n, d + 1))
    vals = np.zeros((n, d + 1))
    vals[:, 0] = 1.0
    for j in range(1, d + 1):
        left[:, j] = t - knots[span + 1 - j]
        right[:, j] = knots[span + j] - t
        saved = np.zeros(n)
        for r in range(j):
            denom = right[:, r + 1] + left[:, j - r]
            temp = vals[:, r] / denom
            vals[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        vals[:, j] = saved

    out = np.zeros((n, spec.n_basis))
    cols = span[:, None] - d + np.arange(d + 1)[None, :]
    np.put_along_axis(out, cols, vals, axis=1)
    return out


def evaluate_basis(spec: SplineSpec, t: float) -> np.ndarray:
    """Basis vector B(t) at a single time."""
    return basis_matrix(spec, [t])[0]


def grid_cells(spec: SplineSpec) -> tuple[np.ndarray, np.ndarray]:
    """Midpoints and widths of the quadrature lattice over [a, b].

    Full cells of width ``grid_step`` from a, plus one trailing partial cell
    when the step does not divide the window evenly.
    """
    a, b = spec.domain
    h = spec.grid_step
    n_full = int(math.floor((b - a) / h + 1e-9))
    edges = a + h * np.arange(n_full + 1)
    if b - edges[-1] > 1e-9 * (b - a):
        edges = np.append(edges, b)
    else:
        edges[-1] = b
    widths = np.diff(edges)
    mids = edges[:-1] + widths / 2.0
    return mids, widths


def gram_matrix(spec: SplineSpec) -> np.ndarray:
    """V = integral of B(t) B(t)' over [a, b], midpoint rule on the lattice."""
    mids, widths = grid_cells(spec)
    bmat = basis_matrix(spec, mids)
    return (bmat * widths[:, None]).T @ bmat


def curve_value(spec: SplineSpec, coefficients, t) -> np.ndarray | float:
    """Evaluate the fitted curve gamma' B(t) at times ``t``."""
    coef = np.asarray(coefficients, dtype=float)
    if coef.shape != (spec.n_basis,):
        raise ValueError(
            f"coefficients must have shape ({spec.n_basis},), got {coef.shape}")
    if not np.all(np.isfinite(coef)):
        raise ValueError("coefficients must be finite")
    scalar = np.isscalar(t) or (np.asarray(t).ndim == 0)
    vals = basis_matrix(spec, t) @ coef
    return float(vals[0]) if scalar else vals
