"""Independently coded reference implementations used only by tests.

Each oracle is written the slow, textbook way on purpose; none of them share
code with the package internals they check.
"""
from __future__ import annotations

import numpy as np


# ---------------------------------------------------------------------------
# naive recursive Cox-de Boor basis
# ---------------------------------------------------------------------------

def naive_bspline_basis(knots, degree: int, i: int, t: float, right_end: float) -> float:
    """N_{i,degree}(t) by direct recursion with the 0/0 := 0 convention.

    The half-open support convention is flipped at the right endpoint so the
    last basis function equals one at t = right_end.
    """
    knots = np.asarray(knots, dtype=float)
    if degree == 0:
        if knots[i] <= t < knots[i + 1]:
            return 1.0
        if t == right_end and knots[i] < knots[i + 1] == right_end:
            return 1.0
        return 0.0
    left = 0.0
    den = knots[i + degree] - knots[i]
    if den > 0:
        left = (t - knots[i]) / den * naive_bspline_basis(knots, degree - 1, i, t, right_end)
    right = 0.0
    den = knots[i + degree + 1] - knots[i + 1]
    if den > 0:
        right = (knots[i + degree + 1] - t) / den * naive_bspline_basis(
            knots, degree - 1, i + 1, t, right_end)
    return left + right


def naive_basis_row(a, b, interior, degree, t):
    """All basis values at t for the clamped knot vector on [a, b]."""
    knots = np.concatenate([
        np.full(degree + 1, float(a)),
        np.asarray(interior, dtype=float),
        np.full(degree + 1, float(b)),
    ])
    p = degree + 1 + len(interior)
    return np.array([naive_bspline_basis(knots, degree, i, t, b) for i in range(p)])


# ---------------------------------------------------------------------------
# plain augmented inverse-intensity-weighted estimator (no tilting)
# ---------------------------------------------------------------------------

def plain_aiiw_mu(subjects, intensity_fit, outcome_fit, spec, targets):
    """Augmented estimator with 1/lambda-hat weights and untilted means.

    Direct per-subject loops; conditional means are exp(theta' x) evaluated
    straight from the outcome coefficients.  Returns mu-hat at each target.
    """
    from aiiw.records import features_at
    from aiiw.splines import basis_matrix, grid_cells, gram_matrix

    a, b = spec.domain
    mids, widths = grid_cells(spec)
    vinv = np.linalg.inv(gram_matrix(spec))
    th = outcome_fit.coefficients

    def cond_mean(t, prev_t, prev_y):
        return float(np.exp(th[0] + th[1] * t + th[2] * prev_t + th[3] * prev_y))

    p = spec.n_basis
    total = np.zeros(p)
    for rec in subjects:
        m_i = np.zeros(p)
        # weighted residual term over observed assessments inside [a, b]
        for j, (t_j, y_j) in enumerate(zip(rec.times, rec.outcomes)):
            if not (a <= t_j <= b):
                continue
            feats = features_at(rec, t_j)
            lam0 = intensity_fit.smoothed_baselines[feats.stratum_k + 1](t_j)
            lam = lam0 * np.exp(float(intensity_fit.gamma_hat[0]) * feats.prev_outcome)
            resid = y_j - cond_mean(t_j, feats.prev_time, feats.prev_outcome)
            bvec = basis_matrix(spec, [t_j])[0]
            m_i = m_i + (vinv @ bvec) * resid / lam
        # augmentation integral on the shared midpoint lattice
        for t_mid, w in zip(mids, widths):
            feats = features_at(rec, t_mid)
            mu = cond_mean(t_mid, feats.prev_time, feats.prev_outcome)
            bvec = basis_matrix(spec, [t_mid])[0]
            m_i = m_i + (vinv @ bvec) * mu * w
        total += m_i
    beta = total / len(subjects)
    return np.array([basis_matrix(spec, [t])[0] @ beta for t in targets])
