import numpy as np
import pytest

from aiiw.errors import ConfigError
from aiiw.splines import (SplineSpec, basis_matrix, curve_value, evaluate_basis,
                          gram_matrix, grid_cells)

from oracles import naive_basis_row

ARC = SplineSpec(domain=(60.0, 460.0), interior_knots=(260.0,), degree=3, grid_step=1.0)


def test_basis_dimension():
    assert ARC.n_basis == 5
    assert SplineSpec(domain=(0.0, 10.0), degree=2).n_basis == 3


def test_partition_of_unity():
    rng = np.random.default_rng(0)
    t = np.concatenate([[60.0, 460.0, 260.0], rng.uniform(60, 460, 500)])
    rows = basis_matrix(ARC, t)
    assert np.allclose(rows.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(rows >= -1e-14)


def test_matches_naive_recursion_at_interior_knot():
    got = evaluate_basis(ARC, 260.0)
    want = naive_basis_row(60.0, 460.0, [260.0], 3, 260.0)
    assert np.max(np.abs(got - want)) < 1e-12


@pytest.mark.parametrize("t", [60.0, 61.5, 199.0, 260.0, 333.25, 459.0, 460.0])
def test_matches_naive_recursion_everywhere(t):
    got = evaluate_basis(ARC, t)
    want = naive_basis_row(60.0, 460.0, [260.0], 3, t=t)
    assert np.max(np.abs(got - want)) < 1e-12


def test_matches_naive_recursion_random_configs():
    rng = np.random.default_rng(7)
    for _ in range(20):
        a = rng.uniform(-5, 5)
        b = a + rng.uniform(5, 50)
        n_int = rng.integers(0, 4)
        interior = np.sort(rng.uniform(a + 0.5, b - 0.5, n_int))
        interior = tuple(np.unique(interior))
        degree = int(rng.integers(1, 5))
        spec = SplineSpec(domain=(a, b), interior_knots=interior, degree=degree,
                          grid_step=(b - a) / 10)
        for t in rng.uniform(a, b, 5):
            got = evaluate_basis(spec, t)
            want = naive_basis_row(a, b, interior, degree, t)
            assert np.max(np.abs(got - want)) < 1e-12


def test_endpoint_values():
    # clamped basis: first function is 1 at a, last is 1 at b
    left = evaluate_basis(ARC, 60.0)
    right = evaluate_basis(ARC, 460.0)
    assert left[0] == pytest.approx(1.0, abs=1e-14)
    assert np.all(np.abs(left[1:]) < 1e-14)
    assert right[-1] == pytest.approx(1.0, abs=1e-14)
    assert np.all(np.abs(right[:-1]) < 1e-14)


def test_local_support():
    # at most degree+1 basis functions are nonzero at any t, and the window
    # moves with t
    rng = np.random.default_rng(1)
    spec = SplineSpec(domain=(0.0, 100.0),
                      interior_knots=tuple(float(k) for k in range(10, 100, 10)),
                      degree=3, grid_step=1.0)
    for t in rng.uniform(0, 100, 200):
        row = basis_matrix(spec, [t])[0]
        nz = np.flatnonzero(np.abs(row) > 1e-14)
        assert len(nz) <= spec.degree + 1
        assert nz.max() - nz.min() <= spec.degree
    early = np.flatnonzero(basis_matrix(spec, [1.0])[0] > 1e-14)
    late = np.flatnonzero(basis_matrix(spec, [99.0])[0] > 1e-14)
    assert early.min() == 0 and late.max() == spec.n_basis - 1
    assert early.max() < late.min()


def test_domain_errors():
    with pytest.raises(ValueError, match="outside basis domain"):
        evaluate_basis(ARC, 59.999)
    with pytest.raises(ValueError, match="outside basis domain"):
        basis_matrix(ARC, [100.0, 460.001])
    with pytest.raises(ValueError):
        basis_matrix(ARC, [np.nan])


def test_spec_validation():
    with pytest.raises(ConfigError):
        SplineSpec(domain=(60.0, 60.0))
    with pytest.raises(ConfigError):
        SplineSpec(domain=(0.0, 10.0), interior_knots=(10.0,))
    with pytest.raises(ConfigError):
        SplineSpec(domain=(0.0, 10.0), interior_knots=(6.0, 3.0))
    with pytest.raises(ConfigError):
        SplineSpec(domain=(0.0, 10.0), grid_step=0.0)
    with pytest.raises(ConfigError):
        SplineSpec(domain=(0.0, 10.0), degree=0)


def test_grid_cells_cover_domain():
    mids, widths = grid_cells(ARC)
    assert len(mids) == 400
    assert widths.sum() == pytest.approx(400.0, abs=1e-9)
    spec = SplineSpec(domain=(0.0, 10.5), grid_step=1.0)
    mids, widths = grid_cells(spec)
    assert widths.sum() == pytest.approx(10.5, abs=1e-12)
    assert widths[-1] == pytest.approx(0.5, abs=1e-12)


def test_gram_symmetric_positive_definite():
    v = gram_matrix(ARC)
    assert v.shape == (5, 5)
    assert np.allclose(v, v.T, atol=1e-12)
    assert np.linalg.eigvalsh(v).min() > 0


def test_gram_matches_independent_quadrature():
    # same midpoint convention, basis rows from the naive recursion
    mids, widths = grid_cells(ARC)
    rows = np.array([naive_basis_row(60.0, 460.0, [260.0], 3, t) for t in mids])
    want = (rows * widths[:, None]).T @ rows
    got = gram_matrix(ARC)
    denom = np.maximum(np.abs(want), 1e-12 * np.abs(want).max())
    assert np.max(np.abs(got - want) / denom) < 1e-10


def test_gram_stable_under_grid_refinement():
    coarse = gram_matrix(ARC)
    fine = gram_matrix(SplineSpec(domain=(60.0, 460.0), interior_knots=(260.0,),
                                  degree=3, grid_step=0.5))
    rel = np.abs(fine - coarse) / np.maximum(np.abs(coarse), 1e-30)
    assert rel.max() < 1e-4


def test_curve_value():
    coef = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    t = np.linspace(60, 460, 41)
    vals = curve_value(ARC, coef, t)
    assert np.allclose(vals, basis_matrix(ARC, t) @ coef)
    assert isinstance(curve_value(ARC, coef, 90.0), float)
    # constant coefficients give the constant curve (partition of unity)
    assert np.allclose(curve_value(ARC, np.full(5, 2.5), t), 2.5, atol=1e-12)


def test_curve_value_errors():
    with pytest.raises(ValueError, match="shape"):
        curve_value(ARC, np.ones(4), 90.0)
    with pytest.raises(ValueError, match="finite"):
        curve_value(ARC, np.array([1.0, np.inf, 0, 0, 0]), 90.0)
