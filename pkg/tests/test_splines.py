import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pstransport.splines import (
    DegenerateDimensionError,
    KnotVector,
    PenaltyMatrix,
    SplineBasis,
    make_knots,
    make_penalty,
)


@pytest.fixture
def basis():
    return SplineBasis(KnotVector(np.linspace(-2.0, 2.0, 7), degree=3))


def test_knot_padding_repeats_boundaries():
    kv = KnotVector(np.array([0.0, 1.0, 2.0, 3.0]), degree=3)
    assert np.array_equal(kv.padded, [0, 0, 0, 0, 1, 2, 3, 3, 3, 3])
    assert kv.num_basis == 6


def test_knot_vector_validation():
    with pytest.raises(ValueError):
        KnotVector(np.array([0.0, 0.0, 1.0]), degree=3)
    with pytest.raises(ValueError):
        KnotVector(np.array([1.0]), degree=3)
    with pytest.raises(ValueError):
        KnotVector(np.array([0.0, 1.0]), degree=-1)


def test_make_knots_cube_root_rule():
    rng = np.random.default_rng(0)
    kv = make_knots(rng.standard_normal(1000), degree=3)
    assert kv.real.size == 12  # ceil(1000^(1/3)) + 2
    x = rng.standard_normal(27)
    assert make_knots(x).real.size == 5  # exact cube root, no off-by-one


def test_make_knots_quantile_range():
    x = np.linspace(0.0, 10.0, 101)
    kv = make_knots(x)
    assert kv.first == pytest.approx(np.quantile(x, 0.1))
    assert kv.last == pytest.approx(np.quantile(x, 0.9))


def test_make_knots_degenerate():
    with pytest.raises(DegenerateDimensionError):
        make_knots(np.ones(50))
    x = np.zeros(100)
    x[:3] = 1.0  # quantiles coincide even though not all equal
    with pytest.raises(DegenerateDimensionError):
        make_knots(x)
    with pytest.raises(ValueError):
        make_knots(np.arange(5.0))


def test_partition_of_unity(basis):
    x = np.linspace(-2.0, 2.0, 513)
    vals = basis.eval(x)
    assert np.max(np.abs(vals.sum(axis=1) - 1.0)) < 1e-12
    assert np.all(vals >= 0)


def test_derivative_matches_central_differences(basis):
    rng = np.random.default_rng(1)
    x = rng.uniform(-1.9, 1.9, 100)
    h = 1e-6
    fd = (basis.eval(x + h) - basis.eval(x - h)) / (2 * h)
    an = basis.eval_deriv(x)
    denom = np.maximum(np.abs(fd), 1e-8)
    assert np.max(np.abs(an - fd) / denom) < 1e-6


def test_affine_tails(basis):
    for xs in (np.array([-5.0, -4.0, -3.0]), np.array([3.0, 4.0, 5.0])):
        vals = basis.eval(xs)
        second = np.diff(vals, n=2, axis=0)
        assert np.max(np.abs(second)) < 1e-10


def test_tail_continuity(basis):
    eps = 1e-9
    for edge in (basis.knots.first, basis.knots.last):
        lo, hi = basis.eval(edge - eps), basis.eval(edge + eps)
        assert np.max(np.abs(hi - lo)) < 1e-6


def test_greville_reproduces_identity(basis):
    coef = basis.greville()
    x = np.linspace(-4.0, 4.0, 201)  # includes the extrapolated tails
    assert np.max(np.abs(basis.eval(x) @ coef - x)) < 1e-10
    assert np.max(np.abs(basis.eval_deriv(x) @ coef - 1.0)) < 1e-10


def test_scalar_and_array_eval_agree(basis):
    x = np.array([-2.5, 0.3, 2.5])
    batch = basis.eval(x)
    for i, xi in enumerate(x):
        assert np.array_equal(basis.eval(xi), batch[i])


def test_nan_input_rejected(basis):
    with pytest.raises(ValueError):
        basis.eval(np.array([0.0, np.nan]))


def test_penalty_null_space():
    pen = make_penalty(10, order=2)
    ones = np.ones(10)
    lin = np.arange(10.0)
    assert np.max(np.abs(pen.gram @ ones)) < 1e-14
    assert np.max(np.abs(pen.gram @ lin)) < 1e-12
    quad = np.arange(10.0) ** 2
    assert quad @ pen.gram @ quad > 1.0


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=-50.0, max_value=50.0, allow_nan=False))
def test_partition_of_unity_everywhere(x):
    basis = SplineBasis(KnotVector(np.linspace(-2.0, 2.0, 7), degree=3))
    vals = basis.eval(x)
    # inside the knots the basis sums to one; in the affine tails the sum
    # stays one because the extension preserves value and slope
    assert abs(vals.sum() - 1.0) < 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(min_value=2, max_value=20), st.integers(min_value=0, max_value=3))
def test_basis_count_matches_knots(num_real, degree):
    kv = KnotVector(np.linspace(0.0, 1.0, num_real), degree)
    basis = SplineBasis(kv)
    assert basis.eval(0.5).size == kv.num_basis == num_real + degree - 1


def test_penalty_shapes_and_validation():
    pen = PenaltyMatrix(8, order=2)
    assert pen.matrix.shape == (6, 8)
    assert pen.gram.shape == (8, 8)
    with pytest.raises(ValueError):
        PenaltyMatrix(3, order=3)
    with pytest.raises(ValueError):
        PenaltyMatrix(5, order=0)
