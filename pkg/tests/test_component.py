import numpy as np
import pytest

from pstransport.component import MapComponent, NotInvertibleError, cumulative
from pstransport.splines import KnotVector, SplineBasis


def make_component(raw=None):
    non = SplineBasis(KnotVector(np.linspace(-2, 2, 5), 3))
    mon = SplineBasis(KnotVector(np.linspace(-2, 2, 6), 3))
    rng = np.random.default_rng(3)
    beta_non = rng.standard_normal(non.num_basis)
    if raw is None:
        raw = np.concatenate([[-1.0], rng.uniform(0.1, 1.0, mon.num_basis - 1)])
    return MapComponent([0], 1, [non], mon, beta_non, raw)


def test_cumulative_reparametrization():
    raw = np.array([-2.0, 1.0, 0.5])
    assert np.array_equal(cumulative(raw), [-2.0, -1.0, -0.5])


def test_eval_is_additive():
    comp = make_component()
    row = np.array([0.4, -0.7])
    assert comp.eval(row) == pytest.approx(
        comp.parent_term(row) + comp.monotone_term(row[1])
    )


def test_monotone_in_own_variable():
    comp = make_component()
    xs = np.linspace(-4, 4, 200)
    vals = [comp.eval(np.array([0.3, x])) for x in xs]
    assert np.all(np.diff(vals) > 0)
    assert np.all([comp.ddx(x) > 0 for x in xs])


def test_negative_increments_rejected():
    with pytest.raises(ValueError):
        make_component(raw=np.array([0.0, 1.0, -0.1, 1, 1, 1, 1, 1.0]))


def test_size_mismatch_rejected():
    non = SplineBasis(KnotVector(np.linspace(-2, 2, 5), 3))
    mon = SplineBasis(KnotVector(np.linspace(-2, 2, 6), 3))
    with pytest.raises(ValueError):
        MapComponent([0], 1, [non], mon, np.zeros(3), np.zeros(mon.num_basis))


def test_inversion_round_trip():
    comp = make_component()
    rng = np.random.default_rng(5)
    for _ in range(50):
        row = rng.uniform(-3, 3, 2)
        z = comp.eval(row)
        x = comp.invert_in_last(row, z)
        assert x == pytest.approx(row[1], abs=1e-8)


def test_inversion_in_tails():
    comp = make_component()
    row = np.array([0.0, 0.0])
    for z in (-50.0, 50.0):
        x = comp.invert_in_last(row, z)
        assert abs(comp.eval(np.array([row[0], x])) - z) < 1e-9 * abs(z)
        assert abs(x) > 2.0  # beyond the knot range


def test_flat_component_not_invertible():
    raw = np.zeros(8)
    comp = make_component(raw=raw)
    with pytest.raises(NotInvertibleError):
        comp.invert_in_last(np.array([0.0, 0.0]), 1.0)
    with pytest.raises(NotInvertibleError):
        comp.invert_many(np.zeros((3, 2)), np.array([0.5, 0.0, -0.5]))


def test_vectorized_paths_match_scalar():
    comp = make_component()
    rng = np.random.default_rng(7)
    rows = rng.uniform(-3, 3, (40, 2))
    ev = comp.eval_many(rows)
    for i, row in enumerate(rows):
        assert ev[i] == pytest.approx(comp.eval(row), abs=1e-12)
    xs = comp.invert_many(rows, ev)
    assert np.max(np.abs(xs - rows[:, 1])) < 1e-8


def test_invert_many_extreme_targets():
    comp = make_component()
    rng = np.random.default_rng(11)
    rows = rng.uniform(-1, 1, (20, 2))
    z = np.concatenate([rng.uniform(-200, 200, 10), rng.uniform(-2, 2, 10)])
    xs = comp.invert_many(rows, z)
    resid = np.abs(comp.eval_many(np.column_stack([rows[:, 0], xs])) - z)
    assert np.max(resid / np.maximum(1, np.abs(z))) < 1e-8


def test_invert_many_steep_function():
    # large increments make the monotone term steep; inversion should
    # still satisfy the residual contract at the resolvable scale
    rng = np.random.default_rng(13)
    raw = np.concatenate([[-500.0], rng.uniform(50, 300, 7)])
    comp = make_component(raw=raw)
    rows = rng.uniform(-2, 2, (30, 2))
    z = comp.eval_many(rows)
    xs = comp.invert_many(rows, z)
    assert np.max(np.abs(xs - rows[:, 1])) < 1e-6
