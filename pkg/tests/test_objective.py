import numpy as np
import pytest
from scipy.optimize import minimize

from pstransport.objective import (
    BarrierViolationError,
    DesignCache,
    ModelTooComplexError,
    RIDGE,
    adapt_lambdas,
    edf,
    fit_inner,
    nll,
    outer_gradient,
    outer_objective,
    reduced_penalized_objective,
    solve_non_closed_form,
)
from pstransport.splines import KnotVector, SplineBasis, make_knots


def gaussian_cache(n=100, rho=0.8, seed=0, num_knots=8):
    rng = np.random.default_rng(seed)
    x1 = rng.standard_normal(n)
    x2 = rho * x1 + np.sqrt(1 - rho ** 2) * rng.standard_normal(n)
    non = SplineBasis(make_knots(x1, 3, num_knots))
    mon = SplineBasis(make_knots(x2, 3, num_knots))
    return DesignCache([non], [x1], mon, x2, 2)


@pytest.fixture(scope="module")
def cache():
    return gaussian_cache()


def feasible_raw(cache, seed=0):
    rng = np.random.default_rng(seed)
    r = cache.default_raw()
    r[0] += 0.1 * rng.standard_normal()
    r[1:] *= rng.uniform(0.5, 1.5, r.size - 1)
    return r


def test_nll_barrier(cache):
    r = feasible_raw(cache)
    r[1:] = 0.0
    r[0] = 1.0
    with pytest.raises(BarrierViolationError):
        nll(cache, np.zeros(cache.m), r)


def test_closed_form_nonmonotone_matches_joint_minimization(cache):
    """Eliminating the nonmonotone block in closed form must agree with a
    generic numerical minimization of the full penalized objective."""
    logl = np.array([0.5, 1.0])
    r = feasible_raw(cache, 1)
    beta_mon = np.cumsum(r)
    closed = solve_non_closed_form(cache, r, logl)
    S_non = cache.s_non(np.exp(logl))

    def full(beta_non):
        resid = cache.P_non @ beta_non + cache.P_mon @ beta_mon
        return 0.5 * resid @ resid + 0.5 * beta_non @ S_non @ beta_non

    res = minimize(full, np.zeros(cache.m), method="BFGS",
                   options={"gtol": 1e-12, "maxiter": 2000})
    assert np.max(np.abs(closed - res.x)) < 1e-6


def test_reduced_equals_full_after_substitution(cache):
    logl = np.array([0.5, 1.0])
    r = feasible_raw(cache, 2)
    beta_non = solve_non_closed_form(cache, r, logl)
    beta_mon = np.cumsum(r)
    S_non = cache.s_non(np.exp(logl))
    S_mon = cache.s_mon(np.exp(logl))
    full = nll(cache, beta_non, r) \
        + 0.5 * beta_non @ S_non @ beta_non \
        + 0.5 * beta_mon @ S_mon @ beta_mon
    reduced, _, _ = reduced_penalized_objective(cache, r, logl)
    assert reduced == pytest.approx(full, abs=1e-9)


def test_reduced_gradient_matches_finite_differences(cache):
    logl = np.array([0.0, 0.5])
    r = feasible_raw(cache, 3)
    _, grad, _ = reduced_penalized_objective(cache, r, logl)
    h = 1e-6
    for k in range(r.size):
        e = np.zeros_like(r); e[k] = h
        vp, _, _ = reduced_penalized_objective(cache, r + e, logl)
        vm, _, _ = reduced_penalized_objective(cache, r - e, logl)
        fd = (vp - vm) / (2 * h)
        assert grad[k] == pytest.approx(fd, rel=1e-6, abs=1e-6)


def test_reduced_hessian_matches_finite_differences(cache):
    logl = np.array([0.0, 0.5])
    r = feasible_raw(cache, 4)
    _, _, hess = reduced_penalized_objective(cache, r, logl)
    h = 1e-5
    for k in range(r.size):
        e = np.zeros_like(r); e[k] = h
        _, gp, _ = reduced_penalized_objective(cache, r + e, logl)
        _, gm, _ = reduced_penalized_objective(cache, r - e, logl)
        fd = (gp - gm) / (2 * h)
        denom = np.maximum(np.abs(fd), 1.0)
        assert np.max(np.abs(hess[:, k] - fd) / denom) < 1e-5


def test_inner_solver_converges_and_is_stationary(cache):
    logl = np.array([1.0, 1.0])
    r_hat, iters, converged, pg = fit_inner(cache, logl)
    assert converged
    _, grad, _ = reduced_penalized_objective(cache, r_hat, logl)
    free = np.ones_like(r_hat, dtype=bool)
    free[1:] = r_hat[1:] > 1e-12
    assert np.max(np.abs(grad[free])) < 1e-5
    # pinned coordinates must not want to move inward
    assert np.all(grad[~free] >= -1e-7)


def test_inner_solution_beats_perturbations(cache):
    logl = np.array([1.0, 1.0])
    r_hat, _, _, _ = fit_inner(cache, logl)
    ops = cache.profile_operators(logl)
    v0, _, _ = reduced_penalized_objective(cache, r_hat, logl, ops)
    rng = np.random.default_rng(5)
    for _ in range(20):
        r = r_hat.copy()
        r[0] += 0.01 * rng.standard_normal()
        r[1:] = np.maximum(r[1:] + 0.01 * rng.standard_normal(r.size - 1), 0)
        v, _, _ = reduced_penalized_objective(cache, r, logl, ops)
        assert v >= v0 - 1e-10


def test_edf_limits(cache):
    r_lo = fit_inner(cache, np.array([-12.0, -12.0]))[0]
    _, lo = edf(cache, r_lo, np.array([-12.0, -12.0]), per_block=True)
    _, hi = edf(cache, fit_inner(cache, np.array([12.0, 12.0]))[0],
                np.array([12.0, 12.0]), per_block=True)
    # monotone limit is the number of active (unpinned) raw coordinates
    free_mon = 1 + int(np.sum(r_lo[1:] > 1e-12))
    assert lo[0] == pytest.approx(cache.m, abs=0.1)
    assert lo[1] == pytest.approx(free_mon, abs=0.1)
    assert hi[0] == pytest.approx(2.0, abs=0.1)
    assert hi[1] == pytest.approx(2.0, abs=0.1)


def test_edf_decreases_with_lambda(cache):
    logls = [np.array([v, v]) for v in (-4.0, 0.0, 4.0, 8.0)]
    vals = [edf(cache, fit_inner(cache, l)[0], l) for l in logls]
    assert np.all(np.diff(vals) < 0)


def test_aicc_too_complex_error():
    small = gaussian_cache(n=20, num_knots=12)
    with pytest.raises(ModelTooComplexError):
        outer_objective(small, np.array([-12.0, -12.0]))


def test_outer_gradient_matches_refit_finite_differences(cache):
    for logl0 in ([2.0, 2.0], [0.0, 1.0], [4.0, -1.0], [-2.0, 3.0], [1.0, 0.0]):
        logl = np.array(logl0)
        g = outer_gradient(cache, logl)
        h = 1e-4
        for k in range(2):
            e = np.zeros(2); e[k] = h
            ap, _, _ = outer_objective(cache, logl + e)
            am, _, _ = outer_objective(cache, logl - e)
            fd = (ap - am) / (2 * h)
            assert g[k] == pytest.approx(fd, rel=1e-3, abs=1e-5)


def test_adapt_lambdas_reaches_a_minimum(cache):
    logl, report, r_hat = adapt_lambdas(cache)
    assert report.converged
    # grid check: no nearby lambda does better than the adapted one
    best, _, _ = outer_objective(cache, logl)
    for d0 in (-0.5, 0.5):
        for d1 in (-0.5, 0.5):
            trial, _, _ = outer_objective(cache, logl + [d0, d1])
            assert trial >= best - 1e-6


def test_adapt_mask_keeps_monotone_fixed(cache):
    mask = np.array([True, False])
    logl, _, _ = adapt_lambdas(cache, np.array([2.0, 10.0]), adapt_mask=mask)
    assert logl[1] == 10.0


def test_report_fields(cache):
    _, report, _ = outer_objective(cache, np.array([1.0, 1.0]))
    assert report.n == 100
    assert report.raw_basis == cache.m + cache.p
    assert report.edf_blocks.size == 2
    assert report.aicc == pytest.approx(
        report.nll + report.edf + report.edf * (report.edf + 1)
        / (report.n - report.edf - 1)
    )
