"""Lorenz-63 twin experiments: transport filter vs. a stochastic EnKF baseline.

Observations of all three states arrive every 0.1 time units and are
assimilated one at a time. For each observed variable a sparse
four-variable map over (y, x_obs, x_other1, x_other2) is fitted from the
forecast ensemble plus perturbed observation predictions; conditioning on
the actual observation updates the three state variables while the two
unobserved ones never see y directly (conditional independence given the
observed state).
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .tmap import Ensemble, MapFitConfig, fit

logger = logging.getLogger(__name__)

__all__ = ["Lorenz63Params", "FilterRunResult", "lorenz_rhs", "rk4_step",
           "run_filter", "linear_baseline_update"]

DIVERGENCE_RMSE = 100.0


@dataclass
class Lorenz63Params:
    """Model and experiment settings (classical chaotic regime)."""

    sigma: float = 10.0
    beta: float = 8.0 / 3.0
    rho: float = 28.0
    dt: float = 0.05
    obs_interval: float = 0.1
    obs_sigma: float = 0.25
    steps: int = 1000
    spinup: int = 250

    def __post_init__(self):
        if min(self.sigma, self.beta, self.rho, self.dt, self.obs_interval,
               self.obs_sigma) <= 0:
            raise ValueError("all parameters must be positive")
        ratio = self.obs_interval / self.dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("obs_interval must be an integer multiple of dt")

    @property
    def substeps(self):
        return int(round(self.obs_interval / self.dt))


@dataclass
class FilterRunResult:
    """Per-run diagnostics of one twin experiment."""

    rmse_series: np.ndarray
    mean_rmse: float
    edf_fractions: np.ndarray   # (steps, 3) mean fraction per map component S2..S4
    diverged: bool
    seed: int
    method: str
    n_ensemble: int
    steps_completed: int = 0


def lorenz_rhs(state, params):
    """Right-hand side of the Lorenz-63 equations."""
    a, b, c = state[..., 0], state[..., 1], state[..., 2]
    return np.stack([
        params.sigma * (b - a),
        a * (params.rho - c) - b,
        a * b - params.beta * c,
    ], axis=-1)


def rk4_step(state, params, dt=None):
    """One classical fourth-order Runge-Kutta step; works on (..., 3) arrays."""
    state = np.asarray(state, dtype=float)
    if np.any(np.isnan(state)):
        raise FloatingPointError("NaN state: trajectory diverged")
    h = params.dt if dt is None else dt
    k1 = lorenz_rhs(state, params)
    k2 = lorenz_rhs(state + 0.5 * h * k1, params)
    k3 = lorenz_rhs(state + 0.5 * h * k2, params)
    k4 = lorenz_rhs(state + h * k3, params)
    return state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def ensemble_rmse(members, truth):
    """Mean over members of the per-member root-mean-square state error."""
    err = members - truth
    return float(np.mean(np.sqrt(np.mean(err ** 2, axis=1))))


def linear_baseline_update(members, y_obs, obs_sigma, obs_index, rng):
    """Stochastic EnKF update for a scalar observation of one state variable."""
    members = np.asarray(members, dtype=float)
    n = members.shape[0]
    y_pred = members[:, obs_index] + rng.normal(0.0, obs_sigma, size=n)
    var_y = np.var(y_pred, ddof=1)
    if var_y <= 0:
        if np.var(members[:, obs_index], ddof=1) == 0:
            return members.copy()   # zero spread: nothing to update
        raise np.linalg.LinAlgError("singular innovation covariance")
    anom_x = members - members.mean(axis=0)
    anom_y = y_pred - y_pred.mean()
    gain = (anom_x.T @ anom_y) / ((n - 1) * var_y)
    return members + np.outer(y_obs - y_pred, gain)


# variable orderings for the three per-cycle updates: observed variable first
_STATE_ORDERS = [(0, 1, 2), (1, 2, 0), (2, 0, 1)]

# sparse 4-variable map over (y, x_obs, x_o1, x_o2); S3 and S4 skip y
_PARENT_SETS = [[], [0], [1], [1, 2]]


def transport_update(members, y_obs, obs_sigma, obs_index, rng, fit_config,
                     warm_lambdas=None):
    """Assimilate a scalar observation of one state variable with a sparse map.

    Returns (updated members, FitReport list, warm-start log-lambdas).
    """
    n = members.shape[0]
    order = _STATE_ORDERS[obs_index]
    y_pred = members[:, obs_index] + rng.normal(0.0, obs_sigma, size=n)
    joint = np.column_stack([y_pred, members[:, order[0]],
                             members[:, order[1]], members[:, order[2]]])
    cfg = MapFitConfig(
        adapt=fit_config.adapt,
        adapt_monotone=fit_config.adapt_monotone,
        fixed_monotone_log_lambda=fit_config.fixed_monotone_log_lambda,
        max_outer=fit_config.max_outer,
        block_split=1,
        fit_upper=False,
        init_log_lambdas=[None] + list(warm_lambdas or [None, None, None]),
    )
    tri, reports = fit(Ensemble(joint), _PARENT_SETS, cfg)
    updated_block = tri.conditional_update(joint, np.array([y_obs]))[:, 1:]
    out = members.copy()
    for k, var in enumerate(order):
        out[:, var] = updated_block[:, k]
    warm = [r.log_lambdas for r in reports[1:]]
    return out, reports[1:], warm


def run_filter(params, n_ensemble, seed, method="transport", fit_config=None,
               warm_start_lambdas=True):
    """Run one twin experiment and collect RMSE and complexity diagnostics.

    ``method`` is "transport" or "linear-baseline". Map fit failures are
    recorded as divergence; the run still returns a result.
    """
    if n_ensemble < 16:
        raise ValueError("need at least 16 ensemble members")
    if method not in ("transport", "linear-baseline"):
        raise ValueError(f"unknown method {method!r}")
    fit_config = fit_config or MapFitConfig(max_outer=10)
    rng = np.random.default_rng(seed)

    truth = rng.standard_normal(3)
    for _ in range(params.spinup):
        truth = rk4_step(truth, params)
    members = rng.standard_normal((n_ensemble, 3))
    for _ in range(params.spinup):
        members = rk4_step(members, params)

    rmse = np.full(params.steps, np.nan)
    edf_frac = np.full((params.steps, 3), np.nan)
    diverged = False
    warm = {0: None, 1: None, 2: None}
    step = 0
    for step in range(params.steps):
        for _ in range(params.substeps):
            truth = rk4_step(truth, params)
            members = rk4_step(members, params)
        y_all = truth + rng.normal(0.0, params.obs_sigma, size=3)
        fractions = []
        try:
            for v in range(3):
                if method == "transport":
                    members, reports, warm[v] = transport_update(
                        members, y_all[v], params.obs_sigma, v, rng, fit_config,
                        warm_lambdas=warm[v] if warm_start_lambdas else None,
                    )
                    fractions.append([r.edf / r.raw_basis for r in reports])
                else:
                    members = linear_baseline_update(
                        members, y_all[v], params.obs_sigma, v, rng
                    )
        except (RuntimeError, FloatingPointError, np.linalg.LinAlgError) as exc:
            logger.warning("seed %s step %d: %s; flagging divergence", seed, step, exc)
            diverged = True
            break
        if fractions:
            edf_frac[step] = np.mean(np.asarray(fractions), axis=0)
        r = ensemble_rmse(members, truth)
        rmse[step] = r
        if not np.isfinite(r) or r > DIVERGENCE_RMSE:
            diverged = True
            break
    valid = rmse[np.isfinite(rmse)]
    mean_rmse = float(valid.mean()) if valid.size and not diverged else np.inf
    return FilterRunResult(
        rmse_series=rmse, mean_rmse=mean_rmse, edf_fractions=edf_frac,
        diverged=diverged, seed=seed, method=method, n_ensemble=n_ensemble,
        steps_completed=step + 1,
    )
