"""Triangular maps built from fitted spline components.

The map stores an affine standardization (median / scaled IQR) per
variable; components operate on standardized coordinates while all public
operations accept and return original units. Only lower-block components
are required for conditional updates, so fitting can start at the block
split.
"""

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .component import MapComponent
from .objective import DesignCache, FitReport, adapt_lambdas, outer_objective, \
    solve_non_closed_form
from .splines import DegenerateDimensionError, KnotVector, SplineBasis, make_knots

logger = logging.getLogger(__name__)

__all__ = ["Ensemble", "MapFitConfig", "TriangularMap", "fit", "permute_ensemble"]

FORMAT_VERSION = 1

# IQR of the standard normal; dividing by IQR/this keeps N(0,1) data near unit scale
NORMAL_IQR = 1.3489795003921634


class Ensemble:
    """An n x d sample matrix with variable names."""

    def __init__(self, data, names=None):
        data = np.asarray(data, dtype=float)
        if data.ndim != 2:
            raise ValueError("ensemble data must be 2-d (members x variables)")
        if data.shape[0] < 8:
            raise ValueError("need at least 8 members")
        if not np.all(np.isfinite(data)):
            raise ValueError("ensemble contains non-finite entries")
        self.data = data
        self.names = list(names) if names is not None \
            else [f"x{j}" for j in range(data.shape[1])]
        if len(self.names) != data.shape[1]:
            raise ValueError("one name per variable required")

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def dim(self):
        return self.data.shape[1]


def permute_ensemble(ensemble, order):
    """Reorder variables; ordering matters for conditional independence."""
    order = list(order)
    if sorted(order) != list(range(ensemble.dim)):
        raise ValueError("order must be a permutation of the variable indices")
    return Ensemble(ensemble.data[:, order], [ensemble.names[j] for j in order])


@dataclass
class MapFitConfig:
    """Settings for fitting a triangular map."""

    degree: int = 3
    penalty_order: int = 2
    num_real_knots: int = None          # override the cube-root knot rule
    adapt: bool = True
    adapt_monotone: bool = True         # False reproduces the fixed-monotone regime
    fixed_monotone_log_lambda: float = 10.0
    init_log_lambda: float = 2.0
    max_outer: int = 50
    standardize: bool = True
    block_split: int = 0                # variables below this index form block a
    fit_upper: bool = True              # also fit block-a components
    init_log_lambdas: list = field(default_factory=list, repr=False)  # warm starts


def _validate_parent_sets(parent_sets, dim):
    if len(parent_sets) != dim:
        raise ValueError("one parent set per variable required")
    for j, parents in enumerate(parent_sets):
        for p in parents:
            if not 0 <= p < j:
                raise ValueError(
                    f"component {j} lists parent {p}; parents must be below {j}"
                )


class TriangularMap:
    """Ordered map components with pushforward, pullback, and conditioning."""

    def __init__(self, components, center, scale, names=None, block_split=0):
        self.components = list(components)
        self.center = np.asarray(center, dtype=float)
        self.scale = np.asarray(scale, dtype=float)
        self.dim = self.center.size
        self.names = list(names) if names is not None \
            else [f"x{j}" for j in range(self.dim)]
        self.block_split = int(block_split)

    # -- helpers ------------------------------------------------------------

    def _std(self, x):
        return (np.asarray(x, dtype=float) - self.center) / self.scale

    def _component(self, j):
        comp = self.components[j]
        if comp is None:
            raise ValueError(f"component {j} was not fitted (upper block skipped)")
        return comp

    # -- evaluation ---------------------------------------------------------

    def pushforward(self, x_row):
        """z = S(x) for one state row."""
        z = self._std(x_row)
        return np.array([self._component(j).eval(z) for j in range(self.dim)])

    def pushforward_ensemble(self, ensemble):
        Z = (ensemble.data - self.center) / self.scale
        out = np.column_stack(
            [self._component(j).eval_many(Z) for j in range(self.dim)]
        )
        return Ensemble(out, [f"z_{name}" for name in ensemble.names])

    def component_ddx(self, j, x_row):
        """dS_j/dx_j in original units."""
        z = self._std(x_row)
        return self._component(j).ddx(z[j]) / self.scale[j]

    def log_pullback_density(self, x_row):
        """log pi(x) = sum_j [log phi(S_j(x)) + log dS_j/dx_j]."""
        z = self._std(x_row)
        total = 0.0
        for j in range(self.dim):
            comp = self._component(j)
            sj = comp.eval(z)
            dj = comp.ddx(z[j]) / self.scale[j]
            if dj <= 0:
                return -np.inf
            total += -0.5 * sj ** 2 - 0.5 * np.log(2.0 * np.pi) + np.log(dj)
        return total

    def inverse(self, z_row):
        """Full inverse by sequential one-dimensional solves."""
        z_row = np.asarray(z_row, dtype=float)
        x_std = np.zeros(self.dim)
        for j in range(self.dim):
            x_std[j] = self._component(j).invert_in_last(x_std, z_row[j])
        return x_std * self.scale + self.center

    # -- conditioning -------------------------------------------------------

    def conditional_update(self, members, x_a_star):
        """Replace block a by the observed values and re-invert block b.

        ``members`` is an (n, dim) array in original units; returns the
        updated array. Each member keeps its own latent block-b coordinate.
        """
        members = np.asarray(members, dtype=float)
        split = self.block_split
        x_a_star = np.asarray(x_a_star, dtype=float)
        if x_a_star.size != split:
            raise ValueError(f"x_a_star must have length {split}")
        Z = (members - self.center) / self.scale
        zb = [self._component(j).eval_many(Z) for j in range(split, self.dim)]
        new_std = np.empty_like(Z)
        new_std[:, :split] = (x_a_star - self.center[:split]) / self.scale[:split]
        for j in range(split, self.dim):
            try:
                new_std[:, j] = self._component(j).invert_many(new_std, zb[j - split])
            except RuntimeError as exc:
                raise RuntimeError(
                    f"inversion failed in component {j}: {exc}"
                ) from exc
        return new_std * self.scale + self.center

    def sample_conditional(self, x_a_star, num, seed=None):
        """Draw block-b samples conditioned on block a = x_a_star."""
        rng = np.random.default_rng(seed)
        split = self.block_split
        nb = self.dim - split
        x_a_star = np.asarray(x_a_star, dtype=float)
        z = rng.standard_normal((num, nb))
        rows_std = np.empty((num, self.dim))
        rows_std[:, :split] = (x_a_star - self.center[:split]) / self.scale[:split]
        for j in range(split, self.dim):
            rows_std[:, j] = self._component(j).invert_many(rows_std, z[:, j - split])
        return rows_std[:, split:] * self.scale[split:] + self.center[split:]

    # -- serialization ------------------------------------------------------

    def to_dict(self):
        comps = []
        for comp in self.components:
            if comp is None:
                comps.append(None)
                continue
            comps.append({
                "parents": comp.parents,
                "own": comp.own,
                "non_knots": [b.knots.real.tolist() for b in comp.non_bases],
                "mon_knots": comp.mon_basis.knots.real.tolist(),
                "degree": comp.mon_basis.degree,
                "beta_non": comp.beta_non.tolist(),
                "beta_mon_raw": comp.beta_mon_raw.tolist(),
                "log_lambdas": None if comp.log_lambdas is None
                else comp.log_lambdas.tolist(),
            })
        return {
            "format_version": FORMAT_VERSION,
            "dim": self.dim,
            "names": self.names,
            "block_split": self.block_split,
            "center": self.center.tolist(),
            "scale": self.scale.tolist(),
            "components": comps,
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported map format version {doc.get('format_version')}")
        comps = []
        for cd in doc["components"]:
            if cd is None:
                comps.append(None)
                continue
            degree = cd["degree"]
            non_bases = [SplineBasis(KnotVector(np.array(k), degree))
                         for k in cd["non_knots"]]
            mon_basis = SplineBasis(KnotVector(np.array(cd["mon_knots"]), degree))
            comps.append(MapComponent(
                cd["parents"], cd["own"], non_bases, mon_basis,
                np.array(cd["beta_non"]), np.array(cd["beta_mon_raw"]),
                None if cd["log_lambdas"] is None else np.array(cd["log_lambdas"]),
            ))
        return cls(comps, np.array(doc["center"]), np.array(doc["scale"]),
                   doc["names"], doc["block_split"])

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _standardization(data, standardize):
    if not standardize:
        return np.zeros(data.shape[1]), np.ones(data.shape[1])
    center = np.median(data, axis=0)
    iqr = np.quantile(data, 0.75, axis=0) - np.quantile(data, 0.25, axis=0)
    scale = iqr / NORMAL_IQR
    fallback = np.std(data, axis=0)
    scale = np.where(scale > 0, scale, np.where(fallback > 0, fallback, 1.0))
    return center, scale


def fit(ensemble, parent_sets, config=None):
    """Fit a triangular map with per-component smoothing adaptation.

    Parameters
    ----------
    ensemble : Ensemble
    parent_sets : list of list of int
        Parent indices per component; component j may only list indices < j.
    config : MapFitConfig, optional

    Returns
    -------
    (TriangularMap, list of FitReport)
        Reports are None for skipped upper-block components.
    """
    config = config or MapFitConfig()
    _validate_parent_sets(parent_sets, ensemble.dim)
    center, scale = _standardization(ensemble.data, config.standardize)
    Z = (ensemble.data - center) / scale
    first = 0 if config.fit_upper else config.block_split
    components = [None] * ensemble.dim
    reports = [None] * ensemble.dim
    for j in range(first, ensemble.dim):
        try:
            components[j], reports[j] = _fit_component(Z, j, parent_sets[j], config)
        except Exception as exc:
            raise RuntimeError(
                f"fit of component {j} ({ensemble.names[j]}) failed: {exc}"
            ) from exc
    return TriangularMap(components, center, scale, ensemble.names,
                         config.block_split), reports


def _fit_component(Z, j, parents, config):
    mon_knots = make_knots(Z[:, j], config.degree, config.num_real_knots)
    mon_basis = SplineBasis(mon_knots)
    non_bases, kept_parents = [], []
    for p in parents:
        try:
            kv = make_knots(Z[:, p], config.degree, config.num_real_knots)
        except DegenerateDimensionError:
            logger.warning("dropping constant parent %d of component %d", p, j)
            continue
        non_bases.append(SplineBasis(kv))
        kept_parents.append(p)
    cache = DesignCache(non_bases, [Z[:, p] for p in kept_parents],
                        mon_basis, Z[:, j], config.penalty_order)
    logl0 = np.full(cache.num_blocks, config.init_log_lambda)
    if not config.adapt_monotone:
        logl0[-1] = config.fixed_monotone_log_lambda
    if config.init_log_lambdas and config.init_log_lambdas[j] is not None:
        logl0 = np.array(config.init_log_lambdas[j], dtype=float)
    if config.adapt:
        mask = np.ones(cache.num_blocks, dtype=bool)
        mask[-1] = config.adapt_monotone
        logl, report, r_hat = adapt_lambdas(
            cache, logl0, adapt_mask=mask, max_outer=config.max_outer
        )
    else:
        logl = logl0
        _, report, r_hat = outer_objective(cache, logl)
    beta_non = solve_non_closed_form(cache, r_hat, logl)
    comp = MapComponent(kept_parents, j, non_bases, mon_basis,
                        beta_non, r_hat, logl)
    return comp, report
