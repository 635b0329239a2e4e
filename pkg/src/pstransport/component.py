"""One triangular map component: additive spline terms over parents plus a
monotone spline term in its own variable.

The monotone term stores raw parameters ``(level, increments...)``; the
actual spline coefficients are their cumulative sum, so nonnegative
increments guarantee a non-decreasing function. Inversion in the last
argument exploits the exactly affine tails of the basis to bracket the
root analytically.
"""

import numpy as np
from scipy.optimize import brentq

__all__ = ["MapComponent", "NotInvertibleError"]


class NotInvertibleError(RuntimeError):
    """The monotone term is flat (all increments zero); no inverse exists."""


def cumulative(raw):
    """Map raw (level, increments...) parameters to monotone coefficients."""
    return np.cumsum(raw)


class MapComponent:
    """S(x_parents, x_own) = sum_k g_k(x_parent_k) + f(x_own), f non-decreasing.

    Parameters
    ----------
    parents : sequence of int
        Indices of parent variables in the full state vector.
    own : int
        Index of the variable this component is monotone in.
    non_bases : list of SplineBasis
        One basis per parent (same order as ``parents``).
    mon_basis : SplineBasis
        Basis for the monotone term.
    beta_non : ndarray
        Concatenated nonmonotone coefficients (per-parent blocks).
    beta_mon_raw : ndarray
        Raw monotone parameters; ``beta_mon_raw[0]`` is a free level,
        the remaining increments must be >= 0.
    log_lambdas : ndarray, optional
        Per-block log smoothing parameters (parents first, monotone last);
        kept for reporting and serialization.
    """

    def __init__(self, parents, own, non_bases, mon_basis, beta_non, beta_mon_raw,
                 log_lambdas=None):
        if len(parents) != len(non_bases):
            raise ValueError("one basis per parent required")
        self.parents = list(parents)
        self.own = int(own)
        self.non_bases = list(non_bases)
        self.mon_basis = mon_basis
        self.beta_non = np.asarray(beta_non, dtype=float)
        self.beta_mon_raw = np.asarray(beta_mon_raw, dtype=float)
        if np.any(self.beta_mon_raw[1:] < 0):
            raise ValueError("monotone increments must be nonnegative")
        expected = sum(b.num_basis for b in non_bases)
        if self.beta_non.size != expected:
            raise ValueError(f"beta_non has size {self.beta_non.size}, expected {expected}")
        if self.beta_mon_raw.size != mon_basis.num_basis:
            raise ValueError("beta_mon_raw size must match monotone basis")
        self.beta_mon = cumulative(self.beta_mon_raw)
        self.log_lambdas = None if log_lambdas is None else np.asarray(log_lambdas, float)
        self._slices = []
        start = 0
        for b in non_bases:
            self._slices.append(slice(start, start + b.num_basis))
            start += b.num_basis

    def parent_term(self, x_row):
        """Sum of the nonmonotone terms at the parent coordinates of ``x_row``."""
        x_row = np.asarray(x_row, dtype=float)
        if np.any(np.isnan(x_row)):
            raise ValueError("NaN coordinate")
        total = 0.0
        for p, basis, sl in zip(self.parents, self.non_bases, self._slices):
            total += basis.eval(x_row[p]) @ self.beta_non[sl]
        return total

    def monotone_term(self, x_own):
        return self.mon_basis.eval(x_own) @ self.beta_mon

    def eval(self, x_row):
        """Component value at a full state row."""
        x_row = np.asarray(x_row, dtype=float)
        return self.parent_term(x_row) + self.monotone_term(x_row[self.own])

    def ddx(self, x_own):
        """Derivative of the monotone term; independent of the parents."""
        if np.any(np.isnan(np.atleast_1d(x_own))):
            raise ValueError("NaN coordinate")
        return self.mon_basis.eval_deriv(x_own) @ self.beta_mon

    # -- vectorized paths (one call for a whole ensemble) -------------------

    def parent_term_many(self, rows):
        """Nonmonotone contribution for every row of an (n, d) array."""
        rows = np.asarray(rows, dtype=float)
        total = np.zeros(rows.shape[0])
        for p, basis, sl in zip(self.parents, self.non_bases, self._slices):
            total += basis.eval(rows[:, p]) @ self.beta_non[sl]
        return total

    def eval_many(self, rows):
        rows = np.asarray(rows, dtype=float)
        if np.any(np.isnan(rows)):
            raise ValueError("NaN coordinate")
        return self.parent_term_many(rows) + self.mon_basis.eval(rows[:, self.own]) @ self.beta_mon

    def invert_many(self, rows, z_targets, tol=1e-10, max_iter=200):
        """Vectorized invert_in_last over members; rows supply the parents."""
        rows = np.asarray(rows, dtype=float)
        z_targets = np.asarray(z_targets, dtype=float)
        t = z_targets - self.parent_term_many(rows)
        kn = self.mon_basis.knots
        f = lambda x: self.mon_basis.eval(x) @ self.beta_mon
        f_lo, f_hi = float(f(kn.first)), float(f(kn.last))
        x = np.empty(t.size)
        below = t < f_lo
        above = t > f_hi
        mid = ~(below | above)
        if below.any():
            slope = float(self.ddx(kn.first))
            if slope <= 0:
                raise NotInvertibleError("flat left tail; target below range")
            x[below] = kn.first + (t[below] - f_lo) / slope
        if above.any():
            slope = float(self.ddx(kn.last))
            if slope <= 0:
                raise NotInvertibleError("flat right tail; target above range")
            x[above] = kn.last + (t[above] - f_hi) / slope
        scale = np.maximum(1.0, np.abs(z_targets))
        if mid.any():
            if f_hi - f_lo <= 0:
                raise NotInvertibleError("monotone term is flat; cannot invert")
            tm = t[mid]
            sm = scale[mid]
            lo = np.full(tm.size, kn.first)
            hi = np.full(tm.size, kn.last)
            xm = kn.first + (tm - f_lo) / (f_hi - f_lo) * (kn.last - kn.first)
            for _ in range(max_iter):
                fm = f(xm) - tm
                # accept when the residual is small on the target scale or the
                # bracket has collapsed to floating-point resolution
                done = (np.abs(fm) <= tol * sm) | \
                    (hi - lo <= 4e-16 * np.maximum(1.0, np.abs(xm)))
                if done.all():
                    break
                hi = np.where(fm > 0, xm, hi)
                lo = np.where(fm <= 0, xm, lo)
                dm = self.ddx(xm)
                with np.errstate(divide="ignore", invalid="ignore"):
                    xn = xm - fm / dm
                bad = ~np.isfinite(xn) | (xn <= lo) | (xn >= hi)
                xn = np.where(bad, 0.5 * (lo + hi), xn)
                xm = np.where(done, xm, xn)
            x[mid] = xm
        # residual check on the scale the bisection can actually resolve: for a
        # steep monotone term, one ulp in x moves f by |f'(x)| * ulp(x)
        resolvable = np.abs(self.ddx(x)) * np.abs(x) * 2e-16
        resid = np.abs(f(x) + self.parent_term_many(rows) - z_targets)
        if np.any(resid > 100 * (tol * scale + resolvable)):
            raise NotInvertibleError("vectorized inversion did not reach tolerance")
        return x

    def invert_in_last(self, x_row, z_target, tol=1e-10):
        """Solve S(x_parents, x_own) = z_target for x_own.

        ``x_row`` supplies the parent coordinates; its own-index entry is
        ignored. Outside the knot range the monotone term is exactly affine,
        so out-of-range targets are solved in closed form on the tail.
        """
        g = self.parent_term(x_row)
        target = float(z_target) - g
        f = self.monotone_term
        kn = self.mon_basis.knots
        f_lo, f_hi = f(kn.first), f(kn.last)
        if f_hi - f_lo <= 0 and self.ddx(0.5 * (kn.first + kn.last)) <= 0:
            raise NotInvertibleError("monotone term is flat; cannot invert")
        if target < f_lo:
            slope = self.ddx(kn.first)
            if slope <= 0:
                raise NotInvertibleError("flat left tail; target below range")
            x = kn.first + (target - f_lo) / slope
        elif target > f_hi:
            slope = self.ddx(kn.last)
            if slope <= 0:
                raise NotInvertibleError("flat right tail; target above range")
            x = kn.last + (target - f_hi) / slope
        else:
            x = brentq(lambda t: f(t) - target, kn.first, kn.last,
                       xtol=1e-13, rtol=8.9e-16, maxiter=200)
        # one Newton polish; guards the residual contract
        d = self.ddx(x)
        if d > 0:
            x -= (f(x) - target) / d
        if abs(f(x) - target) > tol * max(1.0, abs(z_target)):
            raise NotInvertibleError("inversion did not reach tolerance")
        return x
