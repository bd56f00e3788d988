"""Limit objects of the vanishing-scale regime: selected-trait dynamics.

Everything here lives on the trait grid alone.  The total mass of the
limit problem comes from differentiating the running supremum of
(initial potential - t * fitness); the selected trait follows the
canonical ODE  ybar' = grad_fitness / hessian_potential  integrated with
RK4; concentration points and fitness critical points are located by
parabolic refinement of grid scans.

Trait derivatives are central differences on the grid (the synthetic
quadratic test family makes them exact); only the one-dimensional trait
case is implemented, matching the rest of the package.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LimitModel",
    "ConcavityLossError",
    "rho_from_sup",
    "limit_u",
    "canonical_step",
    "canonical_trajectory",
    "concentration_point",
    "critical_points",
    "rho_monotonicity_check",
]


class ConcavityLossError(RuntimeError):
    """The potential stopped being strictly concave at the tracked trait."""


def _central_diff(values: np.ndarray, h: float) -> np.ndarray:
    """Central first difference; one-sided at the ends."""
    v = np.asarray(values, dtype=float)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - v[:-2]) / (2.0 * h)
    out[0] = (v[1] - v[0]) / h
    out[-1] = (v[-1] - v[-2]) / h
    return out


def _second_diff(values: np.ndarray, h: float) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    out = np.full_like(v, np.nan)
    out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / (h * h)
    out[0] = out[1]
    out[-1] = out[-2]
    return out


def _parabolic_max(y: np.ndarray, v: np.ndarray):
    """Argmax refined by a 3-point parabola; exact for quadratics.

    Returns (location, value, tie_locations); ties within 1e-12 of the
    maximum are all reported.
    """
    j = int(np.argmax(v))
    top = v[j]
    ties = np.flatnonzero(v >= top - 1e-12)
    if j == 0 or j == len(y) - 1:
        return float(y[j]), float(top), [float(y[k]) for k in ties]
    h = y[1] - y[0]
    denom = v[j - 1] - 2.0 * v[j] + v[j + 1]
    if denom >= 0:
        return float(y[j]), float(top), [float(y[k]) for k in ties]
    delta = 0.5 * (v[j - 1] - v[j + 1]) / denom
    delta = float(np.clip(delta, -0.5, 0.5))
    value = v[j] - 0.25 * (v[j - 1] - v[j + 1]) * delta
    return float(y[j] + delta * h), float(value), [float(y[k]) for k in ties]


@dataclass
class LimitModel:
    """Trait grid data for the limit problem: initial potential and fitness.

    ``grad_lam`` defaults to central differences of ``lam``; pass the eigen
    module's gradient when the fitness comes from the eigenproblem so both
    consumers share one discretization.
    """

    y: np.ndarray
    u0: np.ndarray
    lam: np.ndarray
    grad_lam: np.ndarray | None = None
    _d2u0: np.ndarray = field(init=False, repr=False, default=None)
    _d2lam: np.ndarray = field(init=False, repr=False, default=None)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.u0 = np.asarray(self.u0, dtype=float)
        self.lam = np.asarray(self.lam, dtype=float)
        if self.grad_lam is None:
            self.grad_lam = _central_diff(self.lam, self.dy)
        self._d2u0 = _second_diff(self.u0, self.dy)
        self._d2lam = _second_diff(self.lam, self.dy)

    @property
    def dy(self) -> float:
        return float(self.y[1] - self.y[0])

    def _interp(self, values: np.ndarray, yq: float) -> float:
        if yq < self.y[0] or yq > self.y[-1]:
            raise ValueError(f"trait {yq:g} outside the grid")
        return float(np.interp(yq, self.y, values))

    def grad_fitness(self, yq: float) -> float:
        return self._interp(self.grad_lam, yq)

    def hessian_potential(self, t: float, yq: float) -> float:
        """Second trait derivative of u(t, .) = u0 - t*lam (plus constants)."""
        return self._interp(self._d2u0, yq) - t * self._interp(self._d2lam, yq)

    def sup_envelope(self, t: float):
        """(value, argmax, ties) of the parabola-refined max of u0 - t*lam."""
        v = self.u0 - t * self.lam
        ybar, val, ties = _parabolic_max(self.y, v)
        if len(ties) > 1:
            warnings.warn(
                f"polymorphic maximum at t = {t:g}: maximizers near y = {ties}",
                RuntimeWarning, stacklevel=2)
        return val, ybar, ties


def rho_from_sup(model: LimitModel, t: float, h: float = 1e-4) -> float:
    """Limit total mass rho(t), the time derivative of the sup envelope.

    Central difference of S(t) = sup_y (u0 - t*lam) with step ``h``; the
    argmax is refined parabolically so the quadratic family is exact.  A
    boundary argmax triggers a domain-too-small warning.
    """
    s_plus, yb, _ = model.sup_envelope(t + h)
    s_minus, _, _ = model.sup_envelope(max(t - h, 0.0))
    if yb <= model.y[0] + 1e-12 or yb >= model.y[-1] - 1e-12:
        warnings.warn(f"sup attained at the trait boundary (y = {yb:g}); "
                      "the domain may be too small", RuntimeWarning, stacklevel=2)
    width = t + h - max(t - h, 0.0)
    return (s_plus - s_minus) / width


def rho_series(model: LimitModel, T: float, dt: float = 1e-3):
    """(times, rho values) of the limit mass on a uniform time grid."""
    times = np.arange(0.0, T + 0.5 * dt, dt)
    vals = np.array([rho_from_sup(model, float(t)) for t in times])
    return times, vals


def limit_u(model: LimitModel, rho_times: np.ndarray, rho_values: np.ndarray,
            t: float) -> np.ndarray:
    """Limit potential u(t, .) = u0 - t*lam - integral of rho."""
    rt = np.asarray(rho_times, dtype=float)
    rv = np.asarray(rho_values, dtype=float)
    if t < rt[0] - 1e-12 or t > rt[-1] + 1e-9:
        raise ValueError(f"time {t:g} outside the recorded mass series")
    k = int(np.searchsorted(rt, min(t, rt[-1]), side="right")) - 1
    mass = float(np.trapezoid(rv[: k + 1], rt[: k + 1])) if k >= 1 else 0.0
    if t > rt[k]:
        frac = (t - rt[k]) / (rt[k + 1] - rt[k])
        r_t = rv[k] + frac * (rv[k + 1] - rv[k])
        mass += 0.5 * (rv[k] + r_t) * (t - rt[k])
    return model.u0 - t * model.lam - mass


def _canonical_rhs(model: LimitModel, t: float, ybar: float) -> float:
    hess = model.hessian_potential(t, ybar)
    if hess >= -1e-14:
        raise ConcavityLossError(
            f"potential not strictly concave at t = {t:g}, y = {ybar:g} "
            f"(second derivative {hess:g})")
    return model.grad_fitness(ybar) / hess


def canonical_step(model: LimitModel, ybar: float, t: float, dt: float) -> float:
    """One RK4 step of the selected-trait ODE ybar' = grad_lam / d2u."""
    k1 = _canonical_rhs(model, t, ybar)
    k2 = _canonical_rhs(model, t + 0.5 * dt, ybar + 0.5 * dt * k1)
    k3 = _canonical_rhs(model, t + 0.5 * dt, ybar + 0.5 * dt * k2)
    k4 = _canonical_rhs(model, t + dt, ybar + dt * k3)
    return ybar + dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0


def canonical_trajectory(model: LimitModel, ybar0: float, T: float,
                         dt: float = 1e-3):
    """(times, ybar, lam(ybar)) from RK4 integration up to time T."""
    n = int(round(T / dt))
    times = np.empty(n + 1)
    ys = np.empty(n + 1)
    times[0], ys[0] = 0.0, ybar0
    for k in range(n):
        ys[k + 1] = canonical_step(model, ys[k], k * dt, dt)
        times[k + 1] = (k + 1) * dt
    lams = np.interp(ys, model.y, model.lam)
    return times, ys, lams


def concentration_point(model: LimitModel, t: float,
                        rho_times: np.ndarray | None = None,
                        rho_values: np.ndarray | None = None):
    """Concentration trait at time t with its first-order residuals.

    Returns ``(ybar, grad_residual, value_residual, ties)``: the refined
    argmax of u0 - t*lam, the defect of the stationarity relation
    grad_u0 = t * grad_lam there, and (when a mass series is supplied) the
    defect of u0(ybar) = integral of rho - t * rho(t).
    """
    _, ybar, ties = model.sup_envelope(t)
    grad_u0 = _central_diff(model.u0, model.dy)
    grad_res = abs(float(np.interp(ybar, model.y, grad_u0))
                   - t * model.grad_fitness(ybar))
    value_res = np.nan
    if rho_times is not None and rho_values is not None:
        rt = np.asarray(rho_times, dtype=float)
        rv = np.asarray(rho_values, dtype=float)
        k = int(np.searchsorted(rt, min(t, rt[-1]), side="right")) - 1
        mass = float(np.trapezoid(rv[: k + 1], rt[: k + 1])) if k >= 1 else 0.0
        rho_t = float(np.interp(t, rt, rv))
        u0_bar = float(np.interp(ybar, model.y, model.u0))
        value_res = abs(u0_bar - (mass - t * rho_t))
    return ybar, grad_res, value_res, ties


def critical_points(model: LimitModel, tol: float = 1e-10):
    """Zeros of the fitness gradient with min/max classification.

    Scans the grid gradient for sign changes and bisects the linear
    interpolant.  Returns a list of (location, kind) with kind in
    {"min", "max"}; an all-zero gradient is reported as degenerate via a
    warning and an empty list.
    """
    g = np.asarray(model.grad_lam, dtype=float)
    scale = float(np.max(np.abs(g))) if len(g) else 0.0
    if scale < 1e-12:
        warnings.warn("fitness gradient vanishes identically (degenerate)",
                      RuntimeWarning, stacklevel=2)
        return []
    out = []
    d2 = model._d2lam
    for j in range(len(g) - 1):
        a, b = g[j], g[j + 1]
        if a == 0.0 and j > 0:
            out.append((float(model.y[j]), "min" if d2[j] > 0 else "max"))
            continue
        if a * b < 0.0:
            lo, hi = float(model.y[j]), float(model.y[j + 1])
            flo = a
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                fm = float(np.interp(mid, model.y, g))
                if flo * fm <= 0.0:
                    hi = mid
                else:
                    lo, flo = mid, fm
            ystar = 0.5 * (lo + hi)
            kind = "min" if float(np.interp(ystar, model.y, d2)) > 0 else "max"
            out.append((ystar, kind))
    return out


@dataclass
class MonotonicityReport:
    passed: bool
    first_violation_index: int | None = None
    worst_drop: float = 0.0


def rho_monotonicity_check(rho_values: np.ndarray,
                           tol: float = 1e-8) -> MonotonicityReport:
    """Verify the limit mass series never decreases beyond ``tol``."""
    rv = np.asarray(rho_values, dtype=float)
    drops = rv[:-1] - rv[1:]
    bad = np.flatnonzero(drops > tol)
    if len(bad) == 0:
        return MonotonicityReport(True, None, float(np.max(drops, initial=0.0)))
    return MonotonicityReport(False, int(bad[0]), float(np.max(drops)))
