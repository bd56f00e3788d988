"""Log-scale/profile factorization m = p * exp(u / eps) and its diagnostics.

The trait potential u evolves by an explicit formula (initial potential
minus time times the per-trait eigenvalue minus the accumulated total
mass); dividing it out of the density leaves the age profile p, which the
theory predicts relaxes to the eigenfunction Q.  The relative-entropy
diagnostic integrates |p/Q - gamma0| against the QPhi weight per trait and
must not increase along a run.

Underflow masking: where the density sits below the double-precision
range, the factorization is meaningless; those nodes are excluded and the
masked fraction is reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eigen import EigenField
from .model import Grid, InitialData
from .transport import Trajectory

__all__ = [
    "MASK_FLOOR",
    "DecompositionRecord",
    "evolve_u",
    "extract_profile",
    "gamma0_estimate",
    "entropy",
    "weighted_distance",
    "ProfileTracker",
]

MASK_FLOOR = 1e-300  # below this the density is treated as identically zero
_EXP_CAP = 709.0


def _accumulated_mass(rho_times: np.ndarray, rho_values: np.ndarray, t: float) -> float:
    """Trapezoid integral of the recorded total-mass series over [0, t]."""
    rt = np.asarray(rho_times, dtype=float)
    rv = np.asarray(rho_values, dtype=float)
    if t < rt[0] - 1e-12 or t > rt[-1] + 1e-9 * max(1.0, abs(rt[-1])):
        raise ValueError(f"time {t:g} outside the recorded series "
                         f"[{rt[0]:g}, {rt[-1]:g}]")
    t = min(t, rt[-1])
    k = int(np.searchsorted(rt, t, side="right")) - 1
    total = float(np.trapz(rv[: k + 1], rt[: k + 1])) if k >= 1 else 0.0
    if t > rt[k]:
        # partial cell: linear interpolation of rho
        frac = (t - rt[k]) / (rt[k + 1] - rt[k])
        r_t = rv[k] + frac * (rv[k + 1] - rv[k])
        total += 0.5 * (rv[k] + r_t) * (t - rt[k])
    return total


def evolve_u(u0: np.ndarray, lam: np.ndarray, rho_times: np.ndarray,
             rho_values: np.ndarray, t: float) -> np.ndarray:
    """Trait potential u(t, y) = u0 - t*lam - integral of rho over [0, t].

    ``lam`` may contain +inf at unsolvable trait nodes; the potential is
    -inf there (the population is extinct at every scale).
    """
    mass = _accumulated_mass(rho_times, rho_values, t)
    with np.errstate(invalid="ignore"):
        u = np.asarray(u0, dtype=float) - t * np.asarray(lam, dtype=float) - mass
    if t == 0.0:
        u = np.asarray(u0, dtype=float).copy()
    return u


def extract_profile(m: np.ndarray, u: np.ndarray, eps: float):
    """Profile p = m * exp(-u/eps) with an underflow mask.

    Returns ``(p, mask)`` where ``mask`` flags nodes excluded from
    factorization checks (density below :data:`MASK_FLOOR`).  Raises if the
    rescaling overflows at a node that still carries density.
    """
    m = np.asarray(m, dtype=float)
    u = np.asarray(u, dtype=float)
    c = np.broadcast_to(u[None, :] / eps, m.shape)
    # columns with non-finite potential (unsolvable traits) have no factorization
    mask = (m < MASK_FLOOR) | ~np.isfinite(c)
    p = np.zeros_like(m)
    live = ~mask
    safe = live & (-c <= _EXP_CAP)
    p[safe] = m[safe] * np.exp(-c[safe])
    hard = live & (-c > _EXP_CAP)
    if np.any(hard):
        # density survived where exp(-u/eps) overflows: go through logs
        lp = np.log(m[hard]) - c[hard]
        if np.any(lp > _EXP_CAP):
            raise FloatingPointError(
                "profile overflow: density inconsistent with the potential")
        p[hard] = np.exp(lp)
    return p, mask


def gamma0_estimate(p0: np.ndarray, field: EigenField) -> np.ndarray:
    """Projection gamma0(y) of an age profile on the dual weight.

    Integrates p0 * Phi over age per trait using the field's QPhi node
    weights, so a profile exactly proportional to Q returns its factor.
    Unsolvable trait columns give nan.
    """
    p0 = np.asarray(p0, dtype=float)
    out = np.full(len(field.y), np.nan)
    for j in range(len(field.y)):
        if not field.solvable[j]:
            continue
        w = field.qphi_weights[j]
        Q = field.Q[j]
        g = np.zeros_like(Q)
        live = w != 0.0
        g[live] = p0[:, j][live] / Q[live]
        out[j] = float(np.sum(w * g))
    return out


def _qphi_average(values_over_x, field: EigenField) -> np.ndarray:
    out = np.full(len(field.y), np.nan)
    for j in range(len(field.y)):
        if field.solvable[j]:
            out[j] = float(np.sum(field.qphi_weights[j] * values_over_x[j]))
    return out


def entropy(p: np.ndarray, field: EigenField, gamma0: np.ndarray) -> np.ndarray:
    """Relative entropy E(y): integral of |p/Q - gamma0| against Q*Phi."""
    return weighted_distance(p, field, gamma0, q=1.0)


def weighted_distance(p: np.ndarray, field: EigenField, gamma0: np.ndarray,
                      q: float = 1.0) -> np.ndarray:
    """Weighted distance per trait: integral of |p/Q - gamma0|^q against Q*Phi."""
    if q < 1.0:
        raise ValueError("exponent must be >= 1")
    p = np.asarray(p, dtype=float)
    ny = len(field.y)
    dev = np.zeros((ny, p.shape[0]))
    for j in range(ny):
        if not field.solvable[j]:
            continue
        Q = field.Q[j]
        w = field.qphi_weights[j]
        ratio = np.zeros_like(Q)
        live = (w != 0.0) & (Q > 0)
        ratio[live] = p[:, j][live] / Q[live]
        dev[j] = np.abs(ratio - gamma0[j]) ** q
    return _qphi_average(dev, field)


@dataclass
class DecompositionRecord:
    t: float
    u: np.ndarray
    p: np.ndarray
    mask: np.ndarray
    entropy: np.ndarray
    mask_fraction: float


class ProfileTracker:
    """Factorization bookkeeping along a recorded trajectory.

    Holds the eigen field at unit intensity, the initial potential and the
    reference projection weight; ``analyze`` turns every snapshot into a
    :class:`DecompositionRecord`.  The initial profile envelope
    gamma_lo(y) Q <= p <= gamma_hi(y) Q is exposed for sandwich checks.
    """

    def __init__(self, grid: Grid, init: InitialData, field: EigenField):
        self.grid = grid
        self.init = init
        self.field = field
        self.u0 = init.u0_on(grid.y)
        p0 = init.p0_on(grid.x, grid.y)
        self.gamma0 = gamma0_estimate(p0, field)
        ny = len(grid.y)
        self.gamma_lo = np.full(ny, np.nan)
        self.gamma_hi = np.full(ny, np.nan)
        for j in range(ny):
            if not field.solvable[j]:
                continue
            Q = field.Q[j]
            live = Q > 0
            ratios = p0[:, j][live] / Q[live]
            self.gamma_lo[j] = float(np.min(ratios))
            self.gamma_hi[j] = float(np.max(ratios))

    def potential_at(self, traj: Trajectory, t: float) -> np.ndarray:
        return evolve_u(self.u0, self.field.lam, traj.rho_times,
                        traj.rho_values, t)

    def analyze(self, traj: Trajectory) -> list[DecompositionRecord]:
        records = []
        for t, snap in zip(traj.times, traj.snapshots):
            u = self.potential_at(traj, t)
            p, mask = extract_profile(snap.m, u, self.grid.eps)
            E = entropy(p, self.field, self.gamma0)
            records.append(DecompositionRecord(
                t=t, u=u, p=p, mask=mask, entropy=E,
                mask_fraction=float(np.mean(mask))))
        return records

    def reconstruction_error(self, record: DecompositionRecord,
                             m: np.ndarray) -> float:
        """Max relative error of p * exp(u/eps) against m on unmasked nodes."""
        with np.errstate(over="ignore", under="ignore"):
            back = record.p * np.exp(record.u[None, :] / self.grid.eps)
        live = ~record.mask & (m > 0)
        if not np.any(live):
            return 0.0
        return float(np.max(np.abs(back[live] - m[live]) / m[live]))

    def relaxation_entropy(self, traj: Trajectory, simulator) -> np.ndarray:
        """Scale-free relaxation entropy against the scheme's own eigenpairs.

        For each trait column, takes the Perron profile/dual of the one-step
        update matrix at the run's terminal competition level, normalizes the
        density column by its dual mass, and integrates the deviation from
        the Perron profile.  This removes the amplitude bookkeeping entirely:
        Perron-Frobenius contraction makes the result nonincreasing step by
        step as long as the competition level holds still, so it isolates
        the profile-relaxation mechanism from eigenvalue discretization
        error.  Returns an array (n_snapshots, ny); nan where the column
        carries no dual mass or is degenerate.
        """
        rho_ref = float(traj.rho_values[-1])
        ny = len(self.grid.y)
        out = np.full((len(traj.times), ny), np.nan)
        for j in range(ny):
            M = simulator.column_step_matrix(j, rho_ref)
            if not np.any(M[0, :] > 0):
                continue  # no birth at this trait: no Perron structure
            ev, V = np.linalg.eig(M)
            k = int(np.argmax(ev.real))
            q = np.abs(V[:, k].real)
            evl, W = np.linalg.eig(M.T)
            kl = int(np.argmax(evl.real))
            phi = np.abs(W[:, kl].real)
            s = float(np.sum(phi * q))
            if s <= 0:
                continue
            q = q / s
            for ksnap, snap in enumerate(traj.snapshots):
                col = snap.m[:, j]
                tot = float(np.sum(phi * col))
                if tot <= MASK_FLOOR:
                    continue
                out[ksnap, j] = float(np.sum(phi * np.abs(col / tot - q)))
        return out

    def sandwich_violation(self, record: DecompositionRecord) -> float:
        """Largest relative dip/bulge of p outside its initial envelope."""
        worst = 0.0
        for j in range(len(self.grid.y)):
            if not self.field.solvable[j]:
                continue
            Q = self.field.Q[j]
            live = ~record.mask[:, j] & (Q > 0)
            if not np.any(live):
                continue
            ratios = record.p[:, j][live] / Q[live]
            scale = max(self.gamma_hi[j], 1e-300)
            worst = max(worst,
                        float(self.gamma_lo[j] - np.min(ratios)) / scale,
                        float(np.max(ratios) - self.gamma_hi[j]) / scale)
        return worst
