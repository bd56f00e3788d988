"""Problem definition: coefficients, mutation kernels, initial data, grid.

The coefficient functions arrive as expression strings (or pre-parsed
trees); everything downstream evaluates them on the discretization grid.
``validate_assumptions`` checks the structural hypotheses the analysis
rests on and reports violations instead of silently proceeding: the
reference example itself breaks the net-rate bounds for large traits, so
those checks are warnings, not errors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .expressions import Expression, parse_expression
from .quadrature import trapezoid_weights

__all__ = [
    "CoefficientModel",
    "MutationKernel",
    "InitialData",
    "Grid",
    "AssumptionCheck",
    "ValidationReport",
    "validate_assumptions",
    "kernel_quadrature",
    "GridError",
]


class GridError(ValueError):
    """Inconsistent discretization parameters (CFL violation etc.)."""


def _as_expression(f) -> Expression:
    return parse_expression(f) if isinstance(f, str) else f


@dataclass
class CoefficientModel:
    """Aging speed A, birth rate b and death rate d with their bounds.

    ``a_lo``/``a_hi`` bound the aging speed from below/above; ``r_lo`` and
    ``r_hi``, when given, bound the net rate b - d.
    """

    A: Expression
    b: Expression
    d: Expression
    a_lo: float = 1.0
    a_hi: float = 1.0
    r_lo: float | None = None
    r_hi: float | None = None

    def __post_init__(self):
        self.A = _as_expression(self.A)
        self.b = _as_expression(self.b)
        self.d = _as_expression(self.d)
        if not (0.0 < self.a_lo <= self.a_hi):
            raise ValueError("aging speed bounds must satisfy 0 < a_lo <= a_hi")

    def on_grid(self, x: np.ndarray, y: np.ndarray):
        """Evaluate (A, b, d) on the tensor grid, shape (nx, ny)."""
        xc = np.asarray(x, dtype=float)[:, None]
        yc = np.asarray(y, dtype=float)[None, :]
        shape = np.broadcast_shapes(xc.shape, yc.shape)
        out = []
        for f in (self.A, self.b, self.d):
            v = np.asarray(f(xc, yc), dtype=float)
            out.append(np.broadcast_to(v, shape).copy())
        return tuple(out)

    def column(self, x: np.ndarray, y: float):
        """Evaluate (A, b, d) along the age grid at a single trait."""
        xc = np.asarray(x, dtype=float)
        out = []
        for f in (self.A, self.b, self.d):
            v = np.asarray(f(xc, float(y)), dtype=float)
            out.append(np.broadcast_to(v, xc.shape).astype(float))
        return tuple(out)


@dataclass
class Grid:
    """Uniform (age x trait) grid with time step and scale parameter.

    Construction rejects time steps violating the stability condition
    dt * a_hi <= eps * dx; pass ``dt=None`` for eigen-only usage.
    """

    x_max: float
    nx: int  # number of age cells; nodes are nx + 1
    y_min: float
    y_max: float
    ny: int  # number of trait cells; nodes are ny + 1
    eps: float = 1.0
    dt: float | None = None
    a_hi: float = 1.0

    def __post_init__(self):
        if self.x_max <= 0 or self.nx < 2 or self.ny < 2 or self.y_max <= self.y_min:
            raise GridError("degenerate grid extents")
        if self.eps <= 0:
            raise GridError("eps must be positive")
        self.x = np.linspace(0.0, self.x_max, self.nx + 1)
        self.y = np.linspace(self.y_min, self.y_max, self.ny + 1)
        if self.dt is not None:
            if self.dt <= 0:
                raise GridError("dt must be positive")
            if self.dt * self.a_hi > self.eps * self.dx * (1 + 1e-12):
                raise GridError(
                    f"CFL violated: dt*a_hi = {self.dt * self.a_hi:g} exceeds "
                    f"eps*dx = {self.eps * self.dx:g}"
                )

    @property
    def dx(self) -> float:
        return self.x_max / self.nx

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / self.ny

    def with_eps(self, eps: float, dt: float | None = None) -> "Grid":
        """Copy with a new scale parameter (and optionally time step)."""
        return Grid(self.x_max, self.nx, self.y_min, self.y_max, self.ny,
                    eps=eps, dt=dt, a_hi=self.a_hi)


# ---------------------------------------------------------------------------
# Mutation kernels


@dataclass
class MutationKernel:
    """Probability kernel on the mutation variable z with its quadrature.

    ``z`` are the quadrature nodes and ``w``/``norm`` the trapezoid weights
    and their sum; dividing by ``norm`` at evaluation time makes the
    discrete kernel integrate to exactly 1.  ``p_max`` is the declared
    bound up to which exponential moments are trusted.
    """

    family: str
    z: np.ndarray
    density: np.ndarray
    p_max: float
    param: float = 0.0

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        self.density = np.asarray(self.density, dtype=float)
        if self.z.ndim != 1 or self.z.shape != self.density.shape:
            raise ValueError("kernel nodes and density must be 1-D and aligned")
        if np.any(self.density < 0):
            raise ValueError("kernel density must be nonnegative")
        if len(self.z) == 1:
            self.w = np.array([1.0])
        else:
            dz = self.z[1] - self.z[0]
            if not np.allclose(np.diff(self.z), dz, rtol=1e-12, atol=0.0):
                raise ValueError("kernel z-grid must be uniform")
            self.w = trapezoid_weights(len(self.z), dz) * self.density
        self.norm = float(np.sum(self.w))
        if self.norm <= 0:
            raise ValueError("kernel carries no mass on its grid")

    @property
    def is_delta(self) -> bool:
        return self.family == "delta"

    @classmethod
    def gaussian(cls, sigma: float, n_nodes: int = 241,
                 p_max: float | None = None,
                 extent_sigmas: float = 6.0) -> "MutationKernel":
        """Centered gaussian, truncated at ``extent_sigmas`` standard
        deviations (default 6, tail mass < 1e-8; widen it when exponential
        moments near the declared p_max must carry more digits).
        """
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        z = np.linspace(-extent_sigmas * sigma, extent_sigmas * sigma, n_nodes)
        dens = np.exp(-0.5 * (z / sigma) ** 2) / (sigma * np.sqrt(2.0 * np.pi))
        if p_max is None:
            p_max = 2.0 / sigma
        return cls("gaussian", z, dens, p_max=p_max, param=sigma)

    @classmethod
    def uniform(cls, half_width: float, n_nodes: int = 201,
                p_max: float | None = None) -> "MutationKernel":
        if half_width <= 0:
            raise ValueError("half_width must be positive")
        z = np.linspace(-half_width, half_width, n_nodes)
        dens = np.full_like(z, 0.5 / half_width)
        if p_max is None:
            p_max = 500.0 / half_width
        return cls("uniform", z, dens, p_max=p_max, param=half_width)

    @classmethod
    def delta(cls) -> "MutationKernel":
        """Point mass at z = 0: reduces mutation machinery to the local case."""
        return cls("delta", np.array([0.0]), np.array([1.0]), p_max=np.inf)

    @classmethod
    def tabulated(cls, z, density, p_max: float | None = None) -> "MutationKernel":
        z = np.asarray(z, dtype=float)
        if p_max is None:
            zmax = float(np.max(np.abs(z))) or 1.0
            p_max = 500.0 / zmax
        return cls("table", z, np.asarray(density, dtype=float), p_max=p_max)


def kernel_quadrature(kernel: MutationKernel, weight) -> float:
    """Quadrature of ``kernel density * weight(z)`` over the z-grid.

    ``weight`` may be a callable or an array aligned with ``kernel.z``.
    The delta kernel returns ``weight(0)`` identically.
    """
    vals = np.asarray(weight(kernel.z) if callable(weight) else weight, dtype=float)
    vals = np.broadcast_to(vals, kernel.z.shape)
    if not np.all(np.isfinite(vals)):
        bad = int(np.flatnonzero(~np.isfinite(vals))[0])
        raise ValueError(f"non-finite weight value at z = {kernel.z[bad]:g}")
    return float(np.sum(kernel.w * vals) / kernel.norm)


# ---------------------------------------------------------------------------
# Initial data


@dataclass
class InitialData:
    """Initial trait potential u0(y), age profile p0(x, y) and bounds.

    ``k0`` is the declared Lipschitz constant of u0; ``count`` an optional
    target for the initial number of individuals (sum of grid values).
    """

    u0: Expression
    p0: Expression
    k0: float
    count: float | None = None
    gamma_lo: float | None = None
    gamma_hi: float | None = None

    def __post_init__(self):
        self.u0 = _as_expression(self.u0)
        self.p0 = _as_expression(self.p0)
        if self.k0 <= 0:
            raise ValueError("k0 must be positive")

    def u0_on(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(np.asarray(self.u0(0.0, y), dtype=float), y.shape).copy()

    def p0_on(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        xc = np.asarray(x, dtype=float)[:, None]
        yc = np.asarray(y, dtype=float)[None, :]
        v = np.asarray(self.p0(xc, yc), dtype=float)
        return np.broadcast_to(v, (len(x), len(y))).copy()

    def check(self, y: np.ndarray) -> list[str]:
        """Grid-level checks on u0: unique zero maximum, Lipschitz bound."""
        problems = []
        u = self.u0_on(y)
        top = float(np.max(u))
        if abs(top) > 1e-12:
            problems.append(f"max of u0 on the grid is {top:g}, not 0")
        if np.sum(u >= top - 1e-12) > 1:
            problems.append("maximum of u0 is attained at more than one node")
        dy = np.abs(y[:, None] - y[None, :])
        du = np.abs(u[:, None] - u[None, :])
        mask = dy > 0
        worst = float(np.max(du[mask] / dy[mask])) if np.any(mask) else 0.0
        if worst > self.k0 * (1 + 1e-12):
            problems.append(
                f"u0 violates the declared Lipschitz bound: {worst:g} > k0 = {self.k0:g}"
            )
        return problems


# ---------------------------------------------------------------------------
# Assumption validation


@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    detail: str = ""
    first_violation: tuple[float, float] | None = None
    n_violations: int = 0


@dataclass
class ValidationReport:
    checks: list[AssumptionCheck] = field(default_factory=list)

    def __getitem__(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def summary(self) -> str:
        lines = []
        for c in self.checks:
            status = "ok" if c.passed else "VIOLATED"
            extra = f" - {c.detail}" if c.detail else ""
            lines.append(f"{c.name}: {status}{extra}")
        return "\n".join(lines)


def _first_bad(mask: np.ndarray, x: np.ndarray, y: np.ndarray):
    idx = np.argwhere(mask)
    if len(idx) == 0:
        return None, 0
    i, j = idx[0]
    return (float(x[i]), float(y[j])), int(len(idx))


def validate_assumptions(model: CoefficientModel, grid: Grid) -> ValidationReport:
    """Check the standing structural assumptions on the grid.

    Non-finite coefficient values raise; everything else is recorded in the
    report (the reference model itself violates the net-rate bounds for
    large traits, and has b = d = 0 on the y = 0 line).
    """
    A, b, d = model.on_grid(grid.x, grid.y)
    for name, arr in (("A", A), ("b", b), ("d", d)):
        if not np.all(np.isfinite(arr)):
            node, _ = _first_bad(~np.isfinite(arr), grid.x, grid.y)
            raise ValueError(f"coefficient {name} is non-finite at (x, y) = {node}")

    report = ValidationReport()

    bad = (A < model.a_lo * (1 - 1e-12)) | (A > model.a_hi * (1 + 1e-12))
    node, count = _first_bad(bad, grid.x, grid.y)
    report.checks.append(AssumptionCheck(
        "aging_speed_bounds", count == 0,
        f"a_lo={model.a_lo:g}, a_hi={model.a_hi:g}",
        node, count))

    bad = (b <= 0) | (d <= 0)
    node, count = _first_bad(bad, grid.x, grid.y)
    report.checks.append(AssumptionCheck(
        "rate_positivity", count == 0,
        "" if count == 0 else "b or d vanishes (or is negative) on the grid",
        node, count))

    net = b - d
    r_lo = model.r_lo if model.r_lo is not None else float(np.min(net))
    r_hi = model.r_hi if model.r_hi is not None else float(np.max(net))
    bad = (net < min(r_lo, 0.0) - 1e-12) | (net > r_hi + 1e-12) | (net <= 0)
    node, count = _first_bad(bad, grid.x, grid.y)
    detail = f"empirical bounds [{float(np.min(net)):g}, {float(np.max(net)):g}]"
    if count > 0:
        i, j = np.argwhere(bad)[0]
        detail += f"; b-d = {net[i, j]:g} at (x={grid.x[i]:g}, y={grid.y[j]:g})"
    report.checks.append(AssumptionCheck("net_rate_bounds", count == 0, detail, node, count))

    # growth of the death rate in age: proxy d(x_max, y) > max over the inner half
    half = d[: grid.nx // 2 + 1, :]
    grow_bad = d[-1, :] <= np.max(half, axis=0)
    if np.any(grow_bad):
        j = int(np.flatnonzero(grow_bad)[0])
        node = (float(grid.x[-1]), float(grid.y[j]))
        count = int(np.sum(grow_bad))
    else:
        node, count = None, 0
    report.checks.append(AssumptionCheck(
        "death_rate_growth", count == 0,
        "" if count == 0 else "d does not increase toward x_max",
        node, count))

    return report


def tail_decay_ratio(model: CoefficientModel, grid: Grid, lam: float, y: float) -> float:
    """Rough Q(x_max)/Q(0) indicator used for truncation quality warnings."""
    from .quadrature import cumulative_trapezoid

    A, _, d = model.column(grid.x, y)
    E = cumulative_trapezoid((d - lam) / A, grid.dx)
    return float(np.exp(-E[-1]) * A[0] / A[-1])


def warn_if_truncation_poor(ratio: float, y: float, threshold: float = 1e-6):
    if not (ratio < threshold):
        warnings.warn(
            f"age-domain truncation is coarse at y = {y:g}: "
            f"Q(x_max)/Q(0) = {ratio:.2e} >= {threshold:.0e}",
            RuntimeWarning, stacklevel=2)
