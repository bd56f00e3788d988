"""Per-trait eigenvalue problem and the effective Hamiltonian.

For a fixed trait y and renewal intensity eta the principal eigenvalue lam
solves the implicit equation F(y, lam) = 1/eta, where F integrates the
birth rate against the survival exponential.  The eigenfunction Q, its dual
Phi and the fitness gradient all come from explicit formulas once lam is
known.  The effective Hamiltonian couples this to a mutation kernel through
the exponential moment eta(p).

Integrals here use the exponential product rule from :mod:`.quadrature`;
the plain trapezoid rule would cap the eigenvalue accuracy at O(dx^2),
orders of magnitude above what the closed-form oracles require.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import CoefficientModel, Grid, MutationKernel, kernel_quadrature
from .quadrature import (
    cumulative_trapezoid,
    exp_product_integral,
    exp_product_node_weights,
    exp_product_tail,
)

__all__ = [
    "EigenError",
    "BracketError",
    "EigenOverflowError",
    "AccuracyError",
    "EigenSolver",
    "EigenColumn",
    "EigenField",
    "solve_field",
    "exp_moment",
    "Hamiltonian",
    "worker_count",
]

EXP_GUARD = 700.0  # largest admissible exponent before erroring out


class EigenError(RuntimeError):
    pass


class BracketError(EigenError):
    """The implicit equation has no root in any expandable bracket."""


class EigenOverflowError(EigenError):
    """Survival exponent out of double range: lambda too large for grid."""


class AccuracyError(EigenError):
    """Eigen quantities could not be produced at the requested accuracy."""


def worker_count() -> int:
    """Worker cap from the RENEWAL_THREADS environment variable (default 1)."""
    try:
        return max(1, int(os.environ.get("RENEWAL_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class _Column:
    """Cached per-trait coefficient data on the age grid."""

    y: float
    A: np.ndarray
    b: np.ndarray
    d: np.ndarray
    E_d: np.ndarray  # cumulative trapezoid of d / A
    G: np.ndarray    # cumulative trapezoid of 1 / A
    bA: np.ndarray   # b / A


class EigenSolver:
    """Solves the per-trait eigenproblem on a fixed age grid.

    Newton iterations on F(y, lam) = 1/eta with a guaranteed bisection
    fallback once a sign change is bracketed.  Solved eigenvalues are kept
    per trait as warm starts, so repeated solves at drifting eta (the
    Hamilton-Jacobi stepper) converge in one or two iterations.
    """

    def __init__(self, model: CoefficientModel, x: np.ndarray, tol: float = 1e-13):
        self.model = model
        self.x = np.asarray(x, dtype=float)
        if self.x.ndim != 1 or len(self.x) < 3:
            raise ValueError("age grid must be 1-D with at least 3 nodes")
        self.h = float(self.x[1] - self.x[0])
        self.tol = tol
        self._columns: dict[float, _Column] = {}
        self._warm: dict[float, float] = {}
        self._memo: dict[tuple[float, float], float] = {}
        self._stacks: dict[bytes, tuple] = {}

    # -- coefficient plumbing ------------------------------------------------

    def column(self, y: float) -> _Column:
        y = float(y)
        col = self._columns.get(y)
        if col is None:
            A, b, d = self.model.column(self.x, y)
            if np.any(A <= 0):
                raise EigenError(f"aging speed is not positive at y = {y:g}")
            col = _Column(
                y=y, A=A, b=b, d=d,
                E_d=cumulative_trapezoid(d / A, self.h),
                G=cumulative_trapezoid(1.0 / A, self.h),
                bA=b / A,
            )
            self._columns[y] = col
        return col

    def _exponent(self, col: _Column, lam: float) -> np.ndarray:
        """Nodes of E(x) = int_0^x (d - lam)/A, the survival exponent."""
        return col.E_d - lam * col.G

    def _guard(self, col: _Column, E: np.ndarray):
        live = col.bA != 0.0
        if np.any(live) and float(np.max(-E[live])) > EXP_GUARD:
            raise EigenOverflowError("lambda too large for grid")

    # -- the implicit function ------------------------------------------------

    def fitness_integrand(self, y: float, lam: float) -> np.ndarray:
        """f(x, y, lam) = (b/A) exp(-int_0^x (d-lam)/A) on the age nodes."""
        col = self.column(y)
        E = self._exponent(col, lam)
        self._guard(col, E)
        with np.errstate(over="ignore"):
            return col.bA * np.exp(-np.minimum(E, EXP_GUARD + 60.0))

    def fitness_integral(self, y: float, lam: float, clip: bool = False) -> float:
        """F(y, lam); with ``clip`` overflow returns +inf instead of raising."""
        col = self.column(y)
        E = self._exponent(col, lam)
        try:
            self._guard(col, E)
        except EigenOverflowError:
            if clip:
                return np.inf
            raise
        return exp_product_integral(col.bA, E, self.h)

    def fitness_derivative(self, y: float, lam: float) -> float:
        """dF/dlam = integral of g * f with g(x) = int_0^x 1/A."""
        col = self.column(y)
        E = self._exponent(col, lam)
        self._guard(col, E)
        return exp_product_integral(col.bA * col.G, E, self.h)

    # -- eigenvalue -----------------------------------------------------------

    def solve_eigenvalue(self, y: float, eta: float = 1.0) -> float:
        if eta <= 0:
            raise ValueError("eta must be positive")
        key = (float(y), float(eta))
        hit = self._memo.get(key)
        if hit is not None:
            return hit

        target = 1.0 / eta
        scale = max(1.0, abs(target))  # convergence is relative for huge targets
        F = lambda lam: self.fitness_integral(y, lam, clip=True)

        lam0 = self._warm.get(float(y), 0.0)
        lo = hi = lam0
        f0 = F(lam0)
        step = 1.0
        if f0 < target:
            for _ in range(80):
                hi = hi + step
                step *= 2.0
                if F(hi) >= target:
                    break
            else:
                raise BracketError(
                    f"no root of the fitness equation at y = {y:g}, eta = {eta:g} "
                    "(birth rate too weak on this grid?)")
        else:
            for _ in range(80):
                lo = lo - step
                step *= 2.0
                if F(lo) < target:
                    break
            else:  # pragma: no cover - F -> 0 as lam -> -inf
                raise BracketError(f"no lower bracket at y = {y:g}, eta = {eta:g}")

        lam = 0.5 * (lo + hi)
        fval = F(lam)
        for _ in range(200):
            if abs(fval - target) <= self.tol * scale:
                break
            if fval > target:
                hi = lam
            else:
                lo = lam
            df = self.fitness_derivative(y, lam) if np.isfinite(fval) else 0.0
            if df > 0 and np.isfinite(fval):
                cand = lam - (fval - target) / df
            else:
                cand = 0.5 * (lo + hi)
            if not (lo < cand < hi):
                cand = 0.5 * (lo + hi)
            if hi - lo < 4e-16 * max(1.0, abs(lam)):
                lam = 0.5 * (lo + hi)
                fval = F(lam)
                break
            lam = cand
            fval = F(lam)
        if abs(fval - target) > max(self.tol, 1e-12) * scale:
            raise AccuracyError(
                f"eigenvalue iteration stalled at y = {y:g}, eta = {eta:g}: "
                f"|F - 1/eta| = {abs(fval - target):.2e}")

        self._warm[float(y)] = lam
        self._memo[key] = lam
        return lam

    def _stacked(self, ys: np.ndarray):
        """Row-stacked coefficient bundles for a whole trait vector."""
        key = np.asarray(ys, dtype=float).tobytes()
        hit = self._stacks.get(key)
        if hit is None:
            cols = [self.column(float(y)) for y in ys]
            hit = (np.stack([c.bA for c in cols]),
                   np.stack([c.E_d for c in cols]),
                   np.stack([c.G for c in cols]))
            self._stacks[key] = hit
        return hit

    def solve_grid(self, ys: np.ndarray, etas: np.ndarray,
                   lam0: np.ndarray | None = None) -> np.ndarray:
        """Eigenvalues for a whole trait vector at per-trait intensities.

        Plain Newton, vectorized over traits: the fitness integral is
        increasing and convex in lam (its lam-derivatives integrate g*f and
        g^2*f with positive integrands), so Newton converges globally; one
        step lands on the upper side of the root and the iterates then
        decrease monotonically.  ``lam0`` warm-starts the iteration.
        """
        ys = np.asarray(ys, dtype=float)
        etas = np.asarray(etas, dtype=float)
        bA, E_d, G = self._stacked(ys)
        target = 1.0 / etas
        scale = np.maximum(1.0, np.abs(target))
        lam = np.zeros(len(ys)) if lam0 is None else np.asarray(lam0, float).copy()
        live_bA = bA != 0.0
        for it in range(120):
            E = E_d - lam[:, None] * G
            if np.any(np.where(live_bA, -E, -np.inf) > EXP_GUARD):
                raise EigenOverflowError("lambda too large for grid")
            F = exp_product_integral(bA, E, self.h)
            err = F - target
            if np.all(np.abs(err) <= self.tol * scale):
                break
            dF = exp_product_integral(bA * G, E, self.h)
            if np.any(dF <= 0):
                raise EigenError("non-positive fitness slope in grid solve")
            lam = lam - err / dF
        else:
            raise AccuracyError("grid eigenvalue iteration did not converge")
        for y, ev, lv in zip(ys, etas, lam):
            self._warm[float(y)] = float(lv)
            self._memo[(float(y), float(ev))] = float(lv)
        return lam

    # -- eigenfunctions -------------------------------------------------------

    def eigenfunction(self, y: float, eta: float = 1.0):
        """(lam, Q) with Q normalized so the birth-weighted integral is 1."""
        lam = self.solve_eigenvalue(y, eta)
        col = self.column(y)
        E = self._exponent(col, lam)
        Q = eta / col.A * np.exp(-E)
        residual = abs(eta * exp_product_integral(col.bA, E, self.h) - 1.0)
        if residual > 1e-6:
            raise AccuracyError(
                f"eigenfunction normalization residual {residual:.2e} at y = {y:g} "
                "(grid too coarse or x_max too small)")
        return lam, Q

    def dual_eigenfunction(self, y: float, eta: float = 1.0):
        """(lam, Q, Phi, w) with sum(w * g) = integral of g Q Phi dx.

        Phi follows the explicit dual formula.  Its bracket, one minus the
        cumulative birth integral, is accumulated from the right (plus a
        frozen-coefficient exponential tail beyond x_max) so the dual keeps
        full accuracy where Q Phi has left no mass.
        """
        lam = self.solve_eigenvalue(y, eta)
        col = self.column(y)
        E = self._exponent(col, lam)
        if float(np.max(E)) > EXP_GUARD:
            raise AccuracyError(
                f"dual eigenfunction needs exp(+E) with E up to {float(np.max(E)):.3g} "
                f"at y = {y:g}; reduce x_max")
        Q = eta / col.A * np.exp(-E)

        tail = eta * exp_product_tail(col.bA, E, self.h)
        slope = (col.d[-1] - lam) / col.A[-1]
        if slope > 0:
            tail = tail + eta * col.bA[-1] * np.exp(-E[-1]) / slope
        else:
            warnings.warn(
                f"no decaying tail closure at y = {y:g} (d - lam <= 0 at x_max)",
                RuntimeWarning, stacklevel=2)
        phi_unit = np.exp(E) * tail  # dual with Phi(0) = eta * b/A tail weight 1

        w_raw = exp_product_node_weights(eta * phi_unit / col.A, E, self.h)
        total = float(np.sum(w_raw))
        if total <= 0:
            raise AccuracyError(f"degenerate dual normalization at y = {y:g}")
        phi0 = 1.0 / total
        return lam, Q, phi_unit * phi0, w_raw * phi0

    # -- derivatives ----------------------------------------------------------

    def eigenvalue_gradient(self, y: float, eta: float = 1.0,
                            dy: float = 1e-3, side: int = 0):
        """(dlam/dy, dlam/deta) at (y, eta).

        The trait derivative uses -F_y / F_lam with F_y by finite
        differences of the fitness integral at the solved eigenvalue;
        ``side`` selects one-sided stencils (+1 forward, -1 backward) for
        boundary nodes.
        """
        lam = self.solve_eigenvalue(y, eta)
        dF = self.fitness_derivative(y, lam)
        if side == 0:
            fy = (self.fitness_integral(y + dy, lam)
                  - self.fitness_integral(y - dy, lam)) / (2.0 * dy)
        elif side > 0:
            fy = (self.fitness_integral(y + dy, lam)
                  - self.fitness_integral(y, lam)) / dy
        else:
            fy = (self.fitness_integral(y, lam)
                  - self.fitness_integral(y - dy, lam)) / dy
        grad = -fy / dF
        d_eta = -1.0 / (eta * eta * dF)
        return grad, d_eta


# ---------------------------------------------------------------------------
# Field assembly over a trait grid


@dataclass
class EigenColumn:
    y: float
    lam: float
    Q: np.ndarray
    Phi: np.ndarray
    qphi_weights: np.ndarray


@dataclass
class EigenField:
    """Eigen quantities assembled over the trait grid at fixed eta."""

    x: np.ndarray
    y: np.ndarray
    eta: float
    lam: np.ndarray
    grad_lam: np.ndarray
    d_eta_lam: np.ndarray
    Q: np.ndarray            # (ny, nx); rows of unsolvable traits are 0
    Phi: np.ndarray
    qphi_weights: np.ndarray
    solvable: np.ndarray     # boolean per trait node
    solver: EigenSolver = field(repr=False, default=None)

    @property
    def argmin_lambda(self) -> float:
        vals = np.where(self.solvable, self.lam, np.inf)
        return float(self.y[int(np.argmin(vals))])

    def column(self, j: int) -> EigenColumn:
        return EigenColumn(float(self.y[j]), float(self.lam[j]),
                           self.Q[j], self.Phi[j], self.qphi_weights[j])


def solve_field(model: CoefficientModel, grid: Grid, eta: float = 1.0,
                threads: int | None = None) -> EigenField:
    """Solve the eigenproblem at every trait node.

    Trait nodes where the implicit equation has no root (vanishing birth
    rate) get lam = +inf and are flagged unsolvable rather than aborting
    the whole field.  Boundary trait nodes use one-sided gradient stencils.
    """
    solver = EigenSolver(model, grid.x)
    ny = len(grid.y)
    nx = len(grid.x)
    lam = np.full(ny, np.inf)
    grad = np.full(ny, np.nan)
    deta = np.full(ny, np.nan)
    Q = np.zeros((ny, nx))
    Phi = np.zeros((ny, nx))
    W = np.zeros((ny, nx))
    ok = np.zeros(ny, dtype=bool)

    def solve_one(j: int):
        yj = float(grid.y[j])
        try:
            lam_j, Q_j, Phi_j, w_j = solver.dual_eigenfunction(yj, eta)
        except BracketError:
            return j, None
        side = -1 if j == ny - 1 else (1 if j == 0 else 0)
        g, de = solver.eigenvalue_gradient(yj, eta, dy=grid.dy, side=side)
        return j, (lam_j, Q_j, Phi_j, w_j, g, de)

    n_workers = worker_count() if threads is None else max(1, threads)
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(solve_one, range(ny)))
    else:
        results = [solve_one(j) for j in range(ny)]

    skipped = []
    for j, payload in results:
        if payload is None:
            skipped.append(j)
            continue
        lam[j], Q[j], Phi[j], W[j], grad[j], deta[j] = payload
        ok[j] = True
    if skipped:
        ys = ", ".join(f"{grid.y[j]:g}" for j in skipped)
        warnings.warn(
            f"eigenproblem unsolvable at trait nodes y = {ys} "
            "(marked lam = +inf)", RuntimeWarning, stacklevel=2)
    if ny >= 2:
        warnings.warn(
            "trait-gradient at domain boundary nodes uses one-sided differences",
            RuntimeWarning, stacklevel=2)
    return EigenField(grid.x, grid.y, eta, lam, grad, deta, Q, Phi, W, ok, solver)


# ---------------------------------------------------------------------------
# Effective Hamiltonian


def exp_moment(kernel: MutationKernel, p: float) -> float:
    """eta(p): exponential moment of the kernel, exp(p.z) averaged."""
    if abs(p) > kernel.p_max:
        raise ValueError(f"momentum |p| = {abs(p):g} exceeds declared p_max = "
                         f"{kernel.p_max:g}")
    zmax = float(np.max(np.abs(kernel.z))) if len(kernel.z) else 0.0
    if abs(p) * zmax > EXP_GUARD:
        raise OverflowError("exponential moment out of double range")
    return kernel_quadrature(kernel, lambda z: np.exp(p * z))


@dataclass
class Hamiltonian:
    """Effective fitness H(y, p) = -lam(y, eta(p)) for a mutation kernel."""

    solver: EigenSolver
    kernel: MutationKernel
    p_max: float | None = None

    def __post_init__(self):
        if self.p_max is None:
            self.p_max = self.kernel.p_max

    def eta(self, p: float) -> float:
        if abs(p) > self.p_max:
            raise ValueError(f"momentum {p:g} outside admissible range")
        return exp_moment(self.kernel, p)

    def value(self, y: float, p: float) -> float:
        return -self.solver.solve_eigenvalue(y, self.eta(p))

    def hessian_probe(self, y: float, p: float, h: float = 1e-3) -> float:
        """Second central difference of p -> H(y, p), divided by h^2."""
        hp = self.value(y, p + h)
        h0 = self.value(y, p)
        hm = self.value(y, p - h)
        return (hp - 2.0 * h0 + hm) / (h * h)
