"""Shared fixtures: the heavy reference runs are computed once per session."""

import time
import warnings

import numpy as np
import pytest

from renewal_lab.eigen import EigenSolver, solve_field
from renewal_lab.model import CoefficientModel, Grid, InitialData
from renewal_lab.transport import run_simulation

REFERENCE_EXPRS = {
    "A": "1",
    "b": "10*y/(1+x^2)",
    "d": "y^3*(2+x/3)",
    "u0": "-(y-0.5)^2/2",
    "p0": "exp(-0.8*x)",
}


def make_reference_model():
    return CoefficientModel(REFERENCE_EXPRS["A"], REFERENCE_EXPRS["b"],
                            REFERENCE_EXPRS["d"])


def make_reference_grid(eps=5e-3, dt=5e-5):
    return Grid(x_max=1.0, nx=90, y_min=0.0, y_max=4.0, ny=40, eps=eps, dt=dt)


def make_reference_init():
    return InitialData(u0=REFERENCE_EXPRS["u0"], p0=REFERENCE_EXPRS["p0"],
                       k0=3.5, count=1000.0)


@pytest.fixture(scope="session")
def reference_model():
    return make_reference_model()


@pytest.fixture(scope="session")
def reference_grid():
    return make_reference_grid()


@pytest.fixture(scope="session")
def reference_init():
    return make_reference_init()


@pytest.fixture(scope="session")
def reference_field(reference_model, reference_grid):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return solve_field(reference_model, reference_grid)


@pytest.fixture(scope="session")
def reference_run(reference_model, reference_grid, reference_init):
    """The full concentration experiment; also reports its wall time."""
    t0 = time.time()
    traj = run_simulation(reference_model, reference_grid, reference_init,
                          T=1.5, snapshot_interval=0.05)
    traj.wall_time = time.time() - t0
    return traj


@pytest.fixture(scope="session")
def constant_solver():
    """Eigen solver for the constant model on the closed-form oracle grid."""
    model = CoefficientModel("1", "2", "1")
    grid = Grid(x_max=40.0, nx=2000, y_min=0.0, y_max=1.0, ny=4, eps=0.1)
    return EigenSolver(model, grid.x), model, grid


# ---------------------------------------------------------------------------
# Mild trade-off model: O(1) rates, so the upwind fitness bias stays far
# below the scale effects being measured in the shrinking-scale studies.

MILD_EXPRS = {
    "A": "1",
    "b": "1.2+y",
    "d": "(0.6+0.9*(y-0.8)^2)*(1+x)",
    "u0": "-(y-0.4)^2/2",
    "p0": "exp(-0.5*x)",
}


def make_mild_model():
    return CoefficientModel(MILD_EXPRS["A"], MILD_EXPRS["b"], MILD_EXPRS["d"])


def make_mild_init():
    return InitialData(u0=MILD_EXPRS["u0"], p0=MILD_EXPRS["p0"], k0=2.0,
                       count=100.0)


def make_mild_grid(eps, dt):
    return Grid(x_max=5.0, nx=500, y_min=0.0, y_max=2.0, ny=40, eps=eps, dt=dt)


MILD_SWEEP_CASES = [(2e-2, 2e-4), (1e-2, 1e-4), (5e-3, 5e-5)]
MILD_T = 0.3


@pytest.fixture(scope="session")
def mild_sweep():
    """Scale sweep of the mild model: dict eps -> (grid, trajectory)."""
    model = make_mild_model()
    init = make_mild_init()
    out = {}
    for eps, dt in MILD_SWEEP_CASES:
        grid = make_mild_grid(eps, dt)
        out[eps] = (grid, run_simulation(model, grid, init, T=MILD_T,
                                         snapshot_interval=MILD_T / 3))
    return out


@pytest.fixture(scope="session")
def mild_field(mild_sweep):
    grid, _ = mild_sweep[5e-3]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return solve_field(make_mild_model(), grid)
