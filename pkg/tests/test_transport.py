import numpy as np
import pytest

from renewal_lab.model import CoefficientModel, Grid, InitialData, MutationKernel
from renewal_lab.quadrature import trapezoid_weights
from renewal_lab.transport import (InstabilityError, PopulationState,
                                   RenewalSimulator, SaturationBounds,
                                   init_population, run_simulation,
                                   step_no_mutation, step_with_mutation)

from conftest import (make_mild_grid, make_mild_init, make_mild_model,
                      make_reference_grid, make_reference_init,
                      make_reference_model)


def test_init_population_constants():
    model = CoefficientModel("1", "2", "1")
    grid = Grid(x_max=2.0, nx=20, y_min=0.0, y_max=3.0, ny=6)
    init = InitialData(u0="0*y", p0="1", k0=1.0)
    state = init_population(init, grid)
    np.testing.assert_array_equal(state.m, 1.0)
    assert state.rho == pytest.approx(2.0 * 3.0, rel=1e-12)
    state.validate(grid)


def test_init_population_underflow_and_count(reference_grid, reference_init):
    state = init_population(reference_init, reference_grid)
    assert np.sum(state.m) == pytest.approx(1000.0, rel=1e-12)
    # far traits sit below double precision and are stored as zero
    assert np.all(state.m[:, -1] == 0.0)
    assert state.rho == pytest.approx(1.0982642740391022, rel=1e-10)


def test_single_step_hand_oracle():
    # A = 1, b = 0, d = 1, flat unit density on a tiny grid: the update is
    # worked out by hand from the scheme definition
    model = CoefficientModel("1", "0*x+1e-300", "1")
    grid = Grid(x_max=0.5, nx=2, y_min=0.0, y_max=1.0, ny=2,
                eps=0.1, dt=0.02)
    state = PopulationState(m=np.ones((3, 3)), t=0.0, rho=0.5)
    r = grid.dt / grid.eps
    new = step_no_mutation(state, grid, model)
    upwind = (1.0 - 1.0) / grid.dx
    expected_interior = (1.0 - r * upwind - r * 0.5) / (1.0 + r * 1.0)
    np.testing.assert_allclose(new.m[1:, :], expected_interior, rtol=1e-14)
    np.testing.assert_allclose(new.m[0, :], 0.0, atol=1e-290)


def test_zero_density_is_fixed_point(reference_model, reference_grid):
    state = PopulationState(m=np.zeros((91, 41)), t=0.0, rho=0.0)
    new = step_no_mutation(state, reference_grid, reference_model)
    np.testing.assert_array_equal(new.m, 0.0)
    assert new.rho == 0.0


def test_positivity_along_reference_run(reference_run):
    for snap in reference_run.snapshots:
        assert np.all(snap.m >= 0.0)
        assert np.all(np.isfinite(snap.m))


def test_rho_cache_consistency(reference_run, reference_grid):
    for snap in reference_run.snapshots[::10]:
        snap.validate(reference_grid)


def test_saturation_with_declared_initial_bounds(reference_run,
                                                 reference_model,
                                                 reference_grid):
    # hypothesis-level constants: the declared initial head count bounds the
    # initial density from above; the net-rate extrema bound the growth
    bounds = SaturationBounds.for_run(reference_model, reference_grid,
                                      rho0=reference_run.rho_values[0],
                                      rho0_hi=1000.0)
    tol = 10 * reference_grid.dt
    assert bounds.check(reference_run.rho_values, tol)


def test_tight_bracket_overshoot_is_the_upwind_bias(reference_run):
    # documented discretization effect: with the realized initial density as
    # the bracket, the run's equilibrium exceeds max(b - d) by the O(dx)
    # upwind fitness inflation (about +0.8 at this resolution)
    tight = reference_run.bounds
    overshoot = float(np.max(reference_run.rho_values)) - tight.rho_M
    assert 0.5 < overshoot < 1.2


def test_delta_kernel_reduces_to_local_step(reference_model, reference_grid,
                                            reference_init):
    kernel = MutationKernel.delta()
    sim_local = RenewalSimulator(reference_model, reference_grid)
    sim_delta = RenewalSimulator(reference_model, reference_grid, kernel=kernel)
    state_a = init_population(reference_init, reference_grid)
    state_b = PopulationState(m=state_a.m.copy(), t=0.0, rho=state_a.rho)
    for _ in range(50):
        state_a = sim_local.step(state_a)
        state_b = sim_delta.step(state_b)
        np.testing.assert_array_equal(state_a.m, state_b.m)


def test_symmetric_kernel_preserves_symmetry():
    # even coefficients and data on a symmetric trait grid stay even
    model = CoefficientModel("1", "2+y^2/(1+x^2)", "1+y^2+x")
    grid = Grid(x_max=2.0, nx=40, y_min=-1.0, y_max=1.0, ny=20,
                eps=0.05, dt=1e-3)
    init = InitialData(u0="-y^2/2", p0="exp(-0.5*x)", k0=1.0)
    kernel = MutationKernel.gaussian(0.3, n_nodes=121)
    sim = RenewalSimulator(model, grid, kernel=kernel)
    state = init_population(init, grid)
    for _ in range(40):
        state = sim.step(state)
    np.testing.assert_allclose(state.m, state.m[:, ::-1], rtol=1e-12,
                               atol=1e-300)


def test_mutation_mass_stays_bounded():
    model = make_mild_model()
    grid = Grid(x_max=5.0, nx=250, y_min=0.0, y_max=2.0, ny=40,
                eps=0.02, dt=2e-4)
    init = make_mild_init()
    kernel = MutationKernel.gaussian(0.5, n_nodes=61)
    traj = run_simulation(model, grid, init, T=0.2, kernel=kernel,
                          snapshot_interval=0.1)
    bounds = SaturationBounds.for_run(model, grid, traj.rho_values[0],
                                      rho0_hi=100.0)
    assert np.all(traj.rho_values <= bounds.rho_M + 10 * grid.dt)


def test_instability_reported_with_step_index():
    # grossly violated CFL through a huge aging speed bound mismatch
    model = CoefficientModel("1+9*x", "2", "1", a_lo=1.0, a_hi=10.0)
    grid = Grid(x_max=1.0, nx=50, y_min=0.0, y_max=1.0, ny=4,
                eps=0.01, dt=1.9e-4, a_hi=10.0)
    init = InitialData(u0="0*y", p0="1", k0=1.0)
    sim = RenewalSimulator(model, grid)
    state = init_population(init, grid)
    with pytest.raises(InstabilityError) as err:
        sim.run(state, T=0.05)
    assert err.value.step >= 1
    assert err.value.trajectory is not None


def test_run_T_zero_returns_initial_only(reference_model, reference_grid,
                                         reference_init):
    traj = run_simulation(reference_model, reference_grid, reference_init, T=0.0)
    assert len(traj.snapshots) == 1
    assert traj.times == [0.0]


def test_first_order_consistency_richardson():
    # halving (dt, dx) together: the T = 0.1 solution changes by >= 1.8x
    # less on the second halving (smooth run, mild scale)
    model = make_mild_model()
    init = make_mild_init()
    sols = {}
    for k, nx in enumerate((125, 250, 500)):
        dt = 4e-4 / (2 ** k)
        grid = Grid(x_max=5.0, nx=nx, y_min=0.0, y_max=2.0, ny=40,
                    eps=0.05, dt=dt)
        traj = run_simulation(model, grid, init, T=0.1)
        sols[nx] = traj.final.m
    e1 = np.max(np.abs(sols[125] - sols[250][::2, :]))
    e2 = np.max(np.abs(sols[250] - sols[500][::2, :]))
    assert e1 / e2 >= 1.8


def test_final_rho_matches_fitness_minimum_on_fine_grid():
    # the run's equilibrium mass approaches the negative fitness minimum
    # once the age grid resolves the survival exponent (5% at nx = 360)
    import warnings

    from renewal_lab.eigen import solve_field

    model = make_reference_model()
    grid = Grid(x_max=1.0, nx=360, y_min=0.0, y_max=4.0, ny=40,
                eps=1e-2, dt=2.5e-5)
    init = make_reference_init()
    traj = run_simulation(model, grid, init, T=1.5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        field = solve_field(model, grid)
    target = -float(np.min(field.lam[field.solvable]))
    assert traj.rho_values[-1] == pytest.approx(target, rel=0.05)


def test_paper_literal_boundary_flag_changes_scale(reference_model,
                                                   reference_grid,
                                                   reference_init):
    # the bare interior sum is ~1/dx larger than the consistent integral
    state = init_population(reference_init, reference_grid)
    consistent = step_no_mutation(state, reference_grid, reference_model)
    literal = step_no_mutation(state, reference_grid, reference_model,
                               paper_literal_boundary=True)
    ratio = literal.m[0, 20] / consistent.m[0, 20]
    assert 60 < ratio < 120  # about nx = 90
