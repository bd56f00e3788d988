import numpy as np
import pytest

from renewal_lab.eigen import (BracketError, EigenSolver, Hamiltonian,
                               exp_moment, solve_field)
from renewal_lab.model import CoefficientModel, Grid, MutationKernel

from conftest import make_reference_model


def test_fitness_integrand_closed_forms(constant_solver):
    solver, model, grid = constant_solver
    f = solver.fitness_integrand(0.5, 0.0)
    assert f[0] == pytest.approx(2.0, rel=1e-14)           # b/A at age 0
    i1 = int(round(1.0 / grid.dx))
    assert f[i1] == pytest.approx(0.7357588823428847, rel=1e-12)  # 2 e^{-1}


def test_fitness_integrand_reference_model_age0():
    model = make_reference_model()
    solver = EigenSolver(model, np.linspace(0, 1, 91))
    for lam in (-3.0, 0.0, 2.0):
        assert solver.fitness_integrand(1.0, lam)[0] == pytest.approx(10.0, rel=1e-14)


def test_fitness_integral_closed_forms(constant_solver):
    solver, _, _ = constant_solver
    # infinite-domain closed form 2/(1-lam); the 40-unit tail is < 1e-17
    assert solver.fitness_integral(0.5, 0.0) == pytest.approx(2.0, abs=1e-8)
    assert solver.fitness_integral(0.5, -1.0) == pytest.approx(1.0, abs=1e-8)


def test_fitness_integral_increasing_in_lambda(constant_solver):
    solver, _, _ = constant_solver
    vals = [solver.fitness_integral(0.5, lam) for lam in (-2.0, -1.0, 0.0, 0.5)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_eigenvalue_oracle(constant_solver):
    solver, _, _ = constant_solver
    assert solver.solve_eigenvalue(0.5, 1.0) == pytest.approx(-1.0, abs=1e-10)
    assert solver.solve_eigenvalue(0.5, 2.0) == pytest.approx(-3.0, abs=1e-10)


def test_eigenvalue_net_rate_bracket(constant_solver):
    # with net rate identically 1, the fitness satisfies -lam = 1 exactly
    solver, _, _ = constant_solver
    lam = solver.solve_eigenvalue(0.3, 1.0)
    assert 1.0 - 1e-10 <= -lam <= 1.0 + 1e-10


def test_eigenvalue_monotone_in_intensity(reference_field):
    solver = reference_field.solver
    for y in (0.5, 1.0, 2.0):
        lams = [solver.solve_eigenvalue(y, eta) for eta in (0.5, 1.0, 2.0)]
        assert lams[0] > lams[1] > lams[2]


def test_implicit_identity_everywhere(reference_field):
    solver = reference_field.solver
    for j, y in enumerate(reference_field.y):
        if not reference_field.solvable[j]:
            continue
        for eta in (0.5, 1.0, 2.0):
            lam = solver.solve_eigenvalue(float(y), eta)
            assert abs(solver.fitness_integral(float(y), lam) - 1.0 / eta) <= 1e-12


def test_eigenfunction_closed_form(constant_solver):
    solver, _, grid = constant_solver
    lam, Q = solver.eigenfunction(0.5, 1.0)
    np.testing.assert_allclose(Q, np.exp(-2.0 * grid.x), atol=1e-7)
    i1 = int(round(1.0 / grid.dx))
    assert Q[i1] == pytest.approx(0.1353352832366127, abs=1e-10)
    # birth-weighted normalization
    assert solver.fitness_integral(0.5, lam) == pytest.approx(1.0, abs=1e-8)


def test_dual_closed_form_and_normalization(constant_solver):
    solver, _, _ = constant_solver
    lam, Q, Phi, w = solver.dual_eigenfunction(0.5, 1.0)
    np.testing.assert_allclose(Phi, 2.0, atol=1e-7)
    assert abs(np.sum(w) - 1.0) <= 1e-8  # integral of Q*Phi


def test_dual_equation_residual(constant_solver):
    # A Phi' + (lam - d) Phi + eta b Phi(0) = 0 on interior nodes
    solver, _, grid = constant_solver
    lam, Q, Phi, _ = solver.dual_eigenfunction(0.5, 1.0)
    dPhi = (Phi[2:] - Phi[:-2]) / (2 * grid.dx)
    res = dPhi + (lam - 1.0) * Phi[1:-1] + 2.0 * Phi[0]
    assert np.max(np.abs(res)) <= 1e-6


def test_dual_product_decays_reference_model():
    model = make_reference_model()
    grid = Grid(x_max=5.0, nx=450, y_min=0.0, y_max=4.0, ny=4)
    solver = EigenSolver(model, grid.x)
    lam, Q, Phi, _ = solver.dual_eigenfunction(0.5, 1.0)
    assert Q[-1] * Phi[-1] < 1e-5 * Q[0] * Phi[0]
    assert Q[-1] / Q[0] < 1e-6  # truncation quality at this x_max


def test_unsolvable_trait_raises_bracket_error():
    model = make_reference_model()
    solver = EigenSolver(model, np.linspace(0, 1, 91))
    with pytest.raises(BracketError):
        solver.solve_eigenvalue(0.0, 1.0)  # no births at trait 0


def test_gradient_zero_for_trait_independent_model(constant_solver):
    solver, _, _ = constant_solver
    grad, d_eta = solver.eigenvalue_gradient(0.5, 1.0, dy=1e-3)
    assert abs(grad) <= 1e-9
    assert d_eta == pytest.approx(-2.0, rel=1e-6)  # -1/(eta^2 dF/dlam), dF = 1/2


def test_gradient_matches_finite_difference_oracle():
    model = make_reference_model()
    solver = EigenSolver(model, np.linspace(0, 1, 91))
    dy = 1e-3
    for y in (0.6, 1.0, 1.4):
        grad, _ = solver.eigenvalue_gradient(y, 1.0, dy=dy)
        fd = (solver.solve_eigenvalue(y + dy, 1.0)
              - solver.solve_eigenvalue(y - dy, 1.0)) / (2 * dy)
        assert grad == pytest.approx(fd, abs=1e-5)


def test_d_eta_lambda_negative_everywhere(reference_field):
    ok = reference_field.solvable
    assert np.all(reference_field.d_eta_lam[ok] < 0)


def test_field_marks_dead_trait(reference_field):
    assert not reference_field.solvable[0]
    assert np.isinf(reference_field.lam[0])
    assert np.all(reference_field.solvable[1:])
    assert reference_field.argmin_lambda == pytest.approx(1.3)


def test_upwind_residual_shrinks_with_refinement():
    # the discrete transport operator applied to Q equals lam Q to O(dx)
    model = CoefficientModel("1", "2", "1")
    sups = []
    for nx in (500, 1000, 2000):
        grid = Grid(x_max=40.0, nx=nx, y_min=0.0, y_max=1.0, ny=4)
        solver = EigenSolver(model, grid.x)
        lam, Q = solver.eigenfunction(0.5, 1.0)
        res = (Q[1:] - Q[:-1]) / grid.dx + (1.0 - lam) * Q[1:]
        sup = np.max(np.abs(res))
        assert sup <= 5 * grid.dx * np.max(np.abs(Q))
        sups.append(sup)
    assert sups[0] / sups[1] >= 1.8
    assert sups[1] / sups[2] >= 1.8


def test_exp_moment_basics():
    kernel = MutationKernel.gaussian(1.0)
    assert exp_moment(kernel, 0.0) == 1.0
    assert exp_moment(kernel, 1.0) == pytest.approx(1.6487212707001282, abs=1e-6)
    # convexity of the exponential moment
    for p, q in ((-1.5, 0.5), (0.0, 2.0), (-2.0, -0.5)):
        mid = exp_moment(kernel, (p + q) / 2)
        assert mid <= (exp_moment(kernel, p) + exp_moment(kernel, q)) / 2 + 1e-12
    with pytest.raises(ValueError, match="p_max"):
        exp_moment(kernel, 2.5)


def test_hamiltonian_at_zero_momentum(constant_solver):
    solver, _, _ = constant_solver
    kernel = MutationKernel.gaussian(1.0)
    ham = Hamiltonian(solver, kernel)
    lam1 = solver.solve_eigenvalue(0.5, 1.0)
    assert ham.value(0.5, 0.0) == -lam1
    assert ham.value(0.5, 0.0) == pytest.approx(1.0, abs=1e-9)


def test_hamiltonian_convexity_probe():
    model = make_reference_model()
    solver = EigenSolver(model, np.linspace(0, 1, 91))
    kernel = MutationKernel.gaussian(1.0, p_max=2.5)
    ham = Hamiltonian(solver, kernel)
    rng = np.random.default_rng(3)
    for _ in range(25):
        y = rng.uniform(0.3, 1.5)
        p = rng.uniform(-1.8, 1.8)
        assert ham.hessian_probe(y, p) >= -1e-6


def test_solve_grid_matches_scalar(reference_field):
    grid_y = reference_field.y[1:]
    etas = np.linspace(0.8, 2.5, len(grid_y))
    solver = reference_field.solver
    lam_vec = solver.solve_grid(grid_y, etas)
    for y, eta, lam in zip(grid_y[::7], etas[::7], lam_vec[::7]):
        assert lam == pytest.approx(solver.solve_eigenvalue(float(y), float(eta)),
                                    abs=1e-11)
