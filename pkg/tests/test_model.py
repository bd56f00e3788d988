import numpy as np
import pytest

from renewal_lab.model import (CoefficientModel, Grid, GridError, InitialData,
                               MutationKernel, kernel_quadrature,
                               validate_assumptions)

from conftest import make_reference_grid, make_reference_model


def test_reference_model_validation(reference_model, reference_grid):
    report = validate_assumptions(reference_model, reference_grid)
    assert report["aging_speed_bounds"].passed
    # the reference example violates the net-rate bounds for large traits:
    # at (x=0, y=4) the net rate is 40 - 128 = -88
    net = report["net_rate_bounds"]
    assert not net.passed
    b = reference_model.b(0.0, 4.0)
    d = reference_model.d(0.0, 4.0)
    assert b - d == -88.0
    # b = d = 0 on the whole y = 0 line
    assert not report["rate_positivity"].passed
    assert report["rate_positivity"].first_violation[1] == 0.0


def test_constant_model_validation():
    model = CoefficientModel("1", "2", "1")
    grid = Grid(x_max=2.0, nx=20, y_min=0.0, y_max=1.0, ny=4)
    report = validate_assumptions(model, grid)
    assert report["aging_speed_bounds"].passed
    assert report["rate_positivity"].passed
    net = report["net_rate_bounds"]
    assert net.passed
    assert "[1, 1]" in net.detail  # empirical bounds collapse to b - d = 1
    # constant-in-age death rate: the growth proxy flags it at x_max
    growth = report["death_rate_growth"]
    assert not growth.passed
    assert growth.first_violation[0] == grid.x[-1]


def test_nonfinite_coefficients_are_fatal():
    model = CoefficientModel("1", "1/x", "1")  # infinite at x = 0
    grid = Grid(x_max=1.0, nx=10, y_min=0.0, y_max=1.0, ny=4)
    with pytest.raises(ValueError, match="non-finite"):
        validate_assumptions(model, grid)


def test_cfl_guard():
    with pytest.raises(GridError, match="CFL"):
        Grid(x_max=1.0, nx=90, y_min=0.0, y_max=4.0, ny=40,
             eps=5e-3, dt=1e-3, a_hi=1.0)
    # the reference parameters pass
    make_reference_grid()


@pytest.mark.parametrize("kernel", [
    MutationKernel.gaussian(1.0),
    MutationKernel.gaussian(0.25),
    MutationKernel.uniform(0.5),
    MutationKernel.delta(),
])
def test_kernel_normalization(kernel):
    total = kernel_quadrature(kernel, lambda z: np.ones_like(z))
    assert abs(total - 1.0) <= 1e-10


def test_gaussian_exponential_moment():
    # closed form exp(p^2 sigma^2 / 2), cross-checked against a brute-force
    # fine quadrature over a wider support
    kernel = MutationKernel.gaussian(1.0)
    val = kernel_quadrature(kernel, lambda z: np.exp(z))
    zf = np.linspace(-10, 10, 400_001)
    brute = np.trapezoid(np.exp(-0.5 * zf ** 2) / np.sqrt(2 * np.pi)
                         * np.exp(zf), zf)
    assert brute == pytest.approx(np.exp(0.5), rel=1e-12)
    assert val == pytest.approx(1.6487212707001282, abs=1e-6)


def test_delta_kernel_is_point_evaluation():
    kernel = MutationKernel.delta()
    assert kernel_quadrature(kernel, lambda z: z ** 2 + 3.0) == 3.0
    assert kernel_quadrature(kernel, lambda z: np.cos(z)) == 1.0


def test_kernel_rejects_nonfinite_weight():
    kernel = MutationKernel.gaussian(1.0)
    with pytest.raises(ValueError, match="non-finite"):
        kernel_quadrature(kernel, lambda z: 1.0 / (z - kernel.z[3]))


def test_initial_data_checks():
    grid = make_reference_grid()
    init = InitialData(u0="-(y-0.5)^2/2", p0="exp(-0.8*x)", k0=3.5)
    assert init.check(grid.y) == []
    # too-small declared Lipschitz constant is reported
    tight = InitialData(u0="-(y-0.5)^2/2", p0="1", k0=1.0)
    assert any("Lipschitz" in p for p in tight.check(grid.y))
    shifted = InitialData(u0="-(y-0.5)^2/2-1", p0="1", k0=3.5)
    assert any("not 0" in p for p in shifted.check(grid.y))


def test_model_requires_positive_speed_bounds():
    with pytest.raises(ValueError):
        CoefficientModel("1", "2", "1", a_lo=0.0)
