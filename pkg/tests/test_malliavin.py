import math

import numpy as np
import pytest

from wong_zakai.core.errors import ConfigurationError, CovarianceError, GridError
from wong_zakai.core.fbm import increment_gram, sample_fbm, sample_independent_direction
from wong_zakai.core.malliavin import (
    MalliavinCovariance,
    compositions,
    directional_derivative,
    directional_derivatives,
    malliavin_covariance,
    nondegeneracy_report,
)
from wong_zakai.core.models import PathBatch, SamplePath, TimeGrid
from wong_zakai.core.ode import SolverOptions, solve_driven
from wong_zakai.core.vector_fields import build_model

FIXED = SolverOptions(substeps=64, adaptive=False)


def _shifted_terminal(
    model, driver: PathBatch, direction: PathBatch, eps: float, options: SolverOptions
) -> np.ndarray:
    shifted = PathBatch(grid=driver.grid, values=driver.values + eps * direction.values)
    return solve_driven(model, shifted, with_jacobian=False, options=options).y


def _difference_quotient(
    model, driver, direction, order: int, eps: float, options: SolverOptions = FIXED
) -> np.ndarray:
    def y(s: float) -> np.ndarray:
        return _shifted_terminal(model, driver, direction, s * eps, options)

    if order == 1:
        return (y(1) - y(-1)) / (2.0 * eps)
    if order == 2:
        return (y(1) - 2.0 * y(0) + y(-1)) / eps**2
    return (y(2) - 2.0 * y(1) + 2.0 * y(-1) - y(-2)) / (2.0 * eps**3)


def test_compositions_enumerate_ordered_splits() -> None:
    assert compositions(3, 2) == ((1, 2), (2, 1))
    assert compositions(3, 3) == ((1, 1, 1),)
    for total in range(1, 6):
        for parts in range(1, total + 1):
            assert len(compositions(total, parts)) == math.comb(total - 1, parts - 1)


def test_identity_model_derivatives() -> None:
    model = build_model("identity", {"dimension": 2})
    grid = TimeGrid.uniform(16)
    solved = solve_driven(model, sample_fbm(0.4, grid, 3, seed=1, dimension=2))
    direction = sample_independent_direction(0.4, grid, 3, seed=1, dimension=2)
    first, second = directional_derivatives(model, solved, direction, 2)
    assert np.allclose(first.values, direction.values, atol=1e-13)
    assert np.max(np.abs(second.values)) < 1e-13
    assert first.order == 1 and second.order == 2


def test_ou_first_derivative_along_linear_direction() -> None:
    model = build_model("ou")
    grid = TimeGrid.uniform(32)
    solved = solve_driven(model, sample_fbm(0.5, grid, 2, seed=4))
    direction = SamplePath(grid=grid, values=grid.times)
    xi = directional_derivative(model, solved, direction, 1)
    assert np.allclose(xi.at_node(1.0)[:, 0], 1.0 - math.exp(-1.0), atol=1e-9)
    assert np.allclose(xi.at_node(0.5)[:, 0], 1.0 - math.exp(-0.5), atol=1e-9)


@pytest.mark.parametrize("order, eps", [(1, 1e-3), (2, 1e-2), (3, 1e-2)])
def test_derivatives_match_finite_differences(order: int, eps: float) -> None:
    # higher differences lose digits to roundoff below eps = 1e-2
    options = SolverOptions(substeps=256, adaptive=False)
    model = build_model("bounded-trig")
    grid = TimeGrid.uniform(16)
    driver = sample_fbm(0.4, grid, 10, seed=30 + order, dimension=2)
    direction = sample_independent_direction(0.4, grid, 10, seed=30 + order, dimension=2)
    solved = solve_driven(model, driver, options=options)
    exact = directional_derivatives(model, solved, direction, order, options)[-1].values

    coarse = _difference_quotient(model, driver, direction, order, eps, options)
    fine = _difference_quotient(model, driver, direction, order, eps / 2.0, options)
    coarse_error = np.max(np.abs(coarse - exact))
    fine_error = np.max(np.abs(fine - exact))
    assert math.log2(coarse_error / fine_error) >= 1.8

    extrapolated = (4.0 * fine - coarse) / 3.0
    scale = max(1.0, float(np.max(np.abs(exact))))
    assert np.max(np.abs(extrapolated - exact)) <= 1e-4 * scale


def test_first_derivative_is_linear_in_direction() -> None:
    model = build_model("bounded-trig")
    grid = TimeGrid.uniform(16)
    solved = solve_driven(model, sample_fbm(0.4, grid, 2, seed=6, dimension=2), options=FIXED)
    a = sample_independent_direction(0.4, grid, 2, seed=6, dimension=2)
    b = sample_independent_direction(0.4, grid, 2, seed=7, dimension=2)
    total = PathBatch(grid=grid, values=a.values - 3.0 * b.values)
    xi_a = directional_derivative(model, solved, a, 1, FIXED).values
    xi_b = directional_derivative(model, solved, b, 1, FIXED).values
    xi_total = directional_derivative(model, solved, total, 1, FIXED).values
    assert np.allclose(xi_total, xi_a - 3.0 * xi_b, atol=1e-10)


def test_second_derivative_is_quadratic_in_direction() -> None:
    model = build_model("bounded-trig")
    grid = TimeGrid.uniform(16)
    solved = solve_driven(model, sample_fbm(0.4, grid, 2, seed=8, dimension=2), options=FIXED)
    h = sample_independent_direction(0.4, grid, 2, seed=8, dimension=2)
    doubled = PathBatch(grid=grid, values=2.0 * h.values)
    base = directional_derivative(model, solved, h, 2, FIXED).values
    scaled = directional_derivative(model, solved, doubled, 2, FIXED).values
    assert np.allclose(scaled, 4.0 * base, atol=1e-10)


def test_single_direction_is_shared_by_the_batch() -> None:
    model = build_model("cosine")
    grid = TimeGrid.uniform(8)
    solved = solve_driven(model, sample_fbm(0.5, grid, 4, seed=2))
    direction = SamplePath(grid=grid, values=grid.times)
    assert directional_derivative(model, solved, direction, 1).values.shape == (4, 9, 1)


def test_derivative_order_limits() -> None:
    grid = TimeGrid.uniform(4)
    driver = sample_fbm(0.5, grid, 1, seed=1)
    direction = SamplePath(grid=grid, values=grid.times)
    model = build_model("cosine")
    solved = solve_driven(model, driver)
    with pytest.raises(ConfigurationError):
        directional_derivative(model, solved, direction, 4)
    capped = build_model("cosine", {"max_order": 2})
    with pytest.raises(ConfigurationError):
        directional_derivative(capped, solve_driven(capped, driver), direction, 2)
    without = solve_driven(model, driver, with_jacobian=False)
    with pytest.raises(ConfigurationError):
        directional_derivative(model, without, direction, 1)


def test_direction_must_share_the_driver_grid() -> None:
    model = build_model("cosine")
    solved = solve_driven(model, sample_fbm(0.5, TimeGrid.uniform(4), 1, seed=1))
    other = TimeGrid.uniform(8)
    with pytest.raises(GridError):
        directional_derivative(model, solved, SamplePath(grid=other, values=other.times), 1)


def test_identity_covariance_is_variance_of_driver() -> None:
    grid = TimeGrid.uniform(16)
    model = build_model("identity", {"dimension": 2})
    for hurst in (0.5, 0.4):
        solved = solve_driven(model, sample_fbm(hurst, grid, 2, seed=3, dimension=2))
        gram = increment_gram(hurst, grid)
        for t in (0.5, 1.0):
            for sample in malliavin_covariance(model, solved, gram, t):
                assert np.allclose(sample.matrix, t ** (2 * hurst) * np.eye(2), atol=1e-10)


def test_brownian_identity_covariance_is_exact() -> None:
    grid = TimeGrid(times=[0.0, 0.1, 0.35, 0.6, 1.0])
    model = build_model("identity")
    solved = solve_driven(model, sample_fbm(0.5, grid, 1, seed=2))
    (sample,) = malliavin_covariance(model, solved, increment_gram(0.5, grid), 1.0)
    assert sample.matrix[0, 0] == pytest.approx(1.0, abs=1e-14)
    assert sample.smallest_eigenvalue == pytest.approx(1.0, abs=1e-14)


def test_ou_covariance_matches_stationary_variance() -> None:
    grid = TimeGrid.uniform(512)
    model = build_model("ou")
    solved = solve_driven(model, sample_fbm(0.5, grid, 1, seed=10))
    (sample,) = malliavin_covariance(model, solved, increment_gram(0.5, grid), 1.0)
    assert sample.matrix[0, 0] == pytest.approx((1.0 - math.exp(-2.0)) / 2.0, abs=1e-3)


def test_covariance_at_time_zero_vanishes() -> None:
    grid = TimeGrid.uniform(4)
    model = build_model("cosine")
    solved = solve_driven(model, sample_fbm(0.5, grid, 2, seed=1))
    samples = malliavin_covariance(model, solved, increment_gram(0.5, grid), 0.0)
    assert len(samples) == 2
    assert all(np.all(s.matrix == 0.0) for s in samples)


def test_covariance_requires_node_and_matching_gram() -> None:
    grid = TimeGrid.uniform(4)
    model = build_model("cosine")
    solved = solve_driven(model, sample_fbm(0.5, grid, 1, seed=1))
    with pytest.raises(GridError):
        malliavin_covariance(model, solved, increment_gram(0.5, grid), 0.3)
    with pytest.raises(GridError):
        malliavin_covariance(model, solved, increment_gram(0.5, TimeGrid.uniform(8)), 1.0)


def test_covariance_must_be_positive_semidefinite() -> None:
    grid = TimeGrid.uniform(2)
    with pytest.raises(CovarianceError):
        MalliavinCovariance(t=1.0, matrix=[[1.0, 0.0], [0.0, -1.0]], grid=grid)
    symmetric = MalliavinCovariance(t=1.0, matrix=[[2.0, 1.0], [0.0, 2.0]], grid=grid)
    assert symmetric.matrix[0, 1] == symmetric.matrix[1, 0] == 0.5


def test_nondegeneracy_report_flags_small_eigenvalues() -> None:
    grid = TimeGrid.uniform(2)
    samples = [MalliavinCovariance(t=1.0, matrix=np.eye(2), grid=grid) for _ in range(9)]
    samples.append(MalliavinCovariance(t=1.0, matrix=np.diag([1.0, 1e-12]), grid=grid))
    report = nondegeneracy_report(samples)
    assert report.count == 10
    assert report.flagged_fraction == pytest.approx(0.1)
    assert report.min_eigenvalue_quantiles["0.5"] == pytest.approx(1.0)


def test_nondegeneracy_report_on_identity_samples() -> None:
    grid = TimeGrid.uniform(4)
    model = build_model("identity")
    solved = solve_driven(model, sample_fbm(0.5, grid, 5, seed=1))
    report = nondegeneracy_report(malliavin_covariance(model, solved, increment_gram(0.5, grid), 1.0))
    assert report.flagged_fraction == 0.0
    assert all(value == pytest.approx(1.0) for value in report.min_eigenvalue_quantiles.values())
    assert report.det_mean == pytest.approx(1.0)
    assert report.inverse_det_moments["2.0"] == pytest.approx(1.0)


def test_nondegeneracy_report_needs_samples() -> None:
    with pytest.raises(ConfigurationError):
        nondegeneracy_report([])
    grid = TimeGrid.uniform(2)
    report = nondegeneracy_report([MalliavinCovariance(t=1.0, matrix=np.zeros((1, 1)), grid=grid)])
    assert report.inverse_det_moments["1.0"] == math.inf
