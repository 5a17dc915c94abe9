import math

import numpy as np
import pytest
import scipy.integrate

from wong_zakai.core.errors import ConfigurationError, GridError, UnsupportedOracleError
from wong_zakai.core.density import (
    XiGrid,
    affine_moments,
    default_delta,
    estimate_density,
    gaussian_kernel,
    reference_density,
    reference_evaluator,
    sup_error,
    terminal_values,
)
from wong_zakai.core.vector_fields import build_model

OU_VARIANCE = (1.0 - math.exp(-2.0)) / 2.0


def test_kernel_peak_values() -> None:
    assert gaussian_kernel(0.0, 1.0) == pytest.approx(0.3989422804, abs=1e-10)
    assert gaussian_kernel([0.0, 0.0], 0.5) == pytest.approx(1.0 / (2.0 * math.pi * 0.25))
    values = gaussian_kernel(np.zeros((4, 3)), 2.0)
    assert values.shape == (4,)
    assert np.allclose(values, (2.0 * math.pi * 4.0) ** -1.5)


def test_kernel_is_normalised() -> None:
    x = np.linspace(-1.0, 1.0, 2001)
    values = gaussian_kernel(x[:, None], 0.1)
    assert scipy.integrate.simpson(values, x=x) == pytest.approx(1.0, abs=1e-8)


def test_kernel_rejects_non_positive_bandwidth() -> None:
    with pytest.raises(ConfigurationError):
        gaussian_kernel(0.0, 0.0)


def test_default_bandwidth_exponent() -> None:
    assert default_delta(0.5) == pytest.approx(0.5)
    assert default_delta(0.4) == pytest.approx(0.3)


def test_xi_grid_points_and_shape() -> None:
    grid = XiGrid.uniform([-1.0, 0.0], [1.0, 2.0], 3)
    assert grid.shape == (3, 3)
    assert grid.points.shape == (9, 2)
    assert np.array_equal(grid.points[1], [-1.0, 1.0])
    with pytest.raises(ConfigurationError):
        XiGrid(axes=[[0.0, 0.0, 1.0]])
    with pytest.raises(ConfigurationError):
        XiGrid.around(np.zeros((5, 3)))


def test_terminal_values_of_identity_model_are_driver_endpoints() -> None:
    model = build_model("identity")
    values = terminal_values(model, 0.5, 1.0, 4, 1000, seed=3)
    assert values.shape == (1000, 1)
    assert 0.85 <= float(np.var(values)) <= 1.15


def test_brownian_estimate_matches_smoothed_normal() -> None:
    model = build_model("identity")
    grid = XiGrid.uniform([-3.0], [3.0], 61)
    estimate = estimate_density(model, 0.5, 1.0, 16, 0.5, 20_000, grid, seed=11)
    assert estimate.bandwidth == pytest.approx(0.25)
    exact = reference_density(model, 0.5, 1.0, grid.points, bandwidth=0.25)
    assert np.all(np.abs(estimate.values - exact) <= 5.0 * estimate.stderr + 1e-12)
    assert np.all(estimate.values >= 0.0)


def test_estimate_integrates_to_one_minus_tail() -> None:
    model = build_model("identity")
    grid = XiGrid.uniform([-2.0], [2.0], 201)
    estimate = estimate_density(model, 0.5, 1.0, 8, None, 5_000, grid, seed=2)
    assert 0.0 < estimate.tail_mass < 0.1
    assert estimate.integral() + estimate.tail_mass == pytest.approx(1.0, abs=1e-3)


def test_standard_errors_halve_with_four_times_the_samples() -> None:
    model = build_model("identity")
    xi = np.array([[-0.5], [0.0], [0.5]])
    small = estimate_density(model, 0.5, 1.0, 8, 0.5, 4_000, xi, seed=5)
    large = estimate_density(model, 0.5, 1.0, 8, 0.5, 16_000, xi, seed=5)
    ratio = small.stderr / large.stderr
    assert np.all((ratio > 1.6) & (ratio < 2.4))


def test_estimates_are_deterministic_under_threading() -> None:
    model = build_model("cosine")
    xi = XiGrid.uniform([-2.0], [2.0], 21)
    serial = estimate_density(model, 0.4, 1.0, 8, None, 600, xi, seed=9, chunk_size=100)
    again = estimate_density(model, 0.4, 1.0, 8, None, 600, xi, seed=9, chunk_size=100)
    threaded = estimate_density(
        model, 0.4, 1.0, 8, None, 600, xi, seed=9, chunk_size=100, threads=4
    )
    assert np.array_equal(serial.values, again.values)
    assert np.allclose(threaded.values, serial.values, rtol=1e-12, atol=0.0)


def test_ou_error_decreases_with_partition_size() -> None:
    model = build_model("ou")
    grid = XiGrid.uniform([-3.0], [3.0], 61)
    reference = reference_evaluator(model, 0.5, 1.0)
    errors = []
    for m in (4, 16, 64):
        estimate = estimate_density(model, 0.5, 1.0, m, 0.5, 50_000, grid, seed=17)
        errors.append(sup_error(estimate, reference)[0])
    assert errors[0] > errors[1] > errors[2]


def test_estimate_validates_inputs() -> None:
    model = build_model("identity")
    xi = np.zeros((1, 1))
    with pytest.raises(ConfigurationError):
        estimate_density(model, 0.5, 0.0, 8, 0.5, 10, xi, seed=1)
    with pytest.raises(ConfigurationError):
        estimate_density(model, 0.5, 1.0, 1, 0.5, 10, xi, seed=1)
    with pytest.raises(ConfigurationError):
        estimate_density(model, 0.5, 1.0, 8, 0.0, 10, xi, seed=1)
    with pytest.raises(ConfigurationError):
        estimate_density(model, 0.5, 1.0, 8, 0.5, 10, np.empty((0, 1)), seed=1)
    with pytest.raises(ConfigurationError):
        estimate_density(model, 0.5, 1.0, 8, 0.5, 10, np.zeros((1, 2)), seed=1)
    with pytest.raises(GridError):
        estimate_density(model, 0.5, 0.3, 8, 0.5, 10, xi, seed=1)


def test_reference_density_examples() -> None:
    identity = build_model("identity")
    assert reference_density(identity, 0.5, 1.0, 0.0) == pytest.approx(
        1.0 / math.sqrt(2.0 * math.pi)
    )
    ou = build_model("ou")
    value = reference_density(ou, 0.5, 1.0, 0.0)
    assert value == pytest.approx((2.0 * math.pi * OU_VARIANCE) ** -0.5, rel=1e-12)
    assert value == pytest.approx(0.6077, abs=2e-3)
    assert reference_density(identity, 0.5, 1e-6, 1.0) < 1e-100


def test_affine_moments_from_matrix_exponential() -> None:
    model = build_model("affine", {"drift_offset": [1.0]})
    mean, covariance = affine_moments(model, 0.5, 1.0)
    assert mean[0] == pytest.approx(1.0 - math.exp(-1.0), rel=1e-12)
    assert covariance[0, 0] == pytest.approx(OU_VARIANCE, rel=1e-12)


def test_fractional_oracle_without_drift_matrix() -> None:
    model = build_model("identity", {"dimension": 2})
    mean, covariance = affine_moments(model, 0.3, 0.5)
    assert np.allclose(mean, 0.0)
    assert np.allclose(covariance, 0.5**0.6 * np.eye(2))
    with pytest.raises(UnsupportedOracleError):
        affine_moments(build_model("ou"), 0.3, 1.0)


def test_reference_requires_closed_form_family() -> None:
    with pytest.raises(UnsupportedOracleError):
        reference_density(build_model("cosine"), 0.5, 1.0, 0.0)


def test_sup_error_examples() -> None:
    model = build_model("identity")
    grid = XiGrid.uniform([-1.0], [1.0], 11)
    estimate = estimate_density(model, 0.5, 1.0, 4, 0.5, 200, grid, seed=1)
    assert sup_error(estimate, estimate)[0] == 0.0
    gap, point = sup_error(estimate, estimate.values + 0.125)
    assert gap == pytest.approx(0.125)
    assert point.shape == (1,)
    with pytest.raises(ConfigurationError):
        sup_error(estimate, np.zeros(3))
