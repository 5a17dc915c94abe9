import numpy as np
import pytest

from wong_zakai.core.errors import (
    ConfigurationError,
    CovarianceError,
    GridError,
    RefinementError,
)
from wong_zakai.core.fbm import (
    HurstParameter,
    IncrementGram,
    fbm_covariance,
    increment_gram,
    restrict_to_partition,
    sample_fbm,
    sample_independent_direction,
)
from wong_zakai.core.models import PathBatch, SamplePath, TimeGrid


def _linear_path(grid: TimeGrid, direction: np.ndarray) -> SamplePath:
    return SamplePath(grid=grid, values=grid.times[:, None] * direction[None, :])


def _covariance_z_scores(batch: PathBatch, hurst: float) -> np.ndarray:
    nodes = batch.grid.times[1:]
    values = batch.values[:, 1:, 0]
    count = values.shape[0]
    exact = fbm_covariance(hurst, nodes[:, None], nodes[None, :])
    sample = values.T @ values / count
    diag = np.diag(exact)
    stderr = np.sqrt((np.outer(diag, diag) + exact**2) / count)
    return np.abs(sample - exact) / stderr


def test_hurst_parameter_bounds() -> None:
    assert HurstParameter(value=0.3).value == 0.3
    for bad in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ConfigurationError):
            HurstParameter(value=bad)


def test_lift_regime_is_enforced() -> None:
    HurstParameter(value=0.5).require_lift_regime()
    HurstParameter(value=0.26).require_lift_regime()
    for value in (0.25, 0.2, 0.6):
        with pytest.raises(ConfigurationError):
            HurstParameter(value=value).require_lift_regime()


def test_fbm_covariance_examples() -> None:
    assert fbm_covariance(0.5, 0.3, 0.7) == pytest.approx(0.3, abs=1e-15)
    assert fbm_covariance(0.37, 0.0, 1.0) == pytest.approx(0.0, abs=1e-15)
    assert fbm_covariance(0.4, 0.5, 0.5) == pytest.approx(0.5**0.8, rel=1e-14)
    assert 0.5**0.8 == pytest.approx(0.574349, abs=1e-6)


def test_fbm_covariance_rejects_times_outside_unit_interval() -> None:
    with pytest.raises(ConfigurationError):
        fbm_covariance(0.5, -0.1, 0.5)
    with pytest.raises(ConfigurationError):
        fbm_covariance(0.5, 0.2, 1.2)


def test_stationary_increments() -> None:
    times = np.linspace(0.0, 1.0, 21)
    for hurst in (0.3, 0.4, 0.5, 0.8):
        s, t = np.meshgrid(times, times, indexing="ij")
        mask = s <= t
        lhs = (
            fbm_covariance(hurst, t, t)
            + fbm_covariance(hurst, s, s)
            - 2.0 * fbm_covariance(hurst, s, t)
        )
        assert np.max(np.abs(lhs - (t - s) ** (2 * hurst))[mask]) < 1e-12


def test_increment_gram_is_diagonal_for_brownian_motion() -> None:
    gram = increment_gram(0.5, TimeGrid.uniform(16))
    assert np.allclose(gram.matrix, np.eye(16) / 16, rtol=0.0, atol=1e-15)


def test_increment_gram_two_intervals() -> None:
    gram = increment_gram(0.4, TimeGrid(times=[0.0, 0.5, 1.0]))
    expected = (1.0 - 2.0 * 0.5**0.8) / 2.0
    assert gram.matrix[0, 1] == pytest.approx(expected, abs=1e-14)
    assert expected == pytest.approx(-0.074349, abs=1e-6)
    assert gram.matrix[0, 0] == pytest.approx(0.5**0.8, abs=1e-14)


def test_increment_gram_single_interval_is_unit_variance() -> None:
    for hurst in (0.3, 0.5, 0.7):
        gram = increment_gram(hurst, TimeGrid.uniform(1))
        assert gram.matrix.shape == (1, 1)
        assert gram.matrix[0, 0] == pytest.approx(1.0, abs=1e-15)


def test_increment_gram_matches_bilinear_expansion() -> None:
    grid = TimeGrid(times=[0.0, 0.1, 0.35, 0.5, 0.8, 1.0])
    hurst = 0.35
    gram = increment_gram(hurst, grid)
    t = grid.times
    for j in range(1, t.size):
        for k in range(1, t.size):
            entry = (
                fbm_covariance(hurst, t[j], t[k])
                - fbm_covariance(hurst, t[j], t[k - 1])
                - fbm_covariance(hurst, t[j - 1], t[k])
                + fbm_covariance(hurst, t[j - 1], t[k - 1])
            )
            assert gram.matrix[j - 1, k - 1] == pytest.approx(entry, abs=1e-13)
    assert gram.matrix.sum() == pytest.approx(1.0, abs=1e-12)


def test_increment_gram_rejects_indefinite_matrix() -> None:
    grid = TimeGrid.uniform(2)
    with pytest.raises(CovarianceError):
        IncrementGram(grid=grid, matrix=[[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ConfigurationError):
        IncrementGram(grid=grid, matrix=[[1.0, 0.5], [0.0, 1.0]])


def test_sampling_is_deterministic_and_chunk_independent() -> None:
    grid = TimeGrid.uniform(32)
    first = sample_fbm(0.4, grid, 10, seed=7, dimension=2)
    second = sample_fbm(0.4, grid, 10, seed=7, dimension=2, chunk_size=3, threads=3)
    assert np.array_equal(first.values, second.values)
    other = sample_fbm(0.4, grid, 10, seed=8, dimension=2)
    assert not np.allclose(first.values, other.values)


def test_subsets_can_be_regenerated_from_their_index() -> None:
    grid = TimeGrid.uniform(16)
    batch = sample_fbm(0.3, grid, 8, seed=11)
    tail = sample_fbm(0.3, grid, 3, seed=11, first_index=5)
    assert np.array_equal(batch.values[5:], tail.values)


def test_paths_start_at_origin() -> None:
    batch = sample_fbm(0.45, TimeGrid.uniform(8), 5, seed=3, dimension=3)
    assert batch.values.shape == (5, 9, 3)
    assert np.all(batch.values[:, 0] == 0.0)


def test_brownian_single_increment_has_unit_variance() -> None:
    batch = sample_fbm(0.5, TimeGrid.uniform(1), 100_000, seed=2024, chunk_size=20_000)
    variance = float(np.var(batch.values[:, 1, 0]))
    assert 0.98 <= variance <= 1.02


@pytest.mark.parametrize("hurst", [0.3, 0.4, 0.5])
def test_circulant_sample_covariance_matches_fbm(hurst: float) -> None:
    batch = sample_fbm(hurst, TimeGrid.uniform(16), 20_000, seed=99, chunk_size=5_000)
    assert np.max(_covariance_z_scores(batch, hurst)) < 5.0


def test_cholesky_fallback_on_non_uniform_grid() -> None:
    grid = TimeGrid(times=[0.0, 0.05, 0.2, 0.3, 0.55, 0.6, 0.9, 1.0])
    batch = sample_fbm(0.35, grid, 20_000, seed=5, chunk_size=5_000)
    assert np.max(_covariance_z_scores(batch, 0.35)) < 5.0


def test_components_are_independent() -> None:
    batch = sample_fbm(0.4, TimeGrid.uniform(4), 20_000, seed=17, dimension=2)
    ends = batch.values[:, -1]
    correlation = float(np.mean(ends[:, 0] * ends[:, 1]))
    assert abs(correlation) < 5.0 / np.sqrt(20_000)


def test_independent_direction_uses_its_own_stream() -> None:
    grid = TimeGrid.uniform(16)
    driver = sample_fbm(0.4, grid, 4, seed=1)
    direction = sample_independent_direction(0.4, grid, 4, seed=1)
    assert direction.values.shape == driver.values.shape
    assert not np.allclose(driver.values, direction.values)


def test_sampling_rejects_empty_batches() -> None:
    with pytest.raises(ConfigurationError):
        sample_fbm(0.4, TimeGrid.uniform(4), 0, seed=1)


def test_restriction_keeps_shared_nodes() -> None:
    fine = TimeGrid.uniform(4)
    path = SamplePath(grid=fine, values=[[0.0], [1.0], [-2.0], [0.5], [3.0]])
    coarse = restrict_to_partition(path, TimeGrid.uniform(2))
    assert np.array_equal(coarse.values[:, 0], [0.0, -2.0, 3.0])
    same = restrict_to_partition(path, fine)
    assert np.array_equal(same.values, path.values)


def test_restriction_of_linear_path_is_linear() -> None:
    grid = TimeGrid.uniform(12)
    path = _linear_path(grid, np.array([1.5, -0.5]))
    coarse = restrict_to_partition(path, TimeGrid(times=[0.0, 0.25, 0.5, 1.0]))
    times = np.linspace(0.0, 1.0, 37)
    assert np.allclose(coarse.at(times), path.at(times), atol=1e-14)


def test_nested_restrictions_compose() -> None:
    batch = sample_fbm(0.4, TimeGrid.uniform(16), 3, seed=4, dimension=2)
    middle = restrict_to_partition(batch, TimeGrid.uniform(8))
    twice = restrict_to_partition(middle, TimeGrid.uniform(2))
    once = restrict_to_partition(batch, TimeGrid.uniform(2))
    assert np.array_equal(twice.values, once.values)


def test_restriction_requires_subset_grid() -> None:
    path = _linear_path(TimeGrid.uniform(4), np.array([1.0]))
    with pytest.raises(RefinementError):
        restrict_to_partition(path, TimeGrid.uniform(3))


def test_grid_validation() -> None:
    with pytest.raises(GridError):
        TimeGrid(times=[0.0, 0.5, 0.5, 1.0])
    with pytest.raises(GridError):
        TimeGrid(times=[0.0, 2.0])
    with pytest.raises(GridError):
        TimeGrid(times=[0.0])
    with pytest.raises(GridError):
        TimeGrid.uniform(4).index_of(0.3)
    assert TimeGrid.uniform(4).index_of(0.75) == 3
