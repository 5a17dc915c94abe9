"""
Fractional Brownian motion on [0, 1]: exact sampling, piecewise-linear
restriction to coarser partitions and increment covariances.
"""

import logging
from typing import Any, Optional, Union, overload

import numpy as np
import scipy.fft
import scipy.linalg
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from _helper.parallel import map_chunks
from wong_zakai.core.errors import (
    ConfigurationError,
    CovarianceError,
    GridError,
    RefinementError,
)
from wong_zakai.core.models import PathBatch, SamplePath, TimeGrid

logger = logging.getLogger(__name__)

# Stream ids used in the Philox key; directions never share a stream with drivers.
DRIVER_STREAM = 0
DIRECTION_STREAM = 1

_PSD_FLOOR = 1e-10
_CHOLESKY_JITTER = 1e-12


class HurstParameter(BaseModel):
    """
    Hurst index of fBM.

    Sampling accepts any value in (0, 1). Code consuming rough path lifts calls
    `require_lift_regime`, which restricts to (1/4, 1/2].
    """

    model_config = ConfigDict(frozen=True)

    value: float

    @field_validator("value")
    @classmethod
    def _validate_value(cls, value: float) -> float:
        if not 0.0 < value < 1.0:
            raise ConfigurationError(f"Hurst parameter must lie in (0, 1), got {value}.")
        return float(value)

    def require_lift_regime(self) -> "HurstParameter":
        if not 0.25 < self.value <= 0.5:
            raise ConfigurationError(
                f"Lift-based computations need H in (1/4, 1/2], got {self.value}."
            )
        return self


HurstLike = Union[float, HurstParameter]


def as_hurst(H: HurstLike) -> HurstParameter:
    return H if isinstance(H, HurstParameter) else HurstParameter(value=H)


class IncrementGram(BaseModel):
    """
    Covariance matrix of the grid increments of one scalar fBM component.

    Attributes:
        grid (TimeGrid): The partition whose increments are correlated.
        matrix (np.ndarray): N x N matrix, entry (j, k) = Cov(dw_j, dw_k).
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grid: TimeGrid
    matrix: np.ndarray

    @field_validator("matrix", mode="before")
    @classmethod
    def _validate_matrix(cls, value: Any) -> np.ndarray:
        matrix = np.array(value, dtype=float, copy=True)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ConfigurationError("Gram matrix must be square.")
        if not np.allclose(matrix, matrix.T, rtol=0.0, atol=1e-14):
            raise ConfigurationError("Gram matrix must be symmetric.")
        trace = float(np.trace(matrix))
        if np.linalg.eigvalsh(matrix).min() < -_PSD_FLOOR * max(trace, 1.0):
            raise CovarianceError("Gram matrix is not positive semidefinite.")
        matrix.flags.writeable = False
        return matrix

    @model_validator(mode="after")
    def _check_grid(self) -> "IncrementGram":
        if self.matrix.shape[0] != self.grid.n_intervals:
            raise ConfigurationError(
                f"Gram of size {self.matrix.shape[0]} for "
                f"{self.grid.n_intervals} grid intervals."
            )
        return self


def fbm_covariance(H: HurstLike, s: Any, t: Any) -> Any:
    """
    E[w_s w_t] = (t^{2H} + s^{2H} - |t - s|^{2H}) / 2 for one component.

    Broadcasts over array arguments.
    """
    two_h = 2.0 * as_hurst(H).value
    s_arr = np.asarray(s, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    if np.any((s_arr < 0) | (s_arr > 1) | (t_arr < 0) | (t_arr > 1)):
        raise ConfigurationError("Covariance arguments must lie in [0, 1].")
    value = 0.5 * (t_arr**two_h + s_arr**two_h - np.abs(t_arr - s_arr) ** two_h)
    return float(value) if value.ndim == 0 else value


def increment_gram(H: HurstLike, grid: TimeGrid) -> IncrementGram:
    """
    Cov(w_{t_j} - w_{t_{j-1}}, w_{t_k} - w_{t_{k-1}}) for all interval pairs.

    Uses the stationary-increment form
    (|t_j - t_{k-1}|^{2H} + |t_{j-1} - t_k|^{2H} - |t_j - t_k|^{2H}
    - |t_{j-1} - t_{k-1}|^{2H}) / 2, which is the bilinear expansion of the
    covariance written without cancelling t^{2H} terms.
    """
    two_h = 2.0 * as_hurst(H).value
    left, right = grid.times[:-1], grid.times[1:]

    def _pow(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.abs(np.subtract.outer(a, b)) ** two_h

    matrix = 0.5 * (
        _pow(right, left) + _pow(left, right) - _pow(right, right) - _pow(left, left)
    )
    matrix = 0.5 * (matrix + matrix.T)
    return IncrementGram(grid=grid, matrix=matrix)


def path_stream(seed: int, index: int, stream: int = DRIVER_STREAM) -> np.random.Generator:
    """
    Counter-based generator for one path, keyed by (seed, stream) and offset by
    the path index in the high counter word, so streams never overlap.
    """
    if not 0 <= seed < 2**64:
        raise ConfigurationError(f"Seed {seed} does not fit into 64 bits.")
    key = seed | (stream << 64)
    bit_generator = np.random.Philox(key=key, counter=[0, 0, 0, index])
    return np.random.Generator(bit_generator)


def _fgn_autocovariance(H: float, n: int, dt: float) -> np.ndarray:
    k = np.arange(n + 1, dtype=float)
    two_h = 2.0 * H
    gamma = 0.5 * (
        np.abs(k + 1) ** two_h - 2.0 * np.abs(k) ** two_h + np.abs(k - 1) ** two_h
    )
    return gamma * dt**two_h


def _circulant_eigenvalues(H: float, grid: TimeGrid) -> Optional[np.ndarray]:
    n = grid.n_intervals
    gamma = _fgn_autocovariance(H, n, float(grid.steps[0]))
    first_row = np.concatenate([gamma[:n], gamma[n:0:-1]])
    eigenvalues = np.real(scipy.fft.fft(first_row))
    floor = -1e-12 * np.abs(eigenvalues).max()
    if eigenvalues.min() < floor:
        logger.warning(
            "Circulant embedding has negative eigenvalue %.3e for H=%s, N=%d; "
            "falling back to Cholesky.",
            eigenvalues.min(),
            H,
            n,
        )
        return None
    return np.clip(eigenvalues, 0.0, None)


def _node_cholesky(H: float, grid: TimeGrid) -> np.ndarray:
    nodes = grid.times[1:]
    covariance = fbm_covariance(H, nodes[:, None], nodes[None, :])
    try:
        return scipy.linalg.cholesky(covariance, lower=True)
    except np.linalg.LinAlgError:
        jitter = _CHOLESKY_JITTER * float(np.trace(covariance))
        logger.debug("Cholesky failed, retrying with jitter %.3e", jitter)
    try:
        return scipy.linalg.cholesky(
            covariance + jitter * np.eye(nodes.size), lower=True
        )
    except np.linalg.LinAlgError as exc:
        raise CovarianceError(
            f"fBM covariance for H={H} on {nodes.size} nodes is not positive "
            "definite after jitter."
        ) from exc


def sample_fbm(
    H: HurstLike,
    grid: TimeGrid,
    count: int,
    seed: int,
    dimension: int = 1,
    *,
    stream: int = DRIVER_STREAM,
    first_index: int = 0,
    chunk_size: int = 4096,
    threads: int = 1,
) -> PathBatch:
    """
    Draws `count` independent d-dimensional fBM paths on `grid`.

    Path i uses the stream (seed, stream, first_index + i), so any subset of a
    batch can be regenerated on its own and chunking never changes results.

    Raises:
        CovarianceError: If the node covariance is numerically not PSD.
    """
    hurst = as_hurst(H).value
    if count < 1:
        raise ConfigurationError(f"Need at least one path, got {count}.")
    if dimension < 1:
        raise ConfigurationError(f"Dimension must be >= 1, got {dimension}.")

    n = grid.n_intervals
    eigenvalues = _circulant_eigenvalues(hurst, grid) if grid.is_uniform else None
    factor = None if eigenvalues is not None else _node_cholesky(hurst, grid)

    def _draw(lo: int, hi: int) -> np.ndarray:
        if eigenvalues is not None:
            scale = np.sqrt(eigenvalues / (2 * n))
            noise = np.stack(
                [
                    path_stream(seed, first_index + i, stream).standard_normal(
                        (2, dimension, 2 * n)
                    )
                    for i in range(lo, hi)
                ]
            )
            spectrum = scale * (noise[:, 0] + 1j * noise[:, 1])
            increments = np.real(scipy.fft.fft(spectrum, axis=-1))[..., :n]
            nodes = np.cumsum(increments, axis=-1)
        else:
            noise = np.stack(
                [
                    path_stream(seed, first_index + i, stream).standard_normal(
                        (dimension, n)
                    )
                    for i in range(lo, hi)
                ]
            )
            nodes = np.einsum("jk,mdk->mdj", factor, noise)
        values = np.zeros((hi - lo, n + 1, dimension))
        values[:, 1:, :] = np.transpose(nodes, (0, 2, 1))
        return values

    parts = map_chunks(_draw, count, chunk_size, threads)
    logger.debug(
        "Sampled %d fBM paths (H=%s, N=%d, d=%d, method=%s)",
        count,
        hurst,
        n,
        dimension,
        "circulant" if eigenvalues is not None else "cholesky",
    )
    return PathBatch(grid=grid, values=np.concatenate(parts, axis=0))


def sample_independent_direction(
    H: HurstLike,
    grid: TimeGrid,
    count: int,
    seed: int,
    dimension: int = 1,
    **kwargs: Any,
) -> PathBatch:
    """
    An independent copy of the driver, drawn from the direction stream.
    """
    return sample_fbm(H, grid, count, seed, dimension, stream=DIRECTION_STREAM, **kwargs)


@overload
def restrict_to_partition(path: SamplePath, coarse: TimeGrid) -> SamplePath: ...


@overload
def restrict_to_partition(path: PathBatch, coarse: TimeGrid) -> PathBatch: ...


def restrict_to_partition(
    path: Union[SamplePath, PathBatch], coarse: TimeGrid
) -> Union[SamplePath, PathBatch]:
    """
    Keeps the values at the nodes of `coarse`; interpolation in between is
    linear, so the result is w(P) coupled to the same realisation of w.

    Raises:
        RefinementError: If a coarse node is not a node of the path's grid.
    """
    try:
        indices = path.grid.indices_of(coarse.times)
    except GridError as exc:
        raise RefinementError(f"Coarse grid is not a subset of the path grid: {exc}") from exc
    if isinstance(path, PathBatch):
        return PathBatch(grid=coarse, values=path.values[:, indices])
    return SamplePath(grid=coarse, values=path.values[indices])
