"""
Mollified Monte Carlo density of y(m)_t and Gaussian reference densities.
"""

import logging
import math
import time
from typing import Any, Callable, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.integrate
import scipy.linalg
import scipy.special
import scipy.stats
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from _helper.parallel import map_chunks
from wong_zakai.core.errors import ConfigurationError, UnsupportedOracleError
from wong_zakai.core.fbm import HurstLike, as_hurst, sample_fbm
from wong_zakai.core.models import TimeGrid
from wong_zakai.core.ode import SolverOptions, solve_driven
from wong_zakai.core.vector_fields import VectorFieldModel

logger = logging.getLogger(__name__)

# Kernel values below exp(-40) are flushed to zero.
FLUSH_EXPONENT = 40.0

DensityEvaluator = Callable[[np.ndarray], np.ndarray]


def gaussian_kernel(x: Any, rho: float) -> Union[float, np.ndarray]:
    """
    phi_rho(x) = (2 pi rho^2)^{-e/2} exp(-|x|^2 / 2 rho^2).

    The last axis of `x` is the state dimension e; a scalar is a point in R^1.
    """
    if not rho > 0.0:
        raise ConfigurationError(f"Bandwidth must be positive, got {rho}.")
    points = np.asarray(x, dtype=float)
    if points.ndim == 0:
        points = points[None]
    e = points.shape[-1]
    value = (2.0 * math.pi * rho**2) ** (-0.5 * e) * np.exp(
        -np.sum(points**2, axis=-1) / (2.0 * rho**2)
    )
    return float(value) if np.ndim(value) == 0 else value


def _flushed_kernel(diff: np.ndarray, rho: float) -> np.ndarray:
    e = diff.shape[-1]
    exponent = np.sum(diff**2, axis=-1) / (2.0 * rho**2)
    peak = (2.0 * math.pi * rho**2) ** (-0.5 * e)
    damped = peak * np.exp(-np.minimum(exponent, FLUSH_EXPONENT))
    return np.where(exponent > FLUSH_EXPONENT, 0.0, damped)


class XiGrid(BaseModel):
    """
    Tensor grid of evaluation points, one uniform axis per state component.

    Attributes:
        axes (Tuple[np.ndarray, ...]): Increasing axis nodes.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    axes: Tuple[np.ndarray, ...]

    @field_validator("axes", mode="before")
    @classmethod
    def _validate_axes(cls, value: Any) -> Tuple[np.ndarray, ...]:
        axes = tuple(np.array(axis, dtype=float) for axis in value)
        if not axes:
            raise ConfigurationError("The evaluation grid is empty.")
        for axis in axes:
            if axis.ndim != 1 or axis.size < 1:
                raise ConfigurationError("The evaluation grid is empty.")
            if axis.size > 1 and not np.all(np.diff(axis) > 0.0):
                raise ConfigurationError("Grid axes must be strictly increasing.")
            axis.flags.writeable = False
        return axes

    @classmethod
    def uniform(
        cls, lower: Sequence[float], upper: Sequence[float], points: int
    ) -> "XiGrid":
        if points < 1:
            raise ConfigurationError(f"Need at least one point per axis, got {points}.")
        return cls(axes=[np.linspace(a, b, points) for a, b in zip(lower, upper)])

    @classmethod
    def around(
        cls, samples: np.ndarray, width: float = 4.0, points: int = 201
    ) -> "XiGrid":
        """
        [mean - width * sd, mean + width * sd] per component of (M, e) samples.
        """
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        if samples.shape[1] > 2:
            raise ConfigurationError("Evaluation grids are supported for e <= 2.")
        mean = samples.mean(axis=0)
        spread = np.maximum(samples.std(axis=0), 1e-3)
        return cls.uniform(mean - width * spread, mean + width * spread, points)

    @property
    def dimension(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(axis.size for axis in self.axes)

    @property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


class DensityEstimate(BaseModel):
    """
    p_hat(xi) = mean_i phi_rho(y(m)^(i)_t - xi) with rho = m^{-delta}.

    Attributes:
        t (float): Evaluation time.
        bandwidth (float): rho.
        xi (np.ndarray): (K, e) evaluation points.
        values (np.ndarray): (K,) estimates, non-negative.
        stderr (np.ndarray): (K,) Monte Carlo standard errors.
        count (int): M.
        tail_mass (float): Estimated mass of the mollified law outside the
            bounding box of `xi`.
        grid (Optional[XiGrid]): Tensor grid `xi` was built from.
        hurst (float): H.
        m (int): Partition size.
        delta (float): Bandwidth exponent.
        model (str): Model name.
        seed (int): Master seed.
        runtime_seconds (float): Wall clock of the estimate.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    t: float
    bandwidth: float = Field(gt=0.0)
    xi: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    count: int = Field(ge=1)
    tail_mass: float = 0.0
    grid: Optional[XiGrid] = None
    hurst: float
    m: int
    delta: float
    model: str
    seed: int
    runtime_seconds: float = 0.0

    @model_validator(mode="after")
    def _check_values(self) -> "DensityEstimate":
        shape = (self.xi.shape[0],)
        if self.values.shape != shape or self.stderr.shape != shape:
            raise ConfigurationError("One value and one standard error per point.")
        if np.any(self.values < 0.0):
            raise ConfigurationError("Density estimates are non-negative.")
        return self

    def integral(self) -> float:
        """
        Trapezoidal integral over the tensor grid.
        """
        if self.grid is None:
            raise ConfigurationError("Integration needs a tensor evaluation grid.")
        total = self.values.reshape(self.grid.shape)
        for axis in reversed(self.grid.axes):
            total = scipy.integrate.trapezoid(total, axis, axis=-1)
        return float(total)

    def metadata(self) -> dict:
        return {
            "t": self.t,
            "bandwidth": self.bandwidth,
            "count": self.count,
            "tail_mass": self.tail_mass,
            "hurst": self.hurst,
            "m": self.m,
            "delta": self.delta,
            "model": self.model,
            "seed": self.seed,
            "runtime_seconds": self.runtime_seconds,
        }


def default_delta(H: HurstLike) -> float:
    """
    delta = 2H - 1/2, so the bandwidth term and the pathwise rate balance.
    """
    return 2.0 * as_hurst(H).value - 0.5


def terminal_values(
    model: VectorFieldModel,
    H: HurstLike,
    t: float,
    m: int,
    count: int,
    seed: int,
    *,
    first_index: int = 0,
    options: Optional[SolverOptions] = None,
) -> np.ndarray:
    """
    y(m)_t for `count` drivers on the uniform m-partition; shape (count, e).
    """
    grid = TimeGrid.uniform(m)
    index = grid.index_of(t)
    drivers = sample_fbm(
        H, grid, count, seed, model.driver_dim, first_index=first_index
    )
    return solve_driven(model, drivers, with_jacobian=False, options=options).y[:, index]


def _tail_mass(
    samples: np.ndarray, lower: np.ndarray, upper: np.ndarray, rho: float
) -> np.ndarray:
    inside = scipy.special.ndtr((upper - samples) / rho) - scipy.special.ndtr(
        (lower - samples) / rho
    )
    return 1.0 - np.prod(inside, axis=-1)


def estimate_density(
    model: VectorFieldModel,
    H: HurstLike,
    t: float,
    m: int,
    delta: Optional[float],
    M: int,
    xi_grid: Union[XiGrid, np.ndarray],
    seed: int,
    *,
    chunk_size: int = 1024,
    threads: int = 1,
    options: Optional[SolverOptions] = None,
) -> DensityEstimate:
    """
    Monte Carlo estimate of E[phi_{m^-delta}(y(m)_t - xi)] on the evaluation points.

    Per-chunk partial sums are merged in chunk order with compensated summation.

    Raises:
        ConfigurationError: On invalid t, m, delta, M or an empty grid.
        GridError: If t is not a node of the m-partition.
        IntegrationError: Propagated from the solver.
    """
    hurst = as_hurst(H).value
    delta = default_delta(hurst) if delta is None else delta
    if not 0.0 < t <= 1.0:
        raise ConfigurationError(f"t must lie in (0, 1], got {t}.")
    if m < 2:
        raise ConfigurationError(f"Need m >= 2, got {m}.")
    if not delta > 0.0:
        raise ConfigurationError(f"delta must be positive, got {delta}.")
    if M < 2:
        raise ConfigurationError(f"Need M >= 2 samples, got {M}.")
    grid = xi_grid if isinstance(xi_grid, XiGrid) else None
    xi = grid.points if grid is not None else np.atleast_2d(np.asarray(xi_grid, dtype=float))
    if xi.size == 0:
        raise ConfigurationError("The evaluation grid is empty.")
    if xi.shape[-1] != model.state_dim:
        raise ConfigurationError(
            f"Evaluation points have dimension {xi.shape[-1]}, model has {model.state_dim}."
        )
    TimeGrid.uniform(m).index_of(t)

    rho = float(m) ** (-delta)
    lower, upper = xi.min(axis=0), xi.max(axis=0)
    started = time.perf_counter()

    def _worker(lo: int, hi: int) -> Tuple[np.ndarray, np.ndarray, float]:
        samples = terminal_values(
            model, hurst, t, m, hi - lo, seed, first_index=lo, options=options
        )
        kernel = _flushed_kernel(samples[:, None, :] - xi[None, :, :], rho)
        tail = float(np.sum(_tail_mass(samples, lower, upper, rho)))
        return kernel.sum(axis=0), np.square(kernel).sum(axis=0), tail

    parts = map_chunks(_worker, M, chunk_size, threads)
    sums = np.array([math.fsum(col) for col in np.stack([p[0] for p in parts], axis=1)])
    squares = np.array([math.fsum(col) for col in np.stack([p[1] for p in parts], axis=1)])
    tail_mass = math.fsum(p[2] for p in parts) / M

    mean = sums / M
    variance = np.maximum(squares / M - mean**2, 0.0) * M / (M - 1)
    runtime = time.perf_counter() - started
    logger.info(
        "Density estimate: model=%s H=%s m=%d delta=%s M=%d points=%d (%.2fs)",
        model.name,
        hurst,
        m,
        delta,
        M,
        xi.shape[0],
        runtime,
    )
    return DensityEstimate(
        t=t,
        bandwidth=rho,
        xi=xi,
        values=mean,
        stderr=np.sqrt(variance / M),
        count=M,
        tail_mass=tail_mass,
        grid=grid,
        hurst=hurst,
        m=m,
        delta=delta,
        model=model.name,
        seed=seed,
        runtime_seconds=runtime,
    )


def affine_moments(
    model: VectorFieldModel, H: HurstLike, t: float
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Exact mean and covariance of y_t for constant sigma and affine drift.

    At H = 1/2 the covariance int_0^t e^{Bs} sigma sigma^T e^{B^T s} ds is read
    off the matrix exponential of the block matrix [[-B, sigma sigma^T], [0, B^T]];
    without drift matrix y_t = sigma w_t + b t for every H.

    Raises:
        UnsupportedOracleError: Outside these families.
    """
    hurst = as_hurst(H).value
    if not model.is_affine:
        raise UnsupportedOracleError(
            f"{model.name} is not in the constant-sigma, affine-drift family."
        )
    if not 0.0 <= t <= 1.0:
        raise ConfigurationError(f"t must lie in [0, 1], got {t}.")
    d, e = model.driver_dim, model.state_dim
    sigma = model.offset[:, :d]
    matrix = model.linear[:, d, :]
    shift = model.offset[:, d]

    if np.any(matrix):
        if hurst != 0.5:
            raise UnsupportedOracleError(
                "Closed-form densities with a drift matrix exist only at H = 1/2."
            )
        block = np.zeros((2 * e, 2 * e))
        block[:e, :e] = -matrix
        block[:e, e:] = sigma @ sigma.T
        block[e:, e:] = matrix.T
        expo = scipy.linalg.expm(block * t)
        covariance = expo[e:, e:].T @ expo[:e, e:]
        augmented = np.zeros((e + 1, e + 1))
        augmented[:e, :e] = matrix
        augmented[:e, e] = shift
        mean = scipy.linalg.expm(augmented * t)[:e, e]
    else:
        covariance = sigma @ sigma.T * t ** (2.0 * hurst)
        mean = shift * t
    return mean, 0.5 * (covariance + covariance.T)


def reference_density(
    model: VectorFieldModel,
    H: HurstLike,
    t: float,
    xi: Any,
    bandwidth: float = 0.0,
) -> Union[float, np.ndarray]:
    """
    Gaussian density of y_t (convolved with phi_bandwidth when bandwidth > 0).

    Returns a float for a single point and an array for (K, e) points.

    Raises:
        UnsupportedOracleError: If the model has no closed-form law.
    """
    if not 0.0 < t <= 1.0:
        raise ConfigurationError(f"t must lie in (0, 1], got {t}.")
    mean, covariance = affine_moments(model, H, t)
    covariance = covariance + bandwidth**2 * np.eye(model.state_dim)
    points = np.asarray(xi, dtype=float)
    e = model.state_dim
    single = points.ndim == 0 or (points.ndim == 1 and e > 1)
    points = points.reshape(-1, e)
    values = np.atleast_1d(
        scipy.stats.multivariate_normal(mean=mean, cov=covariance).pdf(points)
    )
    return float(values[0]) if single else values


def reference_evaluator(
    model: VectorFieldModel, H: HurstLike, t: float, bandwidth: float = 0.0
) -> DensityEvaluator:
    """
    Points (K, e) -> reference density values (K,).
    """

    def evaluate(points: np.ndarray) -> np.ndarray:
        return np.atleast_1d(
            reference_density(model, H, t, np.atleast_2d(points), bandwidth)
        )

    return evaluate


def sup_error(
    estimate: DensityEstimate,
    reference: Union[DensityEvaluator, DensityEstimate, np.ndarray],
) -> Tuple[float, np.ndarray]:
    """
    max over the evaluation points of |p_hat - p| and the maximising point.
    """
    if isinstance(reference, DensityEstimate):
        if reference.xi.shape != estimate.xi.shape or not np.allclose(
            reference.xi, estimate.xi, rtol=0.0, atol=1e-12
        ):
            raise ConfigurationError("Estimates live on different evaluation grids.")
        target = reference.values
    elif callable(reference):
        target = np.asarray(reference(estimate.xi), dtype=float)
    else:
        target = np.asarray(reference, dtype=float)
    if target.shape != estimate.values.shape:
        raise ConfigurationError("Reference does not match the evaluation grid.")
    gap = np.abs(estimate.values - target)
    index = int(np.argmax(gap))
    return float(gap[index]), estimate.xi[index]
