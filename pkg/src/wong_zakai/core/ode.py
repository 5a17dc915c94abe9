"""
Riemann-Stieltjes system (y, J, K) driven by a piecewise-linear path.

On a segment with driver increment dw and duration dt the equations are
autonomous in the reparametrised time tau in [0, 1]:

    dy/dtau = V(y) u,          u = (dw, dt)
    dJ/dtau = (grad V(y) u) J,
    dK/dtau = -K (grad V(y) u),

so drift and noise share one code path. Each segment is integrated with
classical RK4; step doubling and the J K = Id residual decide the substeps.
"""

import logging
from typing import Callable, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from wong_zakai.core.errors import ConfigurationError, GridError, IntegrationError
from wong_zakai.core.models import PathBatch, SamplePath, TimeGrid, as_batch
from wong_zakai.core.vector_fields import VectorFieldModel

logger = logging.getLogger(__name__)

State = Tuple[np.ndarray, ...]
Rhs = Callable[[State], State]

# RK4 step doubling: |fine - coarse| overestimates the fine error by 2^4 - 1.
_RICHARDSON_RK4 = 15.0


class SolverOptions(BaseModel):
    """
    Substep policy for the segment integrator.

    Attributes:
        substeps (int): Initial RK4 substeps per driver segment.
        max_substeps (int): Cap for the doubling.
        tolerance (float): Bound on the step-doubling error estimate, relative
            to 1 + |state|.
        jk_tolerance (float): Bound on |J K - Id| (Hilbert-Schmidt) at every node.
        adaptive (bool): If False, every segment uses exactly `substeps`.
    """

    model_config = ConfigDict(frozen=True)

    substeps: int = Field(default=4, ge=1)
    max_substeps: int = Field(default=256, ge=1)
    tolerance: float = Field(default=1e-10, gt=0.0)
    jk_tolerance: float = Field(default=1e-8, gt=0.0)
    adaptive: bool = True


class SolvedSystem(BaseModel):
    """
    Node values of (y, J, K) for a batch of drivers.

    Attributes:
        driver (PathBatch): The drivers, shape (M, N + 1, d).
        y (np.ndarray): (M, N + 1, e), starting at 0.
        jacobian (Optional[np.ndarray]): J, (M, N + 1, e, e), starting at Id.
        inverse (Optional[np.ndarray]): K, (M, N + 1, e, e), starting at Id.
        substeps (np.ndarray): RK4 substeps used on each segment.
        error_estimates (np.ndarray): Step-doubling estimate per segment
            (0 when the policy was not adaptive).
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    driver: PathBatch
    y: np.ndarray
    jacobian: Optional[np.ndarray] = None
    inverse: Optional[np.ndarray] = None
    substeps: np.ndarray
    error_estimates: np.ndarray

    @model_validator(mode="after")
    def _check_initial_state(self) -> "SolvedSystem":
        m, n_nodes = self.driver.values.shape[:2]
        if self.y.shape[:2] != (m, n_nodes):
            raise ConfigurationError("Trajectory does not match the driver batch.")
        if np.any(self.y[:, 0] != 0.0):
            raise ConfigurationError("Solutions start at y_0 = 0.")
        if (self.jacobian is None) != (self.inverse is None):
            raise ConfigurationError("J and K are recorded together.")
        if self.jacobian is not None and self.inverse is not None:
            eye = np.eye(self.state_dim)
            if not (np.all(self.jacobian[:, 0] == eye) and np.all(self.inverse[:, 0] == eye)):
                raise ConfigurationError("J_0 and K_0 must be the identity.")
        return self

    @property
    def grid(self) -> TimeGrid:
        return self.driver.grid

    @property
    def state_dim(self) -> int:
        return int(self.y.shape[-1])

    @property
    def has_jacobian(self) -> bool:
        return self.jacobian is not None

    def jk_residual(self) -> float:
        """
        max over paths and nodes of |J_t K_t - Id|.
        """
        if self.jacobian is None or self.inverse is None:
            raise ConfigurationError("The system was solved without J and K.")
        product = self.jacobian @ self.inverse
        return float(np.max(np.linalg.norm(product - np.eye(self.state_dim), axis=(-2, -1))))


def rk4_step(rhs: Rhs, state: State, h: float) -> State:
    k1 = rhs(state)
    k2 = rhs(tuple(s + 0.5 * h * k for s, k in zip(state, k1)))
    k3 = rhs(tuple(s + 0.5 * h * k for s, k in zip(state, k2)))
    k4 = rhs(tuple(s + h * k for s, k in zip(state, k3)))
    return tuple(
        s + (h / 6.0) * (a + 2.0 * b + 2.0 * c + d)
        for s, a, b, c, d in zip(state, k1, k2, k3, k4)
    )


def rk4_integrate(rhs: Rhs, state: State, substeps: int) -> State:
    """
    Integrates over tau in [0, 1] with `substeps` equal RK4 steps.
    """
    h = 1.0 / substeps
    for _ in range(substeps):
        state = rk4_step(rhs, state, h)
    return state


def driver_increments(driver: PathBatch) -> np.ndarray:
    """
    Extended increments u_j = (dw_j, dt_j), shape (M, N, d + 1).
    """
    increments = driver.increments
    steps = np.broadcast_to(driver.grid.steps[None, :, None], increments.shape[:2] + (1,))
    return np.concatenate([increments, steps], axis=-1)


def segment_rhs(model: VectorFieldModel, u: np.ndarray, with_jacobian: bool = True) -> Rhs:
    """
    Right-hand side of the (y[, J, K]) flow along the extended increment u (M, d + 1).
    """

    def rhs(state: State) -> State:
        y = state[0]
        dy = np.einsum("mij,mj->mi", model.fields(y), u)
        if not with_jacobian:
            return (dy,)
        drive = np.einsum("mijk,mj->mik", model.derivative(y, 1), u)
        jacobian, inverse = state[1], state[2]
        return dy, drive @ jacobian, -(inverse @ drive)

    return rhs


def integrate_segment(
    model: VectorFieldModel,
    state: State,
    u: np.ndarray,
    substeps: int,
) -> State:
    """
    Flow of one linear segment with extended increment u; -u runs it backwards.
    """
    return rk4_integrate(segment_rhs(model, u, len(state) == 3), state, substeps)


def _state_scale(state: State) -> float:
    return 1.0 + max(float(np.max(np.abs(s))) for s in state)


def _jk_excess(state: State) -> float:
    if len(state) < 3:
        return 0.0
    eye = np.eye(state[0].shape[-1])
    return float(np.max(np.linalg.norm(state[1] @ state[2] - eye, axis=(-2, -1))))


def advance_segment(
    rhs: Rhs,
    state: State,
    options: SolverOptions,
    segment: int,
    jk_check: Callable[[State], float] = _jk_excess,
) -> Tuple[State, int, float]:
    """
    Integrates one segment under the substep policy.

    Returns:
        Tuple of the new state, the substeps used and the error estimate.

    Raises:
        IntegrationError: If the tolerances are not met within `max_substeps`.
    """
    substeps = options.substeps
    if not options.adaptive:
        result = rk4_integrate(rhs, state, substeps)
        excess = jk_check(result)
        if excess > options.jk_tolerance:
            raise IntegrationError(
                f"|J K - Id| = {excess:.3e} on segment {segment} with fixed "
                f"{substeps} substeps.",
                segment=segment,
            )
        return result, substeps, 0.0

    coarse = rk4_integrate(rhs, state, substeps)
    while True:
        fine = rk4_integrate(rhs, state, 2 * substeps)
        diff = max(float(np.max(np.abs(f - c))) for f, c in zip(fine, coarse))
        estimate = diff / (_RICHARDSON_RK4 * _state_scale(fine))
        if estimate <= options.tolerance and jk_check(fine) <= options.jk_tolerance:
            return fine, 2 * substeps, estimate
        substeps *= 2
        if 2 * substeps > options.max_substeps:
            raise IntegrationError(
                f"Segment {segment} did not reach tolerance {options.tolerance:.1e} "
                f"within {options.max_substeps} substeps (estimate {estimate:.3e}).",
                segment=segment,
                error_estimate=estimate,
            )
        logger.debug("Segment %d: doubling to %d substeps", segment, 2 * substeps)
        coarse = fine


def solve_driven(
    model: VectorFieldModel,
    driver: Union[SamplePath, PathBatch],
    with_jacobian: bool = True,
    options: Optional[SolverOptions] = None,
) -> SolvedSystem:
    """
    Solves dy = sigma(y) dw + b(y) dt, y_0 = 0, with J and K, along each driver.

    Raises:
        ConfigurationError: If the driver dimension does not match the model.
        IntegrationError: If a segment cannot be integrated to tolerance.
    """
    options = options or SolverOptions()
    batch = as_batch(driver)
    if batch.dimension != model.driver_dim:
        raise ConfigurationError(
            f"Model {model.name} expects a {model.driver_dim}-dimensional driver, "
            f"got {batch.dimension}."
        )
    m, n = len(batch), batch.grid.n_intervals
    e = model.state_dim
    increments = driver_increments(batch)

    y = np.zeros((m, n + 1, e))
    jac = inv = None
    state: State = (np.zeros((m, e)),)
    if with_jacobian:
        jac = np.zeros((m, n + 1, e, e))
        inv = np.zeros((m, n + 1, e, e))
        jac[:, 0] = inv[:, 0] = np.eye(e)
        state = (state[0], np.tile(np.eye(e), (m, 1, 1)), np.tile(np.eye(e), (m, 1, 1)))

    substeps = np.zeros(n, dtype=int)
    estimates = np.zeros(n)
    for j in range(n):
        rhs = segment_rhs(model, increments[:, j], with_jacobian)
        state, substeps[j], estimates[j] = advance_segment(rhs, state, options, j)
        y[:, j + 1] = state[0]
        if jac is not None and inv is not None:
            jac[:, j + 1], inv[:, j + 1] = state[1], state[2]

    logger.debug(
        "Solved %s on %d paths x %d segments (max substeps %d)",
        model.name,
        m,
        n,
        int(substeps.max()),
    )
    return SolvedSystem(
        driver=batch,
        y=y,
        jacobian=jac,
        inverse=inv,
        substeps=substeps,
        error_estimates=estimates,
    )


def _common_indices(a: TimeGrid, b: TimeGrid) -> Tuple[np.ndarray, np.ndarray]:
    if a.contains(b):
        return a.indices_of(b.times), np.arange(b.times.size)
    if b.contains(a):
        return np.arange(a.times.size), b.indices_of(a.times)
    raise GridError("Solutions can only be compared on nested or equal grids.")


def solution_sup_distances(a: SolvedSystem, b: SolvedSystem) -> np.ndarray:
    """
    Per-path max over the common nodes of |y_a - y_b|.
    """
    if a.y.shape[0] != b.y.shape[0]:
        raise ConfigurationError("Batches of different sizes cannot be compared.")
    ia, ib = _common_indices(a.grid, b.grid)
    gap = np.linalg.norm(a.y[:, ia] - b.y[:, ib], axis=-1)
    return gap.max(axis=1)


def evaluate_solution_sup_distance(a: SolvedSystem, b: SolvedSystem) -> float:
    """
    max over paths and common nodes of |y_a - y_b|.

    Raises:
        GridError: If neither grid contains the other.
    """
    return float(solution_sup_distances(a, b).max())
