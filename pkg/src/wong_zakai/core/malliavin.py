"""
Directional derivatives of the solution map along piecewise-linear directions
and Malliavin covariance matrices of y(P)_t.

Derivatives come from the jet Y(eps) = y + sum_k c_k eps^k of the flow driven
by w + eps h, with c_k = Xi_k / k!. On a segment,

    dc_k = (grad V(y) u) c_k + f_k,
    f_k  = [V(Y)]_k u - (grad V(y) c_k) u + [V(Y)]_{k-1} g,   g = (dh, 0),

where [V(Y)]_k is the eps^k coefficient of V(Y(eps)) obtained from the chain
rule over compositions of k. Variation of constants gives c_k = J Z_k with
dZ_k = K f_k, so the lower-order Xi enter order k only through f_k.
"""

import logging
import math
from functools import lru_cache
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from wong_zakai.core.errors import ConfigurationError, CovarianceError, GridError
from wong_zakai.core.fbm import IncrementGram
from wong_zakai.core.models import PathBatch, SamplePath, TimeGrid, as_batch
from wong_zakai.core.ode import (
    Rhs,
    SolvedSystem,
    SolverOptions,
    State,
    advance_segment,
    driver_increments,
)
from wong_zakai.core.vector_fields import VectorFieldModel

logger = logging.getLogger(__name__)

MAX_DERIVATIVE_ORDER = 3
_PSD_FLOOR = 1e-10


class DerivativePath(BaseModel):
    """
    Node values of Xi_n(w, h) for a batch of (driver, direction) pairs.

    Attributes:
        order (int): n.
        grid (TimeGrid): Driver grid.
        values (np.ndarray): (M, N + 1, e), zero at t = 0.
        driver_id (Optional[str]): Label of the driver batch.
        direction_id (Optional[str]): Label of the direction batch.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    order: int = Field(ge=1, le=MAX_DERIVATIVE_ORDER)
    grid: TimeGrid
    values: np.ndarray
    driver_id: Optional[str] = None
    direction_id: Optional[str] = None

    @model_validator(mode="after")
    def _check_values(self) -> "DerivativePath":
        if self.values.ndim != 3 or self.values.shape[1] != self.grid.times.size:
            raise ConfigurationError("Derivative values must have shape (M, N + 1, e).")
        if np.any(self.values[:, 0] != 0.0):
            raise ConfigurationError("Derivatives vanish at t = 0.")
        return self

    def at_node(self, t: float) -> np.ndarray:
        return self.values[:, self.grid.index_of(t)]


class MalliavinCovariance(BaseModel):
    """
    Malliavin covariance of y(P)_t for one driver realisation.

    Attributes:
        t (float): Grid time.
        matrix (np.ndarray): Symmetric positive semidefinite e x e matrix.
        grid (TimeGrid): Driver grid the sensitivities were taken on.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    t: float
    matrix: np.ndarray
    grid: TimeGrid

    @field_validator("matrix", mode="before")
    @classmethod
    def _validate_matrix(cls, value: Any) -> np.ndarray:
        matrix = np.atleast_2d(np.array(value, dtype=float))
        if matrix.shape[0] != matrix.shape[1]:
            raise ConfigurationError("Covariance must be square.")
        matrix = 0.5 * (matrix + matrix.T)
        scale = max(abs(float(np.trace(matrix))), np.finfo(float).tiny)
        if np.linalg.eigvalsh(matrix).min() < -_PSD_FLOOR * scale:
            raise CovarianceError("Malliavin covariance is not positive semidefinite.")
        matrix.flags.writeable = False
        return matrix

    @property
    def smallest_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])

    @property
    def determinant(self) -> float:
        return float(np.linalg.det(self.matrix))


class NondegeneracyReport(BaseModel):
    """
    Descriptive statistics of a sample of Malliavin covariances.
    """

    count: int
    floor: float
    min_eigenvalue_quantiles: Dict[str, float]
    det_mean: float
    det_stderr: float
    inverse_det_moments: Dict[str, float]
    flagged_fraction: float


@lru_cache(maxsize=None)
def compositions(total: int, parts: int) -> Tuple[Tuple[int, ...], ...]:
    """
    Ordered tuples of `parts` positive integers summing to `total`.
    """
    if parts == 1:
        return ((total,),)
    return tuple(
        (head,) + rest
        for head in range(1, total - parts + 2)
        for rest in compositions(total - head, parts - 1)
    )


def _contract(tensor: np.ndarray, vectors: Sequence[np.ndarray]) -> np.ndarray:
    for vector in vectors:
        tensor = np.einsum("m...i,mi->m...", tensor, vector)
    return tensor


def jet_coefficient(
    derivatives: Sequence[np.ndarray],
    coefficients: Sequence[np.ndarray],
    k: int,
    skip_linear: bool = False,
) -> np.ndarray:
    """
    eps^k coefficient of V(y + sum_j c_j eps^j).

    Args:
        derivatives (Sequence[np.ndarray]): grad^l V(y) for l = 0..k.
        coefficients (Sequence[np.ndarray]): c_0 = y, c_1, ..., c_k.
        k (int): Order of the coefficient.
        skip_linear (bool): Drops the grad V(y) c_k term.
    """
    if k == 0:
        return derivatives[0]
    total = np.zeros_like(derivatives[0])
    for parts in range(2 if skip_linear else 1, k + 1):
        weight = 1.0 / math.factorial(parts)
        for split in compositions(k, parts):
            total = total + weight * _contract(
                derivatives[parts], [coefficients[i] for i in split]
            )
    return total


def _jet_rhs(model: VectorFieldModel, u: np.ndarray, g: np.ndarray, order: int) -> Rhs:
    def rhs(state: State) -> State:
        y, jac, inv = state[0], state[1], state[2]
        coeffs = [y] + [np.einsum("mij,mj->mi", jac, z) for z in state[3:]]
        derivs = [model.derivative(y, level) for level in range(order + 1)]
        drive = np.einsum("mijk,mj->mik", derivs[1], u)
        out: List[np.ndarray] = [
            np.einsum("mij,mj->mi", derivs[0], u),
            drive @ jac,
            -(inv @ drive),
        ]
        for k in range(1, order + 1):
            forcing = np.einsum(
                "mij,mj->mi", jet_coefficient(derivs, coeffs, k, skip_linear=True), u
            ) + np.einsum("mij,mj->mi", jet_coefficient(derivs, coeffs, k - 1), g)
            out.append(np.einsum("mij,mj->mi", inv, forcing))
        return tuple(out)

    return rhs


def _check_direction(
    solved: SolvedSystem, direction: Union[SamplePath, PathBatch], model: VectorFieldModel
) -> PathBatch:
    batch = as_batch(direction)
    if not batch.grid.same_as(solved.grid):
        raise GridError("Direction and driver must live on the same grid.")
    if batch.dimension != model.driver_dim:
        raise ConfigurationError(
            f"Direction has dimension {batch.dimension}, model expects {model.driver_dim}."
        )
    if len(batch) not in (1, len(solved.driver)):
        raise ConfigurationError(
            f"{len(batch)} directions for {len(solved.driver)} drivers."
        )
    return batch


def directional_derivatives(
    model: VectorFieldModel,
    solved: SolvedSystem,
    direction: Union[SamplePath, PathBatch],
    order: int,
    options: Optional[SolverOptions] = None,
) -> List[DerivativePath]:
    """
    Xi_1, ..., Xi_order along `direction`, from one integration pass.

    A single direction is shared by every driver in the batch.

    Raises:
        ConfigurationError: If order is outside 1..3 or above the model's
            derivative order minus one, or if `solved` lacks J and K.
        GridError: If the direction lives on another grid.
    """
    if not 1 <= order <= MAX_DERIVATIVE_ORDER:
        raise ConfigurationError(
            f"Derivative orders 1..{MAX_DERIVATIVE_ORDER} are supported, got {order}."
        )
    if order > model.max_order - 1:
        raise ConfigurationError(
            f"{model.name} has derivatives up to order {model.max_order}; "
            f"Xi_{order} needs order {order + 1}."
        )
    if solved.jacobian is None or solved.inverse is None:
        raise ConfigurationError("Directional derivatives need a solve with J and K.")
    options = options or SolverOptions()
    directions = _check_direction(solved, direction, model)

    m, n = len(solved.driver), solved.grid.n_intervals
    e = model.state_dim
    u_all = driver_increments(solved.driver)
    g_all = np.zeros_like(u_all)
    g_all[..., : model.driver_dim] = np.broadcast_to(
        directions.increments, (m, n, model.driver_dim)
    )

    xi = np.zeros((order, m, n + 1, e))
    zs = [np.zeros((m, e)) for _ in range(order)]
    for j in range(n):
        state: State = (
            solved.y[:, j],
            solved.jacobian[:, j],
            solved.inverse[:, j],
            *zs,
        )
        rhs = _jet_rhs(model, u_all[:, j], g_all[:, j], order)
        state, _, _ = advance_segment(rhs, state, options, j)
        zs = list(state[3:])
        for k in range(order):
            coeff = np.einsum("mij,mj->mi", state[1], zs[k])
            xi[k, :, j + 1] = math.factorial(k + 1) * coeff

    logger.debug("Computed Xi_1..Xi_%d for %d paths on %d segments", order, m, n)
    return [
        DerivativePath(order=k + 1, grid=solved.grid, values=xi[k]) for k in range(order)
    ]


def directional_derivative(
    model: VectorFieldModel,
    solved: SolvedSystem,
    direction: Union[SamplePath, PathBatch],
    order: int,
    options: Optional[SolverOptions] = None,
) -> DerivativePath:
    """
    Xi_order(w, h) at every node of the driver grid.
    """
    return directional_derivatives(model, solved, direction, order, options)[-1]


def _segment_quadrature(
    model: VectorFieldModel,
    solved: SolvedSystem,
    stop: int,
    options: SolverOptions,
) -> np.ndarray:
    """
    Q_j = int_0^1 K sigma(y) dtau over segment j for j < stop; shape (M, stop, e, d).
    """
    jacobian, inverse = solved.jacobian, solved.inverse
    if jacobian is None or inverse is None:
        raise ConfigurationError("Malliavin covariances need a solve with J and K.")
    u_all = driver_increments(solved.driver)
    m, e, d = len(solved.driver), model.state_dim, model.driver_dim
    quadrature = np.zeros((m, stop, e, d))
    for j in range(stop):
        u = u_all[:, j]

        def rhs(state: State, u: np.ndarray = u) -> State:
            y, jac, inv = state[0], state[1], state[2]
            fields = model.fields(y)
            drive = np.einsum("mijk,mj->mik", model.derivative(y, 1), u)
            return (
                np.einsum("mij,mj->mi", fields, u),
                drive @ jac,
                -(inv @ drive),
                inv @ fields[..., :d],
            )

        state: State = (
            solved.y[:, j],
            jacobian[:, j],
            inverse[:, j],
            np.zeros((m, e, d)),
        )
        state, _, _ = advance_segment(rhs, state, options, j)
        quadrature[:, j] = state[3]
    return quadrature


def malliavin_covariance(
    model: VectorFieldModel,
    solved: SolvedSystem,
    gram: IncrementGram,
    t: float,
    options: Optional[SolverOptions] = None,
) -> List[MalliavinCovariance]:
    """
    Sigma_t = sum_c sum_{j,k} G_j[:, c] Gram_{jk} G_k[:, c]^T per driver, where
    G_j = J_t Q_j is the gradient of y(P)_t in the j-th driver increment.

    Returns:
        List[MalliavinCovariance]: One matrix per driver in `solved`.

    Raises:
        GridError: If t is not a node or the Gram lives on another grid.
    """
    if not gram.grid.same_as(solved.grid):
        raise GridError("Gram matrix and driver must share one grid.")
    if solved.jacobian is None:
        raise ConfigurationError("Malliavin covariances need a solve with J and K.")
    options = options or SolverOptions()
    stop = solved.grid.index_of(t)
    if stop == 0:
        zero = np.zeros((model.state_dim, model.state_dim))
        return [
            MalliavinCovariance(t=t, matrix=zero, grid=solved.grid)
            for _ in range(len(solved.driver))
        ]
    quadrature = _segment_quadrature(model, solved, stop, options)
    gradients = np.einsum("mab,mjbc->mjac", solved.jacobian[:, stop], quadrature)
    block = gram.matrix[:stop, :stop]
    matrices = np.einsum("mjac,jk,mkbc->mab", gradients, block, gradients)
    return [MalliavinCovariance(t=t, matrix=matrix, grid=solved.grid) for matrix in matrices]


def nondegeneracy_report(
    samples: Sequence[MalliavinCovariance],
    floor: float = 1e-8,
    quantiles: Sequence[float] = (0.05, 0.5, 0.95),
    inverse_moments: Sequence[float] = (1.0, 2.0),
) -> NondegeneracyReport:
    """
    Quantiles of the smallest eigenvalue, mean determinant and inverse-determinant
    moments E[det^{-q}] over a sample of covariances; samples whose smallest
    eigenvalue lies below `floor` are flagged.
    """
    if not samples:
        raise ConfigurationError("Need at least one covariance sample.")
    eigen = np.array([s.smallest_eigenvalue for s in samples])
    dets = np.array([s.determinant for s in samples])
    count = len(samples)
    moments: Dict[str, float] = {}
    for q in inverse_moments:
        moments[str(q)] = (
            math.inf if np.any(dets <= 0.0) else float(np.mean(dets ** (-q)))
        )
    stderr = float(np.std(dets, ddof=1) / math.sqrt(count)) if count > 1 else 0.0
    return NondegeneracyReport(
        count=count,
        floor=floor,
        min_eigenvalue_quantiles={
            str(q): float(np.quantile(eigen, q)) for q in quantiles
        },
        det_mean=float(np.mean(dets)),
        det_stderr=stderr,
        inverse_det_moments=moments,
        flagged_fraction=float(np.mean(eigen < floor)),
    )
