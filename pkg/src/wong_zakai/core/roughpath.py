"""
Step-3 truncated signatures of piecewise-linear paths.

Tensors are stored densely: level k of an object with leading shape S has
shape S + (d,) * k. Norms are Hilbert-Schmidt. p-variation suprema run over
partitions through grid nodes only; this is exact for level 1 of a
piecewise-linear path and is the documented semantics at levels 2 and 3.
"""

import logging
import math
from typing import Any, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.optimize
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from wong_zakai.core.errors import (
    ConfigurationError,
    GridError,
    NumericalError,
    UnsupportedLevelError,
)
from wong_zakai.core.models import SamplePath, TimeGrid

logger = logging.getLogger(__name__)

MAX_LEVEL = 3

LevelTensors = Tuple[np.ndarray, ...]
Window = Tuple[float, float]


def _check_level(level: int) -> int:
    if level not in (1, 2, 3):
        raise UnsupportedLevelError(
            f"Levels 1..{MAX_LEVEL} are supported, got {level}."
        )
    return level


def _outer(a: np.ndarray, ka: int, b: np.ndarray, kb: int) -> np.ndarray:
    """
    Tensor product of a level-ka and a level-kb tensor with broadcast leading axes.
    """
    a_exp = a.reshape(a.shape + (1,) * kb)
    b_lead = b.shape[: b.ndim - kb]
    b_exp = b.reshape(b_lead + (1,) * ka + b.shape[b.ndim - kb :])
    return a_exp * b_exp


def _hs_norm(x: np.ndarray, k: int) -> np.ndarray:
    lead = x.shape[: x.ndim - k]
    return np.sqrt(np.sum(np.square(x.reshape(lead + (-1,))), axis=-1))


def segment_tensors(delta: np.ndarray, level: int) -> LevelTensors:
    """
    Signature of a straight segment with increment `delta`: delta^{(x)k} / k!.
    """
    _check_level(level)
    out = [np.asarray(delta, dtype=float)]
    for k in range(2, level + 1):
        out.append(_outer(out[-1], k - 1, out[0], 1) / k)
    return tuple(out)


def zero_tensors(
    dimension: int, level: int, lead: Tuple[int, ...] = ()
) -> LevelTensors:
    return tuple(np.zeros(lead + (dimension,) * k) for k in range(1, level + 1))


def chen_compose(left: Sequence[np.ndarray], right: Sequence[np.ndarray]) -> LevelTensors:
    """
    Chen product of the signatures over [s, u] and [u, t]:
    x^k_{s,t} = sum_{i=0..k} x^{k-i}_{s,u} (x) x^i_{u,t}.

    Leading axes broadcast, so whole tables can be composed at once.

    Raises:
        ConfigurationError: On dimension or level mismatch.
    """
    if len(left) != len(right):
        raise ConfigurationError(
            f"Cannot compose level {len(left)} with level {len(right)}."
        )
    _check_level(len(left))
    if left[0].shape[-1] != right[0].shape[-1]:
        raise ConfigurationError(
            f"Cannot compose dimension {left[0].shape[-1]} with {right[0].shape[-1]}."
        )
    out = []
    for k in range(1, len(left) + 1):
        term = left[k - 1] + right[k - 1]
        for i in range(1, k):
            term = term + _outer(left[k - 1 - i], k - i, right[i - 1], i)
        out.append(term)
    return tuple(out)


def group_inverse(x: Sequence[np.ndarray]) -> LevelTensors:
    """
    Inverse in the truncated tensor algebra, so that chen_compose(x, inv) = 0.
    """
    inverse: List[np.ndarray] = []
    for k in range(1, len(x) + 1):
        term = -x[k - 1]
        for i in range(1, k):
            term = term - _outer(x[k - 1 - i], k - i, inverse[i - 1], i)
        inverse.append(term)
    return tuple(inverse)


class RoughPathLevels(BaseModel):
    """
    Per-interval iterated integrals of a path on a grid.

    Attributes:
        grid (TimeGrid): The partition.
        level (int): Number of tracked levels L in {1, 2, 3}.
        increments (tuple): increments[k - 1] has shape (N,) + (d,) * k and holds
            x^k over [t_{j-1}, t_j].
        p (float): Roughness exponent (metadata).
        segment_lift (bool): True when every interval holds a straight-segment
            signature, which makes the object refinable.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grid: TimeGrid
    level: int
    increments: Tuple[np.ndarray, ...]
    p: float = Field(default=2.0, ge=2.0)
    segment_lift: bool = False

    @field_validator("level")
    @classmethod
    def _validate_level(cls, value: int) -> int:
        return _check_level(value)

    @field_validator("increments", mode="before")
    @classmethod
    def _validate_increments(cls, value: Any) -> Tuple[np.ndarray, ...]:
        arrays = tuple(np.array(x, dtype=float, copy=True) for x in value)
        for array in arrays:
            array.flags.writeable = False
        return arrays

    @model_validator(mode="after")
    def _check_shapes(self) -> "RoughPathLevels":
        if len(self.increments) != self.level:
            raise ConfigurationError(
                f"Expected {self.level} tensor levels, got {len(self.increments)}."
            )
        n = self.grid.n_intervals
        d = self.increments[0].shape[-1]
        for k, tensor in enumerate(self.increments, start=1):
            if tensor.shape != (n,) + (d,) * k:
                raise ConfigurationError(
                    f"Level {k} has shape {tensor.shape}, expected {(n,) + (d,) * k}."
                )
        return self

    @property
    def dimension(self) -> int:
        return int(self.increments[0].shape[-1])

    @property
    def n_intervals(self) -> int:
        return self.grid.n_intervals

    def truncate(self, level: int) -> "RoughPathLevels":
        if _check_level(level) > self.level:
            raise UnsupportedLevelError(f"Only {self.level} levels are available.")
        return self.replace(level=level, increments=self.increments[:level])

    def replace(self, **changes: Any) -> "RoughPathLevels":
        """
        Validated copy with some fields changed.
        """
        return RoughPathLevels(**{**dict(self), **changes})

    def node_path(self) -> SamplePath:
        """
        Values x^1_{0, t_j} at the nodes.
        """
        values = np.zeros((self.n_intervals + 1, self.dimension))
        values[1:] = np.cumsum(self.increments[0], axis=0)
        return SamplePath(grid=self.grid, values=values)


class ControlEvaluation(BaseModel):
    """
    Intrinsic control omega(t_i, t_j) on all node pairs (upper triangle).
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grid: TimeGrid
    values: np.ndarray
    p: float

    @model_validator(mode="after")
    def _check_control(self) -> "ControlEvaluation":
        n = self.grid.n_intervals + 1
        if self.values.shape != (n, n):
            raise ConfigurationError("Control values must be (N + 1) x (N + 1).")
        upper = np.triu(self.values)
        if upper.min() < 0.0 or np.any(np.diag(self.values) != 0.0):
            raise NumericalError("A control must be nonnegative and vanish on the diagonal.")
        violation = self.superadditivity_violation()
        if violation > 1e-10 * max(1.0, float(self.values[0, -1])):
            raise NumericalError(f"Control is not superadditive (excess {violation:.3e}).")
        return self

    def superadditivity_violation(self) -> float:
        """
        max over grid triples s <= u <= t of omega(s,u) + omega(u,t) - omega(s,t).
        """
        worst = 0.0
        n = self.values.shape[0]
        for u in range(n):
            lhs = self.values[: u + 1, u][:, None] + self.values[u, u:][None, :]
            worst = max(worst, float(np.max(lhs - self.values[: u + 1, u:])))
        return worst


class NFunctionalResult(BaseModel):
    """
    Greedy block decomposition of [0, 1] into pieces of control mass beta.
    """

    count: int
    breakpoints: List[float]
    beta: float
    p: float
    total_control: float


def lift_piecewise_linear(
    path: SamplePath, level: int, p: Optional[float] = None
) -> RoughPathLevels:
    """
    Iterated integrals of the piecewise-linear interpolant, one segment each.

    Raises:
        UnsupportedLevelError: If level is not in 1..3.
    """
    _check_level(level)
    tensors = segment_tensors(path.increments, level)
    return RoughPathLevels(
        grid=path.grid,
        level=level,
        increments=tensors,
        p=max(2.0, float(p) if p is not None else float(level)),
        segment_lift=True,
    )


def prefix_tensors(increments: Sequence[np.ndarray]) -> LevelTensors:
    """
    Running signatures x_{0, t_j}, j = 0..N, from per-interval tensors.

    Level k is a cumulative sum of x^k_j + sum_i x^{k-i}_{0,t_{j-1}} (x) x^i_j,
    using only lower prefix levels, so the whole table is built with cumsums.
    Leading batch axes before the interval axis are allowed.
    """
    level = len(increments)
    axis = increments[0].ndim - 2
    prefix: List[np.ndarray] = []
    for k in range(1, level + 1):
        term = increments[k - 1]
        for i in range(1, k):
            shifted = _shift_right(prefix[k - 1 - i], axis)
            term = term + _outer(shifted, k - i, increments[i - 1], i)
        running = np.cumsum(term, axis=axis)
        pad = [(0, 0)] * running.ndim
        pad[axis] = (1, 0)
        prefix.append(np.pad(running, pad))
    return tuple(prefix)


def _shift_right(prefix: np.ndarray, axis: int) -> np.ndarray:
    # prefix has N + 1 entries along `axis`; drop the last to pair x_{0,t_{j-1}} with interval j
    index = [slice(None)] * prefix.ndim
    index[axis] = slice(0, -1)
    return prefix[tuple(index)]


def prefix_levels(levels: RoughPathLevels) -> LevelTensors:
    return prefix_tensors(levels.increments)


def levy_area(levels: RoughPathLevels) -> np.ndarray:
    """
    Antisymmetric part of x^2_{0, t_j} at every node, shape (N + 1, d, d).
    """
    if levels.level < 2:
        raise UnsupportedLevelError("Levy area needs level >= 2.")
    second = prefix_levels(levels.truncate(2))[1]
    return 0.5 * (second - np.swapaxes(second, -1, -2))


def _window_indices(levels: RoughPathLevels, window: Optional[Window]) -> Tuple[int, int]:
    if window is None:
        return 0, levels.n_intervals
    try:
        start, stop = levels.grid.indices_of(list(window))
    except GridError as exc:
        raise GridError(f"Window endpoints must be grid nodes: {exc}") from exc
    if start > stop:
        raise GridError(f"Window {window} is reversed.")
    return int(start), int(stop)


def interval_table(
    levels: RoughPathLevels,
    window: Optional[Window] = None,
    depth: Optional[int] = None,
) -> LevelTensors:
    """
    x^k_{t_a, t_b} for all node pairs a <= b inside `window`.

    Entry [a, b] of level k has shape (d,) * k; indices are relative to the
    window start. Computed as inverse(x_{s,t_a}) (x) x_{s,t_b}.
    """
    depth = levels.level if depth is None else _check_level(depth)
    if depth > levels.level:
        raise UnsupportedLevelError(f"Only {levels.level} levels are available.")
    start, stop = _window_indices(levels, window)
    d = levels.dimension
    if start == stop:
        return zero_tensors(d, depth, (1, 1))
    prefix = prefix_tensors([x[start:stop] for x in levels.increments[:depth]])
    inverse = group_inverse(prefix)
    rows = tuple(x[:, None] for x in inverse)
    cols = tuple(x[None, :] for x in prefix)
    return chen_compose(rows, cols)


def _dp_best(weights: np.ndarray) -> np.ndarray:
    """
    best[j] = max over node partitions of [0, j] of the summed weights[i, i'].
    """
    n = weights.shape[0]
    best = np.zeros(n)
    for j in range(1, n):
        best[j] = np.max(best[:j] + weights[:j, j])
    return best


def _check_exponent(q: float) -> float:
    if not q >= 1.0:
        raise ConfigurationError(f"Variation exponents must be >= 1, got {q}.")
    return float(q)


def pvar_seminorm(
    levels: RoughPathLevels, k: int, q: float, window: Optional[Window] = None
) -> float:
    """
    q-variation of level k over `window`, sup over node partitions, by an
    O(N^2) dynamic program.

    Raises:
        GridError: If the window endpoints are not grid nodes.
    """
    _check_exponent(q)
    if not 1 <= k <= levels.level:
        raise UnsupportedLevelError(f"Level {k} is not tracked (L={levels.level}).")
    table = interval_table(levels, window, depth=k)[k - 1]
    weights = _hs_norm(table, k) ** q
    return float(_dp_best(weights)[-1] ** (1.0 / q))


def _homogeneous_exponents(levels: RoughPathLevels, p: float) -> List[float]:
    if levels.level > math.floor(p):
        raise ConfigurationError(
            f"Homogeneous p-variation needs L <= [p], got L={levels.level}, p={p}."
        )
    return [_check_exponent(p / k) for k in range(1, levels.level + 1)]


def homogeneous_pvar_norm(
    levels: RoughPathLevels, p: float, window: Optional[Window] = None
) -> float:
    """
    (sum_k ||x^k||_{p/k-var}^{p/k})^{1/p}; its p-th power is the intrinsic control.
    """
    exponents = _homogeneous_exponents(levels, p)
    total = 0.0
    for k, q in enumerate(exponents, start=1):
        total += pvar_seminorm(levels, k, q, window) ** q
    return total ** (1.0 / p)


def control_evaluation(levels: RoughPathLevels, p: float) -> ControlEvaluation:
    """
    Intrinsic control ||x||^p_{p-var,[t_a,t_b]} for every node pair.
    """
    exponents = _homogeneous_exponents(levels, p)
    table = interval_table(levels)
    weights = [_hs_norm(t, k) ** q for k, (t, q) in enumerate(zip(table, exponents), 1)]
    n = levels.n_intervals + 1
    values = np.zeros((n, n))
    for a in range(n - 1):
        for w in weights:
            values[a, a:] += _dp_best(w[a:, a:])
    return ControlEvaluation(grid=levels.grid, values=values, p=p)


def _first_exit_level1(
    values: np.ndarray, times: np.ndarray, p: float, beta: float
) -> List[float]:
    """
    Continuum greedy stopping times of the p-variation control of a piecewise-linear
    path. Blocks may start inside a segment; the control over [s, t] is the node DP
    over {s, interior nodes, t}, exact because |x_u - x_a|^p + |x_b - x_u|^p is
    convex along a segment.
    """
    n = times.size - 1
    breakpoints = [0.0]
    start_time, start_value, segment = 0.0, values[0], 0
    while True:
        points = [start_value]
        best = [0.0]
        crossing = None
        for node in range(segment + 1, n + 1):
            anchors, gains = np.asarray(points), np.asarray(best)

            def excess(position: np.ndarray) -> float:
                norms = np.sqrt(np.sum((position - anchors) ** 2, axis=-1))
                return float(np.max(gains + norms**p)) - beta

            if excess(values[node]) >= 0.0:
                left_time = start_time if node == segment + 1 else times[node - 1]
                left_value = start_value if node == segment + 1 else values[node - 1]
                step = values[node] - left_value
                fraction = scipy.optimize.brentq(
                    lambda lam: excess(left_value + lam * step), 0.0, 1.0, xtol=1e-14
                )
                crossing = (
                    left_time + fraction * (times[node] - left_time),
                    left_value + fraction * step,
                )
                break
            points.append(values[node])
            best.append(excess(values[node]) + beta)
        if crossing is None:
            breakpoints.append(1.0)
            return breakpoints
        start_time, start_value = float(crossing[0]), crossing[1]
        if start_time >= 1.0:
            breakpoints.append(1.0)
            return breakpoints
        breakpoints.append(start_time)
        segment = int(np.searchsorted(times, start_time, side="right")) - 1


def n_functional(levels: RoughPathLevels, p: float, beta: float) -> NFunctionalResult:
    """
    Greedy stopping times tau_m = first t > tau_{m-1} with
    ||x||^p_{p-var,[tau_{m-1}, t]} >= beta, capped at 1; count = #{m : tau_m < 1}.

    At level 1 the stopping times are exact points of the piecewise-linear path,
    so the count does not change when segments are split by interior nodes.
    At levels 2 and 3 breakpoints snap to the first node reaching beta, which
    can only lower the count.
    """
    if not beta > 0.0:
        raise ConfigurationError(f"beta must be positive, got {beta}.")
    exponents = _homogeneous_exponents(levels, p)
    table = interval_table(levels)
    weights = [_hs_norm(t, k) ** q for k, (t, q) in enumerate(zip(table, exponents), 1)]
    times = levels.grid.times

    total_control = sum(float(_dp_best(w)[-1]) for w in weights)
    if levels.level == 1:
        breakpoints = _first_exit_level1(levels.node_path().values, times, p, beta)
    else:
        breakpoints = _snapped_breakpoints(weights, times, beta)
    count = sum(1 for tau in breakpoints[1:] if tau < 1.0)
    return NFunctionalResult(
        count=count,
        breakpoints=breakpoints,
        beta=beta,
        p=p,
        total_control=total_control,
    )


def _snapped_breakpoints(
    weights: Sequence[np.ndarray], times: np.ndarray, beta: float
) -> List[float]:
    n = times.size - 1
    breakpoints = [0.0]
    start = 0
    while start < n:
        best = np.zeros((len(weights), n + 1 - start))
        stop = n
        for j in range(1, n + 1 - start):
            for k, w in enumerate(weights):
                block = w[start : start + j, start + j]
                best[k, j] = np.max(best[k, :j] + block)
            if best[:, j].sum() >= beta:
                stop = start + j
                break
        breakpoints.append(float(times[stop]))
        start = stop
    return breakpoints


def refine_levels(levels: RoughPathLevels, grid: TimeGrid) -> RoughPathLevels:
    """
    Re-lifts a segment lift on a finer grid containing the original nodes.
    """
    if levels.grid.same_as(grid):
        return levels
    if not levels.segment_lift:
        raise ConfigurationError("Only straight-segment lifts can be refined.")
    if not grid.contains(levels.grid):
        raise GridError("Target grid does not contain the lift's nodes.")
    refined = SamplePath(grid=grid, values=levels.node_path().at(grid.times))
    return lift_piecewise_linear(refined, levels.level, levels.p)


def common_refinement(a: TimeGrid, b: TimeGrid) -> TimeGrid:
    merged = np.union1d(a.times, b.times)
    keep = np.append(True, np.diff(merged) > 1e-12)
    return TimeGrid(times=merged[keep])


def pvar_distance(a: RoughPathLevels, b: RoughPathLevels, p: float) -> float:
    """
    max_k of the p/k-variation of the levelwise difference x^k_{s,t} - y^k_{s,t},
    over node partitions of the common refinement.

    Raises:
        ConfigurationError: On incompatible dimension or level.
    """
    if a.level != b.level or a.dimension != b.dimension:
        raise ConfigurationError(
            f"Incompatible lifts: (L={a.level}, d={a.dimension}) vs "
            f"(L={b.level}, d={b.dimension})."
        )
    exponents = _homogeneous_exponents(a, p)
    if not a.grid.same_as(b.grid):
        grid = common_refinement(a.grid, b.grid)
        a, b = refine_levels(a, grid), refine_levels(b, grid)
    table_a, table_b = interval_table(a), interval_table(b)
    distance = 0.0
    for k, q in enumerate(exponents, start=1):
        weights = _hs_norm(table_a[k - 1] - table_b[k - 1], k) ** q
        distance = max(distance, float(_dp_best(weights)[-1] ** (1.0 / q)))
    return distance


def dilate(levels: RoughPathLevels, A: Union[float, np.ndarray]) -> RoughPathLevels:
    """
    Generalised dilation: level k is mapped by A^{(x)k}; a scalar c scales level k by c^k.

    Raises:
        ConfigurationError: If A does not act on R^d.
    """
    matrix = np.asarray(A, dtype=float)
    if matrix.ndim == 0:
        matrix = matrix * np.eye(levels.dimension)
    if matrix.ndim != 2 or matrix.shape[1] != levels.dimension:
        raise ConfigurationError(
            f"Map of shape {matrix.shape} cannot act on dimension {levels.dimension}."
        )
    mapped = []
    for k, tensor in enumerate(levels.increments, start=1):
        out = tensor
        for axis in range(1, k + 1):
            out = np.moveaxis(np.tensordot(out, matrix, axes=([axis], [1])), -1, axis)
        mapped.append(out)
    return levels.replace(increments=tuple(mapped))


def level3_refinement_residuals(path: SamplePath, depths: Sequence[int]) -> List[float]:
    """
    Distance between the level-3 tensor of `path` over [0, 1] and the extension sum
    sum_l (x^2_{0,t_{l-1}} (x) x^1_l + x^1_{0,t_{l-1}} (x) x^2_l) on partitions
    halved `depth` times. Each halving divides the residual by 4.
    """
    exact = prefix_levels(lift_piecewise_linear(path, 3))[2][-1]
    return [float(_hs_norm(_extension_sum(path, depth) - exact, 3)) for depth in depths]


def _extension_sum(path: SamplePath, depth: int) -> np.ndarray:
    if path.grid.n_intervals > 64:
        raise ConfigurationError("The level-3 check accepts at most 64 segments.")
    if depth < 0:
        raise ConfigurationError(f"Refinement depth must be >= 0, got {depth}.")
    grid = path.grid.refine(2**depth)
    refined = SamplePath(grid=grid, values=path.at(grid.times))
    pieces = lift_piecewise_linear(refined, 2).increments
    first, second = prefix_tensors(pieces)
    terms = _outer(second[:-1], 2, pieces[0], 1) + _outer(first[:-1], 1, pieces[1], 2)
    return terms.sum(axis=0)


def level3_consistency_check(path: SamplePath, depth: int = 10) -> float:
    """
    Residual between the Chen-composed level-3 tensor and the limit of the
    extension sums, the limit estimated from the last two halvings by
    Richardson extrapolation (the residual decays exactly like 4^{-depth}).
    """
    if depth < 1:
        raise ConfigurationError("Need depth >= 1 to extrapolate the limit.")
    exact = prefix_levels(lift_piecewise_linear(path, 3))[2][-1]
    coarse = _extension_sum(path, depth - 1)
    fine = _extension_sum(path, depth)
    limit = (4.0 * fine - coarse) / 3.0
    residual = float(_hs_norm(limit - exact, 3))
    logger.debug("Level-3 extrapolated residual at depth %d: %.3e", depth, residual)
    return residual
