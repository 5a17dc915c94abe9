from typing import Any, Iterator, List, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from wong_zakai.core.errors import ConfigurationError, GridError

# Absolute tolerance used when matching times against grid nodes.
GRID_ATOL = 1e-12


def _frozen_array(value: Any, dtype: type = float) -> np.ndarray:
    array = np.array(value, dtype=dtype, copy=True)
    array.flags.writeable = False
    return array


class TimeGrid(BaseModel):
    """
    Strictly increasing time nodes on [0, 1].

    Attributes:
        times (np.ndarray): Node times, first 0 and last 1.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    times: np.ndarray

    @field_validator("times", mode="before")
    @classmethod
    def _validate_times(cls, value: Any) -> np.ndarray:
        times = np.array(value, dtype=float, copy=True)
        if times.ndim != 1 or times.size < 2:
            raise GridError("A time grid needs at least two nodes.")
        if not np.all(np.isfinite(times)):
            raise GridError("Grid times must be finite.")
        if not np.all(np.diff(times) > 0.0):
            raise GridError("Grid times must be strictly increasing.")
        if abs(times[0]) > GRID_ATOL or abs(times[-1] - 1.0) > GRID_ATOL:
            raise GridError(
                f"Grids must span [0, 1], got [{times[0]}, {times[-1]}]. "
                "Other horizons are not supported."
            )
        times[0], times[-1] = 0.0, 1.0
        return _frozen_array(times)

    @classmethod
    def uniform(cls, m: int) -> "TimeGrid":
        """
        Equal partition {j/m : 0 <= j <= m}.
        """
        if m < 1:
            raise GridError(f"Uniform grid needs m >= 1, got {m}.")
        return cls(times=np.arange(m + 1) / m)

    @property
    def n_intervals(self) -> int:
        return int(self.times.size - 1)

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def mesh(self) -> float:
        return float(self.steps.max())

    @property
    def is_uniform(self) -> bool:
        steps = self.steps
        return bool(np.allclose(steps, steps[0], rtol=1e-10, atol=0.0))

    def same_as(self, other: "TimeGrid") -> bool:
        return self.times.shape == other.times.shape and bool(
            np.allclose(self.times, other.times, rtol=0.0, atol=GRID_ATOL)
        )

    def index_of(self, t: float) -> int:
        """
        Returns the index of the node equal to t.

        Raises:
            GridError: If t is not a node of this grid.
        """
        return int(self.indices_of([t])[0])

    def indices_of(self, times: Union[Sequence[float], np.ndarray]) -> np.ndarray:
        """
        Returns node indices for every time in `times`.

        Raises:
            GridError: If any of the times is not a node of this grid.
        """
        query = np.asarray(times, dtype=float)
        idx = np.clip(np.searchsorted(self.times, query), 0, self.n_intervals)
        left = np.clip(idx - 1, 0, self.n_intervals)
        closer = np.where(
            np.abs(self.times[left] - query) < np.abs(self.times[idx] - query),
            left,
            idx,
        )
        missing = np.abs(self.times[closer] - query) > GRID_ATOL
        if np.any(missing):
            raise GridError(f"Times {query[missing].tolist()} are not grid nodes.")
        return closer

    def contains(self, other: "TimeGrid") -> bool:
        try:
            self.indices_of(other.times)
        except GridError:
            return False
        return True

    def refine(self, factor: int) -> "TimeGrid":
        """
        Inserts `factor - 1` equally spaced points inside every interval.
        """
        if factor < 1:
            raise GridError(f"Refinement factor must be >= 1, got {factor}.")
        fractions = np.arange(factor) / factor
        starts = self.times[:-1, None] + fractions[None, :] * self.steps[:, None]
        return TimeGrid(times=np.append(starts.ravel(), 1.0))


class SamplePath(BaseModel):
    """
    A d-dimensional path known at the grid nodes and linear in between.

    Attributes:
        grid (TimeGrid): The node times.
        values (np.ndarray): Array of shape (N + 1, d); the first row is zero.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grid: TimeGrid
    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def _validate_values(cls, value: Any) -> np.ndarray:
        values = np.array(value, dtype=float, copy=True)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise ConfigurationError("Path values must have shape (N + 1, d).")
        if np.max(np.abs(values[0]), initial=0.0) > GRID_ATOL:
            raise ConfigurationError("Paths must start at the origin.")
        values[0] = 0.0
        return _frozen_array(values)

    @model_validator(mode="after")
    def _check_grid(self) -> "SamplePath":
        if self.values.shape[0] != self.grid.times.size:
            raise ConfigurationError(
                f"{self.values.shape[0]} values for {self.grid.times.size} grid nodes."
            )
        return self

    @property
    def dimension(self) -> int:
        return int(self.values.shape[1])

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    def as_batch(self) -> "PathBatch":
        return PathBatch(grid=self.grid, values=self.values[None])

    def at(self, times: Union[Sequence[float], np.ndarray]) -> np.ndarray:
        """
        Evaluates the piecewise-linear interpolant at arbitrary times.
        """
        return self.as_batch().at(times)[0]


class PathBatch(BaseModel):
    """
    M paths sharing one grid, stored as a single array for vectorised work.

    Attributes:
        grid (TimeGrid): The common node times.
        values (np.ndarray): Array of shape (M, N + 1, d).
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grid: TimeGrid
    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def _validate_values(cls, value: Any) -> np.ndarray:
        values = np.array(value, dtype=float, copy=True)
        if values.ndim != 3:
            raise ConfigurationError("Batch values must have shape (M, N + 1, d).")
        if values.shape[0] < 1:
            raise ConfigurationError("A batch needs at least one path.")
        if np.max(np.abs(values[:, 0]), initial=0.0) > GRID_ATOL:
            raise ConfigurationError("Paths must start at the origin.")
        values[:, 0] = 0.0
        return _frozen_array(values)

    @model_validator(mode="after")
    def _check_grid(self) -> "PathBatch":
        if self.values.shape[1] != self.grid.times.size:
            raise ConfigurationError(
                f"{self.values.shape[1]} values for {self.grid.times.size} grid nodes."
            )
        return self

    @classmethod
    def from_paths(cls, paths: Sequence[SamplePath]) -> "PathBatch":
        if not paths:
            raise ConfigurationError("Cannot build a batch from zero paths.")
        grid = paths[0].grid
        for path in paths[1:]:
            if not path.grid.same_as(grid):
                raise GridError("All paths of a batch must share one grid.")
        return cls(grid=grid, values=np.stack([p.values for p in paths]))

    @property
    def dimension(self) -> int:
        return int(self.values.shape[2])

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=1)

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def __getitem__(self, index: int) -> SamplePath:
        return SamplePath(grid=self.grid, values=self.values[index])

    def paths(self) -> Iterator[SamplePath]:
        for index in range(len(self)):
            yield self[index]

    def subset(self, indices: Union[slice, Sequence[int], np.ndarray]) -> "PathBatch":
        return PathBatch(grid=self.grid, values=self.values[indices])

    def at(self, times: Union[Sequence[float], np.ndarray]) -> np.ndarray:
        """
        Evaluates all interpolants at `times`; returns shape (M, len(times), d).
        """
        query = np.asarray(times, dtype=float)
        idx = np.clip(
            np.searchsorted(self.grid.times, query, side="right") - 1,
            0,
            self.grid.n_intervals - 1,
        )
        weight = (query - self.grid.times[idx]) / self.grid.steps[idx]
        left = self.values[:, idx]
        right = self.values[:, idx + 1]
        return left + weight[None, :, None] * (right - left)


def as_batch(paths: Union[SamplePath, PathBatch, List[SamplePath]]) -> PathBatch:
    if isinstance(paths, PathBatch):
        return paths
    if isinstance(paths, SamplePath):
        return paths.as_batch()
    return PathBatch.from_paths(paths)
