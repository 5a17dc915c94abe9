"""
Convergence studies over an m-schedule with coupled fine-grid references.
"""

import json
import logging
import math
import time
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import scipy
import scipy.stats
import yaml
from pydantic import BaseModel, Field, field_validator, model_validator

from _helper.parallel import map_chunks
from _helper.resources import process_footprint
from wong_zakai.core.density import (
    XiGrid,
    affine_moments,
    default_delta,
    estimate_density,
    reference_evaluator,
    sup_error,
    terminal_values,
)
from wong_zakai.core.errors import (
    ConfigurationError,
    UnsupportedOracleError,
)
from wong_zakai.core.fbm import (
    as_hurst,
    restrict_to_partition,
    sample_fbm,
    sample_independent_direction,
)
from wong_zakai.core.malliavin import directional_derivative
from wong_zakai.core.models import PathBatch, TimeGrid
from wong_zakai.core.ode import SolverOptions, solution_sup_distances, solve_driven
from wong_zakai.core.roughpath import (
    lift_piecewise_linear,
    n_functional,
    prefix_tensors,
    pvar_distance,
    segment_tensors,
)
from wong_zakai.core.vector_fields import VectorFieldModel, build_model

logger = logging.getLogger(__name__)

StudyKind = Literal["pathwise", "lift", "density", "nfunc-stats", "derivative"]


class StudyConfig(BaseModel):
    """
    One convergence study.

    Attributes:
        kind (StudyKind): Which statistic is measured.
        preset (str): Vector-field preset id.
        parameters (Dict[str, Any]): Overrides of the preset defaults.
        hurst (float): H.
        schedule (List[int]): Strictly increasing partition sizes m.
        m_ref (int): Reference partition size, a multiple of every m.
        delta (Optional[float]): Bandwidth exponent; defaults to 2H - 1/2.
        samples (int): Monte Carlo paths per m (initial count for density studies).
        max_samples (int): Cap for the density auto-escalation.
        t (float): Evaluation time, a node of every partition.
        seed (int): Master seed.
        dimension (Optional[int]): Driver dimension for lift and nfunc studies.
        moments (List[float]): q for the reported L^q norms of the statistic.
        lift_metric (str): 'levy-sup' or the slow 'pvar' distance.
        p (Optional[float]): Roughness exponent for p-variation statistics.
        beta (float): N-functional threshold.
        eta (List[float]): Exponents of the reported E[exp(eta N)].
        xi_points (int): Points per axis of the density grid.
        xi_width (float): Half width of the density grid in standard deviations.
        reference (str): 'auto', 'oracle' or 'self' for density studies.
    """

    kind: StudyKind
    preset: str = "identity"
    parameters: Dict[str, Any] = Field(default_factory=dict)
    hurst: float = 0.5
    schedule: List[int] = Field(default_factory=lambda: [8, 16, 32, 64, 128])
    m_ref: int = 1024
    delta: Optional[float] = None
    samples: int = 2000
    max_samples: int = 64000
    t: float = 1.0
    seed: int = 20240229
    dimension: Optional[int] = None
    moments: List[float] = Field(default_factory=lambda: [2.0, 4.0])
    lift_metric: Literal["levy-sup", "pvar"] = "levy-sup"
    p: Optional[float] = None
    beta: float = 1.0
    eta: List[float] = Field(default_factory=lambda: [0.5])
    xi_points: int = 201
    xi_width: float = 4.0
    reference: Literal["auto", "oracle", "self"] = "auto"

    @field_validator("hurst")
    @classmethod
    def _validate_hurst(cls, value: float) -> float:
        return as_hurst(value).value

    @field_validator("seed")
    @classmethod
    def _validate_seed(cls, value: int) -> int:
        if not 0 <= value < 2**64:
            raise ConfigurationError(f"Seed {value} does not fit into 64 bits.")
        return value

    @model_validator(mode="after")
    def _check_study(self) -> "StudyConfig":
        schedule = self.schedule
        if not schedule or any(m < 1 for m in schedule):
            raise ConfigurationError("The m-schedule must hold positive sizes.")
        if any(b <= a for a, b in zip(schedule, schedule[1:])):
            raise ConfigurationError(f"Schedule {schedule} is not strictly increasing.")
        if any(self.m_ref % m for m in schedule):
            raise ConfigurationError(
                f"Every m must divide m_ref = {self.m_ref} so partitions are coupled."
            )
        if self.m_ref < 8 * max(schedule):
            raise ConfigurationError(
                f"m_ref = {self.m_ref} must be at least 8 * max(schedule)."
            )
        if self.samples < 100:
            raise ConfigurationError(f"Need M >= 100 samples, got {self.samples}.")
        if self.max_samples < self.samples:
            raise ConfigurationError("max_samples must be at least samples.")
        if not 0.0 < self.t <= 1.0:
            raise ConfigurationError(f"t must lie in (0, 1], got {self.t}.")
        for m in schedule:
            TimeGrid.uniform(m).index_of(self.t)
        if self.delta is not None and not self.delta > 0.0:
            raise ConfigurationError(f"delta must be positive, got {self.delta}.")
        if self.kind in ("lift", "nfunc-stats"):
            as_hurst(self.hurst).require_lift_regime()
        if self.kind == "lift" and (self.dimension or 2) < 2:
            raise ConfigurationError("The Levy area needs a driver of dimension >= 2.")
        if not self.beta > 0.0:
            raise ConfigurationError(f"beta must be positive, got {self.beta}.")
        if any(q < 1.0 for q in self.moments):
            raise ConfigurationError("Moment exponents must be >= 1.")
        return self

    @property
    def bandwidth_exponent(self) -> float:
        return default_delta(self.hurst) if self.delta is None else self.delta

    @property
    def roughness(self) -> float:
        """
        p for p-variation statistics: configured, or 1/H plus a margin.
        """
        if self.p is not None:
            return self.p
        return 4.0 if self.kind == "nfunc-stats" else min(1.0 / self.hurst + 0.2, 3.9)


class RateFit(BaseModel):
    """
    error ~ exp(intercept) * m^{-slope}.
    """

    slope: float
    intercept: float
    slope_stderr: float
    points: int


class StudyRow(BaseModel):
    """
    Statistic of one partition size.
    """

    m: int
    samples: int
    stat_mean: float
    stat_median: float
    stat_q90: float
    stderr: float
    moments: Dict[str, float] = Field(default_factory=dict)
    extra: Dict[str, float] = Field(default_factory=dict)
    inconclusive: bool = False


class ConvergenceReport(BaseModel):
    """
    Per-m statistics, the fitted rate and the configuration that produced them.
    """

    kind: StudyKind
    rows: List[StudyRow]
    fit: Optional[RateFit] = None
    expected_slope: Optional[float] = None
    excluded: List[int] = Field(default_factory=list)
    inconclusive: bool = False
    notes: List[str] = Field(default_factory=list)
    config: StudyConfig
    provenance: Dict[str, Any] = Field(default_factory=dict)
    wall_clock_seconds: float = 0.0

    def table(self) -> np.ndarray:
        """
        Rows as (m, stat_mean, stat_median, stat_q90, stderr).
        """
        return np.array(
            [[r.m, r.stat_mean, r.stat_median, r.stat_q90, r.stderr] for r in self.rows],
            dtype=float,
        )


def load_study_config(file_path: Path, **overrides: Any) -> StudyConfig:
    """
    Reads a StudyConfig from JSON or YAML; non-None overrides replace file values.

    Raises:
        ConfigurationError: If the file cannot be parsed.
    """
    try:
        with open(file_path, "r", encoding="utf-8") as file:
            if file_path.suffix.lower() in (".yaml", ".yml"):
                data = yaml.safe_load(file)
            else:
                data = json.load(file)
    except (OSError, json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"Cannot read study config {file_path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"Study config {file_path} must hold a mapping.")
    data.update({key: value for key, value in overrides.items() if value is not None})
    return StudyConfig(**data)


def fit_rate(points: Sequence[Tuple[float, float]]) -> RateFit:
    """
    Least squares on (log m, log error); the slope is reported positive for
    decaying errors. Non-positive errors are skipped.

    Raises:
        ConfigurationError: With fewer than three positive errors.
    """
    usable = [(m, err) for m, err in points if err > 0.0 and m > 0]
    if len(usable) < 3:
        raise ConfigurationError(
            f"Rate fits need at least 3 positive errors, got {len(usable)}."
        )
    x = np.log([m for m, _ in usable])
    y = np.log([err for _, err in usable])
    result = scipy.stats.linregress(x, y)
    stderr = float(result.stderr) if np.isfinite(result.stderr) else 0.0
    return RateFit(
        slope=-float(result.slope),
        intercept=float(result.intercept),
        slope_stderr=stderr,
        points=len(usable),
    )


def summarise(m: int, errors: np.ndarray, moments: Sequence[float]) -> StudyRow:
    errors = np.asarray(errors, dtype=float)
    count = errors.size
    return StudyRow(
        m=m,
        samples=count,
        stat_mean=float(np.mean(errors)),
        stat_median=float(np.median(errors)),
        stat_q90=float(np.quantile(errors, 0.9)),
        stderr=float(np.std(errors, ddof=1) / math.sqrt(count)) if count > 1 else 0.0,
        moments={str(q): float(np.mean(np.abs(errors) ** q) ** (1.0 / q)) for q in moments},
    )


def provenance() -> Dict[str, Any]:
    try:
        package_version = version("wong-zakai")
    except PackageNotFoundError:
        package_version = "unknown"
    return {
        "package": package_version,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        **process_footprint(),
    }


def _model_for(config: StudyConfig) -> VectorFieldModel:
    overrides = dict(config.parameters)
    if config.dimension is not None and config.preset == "identity":
        overrides.setdefault("dimension", config.dimension)
    return build_model(config.preset, overrides)


def _collect(
    worker: Callable[[int, int], np.ndarray],
    count: int,
    chunk_size: int,
    threads: int,
) -> np.ndarray:
    # workers return (len(schedule), chunk) arrays
    return np.concatenate(map_chunks(worker, count, chunk_size, threads), axis=1)


def _finish(
    config: StudyConfig,
    rows: List[StudyRow],
    expected: Optional[float],
    started: float,
    notes: Optional[List[str]] = None,
) -> ConvergenceReport:
    notes = list(notes or [])
    excluded = [row.m for row in rows if row.stat_mean <= 0.0]
    if excluded:
        notes.append(f"Zero error at m = {excluded}; excluded from the fit.")
    inconclusive = any(row.inconclusive for row in rows)
    fit = None
    if inconclusive:
        notes.append("Monte Carlo noise floor not reached; no rate fitted.")
    else:
        try:
            fit = fit_rate([(row.m, row.stat_mean) for row in rows])
        except ConfigurationError as exc:
            notes.append(str(exc))
    report = ConvergenceReport(
        kind=config.kind,
        rows=rows,
        fit=fit,
        expected_slope=expected,
        excluded=excluded,
        inconclusive=inconclusive,
        notes=notes,
        config=config,
        provenance=provenance(),
        wall_clock_seconds=time.perf_counter() - started,
    )
    logger.info(
        "%s study finished: slope %s (expected %s)",
        config.kind,
        "n/a" if fit is None else f"{fit.slope:.3f} +- {fit.slope_stderr:.3f}",
        expected,
    )
    return report


def pathwise_errors(
    model: VectorFieldModel,
    hurst: float,
    schedule: Sequence[int],
    m_ref: int,
    count: int,
    seed: int,
    *,
    chunk_size: int = 1024,
    threads: int = 1,
    options: Optional[SolverOptions] = None,
) -> np.ndarray:
    """
    max over coarse nodes of |y(Q_m) - y(Q_m_ref)| per path; shape (len(schedule), count).

    Drivers on the coarse partitions are restrictions of the reference driver.
    """
    reference = TimeGrid.uniform(m_ref)
    coarse = [TimeGrid.uniform(m) for m in schedule]

    def _worker(lo: int, hi: int) -> np.ndarray:
        driver = sample_fbm(
            hurst, reference, hi - lo, seed, model.driver_dim, first_index=lo
        )
        fine = solve_driven(model, driver, with_jacobian=False, options=options)
        out = np.zeros((len(coarse), hi - lo))
        for i, grid in enumerate(coarse):
            solved = solve_driven(
                model, restrict_to_partition(driver, grid), False, options
            )
            out[i] = solution_sup_distances(solved, fine)
        return out

    return _collect(_worker, count, chunk_size, threads)


def run_pathwise_study(
    config: StudyConfig,
    *,
    chunk_size: int = 1024,
    threads: int = 1,
    options: Optional[SolverOptions] = None,
) -> ConvergenceReport:
    """
    Sup-node distance between Wong-Zakai solutions on Q_m and on Q_m_ref.
    The expected slope is 2H - 1/2, or H when y = sigma w.
    """
    if config.kind != "pathwise":
        raise ConfigurationError(f"Expected a pathwise config, got {config.kind}.")
    started = time.perf_counter()
    model = _model_for(config)
    errors = pathwise_errors(
        model,
        config.hurst,
        config.schedule,
        config.m_ref,
        config.samples,
        config.seed,
        chunk_size=chunk_size,
        threads=threads,
        options=options,
    )
    rows = [summarise(m, e, config.moments) for m, e in zip(config.schedule, errors)]
    linear_noise = model.has_constant_sigma and not np.any(model.linear) and not np.any(
        model.amplitude
    )
    expected = config.hurst if linear_noise else 2.0 * config.hurst - 0.5
    return _finish(config, rows, expected, started)


def _levy_areas(batch: PathBatch) -> np.ndarray:
    second = prefix_tensors(segment_tensors(batch.increments, 2))[1]
    return 0.5 * (second - np.swapaxes(second, -1, -2))


def lift_errors(
    hurst: float,
    schedule: Sequence[int],
    m_ref: int,
    count: int,
    seed: int,
    dimension: int,
    *,
    metric: str = "levy-sup",
    p: float = 2.5,
    chunk_size: int = 1024,
    threads: int = 1,
) -> np.ndarray:
    """
    Lift discrepancy between w(Q_m) and w(Q_m_ref) per path; shape (len(schedule), count).

    'levy-sup' is the max over reference nodes of the Levy area gap; 'pvar' is the
    inhomogeneous p-variation distance of the level-2 lifts, the max over levels k
    of the p/k-variation of the levelwise difference.
    """
    reference = TimeGrid.uniform(m_ref)
    coarse = [TimeGrid.uniform(m) for m in schedule]

    def _worker(lo: int, hi: int) -> np.ndarray:
        driver = sample_fbm(hurst, reference, hi - lo, seed, dimension, first_index=lo)
        out = np.zeros((len(coarse), hi - lo))
        fine_area = _levy_areas(driver) if metric == "levy-sup" else None
        for i, grid in enumerate(coarse):
            restricted = restrict_to_partition(driver, grid)
            if fine_area is not None:
                interpolated = PathBatch(
                    grid=reference, values=restricted.at(reference.times)
                )
                gap = _levy_areas(interpolated) - fine_area
                out[i] = np.sqrt(np.sum(gap**2, axis=(-2, -1))).max(axis=1)
            else:
                for k, path in enumerate(driver.paths()):
                    out[i, k] = pvar_distance(
                        lift_piecewise_linear(restricted[k], 2, p),
                        lift_piecewise_linear(path, 2, p),
                        p,
                    )
        return out

    return _collect(_worker, count, chunk_size, threads)


def run_lift_study(
    config: StudyConfig, *, chunk_size: int = 1024, threads: int = 1
) -> ConvergenceReport:
    """
    Coupled lift discrepancy; the expected slope is 2H - 1/2.
    """
    if config.kind != "lift":
        raise ConfigurationError(f"Expected a lift config, got {config.kind}.")
    started = time.perf_counter()
    errors = lift_errors(
        config.hurst,
        config.schedule,
        config.m_ref,
        config.samples,
        config.seed,
        config.dimension or 2,
        metric=config.lift_metric,
        p=config.roughness,
        chunk_size=chunk_size,
        threads=threads,
    )
    rows = [summarise(m, e, config.moments) for m, e in zip(config.schedule, errors)]
    notes = []
    if config.lift_metric == "levy-sup":
        notes.append("Statistic: node-sup Levy area gap (lower bound of the p-var metric).")
    return _finish(config, rows, 2.0 * config.hurst - 0.5, started, notes)


def _has_oracle(model: VectorFieldModel, hurst: float) -> bool:
    try:
        affine_moments(model, hurst, 1.0)
    except UnsupportedOracleError:
        return False
    return True


def run_density_study(
    config: StudyConfig,
    *,
    chunk_size: int = 1024,
    threads: int = 1,
    options: Optional[SolverOptions] = None,
) -> ConvergenceReport:
    """
    sup_xi |p_hat_m - p| per m, against the closed-form law or a fine-m estimate.

    M is multiplied by 4 until the standard error at the maximiser is at most a
    quarter of the measured error or max_samples is reached; rows that stay
    above the noise floor are flagged inconclusive. In self mode the noise
    combines the standard errors of both estimates.
    """
    if config.kind != "density":
        raise ConfigurationError(f"Expected a density config, got {config.kind}.")
    started = time.perf_counter()
    model = _model_for(config)
    delta = config.bandwidth_exponent
    oracle = _has_oracle(model, config.hurst)
    mode = config.reference
    if mode == "oracle" and not oracle:
        raise UnsupportedOracleError(f"No closed-form density for {model.name}.")
    if mode == "auto":
        mode = "oracle" if oracle else "self"

    if oracle:
        mean, covariance = affine_moments(model, config.hurst, config.t)
        spread = np.sqrt(np.maximum(np.diag(covariance), 1e-6))
        xi = XiGrid.uniform(
            mean - config.xi_width * spread,
            mean + config.xi_width * spread,
            config.xi_points,
        )
    else:
        pilot = terminal_values(
            model, config.hurst, config.t, config.m_ref, config.samples, config.seed
        )
        xi = XiGrid.around(pilot, config.xi_width, config.xi_points)

    def _estimate(m: int, count: int) -> Any:
        return estimate_density(
            model,
            config.hurst,
            config.t,
            m,
            delta,
            count,
            xi,
            config.seed,
            chunk_size=chunk_size,
            threads=threads,
            options=options,
        )

    notes = [f"reference: {mode}", f"delta = {delta}"]
    if mode == "oracle":
        reference: Any = reference_evaluator(model, config.hurst, config.t)
    else:
        reference = _estimate(config.m_ref, config.max_samples)
        notes.append(f"self-convergence against m_ref = {config.m_ref}")

    rows = []
    for m in config.schedule:
        count = config.samples
        while True:
            estimate = _estimate(m, count)
            gap, point = sup_error(estimate, reference)
            index = int(np.argmin(np.sum((estimate.xi - point) ** 2, axis=-1)))
            noise = float(estimate.stderr[index])
            if mode == "self":
                noise = float(np.hypot(noise, reference.stderr[index]))
            if noise <= 0.25 * gap or 4 * count > config.max_samples:
                break
            logger.info("m=%d: escalating M from %d to %d", m, count, 4 * count)
            count *= 4
        extra = {"tail_mass": estimate.tail_mass, "bandwidth": estimate.bandwidth}
        if mode == "oracle":
            smoothed = reference_evaluator(
                model, config.hurst, config.t, estimate.bandwidth
            )
            extra["mollifier_bias"] = float(
                np.max(np.abs(smoothed(estimate.xi) - reference(estimate.xi)))
            )
        rows.append(
            StudyRow(
                m=m,
                samples=count,
                stat_mean=gap,
                stat_median=gap,
                stat_q90=gap,
                stderr=noise,
                extra=extra,
                inconclusive=noise > 0.25 * gap,
            )
        )
    expected = min(2.0 * config.hurst - 0.5, delta)
    return _finish(config, rows, expected, started, notes)


def run_nfunc_stats(
    config: StudyConfig, *, chunk_size: int = 1024, threads: int = 1
) -> ConvergenceReport:
    """
    Distribution of the N-functional of w(Q_m) per m with E[exp(eta N)] and
    L^q norms of the homogeneous p-variation norm. No rate is fitted.
    """
    if config.kind != "nfunc-stats":
        raise ConfigurationError(f"Expected an nfunc-stats config, got {config.kind}.")
    started = time.perf_counter()
    p = config.roughness
    level = min(3, math.floor(p))
    dimension = config.dimension or 1
    reference = TimeGrid.uniform(config.m_ref)
    coarse = [TimeGrid.uniform(m) for m in config.schedule]

    def _worker(lo: int, hi: int) -> np.ndarray:
        driver = sample_fbm(
            config.hurst, reference, hi - lo, config.seed, dimension, first_index=lo
        )
        out = np.zeros((2, len(coarse), hi - lo))
        for i, grid in enumerate(coarse):
            for k, path in enumerate(restrict_to_partition(driver, grid).paths()):
                levels = lift_piecewise_linear(path, level, p)
                result = n_functional(levels, p, config.beta)
                out[0, i, k] = result.count
                out[1, i, k] = result.total_control ** (1.0 / p)
        return out

    stats = np.concatenate(
        map_chunks(_worker, config.samples, chunk_size, threads), axis=2
    )
    rows = []
    for i, m in enumerate(config.schedule):
        counts, norms = stats[0, i], stats[1, i]
        row = summarise(m, counts, [])
        row.moments = {
            str(q): float(np.mean(norms**q) ** (1.0 / q)) for q in config.moments
        }
        row.extra = {
            f"exp_moment_{eta}": float(np.mean(np.exp(eta * counts)))
            for eta in config.eta
        }
        rows.append(row)

    notes = []
    for eta in config.eta:
        values = [row.extra[f"exp_moment_{eta}"] for row in rows]
        ratio = max(values) / min(values)
        notes.append(f"E[exp({eta} N)] varies by a factor {ratio:.3f} across m")
        if ratio >= 2.0:
            logger.warning("Exponential moment for eta=%s varies by %.2fx", eta, ratio)
    return ConvergenceReport(
        kind=config.kind,
        rows=rows,
        notes=notes,
        config=config,
        provenance=provenance(),
        wall_clock_seconds=time.perf_counter() - started,
    )


def derivative_errors(
    model: VectorFieldModel,
    hurst: float,
    schedule: Sequence[int],
    m_ref: int,
    count: int,
    seed: int,
    t: float = 1.0,
    *,
    chunk_size: int = 1024,
    threads: int = 1,
    options: Optional[SolverOptions] = None,
) -> np.ndarray:
    """
    |Xi_1(Q_m)_t - Xi_1(Q_m_ref)_t| along an independent fBM direction theta,
    with both driver and direction restricted from the reference grid.
    """
    reference = TimeGrid.uniform(m_ref)
    coarse = [TimeGrid.uniform(m) for m in schedule]

    def _xi(driver: PathBatch, direction: PathBatch) -> np.ndarray:
        solved = solve_driven(model, driver, True, options)
        return directional_derivative(model, solved, direction, 1, options).at_node(t)

    def _worker(lo: int, hi: int) -> np.ndarray:
        size = hi - lo
        driver = sample_fbm(hurst, reference, size, seed, model.driver_dim, first_index=lo)
        theta = sample_independent_direction(
            hurst, reference, size, seed, model.driver_dim, first_index=lo
        )
        fine = _xi(driver, theta)
        out = np.zeros((len(coarse), size))
        for i, grid in enumerate(coarse):
            gap = _xi(
                restrict_to_partition(driver, grid), restrict_to_partition(theta, grid)
            ) - fine
            out[i] = np.linalg.norm(gap, axis=-1)
        return out

    return _collect(_worker, count, chunk_size, threads)


def run_derivative_study(
    config: StudyConfig,
    *,
    chunk_size: int = 1024,
    threads: int = 1,
    options: Optional[SolverOptions] = None,
) -> ConvergenceReport:
    """
    L^q convergence of the first directional derivative at t; expected slope 2H - 1/2.
    """
    if config.kind != "derivative":
        raise ConfigurationError(f"Expected a derivative config, got {config.kind}.")
    started = time.perf_counter()
    model = _model_for(config)
    errors = derivative_errors(
        model,
        config.hurst,
        config.schedule,
        config.m_ref,
        config.samples,
        config.seed,
        config.t,
        chunk_size=chunk_size,
        threads=threads,
        options=options,
    )
    rows = [summarise(m, e, config.moments) for m, e in zip(config.schedule, errors)]
    return _finish(config, rows, 2.0 * config.hurst - 0.5, started)


_RUNNERS: Dict[str, Callable[..., ConvergenceReport]] = {
    "pathwise": run_pathwise_study,
    "lift": run_lift_study,
    "density": run_density_study,
    "nfunc-stats": run_nfunc_stats,
    "derivative": run_derivative_study,
}


def run_study(
    config: StudyConfig, *, chunk_size: int = 1024, threads: int = 1
) -> ConvergenceReport:
    logger.info(
        "Running %s study: preset=%s H=%s schedule=%s m_ref=%d M=%d seed=%d",
        config.kind,
        config.preset,
        config.hurst,
        config.schedule,
        config.m_ref,
        config.samples,
        config.seed,
    )
    return _RUNNERS[config.kind](config, chunk_size=chunk_size, threads=threads)
