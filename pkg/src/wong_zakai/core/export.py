import itertools
import json
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from wong_zakai.core.density import DensityEstimate
from wong_zakai.core.experiments import ConvergenceReport
from wong_zakai.core.malliavin import DerivativePath, MalliavinCovariance
from wong_zakai.core.models import PathBatch, SamplePath, as_batch
from wong_zakai.core.ode import SolvedSystem
from wong_zakai.core.roughpath import RoughPathLevels

PathLike = Union[str, Path]


def _prepare(file_path: PathLike) -> Path:
    path = Path(file_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_json(data: Dict[str, Any], file_path: PathLike) -> Path:
    path = _prepare(file_path)
    with open(path, "w", encoding="utf-8") as file:
        json.dump(data, file, indent=2, default=str)
    return path


def write_matrix_csv(matrix: np.ndarray, file_path: PathLike) -> Path:
    """
    Plain square matrix, e.g. an increment Gram or a covariance.
    """
    path = _prepare(file_path)
    np.savetxt(path, np.atleast_2d(matrix), delimiter=",", fmt="%.17g")
    return path


def write_paths_csv(paths: Union[SamplePath, PathBatch], file_path: PathLike) -> Path:
    """
    Columns path_id, t, component_1..component_d.
    """
    batch = as_batch(paths)
    m, nodes, d = batch.values.shape
    ids = np.repeat(np.arange(m), nodes)
    times = np.tile(batch.grid.times, m)
    table = np.column_stack([ids, times, batch.values.reshape(m * nodes, d)])
    header = ",".join(["path_id", "t"] + [f"component_{i + 1}" for i in range(d)])
    path = _prepare(file_path)
    fmt = ["%d"] + ["%.17g"] * (d + 1)
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt=fmt)
    return path


def write_lift_csv(levels: RoughPathLevels, file_path: PathLike) -> Path:
    """
    Columns interval, level, multi_index, value; multi-indices are 1-based and
    dot-joined.
    """
    d = levels.dimension
    rows = []
    for k, tensor in enumerate(levels.increments, start=1):
        indices = [
            ".".join(str(i + 1) for i in idx)
            for idx in itertools.product(range(d), repeat=k)
        ]
        flat = tensor.reshape(levels.n_intervals, -1)
        for j in range(levels.n_intervals):
            rows.extend(
                (j, k, label, repr(float(v))) for label, v in zip(indices, flat[j])
            )
    path = _prepare(file_path)
    np.savetxt(
        path,
        np.array(rows, dtype=object).reshape(-1, 4),
        delimiter=",",
        header="interval,level,multi_index,value",
        comments="",
        fmt="%s",
    )
    return path


def write_trajectory_csv(solved: SolvedSystem, file_path: PathLike, index: int = 0) -> Path:
    """
    Columns t, y_1..y_e and, when recorded, J_ij and K_ij row by row.
    """
    e = solved.state_dim
    columns = [solved.grid.times[:, None], solved.y[index]]
    header = ["t"] + [f"y_{i + 1}" for i in range(e)]
    if solved.jacobian is not None and solved.inverse is not None:
        pairs = [f"{a + 1}{b + 1}" for a in range(e) for b in range(e)]
        columns += [
            solved.jacobian[index].reshape(-1, e * e),
            solved.inverse[index].reshape(-1, e * e),
        ]
        header += [f"J_{p}" for p in pairs] + [f"K_{p}" for p in pairs]
    path = _prepare(file_path)
    np.savetxt(
        path,
        np.column_stack(columns),
        delimiter=",",
        header=",".join(header),
        comments="",
        fmt="%.17g",
    )
    return path


def write_derivative_csv(
    derivative: DerivativePath, file_path: PathLike, index: int = 0
) -> Path:
    e = derivative.values.shape[-1]
    path = _prepare(file_path)
    np.savetxt(
        path,
        np.column_stack([derivative.grid.times, derivative.values[index]]),
        delimiter=",",
        header=",".join(["t"] + [f"xi_{i + 1}" for i in range(e)]),
        comments="",
        fmt="%.17g",
    )
    return path


def write_covariance(
    covariance: MalliavinCovariance, file_path: PathLike
) -> Path:
    return write_matrix_csv(covariance.matrix, file_path)


def write_density(
    estimate: DensityEstimate,
    file_path: PathLike,
    config: Optional[Dict[str, Any]] = None,
) -> Path:
    """
    Columns xi_1..xi_e, p_hat, stderr plus a JSON sidecar next to the CSV.
    """
    e = estimate.xi.shape[1]
    path = _prepare(file_path)
    np.savetxt(
        path,
        np.column_stack([estimate.xi, estimate.values, estimate.stderr]),
        delimiter=",",
        header=",".join([f"xi_{i + 1}" for i in range(e)] + ["p_hat", "stderr"]),
        comments="",
        fmt="%.17g",
    )
    write_json(
        {**estimate.metadata(), "config": config or {}}, path.with_suffix(".json")
    )
    return path


def write_report(report: ConvergenceReport, directory: PathLike) -> Path:
    """
    study.csv (m, stat_mean, stat_median, stat_q90, stderr) and report.json.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(
        out / "study.csv",
        report.table().reshape(-1, 5),
        delimiter=",",
        header="m,stat_mean,stat_median,stat_q90,stderr",
        comments="",
        fmt=["%d", "%.17g", "%.17g", "%.17g", "%.17g"],
    )
    with open(out / "report.json", "w", encoding="utf-8") as file:
        file.write(report.model_dump_json(indent=2))
    return out
