from .core import (
    PathBatch,
    SamplePath,
    TimeGrid,
    VectorFieldModel,
    WongZakaiError,
    build_model,
    lift_piecewise_linear,
    solve_driven,
)

__all__ = [
    "PathBatch",
    "SamplePath",
    "TimeGrid",
    "VectorFieldModel",
    "WongZakaiError",
    "build_model",
    "lift_piecewise_linear",
    "solve_driven",
]
