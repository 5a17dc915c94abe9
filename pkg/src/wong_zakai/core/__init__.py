from .errors import (
    ConfigurationError,
    IntegrationError,
    NumericalError,
    WongZakaiError,
)
from .models import PathBatch, SamplePath, TimeGrid
from .ode import SolvedSystem, SolverOptions, solve_driven
from .roughpath import RoughPathLevels, lift_piecewise_linear
from .vector_fields import VectorFieldModel, build_model

__all__ = [
    "ConfigurationError",
    "IntegrationError",
    "NumericalError",
    "WongZakaiError",
    "PathBatch",
    "SamplePath",
    "TimeGrid",
    "SolvedSystem",
    "SolverOptions",
    "solve_driven",
    "RoughPathLevels",
    "lift_piecewise_linear",
    "VectorFieldModel",
    "build_model",
]
