import logging
import math
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from wong_zakai.core.errors import ConfigurationError

logger = logging.getLogger(__name__)

PRESETS_PATH = Path(__file__).parent / "presets.yaml"


class VectorFieldModel(BaseModel):
    """
    Coefficients (sigma, b) = ([V_1..V_d], V_0) of the driven equation.

    The fields are stored as one e x (d + 1) matrix-valued function whose last
    column is the drift, so the drift is driven by time like an extra driver
    component with unit slope:

        V(y) = offset + linear . y + amplitude * cos(frequency . y + phase)

    Every derivative is exact: the l-th derivative of the cosine part is
    amplitude * cos(frequency . y + phase + l pi / 2) * frequency^{(x)l}.

    Attributes:
        name (str): Preset id or a free label.
        state_dim (int): e.
        driver_dim (int): d.
        offset (np.ndarray): e x (d + 1).
        linear (np.ndarray): e x (d + 1) x e.
        amplitude (np.ndarray): e x (d + 1).
        frequency (np.ndarray): e x (d + 1) x e.
        phase (np.ndarray): e x (d + 1).
        max_order (int): Highest derivative order the model serves.
        parameters (Dict[str, Any]): Parameters the model was built from.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    name: str
    state_dim: int = Field(ge=1)
    driver_dim: int = Field(ge=1)
    offset: np.ndarray
    linear: np.ndarray
    amplitude: np.ndarray
    frequency: np.ndarray
    phase: np.ndarray
    max_order: int = Field(default=4, ge=1)
    parameters: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("offset", "linear", "amplitude", "frequency", "phase", mode="before")
    @classmethod
    def _validate_array(cls, value: Any) -> np.ndarray:
        array = np.array(value, dtype=float, copy=True)
        if not np.all(np.isfinite(array)):
            raise ConfigurationError("Vector field coefficients must be finite.")
        array.flags.writeable = False
        return array

    @model_validator(mode="after")
    def _check_shapes(self) -> "VectorFieldModel":
        e, cols = self.state_dim, self.driver_dim + 1
        expected = {
            "offset": (e, cols),
            "linear": (e, cols, e),
            "amplitude": (e, cols),
            "frequency": (e, cols, e),
            "phase": (e, cols),
        }
        for field_name, shape in expected.items():
            actual = getattr(self, field_name).shape
            if actual != shape:
                raise ConfigurationError(
                    f"{self.name}: {field_name} has shape {actual}, expected {shape}."
                )
        return self

    @property
    def bounded(self) -> bool:
        return not np.any(self.linear)

    @property
    def has_constant_sigma(self) -> bool:
        d = self.driver_dim
        return not np.any(self.linear[:, :d]) and not np.any(self.amplitude[:, :d])

    @property
    def is_affine(self) -> bool:
        """
        Constant sigma and affine drift (the Gaussian family at H = 1/2).
        """
        return self.has_constant_sigma and not np.any(self.amplitude[:, self.driver_dim])

    def fields(self, y: np.ndarray) -> np.ndarray:
        """
        V(y) for a batch of states y of shape (M, e); returns (M, e, d + 1).
        """
        return self.derivative(y, 0)

    def sigma(self, y: np.ndarray) -> np.ndarray:
        return self.fields(y)[..., : self.driver_dim]

    def drift(self, y: np.ndarray) -> np.ndarray:
        return self.fields(y)[..., self.driver_dim]

    def derivative(self, y: np.ndarray, order: int) -> np.ndarray:
        """
        The order-th derivative of V at y, shape (M, e, d + 1) + (e,) * order.
        The trailing axes are the differentiation directions.

        Raises:
            ConfigurationError: If order exceeds `max_order`.
        """
        if not 0 <= order <= self.max_order:
            raise ConfigurationError(
                f"{self.name} provides derivatives up to order {self.max_order}, "
                f"got {order}."
            )
        y = np.atleast_2d(np.asarray(y, dtype=float))
        phase = np.einsum("ijk,mk->mij", self.frequency, y) + self.phase
        wave = self.amplitude * np.cos(phase + order * math.pi / 2.0)
        if order == 0:
            return self.offset + np.einsum("ijk,mk->mij", self.linear, y) + wave
        tensor = wave.reshape(wave.shape + (1,) * order)
        for axis in range(order):
            shape = self.frequency.shape[:2] + (1,) * axis + (self.state_dim,)
            shape = shape + (1,) * (order - axis - 1)
            tensor = tensor * self.frequency.reshape(shape)
        if order == 1:
            tensor = tensor + self.linear
        return tensor

    def sup_norms(self, max_order: Optional[int] = None) -> List[float]:
        """
        Upper bounds of sup_y |grad^l V(y)| (Hilbert-Schmidt) for l = 0..max_order.
        Infinite at l = 0 when the model has a linear part.
        """
        top = self.max_order if max_order is None else max_order
        amp = np.abs(self.amplitude)
        freq = np.linalg.norm(self.frequency, axis=-1)
        norms = []
        for order in range(top + 1):
            wave = float(np.sqrt(np.sum((amp * freq**order) ** 2)))
            if order == 0:
                norms.append(
                    math.inf if not self.bounded
                    else float(np.linalg.norm(self.offset)) + wave
                )
            elif order == 1:
                norms.append(float(np.linalg.norm(self.linear)) + wave)
            else:
                norms.append(wave)
        return norms


class PresetDefinition(BaseModel):
    """
    One entry of presets.yaml.
    """

    id: str
    kind: str
    description: str
    defaults: Dict[str, Any] = Field(default_factory=dict)


def _as_matrix(value: Any, rows: int, cols: int, label: str) -> np.ndarray:
    array = np.array(value, dtype=float)
    if array.ndim == 0:
        array = array * np.eye(rows, cols)
    if array.shape != (rows, cols):
        raise ConfigurationError(f"{label} must have shape {(rows, cols)}, got {array.shape}.")
    return array


def _build_affine(
    name: str, sigma: np.ndarray, drift_matrix: np.ndarray, drift_offset: np.ndarray,
    params: Dict[str, Any],
) -> VectorFieldModel:
    e, d = sigma.shape
    offset = np.zeros((e, d + 1))
    offset[:, :d] = sigma
    offset[:, d] = drift_offset
    linear = np.zeros((e, d + 1, e))
    linear[:, d, :] = drift_matrix
    return VectorFieldModel(
        name=name,
        state_dim=e,
        driver_dim=d,
        offset=offset,
        linear=linear,
        amplitude=np.zeros((e, d + 1)),
        frequency=np.zeros((e, d + 1, e)),
        phase=np.zeros((e, d + 1)),
        max_order=int(params.get("max_order", 4)),
        parameters=params,
    )


def _identity(name: str, params: Dict[str, Any]) -> VectorFieldModel:
    dim = int(params["dimension"])
    return _build_affine(name, np.eye(dim), np.zeros((dim, dim)), np.zeros(dim), params)


def _ou(name: str, params: Dict[str, Any]) -> VectorFieldModel:
    dim = int(params["dimension"])
    theta, sigma, mean = float(params["theta"]), float(params["sigma"]), params["mean"]
    return _build_affine(
        name,
        sigma * np.eye(dim),
        -theta * np.eye(dim),
        theta * np.broadcast_to(np.asarray(mean, dtype=float), (dim,)),
        params,
    )


def _affine(name: str, params: Dict[str, Any]) -> VectorFieldModel:
    sigma = np.atleast_2d(np.array(params["sigma"], dtype=float))
    e = sigma.shape[0]
    drift_matrix = _as_matrix(params["drift_matrix"], e, e, "drift_matrix")
    drift_offset = np.broadcast_to(np.array(params["drift_offset"], dtype=float), (e,))
    return _build_affine(name, sigma, drift_matrix, drift_offset, params)


def _field(name: str, params: Dict[str, Any]) -> VectorFieldModel:
    offset = np.atleast_2d(np.array(params["offset"], dtype=float))
    e, cols = offset.shape
    linear = params.get("linear", np.zeros((e, cols, e)))
    return VectorFieldModel(
        name=name,
        state_dim=e,
        driver_dim=cols - 1,
        offset=offset,
        linear=linear,
        amplitude=params["amplitude"],
        frequency=params["frequency"],
        phase=params["phase"],
        max_order=int(params.get("max_order", 4)),
        parameters=params,
    )


_BUILDERS: Dict[str, Callable[[str, Dict[str, Any]], VectorFieldModel]] = {
    "identity": _identity,
    "ou": _ou,
    "affine": _affine,
    "field": _field,
}


def load_presets(file_path: Path = PRESETS_PATH) -> Dict[str, PresetDefinition]:
    """
    Reads the preset registry from YAML.

    Raises:
        ConfigurationError: If the file is malformed or uses an unknown kind.
    """
    with open(file_path, "r", encoding="utf-8") as file:
        data = yaml.safe_load(file)
    entries = data.get("presets", []) if isinstance(data, dict) else None
    if not isinstance(entries, list):
        raise ConfigurationError("The 'presets' key must hold a list.")
    registry: Dict[str, PresetDefinition] = {}
    for entry in entries:
        if not isinstance(entry, dict):
            continue
        preset = PresetDefinition(**entry)
        if preset.kind not in _BUILDERS:
            raise ConfigurationError(f"Preset {preset.id} has unknown kind {preset.kind}.")
        registry[preset.id] = preset
    return registry


@lru_cache(maxsize=1)
def _default_registry() -> Dict[str, PresetDefinition]:
    return load_presets()


def build_model(
    preset_id: str,
    overrides: Optional[Dict[str, Any]] = None,
    registry: Optional[Dict[str, PresetDefinition]] = None,
) -> VectorFieldModel:
    """
    Instantiates a preset with parameter overrides.

    Raises:
        ConfigurationError: If the preset is unknown or its parameters are invalid.
    """
    presets = registry if registry is not None else _default_registry()
    if preset_id not in presets:
        raise ConfigurationError(
            f"Unknown preset '{preset_id}'. Available: {sorted(presets)}."
        )
    preset = presets[preset_id]
    params = {**preset.defaults, **(overrides or {})}
    try:
        model = _BUILDERS[preset.kind](preset_id, params)
    except KeyError as exc:
        raise ConfigurationError(f"Preset {preset_id} is missing parameter {exc}.") from exc
    logger.debug("Built model %s (e=%d, d=%d)", preset_id, model.state_dim, model.driver_dim)
    return model
