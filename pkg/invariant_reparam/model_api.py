"""The contract every analyzable model satisfies.

A ``ModelSpec`` bundles the auxiliary mapping (parameters -> fine-grid output), the
positive parameter box, the observation operator selecting observed grid points and
the error model linking predictions to data. Models are immutable; auxiliary
functions should be module-level callables (or ``functools.partial`` of them) so that
problems can be shipped to worker processes.
"""

from __future__ import annotations

import dataclasses
import importlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from invariant_reparam.errors import ConfigError, IIRError, NumericalError, PreconditionError
from invariant_reparam.numerics import Dual

logger = logging.getLogger(__name__)

ERROR_KINDS = ("normal-additive", "log-normal", "normal-moments")


@dataclass(frozen=True)
class ObservationOperator:
    """Row-selection form of B_obs: the fine-grid indices that are observed."""

    indices: Tuple[int, ...]

    def __post_init__(self) -> None:
        idx = tuple(int(i) for i in self.indices)
        object.__setattr__(self, "indices", idx)
        if any(i < 0 for i in idx):
            raise PreconditionError(f"observation indices must be non-negative: {idx}")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise PreconditionError(f"observation indices must be strictly increasing: {idx}")

    @classmethod
    def evenly_spaced(
        cls, n_fine: int, n_obs: int, interior: bool = False
    ) -> "ObservationOperator":
        """Equally spaced observation points on an (n_fine)-point grid.

        With ``interior`` the two grid endpoints are excluded.
        """
        gaps = n_obs + 1 if interior else n_obs - 1
        if gaps < 1 or (n_fine - 1) % gaps:
            raise PreconditionError(
                f"cannot place {n_obs} equally spaced observations on {n_fine} grid points"
            )
        step = (n_fine - 1) // gaps
        first = step if interior else 0
        return cls(tuple(first + k * step for k in range(n_obs)))

    def validate(self, n_fine: int) -> None:
        if self.indices and self.indices[-1] >= n_fine:
            raise PreconditionError(
                f"observation index {self.indices[-1]} outside fine grid of {n_fine} points"
            )

    def apply(self, values: Any) -> np.ndarray:
        arr = np.asarray(values) if not isinstance(values, np.ndarray) else values
        return arr[list(self.indices)]

    def matrix(self, n_fine: int) -> np.ndarray:
        """Explicit 0/1 selection matrix B_obs."""
        self.validate(n_fine)
        B = np.zeros((len(self.indices), n_fine))
        B[np.arange(len(self.indices)), list(self.indices)] = 1.0
        return B


@dataclass(frozen=True)
class ErrorModel:
    """How observations scatter around predictions.

    ``normal-moments`` means the auxiliary output is a (mean, variance) pair and each
    observation is one replicate drawn from that normal distribution.
    """

    kind: str
    sigma: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ERROR_KINDS:
            raise PreconditionError(f"unknown error model kind '{self.kind}'")
        if self.kind != "normal-moments" and not self.sigma > 0:
            raise PreconditionError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True, eq=False)
class Dataset:
    observations: np.ndarray
    n_replicates: int = 1

    def __post_init__(self) -> None:
        obs = np.asarray(self.observations, dtype=float).ravel()
        object.__setattr__(self, "observations", obs)
        if self.n_replicates < 1:
            raise PreconditionError("n_replicates must be >= 1")
        if obs.size % self.n_replicates:
            raise PreconditionError(
                f"{obs.size} observations do not split into {self.n_replicates} replicates"
            )

    def replicates(self) -> np.ndarray:
        """Observations reshaped to (n_replicates, points per replicate)."""
        return self.observations.reshape(self.n_replicates, -1)

    def to_dict(self) -> Dict[str, Any]:
        return {"observations": self.observations.tolist(), "n_replicates": self.n_replicates}


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """A model's auxiliary mapping, parameter box, grids and error model."""

    name: str
    param_names: Tuple[str, ...]
    bounds: Tuple[Tuple[float, float], ...]
    auxiliary: Callable[[Sequence[Any]], Sequence[Any]]
    fine_grid: np.ndarray
    obs_operator: ObservationOperator
    error_model: ErrorModel
    true_theta: Optional[np.ndarray] = None
    description: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "param_names", tuple(self.param_names))
        object.__setattr__(
            self, "bounds", tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        )
        object.__setattr__(self, "fine_grid", np.asarray(self.fine_grid, dtype=float))
        if self.true_theta is not None:
            object.__setattr__(self, "true_theta", np.asarray(self.true_theta, dtype=float))
        if len(self.bounds) != len(self.param_names):
            raise PreconditionError(
                f"{self.name}: {len(self.bounds)} bounds for {len(self.param_names)} parameters"
            )
        for pname, (lo, hi) in zip(self.param_names, self.bounds):
            if not 0.0 < lo < hi:
                raise PreconditionError(
                    f"{self.name}: bounds for {pname} must satisfy 0 < lower < upper"
                )
        if self.fine_grid.size:
            self.obs_operator.validate(self.fine_grid.size)

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    @property
    def lower(self) -> np.ndarray:
        return np.array([b[0] for b in self.bounds])

    @property
    def upper(self) -> np.ndarray:
        return np.array([b[1] for b in self.bounds])

    @property
    def obs_dimension(self) -> int:
        """Observations per replicate."""
        if self.error_model.kind == "normal-moments":
            return 1
        return len(self.obs_operator.indices)

    def in_bounds(self, theta: Any) -> bool:
        t = np.asarray(theta, dtype=float)
        return bool(np.all(t >= self.lower) and np.all(t <= self.upper))


def _as_output(values: Sequence[Any]) -> np.ndarray:
    vals = list(values)
    if any(isinstance(v, Dual) for v in vals):
        out = np.empty(len(vals), dtype=object)
        for i, v in enumerate(vals):
            out[i] = v
        return out
    return np.asarray(vals, dtype=float)


def predict_fine(model: ModelSpec, theta: Sequence[Any]) -> np.ndarray:
    """Auxiliary mapping output on the fine grid (object array when theta holds Duals).

    Raises:
        NumericalError: the model could not be evaluated at theta
    """
    try:
        out = _as_output(model.auxiliary(list(theta)))
    except IIRError:
        raise
    except (ArithmeticError, ValueError) as e:
        shown = [float(t.value if isinstance(t, Dual) else t) for t in theta]
        raise NumericalError(f"Failed to evaluate model '{model.name}' at {shown}: {e}") from e
    if model.fine_grid.size and out.size != model.fine_grid.size:
        raise NumericalError(
            f"model '{model.name}' returned {out.size} values for a "
            f"{model.fine_grid.size}-point grid"
        )
    return out


def predict_obs(model: ModelSpec, theta: Sequence[Any]) -> np.ndarray:
    """Fine prediction restricted to the observation indices."""
    return model.obs_operator.apply(predict_fine(model, theta))


def with_observation(model: ModelSpec, indices: Sequence[int]) -> ModelSpec:
    """Copy of ``model`` observed at different fine-grid indices."""
    return dataclasses.replace(model, obs_operator=ObservationOperator(tuple(indices)))


def synthetic_dataset(
    model: ModelSpec,
    theta: Sequence[float],
    seed: int,
    n_replicates: int = 1,
) -> Dataset:
    """Draw a data realization from the model's error model at theta."""
    rng = np.random.default_rng(seed)
    logger.debug("Drawing %d synthetic replicate(s) for %s with seed %d",
                 n_replicates, model.name, seed)
    kind = model.error_model.kind
    sigma = model.error_model.sigma
    if kind == "normal-moments":
        mu, var = (float(v) for v in predict_fine(model, theta)[:2])
        if var <= 0:
            raise NumericalError(f"model '{model.name}' implies non-positive variance {var}")
        obs = rng.normal(mu, np.sqrt(var), size=n_replicates)
        return Dataset(obs, n_replicates)
    mean = np.asarray(predict_obs(model, theta), dtype=float)
    noise = sigma * rng.standard_normal((n_replicates, mean.size))
    if kind == "log-normal":
        if np.any(mean <= 0):
            raise NumericalError("log-normal synthetic data needs positive predictions")
        obs = np.exp(np.log(mean) + noise)
    else:
        obs = mean + noise
    return Dataset(obs.ravel(), n_replicates)


def load_dataset(path: Union[str, Path]) -> Dataset:
    """Read observations from JSON (list or object) or from a one-value-per-line file.

    Raises:
        ConfigError: unreadable or malformed file
    """
    p = Path(path).expanduser()
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Failed to read data file {p}: {e}", field="data.path") from e
    try:
        if p.suffix.lower() == ".json":
            raw = json.loads(text)
            if isinstance(raw, dict):
                return Dataset(raw["observations"], int(raw.get("n_replicates", 1)))
            return Dataset(raw, 1)
        values = [float(line) for line in text.split() if line.strip()]
        return Dataset(values, 1)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"Failed to parse data file {p}: {e}", field="data.path") from e


_REGISTRY: Dict[str, Callable[[], ModelSpec]] = {}


def register_model(name: str, factory: Callable[[], ModelSpec], replace: bool = False) -> None:
    """Make a model available by name to ``get_model`` and run configurations."""
    if name in _REGISTRY and not replace:
        raise PreconditionError(f"model '{name}' is already registered")
    _REGISTRY[name] = factory


def _ensure_builtins() -> None:
    importlib.import_module("invariant_reparam.models")


def available_models() -> List[str]:
    _ensure_builtins()
    return sorted(_REGISTRY)


def get_model(name: str) -> ModelSpec:
    _ensure_builtins()
    try:
        factory = _REGISTRY[name]
    except KeyError as e:
        raise ConfigError(
            f"unknown model '{name}' (available: {', '.join(sorted(_REGISTRY))})",
            field="model",
        ) from e
    return factory()


def resolve_model(reference: str) -> ModelSpec:
    """Built-in name, registered name, or ``package.module:attribute``.

    The attribute may be a ModelSpec or a zero-argument callable returning one.
    """
    _ensure_builtins()
    if reference in _REGISTRY or ":" not in reference:
        return get_model(reference)
    module_name, _, attr = reference.partition(":")
    try:
        obj = getattr(importlib.import_module(module_name), attr)
    except (ImportError, AttributeError) as e:
        raise ConfigError(f"Failed to load user model '{reference}': {e}", field="model") from e
    spec = obj if isinstance(obj, ModelSpec) else obj()
    if not isinstance(spec, ModelSpec):
        raise ConfigError(f"'{reference}' did not produce a ModelSpec", field="model")
    return spec
