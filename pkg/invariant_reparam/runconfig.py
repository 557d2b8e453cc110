"""The RunConfig document: which model, which data and which analyses to run.

A run configuration is a JSON object; every field is optional except ``model``.
Validation errors are raised as ``ConfigError`` naming the offending field path, e.g.
``profiles[1].grid[0].lo``, or the JSON line and column for syntax errors.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from invariant_reparam.errors import ConfigError, PreconditionError
from invariant_reparam.profile import SPACINGS, GridSpec

logger = logging.getLogger(__name__)

DATA_SOURCES = ("auto", "published", "synthetic", "file")
COORDINATES = ("original", "reparam")
SCALES = ("largest", "smallest")

Target = Union[int, str]


@dataclass(frozen=True)
class DataConfig:
    source: str = "auto"
    path: Optional[str] = None
    seed: Optional[int] = None
    theta: Optional[Tuple[float, ...]] = None
    n_replicates: int = 1


@dataclass(frozen=True)
class Tolerances:
    structural: Optional[float] = None
    practical: Optional[float] = None
    granularity: Optional[float] = None
    scale: Optional[str] = None


@dataclass(frozen=True)
class ProfileConfig:
    name: str
    targets: Tuple[Target, ...]
    coordinates: str = "original"
    grid: Optional[Tuple[GridSpec, ...]] = None
    df: Optional[int] = None


@dataclass(frozen=True)
class PredictionConfig:
    name: str
    profile: str
    df: Optional[int] = None


@dataclass(frozen=True)
class UnionConfig:
    name: str
    bands: Tuple[str, ...]


@dataclass(frozen=True)
class RunConfig:
    model: str
    data: DataConfig = field(default_factory=DataConfig)
    reference_point: Union[str, Tuple[float, ...]] = "mle"
    tolerances: Tolerances = field(default_factory=Tolerances)
    observation_indices: Optional[Tuple[int, ...]] = None
    profiles: Tuple[ProfileConfig, ...] = ()
    predictions: Tuple[PredictionConfig, ...] = ()
    unions: Tuple[UnionConfig, ...] = ()
    rounded: bool = True
    level: Optional[float] = None
    df: Optional[int] = None
    output_dir: Optional[str] = None
    seed: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return _plain(dataclasses.asdict(self))

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form, ignoring ``output_dir``."""
        payload = self.to_dict()
        payload.pop("output_dir", None)
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Copy with the non-None overrides applied (CLI flags)."""
        return dataclasses.replace(self, **{k: v for k, v in overrides.items() if v is not None})


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _expect_keys(raw: Any, allowed: Sequence[str], where: str) -> Dict[str, Any]:
    if not isinstance(raw, dict):
        raise ConfigError("expected an object", field=where or None)
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        prefix = f"{where}." if where else ""
        raise ConfigError(f"unknown key (allowed: {', '.join(allowed)})",
                          field=f"{prefix}{unknown[0]}")
    return raw


def _int(value: Any, where: str, minimum: Optional[int] = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"expected an integer, got {value!r}", field=where)
    if minimum is not None and value < minimum:
        raise ConfigError(f"must be at least {minimum}, got {value}", field=where)
    return value


def _float(value: Any, where: str, positive: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", field=where)
    if positive and not value > 0:
        raise ConfigError(f"must be positive, got {value}", field=where)
    return float(value)


def _str(value: Any, where: str, choices: Optional[Sequence[str]] = None) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"expected a string, got {value!r}", field=where)
    if choices is not None and value not in choices:
        raise ConfigError(f"must be one of {', '.join(choices)}, got '{value}'", field=where)
    return value


def _list(value: Any, where: str) -> List[Any]:
    if not isinstance(value, list):
        raise ConfigError(f"expected a list, got {value!r}", field=where)
    return value


def _df(value: Any, where: str) -> Optional[int]:
    if value is None:
        return None
    df = _int(value, where)
    if df not in (1, 2, 3):
        raise ConfigError(f"df must be 1, 2 or 3, got {df}", field=where)
    return df


def _vector(value: Any, where: str) -> Tuple[float, ...]:
    return tuple(_float(v, f"{where}[{i}]", positive=True)
                 for i, v in enumerate(_list(value, where)))


def _data(raw: Any) -> DataConfig:
    raw = _expect_keys(raw, ("source", "path", "seed", "theta", "n_replicates"), "data")
    source = _str(raw.get("source", "auto"), "data.source", DATA_SOURCES)
    path = raw.get("path")
    if path is not None:
        path = _str(path, "data.path")
    if source == "file" and not path:
        raise ConfigError("a file data source needs a path", field="data.path")
    seed = raw.get("seed")
    return DataConfig(
        source=source,
        path=path,
        seed=None if seed is None else _int(seed, "data.seed", 0),
        theta=None if raw.get("theta") is None else _vector(raw["theta"], "data.theta"),
        n_replicates=_int(raw.get("n_replicates", 1), "data.n_replicates", 1),
    )


def _tolerances(raw: Any) -> Tolerances:
    raw = _expect_keys(raw, ("structural", "practical", "granularity", "scale"), "tolerances")
    values: Dict[str, Any] = {}
    for key in ("structural", "practical", "granularity"):
        if raw.get(key) is not None:
            values[key] = _float(raw[key], f"tolerances.{key}", positive=True)
    if raw.get("scale") is not None:
        values["scale"] = _str(raw["scale"], "tolerances.scale", SCALES)
    return Tolerances(**values)


def _grid(raw: Any, where: str) -> GridSpec:
    raw = _expect_keys(raw, ("lo", "hi", "n_points", "spacing"), where)
    for key in ("lo", "hi"):
        if key not in raw:
            raise ConfigError("required", field=f"{where}.{key}")
    lo = _float(raw["lo"], f"{where}.lo")
    hi = _float(raw["hi"], f"{where}.hi")
    n_points = _int(raw.get("n_points", 50), f"{where}.n_points", 3)
    spacing = _str(raw.get("spacing", "linear"), f"{where}.spacing", SPACINGS)
    try:
        return GridSpec(lo, hi, n_points, spacing)
    except PreconditionError as e:
        raise ConfigError(str(e), field=where) from e


def _target(value: Any, where: str) -> Target:
    if isinstance(value, str):
        return value
    return _int(value, where, 0)


def _profile(raw: Any, where: str) -> ProfileConfig:
    raw = _expect_keys(raw, ("name", "coordinates", "targets", "grid", "df"), where)
    if "targets" not in raw:
        raise ConfigError("required", field=f"{where}.targets")
    targets = tuple(_target(t, f"{where}.targets[{i}]")
                    for i, t in enumerate(_list(raw["targets"], f"{where}.targets")))
    if len(targets) not in (1, 2):
        raise ConfigError("profiles take one or two targets", field=f"{where}.targets")
    grid = None
    if raw.get("grid") is not None:
        grid = tuple(_grid(g, f"{where}.grid[{i}]")
                     for i, g in enumerate(_list(raw["grid"], f"{where}.grid")))
        if len(grid) != len(targets):
            raise ConfigError("one grid entry per target", field=f"{where}.grid")
    name = raw.get("name") or "_".join(str(t) for t in targets)
    return ProfileConfig(
        name=_str(name, f"{where}.name"),
        targets=targets,
        coordinates=_str(raw.get("coordinates", "original"), f"{where}.coordinates",
                         COORDINATES),
        grid=grid,
        df=_df(raw.get("df"), f"{where}.df"),
    )


def _prediction(raw: Any, where: str) -> PredictionConfig:
    raw = _expect_keys(raw, ("name", "profile", "df"), where)
    if "profile" not in raw:
        raise ConfigError("required", field=f"{where}.profile")
    profile = _str(raw["profile"], f"{where}.profile")
    return PredictionConfig(
        name=_str(raw.get("name", profile), f"{where}.name"),
        profile=profile,
        df=_df(raw.get("df"), f"{where}.df"),
    )


def _union(raw: Any, where: str) -> UnionConfig:
    raw = _expect_keys(raw, ("name", "bands"), where)
    if "name" not in raw or "bands" not in raw:
        raise ConfigError("name and bands are required", field=where)
    bands = tuple(_str(b, f"{where}.bands[{i}]")
                  for i, b in enumerate(_list(raw["bands"], f"{where}.bands")))
    if not bands:
        raise ConfigError("a union needs at least one band", field=f"{where}.bands")
    return UnionConfig(_str(raw["name"], f"{where}.name"), bands)


def _unique(names: Sequence[str], where: str) -> None:
    seen = set()
    for i, name in enumerate(names):
        if name in seen:
            raise ConfigError(f"duplicate name '{name}'", field=f"{where}[{i}].name")
        seen.add(name)


_TOP_LEVEL = (
    "model", "data", "reference_point", "tolerances", "observation_indices", "profiles",
    "predictions", "unions", "rounded", "level", "df", "output_dir", "seed",
)


def run_config_from_dict(raw: Any) -> RunConfig:
    """Validate a parsed JSON document into a RunConfig.

    Raises:
        ConfigError: with the field path of the first problem found
    """
    raw = _expect_keys(raw, _TOP_LEVEL, "")
    if "model" not in raw:
        raise ConfigError("required", field="model")
    model = _str(raw["model"], "model")

    ref = raw.get("reference_point", "mle")
    if isinstance(ref, str):
        if ref != "mle":
            raise ConfigError("expected 'mle' or a parameter vector", field="reference_point")
        reference: Union[str, Tuple[float, ...]] = ref
    else:
        reference = _vector(ref, "reference_point")

    obs = raw.get("observation_indices")
    observation_indices = None
    if obs is not None:
        observation_indices = tuple(_int(v, f"observation_indices[{i}]", 0)
                                    for i, v in enumerate(_list(obs, "observation_indices")))
        if not observation_indices:
            raise ConfigError("needs at least one index", field="observation_indices")

    profiles = tuple(_profile(p, f"profiles[{i}]")
                     for i, p in enumerate(_list(raw.get("profiles", []), "profiles")))
    predictions = tuple(_prediction(p, f"predictions[{i}]")
                        for i, p in enumerate(_list(raw.get("predictions", []), "predictions")))
    unions = tuple(_union(u, f"unions[{i}]")
                   for i, u in enumerate(_list(raw.get("unions", []), "unions")))
    _unique([p.name for p in profiles], "profiles")
    _unique([p.name for p in predictions] + [u.name for u in unions], "predictions")
    profile_names = {p.name for p in profiles}
    for i, p in enumerate(predictions):
        if p.profile not in profile_names:
            raise ConfigError(f"no profile named '{p.profile}'", field=f"predictions[{i}].profile")
    band_names = {p.name for p in predictions}
    for i, u in enumerate(unions):
        for j, b in enumerate(u.bands):
            if b not in band_names:
                raise ConfigError(f"no prediction named '{b}'", field=f"unions[{i}].bands[{j}]")

    level = raw.get("level")
    if level is not None:
        level = _float(level, "level")
        if not 0.0 < level < 1.0:
            raise ConfigError(f"must lie in (0, 1), got {level}", field="level")
    rounded = raw.get("rounded", True)
    if not isinstance(rounded, bool):
        raise ConfigError(f"expected true or false, got {rounded!r}", field="rounded")
    output_dir = raw.get("output_dir")

    return RunConfig(
        model=model,
        data=_data(raw.get("data", {})),
        reference_point=reference,
        tolerances=_tolerances(raw.get("tolerances", {})),
        observation_indices=observation_indices,
        profiles=profiles,
        predictions=predictions,
        unions=unions,
        rounded=rounded,
        level=level,
        df=_df(raw.get("df"), "df"),
        output_dir=None if output_dir is None else _str(output_dir, "output_dir"),
        seed=_int(raw.get("seed", 0), "seed", 0),
    )


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """Read and validate a RunConfig JSON file.

    Raises:
        ConfigError: unreadable file, JSON syntax error (with line/column) or invalid field
    """
    p = Path(path).expanduser()
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Failed to read config {p}: {e}") from e
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(
            f"Failed to parse config {p}: {e.msg} at line {e.lineno}, column {e.colno}"
        ) from e
    config = run_config_from_dict(raw)
    logger.debug("Loaded run configuration for %s from %s", config.model, p)
    return config


def resolve_target(target: Target, labels: Sequence[str], where: str) -> int:
    """Index of a target given by position or by coordinate label."""
    if isinstance(target, str):
        if target in labels:
            return list(labels).index(target)
        raise ConfigError(f"unknown coordinate '{target}' (available: {', '.join(labels)})",
                          field=where)
    if not 0 <= target < len(labels):
        raise ConfigError(f"index {target} out of range for {len(labels)} coordinates",
                          field=where)
    return target
