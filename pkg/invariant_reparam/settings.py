"""User-level numerical defaults stored as JSON in the platform config directory.

The file lives at ``user_config_dir("invariant-reparam")/settings.json`` unless the
``IIR_SETTINGS`` environment variable points elsewhere. Malformed files and values of
the wrong type are ignored so a broken settings file never stops an analysis.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional

from platformdirs import user_config_dir

logger = logging.getLogger(__name__)

APP_NAME = "invariant-reparam"
SETTINGS_ENV_VAR = "IIR_SETTINGS"
SETTINGS_FILENAME = "settings.json"


@dataclass(frozen=True)
class Settings:
    """Tunable defaults for optimization, classification, rounding and profiling."""

    n_starts: int = 5
    fatol: float = 1e-10
    maxfev: int = 5000
    rank_tol_structural: float = 1e-8
    rank_tol_practical: float = 0.1
    granularity: float = 0.5
    rounding_scale: str = "largest"
    one_sided_ratio: float = 5.0
    grid_points_1d: int = 50
    grid_points_2d: int = 40
    bound_margin: float = 0.1
    level: float = 0.95
    parallel: bool = True
    max_workers: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def merged(self, **overrides: Any) -> "Settings":
        """Return a copy with the non-None overrides applied."""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


DEFAULT_SETTINGS = Settings()

_CHOICES = {"rounding_scale": ("largest", "smallest")}


def settings_path() -> Path:
    """Resolve the JSON settings path, honoring the env override."""
    env = os.getenv(SETTINGS_ENV_VAR)
    if env:
        return Path(env).expanduser()
    cfg_dir = Path(user_config_dir(appname=APP_NAME, appauthor=False))
    return cfg_dir / SETTINGS_FILENAME


def _accepts(name: str, default: Any, value: Any) -> bool:
    if name in _CHOICES:
        return value in _CHOICES[name]
    if name == "level":
        return isinstance(value, float) and 0.0 < value < 1.0
    if name == "max_workers":
        return value is None or (isinstance(value, int) and not isinstance(value, bool)
                                 and value > 0)
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool) and value > 0
    if isinstance(default, float):
        return (isinstance(value, (int, float)) and not isinstance(value, bool)
                and value > 0)
    return isinstance(value, type(default))


def load_settings() -> Settings:
    """Load settings from JSON, overriding defaults key by key.

    JSON shape example:
    { "n_starts": 8, "rank_tol_practical": 0.05, "parallel": false }

    Returns defaults if the file cannot be read or parsed.
    """
    p = settings_path()
    values: Dict[str, Any] = {}
    try:
        if p.exists():
            with p.open("r", encoding="utf-8") as f:
                raw = json.load(f)
            if isinstance(raw, dict):
                for field in fields(Settings):
                    if field.name not in raw:
                        continue
                    val = raw[field.name]
                    default = getattr(DEFAULT_SETTINGS, field.name)
                    if _accepts(field.name, default, val):
                        values[field.name] = float(val) if isinstance(default, float) else val
                    else:
                        logger.warning("Ignoring invalid setting %s=%r in %s", field.name, val, p)
    except (IOError, OSError, json.JSONDecodeError, ValueError, TypeError) as e:
        logger.warning("Ignoring unreadable settings file %s: %s", p, e)
        return DEFAULT_SETTINGS
    return replace(DEFAULT_SETTINGS, **values)


def save_settings(settings: Settings, path: Optional[Path] = None) -> Path:
    """Write settings as JSON; returns the path written."""
    p = path or settings_path()
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        with p.open("w", encoding="utf-8") as f:
            json.dump(settings.to_dict(), f, indent=2, sort_keys=True)
    except OSError as e:
        raise RuntimeError(f"Failed to write settings to {p}: {e}") from e
    return p
