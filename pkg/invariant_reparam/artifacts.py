"""Deterministic JSON/CSV writers and the per-directory manifest.

Output files carry no timestamps and use fixed number formatting, so rerunning the
same configuration with the same seed reproduces every file byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Iterable, List, Sequence

import numpy as np

from invariant_reparam import __version__

MANIFEST = "manifest.json"


def jsonable(obj: Any) -> Any:
    """Convert numpy values and non-finite floats into plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(path: Path, obj: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(jsonable(obj), indent=2, sort_keys=True, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def _cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def write_manifest(
    out_dir: Path,
    command: str,
    model: str,
    config_hash: str,
    seed: int,
    outputs: Sequence[Path],
) -> Path:
    """Record what produced the files in ``out_dir``."""
    files: List[str] = sorted(
        {p.relative_to(out_dir).as_posix() for p in outputs if p.name != MANIFEST}
    )
    manifest = {
        "command": command,
        "model": model,
        "config_sha256": config_hash,
        "seed": seed,
        "version": __version__,
        "outputs": files,
    }
    return write_json(out_dir / MANIFEST, manifest)
