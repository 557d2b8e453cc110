"""Profile-wise prediction bands for the mean trajectory.

Every profile node inside the confidence set is turned back into a full parameter
vector, mapped to original parameters and pushed through the model; the band is the
pointwise envelope of those trajectories together with the MLE trajectory.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from invariant_reparam.errors import EmptyBandError, PreconditionError
from invariant_reparam.likelihood import LikelihoodProblem, confidence_threshold
from invariant_reparam.model_api import predict_fine
from invariant_reparam.profile import ProfileResult

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PredictionBand:
    grid: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    mle_trajectory: np.ndarray
    source: str
    df_used: int
    n_nodes: int = 0
    name: str = ""

    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, other: "PredictionBand", atol: float = 0.0) -> bool:
        """True if ``other`` lies inside this band at every grid point."""
        return bool(np.all(self.lower <= other.lower + atol)
                    and np.all(self.upper >= other.upper - atol))

    def to_rows(self) -> Tuple[List[str], List[List[float]]]:
        header = ["x", "lower", "mle", "upper"]
        rows = [
            [float(x), float(lo), float(m), float(hi)]
            for x, lo, m, hi in zip(self.grid, self.lower, self.mle_trajectory, self.upper)
        ]
        return header, rows

    def summary(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "source": self.source,
            "df": self.df_used,
            "nodes": self.n_nodes,
            "max_width": float(np.max(self.width())) if self.grid.size else 0.0,
        }


def _abscissa(problem: LikelihoodProblem, n: int) -> np.ndarray:
    grid = np.asarray(problem.model.fine_grid, dtype=float)
    if grid.size == n:
        return grid
    # grid-free models report their auxiliary outputs by position
    return np.arange(n, dtype=float)


def _trajectory(problem: LikelihoodProblem, x: np.ndarray) -> np.ndarray:
    model = problem.model
    theta = np.clip(problem.to_original(x), model.lower, model.upper)
    return np.asarray(predict_fine(model, theta), dtype=float)


def prediction_band(
    problem: LikelihoodProblem,
    profile: ProfileResult,
    df: Optional[int] = None,
    name: str = "",
) -> PredictionBand:
    """Pointwise envelope of trajectories over a profile's confidence set.

    ``df`` selects the cutoff (at the profile's confidence level); by default the
    profile's own threshold is used. Failed nodes are skipped.

    Raises:
        PreconditionError: the profile was computed in other coordinates
        EmptyBandError: no node passes the cutoff
    """
    coordinates = "reparam" if problem.coordinates is not None else "original"
    if profile.coordinates != coordinates or tuple(profile.labels) != tuple(problem.labels):
        raise PreconditionError(
            f"profile over {list(profile.labels)} ({profile.coordinates}) does not match "
            f"the problem coordinates {list(problem.labels)} ({coordinates})"
        )
    df_used = profile.df if df is None else int(df)
    threshold = confidence_threshold(df_used, profile.level)
    inside = (profile.normalized >= threshold) & ~profile.failed
    nodes = np.argwhere(inside)
    if nodes.size == 0:
        raise EmptyBandError(
            f"Failed to build band{' ' + name if name else ''}: no profile node passes "
            f"the df={df_used} cutoff {threshold:.4g}"
        )

    mle_traj = _trajectory(problem, profile.mle_point)
    lower = mle_traj.copy()
    upper = mle_traj.copy()
    for index in nodes:
        traj = _trajectory(problem, profile.full_parameters(tuple(index)))
        np.minimum(lower, traj, out=lower)
        np.maximum(upper, traj, out=upper)

    targets = ",".join(profile.labels[t] for t in profile.target_indices)
    source = f"{profile.coordinates}:{targets}"
    logger.debug("Band %s from %d nodes of %s", name, len(nodes), source)
    return PredictionBand(
        grid=_abscissa(problem, mle_traj.size),
        lower=lower,
        upper=upper,
        mle_trajectory=mle_traj,
        source=source,
        df_used=df_used,
        n_nodes=int(len(nodes)),
        name=name or profile.name,
    )


def band_union(bands: Sequence[PredictionBand], name: str = "union") -> PredictionBand:
    """Pointwise min of lowers and max of uppers over bands on a shared grid."""
    bands = list(bands)
    if not bands:
        raise PreconditionError("band_union needs at least one band")
    first = bands[0]
    for band in bands[1:]:
        if band.grid.shape != first.grid.shape or not np.allclose(band.grid, first.grid):
            raise PreconditionError(
                f"cannot combine bands '{first.name}' and '{band.name}': grids differ"
            )
    return PredictionBand(
        grid=first.grid.copy(),
        lower=np.min([b.lower for b in bands], axis=0),
        upper=np.max([b.upper for b in bands], axis=0),
        mle_trajectory=first.mle_trajectory.copy(),
        source="union",
        df_used=max(b.df_used for b in bands),
        n_nodes=sum(b.n_nodes for b in bands),
        name=name,
    )
