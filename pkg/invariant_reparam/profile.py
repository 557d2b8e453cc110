"""Profile likelihoods over original or reparameterised coordinates.

Each grid node fixes the target coordinate(s) and maximizes the log-likelihood over
the remaining (nuisance) coordinates. Nodes are visited in warm-start chains that
sweep outward from the maximum-likelihood estimate, so flat ridges are tracked from
one node to the next. Chains are independent and run through ``map_chunks``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from invariant_reparam.errors import PreconditionError
from invariant_reparam.likelihood import (
    LikelihoodProblem,
    MleResult,
    confidence_threshold,
    loglik,
    mle,
)
from invariant_reparam.numerics import minimize_box
from invariant_reparam.parallel_utils import map_chunks

logger = logging.getLogger(__name__)

# objective scale for nuisance points whose inverse leaves the model box
_INFEASIBLE = 1e10

SPACINGS = ("linear", "log")


@dataclass(frozen=True)
class GridSpec:
    lo: float
    hi: float
    n_points: int = 50
    spacing: str = "linear"

    def __post_init__(self) -> None:
        if self.n_points < 3:
            raise PreconditionError(f"grid needs at least 3 points, got {self.n_points}")
        if not self.lo < self.hi:
            raise PreconditionError(f"grid bounds must satisfy lo < hi, got [{self.lo}, {self.hi}]")
        if self.spacing not in SPACINGS:
            raise PreconditionError(f"unknown grid spacing '{self.spacing}'")
        if self.spacing == "log" and self.lo <= 0:
            raise PreconditionError("log-spaced grids need a positive lower end")

    def values(self) -> np.ndarray:
        if self.spacing == "log":
            return np.geomspace(self.lo, self.hi, self.n_points)
        return np.linspace(self.lo, self.hi, self.n_points)

    def to_dict(self) -> Dict[str, Any]:
        return {"lo": self.lo, "hi": self.hi, "n_points": self.n_points, "spacing": self.spacing}


@dataclass(frozen=True, eq=False)
class ProfileRequest:
    """One profile: which coordinates to fix, on which grid, and how to optimize."""

    problem: LikelihoodProblem
    target_indices: Tuple[int, ...]
    grid: Tuple[GridSpec, ...]
    nuisance_bounds: Optional[np.ndarray] = None
    df: Optional[int] = None
    level: float = 0.95
    mle: Optional[MleResult] = None
    seed: int = 0
    n_starts: int = 5
    fatol: float = 1e-10
    maxfev: int = 5000
    parallel: Optional[bool] = None
    max_workers: Optional[int] = None
    name: str = ""

    def __post_init__(self) -> None:
        targets = tuple(int(i) for i in self.target_indices)
        object.__setattr__(self, "target_indices", targets)
        object.__setattr__(self, "grid", tuple(self.grid))
        n = self.problem.n_coords
        if len(targets) not in (1, 2) or len(set(targets)) != len(targets):
            raise PreconditionError(f"profiles need 1 or 2 distinct targets, got {targets}")
        if any(not 0 <= t < n for t in targets):
            raise PreconditionError(f"target index out of range for {n} coordinates: {targets}")
        if len(self.grid) != len(targets):
            raise PreconditionError("one grid specification is needed per target")
        box = self.problem.bounds
        for t, g in zip(targets, self.grid):
            lo, hi = box[t]
            if g.lo < lo * (1 - 1e-12) or g.hi > hi * (1 + 1e-12):
                raise PreconditionError(
                    f"grid [{g.lo}, {g.hi}] for {self.problem.labels[t]} leaves its "
                    f"bounds [{lo:.6g}, {hi:.6g}]"
                )
        if self.df is None:
            object.__setattr__(self, "df", len(targets))
        nb = self.nuisance_bounds
        if nb is None:
            nb = box[list(self.nuisance_indices)]
        nb = np.asarray(nb, dtype=float).reshape(-1, 2)
        if nb.shape[0] != len(self.nuisance_indices) or np.any(nb <= 0):
            raise PreconditionError("nuisance bounds must be positive, one pair per nuisance")
        object.__setattr__(self, "nuisance_bounds", nb)

    @property
    def nuisance_indices(self) -> Tuple[int, ...]:
        return tuple(i for i in range(self.problem.n_coords) if i not in self.target_indices)


@dataclass(frozen=True, eq=False)
class ProfileResult:
    target_values: Tuple[np.ndarray, ...]
    profile_loglik: np.ndarray
    nuisance_argmax: np.ndarray
    normalized: np.ndarray
    threshold: float
    crossing_set: np.ndarray
    failed: np.ndarray
    target_indices: Tuple[int, ...]
    nuisance_indices: Tuple[int, ...]
    labels: Tuple[str, ...]
    df: int
    level: float
    coordinates: str
    mle_loglik: float
    mle_point: np.ndarray
    spacing: Tuple[str, ...] = ()
    name: str = ""

    @property
    def ndim(self) -> int:
        return len(self.target_values)

    def full_parameters(self, index: Tuple[int, ...]) -> np.ndarray:
        """Active-coordinate vector of one node: target values plus stored nuisance."""
        x = np.empty(len(self.labels))
        for axis, t in enumerate(self.target_indices):
            x[t] = self.target_values[axis][index[axis]]
        for k, j in enumerate(self.nuisance_indices):
            x[j] = self.nuisance_argmax[index + (k,)]
        return x

    def crossing_points(self) -> List[np.ndarray]:
        """Active-coordinate vectors of every node inside the confidence set."""
        return [self.full_parameters(tuple(i)) for i in np.argwhere(self.crossing_set)]

    def to_rows(self) -> Tuple[List[str], List[List[Any]]]:
        """Header and rows for columnar export, one row per node."""
        targets = [self.labels[t] for t in self.target_indices]
        nuisance = [self.labels[j] for j in self.nuisance_indices]
        header = targets + ["profile_loglik", "normalized", "in_confidence_set", "failed"]
        header += [f"argmax_{name}" for name in nuisance]
        rows = []
        for index in np.ndindex(self.profile_loglik.shape):
            row: List[Any] = [self.target_values[a][index[a]] for a in range(self.ndim)]
            row += [
                self.profile_loglik[index],
                self.normalized[index],
                int(self.crossing_set[index]),
                int(self.failed[index]),
            ]
            row += [self.nuisance_argmax[index + (k,)] for k in range(len(nuisance))]
            rows.append(row)
        return header, rows

    def summary(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "coordinates": self.coordinates,
            "targets": [self.labels[t] for t in self.target_indices],
            "df": self.df,
            "level": self.level,
            "threshold": self.threshold,
            "nodes": int(self.profile_loglik.size),
            "nodes_in_confidence_set": int(self.crossing_set.sum()),
            "failed_nodes": int(self.failed.sum()),
        }


@dataclass(frozen=True, eq=False)
class _Chain:
    """Sequential warm-start chain over a list of grid nodes."""

    problem: LikelihoodProblem
    target_indices: Tuple[int, ...]
    nuisance_indices: Tuple[int, ...]
    log_bounds: np.ndarray
    start: np.ndarray
    nodes: List[Tuple[Tuple[int, ...], Tuple[float, ...]]]
    seed: int
    n_starts: int
    fatol: float
    maxfev: int


def _assemble(problem: LikelihoodProblem, targets: Sequence[int], nuisance: Sequence[int],
              tvals: Sequence[float], z: np.ndarray) -> np.ndarray:
    x = np.empty(problem.n_coords)
    x[list(targets)] = tvals
    x[list(nuisance)] = np.exp(z)
    return x


def _node_objective(chain: _Chain, tvals: Sequence[float]):
    problem = chain.problem
    feasibility = problem.coordinates is not None

    def objective(z: np.ndarray) -> float:
        x = _assemble(problem, chain.target_indices, chain.nuisance_indices, tvals, z)
        if feasibility:
            violation = problem.box_violation(x)
            if violation > 0:
                return _INFEASIBLE * (1.0 + violation)
        return -loglik(problem, x)

    return objective


def _run_chain(chain: _Chain) -> List[Tuple[Tuple[int, ...], float, np.ndarray, bool]]:
    out = []
    problem = chain.problem
    if not chain.nuisance_indices:
        for index, tvals in chain.nodes:
            x = np.empty(problem.n_coords)
            x[list(chain.target_indices)] = tvals
            ll = loglik(problem, x)
            out.append((index, ll, np.empty(0), not math.isfinite(ll)))
        return out

    lo, hi = chain.log_bounds[:, 0], chain.log_bounds[:, 1]
    center = 0.5 * (lo + hi)
    prev = np.clip(chain.start, lo, hi)
    for k, (index, tvals) in enumerate(chain.nodes):
        objective = _node_objective(chain, tvals)
        res = minimize_box(objective, prev, chain.log_bounds, seed=chain.seed + k,
                           n_starts=0, fatol=chain.fatol, maxfev=chain.maxfev)
        if not res.fmin < _INFEASIBLE:
            # warm start lost the feasible region; fall back to a multistart search
            cold = minimize_box(objective, center, chain.log_bounds, seed=chain.seed + k,
                                n_starts=chain.n_starts, fatol=chain.fatol, maxfev=chain.maxfev)
            if cold.fmin < res.fmin:
                res = cold
        failed = not res.fmin < _INFEASIBLE
        ll = -math.inf if failed else -res.fmin
        if not failed:
            prev = res.argmin
        out.append((index, ll, np.exp(res.argmin), failed))
    return out


def _nearest(grid: np.ndarray, value: float) -> int:
    return int(np.argmin(np.abs(grid - value)))


def _normalize(pl: np.ndarray) -> np.ndarray:
    finite = np.isfinite(pl)
    if not finite.any():
        return np.zeros_like(pl)
    top = pl[finite].max()
    rel = np.zeros_like(pl)
    rel[finite] = np.exp(pl[finite] - top)
    return rel


def _prepare(request: ProfileRequest) -> Tuple[MleResult, np.ndarray, np.ndarray]:
    problem = request.problem
    fit = request.mle
    if fit is None:
        fit = mle(problem, seed=request.seed, n_starts=request.n_starts,
                  fatol=request.fatol, maxfev=request.maxfev)
    nuis = list(request.nuisance_indices)
    log_bounds = np.log(request.nuisance_bounds)
    start = np.log(np.asarray(fit.theta_hat, dtype=float)[nuis]) if nuis else np.empty(0)
    return fit, log_bounds, start


def _chain(request: ProfileRequest, log_bounds: np.ndarray, start: np.ndarray,
           nodes: List[Tuple[Tuple[int, ...], Tuple[float, ...]]], seed: int) -> _Chain:
    return _Chain(
        problem=request.problem,
        target_indices=request.target_indices,
        nuisance_indices=request.nuisance_indices,
        log_bounds=log_bounds,
        start=start,
        nodes=nodes,
        seed=seed,
        n_starts=request.n_starts,
        fatol=request.fatol,
        maxfev=request.maxfev,
    )


def _finish(request: ProfileRequest, fit: MleResult, axes: Tuple[np.ndarray, ...],
            results: List[List[Tuple[Tuple[int, ...], float, np.ndarray, bool]]]) -> ProfileResult:
    shape = tuple(a.size for a in axes)
    n_nuis = len(request.nuisance_indices)
    pl = np.full(shape, -math.inf)
    argmax = np.full(shape + (n_nuis,), np.nan)
    failed = np.zeros(shape, dtype=bool)
    for chain_result in results:
        for index, ll, nuisance, bad in chain_result:
            pl[index] = ll
            if n_nuis:
                argmax[index] = nuisance
            failed[index] = bad
    normalized = _normalize(pl)
    threshold = confidence_threshold(request.df, request.level)
    if failed.any():
        logger.warning("Profile %s: %d of %d nodes failed", request.name or "",
                       int(failed.sum()), failed.size)
    problem = request.problem
    return ProfileResult(
        target_values=axes,
        profile_loglik=pl,
        nuisance_argmax=argmax,
        normalized=normalized,
        threshold=threshold,
        crossing_set=normalized >= threshold,
        failed=failed,
        target_indices=request.target_indices,
        nuisance_indices=request.nuisance_indices,
        labels=problem.labels,
        df=int(request.df),
        level=request.level,
        coordinates="reparam" if problem.coordinates is not None else "original",
        mle_loglik=fit.loglik_max,
        mle_point=np.asarray(fit.theta_hat, dtype=float),
        spacing=tuple(g.spacing for g in request.grid),
        name=request.name,
    )


def profile_1d(request: ProfileRequest) -> ProfileResult:
    """Profile over one target, sweeping outward from the MLE in both directions."""
    if len(request.target_indices) != 1:
        raise PreconditionError("profile_1d needs exactly one target")
    fit, log_bounds, start = _prepare(request)
    grid = request.grid[0].values()
    t = request.target_indices[0]
    k0 = _nearest(grid, float(fit.theta_hat[t]))
    up = [((i,), (float(grid[i]),)) for i in range(k0, grid.size)]
    down = [((i,), (float(grid[i]),)) for i in range(k0 - 1, -1, -1)]
    chains = [_chain(request, log_bounds, start, nodes, request.seed + 1000 * c)
              for c, nodes in enumerate((up, down)) if nodes]
    results = map_chunks(_run_chain, chains, request.parallel, request.max_workers)
    logger.debug("Profile %s finished over %d nodes", request.name, grid.size)
    return _finish(request, fit, (grid,), results)


def _outward(size: int, origin: int) -> Tuple[List[int], List[int]]:
    return list(range(origin, size)), list(range(origin - 1, -1, -1))


def profile_2d(request: ProfileRequest) -> ProfileResult:
    """Joint profile over two targets.

    A spine chain runs down the MLE column, outward from the MLE row in both
    directions. Each row then sweeps outward from the MLE column, warm-started at the
    spine optimum of that row, so starts follow the ridge instead of the MLE.
    """
    if len(request.target_indices) != 2:
        raise PreconditionError("profile_2d needs exactly two targets")
    fit, log_bounds, start = _prepare(request)
    g0, g1 = (g.values() for g in request.grid)
    t0, t1 = request.target_indices
    i0 = _nearest(g0, float(fit.theta_hat[t0]))
    j0 = _nearest(g1, float(fit.theta_hat[t1]))

    spine_chains = [
        _chain(request, log_bounds, start,
               [((i, j0), (float(g0[i]), float(g1[j0]))) for i in rows],
               request.seed + 1000 * c)
        for c, rows in enumerate(_outward(g0.size, i0)) if rows
    ]
    spine = map_chunks(_run_chain, spine_chains, request.parallel, request.max_workers)
    row_starts = {}
    for chain_result in spine:
        for index, _, nuisance, bad in chain_result:
            row_starts[index[0]] = start if bad else np.log(nuisance)

    up, down = _outward(g1.size, j0)
    row_order = [i for rows in _outward(g0.size, i0) for i in rows]
    chains = [
        _chain(request, log_bounds, row_starts[i],
               [((i, j), (float(g0[i]), float(g1[j]))) for j in columns],
               request.seed + 1000 * (2 + 2 * i + c))
        for i in row_order
        for c, columns in enumerate((up[1:], down)) if columns
    ]
    results = map_chunks(_run_chain, chains, request.parallel, request.max_workers)
    logger.debug("Profile %s finished over %dx%d nodes", request.name, g0.size, g1.size)
    return _finish(request, fit, (g0, g1), list(spine) + list(results))


def run_profile(request: ProfileRequest) -> ProfileResult:
    if len(request.target_indices) == 1:
        return profile_1d(request)
    return profile_2d(request)


@dataclass(frozen=True)
class OneSidedness:
    status: str
    ratio: Optional[float]
    left_extent: Optional[float]
    right_extent: Optional[float]
    left_crosses: bool = False
    right_crosses: bool = False
    details: Dict[str, Any] = field(default_factory=dict)

    @property
    def one_sided(self) -> bool:
        return self.status == "one-sided"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "status": self.status,
            "ratio": self.ratio,
            "left_extent": self.left_extent,
            "right_extent": self.right_extent,
            "left_crosses": self.left_crosses,
            "right_crosses": self.right_crosses,
        }


def one_sidedness(profile: ProfileResult, ratio_threshold: float = 5.0) -> OneSidedness:
    """Compare how far the confidence set reaches on each side of the maximum.

    Extents are measured in the grid's own scale (log units for log-spaced grids).
    A side that never drops below the threshold, or an extent ratio above
    ``ratio_threshold``, flags the profile as one-sided; neither side crossing is
    reported as flat.
    """
    if profile.ndim != 1:
        raise PreconditionError("one_sidedness applies to 1-D profiles")
    t = profile.target_values[0]
    u = np.log(t) if profile.spacing and profile.spacing[0] == "log" else t
    r = profile.normalized
    above = r >= profile.threshold
    k = int(np.argmax(r))
    if k == 0 or k == r.size - 1:
        return OneSidedness("bound-limited", None, None, None)

    left_crosses = bool(np.any(~above[:k]))
    right_crosses = bool(np.any(~above[k + 1:]))
    j = k
    while j > 0 and above[j - 1]:
        j -= 1
    m = k
    while m < r.size - 1 and above[m + 1]:
        m += 1
    left, right = float(u[k] - u[j]), float(u[m] - u[k])

    if not left_crosses and not right_crosses:
        return OneSidedness("flat", None, left, right)
    if left_crosses != right_crosses:
        return OneSidedness("one-sided", None, left, right, left_crosses, right_crosses)
    small, large = min(left, right), max(left, right)
    ratio = math.inf if small == 0 else large / small
    status = "one-sided" if ratio > ratio_threshold else "two-sided"
    return OneSidedness(status, ratio, left, right, left_crosses, right_crosses)
