"""Log-space Jacobian SVD, identifiability classes and monomial reparameterisations.

The Jacobian of the fine-grid auxiliary mapping with respect to log-parameters is
factorised at one reference point. Right-singular vectors ordered by singular value
give parameter combinations ranked from best to worst identified; rounding their
entries gives monomial coordinates such as ``T2/R`` that can be read off directly.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import subspace_angles

from invariant_reparam.errors import PreconditionError, SingularReparamError
from invariant_reparam.model_api import ModelSpec, predict_fine
from invariant_reparam.numerics import jacobian, svd

if TYPE_CHECKING:
    from invariant_reparam.likelihood import LikelihoodProblem

logger = logging.getLogger(__name__)

WELL = "well-identified"
POOR = "poorly-identified"
STRUCTURAL = "structurally-non-identified"

NEGLIGIBLE = 1e-6


def log_jacobian(model: ModelSpec, theta_ref: Sequence[float]) -> np.ndarray:
    """Jacobian of the fine-grid output with respect to log-parameters at theta_ref.

    Equal to the original-scale Jacobian with column j scaled by theta_ref[j].

    Raises:
        PreconditionError: theta_ref outside the model box or of the wrong length
    """
    theta = np.asarray(theta_ref, dtype=float)
    if theta.size != model.n_params:
        raise PreconditionError(
            f"reference point has {theta.size} entries, model has {model.n_params} parameters"
        )
    if not model.in_bounds(theta):
        raise PreconditionError(f"reference point {theta.tolist()} lies outside the model box")
    if np.any(theta <= model.lower) or np.any(theta >= model.upper):
        logger.warning("Reference point %s touches the parameter box", theta.tolist())
    J = jacobian(lambda t: predict_fine(model, t), theta)
    return J * theta[np.newaxis, :]


def classify(singular_values: np.ndarray, n: int, tol_structural: float,
             tol_practical: float) -> List[str]:
    """Label n combinations from singular-value ratios sigma_i / sigma_1."""
    s = np.asarray(singular_values, dtype=float)
    top = s[0] if s.size and s[0] > 0 else 0.0
    labels = []
    for i in range(n):
        ratio = s[i] / top if i < s.size and top > 0 else 0.0
        if ratio < tol_structural:
            labels.append(STRUCTURAL)
        elif ratio < tol_practical:
            labels.append(POOR)
        else:
            labels.append(WELL)
    return labels


@dataclass(frozen=True, eq=False)
class SvdAnalysis:
    singular_values: np.ndarray
    right_vectors: np.ndarray
    reference_point: np.ndarray
    rank_tol_structural: float
    rank_tol_practical: float
    classification: Tuple[str, ...]
    param_names: Tuple[str, ...] = ()

    @property
    def ratios(self) -> np.ndarray:
        s = self.singular_values
        if not s.size or s[0] == 0:
            return np.zeros_like(s)
        return s / s[0]

    @property
    def rank(self) -> int:
        return sum(1 for c in self.classification if c != STRUCTURAL)

    @property
    def null_space(self) -> np.ndarray:
        """Columns spanning the structurally non-identified directions."""
        rows = [self.right_vectors[i] for i, c in enumerate(self.classification)
                if c == STRUCTURAL]
        if not rows:
            return np.zeros((self.right_vectors.shape[1], 0))
        return np.column_stack(rows)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "param_names": list(self.param_names),
            "reference_point": self.reference_point.tolist(),
            "singular_values": self.singular_values.tolist(),
            "singular_value_ratios": self.ratios.tolist(),
            "right_vectors": self.right_vectors.tolist(),
            "classification": list(self.classification),
            "rank": self.rank,
            "rank_tol_structural": self.rank_tol_structural,
            "rank_tol_practical": self.rank_tol_practical,
        }


def analyze(
    model: ModelSpec,
    theta_ref: Sequence[float],
    rank_tol_structural: float = 1e-8,
    rank_tol_practical: float = 0.1,
) -> SvdAnalysis:
    """SVD of the log-space Jacobian with per-row identifiability classes."""
    theta = np.asarray(theta_ref, dtype=float)
    factors = svd(log_jacobian(model, theta))
    labels = classify(factors.S, model.n_params, rank_tol_structural, rank_tol_practical)
    logger.debug("%s at %s: singular values %s", model.name, theta.tolist(), factors.S.tolist())
    return SvdAnalysis(
        singular_values=factors.S,
        right_vectors=factors.Vt,
        reference_point=theta,
        rank_tol_structural=rank_tol_structural,
        rank_tol_practical=rank_tol_practical,
        classification=tuple(labels),
        param_names=model.param_names,
    )


def null_space_basis(M: Any, tol: float = 1e-8) -> np.ndarray:
    """Orthonormal columns spanning the numerical null space of M (relative tolerance)."""
    f = svd(np.atleast_2d(np.asarray(M, dtype=float)))
    n = f.Vt.shape[0]
    if not f.S.size or f.S[0] == 0:
        return np.eye(n)
    rank = int(np.sum(f.S > tol * f.S[0]))
    return f.Vt[rank:].T.copy()


def principal_angle(A: np.ndarray, B: np.ndarray) -> float:
    """Largest principal angle (radians) between the column spaces of A and B."""
    if A.shape[1] == 0 and B.shape[1] == 0:
        return 0.0
    if A.shape[1] != B.shape[1]:
        return float(np.pi / 2)
    return float(np.max(subspace_angles(A, B)))


@dataclass(frozen=True)
class InvarianceReport:
    points: List[List[float]]
    ranks: List[int]
    null_dimensions: List[int]
    max_angle: float
    tolerance: float
    passed: bool
    null_bases: List[List[List[float]]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "points": self.points,
            "ranks": self.ranks,
            "null_dimensions": self.null_dimensions,
            "max_principal_angle": self.max_angle,
            "tolerance": self.tolerance,
            "status": "PASS" if self.passed else "FAIL",
            "null_bases": self.null_bases,
        }


def invariance_check(
    model: ModelSpec,
    points: Sequence[Sequence[float]],
    rank_tol_structural: float = 1e-8,
    angle_tol: float = 1e-6,
) -> InvarianceReport:
    """Compare structural null spaces at several reference points.

    PASS when every null space makes a principal angle below ``angle_tol`` with the
    one at the first point; an empty null space everywhere passes vacuously.
    """
    if len(points) < 2:
        raise PreconditionError("invariance_check needs at least two reference points")
    bases = []
    ranks = []
    for p in points:
        basis = null_space_basis(log_jacobian(model, p), rank_tol_structural)
        bases.append(basis)
        ranks.append(model.n_params - basis.shape[1])
    angle = max(principal_angle(bases[0], b) for b in bases[1:])
    report = InvarianceReport(
        points=[list(map(float, p)) for p in points],
        ranks=ranks,
        null_dimensions=[b.shape[1] for b in bases],
        max_angle=angle,
        tolerance=angle_tol,
        passed=angle < angle_tol,
        null_bases=[b.T.tolist() for b in bases],
    )
    logger.info("Invariance check for %s: max angle %.3g rad (%s)", model.name, angle,
                "PASS" if report.passed else "FAIL")
    return report


def round_exponents(row: Any, granularity: float = 0.5, scale: str = "smallest") -> np.ndarray:
    """Scale a coefficient row and round it to multiples of ``granularity``.

    ``scale="smallest"`` divides by the smallest-magnitude non-negligible entry,
    ``"largest"`` by the largest. Entries below 1e-6 of the largest magnitude are
    zeroed. Ties round away from zero.
    """
    v = np.asarray(row, dtype=float)
    mags = np.abs(v)
    top = float(mags.max()) if mags.size else 0.0
    if not top > 0 or not np.all(np.isfinite(v)):
        raise PreconditionError(f"cannot round an all-negligible row {v.tolist()}")
    keep = mags > NEGLIGIBLE * top
    if scale == "smallest":
        divisor = float(mags[keep].min())
    elif scale == "largest":
        divisor = top
    else:
        raise PreconditionError(f"unknown rounding scale '{scale}'")
    q = v / divisor / granularity
    rounded = np.sign(q) * np.floor(np.abs(q) + 0.5) * granularity
    rounded[~keep] = 0.0
    return rounded + 0.0


def _format_power(p: float) -> str:
    return f"{p:.3g}"


def _render(groups: Dict[float, List[str]]) -> Tuple[str, int]:
    parts = []
    for power, names in groups.items():
        joined = "*".join(names)
        if power == 1.0:
            parts.append(joined)
        elif power == 0.5:
            parts.append(f"sqrt({joined})")
        else:
            base = joined if len(names) == 1 else f"({joined})"
            parts.append(f"{base}^{_format_power(power)}")
    factors = sum(len(n) if p == 1.0 else 1 for p, n in groups.items())
    return "*".join(parts), factors


def monomial_label(exponents: Sequence[float], names: Sequence[str]) -> str:
    """Readable monomial, e.g. [1, -0.5, -0.5] over (T1, T2, R) -> 'T1/sqrt(T2*R)'."""
    num: Dict[float, List[str]] = {}
    den: Dict[float, List[str]] = {}
    for e, name in zip(exponents, names):
        e = float(e)
        if e == 0.0:
            continue
        target = num if e > 0 else den
        target.setdefault(abs(e), []).append(name)
    top, _ = _render(num)
    bottom, n_factors = _render(den)
    top = top or "1"
    if not bottom:
        return top
    if n_factors > 1:
        bottom = f"({bottom})"
    return f"{top}/{bottom}"


@dataclass(frozen=True, eq=False)
class Reparameterisation:
    """Monomial coordinates psi = exp(A log theta) with their inverse."""

    exponents: np.ndarray
    labels: Tuple[str, ...]
    classification: Tuple[str, ...]
    rounded: bool
    param_names: Tuple[str, ...] = ()
    inverse_exponents: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        A = np.asarray(self.exponents, dtype=float)
        object.__setattr__(self, "exponents", A)
        if self.inverse_exponents is None:
            inv = A.T.copy() if not self.rounded else np.linalg.inv(A)
            object.__setattr__(self, "inverse_exponents", inv)

    @property
    def n_coords(self) -> int:
        return self.exponents.shape[0]

    def forward(self, theta: Any) -> np.ndarray:
        return np.exp(self.exponents @ np.log(np.asarray(theta, dtype=float)))

    def inverse(self, psi: Any) -> np.ndarray:
        return np.exp(self.inverse_exponents @ np.log(np.asarray(psi, dtype=float)))

    def bounds(self, model: ModelSpec, margin: float = 0.1) -> np.ndarray:
        """Corner range of forward() over the model box, widened by ``margin``.

        Returns an (n, 2) array of (lower, upper) per new coordinate.
        """
        log_lo, log_hi = np.log(model.lower), np.log(model.upper)
        corners = np.array(list(itertools.product(*zip(log_lo, log_hi))))
        images = corners @ self.exponents.T
        lo = np.exp(images.min(axis=0)) / (1.0 + margin)
        hi = np.exp(images.max(axis=0)) * (1.0 + margin)
        return np.column_stack([lo, hi])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "param_names": list(self.param_names),
            "exponents": self.exponents.tolist(),
            "inverse_exponents": self.inverse_exponents.tolist(),
            "labels": list(self.labels),
            "classification": list(self.classification),
            "rounded": self.rounded,
        }


def build_reparam(
    analysis: SvdAnalysis,
    rounded: bool,
    granularity: float = 0.5,
    scale: str = "smallest",
) -> Reparameterisation:
    """Coordinates from the right-singular vectors, optionally rounded to monomials.

    Raises:
        SingularReparamError: the rounded exponent matrix is singular
    """
    names = analysis.param_names or tuple(f"theta{i + 1}" for i in range(
        analysis.right_vectors.shape[1]))
    A = np.array(analysis.right_vectors, dtype=float)
    if rounded:
        A = np.vstack([round_exponents(row, granularity, scale) for row in A])
        det = float(np.linalg.det(A))
        if abs(det) < 1e-9:
            raise SingularReparamError(
                f"rounded exponent matrix {A.tolist()} is singular; use unrounded coordinates"
            )
    labels = tuple(monomial_label(row, names) for row in A)
    return Reparameterisation(
        exponents=A,
        labels=labels,
        classification=analysis.classification,
        rounded=rounded,
        param_names=tuple(names),
    )


def _numerical_rank(M: np.ndarray, tol: float) -> int:
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if not s.size or s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


def _fisher_weights(model: ModelSpec, prediction: np.ndarray, n_replicates: int) -> np.ndarray:
    kind = model.error_model.kind
    sigma = model.error_model.sigma
    if kind == "normal-moments":
        var = float(prediction[1])
        return n_replicates * np.array([1.0 / var, 1.0 / (2.0 * var * var)])
    if kind == "log-normal":
        h = np.asarray(prediction, dtype=float)
        w = np.zeros_like(h)
        pos = h > 0
        w[pos] = 1.0 / (sigma * sigma * h[pos] ** 2)
        return n_replicates * w
    return n_replicates * np.full(prediction.size, 1.0 / (sigma * sigma))


def fisher_factor(J: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """W^(1/2) J, so that the Fisher information is its Gram matrix."""
    return np.sqrt(weights)[:, np.newaxis] * J


@dataclass(frozen=True)
class FisherReport:
    theta: List[float]
    solution_fisher_rank: int
    solution_jacobian_rank: int
    observation_fisher_rank: int
    observation_jacobian_rank: int
    passed: bool
    discrepancy: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "theta": self.theta,
            "solution_grid": {
                "fisher_rank": self.solution_fisher_rank,
                "jacobian_rank": self.solution_jacobian_rank,
            },
            "observation_grid": {
                "fisher_rank": self.observation_fisher_rank,
                "jacobian_rank": self.observation_jacobian_rank,
            },
            "status": "PASS" if self.passed else "FAIL",
            "grid_level_discrepancy": self.discrepancy,
        }


def fisher_rank_check(
    problem: "LikelihoodProblem",
    theta_hat: Sequence[float],
    rank_tol_structural: float = 1e-8,
) -> FisherReport:
    """Rank of the observed Fisher information against the auxiliary Jacobian rank.

    The Fisher information is J^T W J with the error model's information weights W,
    evaluated at the solution-grid level and at the observation-grid level. Its rank is
    read from the factor W^(1/2) J, whose singular values are the square roots of the
    Fisher eigenvalues, so one tolerance applies to both ranks.
    """
    model = problem.model
    theta = problem.to_original(theta_hat)
    J = jacobian(lambda t: predict_fine(model, t), theta)
    pred = np.asarray(predict_fine(model, theta), dtype=float)
    w = _fisher_weights(model, pred, problem.data.n_replicates)

    if model.fine_grid.size:
        idx = list(model.obs_operator.indices)
        J_obs, w_obs = J[idx], w[idx]
    else:
        J_obs, w_obs = J, w

    sol_f = _numerical_rank(fisher_factor(J, w), rank_tol_structural)
    sol_j = _numerical_rank(J, rank_tol_structural)
    obs_f = _numerical_rank(fisher_factor(J_obs, w_obs), rank_tol_structural)
    obs_j = _numerical_rank(J_obs, rank_tol_structural)
    report = FisherReport(
        theta=theta.tolist(),
        solution_fisher_rank=sol_f,
        solution_jacobian_rank=sol_j,
        observation_fisher_rank=obs_f,
        observation_jacobian_rank=obs_j,
        passed=sol_f == sol_j,
        discrepancy=obs_f != sol_f,
    )
    if report.discrepancy:
        logger.info("%s: observation-grid Fisher rank %d differs from solution-grid rank %d",
                    model.name, obs_f, sol_f)
    return report
