"""Log-likelihoods, maximum-likelihood estimation and chi-square cutoffs.

A ``LikelihoodProblem`` pairs a model with data and, optionally, a reparameterisation;
with one attached, every parameter vector passed in is read in the new coordinates
and mapped back through ``inverse()`` before the model is evaluated.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from invariant_reparam.errors import NumericalError, OptimizationError, PreconditionError
from invariant_reparam.model_api import Dataset, ModelSpec, predict_fine, predict_obs
from invariant_reparam.numerics import chi2_quantile, minimize_box
from invariant_reparam.reparam import Reparameterisation

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)

# relative slack when checking that a mapped-back parameter lies in the model box
_BOX_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class LikelihoodProblem:
    model: ModelSpec
    data: Dataset
    coordinates: Optional[Reparameterisation] = None
    margin: float = 0.1

    def __post_init__(self) -> None:
        expected = self.data.n_replicates * self.model.obs_dimension
        if self.data.observations.size != expected:
            raise PreconditionError(
                f"{self.data.observations.size} observations supplied, model "
                f"'{self.model.name}' expects {expected} "
                f"({self.data.n_replicates} replicate(s) x {self.model.obs_dimension})"
            )
        if self.coordinates is not None and self.coordinates.n_coords != self.model.n_params:
            raise PreconditionError("reparameterisation size does not match the model")

    @property
    def n_coords(self) -> int:
        return self.model.n_params

    @property
    def labels(self) -> Tuple[str, ...]:
        if self.coordinates is not None:
            return self.coordinates.labels
        return self.model.param_names

    @property
    def bounds(self) -> np.ndarray:
        """(n, 2) box of the active coordinates."""
        if self.coordinates is not None:
            return self.coordinates.bounds(self.model, self.margin)
        return np.array(self.model.bounds, dtype=float)

    def to_original(self, x: Any) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.coordinates is None:
            return x
        return self.coordinates.inverse(x)

    def from_original(self, theta: Any) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if self.coordinates is None:
            return theta
        return self.coordinates.forward(theta)

    def box_violation(self, x: Any) -> float:
        """Log-scale distance of the mapped-back point from the model box (0 inside)."""
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0) or not np.all(np.isfinite(x)):
            return math.inf
        log_theta = np.log(self.to_original(x))
        below = np.log(self.model.lower) - log_theta
        above = log_theta - np.log(self.model.upper)
        return float(np.sum(np.clip(below, 0.0, None)) + np.sum(np.clip(above, 0.0, None)))

    def plain(self) -> "LikelihoodProblem":
        return dataclasses.replace(self, coordinates=None)

    def with_coordinates(self, coordinates: Optional[Reparameterisation]) -> "LikelihoodProblem":
        return dataclasses.replace(self, coordinates=coordinates)


def _gaussian(residuals: np.ndarray, var: float) -> float:
    n = residuals.size
    return -0.5 * n * (LOG_2PI + math.log(var)) - float(np.sum(residuals ** 2)) / (2.0 * var)


def loglik(problem: LikelihoodProblem, theta: Sequence[float]) -> float:
    """Log-likelihood at theta (active coordinates).

    Returns -inf outside the model box, for non-positive log-normal predictions or
    data, for non-positive model variances, and when the model cannot be evaluated.
    The log-normal value is the density of the log-observations.
    """
    x = np.asarray(theta, dtype=float)
    if np.any(x <= 0) or not np.all(np.isfinite(x)):
        return -math.inf
    model = problem.model
    th = problem.to_original(x)
    lo, hi = model.lower, model.upper
    if np.any(th < lo * (1 - _BOX_SLACK)) or np.any(th > hi * (1 + _BOX_SLACK)):
        return -math.inf
    th = np.clip(th, lo, hi)

    kind = model.error_model.kind
    obs = problem.data.replicates()
    try:
        if kind == "normal-moments":
            mu, var = (float(v) for v in predict_fine(model, th)[:2])
            if not var > 0:
                return -math.inf
            return _gaussian(obs - mu, var)
        pred = np.asarray(predict_obs(model, th), dtype=float)
    except (NumericalError, PreconditionError) as e:
        logger.debug("Model evaluation failed at %s: %s", th.tolist(), e)
        return -math.inf

    var = model.error_model.sigma ** 2
    if kind == "log-normal":
        if np.any(pred <= 0) or np.any(obs <= 0):
            return -math.inf
        return _gaussian(np.log(obs) - np.log(pred), var)
    return _gaussian(obs - pred, var)


@dataclass(frozen=True)
class MleResult:
    theta_hat: np.ndarray
    loglik_max: float
    at_bound: Tuple[bool, ...]
    theta_original: np.ndarray
    n_evals: int = 0
    labels: Tuple[str, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "labels": list(self.labels),
            "theta_hat": self.theta_hat.tolist(),
            "theta_original": self.theta_original.tolist(),
            "loglik_max": self.loglik_max,
            "at_bound": list(self.at_bound),
            "n_evals": self.n_evals,
        }


def mle(
    problem: LikelihoodProblem,
    seed: int = 0,
    n_starts: int = 5,
    fatol: float = 1e-10,
    maxfev: int = 5000,
) -> MleResult:
    """Multistart maximum-likelihood estimate.

    The search runs in log-parameters over the original box; with a
    reparameterisation attached the estimate is mapped through ``forward()``.

    Raises:
        OptimizationError: no start reached a finite log-likelihood
    """
    plain = problem.plain()
    model = problem.model
    log_lo, log_hi = np.log(model.lower), np.log(model.upper)

    def objective(z: np.ndarray) -> float:
        return -loglik(plain, np.exp(z))

    x0 = 0.5 * (log_lo + log_hi)
    res = minimize_box(objective, x0, np.column_stack([log_lo, log_hi]), seed=seed,
                       n_starts=n_starts, fatol=fatol, maxfev=maxfev)
    if not math.isfinite(res.fmin):
        raise OptimizationError(
            f"Failed to find a finite log-likelihood for '{model.name}' from any start"
        )
    z = res.argmin
    theta = np.clip(np.exp(z), model.lower, model.upper)
    at_bound = tuple(
        bool(abs(zi - lo) < 1e-6 or abs(hi - zi) < 1e-6)
        for zi, lo, hi in zip(z, log_lo, log_hi)
    )
    logger.info("MLE for %s: %s (loglik %.6g)", model.name, theta.tolist(), -res.fmin)
    return MleResult(
        theta_hat=problem.from_original(theta),
        loglik_max=-res.fmin,
        at_bound=at_bound,
        theta_original=theta,
        n_evals=res.n_evals,
        labels=problem.labels,
    )


def confidence_threshold(df: int, level: float = 0.95) -> float:
    """Relative-likelihood cutoff exp(-q/2), q the chi-square quantile at ``level``."""
    if df not in (1, 2, 3):
        raise PreconditionError(f"df must be 1, 2 or 3, got {df}")
    if not 0.0 < level < 1.0:
        raise PreconditionError(f"level must lie in (0, 1), got {level}")
    return math.exp(-0.5 * chi2_quantile(df, level))
