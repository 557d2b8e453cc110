"""Numerical kernels: forward-mode dual numbers, fixed-step RK4, SVD, bounded Nelder-Mead.

Everything here is a pure function of its inputs. Model code is written once against
the elementary functions in this module (``exp``, ``log``, ``sqrt``) and runs on plain
floats for likelihood evaluation or on ``Dual`` values for exact Jacobians.
"""

from __future__ import annotations

import logging
import math
import numbers
from dataclasses import dataclass
from typing import Any, Callable, List, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.stats import chi2

from invariant_reparam.errors import (
    DomainError,
    IntegrationError,
    NumericalError,
    PreconditionError,
)

logger = logging.getLogger(__name__)

# Objective value substituted for non-finite evaluations inside Nelder-Mead.
_PENALTY = 1e20

# Starts are a prefix of one hypercube of at least this size, so a larger start count
# always extends the schedule of a smaller one.
_LHS_POOL = 20


class Dual:
    """Value plus gradient with respect to a fixed set of independent variables."""

    __slots__ = ("value", "derivs")
    # make numpy scalars defer to our reflected operators
    __array_ufunc__ = None

    def __init__(self, value: float, derivs: Any) -> None:
        self.value = float(value)
        self.derivs = np.asarray(derivs, dtype=float)

    @staticmethod
    def _is_scalar(other: Any) -> bool:
        return isinstance(other, numbers.Real)

    def __add__(self, other: Any) -> "Dual":
        if isinstance(other, Dual):
            return Dual(self.value + other.value, self.derivs + other.derivs)
        if self._is_scalar(other):
            return Dual(self.value + float(other), self.derivs)
        return NotImplemented

    __radd__ = __add__

    def __sub__(self, other: Any) -> "Dual":
        if isinstance(other, Dual):
            return Dual(self.value - other.value, self.derivs - other.derivs)
        if self._is_scalar(other):
            return Dual(self.value - float(other), self.derivs)
        return NotImplemented

    def __rsub__(self, other: Any) -> "Dual":
        if self._is_scalar(other):
            return Dual(float(other) - self.value, -self.derivs)
        return NotImplemented

    def __mul__(self, other: Any) -> "Dual":
        if isinstance(other, Dual):
            return Dual(
                self.value * other.value,
                self.value * other.derivs + other.value * self.derivs,
            )
        if self._is_scalar(other):
            c = float(other)
            return Dual(self.value * c, self.derivs * c)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other: Any) -> "Dual":
        if isinstance(other, Dual):
            v = other.value
            return Dual(
                self.value / v,
                (self.derivs * v - self.value * other.derivs) / (v * v),
            )
        if self._is_scalar(other):
            c = float(other)
            return Dual(self.value / c, self.derivs / c)
        return NotImplemented

    def __rtruediv__(self, other: Any) -> "Dual":
        if self._is_scalar(other):
            c = float(other)
            v = self.value
            return Dual(c / v, -c * self.derivs / (v * v))
        return NotImplemented

    def __pow__(self, other: Any) -> "Dual":
        if isinstance(other, Dual):
            return exp(other * log(self))
        if not self._is_scalar(other):
            return NotImplemented
        p = float(other)
        if p == 0.0:
            return Dual(1.0, np.zeros_like(self.derivs))
        if self.value < 0.0 and not p.is_integer():
            raise DomainError(f"Failed to raise {self.value} to fractional power {p}")
        return Dual(self.value ** p, p * self.value ** (p - 1.0) * self.derivs)

    def __rpow__(self, other: Any) -> "Dual":
        if not self._is_scalar(other):
            return NotImplemented
        base = float(other)
        if base <= 0.0:
            raise DomainError(f"Failed to raise non-positive base {base} to a dual power")
        val = base ** self.value
        return Dual(val, val * math.log(base) * self.derivs)

    def __neg__(self) -> "Dual":
        return Dual(-self.value, -self.derivs)

    def __pos__(self) -> "Dual":
        return self

    def __abs__(self) -> "Dual":
        return -self if self.value < 0.0 else self

    def __lt__(self, other: Any) -> bool:
        return self.value < value_of(other)

    def __le__(self, other: Any) -> bool:
        return self.value <= value_of(other)

    def __gt__(self, other: Any) -> bool:
        return self.value > value_of(other)

    def __ge__(self, other: Any) -> bool:
        return self.value >= value_of(other)

    def __repr__(self) -> str:
        return f"Dual({self.value!r}, {self.derivs.tolist()!r})"


def value_of(x: Any) -> float:
    """Plain float value of a real or Dual."""
    return x.value if isinstance(x, Dual) else float(x)


def exp(x: Any) -> Any:
    if isinstance(x, Dual):
        ev = math.exp(x.value)
        return Dual(ev, ev * x.derivs)
    return math.exp(x)


def log(x: Any) -> Any:
    v = value_of(x)
    if v <= 0.0:
        raise DomainError(f"Failed to take log of non-positive value {v}")
    if isinstance(x, Dual):
        return Dual(math.log(v), x.derivs / v)
    return math.log(v)


def sqrt(x: Any) -> Any:
    v = value_of(x)
    if isinstance(x, Dual):
        if v <= 0.0:
            raise DomainError(f"Failed to differentiate sqrt at non-positive value {v}")
        s = math.sqrt(v)
        return Dual(s, x.derivs / (2.0 * s))
    if v < 0.0:
        raise DomainError(f"Failed to take sqrt of negative value {v}")
    return math.sqrt(v)


def _seed_duals(x: Any) -> List[Dual]:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    eye = np.eye(x.size)
    return [Dual(xi, eye[i]) for i, xi in enumerate(x)]


def gradient(f: Callable[[Sequence[Any]], Any], x: Any) -> np.ndarray:
    """Gradient of a scalar function by one forward-mode pass.

    Args:
        f: Function of a sequence of n reals, built from Dual-aware operations
        x: Evaluation point

    Returns:
        Vector of partial derivatives at x

    Raises:
        DomainError: log/sqrt met a non-positive value during propagation
    """
    duals = _seed_duals(x)
    out = f(duals)
    if isinstance(out, Dual):
        return out.derivs.copy()
    return np.zeros(len(duals))


def jacobian(f: Callable[[Sequence[Any]], Sequence[Any]], x: Any) -> np.ndarray:
    """Jacobian of a vector function; row i is the gradient of output i."""
    duals = _seed_duals(x)
    n = len(duals)
    out = f(duals)
    rows = []
    for item in out:
        rows.append(item.derivs if isinstance(item, Dual) else np.zeros(n))
    if not rows:
        return np.zeros((0, n))
    return np.vstack(rows)


def central_difference_jacobian(f: Callable[[np.ndarray], Any], x: Any) -> np.ndarray:
    """Finite-difference Jacobian with step 1e-6*max(|x_i|, 1); a cross-check only."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    cols = []
    for i in range(x.size):
        h = 1e-6 * max(abs(x[i]), 1.0)
        up, down = x.copy(), x.copy()
        up[i] += h
        down[i] -= h
        cols.append((np.asarray(f(up), float) - np.asarray(f(down), float)) / (2.0 * h))
    return np.column_stack(cols)


@dataclass(frozen=True)
class OdeProblem:
    """Autonomous or time-dependent ODE on a fixed, equally spaced output grid."""

    rhs: Callable[[float, List[Any], Sequence[Any]], Sequence[Any]]
    t_span: Tuple[float, float]
    initial_state: Tuple[Any, ...]
    n_steps: int

    def __post_init__(self) -> None:
        t0, t1 = self.t_span
        if not t1 > t0:
            raise PreconditionError(f"t_span must be increasing, got {self.t_span}")
        if self.n_steps < 1:
            raise PreconditionError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(self.t_span[0], self.t_span[1], self.n_steps + 1)


def _as_array(rows: List[List[Any]]) -> np.ndarray:
    if any(isinstance(v, Dual) for row in rows for v in row):
        arr = np.empty((len(rows), len(rows[0])), dtype=object)
        for i, row in enumerate(rows):
            for j, v in enumerate(row):
                arr[i, j] = v
        return arr
    return np.asarray(rows, dtype=float)


def solve_ode(prob: OdeProblem, params: Sequence[Any]) -> np.ndarray:
    """Classic fourth-order Runge-Kutta with a fixed step.

    Works on plain floats and on Duals, so parameter sensitivities flow through the
    integrator.

    Returns:
        Array of shape (n_steps + 1, n_states); dtype object when Duals are present

    Raises:
        IntegrationError: the state became non-finite, or the right-hand side failed
    """
    t0, t1 = prob.t_span
    n = prob.n_steps
    h = (t1 - t0) / n
    y = list(prob.initial_state)
    rows = [list(y)]
    for step in range(1, n + 1):
        t = t0 + (step - 1) * h
        try:
            k1 = prob.rhs(t, y, params)
            k2 = prob.rhs(t + 0.5 * h, [yi + 0.5 * h * ki for yi, ki in zip(y, k1)], params)
            k3 = prob.rhs(t + 0.5 * h, [yi + 0.5 * h * ki for yi, ki in zip(y, k2)], params)
            k4 = prob.rhs(t + h, [yi + h * ki for yi, ki in zip(y, k3)], params)
        except (ArithmeticError, ValueError) as e:
            raise IntegrationError(step, f"right-hand side failed ({e})") from e
        y = [
            yi + (h / 6.0) * (a + 2.0 * b + 2.0 * c + d)
            for yi, a, b, c, d in zip(y, k1, k2, k3, k4)
        ]
        if not all(math.isfinite(value_of(yi)) for yi in y):
            raise IntegrationError(step)
        rows.append(list(y))
    return _as_array(rows)


@dataclass(frozen=True)
class SvdFactors:
    U: np.ndarray
    S: np.ndarray
    Vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        k = self.S.size
        return (self.U[:, :k] * self.S) @ self.Vt[:k]


def svd(M: Any) -> SvdFactors:
    """Full SVD with a deterministic sign convention.

    In every right-singular vector the first entry of largest magnitude is made
    positive; the matching left-singular vector is flipped with it.

    Raises:
        NumericalError: M has non-finite entries or LAPACK fails
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise PreconditionError(f"svd expects a matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NumericalError("Failed to compute SVD: matrix has non-finite entries")
    try:
        U, S, Vt = np.linalg.svd(M, full_matrices=True)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"Failed to compute SVD: {e}") from e
    U = U.copy()
    Vt = Vt.copy()
    for i in range(Vt.shape[0]):
        mags = np.abs(Vt[i])
        j = int(np.argmax(mags >= mags.max() * (1.0 - 1e-9)))
        if Vt[i, j] < 0.0:
            Vt[i] = -Vt[i]
            if i < S.size:
                U[:, i] = -U[:, i]
    return SvdFactors(U=U, S=S, Vt=Vt)


@dataclass(frozen=True)
class OptimResult:
    argmin: np.ndarray
    fmin: float
    n_evals: int
    converged: bool


def _split_bounds(bounds: Any, n: int) -> Tuple[np.ndarray, np.ndarray]:
    b = np.asarray(bounds, dtype=float).reshape(-1, 2)
    if b.shape[0] != n:
        raise PreconditionError(f"bounds have {b.shape[0]} entries for {n} variables")
    lo, hi = b[:, 0].copy(), b[:, 1].copy()
    if np.any(lo > hi):
        raise PreconditionError("lower bound exceeds upper bound")
    return lo, hi


def latin_hypercube(n_points: int, lo: np.ndarray, hi: np.ndarray,
                    rng: np.random.Generator) -> np.ndarray:
    """Latin-hypercube sample of the box, one stratum per point in every dimension."""
    d = lo.size
    if n_points <= 0:
        return np.empty((0, d))
    u = np.empty((n_points, d))
    for j in range(d):
        u[:, j] = (rng.permutation(n_points) + rng.random(n_points)) / n_points
    return lo + u * (hi - lo)


def _initial_simplex(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    n = x.size
    simplex = np.tile(x, (n + 1, 1))
    for j in range(n):
        width = hi[j] - lo[j]
        step = 0.05 * width if width > 0 else 1e-3
        # step towards the interior so no vertex starts on a bound
        if x[j] + step > hi[j]:
            step = -step
        simplex[j + 1, j] += step
    return simplex


def _nelder_mead_clamped(
    f: Callable[[np.ndarray], float],
    x0: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    fatol: float,
    maxfev: int,
    max_restarts: int,
) -> OptimResult:
    evals = 0

    def objective(x: np.ndarray) -> float:
        nonlocal evals
        evals += 1
        try:
            val = float(f(np.clip(x, lo, hi)))
        except (ArithmeticError, ValueError):
            return _PENALTY
        return val if math.isfinite(val) and val < _PENALTY else _PENALTY

    best_x = np.clip(x0, lo, hi)
    best_f = objective(best_x)
    converged = False
    for _ in range(max_restarts + 1):
        remaining = maxfev - evals
        if remaining <= 0:
            break
        res = minimize(
            objective,
            best_x,
            method="Nelder-Mead",
            options={
                "xatol": np.inf,
                "fatol": fatol,
                "maxfev": remaining,
                "initial_simplex": _initial_simplex(best_x, lo, hi),
            },
        )
        converged = bool(res.success)
        xc = np.clip(res.x, lo, hi)
        fc = objective(xc)
        improved = fc < best_f - fatol
        if fc <= best_f:
            best_x, best_f = xc, fc
        if not improved:
            break
    fmin = best_f if best_f < _PENALTY else math.inf
    return OptimResult(argmin=best_x, fmin=fmin, n_evals=evals,
                       converged=converged and math.isfinite(fmin))


def minimize_box(
    f: Callable[[np.ndarray], float],
    x0: Any,
    bounds: Any,
    *,
    seed: int = 0,
    n_starts: int = 5,
    fatol: float = 1e-10,
    maxfev: int = 5000,
    max_restarts: int = 3,
) -> OptimResult:
    """Minimize f over a box with multistart Nelder-Mead.

    Bounds are enforced by clamping coordinates before each evaluation; after each
    run the search restarts from the clamped argmin until it stops improving.

    Args:
        f: Objective; non-finite values are treated as a large penalty
        x0: Initial point, must lie inside the box
        bounds: Sequence of (lower, upper) pairs, one per variable
        seed: Seed for the Latin-hypercube starts
        n_starts: Number of Latin-hypercube starts in addition to x0; the starts
            are the leading rows of a seeded hypercube of at least 20 points
        fatol: Simplex f-spread tolerance
        maxfev: Evaluation cap per start

    Returns:
        Best result over all starts; n_evals is the total spent

    Raises:
        PreconditionError: x0 lies outside the bounds
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    lo, hi = _split_bounds(bounds, x0.size)
    if np.any(x0 < lo) or np.any(x0 > hi):
        raise PreconditionError(f"Initial point {x0.tolist()} lies outside the bounds")
    rng = np.random.default_rng(seed)
    pool = latin_hypercube(max(n_starts, _LHS_POOL), lo, hi, rng)
    starts = [x0] + list(pool[:n_starts])

    best = None
    total = 0
    for start in starts:
        res = _nelder_mead_clamped(f, start, lo, hi, fatol, maxfev, max_restarts)
        total += res.n_evals
        if best is None or res.fmin < best.fmin:
            best = res
    assert best is not None
    if not best.converged:
        logger.debug("Nelder-Mead did not converge; best f=%g after %d evaluations",
                     best.fmin, total)
    return OptimResult(argmin=best.argmin, fmin=best.fmin, n_evals=total,
                       converged=best.converged)


def chi2_quantile(df: int, level: float) -> float:
    """Chi-square quantile at ``level`` with ``df`` degrees of freedom."""
    if df < 1:
        raise PreconditionError(f"df must be positive, got {df}")
    if not 0.0 < level < 1.0:
        raise PreconditionError(f"level must lie in (0, 1), got {level}")
    return float(chi2.ppf(level, df))
