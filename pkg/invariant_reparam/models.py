"""Built-in example models: a normal approximation to binomial counts,
Michaelis-Menten substrate depletion, and steady flow through two-region media.

Each model is exposed as a ``ModelSpec`` factory registered under its public name:
``stat-poisson-limit``, ``stat-binomial``, ``mm-full``, ``mm-reduced`` and ``flow``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial
from typing import Any, List, Sequence, Tuple

import numpy as np

from invariant_reparam.errors import ConfigError, PreconditionError
from invariant_reparam.model_api import (
    Dataset,
    ErrorModel,
    ModelSpec,
    ObservationOperator,
    get_model,
    register_model,
    synthetic_dataset,
)
from invariant_reparam.numerics import Dual, OdeProblem, solve_ode, value_of

# Positive stand-in for a lower bound of zero; parameters are log-transformed.
EPS = 1e-6

STAT_DATA: Tuple[float, ...] = (21.9, 22.3, 12.8, 16.4, 16.4, 20.3, 16.2, 20.0, 19.7, 24.4)

FLOW_DATA: Tuple[float, ...] = (
    186.4, 402.6, 505.2, 756.1, 1144.1, 790.9, 1283.5, 1647.6, 872.3, 1144.4,
    1691.2, 1352.7, 1519.9, 1316.0, 1437.1, 726.7, 952.3, 759.4, 272.0,
)

MM_DEFAULT_SEED = 1


@dataclass(frozen=True)
class StatModelConfig:
    variant: str = "poisson-limit"
    true_n: float = 100.0
    true_p: float = 0.2
    n_samples: int = 10
    n_bounds: Tuple[float, float] = (EPS, 500.0)
    p_bounds: Tuple[float, float] = (EPS, 1.0)


@dataclass(frozen=True)
class MMConfig:
    nu: float = 1.0
    K: float = 5.0
    S0: float = 1.0
    t_span: Tuple[float, float] = (0.0, 20.0)
    fine_points: int = 201
    obs_points: int = 11
    sigma: float = 0.05
    variant: str = "full"
    nu_bounds: Tuple[float, float] = (0.01, 10.0)
    K_bounds: Tuple[float, float] = (0.01, 50.0)


@dataclass(frozen=True)
class FlowConfig:
    T1: float = 3.0
    T2: float = 1.0
    R: float = 1.0
    L: float = 100.0
    fine_points: int = 201
    obs_points: int = 19
    sigma: float = 0.2
    bounds: Tuple[Tuple[float, float], ...] = ((0.1, 5.0), (0.1, 5.0), (0.1, 5.0))


def stat_auxiliary(variant: str, n: Any, p: Any) -> Tuple[Any, Any]:
    """Normal-distribution mean and variance of the count model.

    ``poisson-limit`` gives (np, np); ``binomial`` gives (np, np(1-p)).
    """
    if value_of(n) <= 0 or not 0 < value_of(p) <= 1:
        raise PreconditionError(f"stat model needs n > 0 and 0 < p <= 1, got ({n}, {p})")
    mu = n * p
    if variant == "poisson-limit":
        return mu, n * p
    if variant == "binomial":
        return mu, mu * (1.0 - p)
    raise PreconditionError(f"unknown stat model variant '{variant}'")


def _stat_map(config: StatModelConfig, theta: Sequence[Any]) -> List[Any]:
    return list(stat_auxiliary(config.variant, theta[0], theta[1]))


def _mm_full_rhs(t: float, state: List[Any], params: Sequence[Any]) -> List[Any]:
    nu, K = params
    s = state[0]
    return [-nu * s / (K + s)]


def _mm_reduced_rhs(t: float, state: List[Any], params: Sequence[Any]) -> List[Any]:
    nu, K = params
    return [-(nu / K) * state[0]]


def mm_solution(config: MMConfig, nu: Any, K: Any) -> np.ndarray:
    """Substrate trajectory S(t) on the fine grid by fixed-step RK4."""
    if value_of(nu) <= 0 or value_of(K) <= 0:
        raise PreconditionError(f"Michaelis-Menten needs nu, K > 0, got ({nu}, {K})")
    rhs = _mm_full_rhs if config.variant == "full" else _mm_reduced_rhs
    prob = OdeProblem(rhs, config.t_span, (config.S0,), config.fine_points - 1)
    return solve_ode(prob, [nu, K])[:, 0]


def _mm_map(config: MMConfig, theta: Sequence[Any]) -> List[Any]:
    return list(mm_solution(config, theta[0], theta[1]))


def flow_coefficients(config: FlowConfig, T1: Any, T2: Any, R: Any) -> Tuple[Any, Any]:
    """Integration constants (alpha, beta2) of the piecewise quadratic head."""
    L = config.L
    a, b = R / T1, R / T2
    alpha = (3.0 * L / 8.0) * b + (L / 8.0) * a
    beta2 = (L * L / 8.0) * (b - a)
    return alpha, beta2


def flow_solution(config: FlowConfig, T1: Any, T2: Any, R: Any) -> np.ndarray:
    """Hydraulic head on the fine grid of [0, L].

    Region 1 (x < L/2) is -(R/T1)x^2/2 + alpha x. Region 2 is written as
    (x - L)(alpha - (R/T2)(x + L)/2), the same quadratic with the beta2 term folded
    in, so h(L) is exactly zero.
    """
    L = config.L
    x = np.linspace(0.0, L, config.fine_points)
    alpha, _ = flow_coefficients(config, T1, T2, R)
    a, b = R / T1, R / T2
    if not any(isinstance(v, Dual) for v in (T1, T2, R)):
        left = x * (alpha - 0.5 * a * x)
        right = (x - L) * (alpha - 0.5 * b * (x + L))
        return np.where(x < 0.5 * L, left, right)
    out = np.empty(x.size, dtype=object)
    for i, xi in enumerate(x.tolist()):
        if xi < 0.5 * L:
            out[i] = (alpha - (0.5 * xi) * a) * xi
        else:
            out[i] = (alpha - (0.5 * (xi + L)) * b) * (xi - L)
    return out


def _flow_map(config: FlowConfig, theta: Sequence[Any]) -> List[Any]:
    return list(flow_solution(config, theta[0], theta[1], theta[2]))


def stat_model(variant: str = "poisson-limit") -> ModelSpec:
    config = StatModelConfig(variant=variant)
    return ModelSpec(
        name=f"stat-{variant}",
        param_names=("n", "p"),
        bounds=(config.n_bounds, config.p_bounds),
        auxiliary=partial(_stat_map, config),
        fine_grid=np.array([]),
        obs_operator=ObservationOperator((0, 1)),
        error_model=ErrorModel("normal-moments"),
        true_theta=np.array([config.true_n, config.true_p]),
        description=f"normal approximation of binomial counts ({variant} variance)",
    )


def mm_model(variant: str = "full") -> ModelSpec:
    config = MMConfig(variant=variant)
    return ModelSpec(
        name=f"mm-{variant}",
        param_names=("nu", "K"),
        bounds=(config.nu_bounds, config.K_bounds),
        auxiliary=partial(_mm_map, config),
        fine_grid=np.linspace(config.t_span[0], config.t_span[1], config.fine_points),
        obs_operator=ObservationOperator.evenly_spaced(config.fine_points, config.obs_points),
        error_model=ErrorModel("normal-additive", config.sigma),
        true_theta=np.array([config.nu, config.K]),
        description=f"Michaelis-Menten substrate depletion ({variant})",
    )


def flow_model() -> ModelSpec:
    config = FlowConfig()
    return ModelSpec(
        name="flow",
        param_names=("T1", "T2", "R"),
        bounds=config.bounds,
        auxiliary=partial(_flow_map, config),
        fine_grid=np.linspace(0.0, config.L, config.fine_points),
        obs_operator=ObservationOperator.evenly_spaced(
            config.fine_points, config.obs_points, interior=True
        ),
        error_model=ErrorModel("log-normal", config.sigma),
        true_theta=np.array([config.T1, config.T2, config.R]),
        description="steady flow through two-region media with recharge",
    )


def paper_dataset(model_name: str) -> Dataset:
    """Published data realization for the stat and flow examples.

    Accepts the family name ("stat", "flow") or a built-in model name.

    Raises:
        ConfigError: unknown name, or a Michaelis-Menten model (no published data)
    """
    family = model_name.split("-")[0]
    if family == "stat":
        return Dataset(np.array(STAT_DATA), n_replicates=len(STAT_DATA))
    if family == "flow":
        return Dataset(np.array(FLOW_DATA), n_replicates=1)
    if family == "mm":
        raise ConfigError(
            "no published Michaelis-Menten realization; use synthetic data "
            f"(data.source = 'synthetic', default seed {MM_DEFAULT_SEED})",
            field="data.source",
        )
    raise ConfigError(f"unknown model '{model_name}'", field="model")


def mm_data(seed: int = MM_DEFAULT_SEED) -> Dataset:
    """Seeded synthetic realization N(B_obs s(theta_true), sigma^2) for the MM example.

    Generated from the full model; the reduced variant is fitted to the same data.
    """
    model = get_model("mm-full")
    return synthetic_dataset(model, model.true_theta, seed)


register_model("stat-poisson-limit", partial(stat_model, "poisson-limit"), replace=True)
register_model("stat-binomial", partial(stat_model, "binomial"), replace=True)
register_model("mm-full", partial(mm_model, "full"), replace=True)
register_model("mm-reduced", partial(mm_model, "reduced"), replace=True)
register_model("flow", flow_model, replace=True)
