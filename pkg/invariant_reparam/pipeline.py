"""End-to-end workflow behind the CLI commands.

A ``Session`` resolves a RunConfig into a model, a dataset and a likelihood problem
and caches the expensive intermediate results (MLE, SVD analysis, coordinates). The
``cmd_*`` functions run one command and write its artifacts plus a manifest.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from invariant_reparam.artifacts import write_csv, write_json, write_manifest
from invariant_reparam.errors import ConfigError, PreconditionError
from invariant_reparam.likelihood import LikelihoodProblem, MleResult, mle
from invariant_reparam.model_api import (
    Dataset,
    ModelSpec,
    load_dataset,
    resolve_model,
    synthetic_dataset,
    with_observation,
)
from invariant_reparam.models import MM_DEFAULT_SEED, paper_dataset
from invariant_reparam.predict import PredictionBand, band_union, prediction_band
from invariant_reparam.profile import (
    GridSpec,
    ProfileRequest,
    ProfileResult,
    one_sidedness,
    run_profile,
)
from invariant_reparam.reparam import (
    FisherReport,
    InvarianceReport,
    Reparameterisation,
    SvdAnalysis,
    analyze,
    build_reparam,
    fisher_rank_check,
    invariance_check,
)
from invariant_reparam.runconfig import (
    PredictionConfig,
    ProfileConfig,
    RunConfig,
    UnionConfig,
    resolve_target,
)
from invariant_reparam.settings import Settings, load_settings

logger = logging.getLogger(__name__)

BUILTIN_MODELS = ("stat-poisson-limit", "stat-binomial", "mm-full", "mm-reduced", "flow")
PUBLISHED_FAMILIES = ("stat", "flow")

# extra reference points for the invariance check
INVARIANCE_POINTS = 4


def effective_settings(config: RunConfig, settings: Settings) -> Settings:
    """User settings with the run configuration's tolerances and level applied."""
    t = config.tolerances
    return settings.merged(
        rank_tol_structural=t.structural,
        rank_tol_practical=t.practical,
        granularity=t.granularity,
        rounding_scale=t.scale,
        level=config.level,
    )


def load_data(config: RunConfig, model: ModelSpec) -> Dataset:
    """Dataset named by ``config.data``; ``auto`` picks published data when it exists."""
    d = config.data
    source = d.source
    if source == "auto":
        family = model.name.split("-")[0]
        source = "published" if family in PUBLISHED_FAMILIES else "synthetic"
    if source == "published":
        return paper_dataset(model.name)
    if source == "file":
        return load_dataset(d.path)
    theta = d.theta if d.theta is not None else model.true_theta
    if theta is None:
        raise ConfigError(f"model '{model.name}' has no true parameters; set data.theta",
                          field="data.theta")
    if len(theta) != model.n_params:
        raise ConfigError(f"expected {model.n_params} values", field="data.theta")
    seed = d.seed if d.seed is not None else MM_DEFAULT_SEED
    return synthetic_dataset(model, theta, seed, d.n_replicates)


@dataclass(eq=False)
class Session:
    config: RunConfig
    settings: Settings
    model: ModelSpec
    data: Dataset
    problem: LikelihoodProblem
    _fit: Optional[MleResult] = field(default=None, repr=False)
    _analysis: Optional[SvdAnalysis] = field(default=None, repr=False)
    _coordinates: Optional[Reparameterisation] = field(default=None, repr=False)

    @classmethod
    def open(cls, config: RunConfig, settings: Optional[Settings] = None) -> "Session":
        settings = effective_settings(config, settings or load_settings())
        model = resolve_model(config.model)
        if config.observation_indices is not None:
            try:
                model = with_observation(model, config.observation_indices)
            except PreconditionError as e:
                raise ConfigError(str(e), field="observation_indices") from e
        data = load_data(config, model)
        try:
            problem = LikelihoodProblem(model, data, margin=settings.bound_margin)
        except PreconditionError as e:
            raise ConfigError(str(e), field="data") from e
        return cls(config, settings, model, data, problem)

    def fit(self) -> MleResult:
        if self._fit is None:
            s = self.settings
            self._fit = mle(self.problem, seed=self.config.seed, n_starts=s.n_starts,
                            fatol=s.fatol, maxfev=s.maxfev)
        return self._fit

    def reference_point(self) -> np.ndarray:
        ref = self.config.reference_point
        if isinstance(ref, str):
            return self.fit().theta_original
        theta = np.asarray(ref, dtype=float)
        if theta.size != self.model.n_params:
            raise ConfigError(f"expected {self.model.n_params} values, got {theta.size}",
                              field="reference_point")
        if not self.model.in_bounds(theta):
            raise ConfigError(f"{theta.tolist()} lies outside the parameter box",
                              field="reference_point")
        return theta

    def analysis(self) -> SvdAnalysis:
        if self._analysis is None:
            s = self.settings
            self._analysis = analyze(self.model, self.reference_point(),
                                     s.rank_tol_structural, s.rank_tol_practical)
        return self._analysis

    def coordinates(self) -> Reparameterisation:
        if self._coordinates is None:
            s = self.settings
            self._coordinates = build_reparam(self.analysis(), self.config.rounded,
                                              s.granularity, s.rounding_scale)
        return self._coordinates

    def problem_for(self, coordinates: str) -> LikelihoodProblem:
        if coordinates == "reparam":
            return self.problem.with_coordinates(self.coordinates())
        return self.problem

    def mle_for(self, problem: LikelihoodProblem) -> MleResult:
        """The MLE expressed in the problem's active coordinates."""
        fit = self.fit()
        if problem.coordinates is None:
            return fit
        return MleResult(
            theta_hat=problem.from_original(fit.theta_original),
            loglik_max=fit.loglik_max,
            at_bound=fit.at_bound,
            theta_original=fit.theta_original,
            n_evals=fit.n_evals,
            labels=problem.labels,
        )


_SLUG_WORDS = str.maketrans({"/": "_per_", "*": "_", ",": "__", "^": "_pow_"})


def _slug(name: str) -> str:
    """File-name stem: 'nu/K' -> 'nu_per_K', 'nu*K' -> 'nu_K', 'nu,K' -> 'nu__K'."""
    return re.sub(r"[^A-Za-z0-9_.]+", "", name.translate(_SLUG_WORDS)) or "unnamed"


def invariance_points(model: ModelSpec, reference: np.ndarray, seed: int) -> List[np.ndarray]:
    """Reference point plus seeded log-uniform points from the middle of the box."""
    rng = np.random.default_rng(seed)
    log_lo, log_hi = np.log(model.lower), np.log(model.upper)
    centre, half = 0.5 * (log_lo + log_hi), 0.25 * (log_hi - log_lo)
    points = [np.asarray(reference, dtype=float)]
    for _ in range(INVARIANCE_POINTS):
        points.append(np.exp(rng.uniform(centre - half, centre + half)))
    return points


def run_reparam(session: Session) -> Tuple[SvdAnalysis, Reparameterisation, InvarianceReport]:
    s = session.settings
    analysis = session.analysis()
    coords = session.coordinates()
    points = invariance_points(session.model, analysis.reference_point, session.config.seed)
    report = invariance_check(session.model, points, s.rank_tol_structural)
    logger.info("%s: rank %d, coordinates %s", session.model.name, analysis.rank,
                ", ".join(coords.labels))
    return analysis, coords, report


def _reparam_payload(session: Session, coords: Reparameterisation) -> Dict[str, object]:
    analysis = session.analysis()
    unrounded = build_reparam(analysis, False)
    payload: Dict[str, object] = {
        "selected": coords.to_dict(),
        "unrounded_rows": unrounded.exponents.tolist(),
        "granularity": session.settings.granularity,
        "rounding_scale": session.settings.rounding_scale,
        "bounds": coords.bounds(session.model, session.settings.bound_margin).tolist(),
    }
    if coords.rounded:
        payload["rounded_rows"] = coords.exponents.tolist()
    return payload


def cmd_reparam(session: Session, out_dir: Path) -> List[Path]:
    analysis, coords, report = run_reparam(session)
    return [
        write_json(out_dir / "svd_analysis.json", analysis.to_dict()),
        write_json(out_dir / "reparameterisation.json", _reparam_payload(session, coords)),
        write_json(out_dir / "invariance_check.json", report.to_dict()),
    ]


def cmd_mle(session: Session, out_dir: Path) -> List[Path]:
    fit = session.fit()
    payload = {
        "model": session.model.name,
        "n_observations": int(session.data.observations.size),
        "n_replicates": session.data.n_replicates,
        "mle": fit.to_dict(),
    }
    return [write_json(out_dir / "mle.json", payload)]


def _default_grid(problem: LikelihoodProblem, index: int, n_points: int) -> GridSpec:
    lo, hi = (float(v) for v in problem.bounds[index])
    spacing = "log" if hi / lo > 20.0 else "linear"
    return GridSpec(lo, hi, n_points, spacing)


def build_request(session: Session, cfg: ProfileConfig, where: str) -> ProfileRequest:
    s = session.settings
    problem = session.problem_for(cfg.coordinates)
    targets = tuple(resolve_target(t, problem.labels, f"{where}.targets[{i}]")
                    for i, t in enumerate(cfg.targets))
    if len(set(targets)) != len(targets):
        raise ConfigError("targets must be distinct", field=f"{where}.targets")
    n_points = s.grid_points_1d if len(targets) == 1 else s.grid_points_2d
    grid = cfg.grid or tuple(_default_grid(problem, t, n_points) for t in targets)
    df = cfg.df or session.config.df
    try:
        return ProfileRequest(
            problem=problem,
            target_indices=targets,
            grid=grid,
            df=df,
            level=s.level,
            mle=session.mle_for(problem),
            seed=session.config.seed,
            n_starts=s.n_starts,
            fatol=s.fatol,
            maxfev=s.maxfev,
            parallel=s.parallel,
            max_workers=s.max_workers,
            name=cfg.name,
        )
    except PreconditionError as e:
        raise ConfigError(str(e), field=where) from e


def run_profiles(session: Session, plan: Sequence[ProfileConfig]) -> Dict[str, ProfileResult]:
    results = {}
    for i, cfg in enumerate(plan):
        request = build_request(session, cfg, f"profiles[{i}]")
        results[cfg.name] = run_profile(request)
        logger.info("Profile %s: %d of %d nodes inside the confidence set", cfg.name,
                    int(results[cfg.name].crossing_set.sum()),
                    results[cfg.name].crossing_set.size)
    return results


def _write_profiles(session: Session, results: Dict[str, ProfileResult],
                    out_dir: Path) -> List[Path]:
    outputs = []
    summaries = []
    for name, result in results.items():
        header, rows = result.to_rows()
        outputs.append(write_csv(out_dir / f"profile_{_slug(name)}.csv", header, rows))
        summary = result.summary()
        if result.ndim == 1:
            summary["sidedness"] = one_sidedness(result,
                                                 session.settings.one_sided_ratio).to_dict()
        summaries.append(summary)
    outputs.append(write_json(out_dir / "profiles.json", summaries))
    return outputs


def run_predictions(
    session: Session,
    profiles: Dict[str, ProfileResult],
    predictions: Sequence[PredictionConfig],
    unions: Sequence[UnionConfig],
) -> Dict[str, PredictionBand]:
    bands: Dict[str, PredictionBand] = {}
    for i, cfg in enumerate(predictions):
        if cfg.profile not in profiles:
            raise ConfigError(f"no profile named '{cfg.profile}'",
                              field=f"predictions[{i}].profile")
        profile = profiles[cfg.profile]
        problem = session.problem_for(profile.coordinates)
        df = cfg.df or session.config.df or 2
        bands[cfg.name] = prediction_band(problem, profile, df, name=cfg.name)
    for u in unions:
        bands[u.name] = band_union([bands[b] for b in u.bands], name=u.name)
    return bands


def _write_bands(bands: Dict[str, PredictionBand], out_dir: Path) -> List[Path]:
    outputs = []
    for name, band in bands.items():
        header, rows = band.to_rows()
        outputs.append(write_csv(out_dir / f"band_{_slug(name)}.csv", header, rows))
    outputs.append(write_json(out_dir / "bands.json", [b.summary() for b in bands.values()]))
    return outputs


def _plan(session: Session) -> Tuple[Tuple[ProfileConfig, ...], Tuple[PredictionConfig, ...],
                                     Tuple[UnionConfig, ...]]:
    config = session.config
    if config.profiles:
        return config.profiles, config.predictions, config.unions
    default = session_plan(session)
    return default.profiles, default.predictions, default.unions


def cmd_profile(session: Session, out_dir: Path) -> List[Path]:
    profiles, _, _ = _plan(session)
    outputs = cmd_mle(session, out_dir)
    outputs += _write_profiles(session, run_profiles(session, profiles), out_dir)
    return outputs


def cmd_predict(session: Session, out_dir: Path) -> List[Path]:
    profiles, predictions, unions = _plan(session)
    if not predictions:
        raise ConfigError("no predictions requested and none planned for this model",
                          field="predictions")
    needed = {p.profile for p in predictions}
    results = run_profiles(session, [p for p in profiles if p.name in needed])
    bands = run_predictions(session, results, predictions, unions)
    return cmd_mle(session, out_dir) + _write_bands(bands, out_dir)


def run_fisher_check(session: Session) -> FisherReport:
    fit = session.fit()
    return fisher_rank_check(session.problem, fit.theta_original,
                             session.settings.rank_tol_structural)


def cmd_fisher_check(session: Session, out_dir: Path) -> List[Path]:
    report = run_fisher_check(session)
    payload = report.to_dict()
    payload["model"] = session.model.name
    payload["observation_indices"] = list(session.model.obs_operator.indices)
    return [write_json(out_dir / "fisher_check.json", payload)]


COMMANDS = {
    "reparam": cmd_reparam,
    "mle": cmd_mle,
    "profile": cmd_profile,
    "predict": cmd_predict,
    "fisher-check": cmd_fisher_check,
}


def run_command(command: str, config: RunConfig, out_dir: Path,
                settings: Optional[Settings] = None,
                session: Optional[Session] = None) -> List[Path]:
    """Run one command and write its manifest; returns every file written."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command '{command}'", field="command")
    session = session or Session.open(config, settings)
    outputs = COMMANDS[command](session, out_dir)
    outputs.append(write_manifest(out_dir, command, session.model.name, config.digest(),
                                  config.seed, outputs))
    return outputs


@dataclass(frozen=True)
class Plan:
    profiles: Tuple[ProfileConfig, ...] = ()
    predictions: Tuple[PredictionConfig, ...] = ()
    unions: Tuple[UnionConfig, ...] = ()


@dataclass(frozen=True)
class MonomialGrid:
    """Grid for the coordinate whose exponent row is parallel to ``exponents``."""

    exponents: Tuple[float, ...]
    lo: float
    hi: float
    spacing: str = "linear"


def _grid(lo: float, hi: float, n: int, spacing: str = "linear") -> GridSpec:
    return GridSpec(lo, hi, n, spacing)


def monomial_power(row: Sequence[float], exponents: Sequence[float]) -> Optional[float]:
    """The power c with ``row == c * exponents``, or None when they are not parallel.

    A coordinate with exponent row ``c * exponents`` is the monomial of ``exponents``
    raised to c, whatever label the rounding scale gave it.
    """
    r, want = np.asarray(row, dtype=float), np.asarray(exponents, dtype=float)
    c = float(r @ want / (want @ want))
    if abs(c) > 1e-12 and np.allclose(r, c * want, atol=1e-9):
        return c
    return None


def _coordinate_grid(row: np.ndarray, known: Sequence[MonomialGrid],
                     n: int) -> Optional[GridSpec]:
    for spec in known:
        power = monomial_power(row, spec.exponents)
        if power is not None:
            lo, hi = sorted((spec.lo ** power, spec.hi ** power))
            return _grid(lo, hi, n, spec.spacing)
    return None


def reparam_profiles(coords: Reparameterisation, known: Sequence[MonomialGrid],
                     n: int) -> List[ProfileConfig]:
    """One profile per coordinate; rows along a known direction get its grid.

    Other rows are profiled over their coordinate box.
    """
    profiles = []
    for index, (row, label) in enumerate(zip(coords.exponents, coords.labels)):
        grid = _coordinate_grid(row, known, n)
        profiles.append(ProfileConfig(label, (index,), "reparam",
                                      None if grid is None else (grid,)))
    return profiles


def _reparam_pair(coords: Reparameterisation, known: Sequence[MonomialGrid],
                  first: int, second: int, n: int) -> ProfileConfig:
    grids = [_coordinate_grid(coords.exponents[i], known, n) for i in (first, second)]
    name = f"{coords.labels[first]},{coords.labels[second]}"
    return ProfileConfig(name, (first, second), "reparam",
                         None if any(g is None for g in grids) else tuple(grids), 2)


_STAT_REPARAM_GRIDS = (
    MonomialGrid((1.0, 1.0), 10.0, 30.0),
    MonomialGrid((1.0, -1.0), 20.0, 10000.0, "log"),
)


def _stat_plan(n1: int, n2: int, coords: Optional[Reparameterisation]) -> Plan:
    n_grid, p_grid = _grid(5.0, 500.0, n1, "log"), _grid(0.01, 1.0, n1, "log")
    profiles = [
        ProfileConfig("n", ("n",), "original", (n_grid,)),
        ProfileConfig("p", ("p",), "original", (p_grid,)),
        ProfileConfig("n,p", ("n", "p"), "original",
                      (_grid(5.0, 500.0, n2, "log"), _grid(0.01, 1.0, n2, "log")), 2),
    ]
    if coords is not None:
        profiles += reparam_profiles(coords, _STAT_REPARAM_GRIDS, n1)
    return Plan(tuple(profiles))


_MM_REPARAM_GRIDS = (
    MonomialGrid((1.0, -1.0), 0.12, 0.3),
    MonomialGrid((1.0, 1.0), 0.01, 400.0, "log"),
)


def _mm_plan(n1: int, n2: int, coords: Optional[Reparameterisation]) -> Plan:
    nu_grid, k_grid = _grid(0.01, 10.0, n1, "log"), _grid(0.01, 50.0, n1, "log")
    profiles = [
        ProfileConfig("nu", ("nu",), "original", (nu_grid,)),
        ProfileConfig("K", ("K",), "original", (k_grid,)),
        ProfileConfig("nu,K", ("nu", "K"), "original",
                      (_grid(0.01, 10.0, n2, "log"), _grid(0.01, 50.0, n2, "log")), 2),
    ]
    predictions = [PredictionConfig("nu,K", "nu,K", 2)]
    unions: List[UnionConfig] = []
    if coords is not None:
        reparam = reparam_profiles(coords, _MM_REPARAM_GRIDS, n1)
        profiles += reparam
        predictions += [PredictionConfig(p.name, p.name, 2) for p in reparam]
        names = tuple(p.name for p in reparam)
        unions.append(UnionConfig("+".join(names), names))
    return Plan(tuple(profiles), tuple(predictions), tuple(unions))


_FLOW_REPARAM_GRIDS = (
    MonomialGrid((0.0, 1.0, -1.0), 0.7, 1.5),
    MonomialGrid((1.0, -0.5, -0.5), 0.5, 30.0, "log"),
    MonomialGrid((1.0, 1.0, 1.0), 0.05, 10.0, "log"),
)


def _flow_plan(n1: int, n2: int, coords: Optional[Reparameterisation]) -> Plan:
    names = ("T1", "T2", "R")
    profiles = [ProfileConfig(p, (p,), "original", (_grid(0.1, 5.0, n1),)) for p in names]
    pairs = [(a, b) for i, a in enumerate(names) for b in names[i + 1:]]
    profiles += [
        ProfileConfig(f"{a},{b}", (a, b), "original",
                      (_grid(0.1, 5.0, n2), _grid(0.1, 5.0, n2)), 2)
        for a, b in pairs
    ]
    predictions: List[PredictionConfig] = []
    unions: List[UnionConfig] = []
    if coords is not None:
        singles = reparam_profiles(coords, _FLOW_REPARAM_GRIDS, n1)
        profiles += singles
        n = coords.n_coords
        profiles += [_reparam_pair(coords, _FLOW_REPARAM_GRIDS, i, j, n2)
                     for i in range(n) for j in range(i + 1, n)]
        predictions = [PredictionConfig(p.name, p.name, 2)
                       for p in profiles if p.coordinates == "reparam"]
        unions.append(UnionConfig("reparam_1d_union", tuple(p.name for p in singles)))
    return Plan(tuple(profiles), tuple(predictions), tuple(unions))


def _generic_plan(model: ModelSpec) -> Plan:
    profiles = [ProfileConfig(p, (p,), "original") for p in model.param_names]
    profiles += [ProfileConfig(f"reparam_{i}", (i,), "reparam")
                 for i in range(model.n_params)]
    predictions = [PredictionConfig(p.name, p.name, 2) for p in profiles]
    unions = (UnionConfig("union", tuple(p.name for p in predictions)),)
    return Plan(tuple(profiles), tuple(predictions), unions)


def default_plan(model: ModelSpec, settings: Settings,
                 coords: Optional[Reparameterisation] = None) -> Plan:
    """Profiles, bands and unions run when a configuration names none.

    Built-in models profile their published reparameterised coordinates only when
    rounded ``coords`` are given; they are found by exponent direction, not by label.
    """
    n1, n2 = settings.grid_points_1d, settings.grid_points_2d
    family = model.name.split("-")[0]
    if model.name in BUILTIN_MODELS and family == "stat":
        return _stat_plan(n1, n2, coords)
    if model.name in BUILTIN_MODELS and family == "mm":
        return _mm_plan(n1, n2, coords)
    if model.name == "flow":
        return _flow_plan(n1, n2, coords)
    return _generic_plan(model)


def session_plan(session: Session) -> Plan:
    """Default plan of a session, with its coordinates when they are rounded."""
    coords = session.coordinates() if session.config.rounded else None
    return default_plan(session.model, session.settings, coords)


def builtin_config(model_name: str, seed: int) -> RunConfig:
    """Run configuration of the published analysis for one built-in model.

    Structural analyses sit at the true parameters for the mechanistic models and at
    the MLE for the count models; Michaelis-Menten data is the seeded synthetic draw.
    """
    if model_name not in BUILTIN_MODELS:
        raise ConfigError(f"'{model_name}' is not one of {', '.join(BUILTIN_MODELS)}",
                          field="model")
    reference: object = "mle"
    if model_name == "flow":
        reference = (3.0, 1.0, 1.0)
    elif model_name.startswith("mm-"):
        reference = (1.0, 5.0)
    return RunConfig(model=model_name, reference_point=reference, seed=seed)


def reproduce_builtin(out_dir: Path, seed: int, models: Sequence[str] = BUILTIN_MODELS,
                      settings: Optional[Settings] = None) -> List[Path]:
    """Full analysis of each built-in model into ``out_dir/<model>/``."""
    settings = settings or load_settings()
    outputs: List[Path] = []
    for name in models:
        config = builtin_config(name, seed)
        session = Session.open(config, settings)
        model_dir = out_dir / name
        written = cmd_reparam(session, model_dir)
        written += cmd_fisher_check(session, model_dir)
        plan = session_plan(session)
        profiles = run_profiles(session, plan.profiles)
        written += cmd_mle(session, model_dir)
        written += _write_profiles(session, profiles, model_dir)
        if plan.predictions:
            bands = run_predictions(session, profiles, plan.predictions, plan.unions)
            written += _write_bands(bands, model_dir)
        written.append(write_manifest(model_dir, "reproduce-paper", name, config.digest(),
                                      seed, written))
        logger.info("Reproduced %s into %s", name, model_dir)
        outputs += written
    return outputs
