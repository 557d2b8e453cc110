import numpy as np
import pytest

from invariant_reparam.model_api import get_model
from invariant_reparam.pipeline import Session, default_plan, monomial_power, session_plan
from invariant_reparam.reparam import WELL, Reparameterisation, monomial_label
from invariant_reparam.runconfig import RunConfig, Tolerances, resolve_target
from invariant_reparam.settings import Settings

SMALL = Settings(grid_points_1d=7, grid_points_2d=4, n_starts=2, parallel=False)


def _coords(rows, names):
    rows = np.asarray(rows, dtype=float)
    return Reparameterisation(
        exponents=rows,
        labels=tuple(monomial_label(r, names) for r in rows),
        classification=(WELL,) * len(rows),
        rounded=True,
        param_names=names,
    )


def _reparam(plan, n_targets):
    return [p for p in plan.profiles
            if p.coordinates == "reparam" and len(p.targets) == n_targets]


def test_monomial_power():
    assert monomial_power([2.0, -1.0, -1.0], [1.0, -0.5, -0.5]) == pytest.approx(2.0)
    assert monomial_power([-1.0, 1.0], [1.0, -1.0]) == pytest.approx(-1.0)
    assert monomial_power([1.0, 1.0], [1.0, -1.0]) is None
    assert monomial_power([0.0, 0.0, 1.0], [0.0, 1.0, -1.0]) is None


def test_flow_plan_targets_follow_the_exponent_rows(flow):
    """Rows rounded on the smallest entry still land on the published grids."""
    coords = _coords([[0.0, 1.0, -1.0], [2.0, -1.0, -1.0], [1.0, 1.0, 1.0]], ("T1", "T2", "R"))
    plan = default_plan(flow, SMALL, coords)

    singles = _reparam(plan, 1)
    assert [p.name for p in singles] == list(coords.labels)
    assert [p.targets for p in singles] == [(0,), (1,), (2,)]
    squared = singles[1].grid[0]
    assert squared.lo == pytest.approx(0.25)
    assert squared.hi == pytest.approx(900.0)
    assert squared.spacing == "log"
    assert squared.n_points == 7

    pairs = _reparam(plan, 2)
    assert [p.targets for p in pairs] == [(0, 1), (0, 2), (1, 2)]
    assert all(len(p.grid) == 2 and p.grid[0].n_points == 4 for p in pairs)
    assert plan.unions[0].bands == coords.labels
    assert {p.profile for p in plan.predictions} == {p.name for p in singles + pairs}


def test_rows_off_the_published_directions_use_their_box(flow):
    coords = _coords([[1.0, 14.0, -15.0], [2.0, -1.0, -1.0], [1.0, 1.0, 1.0]],
                     ("T1", "T2", "R"))
    plan = default_plan(flow, SMALL, coords)
    singles = _reparam(plan, 1)
    assert singles[0].grid is None
    assert singles[2].grid[0].lo == pytest.approx(0.05)
    pairs = {p.targets: p for p in _reparam(plan, 2)}
    assert pairs[(0, 1)].grid is None
    assert pairs[(1, 2)].grid is not None


def test_stat_plan_maps_grids_through_the_coordinate_power(binomial):
    coords = _coords([[1.0, 1.0], [-1.0, 1.0]], ("n", "p"))
    plan = default_plan(binomial, SMALL, coords)
    by_name = {p.name: p for p in plan.profiles}
    ratio = by_name["p/n"].grid[0]
    assert ratio.lo == pytest.approx(1e-4)
    assert ratio.hi == pytest.approx(0.05)
    assert ratio.spacing == "log"
    assert by_name["n*p"].grid[0].lo == pytest.approx(10.0)


def test_unrounded_plans_profile_original_coordinates_only():
    for name in ("stat-binomial", "mm-full", "flow"):
        plan = default_plan(get_model(name), SMALL)
        assert all(p.coordinates == "original" for p in plan.profiles)


def test_smallest_rounding_scale_gives_a_resolvable_plan():
    config = RunConfig(model="flow", reference_point=(3.0, 1.0, 1.0),
                       tolerances=Tolerances(scale="smallest"))
    session = Session.open(config, SMALL)
    assert session.settings.rounding_scale == "smallest"
    plan = session_plan(session)
    labels = session.problem_for("reparam").labels
    reparam = [p for p in plan.profiles if p.coordinates == "reparam"]
    assert len(reparam) == 6
    for p in reparam:
        for i, t in enumerate(p.targets):
            assert 0 <= resolve_target(t, labels, f"targets[{i}]") < len(labels)
    assert "T1*T2*R" in [p.name for p in reparam]
