import json

import pytest


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path, monkeypatch):
    """Point IIR_SETTINGS at a per-test file with worker pools disabled."""
    path = tmp_path / "settings.json"
    path.write_text(json.dumps({"parallel": False}), encoding="utf-8")
    monkeypatch.setenv("IIR_SETTINGS", str(path))
    return path


@pytest.fixture
def small_grids(isolated_settings):
    """Coarse grids and few multistarts for end-to-end command tests."""
    isolated_settings.write_text(
        json.dumps({"parallel": False, "grid_points_1d": 7, "grid_points_2d": 4, "n_starts": 2}),
        encoding="utf-8",
    )
    return isolated_settings


@pytest.fixture(scope="session")
def flow():
    from invariant_reparam.model_api import get_model

    return get_model("flow")


@pytest.fixture(scope="session")
def mm_full():
    from invariant_reparam.model_api import get_model

    return get_model("mm-full")


@pytest.fixture(scope="session")
def poisson():
    from invariant_reparam.model_api import get_model

    return get_model("stat-poisson-limit")


@pytest.fixture(scope="session")
def binomial():
    from invariant_reparam.model_api import get_model

    return get_model("stat-binomial")


@pytest.fixture(scope="session")
def flow_problem(flow):
    from invariant_reparam.likelihood import LikelihoodProblem
    from invariant_reparam.models import paper_dataset

    return LikelihoodProblem(flow, paper_dataset("flow"))


@pytest.fixture(scope="session")
def poisson_problem(poisson):
    from invariant_reparam.likelihood import LikelihoodProblem
    from invariant_reparam.models import paper_dataset

    return LikelihoodProblem(poisson, paper_dataset("stat"))


@pytest.fixture(scope="session")
def flow_fit(flow_problem):
    from invariant_reparam.likelihood import mle

    return mle(flow_problem, fatol=1e-13)


@pytest.fixture(scope="session")
def flow_coords(flow):
    """Rounded monomial coordinates of the flow model at (3, 1, 1)."""
    from invariant_reparam.reparam import analyze, build_reparam

    return build_reparam(analyze(flow, [3.0, 1.0, 1.0]), rounded=True, scale="largest")
