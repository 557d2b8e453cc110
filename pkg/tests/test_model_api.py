import json

import numpy as np
import pytest

from invariant_reparam.errors import ConfigError, NumericalError, PreconditionError
from invariant_reparam.model_api import (
    Dataset,
    ErrorModel,
    ModelSpec,
    ObservationOperator,
    available_models,
    get_model,
    load_dataset,
    predict_fine,
    predict_obs,
    register_model,
    resolve_model,
    synthetic_dataset,
    with_observation,
)


def _toy_model(name="toy"):
    return ModelSpec(
        name=name,
        param_names=("a", "b"),
        bounds=((0.1, 10.0), (0.1, 10.0)),
        auxiliary=lambda t: [t[0] * x + t[1] for x in (0.0, 1.0, 2.0)],
        fine_grid=np.array([0.0, 1.0, 2.0]),
        obs_operator=ObservationOperator((0, 2)),
        error_model=ErrorModel("normal-additive", 0.1),
        true_theta=np.array([1.0, 2.0]),
    )


def test_evenly_spaced_operators():
    """Endpoints included by default, excluded with interior=True."""
    mm = ObservationOperator.evenly_spaced(201, 11)
    assert mm.indices == tuple(range(0, 201, 20))
    flow = ObservationOperator.evenly_spaced(201, 19, interior=True)
    assert flow.indices == tuple(range(10, 200, 10))


def test_observation_operator_validation():
    with pytest.raises(PreconditionError):
        ObservationOperator((3, 1))
    with pytest.raises(PreconditionError):
        ObservationOperator((-1, 2))
    with pytest.raises(PreconditionError):
        ObservationOperator.evenly_spaced(201, 7)


def test_selection_matrix_matches_indexing():
    op = ObservationOperator((1, 3))
    values = np.arange(5.0) * 2
    assert np.array_equal(op.matrix(5) @ values, op.apply(values))


def test_model_spec_rejects_bad_bounds_and_indices():
    with pytest.raises(PreconditionError):
        ModelSpec("bad", ("a",), ((0.0, 1.0),), lambda t: [t[0]], np.array([0.0]),
                  ObservationOperator((0,)), ErrorModel("normal-additive"))
    with pytest.raises(PreconditionError):
        ModelSpec("bad", ("a",), ((0.1, 1.0),), lambda t: [t[0]], np.array([0.0]),
                  ObservationOperator((4,)), ErrorModel("normal-additive"))


def test_error_model_validation():
    with pytest.raises(PreconditionError):
        ErrorModel("poisson")
    with pytest.raises(PreconditionError):
        ErrorModel("log-normal", 0.0)
    assert ErrorModel("normal-moments", 0.0).kind == "normal-moments"


def test_predictions_on_fine_and_observation_grids():
    model = _toy_model()
    assert predict_fine(model, [2.0, 1.0]).tolist() == [1.0, 3.0, 5.0]
    assert predict_obs(model, [2.0, 1.0]).tolist() == [1.0, 5.0]


def test_predict_fine_wraps_model_failures():
    model = ModelSpec("broken", ("a",), ((0.1, 1.0),), lambda t: [1.0 / (t[0] - t[0])],
                      np.array([0.0]), ObservationOperator((0,)), ErrorModel("normal-additive"))
    with pytest.raises(NumericalError, match="Failed to evaluate model 'broken'"):
        predict_fine(model, [0.5])


def test_predict_fine_checks_output_length():
    model = ModelSpec("short", ("a",), ((0.1, 1.0),), lambda t: [t[0]],
                      np.array([0.0, 1.0]), ObservationOperator((0,)),
                      ErrorModel("normal-additive"))
    with pytest.raises(NumericalError):
        predict_fine(model, [0.5])


def test_with_observation_keeps_everything_else(mm_full):
    single = with_observation(mm_full, [100])
    assert single.obs_operator.indices == (100,)
    assert single.obs_dimension == 1
    assert single.bounds == mm_full.bounds
    assert mm_full.obs_dimension == 11


def test_dataset_replicates():
    data = Dataset([1, 2, 3, 4, 5, 6], n_replicates=2)
    assert data.replicates().shape == (2, 3)
    with pytest.raises(PreconditionError):
        Dataset([1, 2, 3], n_replicates=2)


def test_synthetic_dataset_is_seeded(mm_full):
    a = synthetic_dataset(mm_full, mm_full.true_theta, seed=1)
    b = synthetic_dataset(mm_full, mm_full.true_theta, seed=1)
    c = synthetic_dataset(mm_full, mm_full.true_theta, seed=2)
    assert np.array_equal(a.observations, b.observations)
    assert not np.array_equal(a.observations, c.observations)
    assert a.observations.size == 11


def test_synthetic_log_normal_data_is_positive(flow):
    data = synthetic_dataset(flow, flow.true_theta, seed=0, n_replicates=3)
    assert data.n_replicates == 3
    assert data.observations.size == 57
    assert np.all(data.observations > 0)


def test_synthetic_normal_moments_data(poisson):
    data = synthetic_dataset(poisson, poisson.true_theta, seed=4, n_replicates=500)
    assert data.observations.mean() == pytest.approx(20.0, abs=1.0)


def test_load_dataset_formats(tmp_path):
    as_list = tmp_path / "a.json"
    as_list.write_text(json.dumps([1.0, 2.0, 3.0]))
    as_object = tmp_path / "b.json"
    as_object.write_text(json.dumps({"observations": [1, 2, 3, 4], "n_replicates": 2}))
    as_text = tmp_path / "c.txt"
    as_text.write_text("1.5\n2.5\n\n3.5\n")

    assert load_dataset(as_list).observations.tolist() == [1.0, 2.0, 3.0]
    assert load_dataset(as_object).n_replicates == 2
    assert load_dataset(as_text).observations.tolist() == [1.5, 2.5, 3.5]


def test_load_dataset_errors_name_the_field(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    with pytest.raises(ConfigError, match="data.path"):
        load_dataset(bad)
    with pytest.raises(ConfigError, match="data.path"):
        load_dataset(tmp_path / "missing.txt")


def test_registry_lists_builtins():
    names = available_models()
    for name in ("flow", "mm-full", "mm-reduced", "stat-binomial", "stat-poisson-limit"):
        assert name in names


def test_unknown_model_is_a_config_error():
    with pytest.raises(ConfigError, match="unknown model"):
        get_model("no-such-model")


def test_register_and_resolve_user_models():
    register_model("toy-registered", _toy_model, replace=True)
    assert get_model("toy-registered").name == "toy"
    with pytest.raises(PreconditionError):
        register_model("toy-registered", _toy_model)


def test_resolve_module_attribute_reference():
    spec = resolve_model("invariant_reparam.models:flow_model")
    assert spec.name == "flow"
    with pytest.raises(ConfigError):
        resolve_model("invariant_reparam.models:no_such_attribute")
