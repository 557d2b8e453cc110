import json

import pytest

from invariant_reparam.errors import ConfigError
from invariant_reparam.profile import GridSpec
from invariant_reparam.runconfig import (
    RunConfig,
    load_run_config,
    resolve_target,
    run_config_from_dict,
)


def _full_document():
    return {
        "model": "mm-full",
        "data": {"source": "synthetic", "seed": 3},
        "reference_point": [1.0, 5.0],
        "tolerances": {"practical": 0.05, "scale": "smallest"},
        "profiles": [
            {"name": "ratio", "coordinates": "reparam", "targets": ["nu/K"],
             "grid": [{"lo": 0.12, "hi": 0.3, "n_points": 11}]},
            {"targets": [0, 1], "df": 2},
        ],
        "predictions": [{"name": "ratio_band", "profile": "ratio"}],
        "unions": [{"name": "all", "bands": ["ratio_band"]}],
        "level": 0.9,
        "seed": 4,
    }


def test_full_document_round_trips_into_dataclasses():
    config = run_config_from_dict(_full_document())
    assert config.model == "mm-full"
    assert config.data.source == "synthetic"
    assert config.data.seed == 3
    assert config.reference_point == (1.0, 5.0)
    assert config.tolerances.practical == 0.05
    assert config.tolerances.structural is None
    assert config.profiles[0].grid == (GridSpec(0.12, 0.3, 11),)
    assert config.profiles[1].name == "0_1"
    assert config.profiles[1].coordinates == "original"
    assert config.predictions[0].df is None
    assert config.unions[0].bands == ("ratio_band",)
    assert config.level == 0.9
    assert config.seed == 4


def test_minimal_document_uses_defaults():
    config = run_config_from_dict({"model": "flow"})
    assert config == RunConfig(model="flow")
    assert config.reference_point == "mle"
    assert config.data.source == "auto"
    assert config.rounded is True


@pytest.mark.parametrize("patch,field", [
    ({"model": 3}, "model"),
    ({"colour": "red"}, "colour"),
    ({"data": {"source": "web"}}, "data.source"),
    ({"data": {"source": "file"}}, "data.path"),
    ({"data": {"seed": -1}}, "data.seed"),
    ({"reference_point": [1.0, -5.0]}, "reference_point[1]"),
    ({"reference_point": "truth"}, "reference_point"),
    ({"tolerances": {"practical": 0}}, "tolerances.practical"),
    ({"observation_indices": [0, "x"]}, "observation_indices[1]"),
    ({"level": 1.2}, "level"),
    ({"df": 4}, "df"),
    ({"rounded": "yes"}, "rounded"),
])
def test_invalid_fields_are_named(patch, field):
    doc = {"model": "flow"}
    doc.update(patch)
    with pytest.raises(ConfigError) as exc:
        run_config_from_dict(doc)
    assert exc.value.field == field
    assert str(exc.value).startswith(f"{field}: ")


def test_nested_profile_errors_carry_the_path():
    doc = _full_document()
    doc["profiles"][1]["grid"] = [{"lo": 0.5, "hi": 2.0}, {"lo": 3.0, "hi": "x"}]
    with pytest.raises(ConfigError) as exc:
        run_config_from_dict(doc)
    assert exc.value.field == "profiles[1].grid[1].hi"

    doc["profiles"][1]["grid"] = [{"lo": 0.5, "hi": 2.0}, {"lo": 3.0, "hi": 1.0}]
    with pytest.raises(ConfigError) as exc:
        run_config_from_dict(doc)
    assert exc.value.field == "profiles[1].grid[1]"

    doc["profiles"][1] = {"targets": [0, 1, 2]}
    with pytest.raises(ConfigError) as exc:
        run_config_from_dict(doc)
    assert exc.value.field == "profiles[1].targets"


def test_cross_references_are_checked():
    doc = _full_document()
    doc["predictions"][0]["profile"] = "missing"
    with pytest.raises(ConfigError, match="no profile named 'missing'"):
        run_config_from_dict(doc)

    doc = _full_document()
    doc["unions"][0]["bands"] = ["ratio_band", "nothing"]
    with pytest.raises(ConfigError) as exc:
        run_config_from_dict(doc)
    assert exc.value.field == "unions[0].bands[1]"


def test_duplicate_names_are_rejected():
    doc = _full_document()
    doc["profiles"][1]["name"] = "ratio"
    with pytest.raises(ConfigError) as exc:
        run_config_from_dict(doc)
    assert exc.value.field == "profiles[1].name"


def test_digest_ignores_output_dir_only():
    base = run_config_from_dict(_full_document())
    moved = base.with_overrides(output_dir="elsewhere")
    reseeded = base.with_overrides(seed=9)
    assert base.digest() == moved.digest()
    assert base.digest() != reseeded.digest()
    assert base.with_overrides(seed=None) == base


def test_load_run_config_reports_line_and_column(tmp_path):
    path = tmp_path / "run.json"
    path.write_text('{\n  "model": "flow",\n  "seed": ,\n}\n')
    with pytest.raises(ConfigError, match="line 3, column 11"):
        load_run_config(path)


def test_load_run_config_from_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(_full_document()))
    assert load_run_config(path) == run_config_from_dict(_full_document())
    with pytest.raises(ConfigError, match="Failed to read config"):
        load_run_config(tmp_path / "missing.json")


def test_resolve_target_by_label_or_index():
    labels = ("T2/R", "T1/sqrt(T2*R)", "T1*T2*R")
    assert resolve_target("T1*T2*R", labels, "profiles[0].targets[0]") == 2
    assert resolve_target(1, labels, "profiles[0].targets[0]") == 1
    with pytest.raises(ConfigError) as exc:
        resolve_target("T1", labels, "profiles[0].targets[0]")
    assert exc.value.field == "profiles[0].targets[0]"
    with pytest.raises(ConfigError):
        resolve_target(3, labels, "profiles[0].targets[0]")
