import json

from typer.testing import CliRunner

from invariant_reparam.artifacts import MANIFEST
from invariant_reparam.cli import app
from invariant_reparam.models import FLOW_DATA

runner = CliRunner()


def _read(path):
    return json.loads(path.read_text(encoding="utf-8"))


def test_models_lists_builtins():
    result = runner.invoke(app, ["models"])
    assert result.exit_code == 0
    for name in ("flow", "mm-full", "mm-reduced", "stat-binomial", "stat-poisson-limit"):
        assert name in result.output


def test_reparam_poisson_limit(tmp_path):
    out = tmp_path / "out"
    result = runner.invoke(app, ["reparam", "--model", "stat-poisson-limit", "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert "n*p" in result.output
    svd = _read(out / "svd_analysis.json")
    assert svd["rank"] == 1
    assert svd["classification"] == ["well-identified", "structurally-non-identified"]
    selected = _read(out / "reparameterisation.json")["selected"]
    assert selected["labels"] == ["n*p", "n/p"]
    assert _read(out / "invariance_check.json")["status"] == "PASS"
    manifest = _read(out / MANIFEST)
    assert manifest["command"] == "reparam"
    assert manifest["outputs"] == [
        "invariance_check.json", "reparameterisation.json", "svd_analysis.json"]


def test_reparam_flow_from_config(tmp_path):
    config = tmp_path / "flow.json"
    config.write_text(json.dumps({"model": "flow", "reference_point": [3.0, 1.0, 1.0]}))
    out = tmp_path / "out"
    result = runner.invoke(app, ["reparam", "--config", str(config), "--out", str(out)])
    assert result.exit_code == 0, result.output
    selected = _read(out / "reparameterisation.json")["selected"]
    assert selected["labels"] == ["T2/R", "T1/sqrt(T2*R)", "T1*T2*R"]
    assert _read(out / "svd_analysis.json")["rank"] == 2


def test_unrounded_flag(tmp_path):
    out = tmp_path / "out"
    result = runner.invoke(app, ["reparam", "--model", "stat-binomial", "--unrounded",
                                 "--out", str(out)])
    assert result.exit_code == 0, result.output
    payload = _read(out / "reparameterisation.json")
    assert payload["selected"]["rounded"] is False
    assert "rounded_rows" not in payload


def test_mle_writes_estimate(tmp_path):
    out = tmp_path / "out"
    result = runner.invoke(app, ["mle", "--model", "stat-binomial", "--out", str(out)])
    assert result.exit_code == 0, result.output
    payload = _read(out / "mle.json")
    n, p = payload["mle"]["theta_original"]
    assert abs(n * p - 19.04) < 0.05
    assert payload["n_observations"] == 10


def test_missing_model_is_a_usage_error(tmp_path):
    result = runner.invoke(app, ["reparam", "--out", str(tmp_path)])
    assert result.exit_code == 1
    assert "model" in result.output


def test_unknown_model_exits_with_one(tmp_path):
    result = runner.invoke(app, ["mle", "--model", "no-such-model", "--out", str(tmp_path)])
    assert result.exit_code == 1
    assert "unknown model" in result.output


def test_invalid_config_names_the_field(tmp_path):
    config = tmp_path / "bad.json"
    config.write_text(json.dumps({"model": "flow", "profiles": [{"targets": []}]}))
    result = runner.invoke(app, ["profile", "--config", str(config), "--out", str(tmp_path)])
    assert result.exit_code == 1
    assert "profiles[0].targets" in result.output


def test_invalid_df_flag(tmp_path):
    result = runner.invoke(app, ["profile", "--model", "flow", "--df", "5",
                                 "--out", str(tmp_path)])
    assert result.exit_code == 1
    assert "--df" in result.output


def test_numerical_failure_exits_with_two(tmp_path):
    """Log-normal data with a negative value leaves no finite log-likelihood."""
    data = tmp_path / "flow.txt"
    values = list(FLOW_DATA)
    values[4] = -1.0
    data.write_text("\n".join(repr(v) for v in values))
    result = runner.invoke(app, ["mle", "--model", "flow", "--data", str(data),
                                 "--out", str(tmp_path / "out")])
    assert result.exit_code == 2
    assert "Error fitting model" in result.output


def test_profile_and_predict_from_config(tmp_path, small_grids):
    config = tmp_path / "mm.json"
    config.write_text(json.dumps({
        "model": "mm-full",
        "reference_point": [1.0, 5.0],
        "profiles": [
            {"name": "ratio", "coordinates": "reparam", "targets": ["nu/K"],
             "grid": [{"lo": 0.12, "hi": 0.3, "n_points": 7}]},
            {"name": "nu", "targets": ["nu"]},
        ],
        "predictions": [{"name": "ratio_band", "profile": "ratio", "df": 1}],
    }))
    out = tmp_path / "profiles"
    result = runner.invoke(app, ["profile", "--config", str(config), "--out", str(out)])
    assert result.exit_code == 0, result.output
    summaries = {s["name"]: s for s in _read(out / "profiles.json")}
    assert summaries["ratio"]["coordinates"] == "reparam"
    assert summaries["ratio"]["nodes"] == 7
    assert summaries["nu"]["nodes"] == 7
    assert "sidedness" in summaries["nu"]
    lines = (out / "profile_ratio.csv").read_text().splitlines()
    assert lines[0].startswith("nu/K,profile_loglik,normalized")
    assert len(lines) == 8

    bands_out = tmp_path / "bands"
    result = runner.invoke(app, ["predict", "--config", str(config), "--out", str(bands_out)])
    assert result.exit_code == 0, result.output
    rows = (bands_out / "band_ratio_band.csv").read_text().splitlines()
    assert rows[0] == "x,lower,mle,upper"
    assert len(rows) == 202
    assert _read(bands_out / "bands.json")[0]["df"] == 1


def test_fisher_check_single_observation(tmp_path):
    config = tmp_path / "single.json"
    config.write_text(json.dumps({"model": "mm-full", "observation_indices": [100]}))
    out = tmp_path / "out"
    result = runner.invoke(app, ["fisher-check", "--config", str(config), "--out", str(out)])
    assert result.exit_code == 0, result.output
    payload = _read(out / "fisher_check.json")
    assert payload["observation_indices"] == [100]
    assert payload["observation_grid"]["fisher_rank"] == 1
    assert payload["solution_grid"]["fisher_rank"] == 2
    assert payload["grid_level_discrepancy"] is True
    assert payload["status"] == "PASS"


def test_reproduce_is_deterministic(tmp_path, small_grids):
    first, second = tmp_path / "a", tmp_path / "b"
    for out in (first, second):
        result = runner.invoke(app, ["reproduce-paper", "--model", "stat-poisson-limit",
                                     "--seed", "1", "--out", str(out)])
        assert result.exit_code == 0, result.output

    files = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(second) for p in second.rglob("*") if p.is_file())
    for rel in files:
        assert (first / rel).read_bytes() == (second / rel).read_bytes()

    model_dir = first / "stat-poisson-limit"
    manifest = _read(model_dir / MANIFEST)
    assert manifest["command"] == "reproduce-paper"
    assert manifest["seed"] == 1
    assert "profile_n_per_p.csv" in manifest["outputs"]
    assert "fisher_check.json" in manifest["outputs"]
    profiles = {s["name"]: s for s in _read(model_dir / "profiles.json")}
    assert profiles["n/p"]["coordinates"] == "reparam"
    assert profiles["n/p"]["nodes"] == 7
    assert profiles["n,p"]["nodes"] == 16


def test_reproduce_rejects_unknown_models(tmp_path):
    result = runner.invoke(app, ["reproduce-paper", "--model", "lotka-volterra",
                                 "--out", str(tmp_path)])
    assert result.exit_code == 1
    assert "lotka-volterra" in result.output
