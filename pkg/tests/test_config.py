import json

import pytest

from multifamm.config import (LayerKind, PipelineConfig, Scedasticity, SmoothingCriterion,
                              TermKind, TruncationCriterion, WeightScheme)
from multifamm.errors import ConfigError


def test_defaults():
    cfg = PipelineConfig.default()
    assert cfg.step1.truncation == TruncationCriterion.TV
    assert cfg.step1.level == 0.95
    assert cfg.step1.weights == WeightScheme.UNIT
    assert cfg.step2.scedasticity == Scedasticity.PER_DIMENSION
    assert cfg.mean_smoothing.criterion == SmoothingCriterion.GCV
    assert [t.kind for t in cfg.formula] == [TermKind.INTERCEPT]


def test_round_trip():
    cfg = PipelineConfig.default()
    cfg.step1.truncation = TruncationCriterion.UV
    cfg.simulation.scenario = "C"
    again = PipelineConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again.to_dict() == cfg.to_dict()
    assert again.config_hash() == cfg.config_hash()


def test_toy_file(toy_config, tmp_path):
    assert toy_config.data.points_file.endswith("points.csv")
    assert [l.name for l in toy_config.data.layers] == ["speaker", "word"]
    assert toy_config.data.layers[0].kind == LayerKind.CROSSED
    assert [t.name for t in toy_config.formula] == ["intercept", "x1"]

    path = tmp_path / "sub" / "run.json"
    path.parent.mkdir()
    path.write_text(json.dumps({"data": {"points_file": "p.csv", "meta_file": "/abs/m.csv"}}))
    cfg = PipelineConfig.from_file(path)
    assert cfg.data.points_file == str((path.parent / "p.csv").resolve())
    assert cfg.data.meta_file == "/abs/m.csv"


@pytest.mark.parametrize("payload", [
    {"unknown": 1},
    {"step1": {"levels": 0.9}},
    {"step1": {"level": 1.5}},
    {"step1": {"truncation": "XV"}},
    {"step1": {"weights": "explicit"}},
    {"step2": {"scedasticity": "sometimes"}},
    {"mean_smoothing": {"lambda_min": 10.0, "lambda_max": 1.0}},
    {"formula": [{"name": "x", "kind": "linear", "covariates": ["x"]}]},
    {"data": {"layers": [{"name": "session", "kind": "nested"}]}},
    {"simulation": {"scenario": "Z"}},
    {"formula": [{"name": "intercept", "kind": "intercept"}, {"name": "x1", "covariates": ["x1"]}]},
    {"formula": [{"kind": "intercept"}]},
    {"data": {"layers": [{"kind": "crossed"}]}},
    {"formula": [{"name": "intercept", "kind": "intercept", "t_basis": {"degree": "three"}}]},
    {"jobs": 0},
])
def test_invalid_configs(payload):
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict(payload)


def test_missing_and_broken_files(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        PipelineConfig.from_file(tmp_path / "absent.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigError, match="cannot parse"):
        PipelineConfig.from_file(broken)


def test_env_overrides(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("MULTIFAMM_OUTPUT_DIR", "elsewhere")
    monkeypatch.setenv("MULTIFAMM_JOBS", "3")
    monkeypatch.setenv("MULTIFAMM_SEED", "99")
    cfg = PipelineConfig.default().apply_env_overrides()
    assert (cfg.output_dir, cfg.jobs, cfg.seed) == ("elsewhere", 3, 99)

    monkeypatch.setenv("MULTIFAMM_JOBS", "many")
    with pytest.raises(ConfigError):
        PipelineConfig.default().apply_env_overrides()


def test_hash_tracks_content():
    a, b = PipelineConfig.default(), PipelineConfig.default()
    assert a.config_hash() == b.config_hash()
    assert len(a.config_hash()) == 16
    b.step1.level = 0.9
    assert a.config_hash() != b.config_hash()
