import json

import numpy as np
import pandas as pd

from multifamm.artifacts import ArtifactWriter, read_csv
from multifamm.config import PipelineConfig, TruncationCriterion


def test_csv_header_and_reload(tmp_path):
    config = PipelineConfig.default()
    writer = ArtifactWriter(tmp_path, config)
    frame = pd.DataFrame({"t": [0.0, 0.5], "value": [1.0 / 3.0, 2.0]})
    path = writer.write_csv("effects/intercept__a.csv", frame)

    lines = path.read_text().splitlines()
    assert lines[0] == f"# config_hash={config.config_hash()}"
    assert lines[1] == f"# seed={config.seed}"
    assert lines[2] == "t,value"
    back = read_csv(path)
    assert np.allclose(back["value"], frame["value"], rtol=1e-9)


def test_json_packet(tmp_path):
    config = PipelineConfig.default()
    writer = ArtifactWriter(tmp_path, config)
    path = writer.write_json("step1.json", {
        "eigenvalues": np.array([0.5, 0.25]),
        "count": np.int64(3),
        "criterion": TruncationCriterion.UV,
    })
    packet = json.loads(path.read_text())
    assert packet["kind"] == "step1"
    assert packet["config_hash"] == config.config_hash()
    assert packet["data"] == {"eigenvalues": [0.5, 0.25], "count": 3, "criterion": "UV"}


def test_identical_runs_identical_bytes(tmp_path):
    config = PipelineConfig.default()
    payload = {"b": [1.0, 2.0], "a": {"z": 1, "y": 2}}
    first = ArtifactWriter(tmp_path / "one", config).write_json("x.json", payload)
    second = ArtifactWriter(tmp_path / "two", config).write_json("x.json", dict(reversed(payload.items())))
    assert first.read_bytes() == second.read_bytes()


def test_manifest_lists_files(tmp_path):
    writer = ArtifactWriter(tmp_path, PipelineConfig.default())
    writer.write_config(PipelineConfig.default())
    writer.write_csv("tables/v.csv", pd.DataFrame({"x": [1]}))
    assert writer.manifest()["files"] == ["config.resolved.json", "tables/v.csv"]
