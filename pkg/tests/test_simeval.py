import numpy as np
import pandas as pd
import pytest
from scipy.integrate import trapezoid

from multifamm.artifacts import ArtifactWriter
from multifamm.config import (LayerKind, PipelineConfig, Scedasticity, ScoreMode, SmoothingConfig,
                              TruncationCriterion, WeightScheme)
from multifamm.errors import ConfigError, DataError
from multifamm.mfpca import ScalarProduct, weighted_inner
from multifamm.simeval import (MetricReport, ProcessTruth, SimSetting, align_sign, draw_scores,
                               empirical_total_variation, fourier, mrrmse, phonetics_like_truth,
                               rrmse_scalar, run_harness, scenario_config, setting_preset, simulate,
                               summarize, trajectory_like_truth, urrmse)

GRID = np.linspace(0.0, 1.0, 201)


# === Metrics ===

def test_relative_errors():
    assert rrmse_scalar(2.0, 1.0) == pytest.approx(0.5)
    assert rrmse_scalar(-4.0, -3.0) == pytest.approx(0.25)
    with pytest.raises(DataError):
        rrmse_scalar(0.0, 1.0)

    f = fourier(1, GRID)
    assert urrmse(f, 2 * f, GRID) == pytest.approx(1.0)
    zeta = np.stack([f, fourier(2, GRID)])
    assert mrrmse(zeta, np.zeros_like(zeta), GRID) == pytest.approx(1.0)
    est = zeta + 0.1 * fourier(3, GRID)
    assert mrrmse(5 * zeta, 5 * est, GRID) == pytest.approx(mrrmse(zeta, est, GRID))
    with pytest.raises(DataError):
        urrmse(np.zeros(GRID.size), f, GRID)
    with pytest.raises(DataError):
        mrrmse(zeta, zeta[:1], GRID)


def test_align_sign():
    sp = ScalarProduct.unit(("a", "b"), GRID)
    truth = np.stack([fourier(1, GRID), fourier(2, GRID)]) / np.sqrt(2.0)
    flipped = -truth + 0.01
    assert np.allclose(align_sign(flipped, truth, sp), truth - 0.01)
    assert np.allclose(align_sign(truth, truth, sp), truth)
    # disjoint supports give an exact tie
    first = np.stack([fourier(1, GRID), np.zeros(GRID.size)])
    second = np.stack([np.zeros(GRID.size), fourier(3, GRID)])
    assert np.array_equal(align_sign(second, first, sp), second)


def test_fourier_orthonormal():
    basis = np.stack([fourier(k, GRID) for k in range(1, 6)])
    gram = trapezoid(basis[:, None, :] * basis[None, :, :], GRID, axis=2)
    assert np.allclose(gram, np.eye(5), atol=1e-10)


def test_metric_report_validation():
    bad = pd.DataFrame([{"replicate": 0, "component": "mean", "dim": "all", "metric": "mrrMSE",
                         "value": -0.1}])
    with pytest.raises(DataError):
        MetricReport("s", "A", 1, bad, pd.DataFrame(columns=["coverage"]), pd.DataFrame())


def test_summary_statistics():
    metrics = pd.DataFrame({
        "replicate": range(4), "component": "mean", "dim": "all", "metric": "mrrMSE",
        "value": [0.1, 0.2, 0.3, 0.4],
    })
    cov = pd.DataFrame({"replicate": range(4), "effect": "intercept", "dim": "a",
                        "coverage": [1.0, 0.9, 0.8, 0.9]})
    counts = pd.DataFrame({"replicate": range(4), "process": "E", "count": [2, 3, 3, 4]})
    summary = summarize(MetricReport("s", "A", 1, metrics, cov, counts))
    row = summary.metrics.loc[("mean", "all", "mrrMSE")]
    assert row["median"] == pytest.approx(0.25)
    assert row["iqr"] == pytest.approx(0.15)
    assert summary.coverage.loc["intercept", "a"] == pytest.approx(0.9)
    assert summary.fpc_counts.loc["E"].tolist() == [3, 2, 4]


# === Truths and scores ===

def test_draw_scores_centered_exactly(rng):
    nu = np.array([0.06, 0.017, 0.012])
    z = draw_scores(rng, nu, 40, ScoreMode.CENTERED)
    assert np.allclose(z.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(np.cov(z, rowvar=False), np.diag(nu), atol=1e-12)
    raw = draw_scores(rng, nu, 40, ScoreMode.RAW)
    assert not np.allclose(np.cov(raw, rowvar=False), np.diag(nu))
    with pytest.raises(DataError):
        draw_scores(rng, nu, 3, ScoreMode.CENTERED)
    assert draw_scores(rng, np.zeros(0), 5, ScoreMode.CENTERED).shape == (5, 0)


def test_process_truth_validation():
    with pytest.raises(ConfigError):
        ProcessTruth([1.0], [[1.0, 1.0]], (1,))
    with pytest.raises(ConfigError):
        ProcessTruth([1.0, 0.5], [[1.0, 0.0], [0.0, 1.0]], (2, 2))
    with pytest.raises(ConfigError):
        ProcessTruth([1.0], [[1.0, 0.0]], (1, 2))


@pytest.mark.parametrize("weights", [WeightScheme.UNIT, WeightScheme.INVERSE_ERROR_VARIANCE])
def test_truth_eigenfunctions_orthonormal(weights):
    truth = phonetics_like_truth(weights)
    sp = ScalarProduct(truth.dims, truth.scalar_weights, GRID)
    for g in truth.processes:
        psi = truth.eigenfunctions(g, GRID)
        gram = np.array([[weighted_inner(a, b, sp) for b in psi] for a in psi])
        assert np.allclose(gram, np.eye(len(psi)), atol=1e-8)


def test_truth_totals():
    truth = phonetics_like_truth()
    assert truth.counts == {"B": 3, "E": 5}
    assert truth.total_variation() == pytest.approx(0.148)
    assert trajectory_like_truth().counts == {"B": 6, "C": 5, "E": 5}


def test_presets():
    s1 = setting_preset(1)
    assert s1.n_curves == 720
    assert s1.points == (20, 50)
    assert setting_preset("setting3").points == (3, 10)
    assert setting_preset(2).truth.sigma2["dim2"] == pytest.approx(0.064)
    assert setting_preset(4).score_mode == ScoreMode.RAW
    assert setting_preset(5).truth.weights == WeightScheme.INVERSE_ERROR_VARIANCE
    s6 = setting_preset(6)
    assert s6.design == LayerKind.NESTED and s6.n_curves == 300 and len(s6.truth.dims) == 6
    assert setting_preset("setting1-desk").n_curves == 288
    with pytest.raises(ConfigError):
        setting_preset(7)
    with pytest.raises(ConfigError):
        SimSetting("bad", phonetics_like_truth(), 2, 2, 2, points=(5, 3))


# === Simulation ===

def test_simulated_design(tiny_setting, tiny_dataset):
    ds, draw = tiny_dataset
    assert ds.n_curves == tiny_setting.n_curves == 30
    assert ds.dims == ("dim1", "dim2")
    assert len(ds.layer("B").levels) == 5
    assert len(ds.layer("C").levels) == 3
    for g in ("B", "C", "E"):
        assert draw.levels[g] == ds.layer(g).levels
    assert draw.scores["B"].shape == (5, 3)
    assert draw.scores["E"].shape == (30, 5)
    assert "C" not in draw.scores
    for curve in ds.curves:
        for d in ds.dims:
            assert 10 <= curve.n_points(d) <= 14
        assert curve.covariates["x1"] in (0.0, 1.0)


def test_simulation_reproducible(tiny_setting):
    a, _ = simulate(tiny_setting)
    b, _ = simulate(tiny_setting)
    c, _ = simulate(tiny_setting, seed=tiny_setting.seed + 1)
    pd.testing.assert_frame_equal(a.long_frame, b.long_frame)
    assert not np.allclose(a.long_frame["y"].head(10), c.long_frame["y"].head(10))


def test_nested_shared_points(tiny_setting):
    from dataclasses import replace

    setting = replace(tiny_setting, design=LayerKind.NESTED, shared_points=True)
    ds, draw = simulate(setting)
    assert len(ds.layer("C").levels) == 15
    assert ds.layer("C").levels[0] == "s01/c01"
    for curve in ds.curves:
        assert np.array_equal(curve.points["dim1"][0], curve.points["dim2"][0])
    # the subject covariate is constant within a subject
    by_subject = {}
    for curve in ds.curves:
        by_subject.setdefault(curve.group_labels["B"], set()).add(curve.covariates["x1"])
    assert all(len(v) == 1 for v in by_subject.values())


@pytest.mark.slow
def test_total_variation_matches_truth():
    setting = setting_preset("setting1-desk")
    ds, draw = simulate(setting, seed=3)
    assert empirical_total_variation(ds, setting.truth) == pytest.approx(
        setting.truth.total_variation(), rel=0.25)


# === Harness ===

def test_scenario_config():
    setting = setting_preset(1)
    base = PipelineConfig.default()
    a = scenario_config(base, setting, "A")
    assert a.step1.fixed_truncation == {"B": 3, "E": 5}
    assert a.step1.weights == WeightScheme.UNIT
    assert base.step1.fixed_truncation is None
    c = scenario_config(base, setting, "C")
    assert c.step1.truncation == TruncationCriterion.UV and c.step1.fixed_truncation is None
    assert scenario_config(base, setting, "D").step1.weights == WeightScheme.INVERSE_ERROR_VARIANCE
    assert scenario_config(base, setting, "F").step2.scedasticity == Scedasticity.HOMOSCEDASTIC
    with pytest.raises(ConfigError):
        scenario_config(base, setting, "G")


def harness_config():
    config = PipelineConfig.default()
    config.mean_smoothing = SmoothingConfig(lambda_grid_points=6, max_sweeps=2)
    config.cov_smoothing = SmoothingConfig(lambda_grid_points=6, max_sweeps=2)
    return config


@pytest.mark.slow
def test_harness_replicate(tiny_setting):
    report = run_harness(tiny_setting, harness_config(), replicates=1, jobs=1, scenario="A")
    assert report.failed == []
    assert report.n_replicates == 1
    components = set(report.metrics["component"])
    assert {"mean", "fitted", "sigma2"} <= components
    assert (report.metrics["value"] >= 0).all()
    assert set(report.coverage["effect"]) == {"intercept", "x1", "scalar-intercept"}
    summary = summarize(report)
    assert "fitted" in summary.metrics.index.get_level_values("component")


@pytest.mark.slow
def test_total_variation_identity():
    from multifamm.config import TermKind, TermSpec
    from multifamm.simeval import SimTruth

    truth = SimTruth(
        dims=("a", "b"),
        formula=[TermSpec("intercept", TermKind.INTERCEPT)],
        effects={"intercept": lambda d, t: np.sin(np.pi * t) * (d + 1)},
        processes={"E": ProcessTruth([0.5, 0.2, 0.1], [[0.8, 0.6], [0.6, -0.8], [1.0, 0.0]], (1, 2, 3))},
        sigma2={"a": 0.01, "b": 0.04},
    )
    setting = SimSetting("identity", truth, n_subjects=20, n_groups=10, n_reps=10, seed=11)
    ds, _ = simulate(setting)
    assert ds.n_curves == 2000
    assert empirical_total_variation(ds, truth) == pytest.approx(truth.total_variation(), rel=0.05)


@pytest.mark.slow
def test_harness_is_reproducible(tiny_setting, tmp_path):
    config = harness_config()
    paths = []
    for run in ("first", "second"):
        report = run_harness(tiny_setting, config, replicates=2, jobs=2, scenario="A")
        writer = ArtifactWriter(tmp_path / run, config)
        paths.append((writer.write_csv("metrics.csv", report.metrics),
                      writer.write_csv("coverage.csv", report.coverage)))
    for first, second in zip(*paths):
        assert first.read_bytes() == second.read_bytes()


DESK_REPLICATES = 8


@pytest.mark.slow
def test_desk_scale_recovery_and_coverage():
    setting = setting_preset("setting1-desk")
    report = run_harness(setting, PipelineConfig.default(), replicates=DESK_REPLICATES, jobs=4,
                         scenario="A")
    assert report.failed == []
    assert report.n_replicates == DESK_REPLICATES

    m = report.metrics[report.metrics["metric"] == "mrrMSE"]

    def median(component):
        return m.loc[m["component"] == component, "value"].median()

    assert median("mean") < 0.25
    assert median("psi:E1") < median("psi:E3")

    cov = report.coverage[report.coverage["effect"].isin(["intercept", "x1"])]
    average = cov.groupby("effect")["coverage"].mean()
    assert len(average) == 2
    assert average.between(0.85, 0.97).all()
