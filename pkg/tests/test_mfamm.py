from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import trapezoid

from multifamm.config import Scedasticity, SmoothingConfig, TermKind, TermSpec
from multifamm.errors import DataError
from multifamm.fundata import FunCurve, build_dataset
from multifamm.meanstage import FixedFormula, fit_univariate_means
from multifamm.mfamm import (ModelSpec, assemble, confidence_band, effect_estimates, fit,
                             predictor_variance, random_effect_curves, residual_urrmse,
                             scalar_intercept)
from multifamm.mfpca import MultiEigenBasis
from multifamm.plsengine import solve_fixed_lambda
from multifamm.simeval import fourier

GRID = np.linspace(0.0, 1.0, 101)
FORMULA = FixedFormula((TermSpec("intercept", TermKind.INTERCEPT),))
SMOOTHING = SmoothingConfig(lambda_grid_points=6, max_sweeps=2)
N_CURVES = 20


def curve_basis():
    """Two FPCs shared by dimensions a and b, unit norm in the unweighted product"""
    functions = np.zeros((2, 2, GRID.size))
    functions[0, 0] = functions[0, 1] = fourier(1, GRID) / np.sqrt(2.0)
    functions[1, 0] = fourier(2, GRID) / np.sqrt(2.0)
    functions[1, 1] = -fourier(2, GRID) / np.sqrt(2.0)
    return MultiEigenBasis("E", ("a", "b"), GRID, functions, np.array([1.0, 0.25]), np.ones(2))


@pytest.fixture(scope="module")
def curve_data():
    rng = np.random.default_rng(3)
    b = curve_basis()
    xi = rng.standard_normal((N_CURVES, 2)) * np.sqrt(b.eigenvalues)
    curves = []
    for i in range(N_CURVES):
        points = {}
        for d in ("a", "b"):
            t = np.sort(rng.uniform(0.0, 1.0, 30))
            y = 1.0 + b.at(d, t) @ xi[i] + 0.05 * rng.standard_normal(t.size)
            points[d] = (t, y)
        curves.append(FunCurve(f"c{i:02d}", points))
    return build_dataset(curves, ("a", "b"), [], []), xi


@pytest.fixture(scope="module")
def curve_fit(curve_data):
    ds, _ = curve_data
    spec = ModelSpec(FORMULA, {"E": curve_basis()}, {"a": 0.0025, "b": 0.0025}, smoothing=SMOOTHING)
    return fit(ds, spec)


def test_no_active_process_matches_mean_stage(curve_data):
    ds, _ = curve_data
    spec = ModelSpec(FORMULA, {"E": curve_basis().truncated(0)}, {"a": 1.0, "b": 1.0},
                     smoothing=SMOOTHING)
    model = fit(ds, spec)
    means = fit_univariate_means(ds, FORMULA, SMOOTHING)
    assert model.rho == {}
    assert np.allclose(model.fitted, means.predict(ds), atol=1e-10)
    assert len(model.components) == 2


def test_assembled_design(curve_data):
    ds, _ = curve_data
    spec = ModelSpec(FORMULA, {"E": curve_basis()}, {"a": 0.5, "b": 0.25})
    problem = assemble(ds, spec)
    sl = problem.block_slices["re:E"]
    assert sl.stop - sl.start == N_CURVES * 2
    assert problem.n_obs == len(ds.long_frame)
    dims = ds.long_frame["dim"].to_numpy()
    assert np.allclose(problem.obs_weights[dims == "a"], 2.0)
    assert np.allclose(problem.obs_weights[dims == "b"], 4.0)

    homo = ModelSpec(FORMULA, {"E": curve_basis()}, {}, scedasticity=Scedasticity.HOMOSCEDASTIC)
    assert np.allclose(assemble(ds, homo).obs_weights, 1.0)


def test_missing_inputs(curve_data):
    ds, _ = curve_data
    with pytest.raises(DataError, match="error variance"):
        assemble(ds, ModelSpec(FORMULA, {"E": curve_basis()}, {"a": 1.0}))
    with pytest.raises(DataError):
        ModelSpec(FORMULA, {"E": curve_basis()}, layers=["B", "E"]).active()


def test_doubling_eigenvalues_equals_halving_lambda(curve_data):
    ds, _ = curve_data
    sigma2 = {"a": 0.0025, "b": 0.0025}
    base = curve_basis()
    doubled = replace(base, eigenvalues=2.0 * base.eigenvalues)
    p1 = assemble(ds, ModelSpec(FORMULA, {"E": base}, sigma2))
    p2 = assemble(ds, ModelSpec(FORMULA, {"E": doubled}, sigma2))

    lambdas = {g: 0.3 for g in p1.groups}
    fit_doubled = solve_fixed_lambda(p2, lambdas)
    fit_halved = solve_fixed_lambda(p1, {**lambdas, "re:E": 0.15})
    assert np.allclose(fit_doubled.coefficients, fit_halved.coefficients, rtol=1e-8, atol=1e-10)


def test_scores_sum_to_zero(curve_fit):
    assert curve_fit.rho["E"].shape == (N_CURVES, 2)
    assert np.allclose(curve_fit.rho["E"].sum(axis=0), 0.0, atol=1e-10)


def test_fitted_values_decompose(curve_data, curve_fit):
    ds, _ = curve_data
    frame = ds.long_frame
    rebuilt = np.zeros(len(frame))
    basis = curve_fit.spec.bases["E"]
    for dim, rows in frame.groupby("dim", sort=False):
        t = rows["t"].to_numpy(dtype=float)
        intercept = curve_fit.design.term_matrix(FORMULA.intercept, rows, t)
        codes = rows["lvl:E"].to_numpy(dtype=int)
        rebuilt[rows.index.to_numpy()] = intercept @ curve_fit.theta[("intercept", dim)] \
            + np.sum(basis.at(dim, t) * curve_fit.rho["E"][codes], axis=1)
    assert np.allclose(rebuilt, curve_fit.fitted, atol=1e-8)


def test_scores_track_truth(curve_data, curve_fit):
    _, xi = curve_data
    order = [int(v[1:]) for v in curve_fit.levels["E"]]
    truth = xi[order] - xi.mean(axis=0)
    for m in range(2):
        assert np.corrcoef(truth[:, m], curve_fit.rho["E"][:, m])[0, 1] > 0.95
    assert max(residual_urrmse(curve_fit).values()) < 0.1


def test_random_effect_curve(curve_fit):
    level = curve_fit.levels["E"][4]
    curve = random_effect_curves(curve_fit, "E", level, "b", GRID)
    expected = curve_basis().at("b", GRID) @ curve_fit.rho["E"][4]
    assert np.allclose(curve, expected)
    with pytest.raises(DataError):
        random_effect_curves(curve_fit, "B", level, "b")
    with pytest.raises(DataError):
        random_effect_curves(curve_fit, "E", "nope", "b")


def test_intercept_estimates(curve_data, curve_fit):
    _, xi = curve_data
    value, se = effect_estimates(curve_fit, "intercept", "a", GRID)
    assert np.all(se > 0)
    # centering the scores moves their mean curve into the intercept
    expected = 1.0 + curve_basis().at("a", GRID) @ xi.mean(axis=0)
    assert np.allclose(value, expected, atol=0.1)

    scalar, scalar_se = scalar_intercept(curve_fit, "a", GRID)
    assert scalar == pytest.approx(trapezoid(value, GRID), rel=1e-10)
    assert 0 < scalar_se < np.max(se)

    band = confidence_band(curve_fit, "intercept", "a", GRID)
    assert list(band.columns) == ["t", "value", "se", "lower", "upper"]
    assert np.allclose(band["upper"] - band["lower"], 2 * 1.959964 * band["se"], rtol=1e-5)
    with pytest.raises(DataError):
        effect_estimates(curve_fit, "intercept", "z")


def test_predictor_variance_shares(curve_data, curve_fit):
    ds, _ = curve_data
    table = predictor_variance(curve_fit, ds)
    assert list(table.index) == ["a", "b"]
    assert np.allclose(table[["share:intercept", "share:E"]].sum(axis=1), 1.0)
    assert (table["E"] > table["intercept"]).all()


def test_serialized_fit(curve_fit):
    out = curve_fit.to_dict()
    assert set(out["rho"]["E"]) == set(curve_fit.levels["E"])
    assert out["scedasticity"] == "per-dimension"
    assert out["eigenbases"]["E"]["truncation"] == 2
