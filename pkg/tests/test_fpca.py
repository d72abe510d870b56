import numpy as np
import pytest
from scipy.integrate import trapezoid

from multifamm.basis import SplineSpec
from multifamm.covsmooth import CovarianceModel
from multifamm.errors import DataError, NumericError
from multifamm.fpca import UniEigenSet, predict_scores, trapezoid_weights, univariate_fpca
from multifamm.fundata import FunCurve, build_dataset
from multifamm.simeval import fourier

GRID = np.linspace(0.0, 1.0, 101)


def fourier_kernel(values):
    return sum(v * np.outer(fourier(k + 1, GRID), fourier(k + 1, GRID)) for k, v in enumerate(values))


def test_rank_one_kernel():
    phi = fourier(1, GRID)
    es = univariate_fpca(2.0 * np.outer(phi, phi), GRID, "E", "x")
    assert es.m == 1
    assert es.eigenvalues[0] == pytest.approx(2.0, abs=1e-8)
    f = es.eigenfunctions[:, 0]
    err = min(np.sqrt(trapezoid((f - phi) ** 2, GRID)), np.sqrt(trapezoid((f + phi) ** 2, GRID)))
    assert err < 1e-3


def test_zero_kernel_is_empty():
    es = univariate_fpca(np.zeros((101, 101)), GRID)
    assert es.m == 0
    assert es.at([0.2, 0.5]).shape == (2, 0)


def test_eigenvalues_and_orthonormality():
    es = univariate_fpca(fourier_kernel([3.0, 2.0, 1.0]), GRID)
    assert np.allclose(es.eigenvalues, [3.0, 2.0, 1.0], atol=1e-3)
    gram = es.eigenfunctions.T @ (trapezoid_weights(GRID)[:, None] * es.eigenfunctions)
    assert np.allclose(gram, np.eye(3), atol=1e-6)


def test_eigenvalue_sum_matches_trace():
    K = fourier_kernel([0.5, 0.3, 0.2, 0.1])
    es = univariate_fpca(K, GRID)
    assert es.eigenvalues.sum() == pytest.approx(trapezoid(np.diag(K), GRID), rel=0.02)


def test_input_checks():
    with pytest.raises(DataError):
        univariate_fpca(np.eye(10), np.linspace(0, 1, 10))
    with pytest.raises(DataError):
        univariate_fpca(np.triu(np.ones((101, 101))), GRID)
    with pytest.raises(DataError):
        trapezoid_weights([0.0, 0.1, 0.5])
    assert trapezoid_weights(GRID).sum() == pytest.approx(1.0)


def one_curve_problem(t, y, sigma2):
    ds = build_dataset([FunCurve("a", {"x": (np.asarray(t), np.asarray(y))})], ("x",))
    eig = np.column_stack([fourier(1, GRID), fourier(2, GRID)])
    es = UniEigenSet("E", "x", GRID, eig, np.array([0.8, 0.3]))
    cm = CovarianceModel(spec=SplineSpec(3, 5, 2), dims=("x",), processes=("E",),
                         coefficients={}, sigma2={"x": sigma2})
    return ds, es, cm


def test_sparse_scores_match_closed_form():
    t, y = np.array([0.15, 0.5, 0.8]), np.array([0.4, -0.2, 0.9])
    ds, es, cm = one_curve_problem(t, y, 0.05)
    scores = predict_scores(ds, [es], cm)["E"]
    Phi = es.at(t)
    expected = np.linalg.solve(Phi.T @ Phi / 0.05 + np.diag(1.0 / es.eigenvalues), Phi.T @ y / 0.05)
    assert scores.levels == ("a",)
    assert scores.columns == (("x", 0), ("x", 1))
    assert np.allclose(scores.values[0], expected)


def test_dense_noiseless_scores_approach_projection():
    t = GRID.copy()
    y = 0.7 * fourier(1, t)
    ds, es, cm = one_curve_problem(t, y, 1e-8)
    scores = predict_scores(ds, [es], cm)["E"].values[0]
    assert scores[0] == pytest.approx(0.7, rel=1e-3)
    assert abs(scores[1]) < 1e-3


def test_score_shrinkage_and_equivariance():
    t, y = np.array([0.2, 0.45, 0.7, 0.9]), np.array([0.3, 0.1, -0.4, 0.2])
    ds, es, cm = one_curve_problem(t, y, 1e8)
    assert np.allclose(predict_scores(ds, [es], cm)["E"].values, 0.0, atol=1e-6)

    ds, es, cm = one_curve_problem(t, y, 0.1)
    base = predict_scores(ds, [es], cm)["E"].values
    ds3, _, _ = one_curve_problem(t, 3.0 * y, 0.1)
    assert np.allclose(predict_scores(ds3, [es], cm)["E"].values, 3.0 * base)


def test_no_eigenfunctions():
    ds, es, cm = one_curve_problem([0.1, 0.2], [0.0, 1.0], 1.0)
    empty = UniEigenSet("E", "x", GRID, np.zeros((101, 0)), np.zeros(0))
    with pytest.raises(DataError):
        predict_scores(ds, [empty], cm)


def test_non_finite_kernel():
    K = fourier_kernel([1.0, 0.5])
    K[3, 3] = np.nan
    with pytest.raises(NumericError, match="covariance operator"):
        univariate_fpca(K, GRID)
