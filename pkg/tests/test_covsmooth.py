import numpy as np
import pytest

from multifamm.basis import SplineSpec, bspline_design
from multifamm.config import LayerSpec
from multifamm.covsmooth import build_crossproducts, evaluate_surface, smooth_covariance
from multifamm.errors import DataError
from multifamm.fundata import FunCurve, build_dataset

SPEC = SplineSpec(3, 8, 2)


def psi(t):
    return np.sqrt(2.0) * np.sin(2 * np.pi * t)


def rank_one_dataset(n_curves, n_points, sigma, nu=1.0, seed=0):
    rng = np.random.default_rng(seed)
    rho = rng.standard_normal(n_curves)
    rho *= np.sqrt(nu / np.mean(rho ** 2))
    curves = []
    for i in range(n_curves):
        t = np.sort(rng.uniform(size=n_points))
        y = rho[i] * psi(t) + sigma * rng.standard_normal(n_points)
        curves.append(FunCurve(f"c{i:04d}", {"x": (t, y)}))
    return build_dataset(curves, ("x",))


def grouped_curves(groups, n_points=3):
    t = np.linspace(0.1, 0.9, n_points)
    curves = [FunCurve(f"c{i}", {"x": (t, t + i)}, {}, {"grp": g}) for i, g in enumerate(groups)]
    return build_dataset(curves, ("x",), [LayerSpec("grp")])


def test_single_curve_rows():
    t = np.linspace(0.0, 1.0, 7)
    ds = build_dataset([FunCurve("a", {"x": (t, t)})], ("x",))
    table = build_crossproducts(ds)["x"]
    frame = table.to_frame()
    assert table.n_rows == len(frame) == 7 * 8 // 2
    assert (frame["same_curve"] == 1).all()
    assert (frame["t"] <= frame["t2"]).all()
    assert frame["same_point"].sum() == 7
    assert set(frame["weight"]) == {1.0, 2.0}


def test_unrelated_curves_have_no_cross_rows():
    table = build_crossproducts(grouped_curves(["a", "b"]))["x"]
    assert table.pairs == []
    assert (table.to_frame()["same_curve"] == 1).all()


def test_shared_group_cross_rows():
    frame = build_crossproducts(grouped_curves(["a", "a"]))["x"].to_frame()
    cross = frame[frame["same_curve"] == 0]
    assert len(cross) == 9
    assert (cross["same:grp"] == 1).all()
    assert (cross["same_point"] == 0).all()


def test_rank_one_surface_recovered():
    ds = rank_one_dataset(n_curves=400, n_points=15, sigma=0.1)
    cm = smooth_covariance(build_crossproducts(ds), SPEC)
    grid = np.linspace(0.0, 1.0, 50)
    K = evaluate_surface(cm, "E", "x", grid)
    truth = np.outer(psi(grid), psi(grid))
    assert np.linalg.norm(K - truth) / np.linalg.norm(truth) < 0.15
    assert cm.processes == ("E",)


def test_white_noise_variance():
    ds = rank_one_dataset(n_curves=500, n_points=20, sigma=1.0, nu=0.0)
    cm = smooth_covariance(build_crossproducts(ds), SPEC)
    assert abs(cm.sigma2["x"] - 1.0) < 0.1


def test_surface_symmetric_and_matches_basis(rng):
    ds = rank_one_dataset(n_curves=60, n_points=10, sigma=0.2, seed=3)
    cm = smooth_covariance(build_crossproducts(ds), SplineSpec(3, 5, 2))
    grid = np.linspace(0.0, 1.0, 23)
    K = evaluate_surface(cm, "E", "x", grid)
    assert np.array_equal(K, K.T)

    C = cm.coefficient_matrix("E", "x")
    for s, t in rng.uniform(size=(5, 2)):
        direct = bspline_design(cm.spec, [s]) @ C @ bspline_design(cm.spec, [t]).T
        K1 = evaluate_surface(cm, "E", "x", [s, t])
        assert K1[0, 1] == pytest.approx(direct[0, 0], abs=1e-12)

    single = evaluate_surface(cm, "E", "x", [0.4])
    assert single.shape == (1, 1)


def test_layer_without_shared_pairs_is_dropped():
    rng = np.random.default_rng(5)
    curves = []
    for i in range(12):
        t = np.sort(rng.uniform(size=8))
        curves.append(FunCurve(f"c{i}", {"x": (t, rng.standard_normal(8))}, {}, {"grp": f"g{i}"}))
    ds = build_dataset(curves, ("x",), [LayerSpec("grp")])
    cm = smooth_covariance(build_crossproducts(ds), SplineSpec(3, 5, 2))
    assert cm.dropped["x"] == ["grp"]
    assert not cm.coefficient_matrix("grp", "x").any()
    with pytest.raises(DataError):
        cm.coefficient_matrix("nope", "x")


def test_curve_order_does_not_matter():
    ds = rank_one_dataset(n_curves=40, n_points=8, sigma=0.2, seed=9)
    shuffled = build_dataset(list(reversed(ds.curves)), ds.dims)
    spec = SplineSpec(3, 5, 2)
    a = smooth_covariance(build_crossproducts(ds), spec)
    b = smooth_covariance(build_crossproducts(shuffled), spec)
    grid = np.linspace(0.0, 1.0, 21)
    assert np.allclose(evaluate_surface(a, "E", "x", grid), evaluate_surface(b, "E", "x", grid),
                       rtol=1e-8, atol=1e-10)
    assert a.sigma2["x"] == pytest.approx(b.sigma2["x"], rel=1e-8)
