"""
Shared fixtures: the bundled toy dataset and small simulated datasets
"""

import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))

from multifamm.config import LayerKind, LayerSpec, PipelineConfig, SmoothingConfig  # noqa: E402
from multifamm.fundata import FunCurve, build_dataset, load_dataset  # noqa: E402
from multifamm.simeval import SimSetting, phonetics_like_truth, simulate  # noqa: E402

TOY_DIR = ROOT / "data" / "toy"


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(12345))


@pytest.fixture
def toy_config():
    return PipelineConfig.from_file(TOY_DIR / "config.json")


@pytest.fixture
def toy_dataset(toy_config):
    return load_dataset(toy_config.data.points_file, toy_config.data.meta_file, toy_config.data.layers)


@pytest.fixture
def fast_smoothing():
    """Coarse lambda search for tests that only check structure"""
    return SmoothingConfig(lambda_grid_points=6, max_sweeps=2)


@pytest.fixture
def tiny_setting():
    """5 speakers x 3 words x 2 repetitions with the speech-like truth"""
    return SimSetting(name="tiny", truth=phonetics_like_truth(), n_subjects=5, n_groups=3,
                      n_reps=2, points=(10, 14), seed=7)


@pytest.fixture
def tiny_dataset(tiny_setting):
    return simulate(tiny_setting)


def make_curves(rng, n_curves=4, dims=("a", "b"), n_points=12, groups=("g1", "g2")):
    """Random smooth curves with one crossed layer 'grp' and covariate x"""
    curves = []
    for i in range(n_curves):
        points = {}
        for d in dims:
            t = np.sort(rng.uniform(0.0, 1.0, n_points))
            points[d] = (t, np.sin(2 * np.pi * t) + 0.1 * rng.standard_normal(n_points))
        curves.append(FunCurve(
            id=f"c{i:02d}",
            points=points,
            covariates={"x": float(i % 2)},
            group_labels={"grp": groups[i % len(groups)]},
        ))
    return curves


@pytest.fixture
def small_dataset(rng):
    curves = make_curves(rng)
    return build_dataset(curves, ("a", "b"), [LayerSpec("grp", LayerKind.CROSSED)], ["x"])
