"""
Simulation harness

Draws datasets from a known multiFAMM, refits them with the two-step pipeline
and scores the fits with relative root mean squared errors and pointwise
confidence-band coverage.

Usage:
    from multifamm.simeval import setting_preset, run_harness, summarize
    report = run_harness(setting_preset("setting1-desk"), config, replicates=50, jobs=4)
    summary = summarize(report)
"""

import copy
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid
from scipy.stats import norm
from tqdm import tqdm

from .config import (LayerKind, LayerSpec, PipelineConfig, Scedasticity, ScoreMode, TermKind,
                     TermSpec, TruncationCriterion, WeightScheme)
from .errors import ConfigError, DataError, FammError, NumericError
from .fundata import FunCurve, FunDataset, build_dataset
from .mfamm import ModelFit, confidence_band, scalar_intercept
from .mfpca import ScalarProduct, weighted_norm
from .pipeline import FammPipeline

logger = logging.getLogger(__name__)

Effect = Callable[[int, np.ndarray], np.ndarray]     # (dimension index, t) -> values

SCENARIOS = ("A", "B", "C", "D", "E", "F")


# === Ground truth ===

def fourier(k: int, t) -> np.ndarray:
    """Orthonormal Fourier function k >= 1 on [0, 1]: sin 2pi t, cos 2pi t, sin 4pi t, ..."""
    t = np.asarray(t, dtype=float)
    freq = 2.0 * np.pi * ((k + 1) // 2)
    return np.sqrt(2.0) * (np.sin(freq * t) if k % 2 else np.cos(freq * t))


@dataclass
class ProcessTruth:
    """
    Known eigenbasis of one random process.

    Eigenfunction m is fourier(frequencies[m]) on every dimension, scaled by
    loadings[m, d] / sqrt(w_d); rows of loadings have unit length, so the
    functions are orthonormal in the weighted scalar product as long as the
    frequencies differ.
    """
    eigenvalues: np.ndarray
    loadings: np.ndarray          # (M, D)
    frequencies: Tuple[int, ...]

    def __post_init__(self):
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=float)
        self.loadings = np.atleast_2d(np.asarray(self.loadings, dtype=float))
        M = len(self.eigenvalues)
        if self.loadings.shape[0] != M or len(self.frequencies) != M:
            raise ConfigError("eigenvalues, loadings and frequencies disagree in length")
        if len(set(self.frequencies)) != M:
            raise ConfigError("eigenfunction frequencies must be distinct")
        if np.any(self.eigenvalues < 0):
            raise ConfigError("eigenvalues must be >= 0")
        if M and not np.allclose(np.sum(self.loadings ** 2, axis=1), 1.0, atol=1e-10):
            raise ConfigError("loading rows must have unit length")

    @property
    def m(self) -> int:
        return len(self.eigenvalues)


@dataclass
class SimTruth:
    dims: Tuple[str, ...]
    formula: List[TermSpec]
    effects: Dict[str, Effect]                 # term name -> coefficient function
    processes: Dict[str, ProcessTruth]         # "B", "C", "E"
    sigma2: Dict[str, float]
    weights: WeightScheme = WeightScheme.UNIT

    def __post_init__(self):
        missing = [t.name for t in self.formula if t.name not in self.effects]
        if missing:
            raise ConfigError(f"no true effect for terms {missing}")
        if any(t.kind == TermKind.SMOOTH for t in self.formula):
            raise ConfigError("simulation truths support intercept, linear and interaction terms")
        bad = [g for g in self.processes if g not in ("B", "C", "E")]
        if bad:
            raise ConfigError(f"unknown truth processes {bad}")

    @property
    def scalar_weights(self) -> np.ndarray:
        if self.weights == WeightScheme.INVERSE_ERROR_VARIANCE:
            return np.array([1.0 / self.sigma2[d] for d in self.dims])
        return np.ones(len(self.dims))

    @property
    def counts(self) -> Dict[str, int]:
        return {g: p.m for g, p in self.processes.items()}

    def psi(self, g: str, d: int, t) -> np.ndarray:
        """Eigenfunctions of process g on dimension index d, shape (len(t), M)"""
        proc = self.processes[g]
        scale = proc.loadings[:, d] / np.sqrt(self.scalar_weights[d])
        return np.column_stack([s * fourier(k, t) for s, k in zip(scale, proc.frequencies)]) \
            if proc.m else np.zeros((np.size(t), 0))

    def eigenfunctions(self, g: str, grid) -> np.ndarray:
        """(M, D, G) array"""
        return np.stack([self.psi(g, d, grid).T for d in range(len(self.dims))], axis=1)

    def effect(self, term: str, d: int, t) -> np.ndarray:
        return np.asarray(self.effects[term](d, np.asarray(t, dtype=float)), dtype=float)

    def mean(self, covariates: Dict[str, float], d: int, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.size)
        for term in self.formula:
            x = float(np.prod([covariates[c] for c in term.covariates])) if term.covariates else 1.0
            out += x * self.effect(term.name, d, t)
        return out

    def total_variation(self) -> float:
        """sum of all eigenvalues plus sum_d w_d sigma_d^2"""
        w = self.scalar_weights
        return float(sum(p.eigenvalues.sum() for p in self.processes.values())
                     + sum(w[i] * self.sigma2[d] for i, d in enumerate(self.dims)))


def _speech_intercept(d: int, t):
    return 0.5 * np.sin(np.pi * t) + 0.2 if d == 0 else -0.3 * np.cos(np.pi * t)


def _speech_x1(d: int, t):
    return 0.2 * t if d == 0 else 0.15 * np.sin(2.0 * np.pi * t)


def _loadings(shares: Sequence[float]) -> np.ndarray:
    shares = np.asarray(shares, dtype=float)
    return np.column_stack([np.sqrt(shares), np.sqrt(1.0 - shares)])


def phonetics_like_truth(weights: WeightScheme = WeightScheme.UNIT,
                         sigma2: Tuple[float, float] = (0.004, 0.014)) -> SimTruth:
    """
    Two-dimensional truth shaped like the consonant assimilation fit: a
    speaker process B with 3 FPCs and a curve process E with 5 FPCs whose
    per-dimension norms follow the published variance table.
    """
    formula = [
        TermSpec("intercept", TermKind.INTERCEPT),
        TermSpec("x1", TermKind.LINEAR, ["x1"]),
    ]
    return SimTruth(
        dims=("dim1", "dim2"),
        formula=formula,
        effects={"intercept": _speech_intercept, "x1": _speech_x1},
        processes={
            "B": ProcessTruth([0.018, 0.009, 0.004], _loadings([0.169, 0.585, 0.642]), (1, 2, 3)),
            "E": ProcessTruth([0.060, 0.017, 0.012, 0.007, 0.003],
                              _loadings([0.153, 0.217, 0.849, 0.178, 0.713]), (1, 2, 3, 4, 5)),
        },
        sigma2={"dim1": sigma2[0], "dim2": sigma2[1]},
        weights=weights,
    )


def _trajectory_intercept(d: int, t):
    return 0.3 * np.sin(np.pi * t + 0.5 * d)


def _trajectory_skill(d: int, t):
    return 0.05 * np.cos(np.pi * t) * (1.0 if d % 2 == 0 else -1.0)


def _spread(m: int, n_dims: int) -> np.ndarray:
    """Unit-length loading rows concentrated on rotating dimensions"""
    rows = np.full((m, n_dims), 0.2)
    for i in range(m):
        rows[i, i % n_dims] = 1.0
        rows[i, (i + 1) % n_dims] = 0.6
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def trajectory_like_truth() -> SimTruth:
    """Six-dimensional truth shaped like the snooker fit (B: 6, C: 5, E: 5 FPCs)"""
    dims = tuple(f"dim{i}" for i in range(1, 7))
    formula = [
        TermSpec("intercept", TermKind.INTERCEPT),
        TermSpec("x1", TermKind.LINEAR, ["x1"]),
    ]
    return SimTruth(
        dims=dims,
        formula=formula,
        effects={"intercept": _trajectory_intercept, "x1": _trajectory_skill},
        processes={
            "B": ProcessTruth([0.008, 0.005, 0.003, 0.002, 0.0015, 0.0012], _spread(6, 6),
                              (1, 2, 3, 4, 5, 6)),
            "C": ProcessTruth([0.015, 0.0035, 0.0025, 0.0018, 0.0014], _spread(5, 6)[::-1],
                              (1, 2, 3, 4, 5)),
            "E": ProcessTruth([0.0045, 0.0028, 0.0022, 0.0016, 0.0013], np.roll(_spread(5, 6), 2, axis=1),
                              (1, 2, 3, 4, 5)),
        },
        sigma2=dict(zip(dims, (0.0010, 0.0005, 0.0012, 0.0003, 0.0012, 0.0008))),
    )


# === Settings ===

@dataclass
class SimSetting:
    name: str
    truth: SimTruth
    n_subjects: int
    n_groups: int                     # crossed words, or sessions nested in subjects
    n_reps: int
    points: Tuple[int, int] = (20, 50)
    design: LayerKind = LayerKind.CROSSED
    score_mode: ScoreMode = ScoreMode.CENTERED
    shared_points: bool = False       # one set of time points per curve for all dimensions
    seed: int = 20240101

    def __post_init__(self):
        lo, hi = self.points
        if lo < 1 or hi < lo:
            raise ConfigError(f"points range must satisfy 1 <= lo <= hi, got {self.points}")
        if min(self.n_subjects, self.n_groups, self.n_reps) < 1:
            raise ConfigError("design sizes must be >= 1")
        if self.design not in (LayerKind.CROSSED, LayerKind.NESTED):
            raise ConfigError(f"design must be crossed or nested, got {self.design.value}")

    @property
    def n_curves(self) -> int:
        return self.n_subjects * self.n_groups * self.n_reps

    @property
    def layer_specs(self) -> List[LayerSpec]:
        second = LayerSpec("C", LayerKind.NESTED, "B") if self.design == LayerKind.NESTED \
            else LayerSpec("C", LayerKind.CROSSED)
        return [LayerSpec("B", LayerKind.CROSSED), second]


def setting_preset(key) -> SimSetting:
    """
    Data settings 1-6 plus the desk-scale variant of setting 1.

    1: speech-like, 9 x 16 crossed x 5 reps, [20, 50] points per dimension
    2: as 1 with sigma_2^2 = 16 sigma_1^2
    3: as 1 with [3, 10] points
    4: as 1 with raw iid scores
    5: as 1 with a truth orthonormal in the inverse-error-variance product
    6: trajectory-like, six dimensions, 25 subjects x 2 nested sessions x 6 reps
    """
    key = str(key)
    if key.startswith("setting") and key[len("setting"):].isdigit():
        key = key[len("setting"):]
    if key == "setting1-desk":
        return replace(setting_preset(1), name="setting1-desk", n_reps=2)
    base = SimSetting(name="setting1", truth=phonetics_like_truth(), n_subjects=9, n_groups=16, n_reps=5)
    if key == "1":
        return base
    if key == "2":
        return replace(base, name="setting2", truth=phonetics_like_truth(sigma2=(0.004, 16 * 0.004)))
    if key == "3":
        return replace(base, name="setting3", points=(3, 10))
    if key == "4":
        return replace(base, name="setting4", score_mode=ScoreMode.RAW)
    if key == "5":
        return replace(base, name="setting5",
                       truth=phonetics_like_truth(weights=WeightScheme.INVERSE_ERROR_VARIANCE))
    if key == "6":
        return SimSetting(name="setting6", truth=trajectory_like_truth(), n_subjects=25, n_groups=2,
                          n_reps=6, points=(10, 50), design=LayerKind.NESTED, shared_points=True)
    raise ConfigError(f"unknown simulation preset '{key}' (1-6 or setting1-desk)")


# === Simulation ===

@dataclass
class SimDraw:
    """Latent components of one simulated dataset"""
    truth: SimTruth
    scores: Dict[str, np.ndarray]        # process -> (levels x M), rows in layer level order
    levels: Dict[str, Tuple[str, ...]]
    seed: int


def draw_scores(rng: np.random.Generator, eigenvalues: np.ndarray, n_levels: int,
                mode: ScoreMode) -> np.ndarray:
    """
    Scores rho ~ N(0, diag(nu)).

    Centered mode shifts and whitens the draws so that the empirical mean is
    0 and the empirical covariance (ddof = 1) is exactly diag(nu).
    """
    M = len(eigenvalues)
    z = rng.standard_normal((n_levels, M))
    if M and mode == ScoreMode.CENTERED:
        if n_levels <= M:
            raise DataError(f"cannot decorrelate {M} scores over {n_levels} levels")
        z = z - z.mean(axis=0)
        try:
            L = np.linalg.cholesky(np.cov(z, rowvar=False, ddof=1).reshape(M, M))
        except np.linalg.LinAlgError as e:
            raise NumericError(f"score draws are degenerate: {e}") from e
        z = np.linalg.solve(L, z.T).T
    return z * np.sqrt(eigenvalues)


def _time_points(rng: np.random.Generator, lo: int, hi: int) -> np.ndarray:
    n = int(rng.integers(lo, hi + 1))
    return np.unique(rng.uniform(0.0, 1.0, n))


def simulate(s: SimSetting, seed: Optional[int] = None) -> Tuple[FunDataset, SimDraw]:
    """
    Draw one dataset y = mu + U + E + eps from the setting's truth.

    Draw order is fixed (covariates, scores per process, then curves and
    dimensions in order), so equal seeds give identical datasets.
    """
    seed = s.seed if seed is None else int(seed)
    rng = np.random.Generator(np.random.Philox(seed))
    truth = s.truth

    subjects = [f"s{i + 1:02d}" for i in range(s.n_subjects)]
    groups = [f"{'w' if s.design == LayerKind.CROSSED else 'c'}{j + 1:02d}" for j in range(s.n_groups)]
    if s.design == LayerKind.NESTED:
        subject_x = dict(zip(subjects, rng.binomial(1, 0.5, s.n_subjects).astype(float)))

    specs = []
    for i, subj in enumerate(subjects):
        for j, grp in enumerate(groups):
            x1 = subject_x[subj] if s.design == LayerKind.NESTED else float(j % 2 == 0)
            for h in range(s.n_reps):
                specs.append((f"{subj}_{grp}_r{h + 1}", subj, grp, {"x1": x1}))

    # level order must match the dataset built below
    nested = s.design == LayerKind.NESTED
    levels = {
        "B": tuple(subjects),
        "C": tuple(sorted({f"{b}/{c}" if nested else c for _, b, c, _ in specs})),
        "E": tuple(sorted(cid for cid, _, _, _ in specs)),
    }
    scores = {
        g: draw_scores(rng, truth.processes[g].eigenvalues, len(levels[g]), s.score_mode)
        for g in sorted(truth.processes)
    }
    index = {g: {lvl: i for i, lvl in enumerate(lv)} for g, lv in levels.items()}

    lo, hi = s.points
    curves = []
    for cid, subj, grp, cov in specs:
        own = {"B": subj, "C": f"{subj}/{grp}" if nested else grp, "E": cid}
        shared_t = _time_points(rng, lo, hi) if s.shared_points else None
        points = {}
        for d, dim in enumerate(truth.dims):
            t = shared_t if s.shared_points else _time_points(rng, lo, hi)
            y = truth.mean(cov, d, t)
            for g, rho in scores.items():
                y = y + truth.psi(g, d, t) @ rho[index[g][own[g]]]
            y = y + rng.normal(0.0, np.sqrt(truth.sigma2[dim]), t.size)
            points[dim] = (t, y)
        curves.append(FunCurve(cid, points, dict(cov), {"B": subj, "C": grp}))

    covariate_names = list(dict.fromkeys(c for t in truth.formula for c in t.covariates))
    ds = build_dataset(curves, truth.dims, s.layer_specs, covariate_names)
    return ds, SimDraw(truth=truth, scores=scores, levels=levels, seed=seed)


def empirical_total_variation(ds: FunDataset, truth: SimTruth) -> float:
    """
    sum_d w_d * mean over observations of (y - mu)^2.

    With t uniform on [0, 1] this estimates the integrated variance of every
    dimension, to be compared with SimTruth.total_variation().
    """
    frame = ds.long_frame
    w = truth.scalar_weights
    total = 0.0
    for d, dim in enumerate(truth.dims):
        rows = frame[frame["dim"] == dim]
        mu = np.concatenate([
            truth.mean(ds.curves[i].covariates, d, part["t"].to_numpy(dtype=float))
            for i, part in rows.groupby("curve_idx", sort=False)
        ])
        total += w[d] * float(np.mean((rows["y"].to_numpy(dtype=float) - mu) ** 2))
    return total


# === Metrics ===

def rrmse_scalar(truth: float, est: float) -> float:
    if truth == 0:
        raise DataError("rrMSE undefined for a true value of 0")
    return float(abs(truth - est) / abs(truth))


def urrmse(truth, est, grid) -> float:
    """Relative error of S univariate functions given as (S, G) arrays"""
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    est = np.atleast_2d(np.asarray(est, dtype=float))
    if truth.shape != est.shape or truth.shape[-1] != len(grid):
        raise DataError(f"shape mismatch: {truth.shape} vs {est.shape} on {len(grid)} points")
    denom = trapezoid(truth ** 2, grid, axis=-1).sum()
    if denom <= 0:
        raise DataError("urrMSE undefined for zero true functions")
    return float(np.sqrt(trapezoid((truth - est) ** 2, grid, axis=-1).sum() / denom))


def mrrmse(truth, est, grid) -> float:
    """Relative error of S multivariate functions given as (S, D, G) arrays, unweighted norm"""
    truth = np.asarray(truth, dtype=float)
    est = np.asarray(est, dtype=float)
    if truth.ndim == 2:
        truth, est = truth[None], est[None]
    if truth.shape != est.shape or truth.shape[-1] != len(grid):
        raise DataError(f"shape mismatch: {truth.shape} vs {est.shape} on {len(grid)} points")
    denom = trapezoid(truth ** 2, grid, axis=-1).sum()
    if denom <= 0:
        raise DataError("mrrMSE undefined for zero true functions")
    return float(np.sqrt(trapezoid((truth - est) ** 2, grid, axis=-1).sum() / denom))


def align_sign(est_psi, true_psi, sp: ScalarProduct) -> np.ndarray:
    """Flip est_psi when -est_psi is strictly closer to true_psi; ties keep est_psi"""
    est_psi = np.asarray(est_psi, dtype=float)
    true_psi = np.asarray(true_psi, dtype=float)
    if weighted_norm(true_psi + est_psi, sp) < weighted_norm(true_psi - est_psi, sp):
        return -est_psi
    return est_psi


@dataclass
class MetricReport:
    """Replicate-level metrics of one harness run"""
    setting: str
    scenario: str
    seed: int
    metrics: pd.DataFrame        # replicate, component, dim, metric, value
    coverage: pd.DataFrame       # replicate, effect, dim, coverage
    fpc_counts: pd.DataFrame     # replicate, process, count
    failed: List[int] = field(default_factory=list)

    def __post_init__(self):
        if len(self.metrics) and (self.metrics["value"] < 0).any():
            raise DataError("rrMSE values must be >= 0")
        if len(self.coverage) and not self.coverage["coverage"].between(0.0, 1.0).all():
            raise DataError("coverage must lie in [0, 1]")

    @property
    def n_replicates(self) -> int:
        return int(self.metrics["replicate"].nunique()) if len(self.metrics) else 0

    def to_csv(self, path):
        self.metrics.to_csv(path, index=False, float_format="%.10g")


METRIC_COLUMNS = ["replicate", "component", "dim", "metric", "value"]
COVERAGE_COLUMNS = ["replicate", "effect", "dim", "coverage"]


def coverage(fits: Sequence[ModelFit], truth: SimTruth, level: float = 0.95,
             n_grid: int = 100) -> pd.DataFrame:
    """
    Average pointwise coverage of the fixed-effect bands.

    One row per (effect, dim); the functional effects use an n_grid-point
    grid on [0, 1], "scalar-intercept" the integral of the intercept.
    """
    if not fits:
        raise DataError("coverage needs at least one fit")
    grid = np.linspace(0.0, 1.0, n_grid)
    dense = np.linspace(0.0, 1.0, 1001)
    intercept = next(t.name for t in truth.formula if t.kind == TermKind.INTERCEPT)
    hits: Dict[Tuple[str, str], List[float]] = {}
    for fit in fits:
        if tuple(fit.dims) != tuple(truth.dims):
            raise DataError(f"fit dimensions {fit.dims} differ from truth {truth.dims}")
        for term in truth.formula:
            if term.name not in {t.name for t in fit.spec.formula.terms}:
                raise DataError(f"fit lacks effect '{term.name}'")
            for d, dim in enumerate(truth.dims):
                band = confidence_band(fit, term.name, dim, grid, level)
                true = truth.effect(term.name, d, grid)
                inside = (band["lower"].to_numpy() <= true) & (true <= band["upper"].to_numpy())
                hits.setdefault((term.name, dim), []).extend(inside.astype(float))
        z = norm.ppf(0.5 + level / 2.0)
        for d, dim in enumerate(truth.dims):
            value, se = scalar_intercept(fit, dim)
            true = float(trapezoid(truth.effect(intercept, d, dense), dense))
            hits.setdefault(("scalar-intercept", dim), []).append(float(abs(value - true) <= z * se))
    rows = [{"effect": e, "dim": dim, "coverage": float(np.mean(v))} for (e, dim), v in hits.items()]
    return pd.DataFrame(rows, columns=["effect", "dim", "coverage"])


def _fitted_curves(fit: ModelFit, ds: FunDataset, grid) -> np.ndarray:
    """Noise-free fitted curves of every curve on grid, (N, D, G)"""
    out = np.zeros((ds.n_curves, len(fit.dims), len(grid)))
    cache: Dict[tuple, np.ndarray] = {}
    for i, curve in enumerate(ds.curves):
        key = tuple(curve.covariates.get(c, 0.0) for c in ds.covariate_names)
        if key not in cache:
            frame = pd.DataFrame({c: np.full(len(grid), v) for c, v in zip(ds.covariate_names, key)},
                                 index=range(len(grid)))
            cache[key] = np.stack([
                sum(fit.design.term_matrix(t, frame, grid) @ fit.theta[(t.name, dim)]
                    for t in fit.spec.formula.terms)
                for dim in fit.dims
            ])
        out[i] = cache[key]
    return out


def _random_curves(fit: ModelFit, g: str, grid, n_levels: int) -> np.ndarray:
    """(levels, D, G) predictions; zeros for processes the fit dropped"""
    if g not in fit.rho:
        return np.zeros((n_levels, len(fit.dims), len(grid)))
    basis = fit.spec.bases[g]
    psi = np.stack([basis.at(dim, grid) for dim in fit.dims])        # (D, G, M)
    return np.einsum("dgm,vm->vdg", psi, fit.rho[g])


def replicate_metrics(fit: ModelFit, ds: FunDataset, draw: SimDraw, grid) -> List[Dict]:
    """rrMSE rows for the mean, random effects, fitted curves, eigenfunctions and variances"""
    truth = draw.truth
    grid = np.asarray(grid, dtype=float)
    rows: List[Dict] = []

    def add(component, dim, metric, value):
        rows.append({"component": component, "dim": dim, "metric": metric, "value": value})

    def add_functional(component, true, est):
        add(component, "all", "mrrMSE", mrrmse(true, est, grid))
        for d, dim in enumerate(truth.dims):
            if np.any(true[:, d]):
                add(component, dim, "urrMSE", urrmse(true[:, d], est[:, d], grid))

    mu_true = np.stack([
        np.stack([truth.mean(c.covariates, d, grid) for d in range(len(truth.dims))])
        for c in ds.curves
    ])
    mu_est = _fitted_curves(fit, ds, grid)
    add_functional("mean", mu_true, mu_est)

    y_true, y_est = mu_true.copy(), mu_est.copy()
    codes = {g: ds.level_codes(g) for g in ("B", "C", "E")}
    for g in ("B", "C", "E"):
        n_levels = len(ds.layer(g).levels)
        if g in truth.processes:
            psi = truth.eigenfunctions(g, grid)                          # (M, D, G)
            true_re = np.einsum("mdg,vm->vdg", psi, draw.scores[g])
        else:
            true_re = np.zeros((n_levels, len(truth.dims), len(grid)))
        est_re = _random_curves(fit, g, grid, n_levels)
        y_true += true_re[codes[g]]
        y_est += est_re[codes[g]]
        if np.any(true_re):
            add_functional(f"re:{g}", true_re, est_re)

    add_functional("fitted", y_true, y_est)

    unit = ScalarProduct.unit(truth.dims, grid)
    for g, proc in truth.processes.items():
        true_psi = truth.eigenfunctions(g, grid)
        basis = fit.spec.bases.get(g)
        n_est = basis.truncation if basis is not None else 0
        for m in range(min(proc.m, n_est)):
            est = np.stack([np.interp(grid, basis.grid, basis.functions[m, d])
                            for d in range(len(truth.dims))])
            est = align_sign(est, true_psi[m], unit)
            add(f"psi:{g}{m + 1}", "all", "mrrMSE", mrrmse(true_psi[m], est, grid))
            add(f"nu:{g}{m + 1}", "all", "rrMSE", rrmse_scalar(proc.eigenvalues[m], basis.eigenvalues[m]))

    for dim in truth.dims:
        add("sigma2", dim, "rrMSE", rrmse_scalar(truth.sigma2[dim], fit.spec.sigma2[dim]))
    return rows


# === Harness ===

def scenario_config(config: PipelineConfig, setting: SimSetting, scenario: str) -> PipelineConfig:
    """
    Model specification for a replicate fit.

    A: true FPC counts, B: TV, C: UV, D/E: TV/UV with the alternate scalar
    product, F: true counts under homoscedasticity.
    """
    if scenario not in SCENARIOS:
        raise ConfigError(f"scenario '{scenario}' not in {SCENARIOS}")
    cfg = copy.deepcopy(config)
    truth = setting.truth
    cfg.formula = copy.deepcopy(truth.formula)
    cfg.jobs = 1
    alternate = WeightScheme.UNIT if truth.weights == WeightScheme.INVERSE_ERROR_VARIANCE \
        else WeightScheme.INVERSE_ERROR_VARIANCE
    cfg.step1.weights = alternate if scenario in ("D", "E") else truth.weights
    cfg.step1.fixed_truncation = dict(truth.counts) if scenario in ("A", "F") else None
    if scenario in ("B", "D"):
        cfg.step1.truncation = TruncationCriterion.TV
    elif scenario in ("C", "E"):
        cfg.step1.truncation = TruncationCriterion.UV
    cfg.step2.scedasticity = Scedasticity.HOMOSCEDASTIC if scenario == "F" else Scedasticity.PER_DIMENSION
    return cfg


@dataclass
class ReplicateResult:
    replicate: int
    metrics: List[Dict]
    coverage: pd.DataFrame
    counts: Dict[str, int]


def run_replicate(setting: SimSetting, config: PipelineConfig, scenario: str, i: int) -> ReplicateResult:
    """Simulate, fit and score replicate i with seed setting.seed + i"""
    ds, draw = simulate(setting, setting.seed + i)
    cfg = scenario_config(config, setting, scenario)
    result = FammPipeline(cfg).run(ds)
    grid = np.linspace(0.0, 1.0, cfg.step1.grid_points)
    rows = replicate_metrics(result.fit, ds, draw, grid)
    for r in rows:
        r["replicate"] = i
    cov = coverage([result.fit], setting.truth, cfg.simulation.coverage_level,
                   cfg.simulation.coverage_grid_points)
    cov.insert(0, "replicate", i)
    return ReplicateResult(i, rows, cov, dict(result.step1.truncation))


def run_harness(setting: SimSetting, config: PipelineConfig = None, replicates: int = None,
                jobs: int = None, scenario: str = None) -> MetricReport:
    """
    Run independent replicates, concurrently when jobs > 1.

    Args:
        setting: data setting (seed of replicate i is setting.seed + i)
        config: model configuration; simulation section supplies defaults
        replicates: number of datasets
        jobs: worker threads
        scenario: model specification A-F

    Returns:
        MetricReport with rows in replicate order
    """
    config = config or PipelineConfig.default()
    replicates = config.simulation.replicates if replicates is None else replicates
    jobs = config.jobs if jobs is None else jobs
    scenario = scenario or config.simulation.scenario
    logger.info(f"Simulation {setting.name}/{scenario}: {replicates} replicates, "
                f"{setting.n_curves} curves each, seed {setting.seed}")

    results: List[ReplicateResult] = []
    failed: List[int] = []
    with ThreadPoolExecutor(max_workers=max(jobs, 1)) as executor:
        futures = [executor.submit(run_replicate, setting, config, scenario, i) for i in range(replicates)]
        for i, future in enumerate(tqdm(futures, desc=f"{setting.name}/{scenario}", unit="rep")):
            try:
                results.append(future.result())
            except FammError as e:
                logger.warning(f"Replicate {i} failed: {e}")
                failed.append(i)

    metrics = pd.DataFrame([r for res in results for r in res.metrics], columns=METRIC_COLUMNS)
    cov = pd.concat([res.coverage for res in results], ignore_index=True) if results \
        else pd.DataFrame(columns=COVERAGE_COLUMNS)
    counts = pd.DataFrame(
        [{"replicate": res.replicate, "process": g, "count": m}
         for res in results for g, m in res.counts.items()],
        columns=["replicate", "process", "count"],
    )
    return MetricReport(setting=setting.name, scenario=scenario, seed=setting.seed,
                        metrics=metrics, coverage=cov, fpc_counts=counts, failed=failed)


@dataclass
class SimSummary:
    metrics: pd.DataFrame        # component, dim, metric -> median, q25, q75, iqr, n
    coverage: pd.DataFrame       # effect x dim
    fpc_counts: pd.DataFrame     # process -> median, min, max

    def to_dict(self) -> Dict:
        return {
            "metrics": self.metrics.reset_index().to_dict(orient="records"),
            "coverage": {e: row.to_dict() for e, row in self.coverage.iterrows()},
            "fpc_counts": self.fpc_counts.reset_index().to_dict(orient="records"),
        }


def summarize(report: MetricReport) -> SimSummary:
    """Medians and IQRs per component, coverage table, FPC count ranges"""
    grouped = report.metrics.groupby(["component", "dim", "metric"], sort=True)["value"]
    metrics = pd.DataFrame({
        "median": grouped.median(),
        "q25": grouped.quantile(0.25),
        "q75": grouped.quantile(0.75),
        "n": grouped.size(),
    })
    metrics["iqr"] = metrics["q75"] - metrics["q25"]
    cov = report.coverage.pivot_table(index="effect", columns="dim", values="coverage", aggfunc="mean") \
        if len(report.coverage) else pd.DataFrame()
    counts = report.fpc_counts.groupby("process")["count"].agg(["median", "min", "max"]) \
        if len(report.fpc_counts) else pd.DataFrame(columns=["median", "min", "max"])
    return SimSummary(metrics=metrics, coverage=cov, fpc_counts=counts)
