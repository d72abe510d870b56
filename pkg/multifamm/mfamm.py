"""
Final multivariate functional additive mixed model

Fixed effects use per-dimension tensor-spline blocks; each random process
enters through its selected multivariate eigenfunctions with scores penalized
by the inverse eigenvalues.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.linalg import block_diag
from scipy.stats import norm

from .basis import PenaltyBlock, bspline_design
from .config import Scedasticity, SmoothingConfig
from .errors import DataError
from .fpca import trapezoid_weights
from .fundata import FunDataset
from .meanstage import FixedFormula, FormulaDesign, fit_dimension, block_name
from .mfpca import MultiEigenBasis
from .plsengine import (DesignBlock, PlsFit, PlsProblem, check_identifiability,
                        pointwise_se, select_lambda)

logger = logging.getLogger(__name__)


@dataclass
class ModelSpec:
    """Everything the final fit needs besides the data"""
    formula: FixedFormula
    bases: Dict[str, MultiEigenBasis] = field(default_factory=dict)   # layer order, truncated
    sigma2: Dict[str, float] = field(default_factory=dict)           # from covariance smoothing
    scedasticity: Scedasticity = Scedasticity.PER_DIMENSION
    layers: Optional[List[str]] = None                               # None = every basis
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)

    def active(self) -> List[Tuple[str, MultiEigenBasis]]:
        """Processes entering the design (M_g > 0)"""
        names = list(self.bases) if self.layers is None else self.layers
        missing = [g for g in names if g not in self.bases]
        if missing:
            raise DataError(f"no eigenbasis for layers {missing}")
        return [(g, self.bases[g]) for g in names if self.bases[g].truncation > 0]


def _embed(matrix: np.ndarray, rows: np.ndarray, n: int) -> sparse.csr_matrix:
    coo = sparse.coo_matrix(matrix)
    return sparse.csr_matrix((coo.data, (rows[coo.row], coo.col)), shape=(n, matrix.shape[1]))


def _random_block(ds: FunDataset, g: str, basis: MultiEigenBasis) -> DesignBlock:
    frame = ds.long_frame
    n = len(frame)
    V, M = len(ds.layer(g).levels), basis.truncation
    if basis.grid[0] > 0.0 or basis.grid[-1] < 1.0:
        raise DataError(f"eigenfunction grid of '{g}' does not cover [0, 1]")
    missing = [d for d in ds.dims if d not in basis.dims]
    if missing:
        raise DataError(f"eigenbasis of '{g}' lacks dimensions {missing}")

    psi = np.zeros((n, M))
    for dim, rows in frame.groupby("dim", sort=False):
        psi[rows.index.to_numpy()] = basis.at(dim, rows["t"].to_numpy(dtype=float))
    codes = frame[f"lvl:{g}"].to_numpy(dtype=int)
    r = np.repeat(np.arange(n), M)
    c = (codes[:, None] * M + np.arange(M)[None, :]).ravel()
    X = sparse.csr_matrix((psi.ravel(), (r, c)), shape=(n, V * M))
    P = np.kron(np.eye(V), np.diag(1.0 / basis.selected_eigenvalues()))
    return DesignBlock(name=f"re:{g}", matrix=X, penalties=((PenaltyBlock(P, V * M), f"re:{g}"),))


def assemble(ds: FunDataset, spec: ModelSpec, design: FormulaDesign = None) -> PlsProblem:
    """
    Stacked design over dimensions, curves and points.

    Returns:
        PlsProblem with per-dimension fixed blocks, one random block per active
        process and weights 1/sigma2_d (per-dimension scedasticity)
    """
    design = design or FormulaDesign(spec.formula, ds)
    frame = ds.long_frame
    n = len(frame)
    if n == 0:
        raise DataError("empty design: dataset has no observations")

    blocks = []
    for dim, rows in frame.groupby("dim", sort=False):
        idx = rows.index.to_numpy()
        for blk in design.blocks(rows, dim):
            blocks.append(DesignBlock(blk.name, _embed(blk.matrix, idx, n), blk.penalties))
    for g, basis in spec.active():
        blocks.append(_random_block(ds, g, basis))

    if spec.scedasticity == Scedasticity.PER_DIMENSION:
        missing = [d for d in ds.dims if d not in spec.sigma2]
        if missing:
            raise DataError(f"no error variance for dimensions {missing}")
        weights = frame["dim"].map(lambda d: 1.0 / spec.sigma2[d]).to_numpy(dtype=float)
    else:
        weights = np.ones(n)
    return PlsProblem(frame["y"].to_numpy(dtype=float), blocks, weights)


@dataclass
class ModelFit:
    """Fitted multiFAMM"""
    spec: ModelSpec
    design: FormulaDesign
    dims: Tuple[str, ...]
    theta: Dict[Tuple[str, str], np.ndarray]              # (term, dim) -> coefficients
    rho: Dict[str, np.ndarray]                            # process -> (levels x M_g)
    levels: Dict[str, Tuple[str, ...]]
    lambdas: Dict[str, float]
    components: List[PlsFit]                              # one joint fit, or one per dimension
    block_owner: Dict[str, int]                           # block name -> index into components
    sigma_hat: Dict[str, float]
    fitted: np.ndarray                                    # aligned with ds.long_frame
    response: np.ndarray
    obs_dims: np.ndarray

    @property
    def coef_covariance(self) -> np.ndarray:
        return block_diag(*[c.coef_covariance for c in self.components])

    def to_dict(self) -> Dict:
        return {
            "dims": list(self.dims),
            "theta": {block_name(d, t): v.tolist() for (t, d), v in self.theta.items()},
            "rho": {
                g: {lvl: r.tolist() for lvl, r in zip(self.levels[g], self.rho[g])}
                for g in self.rho
            },
            "lambdas": dict(self.lambdas),
            "sigma_hat": dict(self.sigma_hat),
            "sigma2_weights": dict(self.spec.sigma2),
            "scedasticity": self.spec.scedasticity.value,
            "eigenbases": {g: b.to_dict() for g, b in self.spec.bases.items()},
            "edf": [c.edf for c in self.components],
        }


def _sum_to_zero(coef: np.ndarray, slices: Dict[str, slice], spec: ModelSpec,
                 dims: Tuple[str, ...], active) -> np.ndarray:
    """Center scores over levels and move the removed mean into the intercepts"""
    coef = coef.copy()
    intercept = spec.formula.intercept
    for g, basis in active:
        M = basis.truncation
        rho = coef[slices[f"re:{g}"]].reshape(-1, M)
        shift = rho.mean(axis=0)
        coef[slices[f"re:{g}"]] = (rho - shift).ravel()

        B = bspline_design(intercept.t_basis, basis.grid)
        for dim in dims:
            d = basis.dims.index(dim)
            curve = shift @ basis.functions[:M, d, :]
            delta, *_ = np.linalg.lstsq(B, curve, rcond=None)
            coef[slices[block_name(dim, intercept.name)]] += delta
    return coef


def fit(ds: FunDataset, spec: ModelSpec) -> ModelFit:
    """
    Fit the final model and apply the sum-to-zero constraint on scores.

    Without active random processes the criterion separates by dimension and
    each dimension is fitted exactly as in the mean stage.
    """
    design = FormulaDesign(spec.formula, ds)
    frame = ds.long_frame
    y = frame["y"].to_numpy(dtype=float)
    obs_dims = frame["dim"].to_numpy()
    active = spec.active()

    if not active:
        components = [fit_dimension(ds, design, d, spec.smoothing) for d in ds.dims]
        owner = {name: i for i, c in enumerate(components) for name in c.block_slices}
        fitted = np.zeros(len(frame))
        for i, dim in enumerate(ds.dims):
            fitted[obs_dims == dim] = components[i].fitted
        coefs = {name: components[owner[name]].block_coef(name) for name in owner}
        rho, levels = {}, {}
        lambdas = {k: v for c in components for k, v in c.lambdas.items()}
    else:
        problem = assemble(ds, spec, design)
        check_identifiability(problem)
        pls = select_lambda(problem, spec.smoothing.criterion, spec.smoothing)
        coef = _sum_to_zero(pls.coefficients, problem.block_slices, spec, ds.dims, active)
        pls.coefficients = coef
        fitted = np.asarray(problem.design() @ coef).ravel()
        pls.fitted = fitted
        components = [pls]
        owner = {name: 0 for name in problem.block_slices}
        coefs = {name: coef[sl] for name, sl in problem.block_slices.items()}
        rho = {g: coefs[f"re:{g}"].reshape(-1, b.truncation) for g, b in active}
        levels = {g: ds.layer(g).levels for g, _ in active}
        lambdas = dict(pls.lambdas)
        logger.info(f"Final model: {problem.n_obs} obs, {problem.n_coef} coefficients, edf={pls.edf:.1f}")

    theta = {(t.name, d): coefs[block_name(d, t.name)] for d in ds.dims for t in spec.formula.terms}
    resid = y - fitted
    sigma_hat = {d: float(np.mean(resid[obs_dims == d] ** 2)) for d in ds.dims}
    return ModelFit(
        spec=spec, design=design, dims=tuple(ds.dims), theta=theta, rho=rho, levels=levels,
        lambdas=lambdas, components=components, block_owner=owner, sigma_hat=sigma_hat,
        fitted=fitted, response=y, obs_dims=obs_dims,
    )


def _effect_rows(fit: ModelFit, term: str, d: str, grid, x: Optional[float]):
    if d not in fit.dims:
        raise DataError(f"unknown dimension '{d}'")
    spec = fit.spec.formula.term(term)
    name = block_name(d, term)
    comp = fit.components[fit.block_owner[name]]
    rows = fit.design.effect_rows(spec, grid, x)
    full = np.zeros((rows.shape[0], comp.coefficients.size))
    full[:, comp.block_slices[name]] = rows
    return full, comp


def effect_estimates(fit: ModelFit, term: str, d: str, grid=None,
                     x: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Partial predictor f_term^(d) on grid with pointwise standard errors"""
    grid = np.linspace(0.0, 1.0, 100) if grid is None else np.asarray(grid, dtype=float)
    full, comp = _effect_rows(fit, term, d, grid, x)
    return full @ comp.coefficients, pointwise_se(comp, full)


def scalar_intercept(fit: ModelFit, d: str, grid=None) -> Tuple[float, float]:
    """Integral of the functional intercept over [0, 1] with its standard error"""
    grid = np.linspace(0.0, 1.0, 101) if grid is None else np.asarray(grid, dtype=float)
    full, comp = _effect_rows(fit, fit.spec.formula.intercept.name, d, grid, None)
    row = trapezoid_weights(grid) @ full
    return float(row @ comp.coefficients), float(pointwise_se(comp, row[None, :])[0])


def confidence_band(fit: ModelFit, term: str, d: str, grid=None, level: float = 0.95,
                    x: Optional[float] = None) -> pd.DataFrame:
    """Estimate with pointwise band value +- z * se"""
    grid = np.linspace(0.0, 1.0, 100) if grid is None else np.asarray(grid, dtype=float)
    value, se = effect_estimates(fit, term, d, grid, x)
    z = norm.ppf(0.5 + level / 2.0)
    return pd.DataFrame({
        "t": grid, "value": value, "se": se,
        "lower": value - z * se, "upper": value + z * se,
    })


def random_effect_curves(fit: ModelFit, g: str, v: str, d: str, grid=None) -> np.ndarray:
    """Predicted random effect of level v of process g on dimension d"""
    if g not in fit.rho:
        raise DataError(f"process '{g}' is not in the fitted model")
    if v not in fit.levels[g]:
        raise DataError(f"unknown level '{v}' of '{g}'")
    basis = fit.spec.bases[g]
    grid = basis.grid if grid is None else np.asarray(grid, dtype=float)
    scores = fit.rho[g][fit.levels[g].index(v)]
    return basis.at(d, grid) @ scores


def predictor_variance(fit: ModelFit, ds: FunDataset) -> pd.DataFrame:
    """
    Variance of every partial predictor at the observation points.

    Rows: dimensions; columns: terms and random processes plus their shares.
    """
    frame = ds.long_frame
    out = []
    for dim, rows in frame.groupby("dim", sort=False):
        t = rows["t"].to_numpy(dtype=float)
        parts: Dict[str, np.ndarray] = {}
        for term in fit.spec.formula.terms:
            parts[term.name] = fit.design.term_matrix(term, rows, t) @ fit.theta[(term.name, dim)]
        for g, rho in fit.rho.items():
            psi = fit.spec.bases[g].at(dim, t)
            codes = rows[f"lvl:{g}"].to_numpy(dtype=int)
            parts[g] = np.sum(psi * rho[codes], axis=1)
        var = {k: float(np.var(v)) for k, v in parts.items()}
        total = sum(var.values())
        row = {"dim": dim, **var}
        row.update({f"share:{k}": (v / total if total > 0 else 0.0) for k, v in var.items()})
        out.append(row)
    return pd.DataFrame(out).set_index("dim")


def residual_urrmse(fit: ModelFit) -> Dict[str, float]:
    """Relative fit error sqrt(sum (y - fitted)^2 / sum y^2) per dimension"""
    out = {}
    for d in fit.dims:
        mask = fit.obs_dims == d
        denom = float(np.sum(fit.response[mask] ** 2))
        out[d] = float(np.sqrt(np.sum((fit.response[mask] - fit.fitted[mask]) ** 2) / denom)) \
            if denom > 0 else 0.0
    return out
