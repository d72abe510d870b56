"""
Univariate mean fits under working independence and data centering
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .basis import (PenaltyBlock, bspline_design, centering_constraint,
                    difference_penalty, row_tensor, tensor_penalty)
from .config import SmoothingConfig, TermKind, TermSpec
from .errors import ConfigError, DataError
from .fundata import FunDataset
from .plsengine import DesignBlock, PlsFit, PlsProblem, check_identifiability, select_lambda

logger = logging.getLogger(__name__)

PartialPredictor = TermSpec


@dataclass(frozen=True)
class FixedFormula:
    """Additive fixed-effects predictor shared by Step 1 and Step 2"""
    terms: Tuple[PartialPredictor, ...]

    def __post_init__(self):
        kinds = [t.kind for t in self.terms]
        if kinds.count(TermKind.INTERCEPT) != 1:
            raise ConfigError("formula needs exactly one functional intercept")
        names = [t.name for t in self.terms]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate term names in formula: {names}")
        for t in self.terms:
            n_cov = len(t.covariates)
            if t.kind == TermKind.INTERCEPT and n_cov:
                raise ConfigError(f"intercept term '{t.name}' takes no covariates")
            if t.kind in (TermKind.LINEAR, TermKind.SMOOTH) and n_cov != 1:
                raise ConfigError(f"term '{t.name}' needs exactly one covariate")
            if t.kind == TermKind.INTERACTION and n_cov < 2:
                raise ConfigError(f"interaction '{t.name}' needs at least two dummies")

    @classmethod
    def from_terms(cls, terms: Sequence[TermSpec]) -> "FixedFormula":
        return cls(tuple(terms))

    @property
    def covariates(self) -> List[str]:
        seen: List[str] = []
        for t in self.terms:
            seen.extend(c for c in t.covariates if c not in seen)
        return seen

    @property
    def intercept(self) -> PartialPredictor:
        return next(t for t in self.terms if t.kind == TermKind.INTERCEPT)

    def term(self, name: str) -> PartialPredictor:
        for t in self.terms:
            if t.name == name:
                return t
        raise DataError(f"unknown term '{name}'")


@dataclass
class _SmoothEncoder:
    lo: float
    hi: float
    Z: np.ndarray        # sum-to-zero reparameterization


class FormulaDesign:
    """
    Turns a FixedFormula into design blocks.

    Covariate ranges and centering constraints of smooth terms are fixed once
    from the curve-level covariates, so every stage encodes identically.
    """

    def __init__(self, formula: FixedFormula, ds: FunDataset):
        self.formula = formula
        missing = [c for c in formula.covariates if c not in ds.covariate_names]
        if missing:
            raise DataError(f"formula covariates missing in data: {missing}")

        self._smooth: Dict[str, _SmoothEncoder] = {}
        for term in formula.terms:
            x = np.array([c.covariates[c_name] for c in ds.curves for c_name in term.covariates])
            if term.kind == TermKind.INTERACTION:
                bad = ~np.isin(x, (0.0, 1.0))
                if bad.any():
                    raise DataError(f"interaction '{term.name}' needs 0/1 dummies")
            if term.kind == TermKind.SMOOTH:
                lo, hi = float(x.min()), float(x.max())
                if hi <= lo:
                    raise DataError(f"smooth term '{term.name}': covariate is constant")
                raw = bspline_design(term.x_basis, (x - lo) / (hi - lo))
                self._smooth[term.name] = _SmoothEncoder(lo, hi, centering_constraint(raw))

    def x_matrix(self, term: PartialPredictor, covariates: pd.DataFrame) -> np.ndarray:
        """Marginal covariate basis, one row per observation"""
        n = len(covariates)
        if term.kind == TermKind.INTERCEPT:
            return np.ones((n, 1))
        missing = [c for c in term.covariates if c not in covariates.columns]
        if missing:
            raise DataError(f"covariates missing at prediction time: {missing}")
        if term.kind == TermKind.SMOOTH:
            enc = self._smooth[term.name]
            x = covariates[term.covariates[0]].to_numpy(dtype=float)
            xs = np.clip((x - enc.lo) / (enc.hi - enc.lo), 0.0, 1.0)
            return bspline_design(term.x_basis, xs) @ enc.Z
        x = np.prod(covariates[term.covariates].to_numpy(dtype=float), axis=1)
        return x[:, None]

    def penalties(self, term: PartialPredictor) -> List[Tuple[PenaltyBlock, str]]:
        """Marginal pieces of the Kronecker-sum penalty with their lambda suffix"""
        Pt = difference_penalty(term.t_basis.num_basis, term.t_basis.penalty_order)
        if term.kind != TermKind.SMOOTH:
            return [(Pt, "t")]
        Z = self._smooth[term.name].Z
        raw = difference_penalty(term.x_basis.num_basis, term.x_basis.penalty_order).matrix
        zpz = Z.T @ raw @ Z
        Px = PenaltyBlock(matrix=0.5 * (zpz + zpz.T), rank=int(np.linalg.matrix_rank(zpz)))
        return [
            (tensor_penalty(Px, Pt, 1.0, 0.0), "x"),
            (tensor_penalty(Px, Pt, 0.0, 1.0), "t"),
        ]

    def term_matrix(self, term: PartialPredictor, covariates: pd.DataFrame, t) -> np.ndarray:
        return row_tensor(self.x_matrix(term, covariates), bspline_design(term.t_basis, t))

    def blocks(self, frame: pd.DataFrame, dim: str) -> List[DesignBlock]:
        """Design blocks of one dimension for the rows of frame"""
        t = frame["t"].to_numpy(dtype=float)
        out = []
        for term in self.formula.terms:
            out.append(DesignBlock(
                name=block_name(dim, term.name),
                matrix=self.term_matrix(term, frame, t),
                penalties=tuple((P, f"{block_name(dim, term.name)}:{s}") for P, s in self.penalties(term)),
            ))
        return out

    def effect_rows(self, term: PartialPredictor, grid, x: Optional[float] = None) -> np.ndarray:
        """
        Design rows evaluating one partial predictor on a grid.

        Linear and interaction terms are evaluated at x = 1 (the coefficient
        function); smooth terms need the covariate value x.
        """
        grid = np.asarray(grid, dtype=float)
        if term.kind == TermKind.SMOOTH:
            if x is None:
                raise DataError(f"smooth term '{term.name}' needs a covariate value")
            cov = pd.DataFrame({term.covariates[0]: np.full(grid.size, float(x))})
        else:
            cov = pd.DataFrame({c: np.ones(grid.size) for c in term.covariates}, index=range(grid.size))
        return self.term_matrix(term, cov, grid)


def block_name(dim: str, term: str) -> str:
    return f"{term}@{dim}"


@dataclass
class MeanFit:
    """Per-dimension working-independence mean fits"""
    fits: Dict[str, PlsFit]
    formula: FixedFormula
    design: FormulaDesign
    grid: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 1.0, 101))

    def predict(self, ds: FunDataset) -> np.ndarray:
        """Mean at every observation, aligned with ds.long_frame"""
        frame = ds.long_frame
        out = np.zeros(len(frame))
        for dim, rows in frame.groupby("dim", sort=False):
            if dim not in self.fits:
                raise DataError(f"no mean fit for dimension '{dim}'")
            fit = self.fits[dim]
            for block in self.design.blocks(rows, dim):
                out[rows.index.to_numpy()] += block.matrix @ fit.block_coef(block.name)
        return out

    def effect(self, term: str, dim: str, grid=None, x: Optional[float] = None) -> np.ndarray:
        grid = self.grid if grid is None else grid
        spec = self.formula.term(term)
        coef = self.fits[dim].block_coef(block_name(dim, term))
        return self.design.effect_rows(spec, grid, x) @ coef

    def to_dict(self) -> Dict:
        return {dim: fit.to_dict() for dim, fit in self.fits.items()}


def fit_dimension(ds: FunDataset, design: FormulaDesign, dim: str,
                   smoothing: SmoothingConfig) -> PlsFit:
    frame = ds.long_frame
    rows = frame[frame["dim"] == dim]
    if rows.empty:
        raise DataError(f"dimension '{dim}' has no observations")
    problem = PlsProblem(rows["y"].to_numpy(dtype=float), design.blocks(rows, dim))
    check_identifiability(problem)
    fit = select_lambda(problem, smoothing.criterion, smoothing)
    logger.info(f"Mean fit '{dim}': n={problem.n_obs}, edf={fit.edf:.2f}, scale={fit.scale:.4g}")
    return fit


def fit_univariate_means(ds: FunDataset, formula: FixedFormula,
                         smoothing: SmoothingConfig = None, jobs: int = 1) -> MeanFit:
    """
    Fit every dimension separately, treating all observations as independent.

    Args:
        ds: dataset
        formula: fixed-effects formula (also used for the final model)
        smoothing: lambda search settings
        jobs: dimensions fitted concurrently

    Returns:
        MeanFit with one PlsFit per dimension
    """
    smoothing = smoothing or SmoothingConfig()
    design = FormulaDesign(formula, ds)
    ds.long_frame  # build the cached frame before worker threads read it

    if jobs > 1 and len(ds.dims) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            futures = {d: executor.submit(fit_dimension, ds, design, d, smoothing) for d in ds.dims}
            fits = {d: futures[d].result() for d in ds.dims}
    else:
        fits = {d: fit_dimension(ds, design, d, smoothing) for d in ds.dims}
    return MeanFit(fits=fits, formula=formula, design=design)


def center(ds: FunDataset, m: MeanFit) -> FunDataset:
    """Residuals y - mu_hat with the structure of ds"""
    missing = [c for c in m.formula.covariates if c not in ds.covariate_names]
    if missing:
        raise DataError(f"covariates missing at prediction time: {missing}")
    y = ds.long_frame["y"].to_numpy(dtype=float)
    return ds.replace_values(y - m.predict(ds))
