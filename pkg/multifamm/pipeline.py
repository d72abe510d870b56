"""
multiFAMM pipeline (Step 1 -> Step 2)

Usage:
    from multifamm.pipeline import FammPipeline
    result = FammPipeline(config).run(ds)
"""

import logging
import time
from contextlib import contextmanager
from typing import Dict, List, Optional

import numpy as np

from .config import PipelineConfig, WeightScheme
from .covsmooth import build_crossproducts, evaluate_surface, smooth_covariance
from .errors import ConfigError, DataError
from .fpca import UniEigenSet, predict_scores, univariate_fpca
from .fundata import FunDataset, validate
from .meanstage import FixedFormula, center, fit_univariate_means
from .mfamm import ModelFit, ModelSpec, fit
from .mfpca import MultiEigenBasis, ScalarProduct, mfpca, select_truncation, variance_table
from .models import PipelineResult, StageTiming, Step1Result

logger = logging.getLogger(__name__)


def empty_basis(process: str, sp: ScalarProduct) -> MultiEigenBasis:
    return MultiEigenBasis(
        process=process, dims=tuple(sp.dims), grid=sp.grid.copy(),
        functions=np.zeros((0, len(sp.dims), sp.grid.size)),
        eigenvalues=np.zeros(0), weights=sp.weights.copy(),
    )


class FammPipeline:
    """Two-step multiFAMM estimation"""

    def __init__(self, config: PipelineConfig = None):
        self.config = config or PipelineConfig.default()
        self.formula = FixedFormula.from_terms(self.config.formula)
        self.timings: List[StageTiming] = []

    @contextmanager
    def _stage(self, name: str):
        logger.info(f"▶ Starting: {name}")
        start = time.time()
        yield
        elapsed = time.time() - start
        self.timings.append(StageTiming(name, elapsed))
        logger.info(f"✅ Completed: {name} ({elapsed:.1f}s)")

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.config.step1.grid_points)

    def scalar_product(self, dims, sigma2: Dict[str, float]) -> ScalarProduct:
        scheme = self.config.step1.weights
        if scheme == WeightScheme.UNIT:
            weights = np.ones(len(dims))
        elif scheme == WeightScheme.INVERSE_ERROR_VARIANCE:
            weights = np.array([1.0 / sigma2[d] for d in dims])
        else:
            weights = np.asarray(self.config.step1.explicit_weights, dtype=float)
            if weights.size != len(dims):
                raise ConfigError(f"{weights.size} explicit weights for {len(dims)} dimensions")
        return ScalarProduct(tuple(dims), weights, self.grid)

    def _truncate(self, bases: Dict[str, MultiEigenBasis], sigma2, sp) -> Dict[str, int]:
        cfg = self.config.step1
        if cfg.fixed_truncation is not None:
            unknown = sorted(set(cfg.fixed_truncation) - set(bases))
            if unknown:
                raise ConfigError(f"fixed_truncation names unknown processes {unknown}")
            counts = {g: min(int(cfg.fixed_truncation.get(g, 0)), b.n_total) for g, b in bases.items()}
            logger.info(f"Truncation fixed by configuration: {counts}")
            return counts
        return select_truncation(bases, sigma2, sp, cfg.truncation, cfg.level)

    def run_step1(self, ds: FunDataset) -> Step1Result:
        cfg = self.config
        jobs = cfg.jobs

        # 1. Univariate mean fits and centering
        with self._stage("mean fits"):
            mean_fit = fit_univariate_means(ds, self.formula, cfg.mean_smoothing, jobs)
            centered = center(ds, mean_fit)

        # 2. Covariance smoothing
        with self._stage("covariance smoothing"):
            tables = build_crossproducts(centered)
            cov = smooth_covariance(tables, cfg.step1.cov_basis, cfg.cov_smoothing,
                                    ds.curve_layer.name, jobs)

        # 3. Univariate FPCA and scores
        with self._stage("univariate FPCA"):
            eigensets: Dict[tuple, UniEigenSet] = {}
            for g in cov.processes:
                for d in ds.dims:
                    K = evaluate_surface(cov, g, d, self.grid)
                    eigensets[(g, d)] = univariate_fpca(K, self.grid, g, d, cfg.step1.eigen_tol)
            scores = predict_scores(centered, eigensets.values(), cov)

        # 4. Multivariate FPCA, truncation, variance table
        with self._stage("multivariate FPCA"):
            sp = self.scalar_product(ds.dims, cov.sigma2)
            bases: Dict[str, MultiEigenBasis] = {}
            for g in cov.processes:
                if g in scores and len(scores[g].levels) >= 2 and np.any(scores[g].values):
                    per_dim = {d: es for (pg, d), es in eigensets.items() if pg == g}
                    bases[g] = mfpca(scores[g], per_dim, sp, cfg.step1.eigen_tol)
                else:
                    logger.warning(f"Process '{g}' has no usable scores; dropped")
                    bases[g] = empty_basis(g, sp)

            truncation = self._truncate(bases, cov.sigma2, sp)
            bases = {g: b.truncated(truncation[g]) for g, b in bases.items()}
            table = variance_table(bases, cov.sigma2, sp)

        logger.info(f"Variance components (total {table.total:.4g}):\n{table.format()}")
        return Step1Result(
            mean_fit=mean_fit, centered=centered, crossproducts=tables, covariance=cov,
            eigensets=eigensets, scores=scores, scalar_product=sp, bases=bases,
            truncation=truncation, variance=table,
        )

    def model_spec(self, step1: Step1Result) -> ModelSpec:
        return ModelSpec(
            formula=self.formula,
            bases=step1.bases,
            sigma2=dict(step1.covariance.sigma2),
            scedasticity=self.config.step2.scedasticity,
            smoothing=self.config.mean_smoothing,
        )

    def run_step2(self, ds: FunDataset, step1: Step1Result) -> ModelFit:
        with self._stage("final model"):
            return fit(ds, self.model_spec(step1))

    def run(self, ds: FunDataset) -> PipelineResult:
        self.timings = []
        report = validate(ds)
        for w in report.warnings:
            logger.warning(w)
        if report.n_curves == 0:
            raise DataError("dataset contains no curves")

        step1 = self.run_step1(ds)
        model = self.run_step2(ds, step1)
        return PipelineResult(validation=report, step1=step1, fit=model, timings=list(self.timings))
