"""
multiFAMM result models
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List

import numpy as np

from .covsmooth import CovarianceModel, CrossproductTable
from .fpca import ScoreMatrix, UniEigenSet
from .fundata import FunDataset, ValidationReport
from .meanstage import MeanFit
from .mfamm import ModelFit
from .mfpca import MultiEigenBasis, ScalarProduct, VarianceTable


@dataclass
class Step1Result:
    """Everything estimated before the final model"""
    mean_fit: MeanFit
    centered: FunDataset
    crossproducts: Dict[str, CrossproductTable]
    covariance: CovarianceModel
    eigensets: Dict[tuple, UniEigenSet]            # (process, dim) -> eigenset
    scores: Dict[str, ScoreMatrix]
    scalar_product: ScalarProduct
    bases: Dict[str, MultiEigenBasis]              # truncated, layer order
    truncation: Dict[str, int]
    variance: VarianceTable

    @property
    def n_fpcs(self) -> int:
        return int(sum(self.truncation.values()))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mean_fit": self.mean_fit.to_dict(),
            "covariance": self.covariance.to_dict(),
            "univariate_eigenvalues": {
                f"{g}|{d}": es.eigenvalues.tolist() for (g, d), es in self.eigensets.items()
            },
            "scalar_product": self.scalar_product.to_dict(),
            "bases": {g: b.to_dict() for g, b in self.bases.items()},
            "truncation": dict(self.truncation),
            "total_variation": self.variance.total,
        }


@dataclass
class StageTiming:
    stage: str
    seconds: float

    def to_dict(self) -> Dict[str, Any]:
        return {"stage": self.stage, "seconds": round(self.seconds, 3)}


@dataclass
class PipelineResult:
    """Outcome of one full fit"""
    validation: ValidationReport
    step1: Step1Result
    fit: ModelFit
    timings: List[StageTiming] = field(default_factory=list)

    @property
    def total_seconds(self) -> float:
        return float(np.sum([t.seconds for t in self.timings]))

    def summary(self) -> Dict[str, Any]:
        return {
            "n_curves": self.validation.n_curves,
            "n_observations": self.validation.n_observations,
            "truncation": dict(self.step1.truncation),
            "explained_share": self.step1.variance.explained,
            "sigma2": dict(self.step1.covariance.sigma2),
            "sigma_hat": dict(self.fit.sigma_hat),
        }
