"""
multiFAMM - multivariate functional additive mixed models

Usage:
    from multifamm import PipelineConfig, FammPipeline, load_dataset
    config = PipelineConfig.from_file("data/toy/config.json")
    ds = load_dataset(config.data.points_file, config.data.meta_file, config.data.layers)
    result = FammPipeline(config).run(ds)
"""

from .errors import (
    FammError, ConfigError, DataError, DomainError,
    NumericError, SingularSystemError, RankDeficiencyError
)
from .config import (
    PipelineConfig, SmoothingConfig, Step1Config, Step2Config, DataConfig,
    CoarsenConfig, SimulationConfig, LayerSpec, TermSpec,
    SmoothingCriterion, TruncationCriterion, Scedasticity, WeightScheme,
    LayerKind, TermKind, ScoreMode
)
from .basis import SplineSpec, PenaltyBlock, bspline_design, difference_penalty, row_tensor, tensor_penalty
from .fundata import FunCurve, FunDataset, GroupingLayer, build_dataset, load_dataset, write_dataset, validate
from .plsengine import DesignBlock, PlsProblem, PlsFit, solve_fixed_lambda, select_lambda
from .meanstage import FixedFormula, MeanFit, fit_univariate_means, center
from .covsmooth import CrossproductTable, CovarianceModel, build_crossproducts, smooth_covariance, evaluate_surface
from .fpca import UniEigenSet, ScoreMatrix, univariate_fpca, predict_scores
from .mfpca import ScalarProduct, MultiEigenBasis, VarianceTable, mfpca, select_truncation, variance_table
from .mfamm import (
    ModelSpec, ModelFit, assemble, fit, effect_estimates, confidence_band,
    random_effect_curves, predictor_variance, residual_urrmse
)
from .coarsen import Polyline, StopRule, CoarsenResult, coarsen, coarsen_frame, coarsen_dataset
from .models import Step1Result, PipelineResult
from .pipeline import FammPipeline
from .simeval import (
    SimSetting, SimTruth, MetricReport, simulate, setting_preset,
    rrmse_scalar, urrmse, mrrmse, align_sign, coverage, run_harness, summarize
)

__version__ = "0.1.0"

__all__ = [
    # Errors
    'FammError', 'ConfigError', 'DataError', 'DomainError',
    'NumericError', 'SingularSystemError', 'RankDeficiencyError',
    # Config
    'PipelineConfig', 'SmoothingConfig', 'Step1Config', 'Step2Config', 'DataConfig',
    'CoarsenConfig', 'SimulationConfig', 'LayerSpec', 'TermSpec',
    'SmoothingCriterion', 'TruncationCriterion', 'Scedasticity', 'WeightScheme',
    'LayerKind', 'TermKind', 'ScoreMode',
    # Data and bases
    'SplineSpec', 'PenaltyBlock', 'bspline_design', 'difference_penalty', 'row_tensor', 'tensor_penalty',
    'FunCurve', 'FunDataset', 'GroupingLayer', 'build_dataset', 'load_dataset', 'write_dataset', 'validate',
    # Estimation
    'DesignBlock', 'PlsProblem', 'PlsFit', 'solve_fixed_lambda', 'select_lambda',
    'FixedFormula', 'MeanFit', 'fit_univariate_means', 'center',
    'CrossproductTable', 'CovarianceModel', 'build_crossproducts', 'smooth_covariance', 'evaluate_surface',
    'UniEigenSet', 'ScoreMatrix', 'univariate_fpca', 'predict_scores',
    'ScalarProduct', 'MultiEigenBasis', 'VarianceTable', 'mfpca', 'select_truncation', 'variance_table',
    'ModelSpec', 'ModelFit', 'assemble', 'fit', 'effect_estimates', 'confidence_band',
    'random_effect_curves', 'predictor_variance', 'residual_urrmse',
    # Coarsening
    'Polyline', 'StopRule', 'CoarsenResult', 'coarsen', 'coarsen_frame', 'coarsen_dataset',
    # Main
    'Step1Result', 'PipelineResult', 'FammPipeline',
    # Simulation
    'SimSetting', 'SimTruth', 'MetricReport', 'simulate', 'setting_preset',
    'rrmse_scalar', 'urrmse', 'mrrmse', 'align_sign', 'coverage', 'run_harness', 'summarize',
]
