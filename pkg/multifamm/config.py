"""
multiFAMM pipeline configuration
"""

import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from dotenv import load_dotenv

from .basis import SplineSpec
from .errors import ConfigError


class SmoothingCriterion(Enum):
    """Smoothing-parameter selection criterion"""
    GCV = "GCV"
    REML = "REML"      # Laplace REML with profiled scale


class TruncationCriterion(Enum):
    """How many multivariate FPCs to keep"""
    TV = "TV"          # share of total variation
    UV = "UV"          # share of variation on every dimension


class Scedasticity(Enum):
    HOMOSCEDASTIC = "homoscedastic"
    PER_DIMENSION = "per-dimension"


class WeightScheme(Enum):
    """Weights w_d of the multivariate scalar product"""
    UNIT = "unit"
    INVERSE_ERROR_VARIANCE = "inverse-error-variance"
    EXPLICIT = "explicit"


class LayerKind(Enum):
    CROSSED = "crossed"
    NESTED = "nested"
    CURVE = "curve"


class TermKind(Enum):
    """Partial predictor types of the fixed-effects formula"""
    INTERCEPT = "functional-intercept"
    LINEAR = "linear"              # x * f(t)
    SMOOTH = "smooth"              # f(x, t)
    INTERACTION = "interaction"    # product of 0/1 dummies * f(t)


class ScoreMode(Enum):
    CENTERED = "centered-decorrelated"
    RAW = "raw-iid"


def _enum(enum_cls, value, key: str):
    if isinstance(value, enum_cls):
        return value
    try:
        return enum_cls(value)
    except ValueError:
        allowed = [e.value for e in enum_cls]
        raise ConfigError(f"{key}: '{value}' is not one of {allowed}") from None


def _check_keys(data: Dict[str, Any], cls, where: str, required: Sequence[str] = ()):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    missing = [k for k in required if k not in data]
    if missing:
        raise ConfigError(f"{where}: missing keys {missing}")


def _spline(data, where: str) -> SplineSpec:
    if data is None or isinstance(data, SplineSpec):
        return data
    _check_keys(data, SplineSpec, where)
    try:
        return SplineSpec(**data)
    except TypeError as e:
        raise ConfigError(f"{where}: {e}") from None


@dataclass
class LayerSpec:
    """Grouping layer read from the meta file"""
    name: str
    kind: LayerKind = LayerKind.CROSSED
    parent: Optional[str] = None                  # required for nested layers

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "kind": self.kind.value, "parent": self.parent}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LayerSpec":
        _check_keys(data, cls, "layers[]", required=("name",))
        kind = _enum(LayerKind, data.get("kind", "crossed"), "layers[].kind")
        if kind == LayerKind.NESTED and not data.get("parent"):
            raise ConfigError(f"nested layer '{data.get('name')}' needs a parent")
        return cls(name=data["name"], kind=kind, parent=data.get("parent"))


@dataclass
class TermSpec:
    """One partial predictor of the fixed-effects formula"""
    name: str
    kind: TermKind
    covariates: List[str] = field(default_factory=list)
    t_basis: SplineSpec = field(default_factory=lambda: SplineSpec(3, 8, 2))
    x_basis: Optional[SplineSpec] = None          # smooth terms only

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "kind": self.kind.value,
            "covariates": list(self.covariates),
            "t_basis": self.t_basis.to_dict(),
            "x_basis": self.x_basis.to_dict() if self.x_basis else None,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TermSpec":
        _check_keys(data, cls, "formula[]", required=("name", "kind"))
        kind = _enum(TermKind, data["kind"], "formula[].kind")
        term = cls(
            name=data["name"],
            kind=kind,
            covariates=list(data.get("covariates", [])),
            t_basis=_spline(data.get("t_basis"), "formula[].t_basis") or SplineSpec(3, 8, 2),
            x_basis=_spline(data.get("x_basis"), "formula[].x_basis"),
        )
        if kind == TermKind.SMOOTH and term.x_basis is None:
            term.x_basis = SplineSpec(3, 8, 2)
        return term


@dataclass
class SmoothingConfig:
    """Smoothing-parameter search"""
    criterion: SmoothingCriterion = SmoothingCriterion.GCV
    lambda_min: float = 1e-4
    lambda_max: float = 1e6
    lambda_grid_points: int = 11
    max_sweeps: int = 10                  # coordinate sweeps over lambda groups
    criterion_tol: float = 1e-6           # stop when a sweep changes the criterion less
    log_lambda_tol: float = 0.05          # refinement tolerance in log10(lambda)

    def to_dict(self) -> Dict[str, Any]:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["criterion"] = self.criterion.value
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SmoothingConfig":
        _check_keys(data, cls, "smoothing")
        data = dict(data)
        if "criterion" in data:
            data["criterion"] = _enum(SmoothingCriterion, data["criterion"], "smoothing.criterion")
        cfg = cls(**data)
        if not 0 < cfg.lambda_min < cfg.lambda_max or cfg.lambda_grid_points < 2:
            raise ConfigError("smoothing: need 0 < lambda_min < lambda_max and >= 2 grid points")
        return cfg


@dataclass
class DataConfig:
    points_file: Optional[str] = None
    meta_file: Optional[str] = None
    layers: List[LayerSpec] = field(default_factory=list)
    rescale: bool = False                 # min-max rescale t onto [0, 1]
    curve_layer: str = "E"                # name of the curve-level process

    def to_dict(self) -> Dict[str, Any]:
        return {
            "points_file": self.points_file,
            "meta_file": self.meta_file,
            "layers": [l.to_dict() for l in self.layers],
            "rescale": self.rescale,
            "curve_layer": self.curve_layer,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DataConfig":
        _check_keys(data, cls, "data")
        data = dict(data)
        data["layers"] = [LayerSpec.from_dict(l) for l in data.get("layers", [])]
        return cls(**data)


@dataclass
class Step1Config:
    """Covariance smoothing, FPCA and truncation"""
    grid_points: int = 101                                      # dense evaluation grid
    cov_basis: SplineSpec = field(default_factory=lambda: SplineSpec(3, 5, 2))
    weights: WeightScheme = WeightScheme.UNIT
    explicit_weights: List[float] = field(default_factory=list)
    truncation: TruncationCriterion = TruncationCriterion.TV
    level: float = 0.95
    fixed_truncation: Optional[Dict[str, int]] = None           # overrides the criterion
    eigen_tol: float = 1e-10                                    # relative to the largest eigenvalue

    def to_dict(self) -> Dict[str, Any]:
        return {
            "grid_points": self.grid_points,
            "cov_basis": self.cov_basis.to_dict(),
            "weights": self.weights.value,
            "explicit_weights": list(self.explicit_weights),
            "truncation": self.truncation.value,
            "level": self.level,
            "fixed_truncation": dict(self.fixed_truncation) if self.fixed_truncation else None,
            "eigen_tol": self.eigen_tol,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Step1Config":
        _check_keys(data, cls, "step1")
        data = dict(data)
        if "cov_basis" in data:
            data["cov_basis"] = _spline(data["cov_basis"], "step1.cov_basis")
        if "weights" in data:
            data["weights"] = _enum(WeightScheme, data["weights"], "step1.weights")
        if "truncation" in data:
            data["truncation"] = _enum(TruncationCriterion, data["truncation"], "step1.truncation")
        cfg = cls(**data)
        if not 0 < cfg.level < 1:
            raise ConfigError(f"step1.level must be in (0, 1), got {cfg.level}")
        if cfg.grid_points < 20:
            raise ConfigError("step1.grid_points must be >= 20")
        if cfg.weights == WeightScheme.EXPLICIT and not cfg.explicit_weights:
            raise ConfigError("step1.explicit_weights required for explicit weights")
        if any(w <= 0 for w in cfg.explicit_weights):
            raise ConfigError("step1.explicit_weights must be positive")
        return cfg


@dataclass
class Step2Config:
    scedasticity: Scedasticity = Scedasticity.PER_DIMENSION

    def to_dict(self) -> Dict[str, Any]:
        return {"scedasticity": self.scedasticity.value}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Step2Config":
        _check_keys(data, cls, "step2")
        return cls(scedasticity=_enum(Scedasticity, data.get("scedasticity", "per-dimension"),
                                      "step2.scedasticity"))


@dataclass
class CoarsenConfig:
    enabled: bool = False
    lead_dims: List[str] = field(default_factory=list)     # e.g. ["hand.x", "hand.y"]
    rstar: Optional[float] = 0.003                         # relative loss threshold
    sstar: Optional[float] = None                          # absolute loss threshold
    target_size: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CoarsenConfig":
        _check_keys(data, cls, "coarsen")
        return cls(**data)


@dataclass
class SimulationConfig:
    preset: str = "setting1-desk"
    replicates: int = 50
    scenario: str = "A"                   # A: true FPC counts, B: TV, C: UV, D/E: weighted, F: homoscedastic
    coverage_level: float = 0.95
    coverage_grid_points: int = 100

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SimulationConfig":
        _check_keys(data, cls, "simulation")
        cfg = cls(**data)
        if cfg.replicates < 0:
            raise ConfigError("simulation.replicates must be >= 0")
        if cfg.scenario not in ("A", "B", "C", "D", "E", "F"):
            raise ConfigError(f"simulation.scenario '{cfg.scenario}' not in A-F")
        return cfg


def default_formula() -> List[TermSpec]:
    return [TermSpec(name="intercept", kind=TermKind.INTERCEPT)]


@dataclass
class PipelineConfig:
    """Complete configuration of one run"""

    # === Data ===
    data: DataConfig = field(default_factory=DataConfig)
    formula: List[TermSpec] = field(default_factory=default_formula)

    # === Estimation ===
    mean_smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    cov_smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    step1: Step1Config = field(default_factory=Step1Config)
    step2: Step2Config = field(default_factory=Step2Config)

    # === Preprocessing / simulation ===
    coarsen: CoarsenConfig = field(default_factory=CoarsenConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)

    # === Run ===
    output_dir: str = "output"
    seed: int = 20240101
    jobs: int = 1
    dump_crossproducts: bool = False
    plots: bool = False

    @classmethod
    def default(cls) -> "PipelineConfig":
        return cls()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "data": self.data.to_dict(),
            "formula": [t.to_dict() for t in self.formula],
            "mean_smoothing": self.mean_smoothing.to_dict(),
            "cov_smoothing": self.cov_smoothing.to_dict(),
            "step1": self.step1.to_dict(),
            "step2": self.step2.to_dict(),
            "coarsen": self.coarsen.to_dict(),
            "simulation": self.simulation.to_dict(),
            "output_dir": self.output_dir,
            "seed": self.seed,
            "jobs": self.jobs,
            "dump_crossproducts": self.dump_crossproducts,
            "plots": self.plots,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PipelineConfig":
        _check_keys(data, cls, "config")
        cfg = cls()
        sections = {
            "data": DataConfig.from_dict,
            "mean_smoothing": SmoothingConfig.from_dict,
            "cov_smoothing": SmoothingConfig.from_dict,
            "step1": Step1Config.from_dict,
            "step2": Step2Config.from_dict,
            "coarsen": CoarsenConfig.from_dict,
            "simulation": SimulationConfig.from_dict,
        }
        for key, value in data.items():
            if key in sections:
                setattr(cfg, key, sections[key](value))
            elif key == "formula":
                cfg.formula = [TermSpec.from_dict(t) for t in value]
            else:
                setattr(cfg, key, value)

        kinds = [t.kind for t in cfg.formula]
        if kinds.count(TermKind.INTERCEPT) != 1:
            raise ConfigError("formula needs exactly one functional intercept")
        if cfg.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        return cfg

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"cannot parse {path}: {e}") from e

        cfg = cls.from_dict(data)
        # relative data paths resolve against the config file location
        for attr in ("points_file", "meta_file"):
            value = getattr(cfg.data, attr)
            if value and not Path(value).is_absolute():
                setattr(cfg.data, attr, str((path.parent / value).resolve()))
        return cfg

    def apply_env_overrides(self) -> "PipelineConfig":
        """MULTIFAMM_OUTPUT_DIR / MULTIFAMM_JOBS / MULTIFAMM_SEED from the environment or .env"""
        load_dotenv()
        if os.getenv("MULTIFAMM_OUTPUT_DIR"):
            self.output_dir = os.getenv("MULTIFAMM_OUTPUT_DIR")
        try:
            if os.getenv("MULTIFAMM_JOBS"):
                self.jobs = int(os.getenv("MULTIFAMM_JOBS"))
            if os.getenv("MULTIFAMM_SEED"):
                self.seed = int(os.getenv("MULTIFAMM_SEED"))
        except ValueError as e:
            raise ConfigError(f"invalid environment override: {e}") from e
        return self

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
