"""
Sparse multivariate functional data

Curves are observed on [0, 1] at curve- and dimension-specific points and carry
scalar covariates plus one label per grouping layer.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import LayerKind, LayerSpec
from .errors import DataError, DomainError

logger = logging.getLogger(__name__)

POINT_COLUMNS = ["curve_id", "dim", "t", "y"]
NESTED_SEP = "/"


@dataclass(frozen=True)
class FunCurve:
    """One unit: per-dimension (t, y) arrays, covariates and raw group labels"""
    id: str
    points: Dict[str, Tuple[np.ndarray, np.ndarray]]
    covariates: Dict[str, float] = field(default_factory=dict)
    group_labels: Dict[str, str] = field(default_factory=dict)

    def n_points(self, dim: str) -> int:
        return len(self.points[dim][0]) if dim in self.points else 0


@dataclass(frozen=True)
class GroupingLayer:
    name: str
    kind: LayerKind
    levels: Tuple[str, ...]                  # sorted effective labels
    parent: Optional[str] = None


@dataclass(frozen=True)
class FunDataset:
    curves: Tuple[FunCurve, ...]
    dims: Tuple[str, ...]
    layers: Tuple[GroupingLayer, ...]
    covariate_names: Tuple[str, ...]

    @property
    def n_curves(self) -> int:
        return len(self.curves)

    @property
    def curve_layer(self) -> GroupingLayer:
        return next(l for l in self.layers if l.kind == LayerKind.CURVE)

    @property
    def group_layers(self) -> List[GroupingLayer]:
        """Non-curve layers in declaration order"""
        return [l for l in self.layers if l.kind != LayerKind.CURVE]

    def layer(self, name) -> GroupingLayer:
        if isinstance(name, GroupingLayer):
            name = name.name
        for l in self.layers:
            if l.name == name:
                return l
        raise DataError(f"unknown grouping layer '{name}'")

    def label(self, curve: FunCurve, layer: GroupingLayer) -> str:
        """Effective label; nested layers are prefixed by their parent's label"""
        if layer.kind == LayerKind.CURVE:
            return curve.id
        raw = curve.group_labels[layer.name]
        if layer.kind == LayerKind.NESTED:
            return self.label(curve, self.layer(layer.parent)) + NESTED_SEP + raw
        return raw

    def level_codes(self, layer) -> np.ndarray:
        """Per-curve index into layer.levels"""
        layer = self.layer(layer)
        index = {lvl: i for i, lvl in enumerate(layer.levels)}
        return np.array([index[self.label(c, layer)] for c in self.curves], dtype=int)

    @cached_property
    def long_frame(self) -> pd.DataFrame:
        """
        One row per scalar observation ordered by dimension, curve, t.

        Columns: curve_idx, curve_id, dim, t, y, covariates, lvl:<layer>
        """
        codes = {l.name: self.level_codes(l) for l in self.layers}
        parts = []
        for dim in self.dims:
            for i, curve in enumerate(self.curves):
                if dim not in curve.points:
                    continue
                t, y = curve.points[dim]
                part = {
                    "curve_idx": np.full(len(t), i),
                    "curve_id": curve.id,
                    "dim": dim,
                    "t": t,
                    "y": y,
                }
                for name in self.covariate_names:
                    part[name] = curve.covariates[name]
                for name, c in codes.items():
                    part[f"lvl:{name}"] = c[i]
                parts.append(pd.DataFrame(part))
        if not parts:
            cols = ["curve_idx", "curve_id", "dim", "t", "y", *self.covariate_names,
                    *[f"lvl:{l.name}" for l in self.layers]]
            return pd.DataFrame(columns=cols)
        return pd.concat(parts, ignore_index=True)

    @property
    def n_observations(self) -> int:
        return len(self.long_frame)

    def replace_values(self, values: np.ndarray) -> "FunDataset":
        """Same structure, y replaced by values aligned with long_frame rows"""
        values = np.asarray(values, dtype=float)
        frame = self.long_frame
        if values.shape != (len(frame),):
            raise DataError(f"{values.shape} values for {len(frame)} observations")

        new_points: Dict[int, Dict[str, Tuple[np.ndarray, np.ndarray]]] = {
            i: {} for i in range(self.n_curves)
        }
        for (dim, i), idx in frame.groupby(["dim", "curve_idx"], sort=False).groups.items():
            rows = np.asarray(idx)
            new_points[i][dim] = (frame["t"].to_numpy()[rows], values[rows])

        curves = tuple(
            FunCurve(c.id, new_points[i], dict(c.covariates), dict(c.group_labels))
            for i, c in enumerate(self.curves)
        )
        return FunDataset(curves, self.dims, self.layers, self.covariate_names)


def build_dataset(curves: Sequence[FunCurve], dims: Sequence[str],
                  layer_specs: Sequence[LayerSpec] = (),
                  covariate_names: Sequence[str] = (),
                  curve_layer: str = "E") -> FunDataset:
    """Validate curves and derive the grouping layers"""
    dims = tuple(dims)
    if not dims:
        raise DataError("dataset needs at least one dimension")
    specs = list(layer_specs)
    names = [s.name for s in specs]
    if curve_layer in names:
        raise DataError(f"layer name '{curve_layer}' is reserved for the curve level")
    for spec in specs:
        if spec.kind == LayerKind.NESTED and spec.parent not in names[:names.index(spec.name)]:
            raise DataError(f"nested layer '{spec.name}' references unknown parent '{spec.parent}'")

    ids = [c.id for c in curves]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate curve ids")

    for c in curves:
        missing_cov = [n for n in covariate_names if n not in c.covariates]
        missing_lbl = [n for n in names if n not in c.group_labels]
        if missing_cov or missing_lbl:
            raise DataError(f"curve '{c.id}' lacks covariates {missing_cov} / labels {missing_lbl}")
        if not any(len(t) for t, _ in c.points.values()):
            raise DataError(f"curve '{c.id}' has no observations")
        for dim, (t, y) in c.points.items():
            if dim not in dims:
                raise DataError(f"curve '{c.id}' has unknown dimension '{dim}'")
            if len(t) and (t.min() < 0.0 or t.max() > 1.0):
                raise DomainError(f"curve '{c.id}', dim '{dim}': t outside [0, 1]")
            if np.any(np.diff(t) <= 0):
                raise DataError(f"curve '{c.id}', dim '{dim}': t not strictly increasing")

    # levels need effective labels, which only depend on the layer kinds and parents
    bare = FunDataset(tuple(curves), dims, tuple(
        GroupingLayer(s.name, s.kind, (), s.parent) for s in specs), tuple(covariate_names))
    layers = [
        GroupingLayer(l.name, l.kind, tuple(sorted({bare.label(c, l) for c in curves})), l.parent)
        for l in bare.layers
    ]
    layers.append(GroupingLayer(curve_layer, LayerKind.CURVE, tuple(sorted(ids))))
    return FunDataset(tuple(curves), dims, tuple(layers), tuple(covariate_names))


def _numeric(series: pd.Series, what: str, source) -> np.ndarray:
    values = pd.to_numeric(series, errors="coerce")
    bad = values.isna()
    if bad.any():
        rows = series.index[bad][:5].tolist()
        raise DataError(f"{source}: non-numeric {what} in rows {rows}")
    return values.to_numpy(dtype=float)


def load_dataset(points_file, meta_file, layer_specs: Optional[Sequence[LayerSpec]] = None,
                 rescale: bool = False, curve_layer: str = "E") -> FunDataset:
    """
    Read long-format points and per-curve meta data.

    Args:
        points_file: CSV with columns curve_id, dim, t, y
        meta_file: CSV with curve_id, covariates and layer labels
        layer_specs: grouping layers; without them non-numeric meta columns become crossed layers
        rescale: min-max rescale t onto [0, 1]

    Returns:
        FunDataset (dimension and curve order = first appearance in points_file)
    """
    points_file, meta_file = Path(points_file), Path(meta_file)
    points = pd.read_csv(points_file, comment="#", dtype={"curve_id": str, "dim": str})
    missing = [c for c in POINT_COLUMNS if c not in points.columns]
    if missing:
        raise DataError(f"{points_file}: missing columns {missing}")
    meta = pd.read_csv(meta_file, dtype=str)
    if "curve_id" not in meta.columns:
        raise DataError(f"{meta_file}: missing column 'curve_id'")
    if meta["curve_id"].duplicated().any():
        raise DataError(f"{meta_file}: duplicate curve_id rows")

    points["t"] = _numeric(points["t"], "t", points_file)
    points["y"] = _numeric(points["y"], "y", points_file)

    no_meta = sorted(set(points["curve_id"]) - set(meta["curve_id"]))
    if no_meta:
        raise DataError(f"curves missing in {meta_file.name}: {no_meta[:5]}")
    dup = points.duplicated(["curve_id", "dim", "t"])
    if dup.any():
        first = points.loc[dup, ["curve_id", "dim", "t"]].iloc[0].tolist()
        raise DataError(f"duplicate (curve_id, dim, t) rows, e.g. {first}")

    if rescale:
        t_min, t_max = points["t"].min(), points["t"].max()
        if t_max <= t_min:
            raise DataError("cannot rescale: all t values are equal")
        points["t"] = (points["t"] - t_min) / (t_max - t_min)
    out_of_range = (points["t"] < 0.0) | (points["t"] > 1.0)
    if out_of_range.any():
        raise DomainError(f"t outside [0, 1]: {points.loc[out_of_range, 't'].head().tolist()}")

    columns = [c for c in meta.columns if c != "curve_id"]
    if layer_specs is None:
        layer_specs = [
            LayerSpec(c) for c in columns
            if pd.to_numeric(meta[c], errors="coerce").isna().any()
        ]
    layer_names = [s.name for s in layer_specs]
    absent = [n for n in layer_names if n not in meta.columns]
    if absent:
        raise DataError(f"{meta_file.name}: missing layer columns {absent}")
    covariate_names = [c for c in columns if c not in layer_names]
    meta = meta.set_index("curve_id")
    cov_values = {c: _numeric(meta[c], f"covariate '{c}'", meta_file) for c in covariate_names}
    row_of = {cid: i for i, cid in enumerate(meta.index)}

    dims = list(pd.unique(points["dim"]))
    curves = []
    for cid, rows in points.groupby("curve_id", sort=False):
        rows = rows.sort_values("t", kind="mergesort")
        per_dim = {
            dim: (g["t"].to_numpy(), g["y"].to_numpy())
            for dim, g in rows.groupby("dim", sort=False)
        }
        r = row_of[cid]
        curves.append(FunCurve(
            id=cid,
            points=per_dim,
            covariates={c: float(cov_values[c][r]) for c in covariate_names},
            group_labels={n: str(meta.iloc[r][n]) for n in layer_names},
        ))

    unused = len(meta) - len(curves)
    if unused:
        logger.warning(f"{unused} meta rows have no observations and are ignored")

    ds = build_dataset(curves, dims, layer_specs, covariate_names, curve_layer)
    logger.info(f"Loaded {ds.n_curves} curves, {ds.n_observations} observations, dims={list(ds.dims)}")
    return ds


def write_dataset(ds: FunDataset, points_file, meta_file):
    """Write the two CSV files read by load_dataset"""
    frame = ds.long_frame
    frame[POINT_COLUMNS].to_csv(points_file, index=False)

    rows = []
    for c in ds.curves:
        row = {"curve_id": c.id}
        row.update({n: c.covariates[n] for n in ds.covariate_names})
        row.update({l.name: c.group_labels[l.name] for l in ds.group_layers})
        rows.append(row)
    columns = ["curve_id", *ds.covariate_names, *[l.name for l in ds.group_layers]]
    pd.DataFrame(rows, columns=columns).to_csv(meta_file, index=False)


@dataclass
class ValidationReport:
    n_curves: int
    n_observations: int
    point_counts: Dict[str, Dict[str, float]]        # dim -> min / median / max per curve
    missing_dimension: Dict[str, int]                 # curves without any point on a dim
    layer_levels: Dict[str, int]
    nested_inconsistencies: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.warnings and not self.nested_inconsistencies

    def to_dict(self) -> Dict:
        return {
            "n_curves": self.n_curves,
            "n_observations": self.n_observations,
            "point_counts": self.point_counts,
            "missing_dimension": self.missing_dimension,
            "layer_levels": self.layer_levels,
            "nested_inconsistencies": list(self.nested_inconsistencies),
            "warnings": list(self.warnings),
        }


def validate(ds: FunDataset) -> ValidationReport:
    """Point-count, layer and nesting summary (never raises)"""
    warnings: List[str] = []
    if ds.n_curves == 0:
        warnings.append("dataset contains no curves")

    point_counts, missing_dim = {}, {}
    for dim in ds.dims:
        counts = np.array([c.n_points(dim) for c in ds.curves], dtype=int)
        observed = counts[counts > 0]
        missing_dim[dim] = int(np.sum(counts == 0))
        if observed.size:
            point_counts[dim] = {
                "min": int(observed.min()),
                "median": float(np.median(observed)),
                "max": int(observed.max()),
            }
        else:
            point_counts[dim] = {"min": 0, "median": 0.0, "max": 0}
        if missing_dim[dim]:
            warnings.append(f"{missing_dim[dim]} curves have no observations on '{dim}'")

    inconsistencies = []
    for layer in ds.layers:
        if layer.kind != LayerKind.NESTED:
            continue
        parent = ds.layer(layer.parent)
        parents_of: Dict[str, set] = {}
        for c in ds.curves:
            parents_of.setdefault(c.group_labels[layer.name], set()).add(ds.label(c, parent))
        for raw, parents in sorted(parents_of.items()):
            if len(parents) > 1:
                inconsistencies.append(
                    f"{layer.name}='{raw}' appears under {len(parents)} '{parent.name}' labels"
                )

    return ValidationReport(
        n_curves=ds.n_curves,
        n_observations=ds.n_observations if ds.n_curves else 0,
        point_counts=point_counts,
        missing_dimension=missing_dim,
        layer_levels={l.name: len(l.levels) for l in ds.layers},
        nested_inconsistencies=inconsistencies,
        warnings=warnings,
    )


def indicator_matrix(ds: FunDataset, layer) -> np.ndarray:
    """One-hot (curves x levels) matrix, columns in sorted level order"""
    layer = ds.layer(layer)
    Z = np.zeros((ds.n_curves, len(layer.levels)))
    Z[np.arange(ds.n_curves), ds.level_codes(layer)] = 1.0
    return Z


def curves_from_frame(frame: pd.DataFrame) -> Iterable[Tuple[str, Dict[str, Tuple[np.ndarray, np.ndarray]]]]:
    """Group a long point table into (curve_id, {dim: (t, y)}) sorted by t"""
    for cid, rows in frame.groupby("curve_id", sort=False):
        rows = rows.sort_values("t", kind="mergesort")
        yield cid, {
            dim: (g["t"].to_numpy(dtype=float), g["y"].to_numpy(dtype=float))
            for dim, g in rows.groupby("dim", sort=False)
        }
