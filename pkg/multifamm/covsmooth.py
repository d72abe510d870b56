"""
Crossproducts of centred curves and symmetric additive covariance smoothing

Per dimension the crossproducts are regressed on one symmetric tensor-spline
surface per random process plus the error variance on the diagonal.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .basis import (PenaltyBlock, SplineSpec, bspline_design, difference_penalty,
                    symmetric_expansion, upper_to_symmetric)
from .config import SmoothingConfig
from .errors import DataError
from .fundata import FunDataset
from .plsengine import PlsFit, PlsProblem, select_lambda

logger = logging.getLogger(__name__)

SAME_POINT_TOL = 1e-12
SIGMA2_FLOOR = 1e-8


@dataclass
class PairBlock:
    """All crossproduct rows contributed by one (curve, curve) pair"""
    curve_a: int
    curve_b: int
    t: np.ndarray
    t2: np.ndarray
    product: np.ndarray
    weight: np.ndarray
    same_point: np.ndarray
    same_group: np.ndarray          # one flag per layer, constant over the pair

    @property
    def same_curve(self) -> bool:
        return self.curve_a == self.curve_b


class CrossproductTable:
    """
    Crossproducts of one dimension, stored once per unordered pair with t <= t'.

    Off-diagonal rows carry weight 2. Rows are generated pair by pair so large
    designs never need to be materialized.
    """

    def __init__(self, dim: str, curves: Dict[int, Tuple[np.ndarray, np.ndarray]],
                 layer_names: Sequence[str], codes: np.ndarray,
                 pairs: Sequence[Tuple[int, int]], data_variance: float):
        self.dim = dim
        self.curves = curves                      # curve index -> (t, y)
        self.layer_names = tuple(layer_names)
        self.codes = codes                        # (n_curves, n_layers) level codes
        self.pairs = list(pairs)                  # cross-curve pairs a < b
        self.data_variance = data_variance

    @property
    def n_rows(self) -> int:
        within = sum(len(t) * (len(t) + 1) // 2 for t, _ in self.curves.values())
        cross = sum(len(self.curves[a][0]) * len(self.curves[b][0]) for a, b in self.pairs)
        return within + cross

    def shared_pairs(self, layer: str) -> int:
        j = self.layer_names.index(layer)
        return sum(int(self.codes[a, j] == self.codes[b, j]) for a, b in self.pairs)

    def iter_pairs(self) -> Iterator[PairBlock]:
        n_layers = len(self.layer_names)
        for a, (t, y) in self.curves.items():
            i, j = np.triu_indices(len(t))
            yield PairBlock(
                curve_a=a, curve_b=a,
                t=t[i], t2=t[j],
                product=y[i] * y[j],
                weight=np.where(i == j, 1.0, 2.0),
                same_point=np.abs(t[i] - t[j]) < SAME_POINT_TOL,
                same_group=np.ones(n_layers, dtype=bool),
            )
        for a, b in self.pairs:
            ta, ya = self.curves[a]
            tb, yb = self.curves[b]
            TA, TB = np.meshgrid(ta, tb, indexing="ij")
            YA, YB = np.meshgrid(ya, yb, indexing="ij")
            lo, hi = np.minimum(TA, TB).ravel(), np.maximum(TA, TB).ravel()
            yield PairBlock(
                curve_a=a, curve_b=b,
                t=lo, t2=hi,
                product=(YA * YB).ravel(),
                weight=np.full(lo.size, 2.0),
                same_point=np.zeros(lo.size, dtype=bool),
                same_group=self.codes[a] == self.codes[b],
            )

    def to_frame(self) -> pd.DataFrame:
        """Materialize all rows (audit dumps, small data)"""
        parts = []
        for blk in self.iter_pairs():
            part = {
                "dim": self.dim,
                "curve_a": blk.curve_a,
                "curve_b": blk.curve_b,
                "t": blk.t,
                "t2": blk.t2,
                "product": blk.product,
                "weight": blk.weight,
                "same_curve": int(blk.same_curve),
                "same_point": blk.same_point.astype(int),
            }
            for name, flag in zip(self.layer_names, blk.same_group):
                part[f"same:{name}"] = int(flag)
            parts.append(pd.DataFrame(part))
        if not parts:
            return pd.DataFrame(columns=["dim", "curve_a", "curve_b", "t", "t2", "product",
                                         "weight", "same_curve", "same_point"])
        return pd.concat(parts, ignore_index=True)


def build_crossproducts(centered: FunDataset, layers: Optional[Sequence[str]] = None
                        ) -> Dict[str, CrossproductTable]:
    """
    Crossproduct tables, one per dimension.

    Within-curve pairs are always included; pairs of different curves only when
    they share a level of at least one non-curve layer.
    """
    group_layers = [l.name for l in centered.group_layers] if layers is None else list(layers)
    codes = np.column_stack([centered.level_codes(l) for l in group_layers]) \
        if group_layers else np.zeros((centered.n_curves, 0), dtype=int)

    pairs = set()
    for j in range(codes.shape[1]):
        members: Dict[int, List[int]] = {}
        for i, c in enumerate(codes[:, j]):
            members.setdefault(int(c), []).append(i)
        for idx in members.values():
            pairs.update(combinations(idx, 2))
    pairs = sorted(pairs)

    tables = {}
    for dim in centered.dims:
        curves = {
            i: c.points[dim] for i, c in enumerate(centered.curves)
            if dim in c.points and len(c.points[dim][0])
        }
        y_all = np.concatenate([y for _, y in curves.values()]) if curves else np.zeros(0)
        dim_pairs = [(a, b) for a, b in pairs if a in curves and b in curves]
        tables[dim] = CrossproductTable(
            dim=dim, curves=curves, layer_names=group_layers, codes=codes,
            pairs=dim_pairs, data_variance=float(np.var(y_all)) if y_all.size else 0.0,
        )
        logger.info(f"Crossproducts '{dim}': {len(curves)} curves, {len(dim_pairs)} cross-curve pairs")
    return tables


@dataclass
class CovarianceModel:
    """Smoothed auto-covariance surfaces per (process, dimension) and error variances"""
    spec: SplineSpec
    dims: Tuple[str, ...]
    processes: Tuple[str, ...]                                  # group layers, then the curve level
    coefficients: Dict[Tuple[str, str], np.ndarray]             # (g, d) -> symmetric coefficient matrix
    sigma2: Dict[str, float]
    lambdas: Dict[str, Dict[str, float]] = field(default_factory=dict)
    dropped: Dict[str, List[str]] = field(default_factory=dict)  # dim -> processes without signal

    def coefficient_matrix(self, g: str, d: str) -> np.ndarray:
        if g not in self.processes:
            raise DataError(f"unknown process '{g}'")
        if d not in self.dims:
            raise DataError(f"unknown dimension '{d}'")
        k = self.spec.num_basis
        return self.coefficients.get((g, d), np.zeros((k, k)))

    def to_dict(self) -> Dict:
        return {
            "spec": self.spec.to_dict(),
            "dims": list(self.dims),
            "processes": list(self.processes),
            "sigma2": dict(self.sigma2),
            "lambdas": self.lambdas,
            "dropped": self.dropped,
            "coefficients": {f"{g}|{d}": C.tolist() for (g, d), C in self.coefficients.items()},
        }


def _accumulate(tbl: CrossproductTable, spec: SplineSpec, active: List[int]):
    """Normal equations of the additive surface model for one dimension"""
    k = spec.num_basis
    M = symmetric_expansion(k)
    n_sym = M.shape[1]
    n_proc = len(active) + 1                       # active layers + curve level
    p = n_proc * n_sym + 1
    XtWX = np.zeros((p, p))
    XtWy = np.zeros(p)
    yWy, n_rows = 0.0, 0

    for blk in tbl.iter_pairs():
        Ba = bspline_design(spec, blk.t)
        Bb = bspline_design(spec, blk.t2)
        X = (Ba[:, :, None] * Bb[:, None, :]).reshape(len(blk.t), k * k) @ M
        w = blk.weight
        G = X.T @ (X * w[:, None])
        h = X.T @ (w * blk.product)

        delta = np.array([blk.same_group[j] for j in active] + [blk.same_curve], dtype=float)
        for a in np.flatnonzero(delta):
            sa = slice(a * n_sym, (a + 1) * n_sym)
            XtWy[sa] += h
            for b in np.flatnonzero(delta):
                XtWX[sa, b * n_sym:(b + 1) * n_sym] += G

        if blk.same_point.any():
            sp = blk.same_point
            ws = w[sp]
            XtWX[-1, -1] += ws.sum()
            XtWy[-1] += float(ws @ blk.product[sp])
            cross = X[sp].T @ ws
            for a in np.flatnonzero(delta):
                sa = slice(a * n_sym, (a + 1) * n_sym)
                XtWX[sa, -1] += cross
                XtWX[-1, sa] += cross

        yWy += float(w @ blk.product ** 2)
        n_rows += len(blk.t)
    return XtWX, XtWy, yWy, n_rows


def _smooth_dimension(tbl: CrossproductTable, spec: SplineSpec, curve_layer: str,
                      smoothing: SmoothingConfig):
    active, dropped = [], []
    for j, name in enumerate(tbl.layer_names):
        if tbl.shared_pairs(name) > 0:
            active.append(j)
        else:
            dropped.append(name)
            logger.warning(f"Layer '{name}' has no shared-group pairs on '{tbl.dim}'; surface set to zero")

    XtWX, XtWy, yWy, n_rows = _accumulate(tbl, spec, active)
    if n_rows == 0:
        raise DataError(f"no crossproducts on dimension '{tbl.dim}'")

    k = spec.num_basis
    Pm = difference_penalty(k, spec.penalty_order).matrix
    M = symmetric_expansion(k)
    sym = M.T @ (np.kron(Pm, np.eye(k)) + np.kron(np.eye(k), Pm)) @ M
    penalty = PenaltyBlock(matrix=0.5 * (sym + sym.T), rank=int(np.linalg.matrix_rank(sym)))

    names = [tbl.layer_names[j] for j in active] + [curve_layer]
    layout = [(f"K:{g}", M.shape[1], ((penalty, f"{tbl.dim}:{g}"),)) for g in names]
    layout.append(("sigma2", 1, ()))
    problem = PlsProblem.from_normal_equations(XtWX, XtWy, yWy, n_rows, layout)
    fit = select_lambda(problem, smoothing.criterion, smoothing)

    surfaces = {g: upper_to_symmetric(fit.block_coef(f"K:{g}"), k) for g in names}
    sigma2 = float(fit.block_coef("sigma2")[0])
    floor = SIGMA2_FLOOR * max(tbl.data_variance, np.finfo(float).tiny)
    if sigma2 < floor:
        if sigma2 < 0:
            logger.warning(f"Negative error variance {sigma2:.3e} on '{tbl.dim}' clipped to {floor:.3e}")
        sigma2 = floor
    logger.info(f"Covariance '{tbl.dim}': {n_rows} rows, sigma2={sigma2:.4g}, edf={fit.edf:.1f}")
    return surfaces, sigma2, fit, dropped


def smooth_covariance(tbl: Union[CrossproductTable, Dict[str, CrossproductTable]],
                      spec: SplineSpec, smoothing: SmoothingConfig = None,
                      curve_layer: str = "E", jobs: int = 1) -> CovarianceModel:
    """
    Fit the additive covariance model on one or several dimensions.

    Args:
        tbl: crossproduct table(s) from build_crossproducts
        spec: marginal basis of every surface
        smoothing: lambda search settings (one lambda per surface)
        curve_layer: name of the curve-level process

    Returns:
        CovarianceModel
    """
    smoothing = smoothing or SmoothingConfig()
    tables = {tbl.dim: tbl} if isinstance(tbl, CrossproductTable) else dict(tbl)

    if jobs > 1 and len(tables) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            futures = {d: executor.submit(_smooth_dimension, t, spec, curve_layer, smoothing)
                       for d, t in tables.items()}
            results = {d: f.result() for d, f in futures.items()}
    else:
        results = {d: _smooth_dimension(t, spec, curve_layer, smoothing) for d, t in tables.items()}

    first = next(iter(tables.values()))
    coefficients, sigma2, lambdas, dropped = {}, {}, {}, {}
    for d, (surfaces, s2, fit, drop) in results.items():
        for g, C in surfaces.items():
            coefficients[(g, d)] = C
        sigma2[d] = s2
        lambdas[d] = fit.lambdas
        dropped[d] = drop

    return CovarianceModel(
        spec=spec,
        dims=tuple(tables),
        processes=tuple(first.layer_names) + (curve_layer,),
        coefficients=coefficients,
        sigma2=sigma2,
        lambdas=lambdas,
        dropped=dropped,
    )


def evaluate_surface(cm: CovarianceModel, g: str, d: str, grid) -> np.ndarray:
    """K_g^(d,d) on grid x grid, exactly symmetric"""
    C = cm.coefficient_matrix(g, d)
    B = bspline_design(cm.spec, grid)
    full = B @ C @ B.T
    return np.triu(full) + np.triu(full, 1).T
