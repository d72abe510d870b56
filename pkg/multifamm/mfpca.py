"""
Multivariate FPCA, truncation selection and variance decomposition
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from .config import TruncationCriterion
from .errors import DataError, NumericError
from .fpca import ScoreMatrix, UniEigenSet
from .plsengine import symmetric_eigh

logger = logging.getLogger(__name__)


@dataclass
class ScalarProduct:
    """Weighted scalar product: sum_d w_d * integral f_d g_d"""
    dims: Tuple[str, ...]
    weights: np.ndarray
    grid: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.grid = np.asarray(self.grid, dtype=float)
        if self.weights.shape != (len(self.dims),):
            raise DataError(f"{self.weights.size} weights for {len(self.dims)} dimensions")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights <= 0):
            raise DataError(f"scalar-product weights must be finite and positive: {self.weights}")

    @classmethod
    def unit(cls, dims: Sequence[str], grid) -> "ScalarProduct":
        return cls(tuple(dims), np.ones(len(dims)), grid)

    def weight(self, dim: str) -> float:
        return float(self.weights[self.dims.index(dim)])

    @property
    def domain_length(self) -> float:
        return float(self.grid[-1] - self.grid[0])

    def to_dict(self) -> Dict:
        return {"dims": list(self.dims), "weights": self.weights.tolist()}


def weighted_inner(f, g, sp: ScalarProduct) -> float:
    """<<f, g>> for multivariate functions given as (D, G) arrays on sp.grid"""
    f = np.atleast_2d(np.asarray(f, dtype=float))
    g = np.atleast_2d(np.asarray(g, dtype=float))
    expected = (len(sp.dims), sp.grid.size)
    if f.shape != expected or g.shape != expected:
        raise DataError(f"grid mismatch: got {f.shape} and {g.shape}, expected {expected}")
    return float(np.sum(sp.weights * trapezoid(f * g, sp.grid, axis=1)))


def weighted_norm(f, sp: ScalarProduct) -> float:
    return float(np.sqrt(max(weighted_inner(f, f, sp), 0.0)))


@dataclass
class MultiEigenBasis:
    """Multivariate eigenfunctions of one random process"""
    process: str
    dims: Tuple[str, ...]
    grid: np.ndarray
    functions: np.ndarray              # (M, D, G)
    eigenvalues: np.ndarray            # (M,), decreasing
    weights: np.ndarray                # scalar-product weights used
    truncation: Optional[int] = None   # M_g; None keeps every eigenfunction
    scores: Optional[np.ndarray] = None  # multivariate scores (levels x M)
    levels: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.truncation is None:
            self.truncation = len(self.eigenvalues)

    @property
    def n_total(self) -> int:
        return len(self.eigenvalues)

    @property
    def norms(self) -> np.ndarray:
        """Unweighted squared L2 norm of every component, shape (M, D)"""
        if not self.n_total:
            return np.zeros((0, len(self.dims)))
        return trapezoid(self.functions ** 2, self.grid, axis=2)

    def truncated(self, M: int) -> "MultiEigenBasis":
        if not 0 <= M <= self.n_total:
            raise DataError(f"truncation {M} outside [0, {self.n_total}] for '{self.process}'")
        return replace(self, truncation=M)

    def selected_eigenvalues(self) -> np.ndarray:
        return self.eigenvalues[:self.truncation]

    def at(self, dim: str, t) -> np.ndarray:
        """Selected eigenfunctions of one dimension interpolated at t, shape (len(t), M_g)"""
        d = self.dims.index(dim)
        t = np.asarray(t, dtype=float)
        if not self.truncation:
            return np.zeros((t.size, 0))
        return np.column_stack([np.interp(t, self.grid, self.functions[m, d])
                                for m in range(self.truncation)])

    def to_dict(self) -> Dict:
        return {
            "process": self.process,
            "dims": list(self.dims),
            "eigenvalues": self.eigenvalues.tolist(),
            "truncation": self.truncation,
            "weights": self.weights.tolist(),
            "norms": self.norms.tolist(),
        }


def mfpca(scores: ScoreMatrix, eigensets: Mapping[str, UniEigenSet], sp: ScalarProduct,
          tol: float = 1e-10) -> MultiEigenBasis:
    """
    Multivariate FPCA from the covariance of univariate scores.

    Args:
        scores: univariate scores of one process (levels x columns)
        eigensets: that process's univariate eigensets by dimension
        sp: scalar product defining orthonormality

    Returns:
        MultiEigenBasis with |||psi||| = 1
    """
    Xi = np.asarray(scores.values, dtype=float)
    if Xi.shape[0] < 2:
        raise DataError(f"process '{scores.process}' needs >= 2 levels, got {Xi.shape[0]}")
    if not np.any(Xi):
        raise DataError(f"all scores of process '{scores.process}' are zero")

    col_w = np.array([sp.weight(d) for d, _ in scores.columns])
    sqrt_w = np.sqrt(col_w)
    Z = np.atleast_2d(np.cov(Xi, rowvar=False, ddof=1))
    Zw = sqrt_w[:, None] * Z * sqrt_w[None, :]
    values, vectors = symmetric_eigh(Zw, f"score covariance of {scores.process}")
    order = np.argsort(values)[::-1]
    values, vectors = values[order], vectors[:, order]
    keep = values > tol * values[0] if values[0] > 0 else np.zeros(values.size, dtype=bool)
    values, vectors = values[keep], vectors[:, keep]

    M, G = values.size, sp.grid.size
    functions = np.zeros((M, len(sp.dims), G))
    for di, dim in enumerate(sp.dims):
        idx = [j for j, (d, _) in enumerate(scores.columns) if d == dim]
        if not idx:
            continue
        es = eigensets[dim]
        if es.grid.shape != sp.grid.shape or not np.allclose(es.grid, sp.grid):
            raise DataError(f"eigenset grid of '{dim}' differs from the scalar-product grid")
        functions[:, di, :] = (es.eigenfunctions @ vectors[idx, :]).T / np.sqrt(sp.weight(dim))

    for m in range(M):
        norm = weighted_norm(functions[m], sp)
        if norm <= 0:
            raise NumericError(f"degenerate eigenfunction {m + 1} of '{scores.process}'")
        functions[m] /= norm
        flat = functions[m].ravel()
        if flat[np.argmax(np.abs(flat))] < 0:
            functions[m] *= -1.0
            vectors[:, m] *= -1.0

    mv_scores = (Xi * sqrt_w[None, :]) @ vectors
    logger.info(f"MFPCA '{scores.process}': {M} eigenvalues, leading {values[:3].round(5).tolist()}")
    return MultiEigenBasis(
        process=scores.process,
        dims=tuple(sp.dims),
        grid=sp.grid.copy(),
        functions=functions,
        eigenvalues=values,
        weights=sp.weights.copy(),
        scores=mv_scores,
        levels=tuple(scores.levels),
    )


def _select_tv(bases: Dict[str, MultiEigenBasis], sigma_term: float, level: float) -> Dict[str, int]:
    total = sum(float(b.eigenvalues.sum()) for b in bases.values()) + sigma_term
    counts = {g: 0 for g in bases}
    if total <= 0:
        return counts

    taken = sigma_term
    if taken / total >= level:
        return counts
    candidates = sorted(
        (-float(nu), pos, m, g)
        for pos, (g, b) in enumerate(bases.items())
        for m, nu in enumerate(b.eigenvalues)
    )
    for neg_nu, _, m, g in candidates:
        if m != counts[g]:
            raise NumericError(f"non-contiguous TV selection for '{g}' (FPC {m + 1})")
        counts[g] = m + 1
        taken += -neg_nu
        if taken / total >= level:
            break
    return counts


def _uv_fractions(contrib: Dict[str, np.ndarray], counts: Dict[str, int],
                  sigma: np.ndarray, totals: np.ndarray) -> np.ndarray:
    explained = sigma.copy()
    for g, c in contrib.items():
        explained += c[:counts[g]].sum(axis=0)
    return np.divide(explained, totals, out=np.ones_like(totals), where=totals > 0)


def _greedy_uv(contrib: Dict[str, np.ndarray], caps: Dict[str, int], sigma: np.ndarray,
               totals: np.ndarray, level: float) -> Dict[str, int]:
    """Add the FPC helping the worst-explained dimension most, then prune"""
    counts = {g: 0 for g in contrib}
    frac = _uv_fractions(contrib, counts, sigma, totals)
    while np.any(frac < level):
        worst = int(np.argmin(frac))
        options = [
            (-contrib[g][counts[g], worst], pos, g)
            for pos, g in enumerate(contrib) if counts[g] < caps[g]
        ]
        if not options:
            break
        counts[min(options)[2]] += 1
        frac = _uv_fractions(contrib, counts, sigma, totals)

    pruned = True
    while pruned:
        pruned = False
        for g in contrib:
            if counts[g] == 0:
                continue
            trial = {**counts, g: counts[g] - 1}
            if np.all(_uv_fractions(contrib, trial, sigma, totals) >= level):
                counts = trial
                pruned = True
                break
    return counts


def _count_vectors(caps: Sequence[int], total: int) -> Iterator[Tuple[int, ...]]:
    """Count vectors summing to total, earlier processes taking the most first"""
    if len(caps) == 1:
        if total <= caps[0]:
            yield (total,)
        return
    for first in range(min(caps[0], total), -1, -1):
        for rest in _count_vectors(caps[1:], total - first):
            yield (first,) + rest


def _select_uv(bases: Dict[str, MultiEigenBasis], sigma: np.ndarray, level: float) -> Dict[str, int]:
    """
    Fewest FPCs in total that reach the level on every dimension.

    The greedy pick bounds the search; among feasible vectors of the smallest
    total the one with the best worst-dimension share wins, then the one
    giving earlier processes more FPCs.
    """
    contrib = {g: b.eigenvalues[:, None] * b.norms for g, b in bases.items()}
    totals = sigma + sum(c.sum(axis=0) for c in contrib.values())
    caps = {g: b.n_total for g, b in bases.items()}
    greedy = _greedy_uv(contrib, caps, sigma, totals, level)
    if not np.all(_uv_fractions(contrib, greedy, sigma, totals) >= level):
        return greedy

    names = list(bases)
    for total in range(sum(greedy.values()) + 1):
        best, best_share = None, -np.inf
        for vector in _count_vectors([caps[g] for g in names], total):
            counts = dict(zip(names, vector))
            share = float(np.min(_uv_fractions(contrib, counts, sigma, totals)))
            if share >= level and share > best_share:
                best, best_share = counts, share
        if best is not None:
            return best
    return greedy


def select_truncation(bases: Mapping[str, MultiEigenBasis], sigma: Mapping[str, float],
                      sp: ScalarProduct, criterion: TruncationCriterion = TruncationCriterion.TV,
                      level: float = 0.95) -> Dict[str, int]:
    """
    Number of multivariate FPCs per process.

    Args:
        bases: bases in layer order (ties go to the earlier process)
        sigma: error variance per dimension
        criterion: TV (total variation) or UV (variation on every dimension)
        level: required explained share

    Returns:
        map process -> M_g (0 drops the process)
    """
    if not bases:
        raise DataError("no bases to truncate")
    if not 0 < level < 1:
        raise DataError(f"truncation level must be in (0, 1), got {level}")
    bases = dict(bases)
    sig = np.array([float(sigma[d]) for d in sp.dims])

    if criterion == TruncationCriterion.TV:
        counts = _select_tv(bases, float(np.sum(sp.weights * sig)) * sp.domain_length, level)
    else:
        counts = _select_uv(bases, sig * sp.domain_length, level)
    logger.info(f"Truncation ({criterion.value}, {level:.2f}): {counts}")
    return counts


@dataclass
class VarianceTable:
    """Variance components of the selected FPCs and error variances"""
    table: pd.DataFrame
    total: float                       # full estimated total variation (all eigenvalues)

    @property
    def explained(self) -> float:
        return float(self.table.loc["pi", "Total"])

    def to_csv(self, path, **kwargs):
        self.table.to_csv(path, index_label="row", **kwargs)

    def format(self) -> str:
        return self.table.to_string(float_format=lambda v: f"{v:.3f}", na_rep="")


def variance_table(bases: Mapping[str, MultiEigenBasis], sigma: Mapping[str, float],
                   sp: ScalarProduct) -> VarianceTable:
    """
    Variation, component norms and explained shares.

    Denominators use every estimated eigenvalue; columns only the selected FPCs.
    """
    dims = list(sp.dims)
    length = sp.domain_length
    sig = np.array([float(sigma[d]) for d in dims])
    w = sp.weights

    per_dim_total = sig * length
    total = float(np.sum(w * sig) * length)
    for b in bases.values():
        total += float(b.eigenvalues.sum())
        if b.n_total:
            per_dim_total = per_dim_total + (b.eigenvalues[:, None] * b.norms).sum(axis=0)

    def share(value, denom):
        return value / denom if denom > 0 else 0.0

    columns: Dict[str, Dict[str, float]] = {}
    for g, b in bases.items():
        norms = b.norms
        for m in range(b.truncation):
            nu = float(b.eigenvalues[m])
            col = {"Variation": nu}
            for di, d in enumerate(dims):
                col[f"norm:{d}"] = float(norms[m, di])
            for di, d in enumerate(dims):
                col[f"pi:{d}"] = share(nu * norms[m, di], per_dim_total[di])
            col["pi"] = share(nu, total)
            columns[f"{g}{m + 1}"] = col

    for di, d in enumerate(dims):
        col = {"Variation": float(sig[di])}
        for dj, e in enumerate(dims):
            col[f"norm:{e}"] = np.nan
            col[f"pi:{e}"] = share(sig[di] * length, per_dim_total[dj]) if dj == di else 0.0
        col["pi"] = share(w[di] * sig[di] * length, total)
        columns[f"sigma2:{d}"] = col

    table = pd.DataFrame(columns)
    totals = {"Variation": total}
    for d in dims:
        totals[f"norm:{d}"] = np.nan
        totals[f"pi:{d}"] = float(table.loc[f"pi:{d}"].sum())
    totals["pi"] = float(table.loc["pi"].sum())
    table["Total"] = pd.Series(totals)
    row_order = ["Variation", *[f"norm:{d}" for d in dims], *[f"pi:{d}" for d in dims], "pi"]
    return VarianceTable(table=table.loc[row_order], total=total)
