"""
Univariate FPCA of smoothed auto-covariances and score prediction
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Tuple

import numpy as np
import pandas as pd
from scipy import sparse

from .basis import PenaltyBlock
from .covsmooth import CovarianceModel
from .errors import DataError
from .fundata import FunDataset
from .plsengine import DesignBlock, PlsProblem, solve_fixed_lambda, symmetric_eigh

logger = logging.getLogger(__name__)


@dataclass
class UniEigenSet:
    """Eigenpairs of one (process, dimension) covariance operator"""
    process: str
    dim: str
    grid: np.ndarray
    eigenfunctions: np.ndarray        # (G, m), orthonormal under trapezoid quadrature
    eigenvalues: np.ndarray           # (m,), decreasing

    @property
    def m(self) -> int:
        return len(self.eigenvalues)

    def at(self, t) -> np.ndarray:
        """Eigenfunctions linearly interpolated at t, shape (len(t), m)"""
        t = np.asarray(t, dtype=float)
        return np.column_stack([np.interp(t, self.grid, f) for f in self.eigenfunctions.T]) \
            if self.m else np.zeros((t.size, 0))


@dataclass
class ScoreMatrix:
    """Predicted univariate scores of one process, one row per group level"""
    process: str
    levels: Tuple[str, ...]
    columns: Tuple[Tuple[str, int], ...]      # (dim, k)
    values: np.ndarray

    def block(self, dim: str) -> np.ndarray:
        idx = [j for j, (d, _) in enumerate(self.columns) if d == dim]
        return self.values[:, idx]

    def to_frame(self) -> pd.DataFrame:
        cols = [f"{d}:{k + 1}" for d, k in self.columns]
        return pd.DataFrame(self.values, index=list(self.levels), columns=cols)


def trapezoid_weights(grid) -> np.ndarray:
    """Trapezoid quadrature weights of an equidistant grid"""
    grid = np.asarray(grid, dtype=float)
    if grid.size < 2:
        raise DataError("quadrature grid needs at least two points")
    h = np.diff(grid)
    if not np.allclose(h, h[0], rtol=1e-8, atol=1e-12):
        raise DataError("quadrature grid must be equidistant")
    w = np.full(grid.size, h[0])
    w[0] = w[-1] = 0.5 * h[0]
    return w


def _orient(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so their largest-magnitude entry is positive"""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def univariate_fpca(K: np.ndarray, grid, process: str = "", dim: str = "",
                    tol: float = 1e-10) -> UniEigenSet:
    """
    Eigendecomposition of the integral operator with kernel K.

    Args:
        K: covariance evaluated on grid x grid
        grid: equidistant grid with at least 20 points
        tol: eigenvalues <= tol * largest eigenvalue are dropped

    Returns:
        UniEigenSet with all positive eigenpairs
    """
    grid = np.asarray(grid, dtype=float)
    K = np.asarray(K, dtype=float)
    if grid.size < 20:
        raise DataError(f"FPCA grid needs >= 20 points, got {grid.size}")
    if K.shape != (grid.size, grid.size):
        raise DataError(f"kernel shape {K.shape} does not match grid of {grid.size}")
    if np.max(np.abs(K - K.T)) > 1e-8:
        raise DataError("covariance kernel is not symmetric")

    w = trapezoid_weights(grid)
    sw = np.sqrt(w)
    A = sw[:, None] * K * sw[None, :]
    values, vectors = symmetric_eigh(A, "covariance operator")
    order = np.argsort(values)[::-1]
    values, vectors = values[order], vectors[:, order]

    top = values[0] if values.size else 0.0
    keep = values > tol * top if top > 0 else np.zeros(values.size, dtype=bool)
    values, vectors = values[keep], vectors[:, keep]
    functions = _orient(vectors / sw[:, None])

    logger.debug(f"FPCA {process}/{dim}: {keep.sum()} positive eigenvalues")
    return UniEigenSet(process, dim, grid, functions, values)


def predict_scores(centered: FunDataset, eigensets: Iterable[UniEigenSet],
                   cm: CovarianceModel) -> Dict[str, ScoreMatrix]:
    """
    Joint ridge prediction of all processes' univariate scores.

    Per dimension the design holds every process's eigenfunctions at the
    observation points, masked by group membership; score columns are penalized
    by 1/eigenvalue and observations weighted by 1/sigma2.
    """
    sets = [es for es in eigensets if es.m > 0]
    if not sets:
        raise DataError("no eigenfunctions to predict scores for")

    order = {g: i for i, g in enumerate(cm.processes)}
    sets.sort(key=lambda es: (order.get(es.process, len(order)), centered.dims.index(es.dim)))
    frame = centered.long_frame
    per_process: Dict[str, Dict[str, np.ndarray]] = {}

    for dim in centered.dims:
        dim_sets = [es for es in sets if es.dim == dim]
        if not dim_sets:
            continue
        rows = frame[frame["dim"] == dim]
        n = len(rows)
        t = rows["t"].to_numpy(dtype=float)
        blocks = []
        for es in dim_sets:
            layer = centered.layer(es.process)
            V = len(layer.levels)
            codes = rows[f"lvl:{es.process}"].to_numpy(dtype=int)
            phi = es.at(t)
            r = np.repeat(np.arange(n), es.m)
            c = (codes[:, None] * es.m + np.arange(es.m)[None, :]).ravel()
            X = sparse.csr_matrix((phi.ravel(), (r, c)), shape=(n, V * es.m))
            P = np.kron(np.eye(V), np.diag(1.0 / es.eigenvalues))
            blocks.append(DesignBlock(
                name=es.process, matrix=X,
                penalties=((PenaltyBlock(P, V * es.m), f"{dim}:{es.process}"),),
            ))

        weights = np.full(n, 1.0 / cm.sigma2[dim])
        problem = PlsProblem(rows["y"].to_numpy(dtype=float), blocks, weights)
        fit = solve_fixed_lambda(problem, {g: 1.0 for g in problem.groups})
        for es in dim_sets:
            V = len(centered.layer(es.process).levels)
            per_process.setdefault(es.process, {})[dim] = fit.block_coef(es.process).reshape(V, es.m)

    scores = {}
    for g, by_dim in per_process.items():
        dims = [d for d in centered.dims if d in by_dim]
        columns = tuple((d, k) for d in dims for k in range(by_dim[d].shape[1]))
        scores[g] = ScoreMatrix(
            process=g,
            levels=centered.layer(g).levels,
            columns=columns,
            values=np.hstack([by_dim[d] for d in dims]),
        )
    return scores
