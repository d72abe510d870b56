"""
Weighted penalized least squares with smoothing-parameter selection

All regression stages hand a PlsProblem to this module: the mean fits, the
covariance smoother and the final mixed model.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, sparse
from scipy.optimize import minimize_scalar

from .basis import PenaltyBlock
from .config import SmoothingConfig, SmoothingCriterion
from .errors import ConfigError, DataError, NumericError, RankDeficiencyError, SingularSystemError

logger = logging.getLogger(__name__)

RIDGE_FACTOR = 1e-10


@dataclass(frozen=True)
class DesignBlock:
    """Columns of the design sharing one set of penalties"""
    name: str
    matrix: object                                              # ndarray or scipy.sparse matrix
    penalties: Tuple[Tuple[PenaltyBlock, str], ...] = ()        # (penalty, lambda group)

    @property
    def n_cols(self) -> int:
        return self.matrix.shape[1]


class PlsProblem:
    """
    Penalized least squares problem

    The solver only needs the normal equations, so a problem can either carry
    its design blocks or be built directly from accumulated X'WX, X'Wy and y'Wy.
    """

    def __init__(self, response, blocks: Sequence[DesignBlock], obs_weights=None):
        self.response = np.asarray(response, dtype=float).ravel()
        self.blocks: List[DesignBlock] = list(blocks)
        n = self.response.size

        if obs_weights is None:
            obs_weights = np.ones(n)
        self.obs_weights = np.asarray(obs_weights, dtype=float).ravel()

        if self.obs_weights.size != n:
            raise DataError(f"{self.obs_weights.size} weights for {n} observations")
        if np.any(self.obs_weights <= 0) or not np.all(np.isfinite(self.obs_weights)):
            raise DataError("observation weights must be finite and positive")
        for block in self.blocks:
            if block.matrix.shape[0] != n:
                raise DataError(
                    f"block '{block.name}' has {block.matrix.shape[0]} rows, expected {n}"
                )
        self._init_layout([(b.name, b.n_cols, b.penalties) for b in self.blocks])
        self.n_obs = n
        self._normal = None

    def _init_layout(self, layout):
        self.block_slices: Dict[str, slice] = {}
        self._penalty_terms: List[Tuple[slice, PenaltyBlock, str]] = []
        start = 0
        for name, n_cols, penalties in layout:
            sl = slice(start, start + n_cols)
            if name in self.block_slices:
                raise ConfigError(f"duplicate design block name '{name}'")
            self.block_slices[name] = sl
            for penalty, group in penalties:
                if penalty.size != n_cols:
                    raise ConfigError(
                        f"penalty of size {penalty.size} on block '{name}' with {n_cols} columns"
                    )
                self._penalty_terms.append((sl, penalty, group))
            start += n_cols
        self.n_coef = start
        self._group_cache: Dict[str, np.ndarray] = {}

    @classmethod
    def from_normal_equations(cls, XtWX, XtWy, yWy: float, n_obs: int, layout) -> "PlsProblem":
        """
        Build a problem from accumulated sufficient statistics.

        Args:
            layout: list of (block name, column count, penalties)
        """
        problem = cls.__new__(cls)
        problem.response = None
        problem.blocks = []
        problem.obs_weights = None
        problem._init_layout(layout)
        if XtWX.shape != (problem.n_coef, problem.n_coef):
            raise DataError(f"X'WX has shape {XtWX.shape}, layout has {problem.n_coef} columns")
        problem.n_obs = int(n_obs)
        problem._normal = (np.asarray(XtWX, float), np.asarray(XtWy, float).ravel(), float(yWy))
        return problem

    @property
    def has_design(self) -> bool:
        return bool(self.blocks)

    @property
    def groups(self) -> List[str]:
        """Lambda groups in order of first appearance"""
        seen: List[str] = []
        for _, _, group in self._penalty_terms:
            if group not in seen:
                seen.append(group)
        return seen

    def design(self) -> sparse.csr_matrix:
        return sparse.hstack([sparse.csr_matrix(b.matrix) for b in self.blocks], format="csr")

    def normal_equations(self) -> Tuple[np.ndarray, np.ndarray, float]:
        if self._normal is None:
            X = self.design()
            w = self.obs_weights
            XtW = X.T.multiply(w[None, :]).tocsr()
            XtWX = XtW @ X
            XtWX = XtWX.toarray() if sparse.issparse(XtWX) else np.asarray(XtWX)
            XtWy = np.asarray(XtW @ self.response).ravel()
            yWy = float(np.sum(w * self.response ** 2))
            self._normal = (0.5 * (XtWX + XtWX.T), XtWy, yWy)
        return self._normal

    def penalty_matrix(self, group: str) -> np.ndarray:
        """All penalties of one lambda group embedded in the full coefficient space"""
        if group not in self._group_cache:
            S = np.zeros((self.n_coef, self.n_coef))
            for sl, penalty, g in self._penalty_terms:
                if g == group:
                    S[sl, sl] += penalty.matrix
            self._group_cache[group] = S
        return self._group_cache[group]

    def total_penalty(self, lambdas: Dict[str, float]) -> np.ndarray:
        S = np.zeros((self.n_coef, self.n_coef))
        for group in self.groups:
            lam = lambdas.get(group)
            if lam is None:
                raise ConfigError(f"no smoothing parameter given for group '{group}'")
            if lam < 0:
                raise ConfigError(f"negative smoothing parameter for group '{group}': {lam}")
            if lam > 0:
                S += lam * self.penalty_matrix(group)
        return S


@dataclass
class PlsFit:
    """Solution of a PlsProblem"""
    coefficients: np.ndarray
    lambdas: Dict[str, float]
    coef_covariance: np.ndarray         # scale * (X'WX + S)^-1
    edf: float
    scale: float
    rss: float                          # weighted residual sum of squares
    n_obs: int
    block_slices: Dict[str, slice]
    criterion: float = float("nan")
    fitted: Optional[np.ndarray] = None

    def block_coef(self, name: str) -> np.ndarray:
        return self.coefficients[self.block_slices[name]]

    def to_dict(self) -> dict:
        return {
            "lambdas": dict(self.lambdas),
            "edf": self.edf,
            "scale": self.scale,
            "rss": self.rss,
            "n_obs": self.n_obs,
            "criterion": self.criterion,
            "coefficients": {
                name: self.coefficients[sl].tolist() for name, sl in self.block_slices.items()
            },
        }


@dataclass
class _Solution:
    coef: np.ndarray
    factor: tuple
    log_det: float
    edf: float
    rss: float
    penalty: float
    S: np.ndarray = field(repr=False)


def symmetric_eigh(A: np.ndarray, what: str = "matrix") -> Tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of the symmetric part of A (ascending)"""
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise NumericError(f"{what} has non-finite entries")
    try:
        return np.linalg.eigh(0.5 * (A + A.T))
    except np.linalg.LinAlgError as e:
        raise NumericError(f"eigendecomposition of {what} failed: {e}") from e


def _factorize(A: np.ndarray) -> tuple:
    try:
        return linalg.cho_factor(A, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError):
        ridge = RIDGE_FACTOR * max(np.trace(A), 1.0)
        logger.warning(f"Cholesky failed on penalized system, retrying with ridge {ridge:.3e}")
        try:
            return linalg.cho_factor(A + ridge * np.eye(A.shape[0]), lower=True)
        except (linalg.LinAlgError, ValueError) as e:
            raise SingularSystemError(f"penalized system is singular: {e}") from e


def _solve(problem: PlsProblem, lambdas: Dict[str, float]) -> _Solution:
    XtWX, XtWy, yWy = problem.normal_equations()
    S = problem.total_penalty(lambdas)
    factor = _factorize(XtWX + S)
    coef = linalg.cho_solve(factor, XtWy)
    edf = float(np.trace(linalg.cho_solve(factor, XtWX)))
    rss = float(yWy - 2.0 * coef @ XtWy + coef @ XtWX @ coef)
    log_det = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    return _Solution(
        coef=coef, factor=factor, log_det=log_det, edf=edf,
        rss=max(rss, 0.0), penalty=float(coef @ S @ coef), S=S,
    )


def _gcv(problem: PlsProblem, sol: _Solution) -> float:
    n = problem.n_obs
    denom = n - sol.edf
    if denom <= 0:
        return float("inf")
    return n * sol.rss / denom ** 2


class _RemlProfile:
    """Laplace restricted likelihood with the scale profiled out"""

    def __init__(self, problem: PlsProblem):
        unit = problem.total_penalty({g: 1.0 for g in problem.groups})
        eig, _ = symmetric_eigh(unit, "penalty")
        tol = 1e-10 * max(eig.max(), 1.0)
        self.rank = int(np.sum(eig > tol))
        self.null_dim = problem.n_coef - self.rank

    def __call__(self, problem: PlsProblem, sol: _Solution) -> float:
        dof = problem.n_obs - self.null_dim
        if dof <= 0:
            return float("inf")
        phi = (sol.rss + sol.penalty) / dof
        if phi <= 0:
            return float("-inf")
        eig, _ = symmetric_eigh(sol.S, "penalty")
        top = np.sort(eig)[::-1][:self.rank]
        if self.rank and top.min() <= 0:
            return float("inf")
        log_det_s = float(np.sum(np.log(top))) if self.rank else 0.0
        return dof * (1.0 + np.log(2.0 * np.pi * phi)) + sol.log_det - log_det_s


def _finish(problem: PlsProblem, lambdas: Dict[str, float], sol: _Solution,
            criterion: float = float("nan")) -> PlsFit:
    A_inv = linalg.cho_solve(sol.factor, np.eye(problem.n_coef))
    A_inv = 0.5 * (A_inv + A_inv.T)

    fitted = None
    rss = sol.rss
    if problem.has_design:
        fitted = np.asarray(problem.design() @ sol.coef).ravel()
        resid = problem.response - fitted
        rss = float(np.sum(problem.obs_weights * resid ** 2))

    denom = max(problem.n_obs - sol.edf, 1e-8)
    scale = rss / denom
    return PlsFit(
        coefficients=sol.coef,
        lambdas=dict(lambdas),
        coef_covariance=scale * A_inv,
        edf=sol.edf,
        scale=scale,
        rss=rss,
        n_obs=problem.n_obs,
        block_slices=dict(problem.block_slices),
        criterion=criterion,
        fitted=fitted,
    )


def solve_fixed_lambda(p: PlsProblem, lambdas: Dict[str, float]) -> PlsFit:
    """
    Solve the penalized normal equations for given smoothing parameters.

    Returns:
        PlsFit with Bayesian posterior covariance scale * (X'WX + S)^-1
    """
    sol = _solve(p, lambdas)
    return _finish(p, lambdas, sol)


def select_lambda(p: PlsProblem, criterion: SmoothingCriterion = SmoothingCriterion.GCV,
                  settings: SmoothingConfig = None) -> PlsFit:
    """
    Coordinate-wise smoothing-parameter search.

    Each group is scanned over a log-spaced grid, then refined by a bounded
    scalar search between the neighbours of the best grid point. Sweeps repeat
    until the criterion changes by less than the tolerance.
    """
    settings = settings or SmoothingConfig()
    groups = p.groups
    if not groups:
        raise ConfigError("select_lambda needs at least one penalized block")

    score = _gcv if criterion == SmoothingCriterion.GCV else _RemlProfile(p)
    log_grid = np.linspace(np.log10(settings.lambda_min), np.log10(settings.lambda_max),
                           settings.lambda_grid_points)

    def evaluate(log_lam: Dict[str, float]) -> float:
        lambdas = {g: 10.0 ** v for g, v in log_lam.items()}
        try:
            value = score(p, _solve(p, lambdas))
        except NumericError:
            return float("inf")
        return value if np.isfinite(value) else float("inf")

    log_lam = {g: float(log_grid[len(log_grid) // 2]) for g in groups}
    current = evaluate(log_lam)
    any_finite = np.isfinite(current)

    for sweep in range(settings.max_sweeps):
        previous = current
        for g in groups:
            values = np.array([evaluate({**log_lam, g: x}) for x in log_grid])
            if not np.isfinite(values).any():
                continue
            any_finite = True
            best = int(np.argmin(values))
            log_lam[g], current = float(log_grid[best]), float(values[best])

            lo = log_grid[max(best - 1, 0)]
            hi = log_grid[min(best + 1, len(log_grid) - 1)]
            res = minimize_scalar(
                lambda x: evaluate({**log_lam, g: x}),
                bounds=(lo, hi), method="bounded",
                options={"xatol": settings.log_lambda_tol},
            )
            if res.fun < current:
                log_lam[g], current = float(res.x), float(res.fun)

        logger.debug(f"lambda sweep {sweep + 1}: criterion={current:.6g}")
        if np.isfinite(previous) and abs(previous - current) < settings.criterion_tol:
            break

    if not any_finite:
        raise NumericError(f"{criterion.value} criterion is non-finite on the whole lambda grid")

    lambdas = {g: 10.0 ** v for g, v in log_lam.items()}
    return _finish(p, lambdas, _solve(p, lambdas), criterion=current)


def pointwise_se(fit: PlsFit, new_design) -> np.ndarray:
    """sqrt(diag(D C D')) for the rows of new_design"""
    D = np.atleast_2d(np.asarray(new_design, dtype=float))
    C = fit.coef_covariance
    if D.shape[1] != C.shape[0]:
        raise DataError(f"design has {D.shape[1]} columns, fit has {C.shape[0]} coefficients")
    var = np.einsum("ij,jk,ik->i", D, C, D)
    return np.sqrt(np.clip(var, 0.0, None))


def check_identifiability(p: PlsProblem, tol: float = 1e-9):
    """
    Raise RankDeficiencyError when the design restricted to the penalty null
    space does not have full column rank.
    """
    XtWX, _, _ = p.normal_equations()
    unit = p.total_penalty({g: 1.0 for g in p.groups}) if p.groups else np.zeros_like(XtWX)
    eig, vec = symmetric_eigh(unit, "penalty")
    null = vec[:, eig <= 1e-10 * max(eig.max(initial=0.0), 1.0)]
    if null.shape[1] == 0:
        return

    restricted = null.T @ XtWX @ null
    r_eig, _ = symmetric_eigh(restricted, "null-space design")
    top = max(r_eig.max(initial=0.0), 1e-300)
    rank = int(np.sum(r_eig > tol * top))
    if rank < null.shape[1]:
        unpenalized = [b for b in p.block_slices
                       if not any(sl == p.block_slices[b] for sl, _, _ in p._penalty_terms)]
        raise RankDeficiencyError(
            f"unpenalized part of the design is rank deficient "
            f"(rank {rank} < {null.shape[1]}); unpenalized blocks: {unpenalized or 'none'}"
        )
