"""
B-spline bases and difference penalties

Every regression stage (mean fits, covariance smoothing, final model) builds
its design from these helpers.
"""

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import null_space

from .errors import ConfigError, DomainError


@dataclass(frozen=True)
class SplineSpec:
    """Equidistant B-spline basis on [0, 1]"""
    degree: int = 3              # 3 = cubic P-spline
    num_basis: int = 8           # 8 for fixed effects, 5 for covariance surfaces
    penalty_order: int = 2       # difference order (1-3)

    def __post_init__(self):
        if self.degree < 0:
            raise ConfigError(f"degree must be >= 0, got {self.degree}")
        if self.num_basis < self.degree + 1:
            raise ConfigError(
                f"num_basis ({self.num_basis}) must be >= degree + 1 ({self.degree + 1})"
            )
        if not 0 <= self.penalty_order < self.num_basis:
            raise ConfigError(
                f"penalty_order ({self.penalty_order}) must be in [0, num_basis)"
            )

    @property
    def knots(self) -> np.ndarray:
        """Clamped knot vector: interior knots equidistant, boundaries repeated"""
        n_interior = self.num_basis - self.degree - 1
        interior = np.linspace(0.0, 1.0, n_interior + 2)[1:-1]
        return np.concatenate([
            np.zeros(self.degree + 1),
            interior,
            np.ones(self.degree + 1),
        ])

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "num_basis": self.num_basis,
            "penalty_order": self.penalty_order,
        }


@dataclass(frozen=True)
class PenaltyBlock:
    """Symmetric PSD penalty matrix with its rank"""
    matrix: np.ndarray
    rank: int

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def _check_unit_interval(points: np.ndarray):
    if points.size and (points.min() < 0.0 or points.max() > 1.0):
        bad = points[(points < 0.0) | (points > 1.0)]
        raise DomainError(f"evaluation points outside [0, 1]: {bad[:5].tolist()}")


def bspline_design(spec: SplineSpec, points) -> np.ndarray:
    """
    B-spline design matrix

    Args:
        spec: basis specification
        points: evaluation points in [0, 1]

    Returns:
        (len(points), num_basis) array whose rows sum to one
    """
    points = np.asarray(points, dtype=float).ravel()
    _check_unit_interval(points)
    if points.size == 0:
        return np.zeros((0, spec.num_basis))

    design = BSpline.design_matrix(points, spec.knots, spec.degree).toarray()
    return design


def difference_penalty(num_basis: int, order: int) -> PenaltyBlock:
    """P = D'D for the order-th difference operator D"""
    if order < 0 or order >= num_basis:
        raise ConfigError(f"difference order {order} invalid for {num_basis} basis functions")
    D = np.diff(np.eye(num_basis), n=order, axis=0)
    return PenaltyBlock(matrix=D.T @ D, rank=num_basis - order)


def row_tensor(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Row-wise Kronecker product; column j*b + k is A[:, j] * B[:, k]"""
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    if A.shape[0] != B.shape[0]:
        raise ConfigError(f"row_tensor row mismatch: {A.shape[0]} vs {B.shape[0]}")
    h = A.shape[0]
    return (A[:, :, None] * B[:, None, :]).reshape(h, A.shape[1] * B.shape[1])


def tensor_penalty(Px: PenaltyBlock, Pt: PenaltyBlock, lx: float, lt: float) -> PenaltyBlock:
    """Kronecker-sum penalty lx * Px (x) I + lt * I (x) Pt"""
    if lx < 0 or lt < 0:
        raise ConfigError(f"smoothing parameters must be >= 0 (got {lx}, {lt})")
    bx, bt = Px.size, Pt.size
    matrix = lx * np.kron(Px.matrix, np.eye(bt)) + lt * np.kron(np.eye(bx), Pt.matrix)
    rank = int(np.linalg.matrix_rank(matrix)) if matrix.any() else 0
    return PenaltyBlock(matrix=matrix, rank=rank)


def centering_constraint(design: np.ndarray) -> np.ndarray:
    """
    Null-space basis Z of the column sums of a marginal design.

    design @ Z sums to zero over the observations, which keeps a smooth covariate
    effect apart from the functional intercept.
    """
    col_sums = np.atleast_2d(design.sum(axis=0))
    return null_space(col_sums)


def symmetric_expansion(num_basis: int) -> np.ndarray:
    """
    Map upper-triangle coefficients of a symmetric (b x b) matrix onto the
    vectorized full matrix, shape (b*b, b*(b+1)/2).
    """
    pairs = [(k, l) for k in range(num_basis) for l in range(k, num_basis)]
    M = np.zeros((num_basis * num_basis, len(pairs)))
    for col, (k, l) in enumerate(pairs):
        M[k * num_basis + l, col] = 1.0
        M[l * num_basis + k, col] = 1.0
    return M


def upper_to_symmetric(coef: np.ndarray, num_basis: int) -> np.ndarray:
    """Rebuild the symmetric coefficient matrix from upper-triangle values"""
    C = np.zeros((num_basis, num_basis))
    iu = np.triu_indices(num_basis)
    C[iu] = coef
    C = C + np.triu(C, 1).T
    return C
