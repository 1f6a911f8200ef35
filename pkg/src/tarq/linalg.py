"""Dense symmetric linear algebra shared by the solvers.

Everything here works in float64. Metrics are plain ``(n, n)`` ndarrays;
:func:`as_sym` is the single place where symmetry is enforced.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimMismatch, SingularMetric

PIVOT_FLOOR = 1e-300


def as_sym(H) -> np.ndarray:
    """Return ``H`` as a float64 matrix that is exactly symmetric.

    Averaging with the transpose is a no-op (bitwise) on inputs that are
    already symmetric, so repeated calls never drift.
    """
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != H.shape[1] or H.shape[0] < 1:
        raise DimMismatch(f"expected a non-empty square matrix, got shape {H.shape}")
    return 0.5 * (H + H.T)


@dataclass(frozen=True)
class CholFactor:
    """Upper-triangular ``upper`` with ``upper.T @ upper`` equal to the factored matrix."""

    upper: np.ndarray
    source_dim: int


def absolute_damping(H: np.ndarray, delta: float, relative: bool = True) -> float:
    if delta < 0:
        raise ValueError("damping must be non-negative")
    if relative:
        return float(delta * np.mean(np.diag(H)))
    return float(delta)


def _lower_cholesky(A: np.ndarray) -> np.ndarray:
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise SingularMetric("damped metric is not positive definite") from exc
    pivots = np.diag(L)
    if not np.all(np.isfinite(pivots)) or np.min(pivots) ** 2 < PIVOT_FLOOR:
        raise SingularMetric(f"pivot below {PIVOT_FLOOR:g}")
    return L


def damped_inverse(H, delta: float = 0.0, relative: bool = True) -> np.ndarray:
    """Return ``(H + d I)^-1`` where ``d`` is ``delta * mean(diag(H))`` in
    relative mode and ``delta`` itself otherwise."""
    H = as_sym(H)
    n = H.shape[0]
    A = H + absolute_damping(H, delta, relative) * np.eye(n)
    L = _lower_cholesky(A)
    Linv = solve_triangular(L, np.eye(n), lower=True)
    return as_sym(Linv.T @ Linv)


def cholesky_of_inverse(H, delta: float = 0.0, relative: bool = True) -> CholFactor:
    """Upper Cholesky factor ``U`` of the damped inverse, ``U.T @ U == (H + dI)^-1``.

    Row ``j`` of ``U`` divided by ``U[j, j]`` is the inverse-metric row of the
    columns not yet eliminated, which is what the column sweep propagates.
    """
    Hinv = damped_inverse(H, delta, relative)
    L = _lower_cholesky(Hinv)
    return CholFactor(upper=np.ascontiguousarray(L.T), source_dim=Hinv.shape[0])


def _check_pair(A: np.ndarray, B: np.ndarray, H: np.ndarray) -> None:
    if A.ndim != 2 or A.shape != B.shape:
        raise DimMismatch(f"operand shapes differ: {A.shape} vs {B.shape}")
    if H.shape != (A.shape[1], A.shape[1]):
        raise DimMismatch(f"metric shape {H.shape} does not match {A.shape[1]} columns")


def weighted_inner(A, B, H) -> float:
    """``tr(A H B^T)``, the Frobenius inner product under metric ``H``."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    H = np.asarray(H, dtype=np.float64)
    _check_pair(A, B, H)
    return float(np.einsum("ij,ij->", A @ H, B))


def weighted_loss(delta_w, H, tol: float = 1e-12) -> float:
    """``tr(dW H dW^T)``; tiny negative round-off is clamped to zero."""
    val = weighted_inner(delta_w, delta_w, H)
    if val < 0:
        scale = max(1.0, float(np.abs(np.asarray(H)).max()))
        if val < -tol * scale:
            raise ValueError(f"metric is not positive semidefinite (loss {val:g})")
        return 0.0
    return val
