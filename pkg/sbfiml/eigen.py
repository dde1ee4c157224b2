"""Cyclic Jacobi eigensolver for small dense symmetric matrices."""

import math
from typing import Tuple

import numpy as np

from .errors import NumericalError

OFF_DIAGONAL_TOL = 1e-12
MAX_SWEEPS = 100


def is_symmetric(A: np.ndarray, tol: float = 1e-10) -> bool:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        return False
    scale = max(1.0, float(np.abs(A).max(initial=0.0)))
    return bool(np.all(np.abs(A - A.T) <= tol * scale))


def _off_norm(A: np.ndarray) -> float:
    return math.sqrt(max(0.0, float(np.sum(A * A) - np.sum(np.diag(A) ** 2))))


def jacobi_eigh(A, tol: float = OFF_DIAGONAL_TOL, max_sweeps: int = MAX_SWEEPS
                ) -> Tuple[np.ndarray, np.ndarray]:
    """
    Eigenvalues and eigenvectors of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps over all (p, q) pairs until the off-diagonal Frobenius norm is at
    most ``tol`` times the norm of A. Returns (w, V) with A V = V diag(w);
    column i of V belongs to diagonal position i, no sorting is applied.
    """
    A = np.array(A, dtype=float, copy=True)
    if not is_symmetric(A):
        raise ValueError("jacobi_eigh needs a symmetric matrix")
    A = 0.5 * (A + A.T)
    n = A.shape[0]
    V = np.eye(n)
    threshold = tol * max(np.linalg.norm(A), np.finfo(float).tiny)

    for _ in range(max_sweeps):
        if _off_norm(A) <= threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c

                col_p = A[:, p].copy()
                col_q = A[:, q].copy()
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                row_p = A[p, :].copy()
                row_q = A[q, :].copy()
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
                A[p, q] = A[q, p] = 0.0

                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        if _off_norm(A) > threshold:
            raise NumericalError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")

    return np.diag(A).copy(), V
