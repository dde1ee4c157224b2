"""
Fisher information geometry of the probability simplex.

Distances between discrete distributions (Fisher/cosine, Hellinger, squared
chi-square), the column-stochastic transform L and the gradients of the
parametrized distances with respect to L, and the pullback metrics that the
similarity maps induce on the input space together with their diagnostics.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .eigen import is_symmetric, jacobi_eigh
from .errors import NumericalError
from .similarity import AnchorSet, SimilarityConfig, embed_proximity, embed_simplex

logger = logging.getLogger(__name__)

GRAD_EPS = 1e-12
MASS_FLOOR = 1e-300
COLUMN_SUM_TOL = 1e-10


@dataclass(frozen=True)
class MetricMatrix:
    """A symmetric positive semi-definite metric tensor at one point."""
    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float, copy=True)
        if not is_symmetric(entries):
            raise ValueError("metric matrix must be symmetric")
        entries = 0.5 * (entries + entries.T)
        scale = np.linalg.norm(entries)
        if entries.size and np.linalg.eigvalsh(entries).min() < -1e-8 * max(scale, 1e-300):
            raise ValueError("metric matrix must be positive semi-definite")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def quadratic_form(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return float(v @ self.entries @ v)


@dataclass(frozen=True)
class TransformL:
    """k x m matrix with non-negative entries and unit column sums."""
    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float, copy=True)
        if entries.ndim != 2:
            raise ValueError(f"L must be a matrix, got shape {entries.shape}")
        if np.any(entries < 0):
            raise ValueError("L must be non-negative")
        sums = entries.sum(axis=0)
        if np.any(np.abs(sums - 1.0) > COLUMN_SUM_TOL):
            raise ValueError(f"L columns must sum to 1 (worst {sums[np.argmax(np.abs(sums - 1))]!r})")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    @property
    def k(self) -> int:
        return self.entries.shape[0]

    @property
    def m(self) -> int:
        return self.entries.shape[1]

    def apply(self, P) -> np.ndarray:
        """Transform distributions stored as rows (or a single vector)."""
        P = np.asarray(P, dtype=float)
        if P.shape[-1] != self.m:
            raise ValueError(f"L has {self.m} columns, distributions have length {P.shape[-1]}")
        return P @ self.entries.T


def _pair(p, q) -> Tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=float).reshape(-1)
    q = np.asarray(q, dtype=float).reshape(-1)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.size} vs {q.size}")
    return p, q


# Row-wise distances and their gradients with respect to the transformed rows.
# A and B hold one distribution per row; the gradient pair (GA, GB) holds
# d dist / d A[r] and d dist / d B[r].

def fisher_rows(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    # 2 arccos(u) with u = sum sqrt(ab); also defined off the simplex, where L is perturbed
    u = np.sum(np.sqrt(np.clip(A, 0, None) * np.clip(B, 0, None)), axis=-1)
    return 2.0 * np.arccos(np.clip(u, 0.0, 1.0))


def fisher_rows_grad(A: np.ndarray, B: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    # -(1 / sqrt(1 - u^2)) sqrt(b / a) for A, mirrored for B; zero once u reaches 1 - eps
    u = np.asarray(np.sum(np.sqrt(np.clip(A, 0, None) * np.clip(B, 0, None)), axis=-1))
    active = u < 1.0 - GRAD_EPS
    scale = np.zeros_like(u)
    scale[active] = -1.0 / np.sqrt(1.0 - u[active] ** 2)
    ratio = np.sqrt(np.maximum(B, GRAD_EPS) / np.maximum(A, GRAD_EPS))
    return scale[..., None] * ratio, scale[..., None] / ratio


def _hellinger_form(p: np.ndarray, q: np.ndarray) -> float:
    # 2 arccos(u) rewritten as 4 arcsin(H / 2); equal on the simplex and exact for p == q
    diff = np.sqrt(np.clip(p, 0, None)) - np.sqrt(np.clip(q, 0, None))
    half_h = 0.5 * math.sqrt(float(np.sum(diff * diff)))
    return 4.0 * math.asin(min(half_h, math.sqrt(0.5)))


def chi2_rows(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    total = A + B
    diff = A - B
    terms = np.divide(diff * diff, total, out=np.zeros_like(total), where=total > 0)
    return 0.5 * np.sum(terms, axis=-1)


def chi2_rows_grad(A: np.ndarray, B: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    total = A + B
    denom = total * total
    diff = A - B
    ga = np.divide(0.5 * diff * (A + 3 * B), denom, out=np.zeros_like(total), where=total > 0)
    gb = np.divide(-0.5 * diff * (B + 3 * A), denom, out=np.zeros_like(total), where=total > 0)
    return ga, gb


def sq_euclidean_rows(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    diff = A - B
    return np.sum(diff * diff, axis=-1)


def sq_euclidean_rows_grad(A: np.ndarray, B: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    diff = 2.0 * (A - B)
    return diff, -diff


def fisher_distance_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Fisher distances between every row of A and every row of B."""
    u = np.sqrt(np.clip(A, 0, None)) @ np.sqrt(np.clip(B, 0, None)).T
    return 2.0 * np.arccos(np.clip(u, 0.0, 1.0))


def chi2_distance_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.stack([chi2_rows(row[None, :], B) for row in np.atleast_2d(A)])


def fisher_distance(p, q) -> float:
    """Fisher information (cosine) distance 2 arccos(sum sqrt(p q)), in [0, pi]."""
    p, q = _pair(p, q)
    return _hellinger_form(p, q)


def hellinger_distance(p, q) -> float:
    """sqrt(sum (sqrt p - sqrt q)^2); locally half the Fisher distance."""
    p, q = _pair(p, q)
    return float(np.sqrt(np.sum((np.sqrt(p) - np.sqrt(q)) ** 2)))


def chi2_distance(p, q) -> float:
    """Squared chi-square distance 1/2 sum (p - q)^2 / (p + q)."""
    p, q = _pair(p, q)
    return float(chi2_rows(p, q))


def _check_transform(L, p, q) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    L = np.asarray(L, dtype=float)
    p, q = _pair(p, q)
    if L.ndim != 2 or L.shape[1] != p.size:
        raise ValueError(f"L of shape {L.shape} does not act on length-{p.size} distributions")
    return L, p, q


def parametric_fisher_distance(L, p, q) -> float:
    L, p, q = _check_transform(L, p, q)
    return float(fisher_rows(L @ p, L @ q))


def parametric_fisher_gradient(L, p, q) -> np.ndarray:
    """
    d/dL of 2 arccos(u), u = sum_a sqrt((Lp)_a (Lq)_a):
    -(1 / sqrt(1 - u^2)) [sqrt((Lq)_a / (Lp)_a) p_b + sqrt((Lp)_a / (Lq)_a) q_b].

    Masses in the ratios are floored at 1e-12; once u reaches 1 - 1e-12 (p == q
    included) the zero matrix is returned.
    """
    L, p, q = _check_transform(L, p, q)
    ga, gb = fisher_rows_grad(L @ p, L @ q)
    return np.outer(ga, p) + np.outer(gb, q)


def parametric_chi2_distance(L, p, q) -> float:
    L, p, q = _check_transform(L, p, q)
    return float(chi2_rows(L @ p, L @ q))


def parametric_chi2_gradient(L, p, q) -> np.ndarray:
    L, p, q = _check_transform(L, p, q)
    ga, gb = chi2_rows_grad(L @ p, L @ q)
    return np.outer(ga, p) + np.outer(gb, q)


def fim_simplex(theta) -> MetricMatrix:
    """Fisher information metric in m-affine coordinates: delta_ij / theta_i + 1 / (1 - sum theta)."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    rest = 1.0 - theta.sum()
    if theta.size == 0 or np.any(theta <= 0) or rest <= 0:
        raise ValueError("theta must be an interior point of the simplex")
    return MetricMatrix(np.diag(1.0 / theta) + 1.0 / rest)


def pullback_via_coordinates(jacobian_theta: np.ndarray, theta) -> MetricMatrix:
    """J^T G_FIM(theta) J for the Jacobian of the m-affine coordinate map."""
    J = np.asarray(jacobian_theta, dtype=float)
    return MetricMatrix(J.T @ fim_simplex(theta).entries @ J)


def _central_jacobian(fn, x: np.ndarray) -> np.ndarray:
    h = 1e-6 * max(1.0, float(np.linalg.norm(x)))
    columns = []
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        columns.append((fn(x + step) - fn(x - step)) / (2 * h))
    return np.stack(columns, axis=1)


def _gaussian_log_gradients(x: np.ndarray, anchors: AnchorSet, cfg: SimilarityConfig) -> np.ndarray:
    """Rows are grad log s_i(x) = -(2 / sigma_i)(x - z_i)."""
    sigma = cfg.sigma_for(anchors.m)
    return -(2.0 / sigma)[:, None] * (x[None, :] - anchors.anchors)


def _point(x, anchors: AnchorSet) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != anchors.d:
        raise ValueError(f"x has {x.size} coordinates, anchors have {anchors.d}")
    return x


def pullback_metric_Q(x, anchors: AnchorSet, cfg: SimilarityConfig) -> MetricMatrix:
    """Pullback of the Euclidean metric through g: sum grad s_i grad s_i^T."""
    x = _point(x, anchors)
    if cfg.family == "gaussian":
        s = embed_proximity(x, anchors, cfg)[0]
        grads = s[:, None] * _gaussian_log_gradients(x, anchors, cfg)
    else:
        grads = _central_jacobian(lambda y: embed_proximity(y, anchors, cfg)[0], x)
    return MetricMatrix(grads.T @ grads)


def simplex_jacobian(x, anchors: AnchorSet, cfg: SimilarityConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Masses s-bar(x) and the m x d Jacobian whose rows are grad s-bar_i(x)."""
    x = _point(x, anchors)
    mass = embed_simplex(x, anchors, cfg)[0]
    if cfg.family == "gaussian":
        logs = _gaussian_log_gradients(x, anchors, cfg)
        expected = mass @ logs
        return mass, mass[:, None] * (logs - expected[None, :])
    return mass, _central_jacobian(lambda y: embed_simplex(y, anchors, cfg)[0], x)


def _fisher_pullback(mass: np.ndarray, jacobian: np.ndarray) -> np.ndarray:
    zero = int(np.count_nonzero(mass <= 0))
    if zero:
        logger.warning("%d mass(es) are exactly zero; floored at %g", zero, MASS_FLOOR)
    weights = 1.0 / np.maximum(mass, MASS_FLOOR)
    return jacobian.T @ (weights[:, None] * jacobian)


def pullback_metric_P(x, anchors: AnchorSet, cfg: SimilarityConfig) -> MetricMatrix:
    """
    Pullback of the Fisher metric through f.

    Computed as sum (1 / s-bar_i) grad s-bar_i grad s-bar_i^T with
    grad s-bar_i = s-bar_i (grad log s_i - E[grad log s]). The angular family
    takes a finite-difference Jacobian of the m-affine coordinates instead.
    """
    x = _point(x, anchors)
    mass, jacobian = simplex_jacobian(x, anchors, cfg)
    if cfg.family == "gaussian":
        return MetricMatrix(_fisher_pullback(mass, jacobian))
    theta = mass[:-1]
    if np.any(theta <= 0) or mass[-1] <= 0:
        raise NumericalError("angular pullback needs every mass strictly positive")
    return pullback_via_coordinates(jacobian[:-1], theta)


def pullback_metric_P_closed_form(x, anchors: AnchorSet, cfg: SimilarityConfig) -> MetricMatrix:
    """(4 / sigma^2) sum s-bar_i (z_i - E z)(z_i - E z)^T, for a shared Gaussian width."""
    sigma = cfg.shared_sigma
    if sigma is None:
        raise ValueError("the closed form needs a Gaussian similarity with one shared sigma")
    x = _point(x, anchors)
    mass = embed_simplex(x, anchors, cfg)[0]
    centered = anchors.anchors - mass @ anchors.anchors
    return MetricMatrix((4.0 / sigma ** 2) * (centered.T @ (mass[:, None] * centered)))


def compare_pullback_forms(x, anchors: AnchorSet, cfg: SimilarityConfig, rtol: float = 1e-8) -> float:
    """Relative gap between the general and closed-form pullback of f; logged when above rtol."""
    general = pullback_metric_P(x, anchors, cfg).entries
    closed = pullback_metric_P_closed_form(x, anchors, cfg).entries
    gap = float(np.linalg.norm(general - closed) / max(np.linalg.norm(closed), 1e-300))
    if gap > rtol:
        logger.warning("pullback forms disagree at x=%s: relative gap %.3e", np.asarray(x).tolist(), gap)
    return gap


def pullback_metric_learned(x, anchors: AnchorSet, cfg: SimilarityConfig, L) -> MetricMatrix:
    """Local metric of the learned map x -> L f(x): sum_a (1 / q_a) grad q_a grad q_a^T."""
    L = np.asarray(L, dtype=float)
    mass, jacobian = simplex_jacobian(x, anchors, cfg)
    if L.shape[1] != mass.size:
        raise ValueError(f"L has {L.shape[1]} columns for {mass.size} anchors")
    return MetricMatrix(_fisher_pullback(L @ mass, L @ jacobian))


def straight_line_distance(x, y, G) -> float:
    """sqrt((x - y)^T G (x - y)) with G held fixed along the segment."""
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return float(math.sqrt(max(0.0, diff @ np.asarray(G, dtype=float) @ diff)))


def principal_directions(G, m_dirs: int) -> np.ndarray:
    """
    Eigenvectors of the m_dirs largest eigenvalues, as orthonormal columns.

    Ties keep the original index order; each column is signed so that its
    first non-negligible component is positive.
    """
    G = np.asarray(G, dtype=float)
    if not is_symmetric(G):
        raise ValueError("principal_directions needs a symmetric matrix")
    if not 1 <= m_dirs <= G.shape[0]:
        raise ValueError(f"m_dirs must be in 1..{G.shape[0]}, got {m_dirs}")
    values, vectors = jacobi_eigh(G)
    order = sorted(range(values.size), key=lambda i: (-values[i], i))[:m_dirs]
    U = vectors[:, order]
    for j in range(U.shape[1]):
        nonzero = np.flatnonzero(np.abs(U[:, j]) > 1e-12)
        if nonzero.size and U[nonzero[0], j] < 0:
            U[:, j] = -U[:, j]
    return U


@dataclass
class EquidistanceCurve:
    """Points at metric distance ``radius`` from ``center``; null directions are listed, not drawn."""
    center: np.ndarray
    radius: float
    points: np.ndarray
    unbounded_directions: List[np.ndarray] = field(default_factory=list)


def equidistance_samples(x0, G, radius: float, n_samples: int) -> EquidistanceCurve:
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    G = np.asarray(G, dtype=float)
    if x0.size != 2 or G.shape != (2, 2):
        raise ValueError("equi-distance curves are only emitted for 2-D inputs")
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if n_samples < 1:
        raise ValueError("need at least one sample")

    values, vectors = jacobi_eigh(G)
    top = max(float(values.max()), 0.0)
    null = values <= 1e-12 * top if top > 0 else np.ones_like(values, dtype=bool)
    inv_sqrt = np.where(null, 0.0, 1.0 / np.sqrt(np.where(null, 1.0, values)))
    transform = vectors @ np.diag(inv_sqrt) @ vectors.T

    angles = 2.0 * math.pi * np.arange(n_samples) / n_samples
    circle = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    points = x0[None, :] + radius * circle @ transform.T
    unbounded = [vectors[:, i].copy() for i in np.flatnonzero(null)]
    return EquidistanceCurve(center=x0, radius=radius, points=points, unbounded_directions=unbounded)


def lemma2_ratio(x, v, h: float, anchors: AnchorSet, cfg: SimilarityConfig) -> Optional[float]:
    """
    Fisher distance between f(x + h v) and f(x) over the pullback length h sqrt(v^T G*_P v).

    Tends to 1 as h -> 0. Returns None when v lies in the null space of the
    pullback metric, where the ratio is not defined.
    """
    if not h > 0:
        raise ValueError(f"step h must be positive, got {h}")
    x = _point(x, anchors)
    v = np.asarray(v, dtype=float).reshape(-1)
    G = pullback_metric_P(x, anchors, cfg)
    denominator = h * math.sqrt(max(0.0, G.quadratic_form(v)))
    if denominator < 1e-14:
        logger.info("direction lies in the pullback null space; ratio not applicable")
        return None
    masses = embed_simplex(np.stack([x + h * v, x]), anchors, cfg)
    return fisher_distance(masses[0], masses[1]) / denominator
