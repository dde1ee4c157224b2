"""
Similarity functions, anchor selection, width calibration and the two
similarity-based embeddings: the simplex map f (normalized similarities,
a finite discrete distribution) and the proximity map g (raw similarities).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Literal, Optional

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.spatial.distance import cdist
from scipy.special import logsumexp, softmax

from .data import average_pairwise_distance
from .errors import DataError, NumericalError

logger = logging.getLogger(__name__)

Family = Literal["gaussian", "angular"]

SIGMA_BRACKET = 1e10
MAX_BISECTIONS = 64
ENTROPY_TOL = 1e-5


@dataclass(frozen=True)
class AnchorSet:
    """Anchor points z_1..z_m and how they were chosen."""
    anchors: np.ndarray
    source: str = "all-training"

    def __post_init__(self):
        anchors = np.array(self.anchors, dtype=float, copy=True)
        if anchors.ndim != 2:
            raise DataError(f"anchors must be an m x d matrix, got shape {anchors.shape}")
        if anchors.shape[0] < 2:
            raise DataError("need at least 2 anchors")
        if not np.all(np.isfinite(anchors)):
            raise DataError("anchors contain non-finite values")
        anchors.setflags(write=False)
        object.__setattr__(self, "anchors", anchors)

    @property
    def m(self) -> int:
        return self.anchors.shape[0]

    @property
    def d(self) -> int:
        return self.anchors.shape[1]


@dataclass(frozen=True)
class Calibration:
    """How Gaussian widths were set: a multiple of tau shared by all anchors, or per-anchor entropy matching."""
    mode: Literal["shared", "entropy"]
    value: float

    def __post_init__(self):
        if self.mode not in ("shared", "entropy"):
            raise ValueError(f"unknown calibration mode '{self.mode}'")
        if self.mode == "shared" and not self.value > 0:
            raise ValueError(f"width multiplier must be positive, got {self.value}")
        if self.mode == "entropy" and not 0 < self.value < 1:
            raise ValueError(f"entropy fraction c must be in (0, 1), got {self.value}")

    @property
    def label(self) -> str:
        return f"{self.mode}={self.value:g}"


@dataclass(frozen=True)
class SimilarityConfig:
    family: Family = "gaussian"
    sigma: Optional[np.ndarray] = None
    calibration: Optional[Calibration] = None

    def __post_init__(self):
        if self.family not in ("gaussian", "angular"):
            raise ValueError(f"unknown similarity family '{self.family}'")
        if self.family == "gaussian":
            if self.sigma is None:
                raise ValueError("gaussian similarity needs a sigma vector")
            sigma = np.array(self.sigma, dtype=float, copy=True).reshape(-1)
            if not np.all(sigma > 0) or not np.all(np.isfinite(sigma)):
                raise ValueError("all sigma entries must be positive and finite")
            sigma.setflags(write=False)
            object.__setattr__(self, "sigma", sigma)

    @property
    def shared_sigma(self) -> Optional[float]:
        """The common width when every anchor uses the same sigma, else None."""
        if self.family != "gaussian" or not np.all(self.sigma == self.sigma[0]):
            return None
        return float(self.sigma[0])

    def sigma_for(self, m: int) -> np.ndarray:
        if self.sigma.size == 1:
            return np.full(m, float(self.sigma[0]))
        if self.sigma.size != m:
            raise ValueError(f"sigma has {self.sigma.size} entries for {m} anchors")
        return np.asarray(self.sigma)

    def describe(self) -> dict:
        out = {"family": self.family}
        if self.calibration is not None:
            out["calibration"] = {"mode": self.calibration.mode, "value": self.calibration.value}
        return out


@dataclass(frozen=True)
class DiscreteDistribution:
    """Probability masses of a finite discrete distribution (the image f(x))."""
    mass: np.ndarray

    def __post_init__(self):
        mass = np.array(self.mass, dtype=float, copy=True).reshape(-1)
        if np.any(mass < 0):
            raise ValueError("masses must be non-negative")
        if abs(mass.sum() - 1.0) > 1e-12 * max(1, mass.size):
            raise ValueError(f"masses sum to {mass.sum()!r}, not 1")
        mass.setflags(write=False)
        object.__setattr__(self, "mass", mass)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.mass, dtype=dtype)

    def __len__(self):
        return self.mass.size


@dataclass(frozen=True)
class ProximityVector:
    """Unnormalized similarities s_1(x)..s_m(x) (the image g(x))."""
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True).reshape(-1)
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("proximity values must be finite and non-negative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __len__(self):
        return self.values.size


@dataclass
class SigmaCalibration:
    """Outcome of per-anchor entropy calibration."""
    sigmas: np.ndarray
    entropies: np.ndarray
    target: float
    converged: np.ndarray
    warnings: List[str] = field(default_factory=list)


def gaussian_similarity(x, z, sigma: float) -> float:
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    diff = np.asarray(x, dtype=float) - np.asarray(z, dtype=float)
    return float(np.exp(-np.dot(diff, diff) / sigma))


def angular_similarity(x, z) -> float:
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    nx, nz = np.linalg.norm(x), np.linalg.norm(z)
    if nx == 0 or nz == 0:
        raise ValueError("angular similarity is undefined for a zero-norm vector")
    cosine = np.clip(np.dot(x, z) / (nx * nz), -1.0, 1.0)
    return float(1.0 - np.arccos(cosine) / math.pi)


def _as_rows(X) -> np.ndarray:
    return np.atleast_2d(np.asarray(X, dtype=float))


def _check_dims(X: np.ndarray, anchors: AnchorSet):
    if X.shape[1] != anchors.d:
        raise DataError(f"instances have {X.shape[1]} features, anchors have {anchors.d}")


def _gaussian_logits(X: np.ndarray, anchors: AnchorSet, cfg: SimilarityConfig) -> np.ndarray:
    sq = cdist(X, anchors.anchors, metric="sqeuclidean")
    return -sq / cfg.sigma_for(anchors.m)[None, :]


def _angular_matrix(X: np.ndarray, anchors: AnchorSet) -> np.ndarray:
    nx = np.linalg.norm(X, axis=1)
    nz = np.linalg.norm(anchors.anchors, axis=1)
    if np.any(nx == 0) or np.any(nz == 0):
        raise DataError("angular similarity is undefined for zero-norm instances or anchors")
    cosine = np.clip((X @ anchors.anchors.T) / np.outer(nx, nz), -1.0, 1.0)
    return 1.0 - np.arccos(cosine) / math.pi


def similarity_matrix(X, anchors: AnchorSet, cfg: SimilarityConfig) -> np.ndarray:
    """n x m matrix of s_k(x_i)."""
    X = _as_rows(X)
    _check_dims(X, anchors)
    if cfg.family == "gaussian":
        return np.exp(_gaussian_logits(X, anchors, cfg))
    return _angular_matrix(X, anchors)


def embed_proximity(X, anchors: AnchorSet, cfg: SimilarityConfig) -> np.ndarray:
    """Rows are g(x_i)."""
    return similarity_matrix(X, anchors, cfg)


def embed_simplex(X, anchors: AnchorSet, cfg: SimilarityConfig) -> np.ndarray:
    """Rows are f(x_i); Gaussian masses are normalized in log space."""
    X = _as_rows(X)
    _check_dims(X, anchors)
    if cfg.family == "gaussian":
        return softmax(_gaussian_logits(X, anchors, cfg), axis=1)
    return embed_similarity_matrix(_angular_matrix(X, anchors))


def embed_similarity_matrix(S) -> np.ndarray:
    """Normalize a precomputed non-negative similarity matrix row by row."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if np.any(S < 0) or not np.all(np.isfinite(S)):
        raise DataError("similarities must be finite and non-negative")
    totals = S.sum(axis=1)
    empty = np.flatnonzero(totals <= 0)
    if empty.size:
        raise NumericalError(
            f"all similarities are zero for {empty.size} instance(s) (first: row {empty[0]})"
        )
    return S / totals[:, None]


def map_to_simplex(x, anchors: AnchorSet, cfg: SimilarityConfig) -> DiscreteDistribution:
    return DiscreteDistribution(embed_simplex(np.atleast_2d(x), anchors, cfg)[0])


def map_to_proximity(x, anchors: AnchorSet, cfg: SimilarityConfig) -> ProximityVector:
    return ProximityVector(embed_proximity(np.atleast_2d(x), anchors, cfg)[0])


def select_anchors(train_X, fraction: Optional[float] = None, n_clusters: Optional[int] = None,
                   seed: Optional[int] = None) -> AnchorSet:
    """
    All training instances by default; a random fraction of them, or k-means
    cluster centers, when requested.
    """
    train_X = np.asarray(train_X, dtype=float)
    if fraction is not None and n_clusters is not None:
        raise ValueError("choose either an anchor fraction or a cluster count, not both")
    if fraction is not None:
        if not 0 < fraction <= 1:
            raise ValueError(f"anchor fraction must be in (0, 1], got {fraction}")
        rng = np.random.default_rng(seed)
        m = max(2, int(math.ceil(fraction * train_X.shape[0])))
        chosen = np.sort(rng.choice(train_X.shape[0], size=m, replace=False))
        return AnchorSet(train_X[chosen], source=f"random-fraction({fraction:g}, seed={seed})")
    if n_clusters is not None:
        if n_clusters < 2 or n_clusters > train_X.shape[0]:
            raise DataError(f"cluster count must be in 2..{train_X.shape[0]}, got {n_clusters}")
        centers, _ = kmeans2(train_X, n_clusters, minit="++", seed=seed)
        return AnchorSet(centers, source=f"kmeans({n_clusters}, seed={seed})")
    return AnchorSet(train_X, source="all-training")


def anchor_entropy(sq_dists: np.ndarray, sigma: float) -> float:
    """Shannon entropy, in nats, of p(x_i | z) proportional to exp(-||x_i - z||^2 / sigma)."""
    logits = -sq_dists / sigma
    log_z = logsumexp(logits)
    p = np.exp(logits - log_z)
    return float(log_z - np.dot(p, logits))


def calibrate_sigmas(train_X, anchors: AnchorSet, c: float, tau: Optional[float] = None
                     ) -> SigmaCalibration:
    """
    Per-anchor widths making the entropy of p(x_i | z_k) equal log(n * c).

    Bisection on log(sigma) over [1e-10 tau^2, 1e10 tau^2]; entropy is in nats
    and non-decreasing in sigma.
    """
    train_X = np.asarray(train_X, dtype=float)
    n = train_X.shape[0]
    if n < 2:
        raise DataError("need at least 2 training instances to calibrate widths")
    if not 0 < c < 1:
        raise ValueError(f"entropy fraction c must be in (0, 1), got {c}")
    if tau is None:
        tau = average_pairwise_distance(train_X)
    if tau <= 0:
        raise NumericalError("all training instances coincide; cannot calibrate widths")

    target = math.log(n * c)
    scale = tau * tau
    log_lo, log_hi = math.log(scale / SIGMA_BRACKET), math.log(scale * SIGMA_BRACKET)
    sq = cdist(anchors.anchors, train_X, metric="sqeuclidean")

    sigmas = np.empty(anchors.m)
    entropies = np.empty(anchors.m)
    converged = np.zeros(anchors.m, dtype=bool)
    warnings: List[str] = []

    for k in range(anchors.m):
        row = sq[k]
        if np.ptp(row) == 0:
            sigmas[k] = tau
            entropies[k] = math.log(n)
            warnings.append(f"anchor {k} is equidistant to all instances; sigma set to tau")
            continue
        lo, hi = log_lo, log_hi
        best_sigma, best_gap = math.exp(lo), math.inf
        for _ in range(MAX_BISECTIONS):
            mid = 0.5 * (lo + hi)
            sigma = math.exp(mid)
            h = anchor_entropy(row, sigma)
            gap = h - target
            if abs(gap) < abs(best_gap):
                best_sigma, best_gap = sigma, gap
            if abs(gap) <= ENTROPY_TOL:
                break
            if gap > 0:
                hi = mid
            else:
                lo = mid
        sigmas[k] = best_sigma
        entropies[k] = target + best_gap
        converged[k] = abs(best_gap) <= ENTROPY_TOL
        if not converged[k]:
            warnings.append(
                f"anchor {k}: entropy {entropies[k]:.6f} after {MAX_BISECTIONS} bisections, target {target:.6f}"
            )

    for message in warnings:
        logger.warning(message)
    return SigmaCalibration(
        sigmas=sigmas, entropies=entropies, target=target, converged=converged, warnings=warnings
    )


def build_similarity(family: Family, train_X, anchors: AnchorSet, calibration: Optional[Calibration],
                     tau: float) -> SimilarityConfig:
    """Resolve a family plus calibration rule into a concrete SimilarityConfig."""
    if family == "angular":
        return SimilarityConfig(family="angular")
    if calibration is None:
        calibration = Calibration("shared", 1.0)
    if calibration.mode == "shared":
        sigma = np.full(anchors.m, calibration.value * tau)
    else:
        sigma = calibrate_sigmas(train_X, anchors, calibration.value, tau=tau).sigmas
    return SimilarityConfig(family="gaussian", sigma=sigma, calibration=calibration)
