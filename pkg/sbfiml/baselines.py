"""Comparators sharing the learner's loop: SBMML (Mahalanobis in proximity space) and the chi-square variant."""

import logging
from enum import Enum
from typing import Tuple

import numpy as np

from .geometry import (
    TransformL,
    chi2_distance_matrix,
    chi2_rows,
    chi2_rows_grad,
    sq_euclidean_rows,
    sq_euclidean_rows_grad,
)
from .learner import DistanceKernel, LearnerConfig, TrainReport, TripletSet, descend, train

logger = logging.getLogger(__name__)


SQ_EUCLIDEAN = DistanceKernel("sbmml", sq_euclidean_rows, sq_euclidean_rows_grad)
CHI2 = DistanceKernel("chi2", chi2_rows, chi2_rows_grad)

SBMML_MARGINS = (0.01, 0.1, 1.0, 10.0, 100.0)
CHI2_MARGINS = (1e-8, 1e-6, 1e-4, 1e-2)


class BaselineKind(str, Enum):
    SBMML = "sbmml"
    CHI2 = "chi2"

    @property
    def representation(self) -> str:
        """SBMML learns on raw proximities, chi-square on simplex masses."""
        return "proximity" if self is BaselineKind.SBMML else "simplex"

    @property
    def margins(self) -> Tuple[float, ...]:
        return SBMML_MARGINS if self is BaselineKind.SBMML else CHI2_MARGINS


def sbmml_distance(L, a, b) -> float:
    """Squared Mahalanobis distance ||L (a - b)||^2 between proximity vectors."""
    L = np.asarray(L, dtype=float)
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.shape != b.shape or L.ndim != 2 or L.shape[1] != a.size:
        raise ValueError(f"L of shape {L.shape} does not act on vectors of length {a.size} and {b.size}")
    return float(sq_euclidean_rows(L @ a, L @ b))


def sbmml_distance_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between transformed rows of A and B."""
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    sq = np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * A @ B.T
    return np.maximum(sq, 0.0)


def sbmml_init(k_latent: int, m: int) -> np.ndarray:
    # identity clipped to k rows, left unprojected
    return np.eye(k_latent, m)


def sbmml_train(proximity, T: TripletSet, cfg: LearnerConfig) -> Tuple[np.ndarray, TrainReport]:
    """Plain subgradient descent on the triplet objective with the squared Mahalanobis distance."""
    proximity = np.asarray(proximity, dtype=float)
    m = proximity.shape[1]
    return descend(proximity, T, cfg, sbmml_init(cfg.latent_size(m), m), SQ_EUCLIDEAN, project=False)


def chi2_train(embedded, T: TripletSet, cfg: LearnerConfig) -> Tuple[TransformL, TrainReport]:
    """The SBFIML loop, projection included, with the squared chi-square distance."""
    return train(embedded, T, cfg, kernel=CHI2)


def train_baseline(kind: BaselineKind, representation, T: TripletSet, cfg: LearnerConfig
                   ) -> Tuple[np.ndarray, TrainReport]:
    if kind is BaselineKind.SBMML:
        return sbmml_train(representation, T, cfg)
    L, report = chi2_train(representation, T, cfg)
    return L.entries, report


def baseline_distance_matrix(kind: BaselineKind, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    if kind is BaselineKind.SBMML:
        return sbmml_distance_matrix(A, B)
    return chi2_distance_matrix(A, B)
