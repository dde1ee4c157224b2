"""
Large-margin learning of the column-stochastic transform L.

Triplet constraints come from nearest neighbors in the input space; the
objective is the hinge loss over triplets plus alpha times the distances of
target pairs, minimized by projected subgradient descent with a column-wise
simplex projection after every step.
"""

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from .data import Dataset
from .errors import DataError
from .geometry import TransformL, fisher_rows, fisher_rows_grad

logger = logging.getLogger(__name__)

STEP_DECAY = 50.0


@dataclass(frozen=True)
class TripletSet:
    """Triples (i, j, k): j a same-class neighbor of i, k a different-class neighbor of i."""
    triples: np.ndarray
    target_pairs: np.ndarray

    def __post_init__(self):
        triples = np.asarray(self.triples, dtype=int).reshape(-1, 3)
        pairs = np.asarray(self.target_pairs, dtype=int).reshape(-1, 2)
        if triples.size and np.unique(triples, axis=0).shape[0] != triples.shape[0]:
            raise ValueError("triplet set contains duplicates")
        triples.setflags(write=False)
        pairs.setflags(write=False)
        object.__setattr__(self, "triples", triples)
        object.__setattr__(self, "target_pairs", pairs)

    def __len__(self):
        return self.triples.shape[0]

    def max_index(self) -> int:
        both = np.concatenate([self.triples.reshape(-1), self.target_pairs.reshape(-1)])
        return int(both.max(initial=-1))


@dataclass
class LearnerConfig:
    alpha: float = 1.0
    gamma: float = 1e-2
    k_latent: Optional[int] = None
    latent_fraction: float = 0.1
    k1: int = 3
    k2: int = 10
    max_iters: int = 1000
    step0: float = 0.1
    tol: float = 1e-5
    patience: int = 50

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        if not self.gamma > 0:
            raise ValueError(f"margin gamma must be positive, got {self.gamma}")
        if self.k_latent is not None and self.k_latent < 1:
            raise ValueError(f"k_latent must be at least 1, got {self.k_latent}")
        if self.k1 < 1 or self.k2 < 1:
            raise ValueError("neighbor counts k1 and k2 must be at least 1")
        if self.step0 <= 0 or self.tol <= 0:
            raise ValueError("step0 and tol must be positive")

    def latent_size(self, m: int) -> int:
        """Configured k_latent, else ceil(latent_fraction * m), capped at m."""
        k = self.k_latent if self.k_latent is not None else int(math.ceil(self.latent_fraction * m))
        return max(1, min(k, m))


@dataclass
class TrainReport:
    objective_trace: List[float] = field(default_factory=list)
    iterations: int = 0
    active_triplets_final: int = 0
    wall_time: float = 0.0
    best_iteration: int = 0
    stop_reason: str = ""

    @property
    def best_objective(self) -> float:
        return min(self.objective_trace)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DistanceKernel:
    """A row-wise distance on transformed representations and its gradient."""
    name: str
    rows: Callable[[np.ndarray, np.ndarray], np.ndarray]
    rows_grad: Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]


FISHER = DistanceKernel("fisher", fisher_rows, fisher_rows_grad)


def generate_triplets(train: Dataset, k1: int, k2: int) -> TripletSet:
    """
    For every instance, its k1 nearest same-class and k2 nearest
    different-class neighbors (Euclidean, ties by index); triples are their
    cross product and target pairs the same-class neighbor pairs.
    """
    if k1 < 1 or k2 < 1:
        raise ValueError("k1 and k2 must be at least 1")
    X, y = train.instances, train.labels
    distances = cdist(X, X)
    index = np.arange(train.n)
    triples, pairs = [], []
    lonely = set()

    for i in range(train.n):
        same = np.flatnonzero((y == y[i]) & (index != i))
        other = np.flatnonzero(y != y[i])
        if same.size == 0:
            lonely.add(int(y[i]))
            continue
        if other.size == 0:
            continue
        near_same = same[np.argsort(distances[i, same], kind="stable")[:k1]]
        near_other = other[np.argsort(distances[i, other], kind="stable")[:k2]]
        for j in near_same:
            pairs.append((i, j))
            for k in near_other:
                triples.append((i, j, k))

    for label in sorted(lonely):
        logger.warning("class %s has a single member; no triplets generated for it",
                       train.label_names[label - 1])
    return TripletSet(
        triples=np.array(triples, dtype=int).reshape(-1, 3),
        target_pairs=np.array(pairs, dtype=int).reshape(-1, 2),
    )


def _project_columns(M: np.ndarray) -> np.ndarray:
    # sort-and-threshold projection, applied to all columns at once
    M = np.asarray(M, dtype=float)
    k = M.shape[0]
    U = -np.sort(-M, axis=0)
    css = np.cumsum(U, axis=0) - 1.0
    ranks = np.arange(1, k + 1)[:, None]
    support = U - css / ranks > 0
    rho = k - 1 - np.argmax(support[::-1], axis=0)
    threshold = css[rho, np.arange(M.shape[1])] / (rho + 1)
    return np.maximum(M - threshold[None, :], 0.0)


def simplex_project_columns(M) -> TransformL:
    """Euclidean projection of every column onto the probability simplex."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return TransformL(_project_columns(M))


def init_L(k_latent: int, m: int) -> TransformL:
    """First k_latent rows of the m x m identity, columns projected onto the simplex."""
    if not 1 <= k_latent <= m:
        raise ValueError(f"k_latent must be in 1..{m}, got {k_latent}")
    return simplex_project_columns(np.eye(k_latent, m))


def _check_inputs(L: np.ndarray, embedded: np.ndarray, T: TripletSet):
    if embedded.ndim != 2 or L.shape[1] != embedded.shape[1]:
        raise ValueError(f"L of shape {L.shape} does not match embeddings of shape {embedded.shape}")
    top = T.max_index()
    if top >= embedded.shape[0]:
        raise IndexError(f"triplet index {top} out of range for {embedded.shape[0]} instances")


@dataclass(frozen=True)
class PairTable:
    """
    The distinct (a, b) instance pairs a TripletSet refers to.

    ``ij`` and ``ik`` give, per triple, the row of its (i, j) and (i, k) pair;
    ``pull`` gives the rows of the target pairs. Every distance is then
    evaluated once per iteration, however many triples share it.
    """
    pairs: np.ndarray
    ij: np.ndarray
    ik: np.ndarray
    pull: np.ndarray

    @classmethod
    def from_triplets(cls, T: TripletSet) -> "PairTable":
        n = len(T)
        stacked = np.concatenate([T.triples[:, [0, 1]], T.triples[:, [0, 2]], T.target_pairs])
        if stacked.shape[0] == 0:
            empty = np.zeros(0, dtype=int)
            return cls(np.zeros((0, 2), dtype=int), empty, empty, empty)
        pairs, inverse = np.unique(stacked, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        return cls(pairs, inverse[:n], inverse[n:2 * n], inverse[2 * n:])


@dataclass
class Evaluation:
    """Objective value at one L, the number of active triplets and, if asked for, a subgradient."""
    value: float
    active: int
    gradient: Optional[np.ndarray] = None


def evaluate(L: np.ndarray, embedded: np.ndarray, table: PairTable, cfg: LearnerConfig,
             kernel: DistanceKernel, with_gradient: bool = True) -> Evaluation:
    """
    Hinge losses, pull term and subgradient from a single pass over the pairs.

    Pair weights collect +1 per active triple for (i, j), -1 for (i, k) and
    alpha per target pair; the gradient is then W^T embedded with W the
    per-instance sum of weighted row gradients.
    """
    Q = embedded @ L.T
    a, b = table.pairs[:, 0], table.pairs[:, 1]
    d = kernel.rows(Q[a], Q[b])
    margins = d[table.ij] + cfg.gamma - d[table.ik]
    active = margins > 0
    value = float(np.sum(margins[active])) + cfg.alpha * float(np.sum(d[table.pull]))
    result = Evaluation(value=value, active=int(np.count_nonzero(active)))
    if not with_gradient:
        return result

    size = table.pairs.shape[0]
    weights = (np.bincount(table.ij[active], minlength=size)
               - np.bincount(table.ik[active], minlength=size)).astype(float)
    if cfg.alpha != 0:
        weights += cfg.alpha * np.bincount(table.pull, minlength=size)
    used = np.flatnonzero(weights)
    W = np.zeros((embedded.shape[0], L.shape[0]))
    if used.size:
        ga, gb = kernel.rows_grad(Q[a[used]], Q[b[used]])
        w = weights[used, None]
        np.add.at(W, a[used], w * ga)
        np.add.at(W, b[used], w * gb)
    result.gradient = W.T @ embedded
    return result


def _evaluate_once(L, embedded, T: TripletSet, cfg: LearnerConfig, kernel: DistanceKernel,
                   with_gradient: bool) -> Evaluation:
    L = np.asarray(L, dtype=float)
    embedded = np.asarray(embedded, dtype=float)
    _check_inputs(L, embedded, T)
    return evaluate(L, embedded, PairTable.from_triplets(T), cfg, kernel, with_gradient)


def objective(L, embedded, T: TripletSet, cfg: LearnerConfig, kernel: DistanceKernel = FISHER) -> float:
    """Sum of hinge losses [d_ij + gamma - d_ik]_+ plus alpha times the target-pair distances."""
    return _evaluate_once(L, embedded, T, cfg, kernel, with_gradient=False).value


def subgradient(L, embedded, T: TripletSet, cfg: LearnerConfig, kernel: DistanceKernel = FISHER
                ) -> np.ndarray:
    """
    A subgradient of ``objective`` with respect to L.

    Active triplets (margin > 0) add +grad d_ij - grad d_ik; a hinge exactly
    at its kink contributes zero.
    """
    return _evaluate_once(L, embedded, T, cfg, kernel, with_gradient=True).gradient


def step_size(cfg: LearnerConfig, t: int) -> float:
    return cfg.step0 / (1.0 + t / STEP_DECAY)


def descend(embedded, T: TripletSet, cfg: LearnerConfig, L0: np.ndarray, kernel: DistanceKernel,
            project: bool) -> Tuple[np.ndarray, TrainReport]:
    """
    Subgradient iterations from L0, projecting columns onto the simplex when
    ``project`` is set; returns the best iterate seen.

    Each step moves L by step_size(t) * max(||L0||_F, 1) along the unit-norm
    subgradient, so step0 is a fraction of the starting matrix whatever the
    number of triplets. Stops after max_iters, when the best objective has
    not improved by tol * |best| for ``patience`` consecutive iterations, at
    objective 0, or when the subgradient vanishes.
    """
    if len(T) == 0:
        raise DataError("cannot train on an empty triplet set")
    embedded = np.asarray(embedded, dtype=float)
    L = np.array(L0, dtype=float, copy=True)
    _check_inputs(L, embedded, T)
    started = time.perf_counter()

    table = PairTable.from_triplets(T)
    radius = max(float(np.linalg.norm(L)), 1.0)
    current = evaluate(L, embedded, table, cfg, kernel)
    best, best_L, best_active = current.value, L.copy(), current.active
    report = TrainReport(objective_trace=[best])
    stall = 0
    report.stop_reason = "max_iters"

    for t in range(cfg.max_iters):
        if best == 0.0:
            report.stop_reason = "zero objective"
            break
        norm = float(np.linalg.norm(current.gradient))
        if norm == 0.0:
            report.stop_reason = "zero subgradient"
            break
        L = L - (step_size(cfg, t) * radius / norm) * current.gradient
        if project:
            L = _project_columns(L)
        current = evaluate(L, embedded, table, cfg, kernel)
        report.objective_trace.append(current.value)
        report.iterations = t + 1
        if current.value < best:
            stall = 0 if current.value < best - cfg.tol * abs(best) else stall + 1
            best, best_L, best_active = current.value, L.copy(), current.active
            report.best_iteration = t + 1
        else:
            stall += 1
        if stall >= cfg.patience:
            report.stop_reason = "stalled"
            break

    report.active_triplets_final = best_active
    report.wall_time = time.perf_counter() - started
    logger.debug(
        "%s descent: %d iterations, objective %.6g -> %.6g (%s)", kernel.name,
        report.iterations, report.objective_trace[0], best, report.stop_reason,
    )
    return best_L, report


def train(embedded, T: TripletSet, cfg: LearnerConfig, kernel: DistanceKernel = FISHER
          ) -> Tuple[TransformL, TrainReport]:
    """Projected subgradient descent on the triplet objective from the clipped identity."""
    embedded = np.asarray(embedded, dtype=float)
    m = embedded.shape[1]
    L0 = init_L(cfg.latent_size(m), m).entries
    L, report = descend(embedded, T, cfg, L0, kernel, project=True)
    return TransformL(L), report
