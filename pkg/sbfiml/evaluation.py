"""
1-NN evaluation of learned metrics: nearest-neighbor prediction, inner
grid-search cross-validation, repeated outer K-fold CV and holdout runs.

Every fold is processed from raw features: standardization, anchors, widths,
triplets and hyperparameters all come from the training part only, and the
held-out rows are embedded against the training anchors.
"""

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from .baselines import BaselineKind, baseline_distance_matrix, train_baseline
from .config import (
    STAGE_ANCHORS,
    STAGE_FOLDS,
    STAGE_INNER_FOLDS,
    AnchorSettings,
    RunConfig,
    configure_logging,
    derive_seed,
)
from .data import Dataset, average_pairwise_distance, kfold_split, save_to_json, standardize
from .errors import DataError
from .geometry import fisher_distance_matrix
from .learner import LearnerConfig, TripletSet, generate_triplets, train
from .similarity import (
    AnchorSet,
    Calibration,
    SimilarityConfig,
    build_similarity,
    embed_proximity,
    embed_simplex,
    select_anchors,
)

logger = logging.getLogger(__name__)

SBFIML_MARGINS = (1e-4, 1e-3, 1e-2, 1e-1)
DEFAULT_MARGINS = {"sbfiml": SBFIML_MARGINS, **{kind.value: kind.margins for kind in BaselineKind}}


def knn_predict(query_repr, train_reprs, train_labels, distance_fn: Callable, k: int = 1) -> int:
    """
    Majority label among the k nearest training rows under ``distance_fn``.

    Distance ties go to the lowest training index, vote ties to the smallest label.
    """
    train_reprs = np.asarray(train_reprs)
    if len(train_reprs) == 0:
        raise DataError("knn_predict needs a non-empty training set")
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    distances = np.array([distance_fn(query_repr, row) for row in train_reprs], dtype=float)
    return int(knn_predict_from_distances(distances[None, :], train_labels, k)[0])


def knn_predict_from_distances(D: np.ndarray, train_labels, k: int = 1) -> np.ndarray:
    """Row-wise k-NN labels for a (queries x training) distance matrix."""
    D = np.atleast_2d(np.asarray(D, dtype=float))
    train_labels = np.asarray(train_labels, dtype=int)
    if D.shape[1] == 0:
        raise DataError("knn prediction needs a non-empty training set")
    if D.shape[1] != train_labels.size:
        raise ValueError(f"{D.shape[1]} distance columns for {train_labels.size} training labels")
    k = min(k, D.shape[1])
    if k == 1:
        return train_labels[np.argmin(D, axis=1)]

    order = np.argsort(D, axis=1, kind="stable")[:, :k]
    predictions = np.empty(D.shape[0], dtype=int)
    for row, nearest in enumerate(order):
        labels, counts = np.unique(train_labels[nearest], return_counts=True)
        predictions[row] = labels[np.argmax(counts)]
    return predictions


def nn_accuracy(D: np.ndarray, train_labels, test_labels, k: int = 1) -> float:
    predictions = knn_predict_from_distances(D, train_labels, k)
    return float(np.mean(predictions == np.asarray(test_labels, dtype=int)))


def representation_kind(method: str) -> str:
    return "simplex" if method == "sbfiml" else _baseline(method).representation


def _baseline(method: str) -> BaselineKind:
    try:
        return BaselineKind(method)
    except ValueError:
        raise ValueError(f"unknown method '{method}'") from None


def distance_matrix(method: str, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Distances between transformed rows under the method's own distance."""
    if method == "sbfiml":
        return fisher_distance_matrix(A, B)
    return baseline_distance_matrix(_baseline(method), A, B)


def fit_transform(method: str, train_repr: np.ndarray, triplets: TripletSet, cfg: LearnerConfig):
    """Learn L for ``method``; returns (k x m array, TrainReport)."""
    if method == "sbfiml":
        L, report = train(train_repr, triplets, cfg)
        return L.entries, report
    return train_baseline(_baseline(method), train_repr, triplets, cfg)


@dataclass(frozen=True)
class SimilarityOption:
    family: str
    calibration: Optional[Calibration] = None

    def describe(self) -> dict:
        out = {"family": self.family}
        if self.calibration is not None:
            out["calibration"] = self.calibration.mode
            out["calibration_value"] = self.calibration.value
        return out


@dataclass(frozen=True)
class Candidate:
    option: SimilarityOption
    gamma: float

    def describe(self) -> dict:
        return {**self.option.describe(), "gamma": self.gamma}


def similarity_options(cfg: RunConfig) -> List[SimilarityOption]:
    """Shared-width multipliers, then entropy targets, then angular, as enabled."""
    settings = cfg.similarity
    options: List[SimilarityOption] = []
    if "gaussian" in settings.families:
        options += [SimilarityOption("gaussian", Calibration("shared", v)) for v in settings.shared_multipliers]
        options += [SimilarityOption("gaussian", Calibration("entropy", v)) for v in settings.entropy_targets]
    if "angular" in settings.families:
        options.append(SimilarityOption("angular"))
    if not options:
        raise DataError("similarity grid is empty")
    return options


def margin_grid(cfg: RunConfig) -> Tuple[float, ...]:
    margins = cfg.similarity.margins or DEFAULT_MARGINS[cfg.method]
    if not margins:
        raise DataError("margin grid is empty")
    return tuple(margins)


def candidate_grid(cfg: RunConfig) -> List[Candidate]:
    return [Candidate(option, gamma) for option in similarity_options(cfg) for gamma in margin_grid(cfg)]


def build_anchors(train_X: np.ndarray, settings: AnchorSettings, seed: int) -> AnchorSet:
    if settings.mode == "random":
        return select_anchors(train_X, fraction=settings.fraction, seed=seed)
    if settings.mode == "kmeans":
        return select_anchors(train_X, n_clusters=settings.n_clusters, seed=seed)
    return select_anchors(train_X)


@dataclass
class PreparedSplit:
    """A train/test split standardized on its training part, with anchors and triplets."""
    train: Dataset
    test: Dataset
    anchors: AnchorSet
    tau: float
    triplets: TripletSet

    def embed(self, option: SimilarityOption, method: str) -> Tuple[np.ndarray, np.ndarray, SimilarityConfig]:
        sim = build_similarity(option.family, self.train.instances, self.anchors, option.calibration, self.tau)
        embed = embed_proximity if representation_kind(method) == "proximity" else embed_simplex
        return embed(self.train.instances, self.anchors, sim), embed(self.test.instances, self.anchors, sim), sim


def prepare_split(train_raw: Dataset, test_raw: Dataset, cfg: RunConfig, anchor_seed: int) -> PreparedSplit:
    train_std, stats = standardize(train_raw)
    test_std, _ = standardize(test_raw, stats)
    anchors = build_anchors(train_std.instances, cfg.anchors, anchor_seed)
    triplets = generate_triplets(train_std, cfg.learner.k1, cfg.learner.k2)
    return PreparedSplit(
        train=train_std,
        test=test_std,
        anchors=anchors,
        tau=average_pairwise_distance(train_std),
        triplets=triplets,
    )


def score_candidate(split: PreparedSplit, train_repr, test_repr, candidate: Candidate, cfg: RunConfig
                    ) -> Tuple[float, np.ndarray]:
    learner_cfg = replace(cfg.learner, gamma=candidate.gamma)
    L, _ = fit_transform(cfg.method, train_repr, split.triplets, learner_cfg)
    D = distance_matrix(cfg.method, test_repr @ L.T, train_repr @ L.T)
    return nn_accuracy(D, split.train.labels, split.test.labels), L


@dataclass
class Selection:
    candidate: Candidate
    score: float
    scores: List[float] = field(default_factory=list)


def inner_cv_select(train_raw: Dataset, cfg: RunConfig, seed: int, counters: Sequence[int] = ()) -> Selection:
    """
    Exhaustive grid search scored by mean inner-fold 1-NN accuracy.

    Each inner fold is standardized on its own training part and embedded
    once per similarity option; ties keep the earliest candidate in grid order.
    """
    candidates = candidate_grid(cfg)
    if len(candidates) == 1:
        return Selection(candidate=candidates[0], score=float("nan"), scores=[])
    n_inner = cfg.cv.inner_folds
    if train_raw.n < n_inner:
        raise DataError(f"training part of {train_raw.n} instances is too small for {n_inner} inner folds")

    plan = kfold_split(train_raw, n_inner, derive_seed(seed, STAGE_INNER_FOLDS, *counters),
                       stratified=cfg.cv.stratified)
    options = similarity_options(cfg)
    margins = margin_grid(cfg)
    totals = np.zeros(len(candidates))

    for inner, (train_idx, test_idx) in enumerate(plan.splits()):
        anchor_seed = derive_seed(seed, STAGE_ANCHORS, *counters, inner + 1)
        split = prepare_split(train_raw.subset(train_idx), train_raw.subset(test_idx), cfg, anchor_seed)
        for o, option in enumerate(options):
            train_repr, test_repr, _ = split.embed(option, cfg.method)
            for g, gamma in enumerate(margins):
                accuracy, _ = score_candidate(split, train_repr, test_repr, Candidate(option, gamma), cfg)
                totals[o * len(margins) + g] += accuracy

    scores = (totals / n_inner).tolist()
    best = 0
    for index, value in enumerate(scores):
        if value > scores[best]:
            best = index
    logger.info("Inner CV %s chose %s (accuracy %.4f)", tuple(counters), candidates[best].describe(), scores[best])
    return Selection(candidate=candidates[best], score=scores[best], scores=scores)


@dataclass
class FoldOutcome:
    repeat: int
    fold: int
    accuracy: float
    chosen: dict
    seeds: dict
    transform: np.ndarray = field(repr=False, default=None)


def run_outer_fold(data: Dataset, train_idx, test_idx, cfg: RunConfig, seed: int,
                   repeat: int = 0, fold: int = 0) -> FoldOutcome:
    """Select hyperparameters on the training part, retrain on all of it and score the held-out part."""
    train_raw = data.subset(train_idx)
    test_raw = data.subset(test_idx)
    selection = inner_cv_select(train_raw, cfg, seed, counters=(repeat, fold))
    anchor_seed = derive_seed(seed, STAGE_ANCHORS, repeat, fold, 0)
    split = prepare_split(train_raw, test_raw, cfg, anchor_seed)
    train_repr, test_repr, _ = split.embed(selection.candidate.option, cfg.method)
    accuracy, L = score_candidate(split, train_repr, test_repr, selection.candidate, cfg)
    logger.info("Repeat %d fold %d: accuracy %.4f", repeat, fold, accuracy)
    return FoldOutcome(
        repeat=repeat,
        fold=fold,
        accuracy=accuracy,
        chosen=selection.candidate.describe(),
        seeds={
            "inner_split": derive_seed(seed, STAGE_INNER_FOLDS, repeat, fold),
            "anchors": anchor_seed,
        },
        transform=L,
    )


def run_fold_at_level(level: int, *args, **kwargs) -> FoldOutcome:
    # loky workers start with an unconfigured root logger
    configure_logging(level)
    return run_outer_fold(*args, **kwargs)


@dataclass
class CVReport:
    method: str
    accuracies: List[float]
    mean: float
    stddev: float
    config_chosen: List[dict]
    seeds: List[dict]
    repeats: int
    n_folds: int
    seed: int
    dataset: dict = field(default_factory=dict)
    t_test_unit: str = "per-fold"
    runtime: float = 0.0

    def to_dict(self, include_runtime: bool = False) -> dict:
        out = asdict(self)
        if not include_runtime:
            out.pop("runtime")
        return out


def summarize(accuracies: Sequence[float]) -> Tuple[float, float]:
    values = np.asarray(accuracies, dtype=float)
    mean = float(np.mean(values))
    stddev = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return mean, stddev


def cross_validate(data: Dataset, method: str = "sbfiml", repeats: int = 5, n_folds: int = 10,
                   seed: int = 0, cfg: Optional[RunConfig] = None) -> CVReport:
    """
    Repeated K-fold CV of the 1-NN rule under a learned metric.

    Repeat r splits with derive_seed(seed, STAGE_FOLDS, r); the (repeat, fold)
    tasks run on cfg.cv.jobs workers and are merged in task order.
    """
    cfg = replace(cfg or RunConfig(), method=method).effective()
    if n_folds > data.n:
        raise DataError(f"cannot run {n_folds}-fold CV on {data.n} instances")
    started = time.perf_counter()

    tasks = []
    for r in range(repeats):
        plan = kfold_split(data, n_folds, derive_seed(seed, STAGE_FOLDS, r), stratified=cfg.cv.stratified)
        for f, (train_idx, test_idx) in enumerate(plan.splits()):
            tasks.append((r, f, train_idx, test_idx))

    level = logging.getLogger().getEffectiveLevel()
    outcomes = Parallel(n_jobs=cfg.cv.jobs)(
        delayed(run_fold_at_level)(level, data, train_idx, test_idx, cfg, seed, r, f)
        for r, f, train_idx, test_idx in tasks
    )

    accuracies = [o.accuracy for o in outcomes]
    mean, stddev = summarize(accuracies)
    report = CVReport(
        method=method,
        accuracies=accuracies,
        mean=mean,
        stddev=stddev,
        config_chosen=[{"repeat": o.repeat, "fold": o.fold, **o.chosen} for o in outcomes],
        seeds=[{"repeat": o.repeat, "fold": o.fold,
                "split": derive_seed(seed, STAGE_FOLDS, o.repeat), **o.seeds} for o in outcomes],
        repeats=repeats,
        n_folds=n_folds,
        seed=seed,
        dataset=data.metadata(),
        runtime=time.perf_counter() - started,
    )
    logger.info("%s: %d folds, mean accuracy %.4f +/- %.4f", method, len(accuracies), mean, stddev)
    return report


@dataclass
class HoldoutReport:
    method: str
    accuracy: float
    chosen: dict
    n_train: int
    n_test: int
    seed: int


def holdout_evaluate(train_data: Dataset, test_data: Dataset, method: str = "sbfiml", seed: int = 0,
                     cfg: Optional[RunConfig] = None) -> HoldoutReport:
    """Inner selection on a fixed training split, then 1-NN accuracy on the given test split."""
    cfg = replace(cfg or RunConfig(), method=method).effective()
    if train_data.d != test_data.d:
        raise DataError(f"train has {train_data.d} features, test has {test_data.d}")
    combined = Dataset(
        instances=np.vstack([train_data.instances, test_data.instances]),
        labels=np.concatenate([train_data.labels, _relabel(test_data, train_data)]),
        label_names=train_data.label_names,
        feature_names=train_data.feature_names,
        source=train_data.source,
    )
    train_idx = np.arange(train_data.n)
    test_idx = np.arange(train_data.n, combined.n)
    outcome = run_outer_fold(combined, train_idx, test_idx, cfg, seed)
    return HoldoutReport(
        method=method,
        accuracy=outcome.accuracy,
        chosen=outcome.chosen,
        n_train=train_data.n,
        n_test=test_data.n,
        seed=seed,
    )


def _relabel(test_data: Dataset, train_data: Dataset) -> np.ndarray:
    # test labels follow the training file's label mapping
    lookup = {name: idx for idx, name in enumerate(train_data.label_names, 1)}
    missing = [name for name in test_data.label_names if name not in lookup]
    if missing:
        raise DataError(f"test labels not present in training data: {missing}")
    return np.array([lookup[test_data.label_names[y - 1]] for y in test_data.labels], dtype=int)


def write_report(report: CVReport, output_dir, report_format: str = "json") -> Path:
    """report.json (or report.csv) plus timing.json in ``output_dir``."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    save_to_json({"runtime": report.runtime}, output_dir / "timing.json")
    if report_format == "json":
        return save_to_json(report.to_dict(), output_dir / "report.json")

    path = output_dir / "report.csv"
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["method", "repeat", "fold", "accuracy", "family", "calibration",
                         "calibration_value", "gamma"])
        for accuracy, chosen in zip(report.accuracies, report.config_chosen):
            writer.writerow([
                report.method, chosen["repeat"], chosen["fold"], repr(accuracy), chosen["family"],
                chosen.get("calibration", ""), chosen.get("calibration_value", ""), chosen["gamma"],
            ])
    return path


def load_report(path) -> Tuple[str, List[float]]:
    """Method name and per-fold accuracies from a report written by ``write_report``."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"report not found: {path}")
    if path.suffix == ".csv":
        with open(path, "r", encoding="utf-8", newline="") as f:
            rows = list(csv.DictReader(f))
        if not rows:
            raise DataError(f"{path}: empty report")
        return rows[0]["method"], [float(row["accuracy"]) for row in rows]
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
        return payload["method"], [float(v) for v in payload["accuracies"]]
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise DataError(f"{path}: not a CV report ({e})") from e
