"""Dataset ingestion, standardization, pairwise statistics and fold splitting."""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import pdist

from .errors import DataError

logger = logging.getLogger(__name__)


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Dataset:
    """Instances x_1..x_n with integer class labels in 1..c."""
    instances: np.ndarray
    labels: np.ndarray
    label_names: Tuple[str, ...] = ()
    feature_names: Tuple[str, ...] = ()
    source: str = ""

    def __post_init__(self):
        instances = np.asarray(self.instances, dtype=float)
        labels = np.asarray(self.labels, dtype=int)
        if instances.ndim != 2:
            raise DataError(f"instances must be a 2-D matrix, got shape {instances.shape}")
        if labels.shape != (instances.shape[0],):
            raise DataError(
                f"expected {instances.shape[0]} labels, got shape {labels.shape}"
            )
        if not np.all(np.isfinite(instances)):
            raise DataError("instances contain non-finite values")
        if labels.size and labels.min() < 1:
            raise DataError("labels must be in 1..c")
        object.__setattr__(self, "instances", _frozen(instances))
        object.__setattr__(self, "labels", _frozen(labels))
        if not self.label_names and labels.size:
            names = tuple(str(v) for v in range(1, int(labels.max()) + 1))
            object.__setattr__(self, "label_names", names)

    @property
    def n(self) -> int:
        return self.instances.shape[0]

    @property
    def d(self) -> int:
        return self.instances.shape[1]

    @property
    def c(self) -> int:
        return len(self.label_names) if self.label_names else int(self.labels.max(initial=0))

    def subset(self, indices: Sequence[int]) -> "Dataset":
        indices = np.asarray(indices, dtype=int)
        return Dataset(
            instances=self.instances[indices],
            labels=self.labels[indices],
            label_names=self.label_names,
            feature_names=self.feature_names,
            source=self.source,
        )

    def with_instances(self, instances: np.ndarray) -> "Dataset":
        return Dataset(
            instances=instances,
            labels=self.labels,
            label_names=self.label_names,
            feature_names=self.feature_names,
            source=self.source,
        )

    def metadata(self) -> dict:
        """Label mapping and shape, for run metadata JSON."""
        return {
            "source": self.source,
            "n": self.n,
            "d": self.d,
            "c": self.c,
            "label_mapping": {name: idx for idx, name in enumerate(self.label_names, 1)},
            "feature_names": list(self.feature_names),
        }


@dataclass(frozen=True)
class StandardizationStats:
    """Per-feature mean and sample standard deviation; stddev 0 marks a constant feature."""
    mean: np.ndarray
    stddev: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        stddev = np.asarray(self.stddev, dtype=float)
        if mean.shape != stddev.shape or mean.ndim != 1:
            raise DataError("mean and stddev must be vectors of equal length")
        if np.any(stddev < 0):
            raise DataError("stddev entries must be non-negative")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "stddev", _frozen(stddev))

    @property
    def constant_features(self) -> np.ndarray:
        return np.flatnonzero(self.stddev == 0)

    def transform(self, instances: np.ndarray) -> np.ndarray:
        instances = np.asarray(instances, dtype=float)
        if instances.shape[-1] != self.mean.shape[0]:
            raise DataError(
                f"stats cover {self.mean.shape[0]} features, data has {instances.shape[-1]}"
            )
        scale = np.where(self.stddev > 0, self.stddev, 1.0)
        out = (instances - self.mean) / scale
        out[..., self.stddev == 0] = 0.0
        return out


@dataclass(frozen=True)
class FoldPlan:
    """Assignment of every instance to one of K folds."""
    fold_assignments: np.ndarray
    seed: int
    n_folds: int
    stratified: bool = True
    warnings: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "fold_assignments", _frozen(np.asarray(self.fold_assignments, dtype=int)))

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_assignments != fold)

    def splits(self) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        for fold in range(self.n_folds):
            yield self.train_indices(fold), self.test_indices(fold)

    def fold_sizes(self) -> List[int]:
        return np.bincount(self.fold_assignments, minlength=self.n_folds).tolist()


def _parse_float(cell: str) -> Optional[float]:
    try:
        value = float(cell)
    except ValueError:
        return None
    return value


def load_dataset(path, label_column: str = "last") -> Dataset:
    """
    Load a CSV file into a Dataset.

    The first row is treated as a header when none of its feature cells parse
    as numbers. Labels, numeric or not, are mapped to 1..c in order of first
    appearance; the mapping is kept in ``label_names``.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"data file not found: {path}")

    with open(path, "r", encoding="utf-8", newline="") as f:
        rows = [row for row in csv.reader(f) if any(cell.strip() for cell in row)]
    if not rows:
        raise DataError(f"data file is empty: {path}")

    width = len(rows[0])
    if width < 2:
        raise DataError("need at least one feature column and one label column")

    first = [cell.strip() for cell in rows[0]]
    header: Optional[List[str]] = None
    if label_column != "last":
        header = first
        if label_column not in header:
            raise DataError(f"label column '{label_column}' not in header {header}")
        label_idx = header.index(label_column)
    else:
        label_idx = width - 1
        feature_cells = [c for i, c in enumerate(first) if i != label_idx]
        if all(_parse_float(c) is None for c in feature_cells):
            header = first

    body = rows[1:] if header is not None else rows
    first_line = 2 if header is not None else 1
    if not body:
        raise DataError(f"data file has a header but no rows: {path}")

    features: List[List[float]] = []
    raw_labels: List[str] = []
    for offset, row in enumerate(body):
        line = first_line + offset
        if len(row) != width:
            raise DataError(f"row {line}: expected {width} columns, found {len(row)}")
        values = []
        for col, cell in enumerate(row):
            if col == label_idx:
                continue
            value = _parse_float(cell.strip())
            if value is None or not math.isfinite(value):
                name = header[col] if header else str(col + 1)
                raise DataError(f"row {line}, column {name}: cannot parse '{cell}' as a finite number")
            values.append(value)
        features.append(values)
        raw_labels.append(row[label_idx].strip())

    label_names: List[str] = []
    lookup = {}
    labels = []
    for raw in raw_labels:
        if raw == "":
            raise DataError("empty label cell")
        if raw not in lookup:
            label_names.append(raw)
            lookup[raw] = len(label_names)
        labels.append(lookup[raw])

    if len(label_names) < 2:
        raise DataError(f"dataset has a single class ({label_names[0]}); need at least 2")

    feature_names = tuple(
        name for i, name in enumerate(header) if i != label_idx
    ) if header else tuple(f"x{i + 1}" for i in range(width - 1))

    dataset = Dataset(
        instances=np.array(features, dtype=float),
        labels=np.array(labels, dtype=int),
        label_names=tuple(label_names),
        feature_names=feature_names,
        source=str(path),
    )
    logger.info("Loaded %s: n=%d d=%d c=%d", path, dataset.n, dataset.d, dataset.c)
    return dataset


def standardize(data: Dataset, stats: Optional[StandardizationStats] = None
                ) -> Tuple[Dataset, StandardizationStats]:
    """Standardize features; compute the stats from ``data`` unless given."""
    if stats is None:
        if data.n < 2:
            raise DataError("need at least 2 instances to compute standardization stats")
        mean = data.instances.mean(axis=0)
        stddev = data.instances.std(axis=0, ddof=1)
        stddev = np.where(stddev > 0, stddev, 0.0)
        stats = StandardizationStats(mean=mean, stddev=stddev)
        if stats.constant_features.size:
            logger.debug("Constant features mapped to 0: %s", stats.constant_features.tolist())
    return data.with_instances(stats.transform(data.instances)), stats


def average_pairwise_distance(data) -> float:
    """Mean Euclidean distance over all unordered pairs (the width scale tau)."""
    instances = data.instances if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    if instances.shape[0] < 2:
        raise DataError("need at least 2 instances for pairwise distances")
    return float(np.mean(pdist(instances, metric="euclidean")))


def kfold_split(data: Dataset, n_folds: int, seed: int, stratified: bool = True) -> FoldPlan:
    """
    Assign instances to folds, deterministically for a given seed.

    Stratified plans deal each class's shuffled members round-robin, carrying
    the position across classes so that both per-class and total fold sizes
    differ by at most one.
    """
    if n_folds < 2:
        raise DataError(f"need at least 2 folds, got {n_folds}")
    if n_folds > data.n:
        raise DataError(f"cannot split {data.n} instances into {n_folds} folds")

    rng = np.random.default_rng(seed)
    assignments = np.empty(data.n, dtype=int)
    warnings: List[str] = []

    if stratified:
        position = 0
        for label in range(1, data.c + 1):
            members = rng.permutation(np.flatnonzero(data.labels == label))
            if 0 < members.size < n_folds:
                warnings.append(
                    f"class {data.label_names[label - 1]} has {members.size} members for {n_folds} folds"
                )
            assignments[members] = (position + np.arange(members.size)) % n_folds
            position = (position + members.size) % n_folds
    else:
        order = rng.permutation(data.n)
        assignments[order] = np.arange(data.n) % n_folds

    for message in warnings:
        logger.warning(message)
    return FoldPlan(
        fold_assignments=assignments,
        seed=seed,
        n_folds=n_folds,
        stratified=stratified,
        warnings=tuple(warnings),
    )


def save_to_json(payload, filename) -> Path:
    """Write a dataclass or dict to ``filename`` as indented, key-sorted JSON."""
    if hasattr(payload, "__dataclass_fields__"):
        payload = asdict(payload)
    filename = Path(filename)
    filename.parent.mkdir(parents=True, exist_ok=True)
    with open(filename, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, ensure_ascii=False, sort_keys=True, default=_json_default)
        f.write("\n")
    return filename


def _json_default(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def write_matrix_csv(matrix: np.ndarray, filename, header: Optional[Sequence[str]] = None) -> Path:
    """Write a 2-D array as CSV with full float precision."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    filename = Path(filename)
    filename.parent.mkdir(parents=True, exist_ok=True)
    with open(filename, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        if header is not None:
            writer.writerow(header)
        for row in matrix:
            writer.writerow([repr(float(v)) for v in row])
    return filename


def read_matrix_csv(filename) -> np.ndarray:
    """Read a numeric CSV written by ``write_matrix_csv`` (header optional)."""
    filename = Path(filename)
    if not filename.is_file():
        raise DataError(f"matrix file not found: {filename}")
    with open(filename, "r", encoding="utf-8", newline="") as f:
        rows = [row for row in csv.reader(f) if row]
    if rows and all(_parse_float(c) is None for c in rows[0]):
        rows = rows[1:]
    if not rows:
        raise DataError(f"matrix file is empty: {filename}")
    try:
        return np.array([[float(c) for c in row] for row in rows], dtype=float)
    except ValueError as e:
        raise DataError(f"{filename}: {e}") from e
