"""
Run configuration: a JSON file plus command-line overrides resolved into one
RunConfig, echoed next to the outputs so a run can be reproduced from it.
"""

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple

import numpy as np

from .errors import DataError
from .learner import LearnerConfig
from .similarity import Calibration

logger = logging.getLogger(__name__)

Method = Literal["sbfiml", "sbmml", "chi2"]
METHODS = ("sbfiml", "sbmml", "chi2")

# Stage ids mixed into every derived seed.
STAGE_FOLDS = 0
STAGE_INNER_FOLDS = 1
STAGE_ANCHORS = 2

LARGE_DATA_ANCHOR_FRACTION = 0.2
LARGE_DATA_LATENT_FRACTION = 0.05

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: int = logging.WARNING):
    """Attach the stderr handler once and set the root level; also called inside fold workers."""
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger().setLevel(level)


def derive_seed(seed: int, stage: int, *counters: int) -> int:
    """Expand the global seed into an independent seed for (stage, counters...)."""
    sequence = np.random.SeedSequence([int(seed), int(stage), *[int(c) for c in counters]])
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


@dataclass
class SimilaritySettings:
    families: Tuple[str, ...] = ("gaussian", "angular")
    shared_multipliers: Tuple[float, ...] = (0.5, 1.0, 2.0)
    entropy_targets: Tuple[float, ...] = (0.8, 0.9, 0.95)
    margins: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        self.families = tuple(self.families)
        self.shared_multipliers = tuple(float(v) for v in self.shared_multipliers)
        self.entropy_targets = tuple(float(v) for v in self.entropy_targets)
        if self.margins is not None:
            self.margins = tuple(float(v) for v in self.margins)
        unknown = set(self.families) - {"gaussian", "angular"}
        if unknown:
            raise ValueError(f"unknown similarity families: {sorted(unknown)}")
        for v in self.shared_multipliers:
            Calibration("shared", v)
        for v in self.entropy_targets:
            Calibration("entropy", v)
        if self.margins is not None and not all(v > 0 for v in self.margins):
            raise ValueError(f"margins must be positive, got {self.margins}")


@dataclass
class EmbeddingSettings:
    """The single similarity map used by map, train and pullback."""
    family: Literal["gaussian", "angular"] = "gaussian"
    calibration: Literal["shared", "entropy"] = "shared"
    width: float = 1.0

    def __post_init__(self):
        if self.family not in ("gaussian", "angular"):
            raise ValueError(f"unknown similarity family '{self.family}'")
        self.width = float(self.width)
        Calibration(self.calibration, self.width)

    def to_calibration(self) -> Optional[Calibration]:
        # angular similarities have no width
        if self.family == "angular":
            return None
        return Calibration(self.calibration, self.width)


@dataclass
class AnchorSettings:
    mode: Literal["all", "random", "kmeans"] = "all"
    fraction: Optional[float] = None
    n_clusters: Optional[int] = None

    def __post_init__(self):
        if self.mode not in ("all", "random", "kmeans"):
            raise ValueError(f"unknown anchor mode '{self.mode}'")
        if self.mode == "random" and self.fraction is None:
            raise ValueError("random anchors need a fraction")
        if self.mode == "kmeans" and self.n_clusters is None:
            raise ValueError("kmeans anchors need a cluster count")
        if self.fraction is not None and not 0 < self.fraction <= 1:
            raise ValueError(f"anchor fraction must be in (0, 1], got {self.fraction}")
        if self.n_clusters is not None and self.n_clusters < 2:
            raise ValueError(f"cluster count must be at least 2, got {self.n_clusters}")


@dataclass
class CVSettings:
    repeats: int = 5
    n_folds: int = 10
    inner_folds: int = 4
    stratified: bool = True
    jobs: int = 1

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError(f"repeats must be at least 1, got {self.repeats}")
        if self.n_folds < 2 or self.inner_folds < 2:
            raise ValueError("fold counts must be at least 2")
        if self.jobs == 0:
            raise ValueError("jobs must be non-zero")


@dataclass
class PullbackSettings:
    grid: int = 15
    radius: float = 0.1
    curve_points: int = 32
    standardize: bool = False
    transform: Optional[str] = None

    def __post_init__(self):
        if self.grid < 2:
            raise ValueError(f"grid must have at least 2 points per axis, got {self.grid}")
        if not self.radius > 0:
            raise ValueError(f"curve radius must be positive, got {self.radius}")
        if self.curve_points < 1:
            raise ValueError(f"need at least one curve point, got {self.curve_points}")


@dataclass
class RunConfig:
    data: Optional[str] = None
    test: Optional[str] = None
    label_column: str = "last"
    method: str = "sbfiml"
    output_dir: str = "out"
    seed: int = 0
    report_format: Literal["json", "csv"] = "json"
    large_data: bool = False
    masses: Optional[str] = None
    similarities: Optional[str] = None
    similarity: SimilaritySettings = field(default_factory=SimilaritySettings)
    embedding: EmbeddingSettings = field(default_factory=EmbeddingSettings)
    anchors: AnchorSettings = field(default_factory=AnchorSettings)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    cv: CVSettings = field(default_factory=CVSettings)
    pullback: PullbackSettings = field(default_factory=PullbackSettings)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method '{self.method}', expected one of {METHODS}")
        if self.report_format not in ("json", "csv"):
            raise ValueError(f"unknown report format '{self.report_format}'")

    def effective(self) -> "RunConfig":
        """Apply --large-data: 20% random anchors and k_latent = ceil(0.05 m)."""
        if not self.large_data:
            return self
        data = self.to_dict()
        data["anchors"] = {"mode": "random", "fraction": LARGE_DATA_ANCHOR_FRACTION, "n_clusters": None}
        data["learner"]["latent_fraction"] = LARGE_DATA_LATENT_FRACTION
        data["learner"]["k_latent"] = None
        return RunConfig.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        nested = {
            "similarity": SimilaritySettings,
            "embedding": EmbeddingSettings,
            "anchors": AnchorSettings,
            "learner": LearnerConfig,
            "cv": CVSettings,
            "pullback": PullbackSettings,
        }
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        for key, kind in nested.items():
            if key in kwargs and isinstance(kwargs[key], dict):
                sub_known = {f.name for f in fields(kind)}
                bad = set(kwargs[key]) - sub_known
                if bad:
                    raise DataError(f"unknown keys in '{key}': {sorted(bad)}")
                kwargs[key] = kind(**kwargs[key])
        return cls(**kwargs)


def load_config(path) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(data, dict):
        raise DataError(f"{path}: config must be a JSON object")
    return data


def resolve_config(path=None, **overrides) -> RunConfig:
    """
    Merge a config file with command-line overrides.

    Overrides set to None are ignored; dotted keys such as ``learner.gamma``
    address nested sections.
    """
    data = load_config(path) if path else {}
    for key, value in overrides.items():
        if value is None:
            continue
        section, _, name = key.partition(".")
        if name:
            data.setdefault(section, {})[name] = value
        else:
            data[key] = value
    try:
        return RunConfig.from_dict(data)
    except DataError:
        raise
    except (TypeError, ValueError) as e:
        raise DataError(f"invalid configuration: {e}") from e
