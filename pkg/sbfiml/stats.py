"""Paired Student t-test over fold accuracies and the one-point-per-win scoring schema."""

import itertools
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Sequence

import numpy as np
from scipy.integrate import quad

logger = logging.getLogger(__name__)

P_THRESHOLD = 0.05


def t_pdf(x: float, dof: int) -> float:
    """Density of Student's t distribution with ``dof`` degrees of freedom."""
    log_norm = (math.lgamma((dof + 1) / 2.0) - math.lgamma(dof / 2.0)
                - 0.5 * math.log(dof * math.pi))
    return math.exp(log_norm - (dof + 1) / 2.0 * math.log1p(x * x / dof))


def t_two_sided_p(t: float, dof: int) -> float:
    """P(|T| >= |t|), by integrating the density over the upper tail."""
    if dof < 1:
        raise ValueError(f"degrees of freedom must be at least 1, got {dof}")
    if math.isinf(t):
        return 0.0
    tail, _ = quad(t_pdf, abs(t), math.inf, args=(dof,), epsabs=1e-13, epsrel=1e-12, limit=200)
    return float(min(1.0, max(0.0, 2.0 * tail)))


@dataclass
class ScoreResult:
    """Outcome of A vs B; points_a + points_b == 1."""
    points_a: float
    points_b: float
    p_value: float
    t_statistic: float
    mean_difference: float
    significant: bool

    def to_dict(self) -> dict:
        return asdict(self)


def paired_ttest_score(acc_a: Sequence[float], acc_b: Sequence[float],
                       p_threshold: float = P_THRESHOLD) -> ScoreResult:
    """
    Two-sided paired t-test on acc_a - acc_b with len - 1 degrees of freedom.

    A gets 1 point when significantly better, 0 when significantly worse and
    0.5 otherwise. Zero-variance differences give p = 0 when their mean is
    nonzero and p = 1 when they are all zero.
    """
    a = np.asarray(acc_a, dtype=float).reshape(-1)
    b = np.asarray(acc_b, dtype=float).reshape(-1)
    if a.size != b.size:
        raise ValueError(f"accuracy vectors differ in length: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValueError("need at least 2 paired accuracies")

    diff = a - b
    mean = float(diff.mean())
    sd = float(diff.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            t_stat, p = 0.0, 1.0
        else:
            t_stat, p = math.copysign(math.inf, mean), 0.0
    else:
        t_stat = mean / (sd / math.sqrt(diff.size))
        p = t_two_sided_p(t_stat, diff.size - 1)

    significant = p < p_threshold
    if not significant:
        points = 0.5
    else:
        points = 1.0 if mean > 0 else 0.0
    return ScoreResult(
        points_a=points,
        points_b=1.0 - points,
        p_value=p,
        t_statistic=t_stat,
        mean_difference=mean,
        significant=significant,
    )


@dataclass
class ScoreTable:
    methods: List[str]
    pairs: Dict[str, ScoreResult] = field(default_factory=dict)
    totals: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "methods": list(self.methods),
            "pairs": {key: result.to_dict() for key, result in self.pairs.items()},
            "totals": dict(self.totals),
        }


def score_table(accuracies: Mapping[str, Sequence[float]], p_threshold: float = P_THRESHOLD) -> ScoreTable:
    """Play every pair of methods against each other and total the points per method."""
    methods = list(accuracies)
    if len(methods) < 2:
        raise ValueError("need at least two methods to score")
    table = ScoreTable(methods=methods, totals={name: 0.0 for name in methods})
    for first, second in itertools.combinations(methods, 2):
        result = paired_ttest_score(accuracies[first], accuracies[second], p_threshold)
        table.pairs[f"{first} vs {second}"] = result
        table.totals[first] += result.points_a
        table.totals[second] += result.points_b
        logger.debug("%s vs %s: t=%.4f p=%.4g", first, second, result.t_statistic, result.p_value)
    return table
