"""
Nonparametric Bootstrap
Reruns the whole estimation pipeline on row resamples and forms percentile intervals.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from src.models.random_streams import RandomStreams
from src.models.report import EffectReport
from src.models.schema import CausalDataset
from src.utils.errors import BootstrapError, ConfigError, ModelFitError, TrainingDivergenceError

logger = logging.getLogger(__name__)

MAX_FAILURE_RATE = 0.05

Estimator = Callable[[CausalDataset, RandomStreams], EffectReport]


@dataclass
class BootstrapResult:
    """Per-estimand replicate values, percentile intervals and failure bookkeeping."""
    B: int
    alpha: float
    replicates: Dict[str, List[float]]
    intervals: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    failures: List[Tuple[int, str]] = field(default_factory=list)
    widened: int = 0

    @property
    def succeeded(self) -> int:
        return self.B - len(self.failures)

    def metadata(self) -> Dict[str, object]:
        return {
            "B": self.B,
            "alpha": self.alpha,
            "bootstrap_failures": len(self.failures),
            "failed_replicates": [b for b, _ in self.failures],
            "widened_intervals": self.widened,
        }

    def apply(self, report: EffectReport) -> EffectReport:
        """Attach the intervals to the point-estimate report."""
        return report.with_intervals(self.intervals, self.metadata())

    def replicates_frame(self) -> pd.DataFrame:
        """One row per successful replicate, one column per estimand."""
        return pd.DataFrame(self.replicates)


def percentile_interval(values: np.ndarray, point: float, alpha: float) -> Tuple[float, float, bool]:
    """Percentile bounds, widened to contain ``point``. Returns (lower, upper, widened)."""
    lower, upper = np.percentile(values, [100.0 * alpha / 2.0, 100.0 * (1.0 - alpha / 2.0)])
    lower, upper = float(lower), float(upper)
    widened = point < lower or point > upper
    return min(lower, point), max(upper, point), widened


def bootstrap(dataset: CausalDataset, estimator: Estimator, point: EffectReport, B: int,
              streams: RandomStreams, alpha: float = 0.05, threads: int = 1,
              max_failure_rate: float = MAX_FAILURE_RATE) -> BootstrapResult:
    """Percentile bootstrap over the full estimation pipeline.

    Replicate ``b`` resamples rows with the stream ``(seed, "bootstrap", b)`` and
    runs ``estimator`` with fresh streams derived from ``(seed, "replicate", b)``,
    so every replicate is reproducible on its own.

    Args:
        dataset: Original data
        estimator: Refits models and simulates; returns an EffectReport
        point: Report of the estimator on the original data
        B: Number of replicates (>= 2)
        streams: Root random streams
        alpha: Two-sided interval level
        threads: Replicates run concurrently
        max_failure_rate: Share of failed replicates that aborts the run

    Returns:
        BootstrapResult: Intervals and replicate values
    """
    if B < 2:
        raise ConfigError(f"Bootstrap needs B >= 2, got {B}")
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    n = dataset.n
    names = point.ordered_names()

    def replicate(b: int):
        indices = streams.generator("bootstrap", b).integers(0, n, size=n)
        try:
            result = estimator(dataset.take(indices), streams.child("replicate", b))
        except (ModelFitError, TrainingDivergenceError) as e:
            logger.warning("Bootstrap replicate %d failed: %s", b, e)
            return b, None, str(e)
        return b, result.points(), None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(replicate, range(B)))
    else:
        outcomes = []
        for b in range(B):
            outcomes.append(replicate(b))
            if (b + 1) % max(1, B // 10) == 0:
                logger.info("Bootstrap: %d/%d replicates done", b + 1, B)

    values: Dict[str, List[float]] = {name: [] for name in names}
    failures: List[Tuple[int, str]] = []
    for b, points, error in outcomes:
        if points is None:
            failures.append((b, error))
            continue
        for name in names:
            values[name].append(points[name])

    if len(failures) > max_failure_rate * B:
        raise BootstrapError(f"{len(failures)} of {B} bootstrap replicates failed "
                             f"(limit {max_failure_rate:.0%}); first failure: {failures[0][1]}")
    result = BootstrapResult(B=B, alpha=alpha, replicates=values, failures=failures)
    for name in names:
        lower, upper, widened = percentile_interval(np.asarray(values[name]), point[name].point, alpha)
        result.intervals[name] = (lower, upper)
        result.widened += int(widened)
    if failures:
        logger.warning("Skipped %d failed bootstrap replicate(s)", len(failures))
    return result
