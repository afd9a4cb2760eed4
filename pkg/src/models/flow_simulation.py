"""
Flow-Based Simulation
Effect estimation from trained flows using one simulated value per resampled row,
plus the transformed-data diagnostics of the fitted flows.
"""

import logging
from typing import Dict, Mapping, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from src.models.flow_training import X_INTERVENTIONAL
from src.models.flows import FlowModel, flow_forward
from src.models.medsim import (
    LambdaAssignment,
    ModelBundle,
    PsiAssignment,
    estimate_interventional,
    estimate_natural_pse,
    simulate_lambda,
    simulate_psi,
)
from src.models.random_streams import RandomStreams
from src.models.report import EffectReport
from src.models.schema import INTERVENTIONAL, NATURAL_PSE, CausalDataset, CausalSchema
from src.utils.errors import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_SUBSAMPLE = 100000


def flow_bundles(models: Mapping[str, FlowModel], schema: CausalSchema, modes: Sequence[str]) -> Dict[str, ModelBundle]:
    """Group trained flows into one bundle per mode."""
    bundles = {}
    for mode in modes:
        x_key = "X" if mode == NATURAL_PSE else X_INTERVENTIONAL
        missing = [key for key in ("L", x_key, "Y") if key not in models]
        if missing:
            raise ConfigError(f"No trained flow for {', '.join(missing)} ({mode} mode)")
        bundles[mode] = ModelBundle(mode, schema, models["L"], models[x_key], models["Y"])
    return bundles


def _subsample(dataset: CausalDataset, b: int, streams: RandomStreams, resample: bool) -> CausalDataset:
    if b < 1:
        raise ConfigError(f"Subsample size b must be at least 1, got {b}")
    if not resample:
        if b != dataset.n:
            raise ConfigError(f"Without resampling b must equal n ({dataset.n}), got {b}")
        return dataset
    indices = streams.generator("subsample", 0).integers(0, dataset.n, size=b)
    return dataset.take(indices)


def subsample_simulate(bundle: ModelBundle, dataset: CausalDataset,
                       assignment: Union[PsiAssignment, LambdaAssignment], b: int, streams: RandomStreams,
                       resample: bool = True, threads: int = 1) -> float:
    """Marginal mean from ``b`` resampled rows with a single simulated value each.

    The resample is drawn from a fixed stream, so every assignment sees the same rows.
    """
    subset = _subsample(dataset, b, streams, resample)
    if isinstance(assignment, PsiAssignment):
        return simulate_psi(bundle, subset, assignment, 1, streams, threads)
    return simulate_lambda(bundle, subset, assignment, 1, streams, threads)


def estimate_subsampled(bundle: ModelBundle, dataset: CausalDataset, b: int, streams: RandomStreams,
                        resample: bool = True, threads: int = 1) -> EffectReport:
    """All effects of the bundle's mode from a size-``b`` resample and J = 1."""
    subset = _subsample(dataset, b, streams, resample)
    logger.info("Simulating %s effects from %d resampled rows", bundle.mode, subset.n)
    if bundle.mode == NATURAL_PSE:
        result = estimate_natural_pse(bundle, subset, 1, streams, threads=threads)
    else:
        result = estimate_interventional(bundle, subset, 1, streams, threads=threads)
    result.metadata.update({"b": b, "n": dataset.n, "engine": "flow"})
    return result


def transform_diagnostics(models: Mapping[str, FlowModel], dataset: CausalDataset,
                          streams: RandomStreams) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Original, dequantized and transformed values per flow, and a normality summary.

    Returns:
        Tuple of (per-row frame, per-role summary with mean, SD and KS statistic vs N(0, 1))
    """
    frames = []
    summary = []
    for k, (role, model) in enumerate(models.items()):
        original = dataset.column(model.target)
        dequantized = original
        if model.dequantizer is not None:
            dequantized = model.dequantizer.dequantize(original, streams.generator("dequantize", 1, k))
        z = flow_forward(model, dataset.columns, dequantized)
        frames.append(pd.DataFrame({"role": role, "variable": model.target, "original": original,
                                    "dequantized": dequantized, "transformed": z}))
        ks = stats.kstest(z, "norm")
        summary.append({"role": role, "variable": model.target, "n": int(z.size), "mean": float(np.mean(z)),
                        "sd": float(np.std(z, ddof=1)) if z.size > 1 else float("nan"),
                        "ks_statistic": float(ks.statistic), "ks_pvalue": float(ks.pvalue)})
    return pd.concat(frames, ignore_index=True), pd.DataFrame(summary)
