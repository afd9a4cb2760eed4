"""
Run Pipeline
Orchestrates one configured run: load data, fit or train models, estimate, bootstrap, write outputs.
"""

import json
import logging
import os
import time
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd
import torch

from src.models.bootstrap import BootstrapResult, bootstrap
from src.models.config import FLOW, RunConfig
from src.models.descriptives import VariableSummary, summarize, summary_frame
from src.models.excel_handler import load_table
from src.models.flow_simulation import estimate_subsampled, flow_bundles, transform_diagnostics
from src.models.flow_training import TrainedFlows, train
from src.models.medsim import estimate_interventional, estimate_natural_pse, fit_bundle
from src.models.random_streams import RandomStreams
from src.models.report import EffectReport, format_table, to_sd_units
from src.models.schema import NATURAL_PSE, CausalDataset
from src.utils.errors import DataError, MedsimError
from src.utils.validators import DataValidator

logger = logging.getLogger(__name__)

EFFECTS_JSON = "effects.json"
EFFECTS_TEXT = "effects.txt"
RUN_REPORT_JSON = "run_report.json"
DIAGNOSTICS_DIR = "diagnostics"
MODELS_DIR = "models"


@dataclass
class RunReport:
    """Everything a run produced, in memory."""
    config: Dict[str, Any]
    effects: Optional[EffectReport] = None
    descriptives: Dict[str, VariableSummary] = field(default_factory=dict)
    models: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    diagnostics: Dict[str, pd.DataFrame] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    outputs: Dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        """run_report.json content. Timings make it differ between runs; effects.json does not."""
        return {
            "config": self.config,
            "timings_seconds": {stage: round(seconds, 6) for stage, seconds in self.timings.items()},
            "warnings": list(self.warnings),
            "descriptives": {name: s.to_dict() for name, s in self.descriptives.items()},
            "models": sorted(self.models),
            "outputs": dict(self.outputs),
        }


class RunPipeline:
    """Runs a RunConfig end to end and writes its outputs."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.streams = RandomStreams(config.seed)
        self._written: List[str] = []
        self._created_dirs: List[str] = []

    def _timed(self, report: RunReport, stage: str, action: Callable[[], Any]) -> Any:
        logger.info("%s...", stage.capitalize())
        start = time.perf_counter()
        try:
            return action()
        except MedsimError as e:
            raise e.add_context(stage)
        finally:
            report.timings[stage] = time.perf_counter() - start

    def load_data(self) -> CausalDataset:
        """Read and validate the configured data file."""
        is_valid, error = DataValidator.validate_file_path(self.config.data_path)
        if not is_valid:
            raise DataError(error)
        return load_table(self.config.data_path, self.config.schema)

    def estimate(self, dataset: CausalDataset, streams: RandomStreams, threads: int = 1,
                 keep: Optional[Dict[str, Any]] = None) -> EffectReport:
        """Point estimates of every configured mode, refitting all models on ``dataset``.

        Args:
            dataset: Data to fit on
            streams: Random streams for training and simulation
            threads: Worker cap for block simulation
            keep: If given, receives the fitted bundles or trained flows

        Returns:
            EffectReport: Merged report over the configured modes
        """
        if self.config.engine == FLOW:
            return self._estimate_flow(dataset, streams, threads, keep)
        reports = []
        for mode in self.config.modes:
            bundle = fit_bundle(dataset, mode, self.config.resolved_models(mode))
            if keep is not None:
                keep[mode] = bundle
            estimator = estimate_natural_pse if mode == NATURAL_PSE else estimate_interventional
            reports.append(estimator(bundle, dataset, self.config.J, streams, threads=threads))
        return self._merge(reports, engine="parametric")

    def _estimate_flow(self, dataset: CausalDataset, streams: RandomStreams, threads: int,
                       keep: Optional[Dict[str, Any]]) -> EffectReport:
        train_config = self.config.flow.train
        if streams.seed != self.config.seed:
            train_config = replace(train_config, seed=streams.seed)
        trained = train(dataset, self.config.modes, self.config.flow.architecture, train_config)
        if keep is not None:
            keep["flows"] = trained
        bundles = flow_bundles(trained.models, dataset.schema, self.config.modes)
        reports = [estimate_subsampled(bundles[mode], dataset, self.config.b, streams, threads=threads)
                   for mode in self.config.modes]
        return self._merge(reports, engine=FLOW)

    @staticmethod
    def _merge(reports: List[EffectReport], engine: str) -> EffectReport:
        merged = reports[0]
        for other in reports[1:]:
            merged = merged.merge(other)
        merged.metadata["engine"] = engine
        return merged

    def run(self) -> RunReport:
        """Execute the full pipeline; partial outputs are removed if any stage fails.

        Returns:
            RunReport: Effects, diagnostics, model summaries and timings
        """
        report = RunReport(config=self.config.to_dict())
        if self.config.engine == FLOW:
            # Flow results must not depend on torch's intra-op thread count.
            torch.set_num_threads(1)
        try:
            self._run(report)
        except BaseException:
            self._remove_partial_outputs()
            raise
        return report

    def _run(self, report: RunReport):
        config = self.config
        dataset = self._timed(report, "loading data", self.load_data)
        logger.info("Loaded %d complete rows from %s", dataset.n, config.data)
        report.warnings.extend(DataValidator.dataset_warnings(dataset, config.engine))
        for warning in report.warnings:
            logger.warning(warning)
        report.descriptives = summarize(dataset)
        report.diagnostics["descriptives"] = summary_frame(report.descriptives)

        fitted: Dict[str, Any] = {}
        point = self._timed(report, "estimation",
                            lambda: self.estimate(dataset, self.streams, config.threads, fitted))
        self._collect_models(report, fitted, dataset)

        if config.B > 0:
            # Replicates run concurrently, so each one simulates single-threaded.
            inner_threads = 1 if config.threads > 1 else config.threads
            result: BootstrapResult = self._timed(
                report, "bootstrap",
                lambda: bootstrap(dataset, lambda ds, s: self.estimate(ds, s, inner_threads), point,
                                  config.B, self.streams, alpha=config.alpha, threads=config.threads))
            point = result.apply(point)
            report.diagnostics["bootstrap_replicates"] = result.replicates_frame()
            if result.failures:
                report.warnings.append(f"{len(result.failures)} bootstrap replicate(s) failed and were skipped")
        if config.sd_units:
            point = to_sd_units(point, outcome_sd(dataset))
        report.effects = point
        self._timed(report, "writing outputs", lambda: self.write_outputs(report))

    def _collect_models(self, report: RunReport, fitted: Dict[str, Any], dataset: CausalDataset):
        if "flows" in fitted:
            trained: TrainedFlows = fitted["flows"]
            for key, model in trained.models.items():
                report.models[f"flow_{key}"] = model.to_dict()
            report.models["training"] = trained.report.to_dict()
            report.diagnostics["training_losses"] = trained.report.losses_frame()
            report.diagnostics["training_restarts"] = trained.report.restarts_frame()
            frame, summary = transform_diagnostics(trained.models, dataset, self.streams)
            report.diagnostics["transform"] = frame
            report.diagnostics["transform_summary"] = summary
            return
        rows = []
        for mode, bundle in fitted.items():
            for role, model in zip(("L", "X", "Y"), bundle.models):
                report.models[f"{mode}_{role}"] = model.to_dict()
                labels = ["(Intercept)"] + model.terms.labels
                for label, coefficient in zip(labels, model.coefficients):
                    rows.append({"mode": mode, "role": role, "term": label, "coefficient": coefficient})
                for k, threshold in enumerate(model.thresholds or ()):
                    rows.append({"mode": mode, "role": role, "term": f"(threshold {k})", "coefficient": threshold})
        report.diagnostics["coefficients"] = pd.DataFrame(rows, columns=["mode", "role", "term", "coefficient"])

    def _ensure_dir(self, path: str):
        if not os.path.isdir(path):
            os.makedirs(path, exist_ok=True)
            self._created_dirs.append(path)

    def _write_text(self, path: str, text: str):
        self._written.append(path)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)

    def write_outputs(self, report: RunReport):
        """Write effects, diagnostics, models and the run report under the output directory."""
        root = self.config.output_path
        self._ensure_dir(root)
        self._ensure_dir(os.path.join(root, DIAGNOSTICS_DIR))
        self._ensure_dir(os.path.join(root, MODELS_DIR))
        try:
            effects_path = os.path.join(root, EFFECTS_JSON)
            self._write_text(effects_path, report.effects.to_json())
            report.outputs["effects"] = effects_path
            text_path = os.path.join(root, EFFECTS_TEXT)
            self._write_text(text_path, format_table(report.effects))
            report.outputs["effect table"] = text_path
            for name, frame in report.diagnostics.items():
                path = os.path.join(root, DIAGNOSTICS_DIR, f"{name}.csv")
                self._written.append(path)
                frame.to_csv(path, index=False)
            report.outputs["diagnostics"] = os.path.join(root, DIAGNOSTICS_DIR)
            for name, data in report.models.items():
                self._write_text(os.path.join(root, MODELS_DIR, f"{name}.json"), json.dumps(data, indent=2) + "\n")
            report.outputs["models"] = os.path.join(root, MODELS_DIR)
            run_path = os.path.join(root, RUN_REPORT_JSON)
            report.outputs["run report"] = run_path
            self._write_text(run_path, json.dumps(report.to_dict(), indent=2) + "\n")
        except PermissionError:
            raise DataError(f"Permission denied when writing to: {root}")
        except OSError as e:
            raise DataError(f"Unable to write outputs to {root}: {e}")

    def _remove_partial_outputs(self):
        for path in reversed(self._written):
            if os.path.isfile(path):
                os.remove(path)
        for path in reversed(self._created_dirs):
            if os.path.isdir(path) and not os.listdir(path):
                os.rmdir(path)
        if self._written:
            logger.warning("Removed %d partial output file(s)", len(self._written))
        self._written.clear()
        self._created_dirs.clear()


def load_report(path: str) -> EffectReport:
    """Read an effects.json file written by a previous run."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            return EffectReport.from_dict(json.load(f))
    except FileNotFoundError:
        raise DataError(f"Report not found: {path}")
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise DataError(f"Not a valid effects report: {path} ({e})")


def outcome_sd(dataset: CausalDataset) -> float:
    """Sample SD of the outcome, the divisor for SD units."""
    values = dataset.column(dataset.schema.outcome.name)
    return float(np.std(values, ddof=1)) if values.size > 1 else float("nan")
