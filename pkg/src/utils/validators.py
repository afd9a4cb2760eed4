"""
Validation Utilities
Collects every problem in a run configuration or dataset instead of stopping at the first.
"""

import os
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from src.models.config import (
    BOTH,
    FLOW,
    MODEL_ROLES,
    PARAMETRIC,
    TOP_LEVEL_KEYS,
    FlowSettings,
    ModelSpec,
    RunConfig,
    parse_settings,
)
from src.models.flow_training import SMALL_SAMPLE_ROWS, X_INTERVENTIONAL
from src.models.schema import MODES, NATURAL_PSE, CausalDataset, CausalSchema
from src.utils.errors import MedsimError

TABLE_EXTENSIONS = (".csv", ".xlsx", ".xlsm")


class DataValidator:
    """Checks on input files and loaded data."""

    @staticmethod
    def validate_file_path(file_path: str) -> Tuple[bool, Optional[str]]:
        """Validate file path exists and is readable.

        Args:
            file_path: Path to validate

        Returns:
            Tuple of (is_valid, error_message)
        """
        if not file_path:
            return False, "File path is empty"

        if not os.path.exists(file_path):
            return False, f"File does not exist: {file_path}"

        if not os.path.isfile(file_path):
            return False, f"Path is not a file: {file_path}"

        if not os.access(file_path, os.R_OK):
            return False, f"File is not readable: {file_path}"

        return True, None

    @staticmethod
    def validate_table_extension(file_path: str) -> Tuple[bool, Optional[str]]:
        """Only CSV and Excel workbooks are read."""
        extension = os.path.splitext(file_path)[1].lower()
        if extension not in TABLE_EXTENSIONS:
            return False, f"Unsupported data format '{extension}'; expected one of {', '.join(TABLE_EXTENSIONS)}"
        return True, None

    @staticmethod
    def dataset_warnings(dataset: CausalDataset, engine: str = PARAMETRIC) -> List[str]:
        """Non-fatal concerns about a loaded dataset.

        Args:
            dataset: Validated complete-case data
            engine: 'parametric' or 'flow'

        Returns:
            List of warning messages
        """
        warnings = []
        schema = dataset.schema
        treatment = dataset.column(schema.treatment.name)
        for value in schema.contrast:
            if schema.treatment.is_discrete and not np.any(treatment == value):
                warnings.append(f"Contrast value {value:g} of '{schema.treatment.name}' is never observed")
        for var in schema.variables:
            if np.ptp(dataset.column(var.name)) == 0:
                warnings.append(f"Variable '{var.name}' is constant in the data")
        if engine == FLOW and dataset.n < SMALL_SAMPLE_ROWS:
            warnings.append(f"Flow engine with {dataset.n} rows; at least {SMALL_SAMPLE_ROWS} are recommended")
        return warnings


class ConfigValidator:
    """Validates a parsed JSON run configuration."""

    @staticmethod
    def validate_models(data: Mapping[str, Any], schema: Optional[CausalSchema],
                        engine: str, modes: List[str]) -> Tuple[List[str], List[str]]:
        """Check every model specification against the schema.

        Returns:
            Tuple of (errors, warnings)
        """
        errors: List[str] = []
        warnings: List[str] = []
        raw = data.get("models", {})
        if not isinstance(raw, Mapping):
            return ["'models' must be an object keyed by role"], warnings
        unknown = sorted(set(raw) - set(MODEL_ROLES))
        if unknown:
            errors.append(f"Unknown model roles: {', '.join(unknown)}")
        specs: Dict[str, ModelSpec] = {}
        for role in MODEL_ROLES:
            if role not in raw:
                continue
            try:
                specs[role] = ModelSpec.from_dict(raw[role])
            except MedsimError as e:
                errors.append(f"models.{role}: {e.describe()}")
        if engine == FLOW:
            if specs:
                warnings.append("Model specifications are ignored by the flow engine")
            return errors, warnings
        if schema is None:
            return errors, warnings
        config = RunConfig(data="", schema=schema, models=specs)
        for mode in modes:
            x_key = "X" if mode == NATURAL_PSE else X_INTERVENTIONAL
            if mode != NATURAL_PSE and "X" in specs and x_key not in specs:
                warnings.append("No X_interventional model; using the X model without its L terms")
            for role, key in (("L", "L"), ("X", x_key), ("Y", "Y")):
                if key not in specs and not (key == x_key and "X" in specs):
                    continue
                try:
                    config.model_spec(key).resolve(schema, role, mode)
                except MedsimError as e:
                    message = f"models.{key} ({mode}): {e.describe()}"
                    if message not in errors:
                        errors.append(message)
        return errors, warnings

    @staticmethod
    def validate_config(data: Any, base_dir: str = ".") -> Tuple[bool, List[str], List[str]]:
        """Validate a configuration object, collecting every problem.

        Args:
            data: Parsed JSON configuration
            base_dir: Directory that the data path is resolved against

        Returns:
            Tuple of (is_valid, errors, warnings)
        """
        if not isinstance(data, Mapping):
            return False, ["Configuration must be a JSON object"], []
        warnings: List[str] = []

        for key in sorted(set(data) - set(TOP_LEVEL_KEYS)):
            warnings.append(f"Unknown setting '{key}' is ignored")

        values, errors = parse_settings(data, collect=True)

        if "data" in values:
            path = values["data"]
            resolved = path if os.path.isabs(path) else os.path.join(base_dir, path)
            for check in (DataValidator.validate_table_extension, DataValidator.validate_file_path):
                is_valid, error = check(resolved)
                if not is_valid:
                    errors.append(error)
                    break

        engine = values.get("engine", PARAMETRIC)
        modes: List[str] = []
        if "mode" in values:
            modes = list(MODES) if values["mode"] == BOTH else [values["mode"]]
        model_errors, model_warnings = ConfigValidator.validate_models(data, values.get("schema"), engine, modes)
        errors.extend(model_errors)
        warnings.extend(model_warnings)

        if values.get("B") == 0:
            warnings.append("B = 0: effects are reported without confidence intervals")

        if "flow" in data:
            if engine == PARAMETRIC:
                warnings.append("'flow' settings are ignored by the parametric engine")
            try:
                settings = FlowSettings.from_dict(data["flow"], values.get("seed", 0))
                if engine == FLOW and settings.architecture.is_small:
                    warnings.append("Flow networks with fewer than four hidden layers of ten nodes may underfit")
            except MedsimError as e:
                errors.append(e.describe())
        if engine == PARAMETRIC and "b" in data:
            warnings.append("'b' is only used by the flow engine")

        return len(errors) == 0, errors, warnings
