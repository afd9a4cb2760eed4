"""
Run Configuration
JSON run configuration: data, schema, engine, model specifications and simulation settings.
"""

import json
import os
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from src.models.flow_training import X_INTERVENTIONAL, TrainConfig
from src.models.flows import MLPConfig
from src.models.glm import Family
from src.models.schema import INTERVENTIONAL, NATURAL_PSE, CausalSchema
from src.models.terms import Term, TermSpec
from src.utils.errors import ConfigError, MedsimError

SPEC_VERSION = 1
PARAMETRIC = "parametric"
FLOW = "flow"
ENGINES = (PARAMETRIC, FLOW)
BOTH = "both"
MODE_CHOICES = (NATURAL_PSE, INTERVENTIONAL, BOTH)
MODEL_ROLES = ("L", "X", X_INTERVENTIONAL, "Y")
TOP_LEVEL_KEYS = ("spec_version", "data", "schema", "engine", "mode", "models", "flow",
                  "J", "B", "b", "seed", "threads", "output_dir", "sd_units", "alpha")


@dataclass(frozen=True)
class ModelSpec:
    """Family and terms of one parametric model; the family defaults from the response kind."""
    family: Optional[str] = None
    terms: Union[str, Tuple[str, ...]] = "additive"

    def __post_init__(self):
        if not isinstance(self.terms, str):
            object.__setattr__(self, "terms", tuple(str(t) for t in self.terms))

    def to_dict(self) -> Dict[str, Any]:
        return {"family": self.family, "terms": self.terms if isinstance(self.terms, str) else list(self.terms)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ModelSpec":
        if not isinstance(data, Mapping):
            raise ConfigError("A model specification must be an object with 'family' and 'terms'")
        unknown = sorted(set(data) - {"family", "terms"})
        if unknown:
            raise ConfigError(f"Unknown model settings: {', '.join(unknown)}")
        terms = data.get("terms", "additive")
        if not isinstance(terms, (str, list, tuple)):
            raise ConfigError("'terms' must be a list of term strings or a shorthand name")
        return cls(family=data.get("family"), terms=terms)

    def without(self, name: str) -> "ModelSpec":
        """Same spec with every explicit term that involves ``name`` removed."""
        if isinstance(self.terms, str):
            return self
        return replace(self, terms=tuple(t for t in self.terms if name not in Term.parse(t).variables))

    def resolve(self, schema: CausalSchema, role: str, mode: str) -> Tuple[Family, TermSpec]:
        """Family and terms for ``role`` ('L', 'X' or 'Y') under ``mode``."""
        variable = schema.role_variable(role)
        try:
            family = Family(self.family) if self.family else Family.for_kind(variable.kind)
        except ValueError:
            raise ConfigError(f"Unknown family '{self.family}' for the {role} model")
        if family.response_kind is not variable.kind:
            raise ConfigError(f"Family '{family.value}' cannot model {variable.kind.value} variable '{variable.name}'")
        parents = schema.parents_of(role, mode)
        terms = TermSpec.from_config(self.terms, parents, schema.treatment.name,
                                     [m.name for m in schema.mediators])
        terms.check_variables(parents, context=f"{role} model ({mode})")
        return family, terms


@dataclass(frozen=True)
class FlowSettings:
    architecture: MLPConfig = MLPConfig()
    train: TrainConfig = TrainConfig()

    def to_dict(self) -> Dict[str, Any]:
        data = self.architecture.to_dict()
        data["dequantization_sd"] = self.train.dequantization_sd
        data["quadrature_nodes"] = self.train.quadrature_nodes
        train = self.train.to_dict()
        train.pop("dequantization_sd")
        train.pop("quadrature_nodes")
        data["train"] = train
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], seed: int = 0) -> "FlowSettings":
        if not isinstance(data, Mapping):
            raise ConfigError("'flow' must be an object")
        known = {"embedding_widths", "integrand_widths", "embedding_dim", "train",
                 "dequantization_sd", "quadrature_nodes"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown flow settings: {', '.join(unknown)}")
        try:
            architecture = MLPConfig.from_dict(data)
        except (MedsimError, TypeError, ValueError) as e:
            raise ConfigError(f"Invalid flow architecture: {e}")
        train = dict(data.get("train", {}))
        train.setdefault("seed", seed)
        for key in ("dequantization_sd", "quadrature_nodes"):
            if key in data:
                train[key] = data[key]
        try:
            return cls(architecture, TrainConfig.from_dict(train))
        except TypeError as e:
            raise ConfigError(f"Invalid training settings: {e}")


def _integer(data: Mapping[str, Any], key: str, default: int, minimum: int) -> int:
    value = data.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"'{key}' must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"'{key}' must be at least {minimum}, got {value}")
    return value


def _choice(data: Mapping[str, Any], key: str, choices: Sequence[str], default: str) -> str:
    value = data.get(key, default)
    if value not in choices:
        raise ConfigError(f"'{key}' must be one of {', '.join(choices)}, got {value!r}")
    return value


def _spec_version(data: Mapping[str, Any]) -> int:
    if data.get("spec_version") != SPEC_VERSION:
        raise ConfigError(f"Unsupported spec_version {data.get('spec_version')!r}; expected {SPEC_VERSION}")
    return SPEC_VERSION


def _data_path(data: Mapping[str, Any]) -> str:
    path = data.get("data")
    if not isinstance(path, str) or not path:
        raise ConfigError("'data' must name a .csv or .xlsx file")
    return path


def parse_schema(data: Mapping[str, Any]) -> CausalSchema:
    if "schema" not in data:
        raise ConfigError("'schema' is missing")
    try:
        return CausalSchema.from_dict(data["schema"])
    except MedsimError as e:
        raise ConfigError(f"Invalid schema: {e.describe()}")
    except (TypeError, AttributeError, KeyError) as e:
        raise ConfigError(f"Malformed schema: {e}")


def _bootstrap_replicates(data: Mapping[str, Any]) -> int:
    B = _integer(data, "B", 2000, 0)
    if B == 1:
        raise ConfigError("'B' must be 0 (no intervals) or at least 2")
    return B


def _alpha(data: Mapping[str, Any]) -> float:
    alpha = data.get("alpha", 0.05)
    if isinstance(alpha, bool) or not isinstance(alpha, (int, float)) or not 0 < alpha < 1:
        raise ConfigError(f"'alpha' must lie in (0, 1), got {alpha!r}")
    return float(alpha)


def _sd_units(data: Mapping[str, Any]) -> bool:
    sd_units = data.get("sd_units", False)
    if not isinstance(sd_units, bool):
        raise ConfigError(f"'sd_units' must be true or false, got {sd_units!r}")
    return sd_units


def _output_dir(data: Mapping[str, Any]) -> str:
    output_dir = data.get("output_dir", "output")
    if not isinstance(output_dir, str) or not output_dir:
        raise ConfigError("'output_dir' must be a non-empty path")
    return output_dir


def parse_models(data: Mapping[str, Any]) -> Dict[str, ModelSpec]:
    """The 'models' section as ModelSpecs keyed by role."""
    raw = data.get("models", {})
    if not isinstance(raw, Mapping):
        raise ConfigError("'models' must be an object keyed by role")
    unknown = sorted(set(raw) - set(MODEL_ROLES))
    if unknown:
        raise ConfigError(f"Unknown model roles: {', '.join(unknown)}")
    return {role: ModelSpec.from_dict(raw[role]) for role in MODEL_ROLES if role in raw}


# Top-level settings other than 'models' and 'flow', in checking order.
SETTINGS: Tuple[Tuple[str, Callable[[Mapping[str, Any]], Any]], ...] = (
    ("spec_version", _spec_version),
    ("data", _data_path),
    ("schema", parse_schema),
    ("engine", lambda data: _choice(data, "engine", ENGINES, PARAMETRIC)),
    ("mode", lambda data: _choice(data, "mode", MODE_CHOICES, BOTH)),
    ("J", lambda data: _integer(data, "J", 2000, 1)),
    ("B", _bootstrap_replicates),
    ("b", lambda data: _integer(data, "b", 100000, 1)),
    ("seed", lambda data: _integer(data, "seed", 0, 0)),
    ("threads", lambda data: _integer(data, "threads", 1, 1)),
    ("alpha", _alpha),
    ("sd_units", _sd_units),
    ("output_dir", _output_dir),
)


def parse_settings(data: Mapping[str, Any], collect: bool = False) -> Tuple[Dict[str, Any], List[str]]:
    """Parse every entry of SETTINGS.

    Without ``collect`` the first ConfigError propagates; with it, each failing
    setting is left out of the values and its message added to the errors.

    Returns:
        Tuple of (parsed values keyed by setting, error messages)
    """
    values: Dict[str, Any] = {}
    errors: List[str] = []
    for key, parse in SETTINGS:
        try:
            values[key] = parse(data)
        except ConfigError as e:
            if not collect:
                raise
            errors.append(e.describe())
    return values, errors


@dataclass(frozen=True)
class RunConfig:
    """A complete, validated run configuration."""
    data: str
    schema: CausalSchema
    engine: str = PARAMETRIC
    mode: str = BOTH
    models: Dict[str, ModelSpec] = field(default_factory=dict)
    flow: FlowSettings = FlowSettings()
    J: int = 2000
    B: int = 2000
    b: int = 100000
    seed: int = 0
    threads: int = 1
    output_dir: str = "output"
    sd_units: bool = False
    alpha: float = 0.05
    base_dir: str = field(default=".", compare=False, repr=False)

    @property
    def modes(self) -> Tuple[str, ...]:
        return (NATURAL_PSE, INTERVENTIONAL) if self.mode == BOTH else (self.mode,)

    @property
    def data_path(self) -> str:
        return self.data if os.path.isabs(self.data) else os.path.join(self.base_dir, self.data)

    @property
    def output_path(self) -> str:
        return self.output_dir if os.path.isabs(self.output_dir) else os.path.join(self.base_dir, self.output_dir)

    def model_spec(self, role: str) -> ModelSpec:
        """Spec of a model role; the interventional X model falls back to X without L."""
        if role in self.models:
            return self.models[role]
        if role == X_INTERVENTIONAL and "X" in self.models:
            return self.models["X"].without(self.schema.first_mediator.name)
        return ModelSpec()

    def resolved_models(self, mode: str) -> Dict[str, Tuple[Family, TermSpec]]:
        """Role ('L', 'X', 'Y') to (family, terms) for ``mode``."""
        x_role = "X" if mode == NATURAL_PSE else X_INTERVENTIONAL
        resolved = {}
        for role, key in (("L", "L"), ("X", x_role), ("Y", "Y")):
            try:
                resolved[role] = self.model_spec(key).resolve(self.schema, role, mode)
            except MedsimError as e:
                raise e.add_context(f"models.{key}")
        return resolved

    def with_overrides(self, seed: Optional[int] = None, threads: Optional[int] = None,
                       output_dir: Optional[str] = None) -> "RunConfig":
        """Apply command-line overrides."""
        changes: Dict[str, Any] = {}
        if seed is not None:
            if seed < 0:
                raise ConfigError(f"--seed must be non-negative, got {seed}")
            changes["seed"] = seed
            if self.flow.train.seed == self.seed:
                changes["flow"] = replace(self.flow, train=replace(self.flow.train, seed=seed))
        if threads is not None:
            if threads < 1:
                raise ConfigError(f"--threads must be at least 1, got {threads}")
            changes["threads"] = threads
        if output_dir is not None:
            changes["output_dir"] = output_dir
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        """Normalised echo: defaults filled, keys in declaration order."""
        return {
            "spec_version": SPEC_VERSION,
            "data": self.data,
            "schema": self.schema.to_dict(),
            "engine": self.engine,
            "mode": self.mode,
            "models": {role: self.models[role].to_dict() for role in MODEL_ROLES if role in self.models},
            "flow": self.flow.to_dict(),
            "J": self.J,
            "B": self.B,
            "b": self.b,
            "seed": self.seed,
            "threads": self.threads,
            "output_dir": self.output_dir,
            "sd_units": self.sd_units,
            "alpha": self.alpha,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base_dir: str = ".") -> "RunConfig":
        """Parse a configuration, raising ConfigError at the first problem.

        Args:
            data: Parsed JSON object
            base_dir: Directory that relative paths are resolved against

        Returns:
            RunConfig: The parsed configuration
        """
        if not isinstance(data, Mapping):
            raise ConfigError("Configuration must be a JSON object")
        values, _ = parse_settings(data)
        config = cls(
            models=parse_models(data),
            flow=FlowSettings.from_dict(data.get("flow", {}), values["seed"]),
            base_dir=base_dir,
            **{key: value for key, value in values.items() if key != "spec_version"},
        )
        if config.engine == PARAMETRIC:
            for mode_name in config.modes:
                config.resolved_models(mode_name)
        return config


def read_config_file(path: str) -> Dict[str, Any]:
    """Load the JSON object of a configuration file."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"Configuration file not found: {path}")
    except PermissionError:
        raise ConfigError(f"Permission denied when reading configuration: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Configuration {path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"Configuration {path} must contain a JSON object")
    return data


def load_config(path: str) -> RunConfig:
    """Read and parse a configuration file; relative paths resolve against its directory."""
    return RunConfig.from_dict(read_config_file(path), base_dir=os.path.dirname(os.path.abspath(path)))
