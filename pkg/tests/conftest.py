"""Shared fixtures: small schemas, the hand-checked discrete DGP, linear-Gaussian DGPs and config files."""

import json
import os
from typing import Any, Dict, Mapping, Tuple

import numpy as np
import pytest

from src.models.oracle import DiscreteDGP, LinearGaussianDGP
from src.models.schema import CausalSchema, Variable, VariableKind

TEST_DATA = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "test_data")


class ConstantModel:
    """Conditional model that ignores its innovations and returns one value."""

    def __init__(self, target: str, parents: Tuple[str, ...] = (), value: float = 3.0):
        self._target = target
        self._parents = tuple(parents)
        self.value = value

    @property
    def target(self) -> str:
        return self._target

    @property
    def parents(self) -> Tuple[str, ...]:
        return self._parents

    def sample_innovations(self, columns: Mapping[str, Any], u: np.ndarray) -> np.ndarray:
        return np.full(np.asarray(u).size, self.value)


class ThresholdModel:
    """Binary draw ``u < p`` that never looks at its parents."""

    def __init__(self, target: str, p: float, parents: Tuple[str, ...] = ()):
        self._target = target
        self._parents = tuple(parents)
        self.p = p

    @property
    def target(self) -> str:
        return self._target

    @property
    def parents(self) -> Tuple[str, ...]:
        return self._parents

    def sample_innovations(self, columns: Mapping[str, Any], u: np.ndarray) -> np.ndarray:
        return (np.asarray(u) < self.p).astype(np.float64)


def hand_dgp_tables() -> DiscreteDGP:
    return DiscreteDGP.binary(
        0.4,
        lambda v: 0.5,
        lambda v, d: 0.2 + 0.3 * d + 0.1 * v,
        lambda v, d, l: 0.1 + 0.2 * d + 0.3 * l + 0.1 * v,
        lambda v, d, l, x: 0.1 + 0.2 * d + 0.15 * l + 0.25 * x + 0.1 * v,
    )


@pytest.fixture
def hand_dgp() -> DiscreteDGP:
    return hand_dgp_tables()


@pytest.fixture
def hand_dgp_path() -> str:
    return os.path.join(TEST_DATA, "hand_dgp.json")


@pytest.fixture
def binary_schema() -> CausalSchema:
    binary = VariableKind.BINARY
    return CausalSchema(
        confounders=(Variable("v", binary),),
        treatment=Variable("d", binary),
        contrast=(1.0, 0.0),
        mediators=(Variable("l", binary), Variable("x", binary)),
        outcome=Variable("y", binary),
    )


@pytest.fixture
def mixed_schema() -> CausalSchema:
    return CausalSchema(
        confounders=(Variable("v", VariableKind.CONTINUOUS),),
        treatment=Variable("d", VariableKind.BINARY),
        contrast=(1.0, 0.0),
        mediators=(Variable("l", VariableKind.ORDINAL, 6), Variable("x", VariableKind.COUNT)),
        outcome=Variable("y", VariableKind.CONTINUOUS),
    )


@pytest.fixture
def linear_dgp() -> LinearGaussianDGP:
    """Coefficients whose exact effects are PSE D->X->Y 0.18, PSE D->L~>Y 0.245, ATE 0.625."""
    return LinearGaussianDGP(
        a=(0.1, 0.3, 0.5),
        b=(-0.2, 0.2, 0.3, 0.4),
        c=(0.3, 0.1, 0.2, 0.25, 0.6),
        d0=0.0,
        d1=0.5,
    )


def base_config(data: str = "data.csv") -> Dict[str, Any]:
    """A valid parametric configuration over the binary v, d, l, x, y schema."""
    return {
        "spec_version": 1,
        "data": data,
        "schema": {
            "confounders": [{"name": "v", "kind": "binary"}],
            "treatment": {"name": "d", "kind": "binary"},
            "contrast": [1, 0],
            "mediators": [{"name": "l", "kind": "binary"}, {"name": "x", "kind": "binary"}],
            "outcome": {"name": "y", "kind": "binary"},
        },
        "engine": "parametric",
        "mode": "both",
        "models": {
            "L": {"family": "bernoulli", "terms": "additive"},
            "X": {"family": "bernoulli", "terms": "treatment-interactions"},
            "Y": {"family": "bernoulli", "terms": "treatment-interactions"},
        },
        "J": 20,
        "B": 0,
        "seed": 11,
        "output_dir": "out",
    }


@pytest.fixture
def write_config(tmp_path):
    """Write a config dict as JSON next to the sample data; returns the config path."""
    def _write(config: Dict[str, Any], name: str = "config.json") -> str:
        path = tmp_path / name
        path.write_text(json.dumps(config, indent=2), encoding="utf-8")
        return str(path)
    return _write
