"""
Exact Oracles
Fully discrete and linear-Gaussian data-generating processes with exact marginal means,
closed-form effects and ancestral sampling of synthetic datasets.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from src.models import report as effects
from src.models.medsim import (
    LambdaAssignment,
    PsiAssignment,
    interventional_effects,
    lambda_assignments,
    natural_pse_effects,
    psi_assignments,
)
from src.models.random_streams import RandomStreams
from src.models.schema import CausalDataset, CausalSchema, Variable, VariableKind
from src.utils.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

TABLE_TOLERANCE = 1e-12


def _infer_kind(values: Sequence[float]) -> Tuple[VariableKind, Optional[int]]:
    values = [float(v) for v in values]
    if values == [0.0, 1.0]:
        return VariableKind.BINARY, None
    if values == [float(k) for k in range(len(values))]:
        return VariableKind.ORDINAL, len(values)
    if all(v >= 0 and v == int(v) for v in values):
        return VariableKind.COUNT, None
    return VariableKind.CONTINUOUS, None


def _variable(name: str, values: Sequence[float], kind: Optional[str] = None) -> Variable:
    if kind is not None:
        var_kind = VariableKind(kind)
        levels = len(values) if var_kind is VariableKind.ORDINAL else None
        return Variable(name, var_kind, levels)
    var_kind, levels = _infer_kind(values)
    return Variable(name, var_kind, levels)


@dataclass(frozen=True)
class DiscreteDGP:
    """Probability tables over finite supports.

    Confounder states are joint rows of ``v_states``. Tables are indexed
    ``p_d[s, d]``, ``p_l[s, d, l]``, ``p_x[s, d, l, x]``, ``p_y[s, d, l, x, y]``.
    """
    names: Tuple[str, ...]
    v_states: np.ndarray
    p_v: np.ndarray
    d_values: np.ndarray
    l_values: np.ndarray
    x_values: np.ndarray
    y_values: np.ndarray
    p_d: np.ndarray
    p_l: np.ndarray
    p_x: np.ndarray
    p_y: np.ndarray
    kinds: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for attr in ("v_states", "p_v", "d_values", "l_values", "x_values", "y_values",
                     "p_d", "p_l", "p_x", "p_y"):
            object.__setattr__(self, attr, np.asarray(getattr(self, attr), dtype=np.float64))
        if self.v_states.ndim == 1:
            object.__setattr__(self, "v_states", self.v_states[:, None])
        S = self.v_states.shape[0]
        D, L, X, Y = (self.d_values.size, self.l_values.size, self.x_values.size, self.y_values.size)
        if len(self.names) != self.v_states.shape[1] + 4:
            raise ConfigError("names must list every confounder followed by D, L, X and Y")
        expected = {"p_v": (S,), "p_d": (S, D), "p_l": (S, D, L), "p_x": (S, D, L, X), "p_y": (S, D, L, X, Y)}
        for attr, shape in expected.items():
            table = getattr(self, attr)
            if table.shape != shape:
                raise ConfigError(f"Table {attr} has shape {table.shape}, expected {shape}")
            if np.any(table < 0):
                raise ConfigError(f"Table {attr} has negative entries")
            sums = table.sum(axis=-1)
            if np.any(np.abs(sums - 1.0) > TABLE_TOLERANCE):
                raise ConfigError(f"Rows of {attr} must sum to 1 (worst {float(np.max(np.abs(sums - 1.0))):.3g})")

    @property
    def confounder_names(self) -> List[str]:
        return list(self.names[:-4])

    @property
    def expected_y(self) -> np.ndarray:
        """E[Y | s, d, l, x] from the outcome table."""
        return self.p_y @ self.y_values

    def index_of(self, d: float) -> int:
        matches = np.flatnonzero(self.d_values == d)
        if matches.size == 0:
            raise ConfigError(f"Treatment value {d} is not in the support {list(self.d_values)}")
        return int(matches[0])

    def schema(self, contrast: Tuple[float, float] = (1.0, 0.0)) -> CausalSchema:
        """Causal schema of the variables with kinds inferred from their supports."""
        d_name, l_name, x_name, y_name = self.names[-4:]
        confounders = tuple(
            _variable(name, np.unique(self.v_states[:, k]), self.kinds.get(name))
            for k, name in enumerate(self.confounder_names))
        return CausalSchema(
            confounders=confounders,
            treatment=_variable(d_name, self.d_values, self.kinds.get(d_name)),
            contrast=contrast,
            mediators=(_variable(l_name, self.l_values, self.kinds.get(l_name)),
                       _variable(x_name, self.x_values, self.kinds.get(x_name))),
            outcome=_variable(y_name, self.y_values, self.kinds.get(y_name)),
        )

    def sample(self, n: int, seed: int, contrast: Tuple[float, float] = (1.0, 0.0)) -> CausalDataset:
        """Ancestral sampling V -> D -> L -> X -> Y."""
        if n < 1:
            raise DataError(f"Sample size must be at least 1, got {n}")
        rng = RandomStreams(seed).generator("dataset", 0)
        s = _categorical(self.p_v[None, :].repeat(n, axis=0), rng)
        d = _categorical(self.p_d[s], rng)
        l = _categorical(self.p_l[s, d], rng)
        x = _categorical(self.p_x[s, d, l], rng)
        y = _categorical(self.p_y[s, d, l, x], rng)
        columns = {name: self.v_states[s, k] for k, name in enumerate(self.confounder_names)}
        d_name, l_name, x_name, y_name = self.names[-4:]
        columns.update({d_name: self.d_values[d], l_name: self.l_values[l],
                        x_name: self.x_values[x], y_name: self.y_values[y]})
        return CausalDataset(self.schema(contrast), columns)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "names": list(self.names),
            "v_states": self.v_states.tolist(),
            "p_v": self.p_v.tolist(),
            "d_values": self.d_values.tolist(),
            "l_values": self.l_values.tolist(),
            "x_values": self.x_values.tolist(),
            "y_values": self.y_values.tolist(),
            "p_d": self.p_d.tolist(),
            "p_l": self.p_l.tolist(),
            "p_x": self.p_x.tolist(),
            "p_y": self.p_y.tolist(),
            "kinds": dict(self.kinds),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DiscreteDGP":
        required = ("names", "v_states", "p_v", "d_values", "l_values", "x_values", "y_values",
                    "p_d", "p_l", "p_x", "p_y")
        missing = [key for key in required if key not in data]
        if missing:
            raise ConfigError(f"DGP table file is missing {', '.join(missing)}")
        return cls(names=tuple(data["names"]), kinds=dict(data.get("kinds", {})),
                   **{key: data[key] for key in required if key != "names"})

    @classmethod
    def from_json(cls, path: str) -> "DiscreteDGP":
        try:
            with open(path, "r", encoding="utf-8") as f:
                return cls.from_dict(json.load(f))
        except FileNotFoundError:
            raise ConfigError(f"DGP file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"DGP file {path} is not valid JSON: {e}")

    @classmethod
    def binary(cls, p_v: float, p_d: Callable[[int], float], p_l: Callable[[int, int], float],
               p_x: Callable[[int, int, int], float], p_y: Callable[[int, int, int, int], float],
               names: Sequence[str] = ("v", "d", "l", "x", "y")) -> "DiscreteDGP":
        """All-binary DGP from the probability of 1 given the parents (v, d, l, x)."""
        def pair(q):
            return [1.0 - q, q]

        r = (0, 1)
        return cls(
            names=tuple(names),
            v_states=[[0.0], [1.0]],
            p_v=pair(p_v),
            d_values=[0.0, 1.0], l_values=[0.0, 1.0], x_values=[0.0, 1.0], y_values=[0.0, 1.0],
            p_d=[pair(p_d(v)) for v in r],
            p_l=[[pair(p_l(v, d)) for d in r] for v in r],
            p_x=[[[pair(p_x(v, d, l)) for l in r] for d in r] for v in r],
            p_y=[[[[pair(p_y(v, d, l, x)) for x in r] for l in r] for d in r] for v in r],
        )


def _categorical(probabilities: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One inverse-CDF draw per row of ``probabilities``."""
    cumulative = np.cumsum(probabilities, axis=1)
    u = rng.random(probabilities.shape[0])
    index = np.sum(u[:, None] >= cumulative, axis=1)
    return np.minimum(index, probabilities.shape[1] - 1)


@dataclass(frozen=True)
class LinearGaussianDGP:
    """Linear structural equations with Gaussian noise and a logistic treatment.

    V ~ N(v_mean, v_sd), D ~ Bernoulli(expit(d0 + d1 V)), and
    L = a0 + a1 V + a2 D + e_L, X = b0 + b1 V + b2 D + b3 L + e_X,
    Y = c0 + c1 V + c2 D + c3 L + c4 X + e_Y.
    """
    a: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    b: Tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    c: Tuple[float, float, float, float, float] = (0.0, 0.0, 0.0, 0.0, 0.0)
    sd_l: float = 1.0
    sd_x: float = 1.0
    sd_y: float = 1.0
    v_mean: float = 0.0
    v_sd: float = 1.0
    d0: float = 0.0
    d1: float = 0.0
    names: Tuple[str, str, str, str, str] = ("v", "d", "l", "x", "y")

    def __post_init__(self):
        if len(self.a) != 3 or len(self.b) != 4 or len(self.c) != 5:
            raise ConfigError("Coefficient vectors a, b, c need 3, 4 and 5 entries")
        if min(self.sd_l, self.sd_x, self.sd_y, self.v_sd) <= 0:
            raise ConfigError("Noise SDs must be positive")

    def schema(self, contrast: Tuple[float, float] = (1.0, 0.0)) -> CausalSchema:
        v, d, l, x, y = self.names
        continuous = VariableKind.CONTINUOUS
        return CausalSchema(
            confounders=(Variable(v, continuous),),
            treatment=Variable(d, VariableKind.BINARY),
            contrast=contrast,
            mediators=(Variable(l, continuous), Variable(x, continuous)),
            outcome=Variable(y, continuous),
        )

    def sample(self, n: int, seed: int, contrast: Tuple[float, float] = (1.0, 0.0)) -> CausalDataset:
        if n < 1:
            raise DataError(f"Sample size must be at least 1, got {n}")
        rng = RandomStreams(seed).generator("dataset", 0)
        a, b, c = self.a, self.b, self.c
        V = rng.normal(self.v_mean, self.v_sd, n)
        D = (rng.random(n) < expit(self.d0 + self.d1 * V)).astype(np.float64)
        L = a[0] + a[1] * V + a[2] * D + rng.normal(0.0, self.sd_l, n)
        X = b[0] + b[1] * V + b[2] * D + b[3] * L + rng.normal(0.0, self.sd_x, n)
        Y = c[0] + c[1] * V + c[2] * D + c[3] * L + c[4] * X + rng.normal(0.0, self.sd_y, n)
        return CausalDataset(self.schema(contrast), dict(zip(self.names, (V, D, L, X, Y))))


def eval_psi_exact(dgp: DiscreteDGP, assignment: PsiAssignment) -> float:
    """Sum over (v, l, x) of E[Y|v,d3,l,x] P(x|v,d2,l) P(l|v,d1) P(v)."""
    i1, i2, i3 = (dgp.index_of(assignment.d1), dgp.index_of(assignment.d2), dgp.index_of(assignment.d3))
    return float(np.einsum("s,sl,slx,slx->", dgp.p_v, dgp.p_l[:, i1], dgp.p_x[:, i2], dgp.expected_y[:, i3]))


def eval_phi_exact(dgp: DiscreteDGP, d1: float, d2: float) -> float:
    """Mediators jointly under d1, outcome under d2."""
    return eval_psi_exact(dgp, PsiAssignment(d1, d1, d2))


def eval_lambda_exact(dgp: DiscreteDGP, assignment: LambdaAssignment) -> float:
    """Outcome and L under d2, X from its (V, d1) marginal over L."""
    i1, i2 = dgp.index_of(assignment.d1), dgp.index_of(assignment.d2)
    p_x_marginal = np.einsum("slx,sl->sx", dgp.p_x[:, i1], dgp.p_l[:, i1])
    return float(np.einsum("s,sl,sx,slx->", dgp.p_v, dgp.p_l[:, i2], p_x_marginal, dgp.expected_y[:, i2]))


def exact_effects(dgp: DiscreteDGP, contrast: Tuple[float, float] = (1.0, 0.0)) -> Dict[str, float]:
    """All nine effects from exact marginal means."""
    d, d_star = contrast
    psi = {a: eval_psi_exact(dgp, a) for a in psi_assignments(d, d_star)}
    lam = {a: eval_lambda_exact(dgp, a) for a in lambda_assignments(d, d_star)}
    result = natural_pse_effects(psi, d, d_star)
    result.update(interventional_effects(lam, d, d_star))
    return result


def linear_effects_exact(dgp: LinearGaussianDGP, contrast: Tuple[float, float] = (1.0, 0.0)) -> Dict[str, float]:
    """Products of path coefficients times the contrast width."""
    delta = contrast[0] - contrast[1]
    _, _, a2 = dgp.a
    _, _, b2, b3 = dgp.b
    _, _, c2, c3, c4 = dgp.c
    direct = c2 * delta
    via_x = c4 * b2 * delta
    via_l = (c3 * a2 + c4 * b3 * a2) * delta
    return {
        effects.ATE: direct + via_x + via_l,
        effects.MNDE: direct,
        effects.MNIE: via_x + via_l,
        effects.PSE_DY: direct,
        effects.PSE_DXY: via_x,
        effects.PSE_DLY: via_l,
        effects.IDE: (c2 + c3 * a2) * delta,
        effects.IIE: c4 * (b2 + b3 * a2) * delta,
        effects.OE: (c2 + c3 * a2 + c4 * (b2 + b3 * a2)) * delta,
    }


def sample_dataset(dgp: Union[DiscreteDGP, LinearGaussianDGP], n: int, seed: int,
                   contrast: Tuple[float, float] = (1.0, 0.0)) -> CausalDataset:
    """Synthetic dataset drawn in causal order; deterministic given ``seed``."""
    return dgp.sample(n, seed, contrast)
