"""
Conditional Monotonic Flows
Unconstrained monotonic neural networks mapping a target to N(0, 1) given its parents:
density evaluation, bisection inversion, dequantization and sampling.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils import skip_init
from scipy import stats
from scipy.special import ndtri

from src.models.quadrature import DEFAULT_NODES, QuadratureRule
from src.models.schema import VariableKind
from src.utils.errors import FlowRangeError, ModelFitError

logger = logging.getLogger(__name__)

DTYPE = torch.float64
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
MAX_DOUBLINGS = 60
INVERT_TOLERANCE = 1e-6
INVERT_CHUNK = 8192


def elu_plus(x):
    """ELU(x) + 1: ``x + 1`` for x > 0, ``exp(x)`` otherwise. Strictly positive."""
    if isinstance(x, torch.Tensor):
        return F.elu(x) + 1.0
    x = np.asarray(x, dtype=np.float64)
    result = np.where(x > 0, x + 1.0, np.exp(np.minimum(x, 0.0)))
    return float(result) if result.ndim == 0 else result


class ELUPlus(nn.Module):
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return elu_plus(x)


@dataclass(frozen=True)
class MLPConfig:
    """Hidden widths of the embedding (ReLU) and integrand (tanh) networks."""
    embedding_widths: Tuple[int, ...] = (100, 90, 80, 70, 60)
    integrand_widths: Tuple[int, ...] = (60, 50, 40, 30, 20)
    embedding_dim: int = 10

    def __post_init__(self):
        object.__setattr__(self, "embedding_widths", tuple(int(w) for w in self.embedding_widths))
        object.__setattr__(self, "integrand_widths", tuple(int(w) for w in self.integrand_widths))
        if any(w < 1 for w in self.embedding_widths + self.integrand_widths) or self.embedding_dim < 1:
            raise ModelFitError(f"Layer widths must be positive: {self}")

    @property
    def is_small(self) -> bool:
        """Fewer than four hidden layers or fewer than ten nodes in some layer."""
        widths = self.embedding_widths + self.integrand_widths
        return (len(self.embedding_widths) < 4 or len(self.integrand_widths) < 4
                or any(w < 10 for w in widths))

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["embedding_widths"] = list(self.embedding_widths)
        data["integrand_widths"] = list(self.integrand_widths)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MLPConfig":
        defaults = cls()
        return cls(
            embedding_widths=tuple(data.get("embedding_widths", defaults.embedding_widths)),
            integrand_widths=tuple(data.get("integrand_widths", defaults.integrand_widths)),
            embedding_dim=int(data.get("embedding_dim", defaults.embedding_dim)),
        )


@dataclass(frozen=True)
class Dequantizer:
    """Normal dequantization noise for integer-valued targets, undone by rounding."""
    sd: float = 0.1

    def __post_init__(self):
        if not self.sd > 0:
            raise ModelFitError(f"Dequantization SD must be positive, got {self.sd}")

    @property
    def rounding_failure_probability(self) -> float:
        """Probability that the noise moves a value by 0.5 or more."""
        return float(2.0 * stats.norm.sf(0.5 / self.sd))

    def dequantize(self, values: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        return values + rng.normal(0.0, self.sd, size=values.shape)

    @staticmethod
    def requantize(values: np.ndarray, low: float, high: float) -> np.ndarray:
        return np.clip(np.round(values), low, high)


def _mlp(in_features: int, widths: Sequence[int], out_features: int, activation) -> nn.Sequential:
    """Layers are left uninitialised; callers set every parameter."""
    layers: List[nn.Module] = []
    width_in = in_features
    for width in widths:
        layers += [skip_init(nn.Linear, width_in, width), activation()]
        width_in = width
    layers.append(skip_init(nn.Linear, width_in, out_features))
    return nn.Sequential(*layers)


class MonotonicNetwork(nn.Module):
    """Embedding of the parents, scalar offset head and positive integrand.

    The map is ``z = integral_0^y theta(t, c) dt + alpha(c)`` with ``c`` the
    embedding of the parents, so ``dz/dy = theta(y, c) > 0``.
    """

    def __init__(self, n_parents: int, config: MLPConfig, rule: QuadratureRule):
        super().__init__()
        self.n_parents = n_parents
        self.config = config
        self.rule = rule
        self.embedding = _mlp(max(n_parents, 1), config.embedding_widths, config.embedding_dim, nn.ReLU)
        self.offset = skip_init(nn.Linear, config.embedding_dim, 1)
        self.integrand_net = nn.Sequential(
            _mlp(1 + config.embedding_dim, config.integrand_widths, 1, nn.Tanh), ELUPlus())
        self.register_buffer("ref_nodes", torch.as_tensor(rule.reference_nodes, dtype=DTYPE))
        self.register_buffer("ref_weights", torch.as_tensor(rule.reference_weights, dtype=DTYPE))
        self.to(DTYPE)

    def reset_parameters(self, seed: int):
        """Draw every weight and bias from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).

        Uses a private generator so concurrent builds never share RNG state.
        """
        generator = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for module in self.modules():
                if isinstance(module, nn.Linear):
                    bound = 1.0 / math.sqrt(module.in_features)
                    for param in (module.weight, module.bias):
                        draw = torch.rand(param.shape, generator=generator, dtype=DTYPE)
                        param.copy_((2.0 * draw - 1.0) * bound)

    def embed(self, parents: torch.Tensor) -> torch.Tensor:
        if self.n_parents == 0:
            parents = torch.zeros(parents.shape[0], 1, dtype=DTYPE)
        return self.embedding(parents)

    def integrand(self, t: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        """theta evaluated at ``t`` of shape (batch, k) for embeddings ``c`` (batch, dim)."""
        batch, k = t.shape
        inputs = torch.cat([t.unsqueeze(-1), c.unsqueeze(1).expand(batch, k, c.shape[1])], dim=-1)
        return self.integrand_net(inputs.reshape(batch * k, -1)).reshape(batch, k)

    def transform(self, c: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        """z for embeddings ``c`` and standardized targets ``y``."""
        t = y.unsqueeze(-1) * (self.ref_nodes + 1.0) / 2.0
        w = y.unsqueeze(-1) * self.ref_weights / 2.0
        integral = torch.sum(w * self.integrand(t, c), dim=-1)
        return integral + self.offset(c).squeeze(-1)

    def forward(self, parents: torch.Tensor, y: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Return (z, log dz/dy) for standardized parents and targets."""
        c = self.embed(parents)
        z = self.transform(c, y)
        log_derivative = torch.log(self.integrand(y.unsqueeze(-1), c).squeeze(-1))
        return z, log_derivative


class FlowModel:
    """A trained conditional flow for one target given its parents.

    Inputs and outputs are in original units; the network sees standardized values.
    Discrete targets are modelled after dequantization and requantized on sampling.
    """

    def __init__(self, target: str, parents: Sequence[str], kind: VariableKind,
                 support: Tuple[float, float], network: MonotonicNetwork,
                 parent_mean: Sequence[float], parent_sd: Sequence[float],
                 target_mean: float = 0.0, target_sd: float = 1.0,
                 dequantizer: Optional[Dequantizer] = None):
        self._target = target
        self._parents = tuple(parents)
        self.kind = kind
        self.support = (float(support[0]), float(support[1]))
        self.network = network
        self.parent_mean = np.asarray(parent_mean, dtype=np.float64)
        self.parent_sd = np.asarray(parent_sd, dtype=np.float64)
        self.target_mean = float(target_mean)
        self.target_sd = float(target_sd)
        if self.kind.is_discrete and dequantizer is None:
            dequantizer = Dequantizer()
        self.dequantizer = dequantizer if self.kind.is_discrete else None
        if len(self.parent_mean) != len(self._parents) or len(self.parent_sd) != len(self._parents):
            raise ModelFitError(f"Standardization constants do not match the parents of '{target}'")
        if np.any(self.parent_sd <= 0) or self.target_sd <= 0:
            raise ModelFitError(f"Standardization SDs of '{target}' must be positive")

    @property
    def target(self) -> str:
        return self._target

    @property
    def parents(self) -> Tuple[str, ...]:
        return self._parents

    @property
    def rule(self) -> QuadratureRule:
        return self.network.rule

    def parent_matrix(self, columns: Mapping[str, Any], n: int) -> np.ndarray:
        """Standardized (n, n_parents) matrix; scalar columns are broadcast."""
        matrix = np.empty((n, len(self._parents)), dtype=np.float64)
        for k, name in enumerate(self._parents):
            if name not in columns:
                raise ModelFitError(f"Flow for '{self._target}' needs parent '{name}'")
            matrix[:, k] = np.broadcast_to(np.asarray(columns[name], dtype=np.float64), (n,))
        return (matrix - self.parent_mean) / self.parent_sd

    def standardize_target(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.target_mean) / self.target_sd

    def destandardize_target(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * self.target_sd + self.target_mean

    def log_density_tensor(self, parents: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        """Log density in original units of standardized targets ``y``."""
        z, log_derivative = self.network(parents, y)
        return -HALF_LOG_2PI - 0.5 * z * z + log_derivative - math.log(self.target_sd)

    def postprocess(self, values: np.ndarray) -> np.ndarray:
        """Requantize discrete draws onto the declared support."""
        if self.dequantizer is None:
            return values
        return Dequantizer.requantize(values, *self.support)

    def sample_innovations(self, columns: Mapping[str, Any], u: np.ndarray) -> np.ndarray:
        """Draws for uniform innovations ``u`` (through the inverse normal CDF)."""
        u = np.asarray(u, dtype=np.float64).ravel()
        return flow_sample_z(self, columns, ndtri(u))

    def to_dict(self) -> Dict[str, Any]:
        weights = {
            name: {"shape": list(tensor.shape), "values": tensor.detach().cpu().double().reshape(-1).tolist()}
            for name, tensor in self.network.state_dict().items()
            if name not in ("ref_nodes", "ref_weights")
        }
        return {
            "target": self._target,
            "parents": list(self._parents),
            "kind": self.kind.value,
            "support": list(self.support),
            "architecture": self.network.config.to_dict(),
            "quadrature_nodes": self.rule.nodes,
            "standardization": {
                "parent_mean": self.parent_mean.tolist(),
                "parent_sd": self.parent_sd.tolist(),
                "target_mean": self.target_mean,
                "target_sd": self.target_sd,
            },
            "dequantizer": {"sd": self.dequantizer.sd} if self.dequantizer else None,
            "weights": weights,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FlowModel":
        config = MLPConfig.from_dict(data["architecture"])
        network = MonotonicNetwork(len(data["parents"]), config,
                                   QuadratureRule(int(data.get("quadrature_nodes", DEFAULT_NODES))))
        state = network.state_dict()
        for name, entry in data["weights"].items():
            state[name] = torch.tensor(entry["values"], dtype=DTYPE).reshape(entry["shape"])
        network.load_state_dict(state)
        network.eval()
        scaling = data["standardization"]
        dequantizer = data.get("dequantizer")
        return cls(
            target=data["target"],
            parents=data["parents"],
            kind=VariableKind(data["kind"]),
            support=tuple(data["support"]),
            network=network,
            parent_mean=scaling["parent_mean"],
            parent_sd=scaling["parent_sd"],
            target_mean=scaling["target_mean"],
            target_sd=scaling["target_sd"],
            dequantizer=Dequantizer(dequantizer["sd"]) if dequantizer else None,
        )


def build_flow(target: str, parents: Sequence[str], kind: VariableKind, support: Tuple[float, float],
               config: MLPConfig, rule: QuadratureRule, seed: int,
               parent_mean: Sequence[float], parent_sd: Sequence[float],
               target_mean: float, target_sd: float,
               dequantizer: Optional[Dequantizer] = None) -> FlowModel:
    """Freshly initialized flow; weights are uniform with fan-in scaling, seeded by ``seed``."""
    network = MonotonicNetwork(len(parents), config, rule)
    network.reset_parameters(seed)
    return FlowModel(target, parents, kind, support, network, parent_mean, parent_sd,
                     target_mean, target_sd, dequantizer)


def linear_flow(target: str, parents: Sequence[str], intercept: float, slopes: Sequence[float], sigma: float,
                nodes: int = DEFAULT_NODES) -> FlowModel:
    """Flow computing ``z = (y - intercept - slopes . parents) / sigma`` exactly.

    With ``slopes`` all 0, ``intercept`` 0 and ``sigma`` 1 this is the identity flow.
    """
    if not sigma > 0:
        raise ModelFitError(f"sigma must be positive, got {sigma}")
    slopes = list(slopes)
    if len(slopes) != len(parents):
        raise ModelFitError("One slope per parent is required")
    network = MonotonicNetwork(len(parents), MLPConfig((), (), 1), QuadratureRule(nodes))
    scale = 1.0 / sigma
    with torch.no_grad():
        first = network.embedding[0]
        first.weight.zero_()
        if parents:
            first.weight[0, :] = torch.tensor(slopes, dtype=DTYPE)
        first.bias.fill_(intercept)
        network.offset.weight.fill_(-scale)
        network.offset.bias.zero_()
        last = network.integrand_net[0][0]
        last.weight.zero_()
        # ELUPlus(b) == 1/sigma.
        last.bias.fill_(scale - 1.0 if scale > 1.0 else math.log(scale))
    network.eval()
    zeros = [0.0] * len(parents)
    return FlowModel(target, parents, VariableKind.CONTINUOUS, (-math.inf, math.inf), network,
                     zeros, [1.0] * len(parents))


def identity_flow(target: str, parents: Sequence[str] = (), nodes: int = DEFAULT_NODES) -> FlowModel:
    """Flow with integrand 1 and offset 0: ``z = y``."""
    return linear_flow(target, parents, 0.0, [0.0] * len(parents), 1.0, nodes)


def _as_values(values) -> Tuple[np.ndarray, int]:
    values = np.atleast_1d(np.asarray(values, dtype=np.float64))
    return values, values.size


def flow_forward(model: FlowModel, parents: Mapping[str, Any], values) -> np.ndarray:
    """z-values of ``values`` (original units) given parent columns or a record."""
    values, n = _as_values(values)
    X = torch.as_tensor(model.parent_matrix(parents, n))
    y = torch.as_tensor(model.standardize_target(values))
    with torch.no_grad():
        z = model.network.transform(model.network.embed(X), y)
    return z.numpy()


def flow_log_density(model: FlowModel, parents: Mapping[str, Any], values) -> np.ndarray:
    """log phi(z) + log theta(y) - log sd_target, in original units."""
    values, n = _as_values(values)
    X = torch.as_tensor(model.parent_matrix(parents, n))
    y = torch.as_tensor(model.standardize_target(values))
    with torch.no_grad():
        return model.log_density_tensor(X, y).numpy()


def _invert_standardized(network: MonotonicNetwork, c: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    lo = -torch.ones_like(z)
    hi = torch.ones_like(z)
    for _ in range(MAX_DOUBLINGS):
        below = network.transform(c, lo) > z
        if not below.any():
            break
        lo = torch.where(below, 2.0 * lo, lo)
    else:
        raise FlowRangeError(f"Could not bracket {int(below.sum())} latent value(s) from below")
    for _ in range(MAX_DOUBLINGS):
        above = network.transform(c, hi) < z
        if not above.any():
            break
        hi = torch.where(above, 2.0 * hi, hi)
    else:
        raise FlowRangeError(f"Could not bracket {int(above.sum())} latent value(s) from above")
    mid = (lo + hi) / 2.0
    for _ in range(200):
        mid = (lo + hi) / 2.0
        value = network.transform(c, mid)
        if torch.max(torch.abs(value - z)) <= INVERT_TOLERANCE * 1e-2 or torch.max(hi - lo) <= 1e-12:
            break
        too_high = value > z
        hi = torch.where(too_high, mid, hi)
        lo = torch.where(too_high, lo, mid)
    return mid


def flow_invert(model: FlowModel, parents: Mapping[str, Any], z, standardized_output: bool = False) -> np.ndarray:
    """Solve ``flow_forward(l) = z`` by bracketing and bisection.

    Args:
        model: Flow to invert
        parents: Parent columns (or scalars)
        z: Latent values
        standardized_output: Return the standardized target instead of original units

    Returns:
        numpy.ndarray: Target values, continuous (no requantization)
    """
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    if not np.all(np.isfinite(z)):
        raise FlowRangeError(f"Cannot invert non-finite latent values for '{model.target}'")
    n = z.size
    X = model.parent_matrix(parents, n)
    out = np.empty(n, dtype=np.float64)
    with torch.no_grad():
        for start in range(0, n, INVERT_CHUNK):
            stop = min(start + INVERT_CHUNK, n)
            c = model.network.embed(torch.as_tensor(X[start:stop]))
            out[start:stop] = _invert_standardized(model.network, c, torch.as_tensor(z[start:stop])).numpy()
    return out if standardized_output else model.destandardize_target(out)


def flow_sample_z(model: FlowModel, parents: Mapping[str, Any], z: np.ndarray) -> np.ndarray:
    """Map latent normals to target draws (inverted, de-standardized, requantized)."""
    return model.postprocess(flow_invert(model, parents, z))


def flow_sample(model: FlowModel, parents: Mapping[str, Any], rng: np.random.Generator,
                size: Optional[int] = None) -> Union[float, np.ndarray]:
    """Draw from the flow: z ~ N(0, 1), invert, requantize discrete targets."""
    z = rng.standard_normal(1 if size is None else size)
    values = flow_sample_z(model, parents, z)
    return float(values[0]) if size is None else values


def joint_nll(models: Mapping[str, FlowModel], columns: Mapping[str, Any]) -> float:
    """Mean over rows of minus the summed log densities of every model's target.

    Discrete targets must already be dequantized.
    """
    total: Optional[np.ndarray] = None
    for model in models.values():
        values = np.atleast_1d(np.asarray(columns[model.target], dtype=np.float64))
        log_density = flow_log_density(model, columns, values)
        total = log_density if total is None else total + log_density
    return float(-np.mean(total))
