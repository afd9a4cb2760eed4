"""
Flow Training
Joint negative log-likelihood training of the conditional flows with Adam, cosine
learning-rate decay, early stopping and random restarts.
"""

import copy
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch

from src.models.flows import DTYPE, Dequantizer, FlowModel, MLPConfig, build_flow
from src.models.quadrature import DEFAULT_NODES, QuadratureRule
from src.models.random_streams import RandomStreams
from src.models.schema import INTERVENTIONAL, NATURAL_PSE, CausalDataset, CausalSchema
from src.utils.errors import ConfigError, TrainingDivergenceError

logger = logging.getLogger(__name__)

# Sample size below which flows are unlikely to give reliable estimates.
SMALL_SAMPLE_ROWS = 16000

X_INTERVENTIONAL = "X_interventional"


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings shared by every restart."""
    batch_size: int = 512
    learning_rate: float = 1e-3
    max_epochs: int = 200
    validation_fraction: float = 0.2
    patience: int = 10
    restarts: int = 5
    seed: int = 0
    quadrature_nodes: int = DEFAULT_NODES
    dequantization_sd: float = 0.1
    max_lr_halvings: int = 2

    def __post_init__(self):
        if not 0 < self.validation_fraction < 1:
            raise ConfigError(f"validation_fraction must lie in (0, 1), got {self.validation_fraction}")
        if self.restarts < 1:
            raise ConfigError(f"restarts must be at least 1, got {self.restarts}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, max_epochs and patience must be positive")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.quadrature_nodes < 2:
            raise ConfigError(f"quadrature_nodes must be at least 2, got {self.quadrature_nodes}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TrainConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"Unknown training settings: {', '.join(unknown)}")
        return cls(**known)


@dataclass
class TrainingReport:
    """Per-epoch losses of every restart and the restart that was kept."""
    n_train: int
    n_validation: int
    history: List[Dict[str, float]] = field(default_factory=list)
    restarts: List[Dict[str, float]] = field(default_factory=list)
    selected_restart: int = 0

    @property
    def best_validation_loss(self) -> float:
        return self.restarts[self.selected_restart]["best_validation_loss"]

    def losses_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.history, columns=["restart", "attempt", "epoch", "learning_rate",
                                                   "train_loss", "validation_loss"])

    def restarts_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.restarts)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_train": self.n_train,
            "n_validation": self.n_validation,
            "selected_restart": self.selected_restart,
            "restarts": self.restarts,
        }


@dataclass
class TrainedFlows:
    models: Dict[str, FlowModel]
    report: TrainingReport


class _Diverged(Exception):
    def __init__(self, batch_index: int):
        super().__init__(batch_index)
        self.batch_index = batch_index


def flow_roles(schema: CausalSchema, modes: Sequence[str]) -> Dict[str, Tuple[str, List[str]]]:
    """Role key to (target, parents) for the flows needed by ``modes``."""
    roles = {"L": (schema.first_mediator.name, schema.parents_of("L"))}
    if NATURAL_PSE in modes:
        roles["X"] = (schema.second_mediator.name, schema.parents_of("X", NATURAL_PSE))
    if INTERVENTIONAL in modes:
        roles[X_INTERVENTIONAL] = (schema.second_mediator.name, schema.parents_of("X", INTERVENTIONAL))
    roles["Y"] = (schema.outcome.name, schema.parents_of("Y"))
    return roles


def _column_stats(values: np.ndarray) -> Tuple[float, float]:
    mean = float(np.mean(values))
    sd = float(np.std(values))
    return mean, (sd if sd > 0 else 1.0)


class _RoleData:
    """Standardized tensors of one flow on the train and validation splits."""

    def __init__(self, model: FlowModel, dataset: CausalDataset, train_idx: np.ndarray, val_idx: np.ndarray,
                 val_noise_rng: np.random.Generator):
        self.model = model
        columns = dataset.columns
        self.parents_train = torch.as_tensor(model.parent_matrix({k: v[train_idx] for k, v in columns.items()},
                                                                 train_idx.size))
        self.parents_val = torch.as_tensor(model.parent_matrix({k: v[val_idx] for k, v in columns.items()},
                                                               val_idx.size))
        target = dataset.column(model.target)
        self.raw_train = target[train_idx]
        raw_val = target[val_idx]
        if model.dequantizer is not None:
            raw_val = model.dequantizer.dequantize(raw_val, val_noise_rng)
        self.y_val = torch.as_tensor(model.standardize_target(raw_val))

    def train_targets(self, rng: np.random.Generator) -> torch.Tensor:
        raw = self.raw_train
        if self.model.dequantizer is not None:
            raw = self.model.dequantizer.dequantize(raw, rng)
        return torch.as_tensor(self.model.standardize_target(raw))


def nll_tensor(models: Sequence[FlowModel], parents: Sequence[torch.Tensor],
               targets: Sequence[torch.Tensor]) -> torch.Tensor:
    """Differentiable joint NLL (mean over rows) from standardized tensors."""
    total = None
    for model, X, y in zip(models, parents, targets):
        log_density = model.log_density_tensor(X, y)
        total = log_density if total is None else total + log_density
    return -torch.mean(total)


def _initial_models(dataset: CausalDataset, roles: Mapping[str, Tuple[str, List[str]]], config: MLPConfig,
                    train_config: TrainConfig, train_idx: np.ndarray, seed: int) -> Dict[str, FlowModel]:
    schema = dataset.schema
    rule = QuadratureRule(train_config.quadrature_nodes)
    models = {}
    for k, (key, (target, parents)) in enumerate(roles.items()):
        variable = schema.variable(target)
        parent_stats = [_column_stats(dataset.column(p)[train_idx]) for p in parents]
        target_mean, target_sd = _column_stats(dataset.column(target)[train_idx])
        dequantizer = Dequantizer(train_config.dequantization_sd) if variable.is_discrete else None
        models[key] = build_flow(
            target, parents, variable.kind, variable.support_bounds(), config, rule, seed + k,
            [m for m, _ in parent_stats], [s for _, s in parent_stats], target_mean, target_sd, dequantizer)
    return models


def _run_restart(models: Dict[str, FlowModel], data: Dict[str, _RoleData], train_config: TrainConfig,
                 learning_rate: float, rng: np.random.Generator, restart: int, attempt: int,
                 history: List[Dict[str, float]]) -> Tuple[float, Dict[str, Dict[str, torch.Tensor]], int]:
    keys = list(models)
    params = [p for key in keys for p in models[key].network.parameters()]
    optimizer = torch.optim.Adam(params, lr=learning_rate)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=train_config.max_epochs)
    n_train = data[keys[0]].raw_train.size
    best_loss = math.inf
    best_state = {key: copy.deepcopy(models[key].network.state_dict()) for key in keys}
    stale = 0
    batch_index = 0
    epoch = 0
    for epoch in range(1, train_config.max_epochs + 1):
        for key in keys:
            models[key].network.train()
        targets = {key: data[key].train_targets(rng) for key in keys}
        order = torch.as_tensor(rng.permutation(n_train))
        epoch_loss = 0.0
        for start in range(0, n_train, train_config.batch_size):
            idx = order[start:start + train_config.batch_size]
            optimizer.zero_grad()
            loss = nll_tensor([models[k] for k in keys], [data[k].parents_train[idx] for k in keys],
                              [targets[k][idx] for k in keys])
            if not torch.isfinite(loss):
                raise _Diverged(batch_index)
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss) * idx.numel()
            batch_index += 1
        scheduler.step()
        for key in keys:
            models[key].network.eval()
        with torch.no_grad():
            val_loss = float(nll_tensor([models[k] for k in keys], [data[k].parents_val for k in keys],
                                        [data[k].y_val for k in keys]))
        if not math.isfinite(val_loss):
            raise _Diverged(batch_index)
        history.append({"restart": restart, "attempt": attempt, "epoch": epoch,
                        "learning_rate": optimizer.param_groups[0]["lr"],
                        "train_loss": epoch_loss / n_train, "validation_loss": val_loss})
        logger.debug("Restart %d epoch %d: train %.5f, validation %.5f",
                     restart, epoch, epoch_loss / n_train, val_loss)
        if val_loss < best_loss:
            best_loss = val_loss
            best_state = {key: copy.deepcopy(models[key].network.state_dict()) for key in keys}
            stale = 0
        else:
            stale += 1
            if stale >= train_config.patience:
                break
    for key in keys:
        models[key].network.load_state_dict(best_state[key])
        models[key].network.eval()
    return best_loss, best_state, epoch


def train(dataset: CausalDataset, modes: Sequence[str], config: MLPConfig = MLPConfig(),
          train_config: TrainConfig = TrainConfig()) -> TrainedFlows:
    """Train the flows needed by ``modes`` jointly and keep the best restart.

    Args:
        dataset: Training data (split internally into train/validation)
        modes: Estimation modes the flows must serve
        config: Network architecture
        train_config: Optimisation settings

    Returns:
        TrainedFlows: Models keyed by role ('L', 'X', 'X_interventional', 'Y') and the report
    """
    if dataset.n < SMALL_SAMPLE_ROWS:
        logger.warning("Training flows on %d rows; fewer than %d rows may give unreliable estimates",
                       dataset.n, SMALL_SAMPLE_ROWS)
    if config.is_small:
        logger.info("Flow architecture is smaller than four hidden layers of ten nodes")
    roles = flow_roles(dataset.schema, modes)
    streams = RandomStreams(train_config.seed)
    permutation = streams.generator("train", 0).permutation(dataset.n)
    n_val = max(1, int(round(train_config.validation_fraction * dataset.n)))
    if n_val >= dataset.n:
        raise ConfigError(f"Too few rows ({dataset.n}) for a validation split")
    val_idx, train_idx = np.sort(permutation[:n_val]), np.sort(permutation[n_val:])
    report = TrainingReport(n_train=train_idx.size, n_validation=val_idx.size)

    best: Optional[Tuple[float, Dict[str, FlowModel]]] = None
    for restart in range(train_config.restarts):
        learning_rate = train_config.learning_rate
        for attempt in range(train_config.max_lr_halvings + 1):
            rng = streams.generator("train", 1 + restart, attempt)
            init_seed = int(rng.integers(0, 2 ** 31 - 1))
            models = _initial_models(dataset, roles, config, train_config, train_idx, init_seed)
            data = {key: _RoleData(model, dataset, train_idx, val_idx, streams.generator("dequantize", 0, k))
                    for k, (key, model) in enumerate(models.items())}
            try:
                loss, _, epochs = _run_restart(models, data, train_config, learning_rate, rng, restart, attempt,
                                               report.history)
                break
            except _Diverged as e:
                if attempt == train_config.max_lr_halvings:
                    raise TrainingDivergenceError(
                        f"Flow training diverged in restart {restart} after {attempt + 1} attempt(s)",
                        batch_index=e.batch_index)
                learning_rate /= 2.0
                logger.warning("Restart %d diverged at batch %d; retrying with learning rate %g",
                               restart, e.batch_index, learning_rate)
        report.restarts.append({"restart": restart, "best_validation_loss": loss, "epochs": epochs,
                                "learning_rate": learning_rate})
        logger.info("Restart %d: best validation loss %.5f after %d epoch(s)", restart, loss, epochs)
        if best is None or loss < best[0]:
            best = (loss, models)
            report.selected_restart = restart
    logger.info("Selected restart %d (validation loss %.5f)", report.selected_restart, best[0])
    return TrainedFlows(best[1], report)
