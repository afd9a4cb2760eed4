import logging
import math

import numpy as np
import pytest
import torch
from scipy import stats

import src.models.flow_training as flow_training
from src.models.flow_training import (
    X_INTERVENTIONAL,
    TrainConfig,
    flow_roles,
    train,
)
from src.models.flows import MLPConfig, flow_forward, joint_nll
from src.models.schema import INTERVENTIONAL, NATURAL_PSE
from src.utils.errors import ConfigError, TrainingDivergenceError

from tests.conftest import hand_dgp_tables

SMALL = MLPConfig((12, 12), (12, 12), 3)
QUICK = TrainConfig(batch_size=128, max_epochs=3, restarts=2, patience=2, seed=5, quadrature_nodes=16)


@pytest.fixture(scope="module")
def linear_sample():
    from src.models.oracle import LinearGaussianDGP
    return LinearGaussianDGP(a=(0.1, 0.3, 0.5), b=(-0.2, 0.2, 0.3, 0.4), c=(0.3, 0.1, 0.2, 0.25, 0.6)).sample(600, 1)


class TestTrainConfig:
    @pytest.mark.parametrize("changes", [
        {"validation_fraction": 1.0},
        {"validation_fraction": 0.0},
        {"restarts": 0},
        {"batch_size": 0},
        {"learning_rate": 0.0},
        {"quadrature_nodes": 1},
    ])
    def test_invalid(self, changes):
        with pytest.raises(ConfigError):
            TrainConfig(**changes)

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="momentum"):
            TrainConfig.from_dict({"momentum": 0.9})

    def test_defaults(self):
        config = TrainConfig.from_dict({})
        assert (config.validation_fraction, config.restarts, config.dequantization_sd) == (0.2, 5, 0.1)


class TestRoles:
    def test_both_modes(self, binary_schema):
        roles = flow_roles(binary_schema, [NATURAL_PSE, INTERVENTIONAL])
        assert list(roles) == ["L", "X", X_INTERVENTIONAL, "Y"]
        assert roles["X"] == ("x", ["v", "d", "l"])
        assert roles[X_INTERVENTIONAL] == ("x", ["v", "d"])
        assert roles["Y"] == ("y", ["v", "d", "l", "x"])

    def test_interventional_only(self, binary_schema):
        assert list(flow_roles(binary_schema, [INTERVENTIONAL])) == ["L", X_INTERVENTIONAL, "Y"]


class TestTrain:
    def test_report_and_selection(self, linear_sample):
        trained = train(linear_sample, [NATURAL_PSE], SMALL, QUICK)
        report = trained.report
        assert set(trained.models) == {"L", "X", "Y"}
        assert (report.n_train, report.n_validation) == (480, 120)
        assert len(report.restarts) == 2
        losses = [r["best_validation_loss"] for r in report.restarts]
        assert report.selected_restart == int(np.argmin(losses))
        assert report.best_validation_loss == min(losses)
        frame = report.losses_frame()
        assert list(frame.columns) == ["restart", "attempt", "epoch", "learning_rate",
                                       "train_loss", "validation_loss"]
        assert frame["validation_loss"].notna().all()

    def test_deterministic_given_seed(self, linear_sample):
        first = train(linear_sample, [INTERVENTIONAL], SMALL, QUICK)
        second = train(linear_sample, [INTERVENTIONAL], SMALL, QUICK)
        assert first.report.history == second.report.history
        y = np.linspace(-2.0, 2.0, 5)
        columns = {"v": 0.1, "d": 1.0}
        assert np.array_equal(flow_forward(first.models[X_INTERVENTIONAL], columns, y),
                              flow_forward(second.models[X_INTERVENTIONAL], columns, y))

    def test_selected_model_reproduces_validation_loss(self, linear_sample):
        trained = train(linear_sample, [NATURAL_PSE], SMALL, QUICK)
        assert math.isfinite(trained.report.best_validation_loss)
        assert trained.report.restarts_frame().shape[0] == 2

    def test_discrete_targets_get_dequantizers(self):
        sample = hand_dgp_tables().sample(400, seed=3)
        trained = train(sample, [INTERVENTIONAL], SMALL, QUICK)
        assert all(model.dequantizer is not None for model in trained.models.values())
        assert trained.models["L"].support == (0.0, 1.0)

    def test_small_sample_warning(self, linear_sample, caplog):
        with caplog.at_level(logging.WARNING, logger="src"):
            train(linear_sample, [NATURAL_PSE], SMALL, TrainConfig(max_epochs=1, restarts=1, batch_size=256))
        assert any("fewer than 16000 rows" in r.getMessage() for r in caplog.records)

    def test_too_few_rows_for_validation(self, linear_sample):
        with pytest.raises(ConfigError):
            train(linear_sample.take([0]), [NATURAL_PSE], SMALL, QUICK)

    def test_divergence_retries_then_fails(self, linear_sample, monkeypatch):
        def diverging(models, parents, targets):
            return torch.tensor(float("nan"), dtype=torch.float64, requires_grad=True)

        monkeypatch.setattr(flow_training, "nll_tensor", diverging)
        with pytest.raises(TrainingDivergenceError) as info:
            train(linear_sample, [NATURAL_PSE], SMALL, QUICK)
        assert info.value.batch_index == 0


@pytest.mark.slow
def test_density_recovery_on_linear_gaussian_data(linear_dgp):
    data = linear_dgp.sample(20_000, seed=8)
    held_out = linear_dgp.sample(5_000, seed=9)
    config = MLPConfig((40, 40, 40, 40), (40, 30, 20, 10), 10)
    trained = train(data, [NATURAL_PSE], config, TrainConfig(max_epochs=60, restarts=1, seed=2))
    optimum = 0.5 * math.log(2.0 * math.pi * math.e)
    for role in ("L", "X", "Y"):
        model = trained.models[role]
        nll = joint_nll({role: model}, held_out.columns)
        assert nll == pytest.approx(optimum, abs=0.05), role
        z = flow_forward(model, held_out.columns, held_out.column(model.target))
        assert abs(z.mean()) <= 0.05
        assert abs(z.std() - 1.0) <= 0.05
        assert stats.kstest(z, "norm").statistic <= 0.02
