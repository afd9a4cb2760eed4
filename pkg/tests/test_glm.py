from dataclasses import replace

import numpy as np
import pytest
from scipy.special import expit, logit

from src.models.glm import MEAN_SCORE_TOLERANCE, Family, FittedGLM, fit_mle, log_likelihood, predict_proba, sample
from src.models.oracle import DiscreteDGP
from src.models.schema import CausalDataset, CausalSchema, Variable, VariableKind
from src.models.terms import TermSpec
from src.utils.errors import ConvergenceError, ModelFitError, SeparationError


def binary_columns(y, d=None):
    n = len(y)
    d = [k % 2 for k in range(n)] if d is None else d
    return {"v": [k % 2 for k in range(n)], "d": d, "l": [0] * n, "x": [0] * n, "y": y}


def mixed_columns(n, rng, **overrides):
    columns = {
        "v": rng.normal(size=n),
        "d": (rng.random(n) < 0.5).astype(float),
        "l": np.zeros(n),
        "x": np.zeros(n),
        "y": rng.normal(size=n),
    }
    columns.update(overrides)
    return columns


@pytest.fixture(scope="module")
def logit_data():
    dgp = DiscreteDGP.binary(
        0.5,
        lambda v: 0.5,
        lambda v, d: 0.5,
        lambda v, d, l: 0.5,
        lambda v, d, l, x: float(expit(-0.5 + 1.0 * d)),
    )
    return dgp.sample(40_000, seed=3)


class TestFit:
    def test_bernoulli_intercept_only(self, binary_schema):
        ds = CausalDataset(binary_schema, binary_columns([0, 1, 0, 1]))
        model = fit_mle(Family.BERNOULLI, TermSpec(), "y", ds)
        assert model.coefficients[0] == pytest.approx(0.0, abs=1e-6)
        assert model.converged

    def test_gaussian_intercept_only(self, mixed_schema):
        ds = CausalDataset(mixed_schema, {"v": [0, 0, 0], "d": [0, 1, 0], "l": [0, 1, 2],
                                          "x": [0, 1, 2], "y": [1.0, 2.0, 3.0]})
        model = fit_mle(Family.GAUSSIAN, TermSpec(), "y", ds)
        assert model.coefficients[0] == pytest.approx(2.0, abs=1e-12)
        assert model.dispersion == pytest.approx(2.0 / 3.0, abs=1e-12)

    def test_poisson_intercept_only(self, mixed_schema):
        ds = CausalDataset(mixed_schema, {"v": [0] * 4, "d": [0, 1, 0, 1], "l": [0] * 4,
                                          "x": [0, 1, 2, 3], "y": [0.0] * 4})
        model = fit_mle(Family.POISSON, TermSpec(), "x", ds)
        assert model.coefficients[0] == pytest.approx(np.log(1.5), abs=1e-8)

    def test_logit_recovers_coefficients(self, logit_data):
        model = fit_mle(Family.BERNOULLI, TermSpec.parse(["d"]), "y", logit_data)
        intercept, slope = model.coefficients
        assert intercept == pytest.approx(-0.5, abs=0.1)
        assert slope == pytest.approx(1.0, abs=0.1)

    def test_reported_log_likelihood_matches_densities(self, logit_data):
        model = fit_mle(Family.BERNOULLI, TermSpec.parse(["d", "v"]), "y", logit_data)
        assert log_likelihood(model, logit_data) == pytest.approx(model.log_likelihood, rel=1e-10)

    def test_convergence_is_judged_on_mean_score(self, logit_data):
        model = fit_mle(Family.BERNOULLI, TermSpec.parse(["d", "v"]), "y", logit_data)
        design = np.column_stack([np.ones(logit_data.n), logit_data.column("d"), logit_data.column("v")])
        y = logit_data.column("y")
        score = design.T @ (y - expit(design @ np.asarray(model.coefficients)))
        mean_score = float(np.max(np.abs(score))) / logit_data.n
        assert mean_score <= MEAN_SCORE_TOLERANCE
        assert model.gradient_norm <= MEAN_SCORE_TOLERANCE
        assert model.gradient_norm == pytest.approx(mean_score, abs=1e-12)

    def test_ordinal_intercept_only_thresholds(self):
        schema = CausalSchema((), Variable("d", VariableKind.BINARY), (1, 0),
                              (Variable("l", VariableKind.ORDINAL, 3), Variable("x", VariableKind.BINARY)),
                              Variable("y", VariableKind.BINARY))
        l = [0, 0, 1, 1, 1, 1, 2, 2]
        ds = CausalDataset(schema, {"d": [0, 1] * 4, "l": l, "x": [0] * 8, "y": [1] * 8})
        model = fit_mle(Family.ORDINAL, TermSpec(), "l", ds)
        assert model.thresholds == pytest.approx((logit(0.25), logit(0.75)), abs=1e-8)
        assert model.coefficients == (0.0,)

    def test_ordinal_recovers_slope_and_thresholds(self, mixed_schema):
        rng = np.random.default_rng(5)
        truth = FittedGLM(Family.ORDINAL, TermSpec.parse(["v"]), "l", (0.0, 0.8), 0.0, True, 0, 0,
                          thresholds=(-2.0, -1.0, 0.0, 1.0, 2.0))
        v = rng.normal(size=20_000)
        l = truth.sample_innovations({"v": v}, rng.random(v.size))
        ds = CausalDataset(mixed_schema, mixed_columns(v.size, rng, v=v, l=l))
        model = fit_mle(Family.ORDINAL, TermSpec.parse(["v"]), "l", ds)
        assert model.coefficients[1] == pytest.approx(0.8, abs=0.1)
        assert np.allclose(model.thresholds, truth.thresholds, atol=0.15)
        assert np.all(np.diff(model.thresholds) > 0)

    def test_poisson_recovers_slope(self, mixed_schema):
        rng = np.random.default_rng(6)
        v = rng.normal(size=20_000)
        x = rng.poisson(np.exp(0.2 + 0.5 * v)).astype(float)
        ds = CausalDataset(mixed_schema, mixed_columns(v.size, rng, v=v, x=x))
        model = fit_mle(Family.POISSON, TermSpec.parse(["v"]), "x", ds)
        assert model.coefficients == pytest.approx((0.2, 0.5), abs=0.05)

    def test_family_must_match_kind(self, binary_schema):
        ds = CausalDataset(binary_schema, binary_columns([0, 1, 0, 1]))
        with pytest.raises(ModelFitError, match="continuous"):
            fit_mle(Family.GAUSSIAN, TermSpec(), "y", ds)

    def test_unobserved_ordinal_level(self, mixed_schema):
        ds = CausalDataset(mixed_schema, {"v": [0] * 4, "d": [0, 1, 0, 1], "l": [0, 1, 2, 3],
                                          "x": [0] * 4, "y": [0.0] * 4})
        with pytest.raises(SeparationError):
            fit_mle(Family.ORDINAL, TermSpec(), "l", ds)

    def test_separation_detected(self, binary_schema):
        d = [0, 0, 0, 0, 1, 1, 1, 1]
        ds = CausalDataset(binary_schema, binary_columns(list(d), d=d))
        with pytest.raises(SeparationError):
            fit_mle(Family.BERNOULLI, TermSpec.parse(["d"]), "y", ds)

    def test_iteration_cap_carries_last_iterate(self, logit_data):
        with pytest.raises(ConvergenceError) as info:
            fit_mle(Family.BERNOULLI, TermSpec.parse(["d"]), "y", logit_data, max_iterations=1)
        assert len(info.value.last_iterate) == 2
        assert info.value.iterations == 1

    def test_too_few_rows(self, binary_schema):
        ds = CausalDataset(binary_schema, binary_columns([0, 1]))
        with pytest.raises(ModelFitError, match="more rows"):
            fit_mle(Family.BERNOULLI, TermSpec.parse(["d", "v"]), "y", ds)


class TestSampling:
    def bernoulli(self, intercept):
        return FittedGLM(Family.BERNOULLI, TermSpec(), "y", (intercept,), 0.0, True, 0, 0)

    def test_large_linear_predictor_draws_one(self):
        rng = np.random.default_rng(1)
        model = self.bernoulli(20.0)
        assert all(sample(model, {}, rng) == 1.0 for _ in range(1000))

    def test_draw_frequency(self):
        model = self.bernoulli(float(logit(0.3)))
        draws = model.sample_innovations({}, np.random.default_rng(2).random(100_000))
        assert 0.29 <= draws.mean() <= 0.31

    def test_gaussian_draw_is_quantile(self):
        model = FittedGLM(Family.GAUSSIAN, TermSpec.parse(["v"]), "y", (1.0, 2.0), 0.0, True, 0, 0,
                          dispersion=4.0)
        draws = model.sample_innovations({"v": np.array([0.0, 1.0])}, np.array([0.5, 0.5]))
        assert draws.tolist() == [1.0, 3.0]

    def test_ordinal_probabilities_sum_to_one(self):
        model = FittedGLM(Family.ORDINAL, TermSpec.parse(["v"]), "l", (0.0, 1.0), 0.0, True, 0, 0,
                          thresholds=(-1.0, 0.0, 1.5))
        probs = predict_proba(model, {"v": np.array([-2.0, 0.0, 3.0])})
        assert probs.shape == (3, 4)
        assert np.allclose(probs.sum(axis=1), 1.0)
        assert np.all(probs > 0)

    def test_unconverged_model_refuses(self):
        model = replace(self.bernoulli(0.0), converged=False)
        with pytest.raises(ModelFitError):
            sample(model, {}, np.random.default_rng(0))

    def test_thresholds_must_increase(self):
        with pytest.raises(ModelFitError):
            FittedGLM(Family.ORDINAL, TermSpec(), "l", (0.0,), 0.0, True, 0, 0, thresholds=(1.0, 0.5))

    def test_dict_round_trip(self):
        model = FittedGLM(Family.ORDINAL, TermSpec.parse(["v", "d*v"]), "l", (0.0, 0.3, -0.2), -12.5,
                          True, 7, 40, thresholds=(-1.0, 0.25))
        assert FittedGLM.from_dict(model.to_dict()) == model
