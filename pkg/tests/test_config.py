import copy
import json

import pytest

from src.models.config import FLOW, ModelSpec, RunConfig, load_config, read_config_file
from src.models.flow_training import X_INTERVENTIONAL
from src.models.glm import Family
from src.models.schema import INTERVENTIONAL, NATURAL_PSE
from src.utils.errors import ConfigError
from src.utils.validators import ConfigValidator, DataValidator

from tests.conftest import base_config


@pytest.fixture
def data_dir(tmp_path):
    (tmp_path / "data.csv").write_text("v,d,l,x,y\n0,1,0,1,0\n", encoding="utf-8")
    return tmp_path


def labels(terms):
    return [term.label for term in terms.terms]


class TestRunConfig:
    def test_defaults_and_modes(self):
        data = base_config()
        for key in ("J", "B", "seed", "output_dir"):
            del data[key]
        config = RunConfig.from_dict(data)
        assert (config.J, config.B, config.seed, config.output_dir) == (2000, 2000, 0, "output")
        assert config.modes == (NATURAL_PSE, INTERVENTIONAL)

    def test_equal_contrast_values(self):
        data = base_config()
        data["schema"]["contrast"] = [1, 1]
        with pytest.raises(ConfigError, match="differ"):
            RunConfig.from_dict(data)

    def test_single_bootstrap_replicate(self):
        with pytest.raises(ConfigError, match="'B'"):
            RunConfig.from_dict({**base_config(), "B": 1})

    @pytest.mark.parametrize("changes", [
        {"spec_version": 2},
        {"engine": "bayes"},
        {"mode": "natural"},
        {"J": 0},
        {"J": 1.5},
        {"seed": -1},
        {"threads": 0},
        {"alpha": 1.0},
        {"sd_units": "yes"},
        {"models": {"Z": {}}},
    ])
    def test_invalid_settings(self, changes):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({**base_config(), **changes})

    def test_family_must_match_kind(self):
        data = base_config()
        data["models"]["Y"] = {"family": "gaussian", "terms": "additive"}
        with pytest.raises(ConfigError, match="models.Y"):
            RunConfig.from_dict(data)

    def test_terms_outside_conditioning_set(self):
        data = base_config()
        data["models"]["L"] = {"terms": ["d", "x"]}
        with pytest.raises(ConfigError, match="outside"):
            RunConfig.from_dict(data)

    def test_interventional_x_falls_back_to_x_without_l(self):
        data = base_config()
        data["models"]["X"] = {"family": "bernoulli", "terms": ["v", "d", "l", "d*l"]}
        config = RunConfig.from_dict(data)
        family, natural = config.resolved_models(NATURAL_PSE)["X"]
        _, interventional = config.resolved_models(INTERVENTIONAL)["X"]
        assert family is Family.BERNOULLI
        assert labels(natural) == ["v", "d", "l", "d*l"]
        assert labels(interventional) == ["v", "d"]

    def test_explicit_interventional_x_wins(self):
        data = base_config()
        data["models"][X_INTERVENTIONAL] = {"terms": ["d"]}
        config = RunConfig.from_dict(data)
        assert labels(config.resolved_models(INTERVENTIONAL)["X"][1]) == ["d"]

    def test_flow_engine_skips_model_resolution(self):
        data = {**base_config(), "engine": FLOW, "models": {"Y": {"family": "gaussian"}}}
        config = RunConfig.from_dict(data)
        assert config.engine == FLOW
        assert config.flow.train.seed == config.seed

    def test_overrides(self):
        config = RunConfig.from_dict(base_config()).with_overrides(seed=99, threads=4, output_dir="elsewhere")
        assert (config.seed, config.threads, config.output_dir) == (99, 4, "elsewhere")
        assert config.flow.train.seed == 99

    def test_bad_overrides(self):
        config = RunConfig.from_dict(base_config())
        with pytest.raises(ConfigError):
            config.with_overrides(threads=0)
        with pytest.raises(ConfigError):
            config.with_overrides(seed=-3)

    def test_echo_round_trip(self):
        config = RunConfig.from_dict(base_config())
        echoed = json.loads(json.dumps(config.to_dict()))
        assert RunConfig.from_dict(echoed) == config

    def test_relative_paths_follow_config_file(self, data_dir, write_config):
        config = load_config(write_config(base_config()))
        assert config.data_path == str(data_dir / "data.csv")
        assert config.output_path == str(data_dir / "out")


class TestModelSpec:
    def test_without_keeps_shorthands(self):
        spec = ModelSpec(terms="saturated")
        assert spec.without("l") is spec

    def test_unknown_keys(self):
        with pytest.raises(ConfigError, match="link"):
            ModelSpec.from_dict({"family": "bernoulli", "link": "probit"})


class TestReadConfigFile:
    def test_missing(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            read_config_file(str(tmp_path / "absent.json"))

    def test_not_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{", encoding="utf-8")
        with pytest.raises(ConfigError, match="valid JSON"):
            read_config_file(str(path))

    def test_not_an_object(self, tmp_path):
        path = tmp_path / "list.json"
        path.write_text("[1, 2]", encoding="utf-8")
        with pytest.raises(ConfigError, match="object"):
            read_config_file(str(path))


class TestConfigValidator:
    def test_valid(self, data_dir):
        is_valid, errors, warnings = ConfigValidator.validate_config(base_config(), str(data_dir))
        assert is_valid, errors
        assert "B = 0: effects are reported without confidence intervals" in warnings

    def test_collects_every_problem(self, data_dir):
        data = copy.deepcopy(base_config())
        data["schema"]["contrast"] = [1, 1]
        data.update({"B": 1, "J": 0, "alpha": 2})
        is_valid, errors, _ = ConfigValidator.validate_config(data, str(data_dir))
        assert not is_valid
        assert len(errors) == 4

    @pytest.mark.parametrize("changes", [
        {"spec_version": 2},
        {"data": ""},
        {"engine": "bayes"},
        {"mode": "natural"},
        {"J": 0},
        {"B": 1},
        {"b": 0},
        {"seed": -1},
        {"threads": 1.5},
        {"alpha": 1.0},
        {"sd_units": "yes"},
        {"output_dir": ""},
        {"models": {"Z": {}}},
        {"models": {"Y": {"family": "gaussian"}}},
        {"flow": {"depth": 3}},
    ])
    def test_agrees_with_config_parsing(self, data_dir, changes):
        data = {**base_config(), **changes}
        with pytest.raises(ConfigError) as info:
            RunConfig.from_dict(data, str(data_dir))
        is_valid, errors, _ = ConfigValidator.validate_config(data, str(data_dir))
        assert not is_valid
        assert any(info.value.message in error for error in errors), (info.value.message, errors)

    def test_missing_data_file(self, tmp_path):
        is_valid, errors, _ = ConfigValidator.validate_config(base_config(), str(tmp_path))
        assert not is_valid
        assert any("does not exist" in e for e in errors)

    def test_data_extension(self, data_dir):
        is_valid, errors, _ = ConfigValidator.validate_config({**base_config(), "data": "data.pdf"}, str(data_dir))
        assert not is_valid
        assert errors == ["Unsupported data format '.pdf'; expected one of .csv, .xlsx, .xlsm"]

    def test_unknown_keys_warn(self, data_dir):
        is_valid, _, warnings = ConfigValidator.validate_config({**base_config(), "colour": "red"}, str(data_dir))
        assert is_valid
        assert "Unknown setting 'colour' is ignored" in warnings

    def test_flow_engine_ignores_models(self, data_dir):
        data = {**base_config(), "engine": FLOW}
        is_valid, _, warnings = ConfigValidator.validate_config(data, str(data_dir))
        assert is_valid
        assert "Model specifications are ignored by the flow engine" in warnings

    def test_small_flow_architecture_warns(self, data_dir):
        data = {**base_config(), "engine": FLOW, "models": {},
                "flow": {"embedding_widths": [8, 8], "integrand_widths": [8, 8], "embedding_dim": 2}}
        _, _, warnings = ConfigValidator.validate_config(data, str(data_dir))
        assert any("fewer than four hidden layers" in w for w in warnings)

    def test_interventional_fallback_warns(self, data_dir):
        _, _, warnings = ConfigValidator.validate_config(base_config(), str(data_dir))
        assert "No X_interventional model; using the X model without its L terms" in warnings

    def test_bad_model_terms(self, data_dir):
        data = base_config()
        data["models"]["Y"] = {"terms": ["d", "q"]}
        is_valid, errors, _ = ConfigValidator.validate_config(data, str(data_dir))
        assert not is_valid
        assert all(e.startswith("models.Y") for e in errors)

    def test_not_an_object(self):
        assert ConfigValidator.validate_config([]) == (False, ["Configuration must be a JSON object"], [])


class TestDataValidator:
    def test_file_checks(self, data_dir):
        assert DataValidator.validate_file_path(str(data_dir / "data.csv")) == (True, None)
        assert DataValidator.validate_file_path("")[0] is False
        assert "not a file" in DataValidator.validate_file_path(str(data_dir))[1]

    def test_dataset_warnings(self, hand_dgp):
        data = hand_dgp.sample(200, seed=0)
        warnings = DataValidator.dataset_warnings(data, engine=FLOW)
        assert warnings == ["Flow engine with 200 rows; at least 16000 are recommended"]

    def test_constant_and_unobserved_values(self, hand_dgp):
        data = hand_dgp.sample(50, seed=0)
        columns = {name: data.column(name) for name in hand_dgp.names}
        columns["d"] = columns["d"] * 0.0
        constant = type(data)(data.schema, columns)
        warnings = DataValidator.dataset_warnings(constant)
        assert "Contrast value 1 of 'd' is never observed" in warnings
        assert "Variable 'd' is constant in the data" in warnings
