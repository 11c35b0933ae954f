import math

import pytest

from app.config import get_settings
from app.models.experiment import ExperimentConfig, load_experiment_config, validate_config
from app.services.config_file import format_flat, nest, parse_flat, read_flat
from app.services.errors import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_NUMERIC,
    EXIT_UNEXPECTED,
    GENERIC_FAILURE_MSG,
    ConfigError,
    DataFormatError,
    DomainError,
    NumericError,
    exit_code_for,
    to_user_message,
)
from app.services.losses import LossKind
from app.services.normpower import NormKind
from conftest import write_config


def test_parse_flat():
    text = """
    # full-line comment
    optimizer.lr = 0.05   # trailing comment
    diagnostics.weights = 1, 1, 0.5
    init.seed = none
    output_dir =
    """
    values = parse_flat(text)
    assert values == {
        "optimizer.lr": "0.05",
        "diagnostics.weights": "1, 1, 0.5",
        "init.seed": None,
        "output_dir": None,
    }


def test_parse_flat_errors():
    with pytest.raises(ConfigError) as excinfo:
        parse_flat("a.b = 1\na.b = 2\n")
    assert excinfo.value.key_path == "a.b"
    assert ":2:" in str(excinfo.value)
    with pytest.raises(ConfigError):
        parse_flat("just words\n")


def test_nest_and_format():
    tree = nest({"a.b": "1", "a.c": "2", "d": None})
    assert tree == {"a": {"b": "1", "c": "2"}, "d": None}
    assert format_flat({"a": {"b": [1, 2], "c": True}, "d": None, "e": 0.1}) == "a.b = 1, 2\na.c = true\nd = none\ne = 0.1\n"
    with pytest.raises(ConfigError) as excinfo:
        nest({"a": "1", "a.b": "2"})
    assert excinfo.value.key_path == "a"


def test_read_flat_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        read_flat(tmp_path / "absent.conf")


def test_defaults():
    config = load_experiment_config()
    assert config.optimizer.lr == 0.01
    assert config.optimizer.momentum == 0.9
    assert config.diagnostics.log_base == math.e
    assert config.loss.kind is LossKind.SOFTMAX_CE
    assert len(config.sweep.losses) == 10
    assert config.init_seed == config.data_seed == 0


def test_file_values_and_overrides(tmp_path):
    path = write_config(
        tmp_path / "run.conf",
        optimizer__lr=0.2,
        diagnostics__weights="1, 2, 0.5",
        diagnostics__log_base="e",
        sweep__k_list="0, 3",
        seed=4,
        init__seed=9,
    )
    config = load_experiment_config(path, {"optimizer.lr": "0.3", "seed": None})
    assert config.optimizer.lr == 0.3
    assert config.diagnostics.weights == (1.0, 2.0, 0.5)
    assert config.sweep.k_list == [0, 3]
    assert config.seed == 4
    assert config.init_seed == 9 and config.data_seed == 4


@pytest.mark.parametrize(
    "overrides,key_path",
    [
        ({"optimizer.learning_rate": "0.1"}, "optimizer.learning_rate"),
        ({"optimizer.lr": "-1"}, "optimizer.lr"),
        ({"model.activation": "gelu"}, "model.activation"),
        ({"sweep.losses": "mse, pnorm_pow9"}, "sweep.losses"),
        ({"data.source": "idx"}, "data"),
        ({"optimizer.omega_norm": "lp"}, "optimizer"),
        ({"diagnostics.weights": "1, 2"}, "diagnostics.weights"),
    ],
)
def test_invalid_values_name_their_key(overrides, key_path):
    with pytest.raises(ConfigError) as excinfo:
        load_experiment_config(overrides=overrides)
    assert excinfo.value.key_path == key_path


def test_round_trip_through_flat_text():
    config = load_experiment_config(
        overrides={"loss.kind": "pnorm_pow", "loss.k": "3", "optimizer.omega_norm": "lp", "optimizer.omega_p": "3"}
    )
    again = validate_config(nest(parse_flat(config.to_flat())))
    assert again == config


def test_derived_specs():
    config = load_experiment_config(
        overrides={"loss.kind": "l1", "loss.smooth_relaxation": "0.25", "optimizer.omega_scale": "5"}
    )
    spec = config.loss_spec()
    assert spec.kind is LossKind.L1 and spec.smooth.relaxation == 0.25
    swept = config.loss_spec("pnorm_pow4")
    assert swept.k == 4 and swept.smooth.relaxation == 0.25

    omega = config.omega_spec()
    assert omega.power.norm is NormKind.L2 and omega.power.scale == 5.0

    model_config = config.model_config_for(16, 10)
    assert model_config.input_dim == 16 and model_config.block_count == 1
    pinned = load_experiment_config(overrides={"model.input_dim": "8"})
    with pytest.raises(ConfigError) as excinfo:
        pinned.model_config_for(16, 10)
    assert excinfo.value.key_path == "model.input_dim"


def test_experiment_config_rejects_unknown_top_level_keys():
    with pytest.raises(ConfigError) as excinfo:
        validate_config({"bogus": "1"})
    assert excinfo.value.key_path == "bogus"
    assert isinstance(validate_config({}), ExperimentConfig)


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("GENSMOOTH_THREADS", "3")
    monkeypatch.setenv("GENSMOOTH_LOG_LEVEL", "DEBUG")
    get_settings.cache_clear()
    settings = get_settings()
    assert settings.threads == 3
    assert settings.log_level == "DEBUG"
    assert settings.output_root.endswith("runs")
    assert get_settings() is settings


def test_error_messages_and_exit_codes():
    cases = [
        (ConfigError("must be > 0", key_path="optimizer.lr"), EXIT_CONFIG, "config error at optimizer.lr: must be > 0"),
        (DataFormatError("bad magic", byte_offset=0, path="x.idx"), EXIT_DATA, "data error in x.idx at byte 0: bad magic"),
        (NumericError("overflow", layer_index=2), EXIT_NUMERIC, "numeric error (layer 2): overflow"),
        (DomainError("wrong size"), EXIT_NUMERIC, "wrong size"),
        (RuntimeError("boom"), EXIT_UNEXPECTED, GENERIC_FAILURE_MSG),
    ]
    for exc, code, message in cases:
        assert exit_code_for(exc) == code
        assert to_user_message(exc) == message
