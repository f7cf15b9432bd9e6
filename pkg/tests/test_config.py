import pytest

from wavecaster.config import DEFAULTS, RunConfig
from wavecaster.errors import ConfigError


def test_defaults_cover_all_keys():
    cfg = RunConfig()
    for key in DEFAULTS:
        assert cfg.get(key) == DEFAULTS[key][0]


def test_parse_render_identity():
    cfg = RunConfig()
    cfg.set("train.epochs", "7")
    cfg.set("model", "convlstm")
    text = cfg.render()
    again = RunConfig.parse(text)
    assert again.render() == text
    assert again.get_int("train.epochs") == 7


def test_unknown_key_rejected():
    cfg = RunConfig()
    with pytest.raises(ConfigError):
        cfg.set("train.momentum", "0.9")
    with pytest.raises(ConfigError):
        cfg.get("nope")


def test_parse_comments_and_blank_lines():
    cfg = RunConfig.parse("# a comment\n\ntrain.epochs = 5  # inline\n")
    assert cfg.get_int("train.epochs") == 5


def test_parse_malformed_line():
    with pytest.raises(ConfigError) as exc:
        RunConfig.parse("train.epochs 5\n")
    assert "line 1" in str(exc.value)


def test_typed_getters():
    cfg = RunConfig()
    assert cfg.get_float("train.lr") == 0.001
    assert cfg.get_bool("metrics.lat_weight") is True
    cfg.set("metrics.lat_weight", "no")
    assert cfg.get_bool("metrics.lat_weight") is False
    cfg.set("train.epochs", "three")
    with pytest.raises(ConfigError):
        cfg.get_int("train.epochs")
    cfg.set("metrics.lat_weight", "maybe")
    with pytest.raises(ConfigError):
        cfg.get_bool("metrics.lat_weight")


def test_split_ratio_validation():
    cfg = RunConfig()
    cfg.set("synth.train_ratio", "0.9")
    cfg.set("synth.val_ratio", "0.2")
    with pytest.raises(ConfigError):
        cfg.split_ratios()


def test_model_kind_validation():
    cfg = RunConfig()
    cfg.set("model", "perceptron")
    with pytest.raises(ConfigError):
        cfg.model_kind()


def test_model_config_views():
    cfg = RunConfig()
    vit = cfg.model_config("vit")
    assert vit["d_model"] == 64 and vit["residual"] is False
    lstm = cfg.model_config("convlstm")
    assert lstm == {"hidden": 32, "t_in": 2}
