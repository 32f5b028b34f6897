import dataclasses

import pytest

from videoiq.config import (ConfigError, PolicyStageConfig, StageConfig, TrainConfig, apply_overrides, dump_config,
                            load_config, set_value)

from conftest import tiny_config


@pytest.mark.parametrize("cfg", [TrainConfig(), tiny_config(), tiny_config(use_kd=True, optimizer="sgd")])
def test_dump_load_round_trip(cfg, tmp_path):
    p = tmp_path / "c.ini"
    p.write_text(dump_config(cfg))
    assert load_config(p) == cfg


def test_dict_round_trip():
    cfg = tiny_config()
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    assert isinstance(cfg.to_json(), str)


def test_headerless_file_is_general_section(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("seed = 7\n")
    assert load_config(p).seed == 7


def test_overrides_reach_nested_fields():
    cfg = apply_overrides(TrainConfig(), ["stage2.w1=0.5", "data.noise=0.1", "stage1.epochs=3", "quant.alpha_lr=32:1,4:2,2:3",
                                          "recognizer.widths=4,8", "recognizer.strides=2,1",
                                          "stage2.use_kd=true"])
    assert cfg.stage2.loss_weights.w1 == 0.5
    assert cfg.data.spec.noise == 0.1
    assert cfg.stage1.epochs == 3
    assert cfg.quant.alpha_lr == {32: 1.0, 4: 2.0, 2: 3.0}
    assert cfg.recognizer.widths == (4, 8)
    assert cfg.stage2.use_kd is True


def test_override_file_then_flag(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[stage2]\nepochs = 4\n")
    assert load_config(p, ["stage2.epochs=9"]).stage2.epochs == 9
    assert load_config(p).stage2.epochs == 4


@pytest.mark.parametrize("key", ["stage2.nope", "nosection.x", "data.spec.missing"])
def test_unknown_key(key):
    with pytest.raises(ConfigError):
        set_value(TrainConfig(), key, "1")


def test_unknown_section(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[bogus]\nx = 1\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_override_needs_equals():
    with pytest.raises(ConfigError):
        apply_overrides(TrainConfig(), ["stage2.epochs"])


def test_bad_optimizer():
    with pytest.raises(ConfigError):
        PolicyStageConfig(epochs=1, lr=0.1, optimizer="rmsprop")
    with pytest.raises(ConfigError):
        apply_overrides(TrainConfig(), ["stage2.optimizer=rmsprop"])


def test_stage_validation():
    with pytest.raises((ConfigError, ValueError)):
        StageConfig(epochs=-1, lr=0.1)


def test_recognizer_config_follows_data():
    cfg = dataclasses.replace(TrainConfig(), data=dataclasses.replace(TrainConfig().data, spec=dataclasses.replace(
        TrainConfig().data.spec, num_classes=6, frame_size=48, policy_size=12)))
    rc = cfg.recognizer_config()
    assert (rc.num_classes, rc.input_size) == (6, 48)
    assert cfg.policy_config(4).input_size == 12
