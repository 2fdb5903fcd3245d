import json

import pytest

from adunet.config import ConfigError, NetworkConfig, expand, load_config, tiny_config


def write(tmp_path, obj):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(obj))
    return path


def test_presets_expand(tmp_path):
    assert list(load_config(write(tmp_path, {"preset": "adu_net"})).encoder_channels) == [32, 64, 128, 256, 256]
    plus = load_config(write(tmp_path, {"preset": "adu_net_plus"}))
    assert list(plus.encoder_channels) == [64, 128, 256, 512, 512]
    assert list(plus.adb_channels) == [256, 128, 64, 32]


def test_head_divisibility_error(tmp_path):
    with pytest.raises(ConfigError) as err:
        load_config(write(tmp_path, {"preset": "custom", "num_heads": 5, "adb_channels": [128, 64, 32, 16]}))
    assert err.value.field == "num_heads"


@pytest.mark.parametrize("raw,field", [
    ({"preset": "adu_net", "encoder_channels": [32, 64, 128, 256, 512]}, "encoder_channels"),
    ({"preset": "custom", "encoder_channels": [64, 32, 128, 256, 256]}, "encoder_channels"),
    ({"preset": "custom", "encoder_channels": [32, 64, 128, 256, 128]}, "encoder_channels"),
    ({"window_size": 0}, "window_size"),
    ({"attention_mode": "full"}, "attention_mode"),
    ({"decoder_mode": "triple"}, "decoder_mode"),
    ({"colour": "red"}, "colour"),
    ({"preset": "huge"}, "preset"),
])
def test_invalid_fields_are_named(raw, field):
    with pytest.raises(ConfigError) as err:
        expand(raw)
    assert err.value.field == field


def test_parse_failure(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(path)


def test_expand_idempotent():
    for raw in ({"preset": "adu_net"}, {"preset": "custom", "encoder_channels": [8, 16, 32, 64, 64]},
                tiny_config().to_dict()):
        once = expand(raw)
        assert expand(once) == once
        assert expand(once.to_dict()).hash() == once.hash()


def test_custom_defaults_adb_widths():
    cfg = expand({"preset": "custom", "encoder_channels": [8, 16, 32, 64, 64]})
    assert list(cfg.adb_channels) == [32, 16, 8, 4]


def test_hash_tracks_fields():
    a = NetworkConfig()
    assert a.hash() == NetworkConfig().hash()
    assert a.hash() != a.replace(seed=1).hash()
    assert a.hash() != a.replace(decoder_mode="single").hash()


def test_config_is_immutable():
    with pytest.raises(Exception):
        NetworkConfig().window_size = 4
