"""Config parsing, overrides, validation, and the resolved-text round trip."""

import dataclasses

import pytest

from flaming.config import (
    ConfigError,
    RunConfig,
    cast_value,
    config_keys,
    format_value,
    load_config,
    parse_kv_text,
    resolved_text,
)


def test_defaults_validate():
    RunConfig().validate()


def test_config_keys_match_dataclass():
    assert set(config_keys()) == {f.name for f in dataclasses.fields(RunConfig)}


def test_cast_value_types():
    assert cast_value("epochs", "12") == 12
    assert cast_value("lr_peak", "3e-3") == pytest.approx(3e-3)
    assert cast_value("flip_augment", "true") is True
    assert cast_value("flip_augment", "0") is False
    assert cast_value("paths", "actor") == "actor"
    assert cast_value("widths", "8,16,32") == (8, 16, 32)


def test_cast_value_rejects_garbage():
    with pytest.raises(ConfigError):
        cast_value("epochs", "twelve")
    with pytest.raises(ConfigError):
        cast_value("flip_augment", "maybe")
    with pytest.raises(ConfigError):
        cast_value("no_such_key", "1")


def test_parse_kv_text_comments_and_blanks():
    text = "# a comment\n\nepochs = 5\n  batch=2  \n"
    kv = parse_kv_text(text)
    assert kv == {"epochs": "5", "batch": "2"}


def test_parse_kv_text_rejects_malformed_line():
    with pytest.raises(ConfigError):
        parse_kv_text("epochs 5")


def test_parse_kv_text_rejects_duplicate_key():
    with pytest.raises(ConfigError):
        parse_kv_text("epochs=5\nepochs=6")


def test_load_config_defaults_when_no_path():
    assert load_config() == RunConfig()


def test_load_config_file_and_overrides(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("epochs = 7\nlr_peak = 2e-3\n")
    cfg = load_config(str(p))
    assert cfg.epochs == 7 and cfg.lr_peak == pytest.approx(2e-3)
    # explicit overrides beat the file
    cfg2 = load_config(str(p), overrides={"epochs": "9"})
    assert cfg2.epochs == 9 and cfg2.lr_peak == pytest.approx(2e-3)


def test_load_config_unknown_key_raises(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("not_a_knob = 1\n")
    with pytest.raises(ConfigError):
        load_config(str(p))


def test_load_config_missing_file_raises():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/run.cfg")


def test_resolved_text_round_trips():
    cfg = RunConfig(epochs=11, lr_peak=4e-3, widths=(4, 8), flip_augment=True)
    text = resolved_text(cfg)
    kv = parse_kv_text(text)
    rebuilt = RunConfig(**{k: cast_value(k, v) for k, v in kv.items()})
    assert rebuilt == cfg


def test_format_value_round_trips_floats():
    assert cast_value("lr_peak", format_value(3.14159e-7)) == pytest.approx(3.14159e-7)


def test_validate_catches_bad_ranges():
    bad = [
        dict(paths="spaghetti"),
        dict(sampling="sometimes"),
        dict(flow_q=1.5),
        dict(epochs=0),
        dict(warmup_epochs=30, epochs=30),
        dict(lr_peak=-1.0),
        dict(weight_decay=-0.1),
    ]
    for kw in bad:
        with pytest.raises(ConfigError):
            RunConfig(**kw).validate()
