import pytest

from patchlift.config import (
    DEFAULTS,
    config_hash,
    format_config,
    load_config_file,
    parse_config_text,
    parse_overrides,
    resolve_config,
    section,
    write_snapshot,
)
from patchlift.errors import ConfigError


def test_defaults_resolve_cleanly():
    cfg = resolve_config()
    assert cfg == DEFAULTS
    assert cfg["reward.t_threshold"] == 300
    assert cfg["reward.t_inpaint"] == 150
    assert cfg["reward.weight"] == 1.0


def test_parse_values_and_comments():
    text = """
    # a comment
    data.n_samples = 100   # trailing comment
    train.with_edge = false
    train.learning_rate = 2e-4
    data.families = stripes,blobs
    """
    parsed = parse_config_text(text)
    assert parsed == {
        "data.n_samples": 100,
        "train.with_edge": False,
        "train.learning_rate": 2e-4,
        "data.families": "stripes,blobs",
    }


def test_unknown_key_is_named_in_error():
    with pytest.raises(ConfigError, match="data.bogus"):
        resolve_config({"data.bogus": 1})


def test_type_coercion_errors():
    with pytest.raises(ConfigError, match="integer"):
        resolve_config({"data.n_samples": 2.5})
    with pytest.raises(ConfigError, match="boolean"):
        resolve_config({"train.with_edge": 3})
    assert resolve_config({"train.learning_rate": 1})["train.learning_rate"] == 1.0


def test_override_precedence():
    file_values = {"data.n_samples": 50}
    overrides = parse_overrides(["data.n_samples=75"])
    assert resolve_config(file_values, overrides)["data.n_samples"] == 75


def test_bad_override_shape():
    with pytest.raises(ConfigError, match="key=value"):
        parse_overrides(["data.n_samples"])


def test_snapshot_round_trip(tmp_path):
    cfg = resolve_config({"data.n_samples": 12, "train.with_edge": False})
    path = tmp_path / "resolved.txt"
    write_snapshot(cfg, path, header="command: test")
    again = resolve_config(load_config_file(path))
    assert again == cfg


def test_format_is_stable_and_hashable():
    cfg = resolve_config()
    assert format_config(cfg) == format_config(dict(reversed(list(cfg.items()))))
    assert config_hash(cfg, section="data") == config_hash(cfg, section="data")
    assert config_hash(cfg, section="data") != config_hash(
        resolve_config({"data.n_samples": 3}), section="data"
    )
    assert config_hash(cfg, section="data") == config_hash(
        resolve_config({"train.epochs": 5}), section="data"
    )


def test_section_view():
    cfg = resolve_config()
    data = section(cfg, "data")
    assert data["image_size"] == 64
    assert all(not key.startswith("data.") for key in data)


def test_missing_config_file():
    with pytest.raises(ConfigError, match="not found"):
        load_config_file("/nonexistent/path.cfg")
