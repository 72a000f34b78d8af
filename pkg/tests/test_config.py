import json

import pytest

from e3lab.config import DEFAULTS, load_config, save_config, validate_config
from e3lab.errors import ConfigError


def test_defaults_fill_in():
    cfg = validate_config({"master_seed": 0})
    assert cfg["buffer.capacity"] == 200 and cfg["budget.n"] == 100
    assert cfg.sequence() == ["g_1", "g_2", "g_3", "g_4", "g_5"]
    assert len(cfg.sequence("single")) == len(DEFAULTS["corpus.emerging"])


def test_master_seed_required():
    with pytest.raises(ConfigError) as exc:
        validate_config({})
    assert exc.value.key == "master_seed"


@pytest.mark.parametrize("key,value", [
    ("buffer.capacity", 7),
    ("buffer.capacity", 2),
    ("budget.n", 10),  # below the first quota floor(200/4) = 50
    ("budget.n", 10_000),
    ("protocol", "online"),
    ("methods", []),
    ("methods", ["ewc"]),
    ("ekfn.variant", "deep"),
    ("ekfn.heads", 3),
    ("corpus.patch_size", 64),
    ("detector.preset", "huge"),
    ("lwf.temperature", 0),
    ("sequence", ["g_1", "g_1"]),
    ("sequence", ["g_99"]),
    ("sweep.budgets", [0]),
    ("master_seed", -1),
    ("master_seed", True),
])
def test_invalid_values_name_their_key(key, value):
    with pytest.raises(ConfigError) as exc:
        validate_config({"master_seed": 0, key: value})
    assert exc.value.key == key


def test_unknown_key():
    with pytest.raises(ConfigError) as exc:
        validate_config({"master_seed": 0, "buffer.size": 3})
    assert exc.value.key == "buffer.size"


def test_quota_check_covers_every_planned_episode(tiny_run):
    # N=5 >= floor(20/4) but the run is fine; N=4 fails at k=1
    validate_config({**tiny_run, "budget.n": 5})
    with pytest.raises(ConfigError):
        validate_config({**tiny_run, "budget.n": 4})


def test_overrides_and_fingerprint():
    cfg = validate_config({"master_seed": 0})
    other = cfg.with_overrides(budget__n=150)
    assert other["budget.n"] == 150 and cfg["budget.n"] == 100
    assert other.fingerprint() != cfg.fingerprint()
    assert cfg.with_overrides().fingerprint() == cfg.fingerprint()


def test_round_trip(tmp_path):
    cfg = validate_config({"master_seed": 3, "methods": ["e3"]})
    save_config(cfg, tmp_path / "c.json")
    assert load_config(tmp_path / "c.json").values == cfg.values


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")
    (tmp_path / "list.json").write_text(json.dumps([1]))
    with pytest.raises(ConfigError):
        load_config(tmp_path / "list.json")


def test_typed_views(tiny_run):
    cfg = validate_config(tiny_run)
    assert cfg.update_train(5).patch_size == 16 and cfg.update_train(5).seed == 5
    assert cfg.fusion().n_layers == 1
    assert cfg.cl_method("lwf", 0).temperature == 2.0
    assert cfg.corpus_config().image_size == 16
