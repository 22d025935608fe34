import json

import pytest

from ssdkd import config
from ssdkd.nn import ConfigError

MINIMAL = {"teacher": {"lr": 0.1}, "student": {"lr": 0.05}, "generator": {"lr": 0.01}}


def test_minimal_config_uses_defaults():
    cfg = config.from_dict(MINIMAL)
    assert cfg.engine.gamma == 4.0 and cfg.replay.capacity == 500
    assert cfg.toggles == (True, True, True)


def test_round_trip_is_idempotent():
    cfg = config.default_config(engine={"gamma": 2.5}, data={"idx_images": None})
    again = config.loads(cfg.to_json())
    assert again == cfg
    assert config.loads(again.to_json()).to_json() == cfg.to_json()


def test_missing_required_key_is_named():
    d = json.loads(json.dumps(MINIMAL))
    del d["teacher"]["lr"]
    with pytest.raises(ConfigError, match="teacher.lr"):
        config.from_dict(d)


def test_unknown_key_and_section():
    with pytest.raises(ConfigError, match="engine.gamm"):
        config.from_dict({**MINIMAL, "engine": {"gamm": 1}})
    with pytest.raises(ConfigError, match="optimizer"):
        config.from_dict({**MINIMAL, "optimizer": {}})


def test_type_errors():
    with pytest.raises(ConfigError, match="engine.epochs"):
        config.from_dict({**MINIMAL, "engine": {"epochs": 1.5}})
    with pytest.raises(ConfigError, match="engine.use_ps"):
        config.from_dict({**MINIMAL, "engine": {"use_ps": 1}})
    cfg = config.from_dict({**MINIMAL, "engine": {"tau": 2}})
    assert isinstance(cfg.engine.tau, float)


def test_invalid_json_reports_position():
    with pytest.raises(ConfigError, match=r"line 2, column"):
        config.loads('{\n  "teacher": {"lr": }\n}')


@pytest.mark.parametrize("section,key,value", [
    ("engine", "epochs", -1), ("engine", "gamma", -0.5), ("engine", "synth_batch", 1),
    ("replay", "capacity", 0), ("replay", "eps", 0.0), ("data", "kind", "cifar"),
    ("teacher", "lr", 0.0),
])
def test_validation(section, key, value):
    d = json.loads(json.dumps(MINIMAL))
    d.setdefault(section, {})[key] = value
    with pytest.raises(ConfigError):
        config.from_dict(d)


def test_idx_kind_requires_paths():
    with pytest.raises(ConfigError):
        config.from_dict({**MINIMAL, "data": {"kind": "idx"}})


def test_all_eight_toggle_combinations_valid():
    for mask in range(8):
        cfg = config.default_config(engine={"use_ps": bool(mask & 1), "use_difficulty": bool(mask & 2),
                                            "use_diversity": bool(mask & 4)})
        assert cfg.toggles == (bool(mask & 1), bool(mask & 2), bool(mask & 4))


def test_load_from_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(MINIMAL))
    assert config.load(p) == config.from_dict(MINIMAL)
