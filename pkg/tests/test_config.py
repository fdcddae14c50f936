"""Config parsing, validation, and serialization."""

import json

import pytest

import branchcl as bc
from branchcl import ConfigError


def test_defaults_are_valid():
    cfg = bc.default_config()
    bc.validate_config(cfg)
    assert cfg.stream.tasks == 4
    assert cfg.adapter.rank == 16
    assert cfg.adapter.freeze_width == 1
    assert cfg.train.epochs == 30
    assert cfg.seeds == (0, 1, 2, 3, 4)
    assert cfg.methods == ("zero_shot", "lora", "moelora", "branchlora", "multitask")


def test_dict_round_trip():
    cfg = bc.default_config()
    again = bc.config_from_dict(bc.config_to_dict(cfg))
    assert again == cfg


def test_empty_object_means_defaults():
    assert bc.config_from_dict({}) == bc.default_config()


def test_partial_overrides():
    cfg = bc.config_from_dict(
        {"stream": {"tasks": 2}, "train": {"lr": 0.01}, "seeds": [7]}
    )
    assert cfg.stream.tasks == 2
    assert cfg.stream.dim == 32  # untouched default
    assert cfg.train.lr == 0.01
    assert cfg.seeds == (7,)


def test_freeze_width_null_means_top_k():
    cfg = bc.config_from_dict({"adapter": {"freeze_width": None, "top_k": 2}})
    assert cfg.adapter.freeze_width is None
    assert cfg.adapter.effective_freeze_width() == 2
    assert bc.config_from_dict({"adapter": {"freeze_width": 0}}).adapter.effective_freeze_width() == 0


@pytest.mark.parametrize(
    "obj,fragment",
    [
        ({"streem": {}}, "streem"),
        ({"stream": {"dims": 32}}, "stream.dims"),
        ({"stream": {"dim": "32"}}, "stream.dim"),
        ({"stream": {"dim": 7}}, "stream.dim"),
        ({"stream": {"classes": 1}}, "stream.classes"),
        ({"stream": {"train_samples": 4, "classes": 8}}, "train_samples"),
        ({"adapter": {"rank": 10, "experts": 4}}, "adapter"),
        ({"adapter": {"top_k": 9}}, "adapter"),
        ({"adapter": {"freeze_width": 99}}, "freeze_width"),
        ({"adapter": {"freeze_by": "entropy"}}, "freeze_by"),
        ({"train": {"epochs": 0}}, "train.epochs"),
        ({"train": {"lr": -1.0}}, "train.lr"),
        ({"train": {"optimizer": "adagrad"}}, "train.optimizer"),
        ({"methods": []}, "methods"),
        ({"methods": ["lora", "lora"]}, "methods"),
        ({"methods": ["fine_tune"]}, "methods[0]"),
        ({"seeds": []}, "seeds"),
        ({"seeds": [0, 0]}, "seeds"),
        ({"seeds": [0, "1"]}, "seeds[1]"),
        ({"out_dir": 5}, "out_dir"),
    ],
)
def test_rejections_name_the_field(obj, fragment):
    with pytest.raises(ConfigError) as err:
        bc.config_from_dict(obj)
    assert fragment in str(err.value)


def test_load_config_reads_files(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"stream": {"tasks": 3}}))
    cfg = bc.load_config(path)
    assert cfg.stream.tasks == 3


def test_load_config_reports_json_position(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"stream": {,}}')
    with pytest.raises(ConfigError) as err:
        bc.load_config(path)
    msg = str(err.value)
    assert "line" in msg and "column" in msg


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        bc.load_config(tmp_path / "absent.json")


def test_shipped_configs_parse(tmp_path):
    for name in ("default.json", "smoke.json"):
        cfg = bc.load_config(f"configs/{name}")
        bc.validate_config(cfg)


def test_config_to_dict_is_json_ready():
    obj = bc.config_to_dict(bc.default_config())
    json.dumps(obj)  # must not raise
    assert obj["adapter"]["freeze_width"] == 1
    assert "out_dir" in obj
