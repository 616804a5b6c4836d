import json
import math

import pytest

from crystalseg.config import Config, load_config


def test_defaults():
    cfg = load_config(None)
    assert cfg.forest.n_trees == 500 and cfg.forest.max_features == 2 and cfg.forest.min_leaf == 1
    assert cfg.features.pad_to == 128 and cfg.regions.min_area == 64
    assert cfg.regions.morphology == [["close", 2], ["open", 2]]
    assert cfg.segment.mode == "keep" and cfg.preprocess.normalize_scope == "tile"


def test_round_trip_and_partial_override(tmp_path):
    (tmp_path / "c.json").write_text(Config().to_json())
    assert load_config(tmp_path / "c.json") == Config()
    (tmp_path / "p.json").write_text(json.dumps({"segment": {"r_out": "inf"}, "seed": 4}))
    cfg = load_config(tmp_path / "p.json")
    assert cfg.segment.r_out == math.inf and cfg.seed == 4 and cfg.segment.r_in == 26.0


def test_rejects_bad_files(tmp_path):
    (tmp_path / "u.json").write_text(json.dumps({"regions": {"radius": 3}}))
    with pytest.raises(ValueError, match="regions.radius"):
        load_config(tmp_path / "u.json")
    (tmp_path / "s.json").write_text(json.dumps({"forest": 5}))
    with pytest.raises(ValueError, match="forest"):
        load_config(tmp_path / "s.json")
    (tmp_path / "j.json").write_text("{")
    with pytest.raises(ValueError, match="not valid JSON"):
        load_config(tmp_path / "j.json")
