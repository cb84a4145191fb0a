import math

import pytest

from config import (SYNTHETIC_PRESET, Config, DetectorParams, config_from_mapping, dump_config, load_config,
                    parse_config, parse_key_values, resolve_seed)
from errors import ConfigError


def test_defaults():
    config = Config()
    assert config.detector.detection_threshold == 0.0025
    assert config.descriptor.radius == 0.8
    assert config.descriptor.n_bins == 17
    assert config.descriptor.distance_weight == 0.002
    assert config.match.max_ratio == 0.75
    assert math.isinf(config.detector.d_threshold)
    assert config.detector.border_margin is None


def test_parse_key_values_skips_comments_and_keeps_last():
    values = parse_key_values("# header\n\ndetect.sigma = 1.0\ndetect.sigma=1.5  # tuned\n")
    assert values == {"detect.sigma": "1.5"}


def test_parse_key_values_reports_line():
    with pytest.raises(ConfigError, match=r"params.txt:2"):
        parse_key_values("detect.sigma = 1\nno equals here\n", "params.txt")


def test_parse_config_types():
    config = parse_config("detect.border_margin = 4\nmatch.mutual_check = yes\ndetect.d_threshold = inf\n")
    assert config.detector.border_margin == 4
    assert config.match.mutual_check is True
    assert math.isinf(config.detector.d_threshold)
    assert parse_config("detect.border_margin = auto\n").detector.border_margin is None


@pytest.mark.parametrize("text", [
    "detect.colour = 1\n",
    "nosection = 1\n",
    "detect.sigma = fast\n",
    "detect.sigma = -1\n",
    "match.max_ratio = 1.5\n",
    "match.mutual_check = maybe\n",
])
def test_bad_values_raise_config_error(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_dump_round_trip():
    config = Config().with_values({"detect.sigma": "1.25", "describe.weighted_mean": "false",
                                   "eval.decision_only": "true", "detect.border_margin": "7"})
    assert parse_config(dump_config(config)) == config
    assert parse_config(dump_config(Config())) == Config()


def test_load_config_file_then_overrides(tmp_path):
    path = tmp_path / "params.txt"
    path.write_text("detect.sigma = 1.5\nmatch.min_inliers = 7\n")
    config = load_config(path, {"match.min_inliers": "3"})
    assert config.detector.sigma == 1.5
    assert config.match.min_inliers == 3
    assert load_config() == Config()


def test_synthetic_preset():
    config = config_from_mapping(SYNTHETIC_PRESET)
    assert config.detector.detection_threshold == 1e-4
    assert config.match.min_inliers == 4
    assert config.detector.sigma == DetectorParams().sigma


def test_resolve_seed_precedence(monkeypatch):
    monkeypatch.delenv("LOCUS_SEED", raising=False)
    assert resolve_seed(None, 7) == 7
    monkeypatch.setenv("LOCUS_SEED", "11")
    assert resolve_seed(None, 7) == 11
    assert resolve_seed(3, 7) == 3
    monkeypatch.setenv("LOCUS_SEED", "eleven")
    with pytest.raises(ConfigError):
        resolve_seed(None, 7)
