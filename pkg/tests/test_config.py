import pytest

from sfanet.config import CONFIG_ENV_VAR, RunConfig
from sfanet.core import Label
from sfanet.errors import ConfigurationError, IngestionError


def test_defaults_without_a_file():
    cfg = RunConfig.load(None)
    assert cfg.policy().threshold == 0.3
    assert cfg.dcf_params() == (1.0, 1.0, 0.5)
    assert cfg.get("provider", "face_parts") == "stub_template"
    assert cfg.positive_label() is Label.REAL


def test_yaml_file_overrides_defaults(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(
        "eval:\n  threshold: 0.5\n  c_miss: 10\nmodel:\n  name: sfnet\n"
        "  resolution: [16, 16]\n  spatial_dim: 2\n  extractor: global_stats\n"
    )
    cfg = RunConfig.load(path)
    assert cfg.policy().threshold == 0.5
    assert cfg.dcf_params()[0] == 10.0
    model = cfg.model_config()
    assert model.name == "sfnet"
    assert model.resolution == (16, 16)


def test_flag_overrides_beat_file_values(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("eval:\n  threshold: 0.5\n")
    cfg = RunConfig.load(path)
    cfg.override("eval", "threshold", 0.2)
    assert cfg.policy().threshold == 0.2


def test_unknown_sections_and_keys_rejected(tmp_path):
    bad_section = tmp_path / "a.yaml"
    bad_section.write_text("surprise:\n  key: 1\n")
    with pytest.raises(ConfigurationError, match="unknown config sections"):
        RunConfig.load(bad_section)
    bad_key = tmp_path / "b.yaml"
    bad_key.write_text("eval:\n  thresold: 0.5\n")
    with pytest.raises(ConfigurationError, match="unknown keys"):
        RunConfig.load(bad_key)
    cfg = RunConfig.load(None)
    with pytest.raises(ConfigurationError):
        cfg.override("eval", "nonsense", 1)


def test_env_var_supplies_the_path(tmp_path, monkeypatch):
    path = tmp_path / "env.yaml"
    path.write_text("eval:\n  threshold: 0.7\n")
    monkeypatch.setenv(CONFIG_ENV_VAR, str(path))
    cfg = RunConfig.load(None)
    assert cfg.policy().threshold == 0.7


def test_missing_config_file_is_an_ingestion_error(tmp_path):
    with pytest.raises(IngestionError):
        RunConfig.load(tmp_path / "nope.yaml")


def test_config_hash_tracks_resolved_values():
    a = RunConfig.load(None)
    b = RunConfig.load(None)
    assert a.config_hash() == b.config_hash()
    b.override("eval", "threshold", 0.4)
    assert a.config_hash() != b.config_hash()


def test_model_config_requires_a_name():
    cfg = RunConfig.load(None)
    with pytest.raises(ConfigurationError, match="model.name"):
        cfg.model_config()


def test_emotion_group_override(tmp_path):
    from sfanet.core import EmotionGroup, ImageSample
    from sfanet.datapipe import MappingAttributePredictor, categorize

    path = tmp_path / "g.yaml"
    path.write_text("data:\n  emotion_groups:\n    surprise: happy\n")
    cfg = RunConfig.load(path)
    groups = cfg.emotion_groups()
    assert groups == {"surprise": EmotionGroup.HAPPY}
    predictor = MappingAttributePredictor({"x": ("white", "surprise")})
    category = categorize(predictor, ImageSample(id="x"), emotion_groups=groups)
    assert category.name == "white_happy"

    bad = tmp_path / "bad.yaml"
    bad.write_text("data:\n  emotion_groups:\n    surprise: thrilled\n")
    with pytest.raises(ConfigurationError):
        RunConfig.load(bad).emotion_groups()


def test_train_config_builder(tmp_path):
    path = tmp_path / "t.yaml"
    path.write_text("train:\n  learning_rate: 0.01\n  batch_size: 8\n  betas: [0.8, 0.9]\n")
    cfg = RunConfig.load(path)
    train = cfg.train_config()
    assert train.learning_rate == 0.01
    assert train.batch_size == 8
    assert train.betas == (0.8, 0.9)
