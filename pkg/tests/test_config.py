import pytest

from wstal.config import ConfigFileError, DataConfig, RunConfig


class TestRoundTrip:
    def test_dict_round_trip_preserves_defaults(self):
        cfg = RunConfig()
        again = RunConfig.from_dict(cfg.to_dict())
        assert again == cfg

    def test_file_round_trip(self, tmp_path):
        cfg = RunConfig().with_overrides(
            {"train.seed": 5, "contrast.temperature": 0.2, "data.dataset_dir": "some/where"}
        )
        path = tmp_path / "run.yaml"
        cfg.to_file(path)
        loaded = RunConfig.from_file(path)
        assert loaded == cfg
        assert loaded.train.seed == 5
        assert loaded.contrast.temperature == 0.2

    def test_tuples_survive_yaml(self, tmp_path):
        cfg = RunConfig()
        path = tmp_path / "run.yaml"
        cfg.to_file(path)
        loaded = RunConfig.from_file(path)
        assert loaded.inference.activation_thresholds == cfg.inference.activation_thresholds
        assert isinstance(loaded.inference.activation_thresholds, tuple)
        assert loaded.eval.tiou_grid == cfg.eval.tiou_grid

    def test_partial_file_fills_defaults(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("train:\n  seed: 9\n")
        loaded = RunConfig.from_file(path)
        assert loaded.train.seed == 9
        assert loaded.train.epochs == RunConfig().train.epochs
        assert loaded.memory == RunConfig().memory

    def test_empty_file_is_all_defaults(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("")
        assert RunConfig.from_file(path) == RunConfig()


class TestErrors:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigFileError, match="not found"):
            RunConfig.from_file(tmp_path / "nope.yaml")

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("train: [unclosed\n")
        with pytest.raises(ConfigFileError, match="YAML"):
            RunConfig.from_file(path)

    def test_unknown_section(self):
        with pytest.raises(ConfigFileError, match="unknown config section"):
            RunConfig.from_dict({"banana": {}})

    def test_unknown_key_in_section(self):
        with pytest.raises(ConfigFileError, match="unknown key"):
            RunConfig.from_dict({"train": {"sed": 3}})

    def test_invalid_value_wrapped(self):
        with pytest.raises(ConfigFileError, match="invalid section 'train'"):
            RunConfig.from_dict({"train": {"epochs": 0}})

    def test_non_mapping_root(self):
        with pytest.raises(ConfigFileError, match="mapping"):
            RunConfig.from_dict(["train"])


class TestOverrides:
    def test_override_applies_and_keeps_rest(self):
        base = RunConfig()
        out = base.with_overrides({"memory.momentum": 0.5})
        assert out.memory.momentum == 0.5
        assert out.memory.queue_len == base.memory.queue_len
        assert out.train == base.train
        assert base.memory.momentum != 0.5  # original untouched

    def test_unknown_target_rejected(self):
        with pytest.raises(ConfigFileError, match="override target"):
            RunConfig().with_overrides({"train.sed": 1})
        with pytest.raises(ConfigFileError, match="override target"):
            RunConfig().with_overrides({"nowhere.seed": 1})
        with pytest.raises(ConfigFileError, match="override target"):
            RunConfig().with_overrides({"train": 1})

    def test_override_revalidates(self):
        with pytest.raises(ConfigFileError, match="invalid section"):
            RunConfig().with_overrides({"contrast.temperature": -1.0})


class TestDataConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            DataConfig(num_segments=0)
