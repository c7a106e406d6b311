"""Tests for config loading, validation and the canonical digest."""

import dataclasses

import pytest

from pitchpilot.config import (
    ConfigError,
    CurriculumConfig,
    WorkbenchConfig,
    config_digest,
    config_from_dict,
    load_config,
    save_config,
)


class TestConstruction:
    def test_defaults_are_valid(self):
        cfg = WorkbenchConfig()
        assert cfg.episodes == 5000
        assert cfg.curriculum.start_cap == 2.0
        assert cfg.env().reward is cfg.reward

    def test_validation(self):
        with pytest.raises(ConfigError):
            WorkbenchConfig(seed=-1)
        with pytest.raises(ConfigError):
            WorkbenchConfig(episodes=-5)
        with pytest.raises(ValueError):
            CurriculumConfig(start_cap=11.0, max_cap=10.0)
        with pytest.raises(ValueError):
            CurriculumConfig(test_interval=0)

    def test_from_dict_nested_overrides(self):
        cfg = config_from_dict({"seed": 7, "trpo": {"epochs": 3},
                                "curriculum": {"start_cap": 1.0}})
        assert cfg.seed == 7
        assert cfg.trpo.epochs == 3
        assert cfg.trpo.gamma == 0.99  # untouched sibling keeps its default
        assert cfg.curriculum.start_cap == 1.0

    def test_from_dict_rejects_unknown_keys(self):
        with pytest.raises(ConfigError, match="unknown key"):
            config_from_dict({"episodess": 10})
        with pytest.raises(ConfigError, match="trpo"):
            config_from_dict({"trpo": {"gama": 0.9}})

    def test_from_dict_rejects_bad_values(self):
        with pytest.raises(ConfigError):
            config_from_dict({"trpo": {"gamma": 2.0}})
        with pytest.raises(ConfigError):
            config_from_dict({"trpo": "fast"})

    def test_empty_dict_gives_defaults(self):
        assert config_from_dict(None) == WorkbenchConfig()
        assert config_from_dict({}) == WorkbenchConfig()


class TestYamlRoundTrip:
    def test_save_load_round_trip(self, tmp_path):
        cfg = dataclasses.replace(WorkbenchConfig(), seed=5, episodes=123)
        path = tmp_path / "cfg.yaml"
        save_config(cfg, path)
        assert load_config(path) == cfg

    def test_partial_file_fills_defaults(self, tmp_path):
        path = tmp_path / "part.yaml"
        path.write_text("seed: 3\nreplay:\n  ser_threshold: 1.5\n")
        cfg = load_config(path)
        assert cfg.seed == 3
        assert cfg.replay.ser_threshold == 1.5
        assert cfg.episodes == WorkbenchConfig().episodes

    def test_her_strategies_list_becomes_tuple(self, tmp_path):
        path = tmp_path / "her.yaml"
        path.write_text("replay:\n  her_strategies: [mean]\n")
        assert load_config(path).replay.her_strategies == ("mean",)

    def test_malformed_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("seed: [unclosed\n")
        with pytest.raises(ConfigError):
            load_config(path)


class TestDigest:
    def test_digest_stable_across_out_dir(self):
        a = WorkbenchConfig()
        b = dataclasses.replace(a, out_dir="/somewhere/else")
        assert config_digest(a) == config_digest(b)

    def test_digest_changes_on_meaningful_field(self):
        base = WorkbenchConfig()
        for other in (
            dataclasses.replace(base, seed=1),
            dataclasses.replace(base, episodes=10),
            dataclasses.replace(base, trpo=dataclasses.replace(base.trpo, alpha0=51.0)),
            dataclasses.replace(base, trpo=dataclasses.replace(base.trpo,
                                                               kl_reject_factor=12.0)),
            dataclasses.replace(base, curriculum=dataclasses.replace(base.curriculum,
                                                                     step=2.0)),
        ):
            assert config_digest(other) != config_digest(base)

    def test_digest_survives_yaml_round_trip(self, tmp_path):
        cfg = dataclasses.replace(WorkbenchConfig(), seed=11)
        path = tmp_path / "cfg.yaml"
        save_config(cfg, path)
        assert config_digest(load_config(path)) == config_digest(cfg)
