import json

import pytest

from ffdlab.config import (
    EXECUTION_KEYS,
    SEED_STAGES,
    PipelineConfig,
    config_from_dict,
    config_hash,
    config_to_dict,
    default_config_path,
    load_config,
    override,
    reproducible_dict,
    save_config,
    stage_seeds,
)
from ffdlab.errors import ConfigError
from ffdlab.modules.backtest import StrategyParams


class TestLoad:
    def test_defaults_when_no_file(self, tmp_path, monkeypatch):
        monkeypatch.setenv("XDG_CONFIG_HOME", str(tmp_path))
        assert load_config() == PipelineConfig()

    def test_xdg_location(self, tmp_path, monkeypatch):
        monkeypatch.setenv("XDG_CONFIG_HOME", str(tmp_path))
        path = default_config_path()
        assert path == str(tmp_path / "ffdlab" / "config.json")
        save_config(override(PipelineConfig(), {"seed": 99}), path)
        assert load_config().seed == 99

    def test_partial_file_keeps_defaults(self, tmp_path):
        path = tmp_path / "cfg.json"
        data = {"labeling": {"h": 6}, "backtest": {"params": {"pa": 3}}}
        path.write_text(json.dumps(data))
        cfg = load_config(str(path))
        assert cfg.labeling.h == 6
        assert cfg.labeling.upfactor == 3.0
        assert cfg.backtest.params == StrategyParams(pa=3)

    def test_save_load_round_trip(self, tmp_path):
        cfg = override(PipelineConfig(), {"fracdiff.d": 0.4, "model.epochs": 5})
        path = str(tmp_path / "nested" / "cfg.json")
        save_config(cfg, path)
        assert load_config(path) == cfg

    def test_unknown_key(self):
        with pytest.raises(ConfigError) as err:
            config_from_dict({"labeling": {"horizon": 6}})
        assert "labeling.horizon" in str(err.value)

    @pytest.mark.parametrize(
        "fracdiff",
        [
            {"d": 1.5},
            {"column": "volume"},
            {"grid_start": 0.6, "grid_stop": 0.4},
            {"grid_stop": 1.2},
        ],
    )
    def test_invalid_value(self, fracdiff):
        with pytest.raises(ConfigError):
            config_from_dict({"fracdiff": fracdiff})

    def test_section_must_be_object(self):
        with pytest.raises(ConfigError):
            config_from_dict({"model": 3})

    def test_bad_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(str(path))

    def test_missing_explicit_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / "absent.json"))


class TestOverride:
    def test_dotted_keys(self):
        cfg = override(PipelineConfig(), {"backtest.params.pa": 7.5, "seed": 3})
        assert cfg.backtest.params.pa == 7.5
        assert cfg.seed == 3
        assert PipelineConfig().backtest.params.pa == 5.0

    def test_none_is_ignored(self):
        assert override(PipelineConfig(), {"labeling.h": None}) == PipelineConfig()

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            override(PipelineConfig(), {"labeling.nope": 1})

    def test_validation_applies(self):
        with pytest.raises(ConfigError):
            override(PipelineConfig(), {"labeling.method": "meta"})


class TestHash:
    def test_stable(self):
        assert config_hash(PipelineConfig()) == config_hash(PipelineConfig())
        assert len(config_hash(PipelineConfig())) == 64

    def test_numeric_settings_change_hash(self):
        base = config_hash(PipelineConfig())
        assert config_hash(override(PipelineConfig(), {"seed": 8})) != base
        assert config_hash(override(PipelineConfig(), {"labeling.h": 6})) != base

    def test_execution_settings_do_not(self):
        cfg = override(PipelineConfig(), {"output_dir": "/elsewhere", "workers": 8})
        assert config_hash(cfg) == config_hash(PipelineConfig())
        assert not set(EXECUTION_KEYS) & set(reproducible_dict(cfg))

    def test_dict_is_json_ready(self):
        json.dumps(config_to_dict(PipelineConfig()))


class TestSeeds:
    def test_one_seed_per_stage(self):
        seeds = stage_seeds(7)
        assert tuple(seeds) == SEED_STAGES
        assert len(set(seeds.values())) == len(SEED_STAGES)

    def test_deterministic(self):
        assert stage_seeds(7) == stage_seeds(7)
        assert stage_seeds(7) != stage_seeds(8)
