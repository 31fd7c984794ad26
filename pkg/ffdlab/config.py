"""Pipeline defaults and the on-disk JSON configuration.

The file mirrors the dataclass tree below, e.g.::

    {
      "seed": 7,
      "data": {"input_path": "bars.csv", "period_minutes": 10},
      "fracdiff": {"d": "auto", "tau": 1e-05},
      "labeling": {"h": 12, "upfactor": 3.0, "lowerfactor": -3.0},
      "backtest": {"params": {"pa": 5, "pb": 2, "pc": 5, "pd": 2}}
    }

Missing keys keep their defaults; unknown keys are an error.
"""

import hashlib
import json
import os
import typing
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace

import numpy as np
from loguru import logger

from ffdlab.errors import ConfigError
from ffdlab.modules.backtest import CostModel, StrategyParams
from ffdlab.modules.fracdiff import DEFAULT_TAU
from ffdlab.modules.market_data import PRICE_FIELDS
from ffdlab.modules.model import MlpConfig
from ffdlab.modules.optimizer import GaConfig

DEFAULT_SEED = 7
SEED_STAGES = ("synthetic", "split", "model", "optimizer")
EXECUTION_KEYS = ("output_dir", "workers")


@dataclass(frozen=True)
class DataConfig:
    input_path: str | None = None
    # column name overrides, e.g. {"close": "Close"}
    schema: dict = field(default_factory=dict)
    source_period_minutes: int | None = None
    period_minutes: int = 10
    symbol: str | None = None


@dataclass(frozen=True)
class FracdiffConfig:
    d: float | str = "auto"
    tau: float = DEFAULT_TAU
    column: str = "close"
    log_prices: bool = True
    grid_start: float = 0.0
    grid_stop: float = 1.0
    grid_step: float = 0.1
    max_lags: int | None = None

    def __post_init__(self):
        if isinstance(self.d, str) and self.d != "auto":
            raise ValueError(f"d must be a number in [0, 1] or 'auto', got '{self.d}'")
        if not isinstance(self.d, str) and not 0 <= self.d <= 1:
            raise ValueError("d must lie in [0, 1]")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.column not in PRICE_FIELDS:
            raise ValueError(f"column must be one of {', '.join(PRICE_FIELDS)}")
        if not 0 <= self.grid_start < self.grid_stop <= 1:
            raise ValueError("d grid must satisfy 0 <= start < stop <= 1")


@dataclass(frozen=True)
class LabelingConfig:
    method: str = "triple_barrier"
    h: int = 12
    upfactor: float = 3.0
    lowerfactor: float = -3.0
    vol_span: int = 20
    # fixed-horizon return threshold
    threshold: float = 0.001

    def __post_init__(self):
        if self.method not in ("triple_barrier", "fixed_horizon"):
            raise ValueError(f"unknown labeling method '{self.method}'")


@dataclass(frozen=True)
class FeaturesConfig:
    indicator_set: str = "default16"
    n_components: int = 16
    split_fraction: float = 0.8
    split: str = "chronological"


@dataclass(frozen=True)
class BacktestConfig:
    params: StrategyParams = field(default_factory=StrategyParams)
    costs: CostModel = field(default_factory=CostModel)


@dataclass(frozen=True)
class OptimizerConfig:
    enabled: bool = False
    bounds: str = "0:10"
    objective: str = "sharpe"
    population: int = 32
    generations: int = 50
    crossover_rate: float = 0.9
    mutation_rate: float = 0.25
    mutation_scale: float = 0.1
    elite_count: int = 2

    def __post_init__(self):
        if self.objective not in ("sharpe", "total_return"):
            raise ValueError(f"unknown objective '{self.objective}'")

    def ga_config(self, seed: int) -> GaConfig:
        return GaConfig(
            population=self.population,
            generations=self.generations,
            crossover_rate=self.crossover_rate,
            mutation_rate=self.mutation_rate,
            mutation_scale=self.mutation_scale,
            elite_count=self.elite_count,
            seed=seed,
        )


@dataclass(frozen=True)
class PipelineConfig:
    data: DataConfig = field(default_factory=DataConfig)
    fracdiff: FracdiffConfig = field(default_factory=FracdiffConfig)
    labeling: LabelingConfig = field(default_factory=LabelingConfig)
    features: FeaturesConfig = field(default_factory=FeaturesConfig)
    model: MlpConfig = field(default_factory=MlpConfig)
    backtest: BacktestConfig = field(default_factory=BacktestConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = DEFAULT_SEED
    output_dir: str = "runs"
    workers: int | None = None


def _from_dict(cls, data: dict, path: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"'{path or '<root>'}' must be an object")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        keys = ", ".join(path + k for k in unknown)
        raise ConfigError(f"unknown config keys: {keys}")
    kwargs = {}
    for name, value in data.items():
        hint = hints[name]
        if is_dataclass(hint):
            kwargs[name] = _from_dict(hint, value, f"{path}{name}.")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid value under '{path or '<root>'}': {e}") from e


def config_from_dict(data: dict) -> PipelineConfig:
    return _from_dict(PipelineConfig, data)


def config_to_dict(cfg: PipelineConfig) -> dict:
    return asdict(cfg)


def default_config_path() -> str:
    config_home = os.environ.get("XDG_CONFIG_HOME", os.path.expanduser("~/.config"))
    return os.path.join(config_home, "ffdlab", "config.json")


def load_config(path: str | None = None) -> PipelineConfig:
    """Explicit path, else the XDG config file if present, else defaults."""
    if path is None:
        candidate = default_config_path()
        if not os.path.exists(candidate):
            logger.debug("No config file found, using defaults")
            return PipelineConfig()
        path = candidate

    try:
        with open(path, "r") as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e

    logger.info(f"Loaded config from {path}")
    return config_from_dict(data)


def save_config(cfg: PipelineConfig, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        json.dump(config_to_dict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")


def override(cfg, updates: dict):
    """Apply dotted-key overrides, e.g. ``{"labeling.h": 6}``.

    ``None`` values are ignored.
    """
    for key, value in updates.items():
        if value is None:
            continue
        cfg = _replace_path(cfg, key.split("."), value)
    return cfg


def _replace_path(obj, parts: list[str], value):
    name = parts[0]
    if not is_dataclass(obj) or name not in {f.name for f in fields(obj)}:
        raise ConfigError(f"unknown config key '{name}'")
    if len(parts) > 1:
        value = _replace_path(getattr(obj, name), parts[1:], value)
    try:
        return replace(obj, **{name: value})
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid value for '{name}': {e}") from e


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def reproducible_dict(cfg: PipelineConfig) -> dict:
    """Config tree without the settings that cannot change numeric results."""
    data = config_to_dict(cfg)
    for key in EXECUTION_KEYS:
        data.pop(key, None)
    return data


def config_hash(cfg: PipelineConfig) -> str:
    return hashlib.sha256(canonical_json(reproducible_dict(cfg)).encode()).hexdigest()


def stage_seeds(seed: int) -> dict:
    """One 32-bit seed per stage, spawned from the global seed in a fixed order."""
    children = np.random.SeedSequence(seed).spawn(len(SEED_STAGES))
    return {
        stage: int(child.generate_state(1)[0])
        for stage, child in zip(SEED_STAGES, children)
    }
