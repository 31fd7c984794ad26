"""Seeded synthetic OHLCV bars for tests and demos."""

import numpy as np
from loguru import logger

from ffdlab.errors import InvalidParams
from ffdlab.modules.market_data import MINUTE_MS, BarSeries

# 2024-01-01T00:00:00Z
DEFAULT_START_MS = 1_704_067_200_000
MIN_LENGTH = 100

DEFAULTS = {
    "random_walk": {"start": 100.0, "step_std": 1.0},
    "gbm": {"start": 100.0, "mu": 0.0, "sigma": 0.001},
    "ar1": {"mean": 100.0, "phi": 0.5, "noise_std": 1.0},
}
COMMON = {"period_minutes": 1, "start_ms": DEFAULT_START_MS, "intrabar": 0.0005}


def _closes(kind: str, length: int, p: dict, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal(length)
    if kind == "random_walk":
        return p["start"] + np.concatenate(([0.0], np.cumsum(p["step_std"] * z[1:])))
    if kind == "gbm":
        steps = (p["mu"] - 0.5 * p["sigma"] ** 2) + p["sigma"] * z[1:]
        return p["start"] * np.exp(np.concatenate(([0.0], np.cumsum(steps))))
    # ar1 around its mean, started at the mean
    dev = np.zeros(length)
    noise = p["noise_std"] * z
    for t in range(1, length):
        dev[t] = p["phi"] * dev[t - 1] + noise[t]
    return p["mean"] + dev


def _check(kind: str, length: int, p: dict) -> None:
    if kind not in DEFAULTS:
        raise InvalidParams(
            f"unknown kind '{kind}', expected one of {sorted(DEFAULTS)}"
        )
    if length < MIN_LENGTH:
        raise InvalidParams(f"length must be at least {MIN_LENGTH}, got {length}")
    if p["period_minutes"] < 1:
        raise InvalidParams("period_minutes must be positive")
    if p["intrabar"] < 0:
        raise InvalidParams("intrabar must be non-negative")
    if kind == "random_walk" and p["step_std"] < 0:
        raise InvalidParams("step_std must be non-negative")
    if kind == "gbm" and (p["start"] <= 0 or p["sigma"] < 0):
        raise InvalidParams("gbm needs start > 0 and sigma >= 0")
    if kind == "ar1" and (not -1 < p["phi"] < 1 or p["noise_std"] < 0):
        raise InvalidParams("ar1 needs |phi| < 1 and noise_std >= 0")


def generate_synthetic(
    kind: str, length: int, seed: int, params: dict | None = None
) -> BarSeries:
    """Closes from the chosen process; open is the previous close.

    High and low extend the open/close body by a seeded positive fraction
    (``intrabar`` times an exponential draw) of the price level.
    """
    params = dict(params or {})
    allowed = {**DEFAULTS.get(kind, {}), **COMMON}
    unknown = set(params) - set(allowed)
    if unknown:
        names = ", ".join(sorted(unknown))
        raise InvalidParams(f"unknown parameters for {kind}: {names}")
    p = {**allowed, **params}
    _check(kind, length, p)

    rng = np.random.default_rng(seed)
    close = _closes(kind, length, p, rng)
    open_ = np.concatenate(([close[0]], close[:-1]))
    hi_body = np.maximum(open_, close)
    lo_body = np.minimum(open_, close)
    up = np.minimum(p["intrabar"] * rng.exponential(size=length), 0.5)
    down = np.minimum(p["intrabar"] * rng.exponential(size=length), 0.5)
    high = hi_body + np.abs(hi_body) * up
    low = lo_body - np.abs(lo_body) * down
    volume = rng.integers(100, 10_000, size=length).astype(np.float64)

    period = int(p["period_minutes"])
    steps = np.arange(length, dtype=np.int64) * period * MINUTE_MS
    timestamps = int(p["start_ms"]) + steps
    series = BarSeries(
        symbol=f"synthetic-{kind}",
        period_minutes=period,
        timestamp=timestamps,
        open=open_,
        high=high,
        low=low,
        close=close,
        volume=volume,
        meta={"kind": kind, "seed": seed, "params": p},
    )
    logger.info(f"Generated {length} synthetic {kind} bars (seed {seed})")
    return series
