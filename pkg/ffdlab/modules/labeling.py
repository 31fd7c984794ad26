"""Triple-barrier and fixed-horizon labels."""

from collections import Counter
from dataclasses import dataclass

import numpy as np
import pandas as pd
from loguru import logger

from ffdlab.errors import DegenerateBarrier, SeriesTooShort
from ffdlab.modules.market_data import BarSeries


@dataclass(frozen=True)
class VolatilityEstimate:
    span: int
    values: np.ndarray  # NaN where undefined

    def defined(self, t: int) -> bool:
        return bool(np.isfinite(self.values[t]))


@dataclass(frozen=True)
class TripleBarrierConfig:
    h: int = 12
    upfactor: float = 3.0
    lowerfactor: float = -3.0
    vol_span: int = 20

    def __post_init__(self):
        if self.h < 1:
            raise ValueError("h must be at least 1")
        if not self.upfactor > 0:
            raise ValueError("upfactor must be positive")
        if not self.lowerfactor < 0:
            raise ValueError("lowerfactor must be negative")
        if self.vol_span < 1:
            raise ValueError("vol_span must be positive")


@dataclass(frozen=True)
class LabelEvent:
    entry_index: int
    upper_barrier: float
    lower_barrier: float
    vertical_index: int
    touch_index: int
    label: int
    sigma: float = float("nan")
    # both barriers inside one bar, equally far from its open; the only case
    # where label 0 has touch_index before vertical_index
    tie: bool = False


@dataclass(frozen=True)
class TripleBarrierReport:
    events: list
    skipped_zero_vol: int
    ties: int

    def distribution(self) -> dict:
        return label_distribution(self.events)


def ema_volatility(series: BarSeries, span: int = 20) -> VolatilityEstimate:
    """Exponentially weighted zero-mean standard deviation of log returns.

    sigma_t^2 = a * r_t^2 + (1 - a) * sigma_{t-1}^2 with a = 2 / (span + 1),
    seeded with the first squared return. Values before index ``span`` are
    left undefined.
    """
    if span < 1:
        raise ValueError("span must be positive")
    if len(series) <= span:
        raise SeriesTooShort(f"need more than {span} bars for span {span}")
    returns = pd.Series(np.log(series.close)).diff()
    variance = (returns**2).ewm(span=span, adjust=False).mean()
    values = np.sqrt(variance.to_numpy())
    values[:span] = np.nan
    values.setflags(write=False)
    return VolatilityEstimate(span=span, values=values)


def first_touch(
    open_: np.ndarray,
    high: np.ndarray,
    low: np.ndarray,
    entry: int,
    upper: float,
    lower: float,
    h: int,
) -> tuple[int, int, bool]:
    """Scan bars entry+1..entry+h; return (touch_index, label, tie).

    A bar whose range covers both barriers resolves to the barrier nearer its
    open; equidistant gives label 0 at that bar.
    """
    stop = entry + h + 1
    up = high[entry + 1 : stop] >= upper
    dn = low[entry + 1 : stop] <= lower
    hit = up | dn
    if not hit.any():
        return entry + h, 0, False
    j = int(np.argmax(hit))
    touch = entry + 1 + j
    if up[j] and dn[j]:
        dist_up = abs(upper - open_[touch])
        dist_dn = abs(open_[touch] - lower)
        if dist_up < dist_dn:
            return touch, 1, False
        if dist_dn < dist_up:
            return touch, -1, False
        return touch, 0, True
    return touch, (1 if up[j] else -1), False


def triple_barrier_report(
    series: BarSeries, cfg: TripleBarrierConfig, vol: VolatilityEstimate | None = None
) -> TripleBarrierReport:
    if len(series) <= cfg.vol_span + cfg.h:
        raise SeriesTooShort(
            f"need more than {cfg.vol_span + cfg.h} bars, got {len(series)}"
        )
    vol = vol or ema_volatility(series, cfg.vol_span)
    close, open_, high, low = series.close, series.open, series.high, series.low

    events = []
    skipped = 0
    ties = 0
    ambiguous = 0
    for t in range(len(series) - cfg.h):
        sigma = vol.values[t]
        if not np.isfinite(sigma):
            continue
        if sigma == 0.0:
            logger.debug(f"{DegenerateBarrier(t)}; skipped")
            skipped += 1
            continue
        upper = close[t] * (1.0 + sigma * cfg.upfactor)
        lower = close[t] * (1.0 + sigma * cfg.lowerfactor)
        touch, label, tie = first_touch(open_, high, low, t, upper, lower, cfg.h)
        if high[touch] >= upper and low[touch] <= lower:
            ambiguous += 1
        ties += tie
        events.append(
            LabelEvent(
                entry_index=t,
                upper_barrier=float(upper),
                lower_barrier=float(lower),
                vertical_index=t + cfg.h,
                touch_index=touch,
                label=label,
                sigma=float(sigma),
                tie=tie,
            )
        )

    if skipped:
        logger.warning(f"Skipped {skipped} entries with zero volatility")
    if ambiguous:
        logger.warning(
            f"{ambiguous} events crossed both barriers inside one bar "
            f"({ties} equidistant, labelled 0)"
        )
    dist = label_distribution(events)
    logger.info(
        f"Triple-barrier labels: {len(events)} events, "
        f"-1={dist[-1]} 0={dist[0]} +1={dist[1]}"
    )
    return TripleBarrierReport(events=events, skipped_zero_vol=skipped, ties=ties)


def triple_barrier_labels(
    series: BarSeries, cfg: TripleBarrierConfig, vol: VolatilityEstimate | None = None
) -> list[LabelEvent]:
    return triple_barrier_report(series, cfg, vol).events


def fixed_horizon_labels(series: BarSeries, h: int, threshold: float) -> np.ndarray:
    """Sign of the h-bar return against a symmetric threshold, for t = 0..T-1-h."""
    if h < 1:
        raise ValueError("h must be at least 1")
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    if len(series) <= h:
        raise SeriesTooShort(f"need more than {h} bars, got {len(series)}")
    close = series.close
    r = close[h:] / close[:-h] - 1.0
    labels = np.zeros(len(r), dtype=np.int64)
    labels[r > threshold] = 1
    labels[r < -threshold] = -1
    return labels


def fixed_horizon_events(
    series: BarSeries, h: int, threshold: float
) -> list[LabelEvent]:
    """Fixed-horizon labels as events so they flow through the same dataset path."""
    labels = fixed_horizon_labels(series, h, threshold)
    close = series.close
    events = [
        LabelEvent(
            entry_index=t,
            upper_barrier=float(close[t] * (1 + threshold)),
            lower_barrier=float(close[t] * (1 - threshold)),
            vertical_index=t + h,
            touch_index=t + h,
            label=int(label),
        )
        for t, label in enumerate(labels)
    ]
    dist = label_distribution(events)
    logger.info(
        f"Fixed-horizon labels: {len(events)} events, "
        f"-1={dist[-1]} 0={dist[0]} +1={dist[1]}"
    )
    return events


def label_distribution(events) -> dict:
    counts = Counter(e.label if isinstance(e, LabelEvent) else int(e) for e in events)
    return {-1: counts.get(-1, 0), 0: counts.get(0, 0), 1: counts.get(1, 0)}


def events_to_frame(events: list[LabelEvent], timestamps: np.ndarray) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "entry_index": [e.entry_index for e in events],
            "entry_timestamp": [int(timestamps[e.entry_index]) for e in events],
            "label": [e.label for e in events],
            "touch_index": [e.touch_index for e in events],
            "touch_timestamp": [int(timestamps[e.touch_index]) for e in events],
            "upper": [e.upper_barrier for e in events],
            "lower": [e.lower_barrier for e in events],
            "sigma": [e.sigma for e in events],
            "tie": [int(e.tie) for e in events],
        },
        columns=[
            "entry_index",
            "entry_timestamp",
            "label",
            "touch_index",
            "touch_timestamp",
            "upper",
            "lower",
            "sigma",
            "tie",
        ],
    )


def events_from_frame(frame: pd.DataFrame, h: int) -> list[LabelEvent]:
    return [
        LabelEvent(
            entry_index=int(row.entry_index),
            upper_barrier=float(row.upper),
            lower_barrier=float(row.lower),
            vertical_index=int(row.entry_index) + h,
            touch_index=int(row.touch_index),
            label=int(row.label),
            sigma=float(row.sigma),
            tie=bool(row.tie),
        )
        for row in frame.itertuples(index=False)
    ]
