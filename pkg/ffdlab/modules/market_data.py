"""OHLCV bar ingest, validation and wall-clock resampling."""

import os
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
import pandas as pd
from loguru import logger

from ffdlab.errors import (
    IncompatiblePeriod,
    MissingColumn,
    NonMonotonicTimestamp,
    OHLCViolation,
    UnparseableRow,
)

MINUTE_MS = 60_000
DAY_MS = 86_400_000

PRICE_FIELDS = ("open", "high", "low", "close")


@dataclass(frozen=True)
class Bar:
    timestamp: int
    open: float
    high: float
    low: float
    close: float
    volume: float

    def __post_init__(self):
        if self.low > min(self.open, self.close) or self.high < max(
            self.open, self.close
        ):
            raise OHLCViolation(0, "low/high do not bracket open/close")
        if self.volume < 0:
            raise OHLCViolation(0, "negative volume")


@dataclass(frozen=True)
class ColumnSchema:
    """Maps bar fields to CSV header names."""

    timestamp: str = "timestamp"
    open: str = "open"
    high: str = "high"
    low: str = "low"
    close: str = "close"
    volume: str = "volume"

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ColumnSchema":
        unknown = set(mapping) - set(cls.__dataclass_fields__)
        if unknown:
            raise MissingColumn(", ".join(sorted(unknown)))
        return cls(**mapping)

    @classmethod
    def parse(cls, text: str | None) -> "ColumnSchema":
        # "timestamp=datetime,volume=vol"
        if not text:
            return cls()
        pairs = [item.split("=", 1) for item in text.split(",") if item.strip()]
        return cls.from_mapping({k.strip(): v.strip() for k, v in pairs})


def _readonly(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class BarSeries:
    """Immutable, time-ordered bars of one instrument at a fixed period.

    Columns are stored as read-only numpy arrays; ``bars`` materialises the
    records on demand.
    """

    symbol: str
    period_minutes: int
    timestamp: np.ndarray
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.period_minutes <= 0:
            raise IncompatiblePeriod("period_minutes must be positive")
        object.__setattr__(self, "timestamp", _readonly(self.timestamp, np.int64))
        for name in (*PRICE_FIELDS, "volume"):
            object.__setattr__(self, name, _readonly(getattr(self, name), np.float64))
        lengths = {
            len(getattr(self, n)) for n in ("timestamp", *PRICE_FIELDS, "volume")
        }
        if len(lengths) != 1:
            raise ValueError("bar columns must have equal length")

        if len(self.timestamp) > 1:
            gaps = np.diff(self.timestamp)
            bad = np.flatnonzero(gaps <= 0)
            if bad.size:
                i = int(bad[0]) + 1
                raise NonMonotonicTimestamp(i + 1, int(self.timestamp[i]))
            if np.any(gaps < self.period_minutes * MINUTE_MS):
                raise IncompatiblePeriod(
                    f"bars overlap: spacing below {self.period_minutes} minutes"
                )

        lo_body = np.minimum(self.open, self.close)
        hi_body = np.maximum(self.open, self.close)
        bad = np.flatnonzero(
            (self.low > lo_body) | (self.high < hi_body) | (self.volume < 0)
        )
        if bad.size:
            raise OHLCViolation(int(bad[0]) + 1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BarSeries):
            return NotImplemented
        return (
            self.symbol == other.symbol
            and self.period_minutes == other.period_minutes
            and all(
                np.array_equal(getattr(self, n), getattr(other, n))
                for n in ("timestamp", *PRICE_FIELDS, "volume")
            )
        )

    def __len__(self) -> int:
        return len(self.timestamp)

    def __iter__(self) -> Iterator[Bar]:
        return iter(self.bars)

    @property
    def bars(self) -> list[Bar]:
        return [
            Bar(int(t), float(o), float(h), float(lo), float(c), float(v))
            for t, o, h, lo, c, v in zip(
                self.timestamp, self.open, self.high, self.low, self.close, self.volume
            )
        ]

    def slice(self, start: int, stop: int | None = None) -> "BarSeries":
        sl = slice(start, stop)
        return BarSeries(
            symbol=self.symbol,
            period_minutes=self.period_minutes,
            timestamp=self.timestamp[sl],
            open=self.open[sl],
            high=self.high[sl],
            low=self.low[sl],
            close=self.close[sl],
            volume=self.volume[sl],
            meta=dict(self.meta),
        )

    def scaled(self, factor: float) -> "BarSeries":
        """Return a copy with every price multiplied by ``factor``."""
        return BarSeries(
            symbol=self.symbol,
            period_minutes=self.period_minutes,
            timestamp=self.timestamp,
            open=self.open * factor,
            high=self.high * factor,
            low=self.low * factor,
            close=self.close * factor,
            volume=self.volume,
            meta=dict(self.meta),
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "timestamp": self.timestamp,
                "open": self.open,
                "high": self.high,
                "low": self.low,
                "close": self.close,
                "volume": self.volume,
            }
        )

    @classmethod
    def from_frame(
        cls, frame: pd.DataFrame, symbol: str, period_minutes: int
    ) -> "BarSeries":
        return cls(
            symbol=symbol,
            period_minutes=period_minutes,
            timestamp=frame["timestamp"].to_numpy(),
            open=frame["open"].to_numpy(),
            high=frame["high"].to_numpy(),
            low=frame["low"].to_numpy(),
            close=frame["close"].to_numpy(),
            volume=frame["volume"].to_numpy(),
        )


def _parse_timestamps(raw: pd.Series) -> pd.Series:
    text = raw.astype(str).str.strip()
    numeric = pd.to_numeric(text, errors="coerce")
    if numeric.notna().all():
        return numeric.astype("int64")
    parsed = pd.to_datetime(text, utc=True, errors="coerce", format="ISO8601")
    # whole milliseconds since the epoch; NaT becomes NaN
    return (parsed - pd.Timestamp(0, tz="UTC")) // pd.Timedelta(milliseconds=1)


def _infer_period(timestamps: np.ndarray) -> int:
    if len(timestamps) < 2:
        return 1
    step = int(np.diff(np.sort(timestamps)).min())
    if step <= 0 or step % MINUTE_MS:
        raise IncompatiblePeriod(
            f"cannot infer a whole-minute period from spacing {step} ms"
        )
    return step // MINUTE_MS


def load_csv(
    path: str,
    schema: ColumnSchema | None = None,
    period_minutes: int | None = None,
    symbol: str | None = None,
) -> BarSeries:
    """Read and validate an OHLCV CSV file.

    Row numbers in errors count data rows from 1 (the header is not counted).
    Rows may appear in any order; they are sorted by timestamp and duplicate
    timestamps are rejected.
    """
    schema = schema or ColumnSchema()
    raw = pd.read_csv(path, dtype=str, comment="#", skipinitialspace=True)
    columns = {
        name: getattr(schema, name) for name in ("timestamp", *PRICE_FIELDS, "volume")
    }
    for header in columns.values():
        if header not in raw.columns:
            raise MissingColumn(header)

    frame = pd.DataFrame(index=raw.index)
    frame["timestamp"] = _parse_timestamps(raw[columns["timestamp"]])
    for name in (*PRICE_FIELDS, "volume"):
        frame[name] = pd.to_numeric(raw[columns[name]].str.strip(), errors="coerce")

    finite = np.isfinite(frame[[*PRICE_FIELDS, "volume"]]).all(axis=1)
    bad = frame.isna().any(axis=1) | ~finite
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise UnparseableRow(row + 1, "could not parse timestamp or price")

    frame["timestamp"] = frame["timestamp"].astype("int64")
    lo_body = frame[["open", "close"]].min(axis=1)
    hi_body = frame[["open", "close"]].max(axis=1)
    violated = (
        (frame["low"] > lo_body) | (frame["high"] < hi_body) | (frame["volume"] < 0)
    )
    if violated.any():
        row = int(np.flatnonzero(violated.to_numpy())[0])
        raise OHLCViolation(row + 1)

    dupes = frame["timestamp"].duplicated(keep="first")
    if dupes.any():
        row = int(np.flatnonzero(dupes.to_numpy())[0])
        raise NonMonotonicTimestamp(row + 1, int(frame["timestamp"].iloc[row]))

    frame = frame.sort_values("timestamp", kind="mergesort").reset_index(drop=True)
    if period_minutes is None:
        period_minutes = _infer_period(frame["timestamp"].to_numpy())
    if symbol is None:
        symbol = os.path.splitext(os.path.basename(path))[0]

    series = BarSeries.from_frame(frame, symbol=symbol, period_minutes=period_minutes)
    logger.info(
        f"Loaded {len(series)} bars of {symbol} at {period_minutes}m from {path}"
    )
    return series


def resample(series: BarSeries, target_minutes: int) -> BarSeries:
    """Aggregate bars into ``target_minutes`` windows aligned to midnight UTC.

    Windows are half-open ``[start, start + target)``; the output timestamp is
    the window start. Empty windows produce no bar. When the target does not
    divide a day the last window of each day is cut short at midnight.
    """
    if target_minutes <= 0 or target_minutes % series.period_minutes:
        raise IncompatiblePeriod(
            f"{target_minutes}m is not a positive multiple of {series.period_minutes}m"
        )
    if target_minutes == series.period_minutes:
        return series
    if len(series) == 0:
        return BarSeries.from_frame(
            series.to_frame(), symbol=series.symbol, period_minutes=target_minutes
        )

    width = target_minutes * MINUTE_MS
    frame = series.to_frame()
    day = frame["timestamp"] // DAY_MS * DAY_MS
    frame["window"] = day + (frame["timestamp"] - day) // width * width
    grouped = frame.groupby("window", sort=True).agg(
        open=("open", "first"),
        high=("high", "max"),
        low=("low", "min"),
        close=("close", "last"),
        volume=("volume", "sum"),
    )
    grouped = grouped.reset_index().rename(columns={"window": "timestamp"})
    out = BarSeries.from_frame(
        grouped, symbol=series.symbol, period_minutes=target_minutes
    )
    logger.debug(
        f"Resampled {len(series)} bars at {series.period_minutes}m into "
        f"{len(out)} bars at {target_minutes}m"
    )
    return out


def write_csv(series: BarSeries, path: str) -> None:
    series.to_frame().to_csv(path, index=False)
