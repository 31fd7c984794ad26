"""Label-driven single-position backtest with volatility-scaled exits.

A label of 2 on bar t opens a long at bar t+1's open, 0 opens a short, 1
does nothing. Take-profit and stop-loss levels are frozen from the decision
bar's close and volatility. From the bar after entry, each bar checks the
stop-loss before the take-profit against its high/low; fills happen at the
barrier price moved against the position by the slippage.
"""

from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from loguru import logger

from ffdlab.errors import AlignmentMismatch, DegenerateCurve, NonPositiveVolatility
from ffdlab.modules.labeling import VolatilityEstimate
from ffdlab.modules.market_data import DAY_MS, BarSeries

TRADING_DAYS_PER_YEAR = 252

LONG, SHORT = "long", "short"
TAKE_PROFIT = "take_profit"
STOP_LOSS = "stop_loss"
SIGNAL_FLAT = "signal_flat"
END_OF_DATA = "end_of_data"


@dataclass(frozen=True)
class StrategyParams:
    pa: float = 5.0
    pb: float = 2.0
    pc: float = 5.0
    pd: float = 2.0
    lot_size: int = 1
    contract_multiplier: float = 1.0
    # close an open position when the label turns flat
    exit_on_flat: bool = False

    def __post_init__(self):
        if min(self.pa, self.pb, self.pc, self.pd) <= 0:
            raise ValueError("TP/SL multipliers must be positive")
        if self.lot_size < 1:
            raise ValueError("lot_size must be at least 1")
        if not self.contract_multiplier > 0:
            raise ValueError("contract_multiplier must be positive")

    @property
    def multipliers(self) -> tuple[float, float, float, float]:
        return (self.pa, self.pb, self.pc, self.pd)


@dataclass(frozen=True)
class CostModel:
    commission_rate: float = 0.00005
    slippage: float = 1.0
    initial_capital: float = 200_000.0

    def __post_init__(self):
        if self.commission_rate < 0:
            raise ValueError("commission_rate must be non-negative")
        if self.slippage < 0:
            raise ValueError("slippage must be non-negative")
        if not self.initial_capital > 0:
            raise ValueError("initial_capital must be positive")


@dataclass(frozen=True)
class TradeRecord:
    direction: str
    entry_index: int
    exit_index: int
    entry_price: float
    exit_price: float
    exit_reason: str
    pnl: float
    take_profit: float = float("nan")
    stop_loss: float = float("nan")
    commission: float = 0.0


@dataclass(frozen=True)
class PerformanceStats:
    total_return: float
    annualized_return: float
    sharpe: float | None
    max_drawdown: float
    trading_days: int
    profitable_days: int
    losing_days: int
    trades_per_day: float


@dataclass(frozen=True)
class BacktestReport:
    trades: list
    equity_curve: np.ndarray
    timestamps: np.ndarray
    total_return: float
    annualized_return: float
    sharpe: float | None
    max_drawdown: float
    trading_days: int
    profitable_days: int
    losing_days: int
    trades_per_day: float
    skipped_entries: int = 0
    initial_capital: float = 200_000.0

    def summary(self) -> dict:
        return {
            "initial_capital": self.initial_capital,
            "final_equity": float(self.equity_curve[-1]),
            "n_trades": len(self.trades),
            "total_return": self.total_return,
            "annualized_return": self.annualized_return,
            "sharpe": self.sharpe,
            "max_drawdown": self.max_drawdown,
            "trading_days": self.trading_days,
            "profitable_days": self.profitable_days,
            "losing_days": self.losing_days,
            "trades_per_day": self.trades_per_day,
            "skipped_entries": self.skipped_entries,
        }

    def ledger_frame(self) -> pd.DataFrame:
        columns = [f.name for f in TradeRecord.__dataclass_fields__.values()]
        return pd.DataFrame([asdict(t) for t in self.trades], columns=columns)

    def equity_frame(self) -> pd.DataFrame:
        equity = self.equity_curve
        drawdown = equity / np.maximum.accumulate(equity) - 1.0
        return pd.DataFrame(
            {"timestamp": self.timestamps, "equity": equity, "drawdown": drawdown}
        )


@dataclass
class _Position:
    sign: int
    entry_index: int
    entry_price: float
    take_profit: float
    stop_loss: float
    commission: float = 0.0
    units: float = field(default=1.0)

    def unrealized(self, price: float) -> float:
        return self.sign * (price - self.entry_price) * self.units - self.commission


def _exit_levels(close: float, sigma: float, sign: int, params: StrategyParams):
    if sign > 0:
        return close * (1 + params.pa * sigma), close * (1 - params.pb * sigma)
    return close * (1 - params.pc * sigma), close * (1 + params.pd * sigma)


def run_backtest(
    series: BarSeries,
    labels,
    vol: VolatilityEstimate,
    params: StrategyParams,
    costs: CostModel,
) -> BacktestReport:
    labels = np.asarray(labels, dtype=np.int64)
    n = len(series)
    if len(labels) != n or len(vol.values) != n:
        raise AlignmentMismatch(
            f"{n} bars, {len(labels)} labels, {len(vol.values)} volatility values"
        )
    if n < 2:
        raise ValueError("backtest needs at least 2 bars")
    if labels.size and (labels.min() < 0 or labels.max() > 2):
        raise ValueError("labels must lie in {0, 1, 2}")

    open_, high, low, close = series.open, series.high, series.low, series.close
    units = params.lot_size * params.contract_multiplier
    slip = costs.slippage
    rate = costs.commission_rate

    trades: list[TradeRecord] = []
    equity = np.empty(n)
    realized = 0.0
    skipped = 0
    pos: _Position | None = None
    pending_entry = None
    pending_exit = False

    def close_position(t: int, price: float, reason: str):
        nonlocal pos, realized
        fee = rate * price * units
        pnl = pos.sign * (price - pos.entry_price) * units - pos.commission - fee
        realized += pnl
        trades.append(
            TradeRecord(
                direction=LONG if pos.sign > 0 else SHORT,
                entry_index=pos.entry_index,
                exit_index=t,
                entry_price=pos.entry_price,
                exit_price=price,
                exit_reason=reason,
                pnl=pnl,
                take_profit=pos.take_profit,
                stop_loss=pos.stop_loss,
                commission=pos.commission + fee,
            )
        )
        logger.debug(
            f"{trades[-1].direction} {pos.entry_index}->{t} {reason} pnl={pnl:.4f}"
        )
        pos = None

    for t in range(n):
        if pending_entry is not None:
            sign, tp, sl = pending_entry
            fill = open_[t] + sign * slip
            pos = _Position(sign, t, fill, tp, sl, rate * fill * units, units)
            pending_entry = None
        elif pending_exit:
            close_position(t, open_[t] - pos.sign * slip, SIGNAL_FLAT)
            pending_exit = False
        elif pos is not None and t > pos.entry_index:
            if pos.sign > 0:
                if low[t] <= pos.stop_loss:
                    close_position(t, pos.stop_loss - slip, STOP_LOSS)
                elif high[t] >= pos.take_profit:
                    close_position(t, pos.take_profit - slip, TAKE_PROFIT)
            else:
                if high[t] >= pos.stop_loss:
                    close_position(t, pos.stop_loss + slip, STOP_LOSS)
                elif low[t] <= pos.take_profit:
                    close_position(t, pos.take_profit + slip, TAKE_PROFIT)

        if pos is not None and t == n - 1:
            close_position(t, close[t] - pos.sign * slip, END_OF_DATA)

        equity[t] = costs.initial_capital + realized
        if pos is not None:
            equity[t] += pos.unrealized(close[t])

        label = labels[t]
        if pos is None and label != 1 and t < n - 2:
            sigma = vol.values[t]
            if not (np.isfinite(sigma) and sigma > 0):
                logger.debug(f"{NonPositiveVolatility(t)}; entry skipped")
                skipped += 1
                continue
            sign = 1 if label == 2 else -1
            tp, sl = _exit_levels(close[t], sigma, sign, params)
            pending_entry = (sign, tp, sl)
        elif pos is not None and params.exit_on_flat and label == 1 and t < n - 1:
            pending_exit = True

    if skipped:
        logger.warning(f"Skipped {skipped} entries with non-positive volatility")

    stats = performance_stats(equity, series.timestamp, trades, costs.initial_capital)
    logger.info(
        f"Backtest: {len(trades)} trades, total return {stats.total_return:.4%}, "
        f"max drawdown {stats.max_drawdown:.4%}"
    )
    equity.setflags(write=False)
    return BacktestReport(
        trades=trades,
        equity_curve=equity,
        timestamps=np.asarray(series.timestamp),
        skipped_entries=skipped,
        initial_capital=costs.initial_capital,
        **asdict(stats),
    )


def performance_stats(
    equity_curve,
    bar_timestamps,
    trades=(),
    initial_capital: float | None = None,
) -> PerformanceStats:
    """Summary statistics from a marked-to-close equity curve.

    Daily equity is the last mark of each UTC calendar day; the first day's
    change is measured from ``initial_capital`` (default: the first mark).
    Sharpe is ``None`` when fewer than two daily returns exist or they have
    zero variance.
    """
    equity = np.asarray(equity_curve, dtype=np.float64)
    timestamps = np.asarray(bar_timestamps, dtype=np.int64)
    if equity.size == 0:
        raise DegenerateCurve("equity curve is empty")
    if len(timestamps) != len(equity):
        raise AlignmentMismatch(
            f"{len(equity)} equity marks vs {len(timestamps)} timestamps"
        )
    initial = float(equity[0]) if initial_capital is None else float(initial_capital)

    daily = pd.Series(equity).groupby(timestamps // DAY_MS, sort=True).last().to_numpy()
    levels = np.concatenate(([initial], daily))
    changes = np.diff(levels)
    returns = changes / levels[:-1]
    trading_days = len(daily)

    total_return = float(equity[-1] / initial - 1.0)
    sharpe = None
    if len(returns) >= 2:
        std = float(np.std(returns, ddof=1))
        if std > 0:
            sharpe = float(np.mean(returns) / std * np.sqrt(TRADING_DAYS_PER_YEAR))
    if sharpe is None:
        logger.debug("Sharpe ratio undefined for this equity curve")

    running_max = np.maximum.accumulate(np.concatenate(([initial], equity)))
    drawdown = float(np.min(np.concatenate(([initial], equity)) / running_max - 1.0))

    return PerformanceStats(
        total_return=total_return,
        annualized_return=total_return * TRADING_DAYS_PER_YEAR / trading_days,
        sharpe=sharpe,
        max_drawdown=min(drawdown, 0.0),
        trading_days=trading_days,
        profitable_days=int(np.sum(changes > 0)),
        losing_days=int(np.sum(changes < 0)),
        trades_per_day=len(trades) / trading_days,
    )


def params_from_vector(vector, base: StrategyParams | None = None) -> StrategyParams:
    """Decode a GA candidate [pa, pb, pc, pd]; multipliers are floored at 1e-6."""
    base = base or StrategyParams()
    pa, pb, pc, pd = (max(float(v), 1e-6) for v in vector)
    return StrategyParams(
        pa=pa,
        pb=pb,
        pc=pc,
        pd=pd,
        lot_size=base.lot_size,
        contract_multiplier=base.contract_multiplier,
        exit_on_flat=base.exit_on_flat,
    )


def backtest_objective(
    series: BarSeries,
    labels,
    vol: VolatilityEstimate,
    costs: CostModel,
    metric: str = "sharpe",
):
    """Objective for the GA: Sharpe (0 when undefined) or total return."""
    if metric not in ("sharpe", "total_return"):
        raise ValueError(f"unknown objective '{metric}'")

    def objective(params: StrategyParams) -> float:
        report = run_backtest(series, labels, vol, params, costs)
        if metric == "total_return":
            return report.total_return
        return report.sharpe if report.sharpe is not None else 0.0

    return objective
