from dataclasses import replace

import numpy as np
import pytest

from conftest import make_bars
from ffdlab.errors import AlignmentMismatch, DegenerateCurve
from ffdlab.modules.backtest import (
    END_OF_DATA,
    SIGNAL_FLAT,
    STOP_LOSS,
    TAKE_PROFIT,
    TRADING_DAYS_PER_YEAR,
    CostModel,
    StrategyParams,
    backtest_objective,
    params_from_vector,
    performance_stats,
    run_backtest,
)
from ffdlab.modules.labeling import VolatilityEstimate
from ffdlab.modules.market_data import DAY_MS, BarSeries

# (open, high, low, close); four 10-minute bars per day over three days
BARS = [
    (100.0, 100.0, 100.0, 100.0),
    (100.0, 101.0, 99.0, 100.5),
    (101.0, 106.0, 99.5, 100.0),
    (100.0, 100.5, 99.0, 99.5),
    (99.5, 103.0, 94.0, 101.0),
    (101.0, 101.0, 100.0, 100.0),
    (100.0, 100.5, 99.5, 100.0),
    (100.0, 101.0, 99.0, 99.0),
    (99.0, 100.0, 98.5, 99.5),
    (99.5, 101.0, 99.0, 100.0),
    (100.0, 100.5, 99.5, 100.0),
    (100.0, 100.5, 99.5, 100.0),
]
LABELS = [2, 1, 0, 1, 1, 2, 1, 1, 1, 1, 1, 1]
PARAMS = StrategyParams(pa=5, pb=2, pc=5, pd=2, lot_size=1, contract_multiplier=10.0)
COSTS = CostModel(commission_rate=0.001, slippage=0.5, initial_capital=10_000.0)
EQUITY = [
    10000.0,
    9998.995,
    10037.95,
    10036.955,
    10005.93,
    10005.93,
    9999.925,
    9989.925,
    9994.925,
    9999.925,
    9999.925,
    9993.93,
]


def _series(bars=BARS):
    o, h, l, c = (np.array(col) for col in zip(*bars))
    ts = np.array([(i // 4) * DAY_MS + (i % 4) * 600_000 for i in range(len(bars))])
    return BarSeries(
        symbol="HAND",
        period_minutes=10,
        timestamp=ts,
        open=o,
        high=h,
        low=l,
        close=c,
        volume=np.ones(len(bars)),
    )


def _vol(n=len(BARS), sigma=0.01):
    return VolatilityEstimate(span=1, values=np.full(n, sigma))


@pytest.fixture(scope="module")
def report():
    return run_backtest(_series(), LABELS, _vol(), PARAMS, COSTS)


class TestHandComputed:
    def test_trades(self, report):
        got = [
            (
                t.direction,
                t.entry_index,
                t.exit_index,
                t.entry_price,
                t.exit_price,
                t.exit_reason,
            )
            for t in report.trades
        ]
        assert got == [
            ("long", 1, 2, 100.5, 104.5, TAKE_PROFIT),
            ("short", 3, 4, 99.5, 102.5, STOP_LOSS),
            ("long", 6, 11, 100.5, 99.5, END_OF_DATA),
        ]
        pnl = [t.pnl for t in report.trades]
        np.testing.assert_allclose(pnl, [37.95, -32.02, -12.0])

    def test_levels_frozen_at_decision_bar(self, report):
        first, second, _ = report.trades
        assert (first.take_profit, first.stop_loss) == pytest.approx((105.0, 98.0))
        assert (second.take_profit, second.stop_loss) == pytest.approx((95.0, 102.0))
        assert first.commission == pytest.approx(1.005 + 1.045)

    def test_equity_curve(self, report):
        np.testing.assert_allclose(report.equity_curve, EQUITY)
        assert report.equity_curve[-1] == pytest.approx(
            COSTS.initial_capital + sum(t.pnl for t in report.trades)
        )

    def test_statistics(self, report):
        assert report.total_return == pytest.approx(-0.000607)
        expected = -0.000607 * TRADING_DAYS_PER_YEAR / 3
        assert report.annualized_return == pytest.approx(expected)
        assert report.max_drawdown == pytest.approx(9989.925 / 10037.95 - 1)
        assert report.trading_days == 3
        assert (report.profitable_days, report.losing_days) == (2, 1)
        assert report.trades_per_day == pytest.approx(1.0)
        levels = np.array([10000.0, 10036.955, 9989.925, 9993.93])
        daily = np.diff(levels) / levels[:-1]
        expected = daily.mean() / daily.std(ddof=1) * np.sqrt(TRADING_DAYS_PER_YEAR)
        assert report.sharpe == pytest.approx(expected)

    def test_frames(self, report):
        ledger = report.ledger_frame()
        assert len(ledger) == 3
        assert list(ledger["exit_reason"]) == [TAKE_PROFIT, STOP_LOSS, END_OF_DATA]
        equity = report.equity_frame()
        assert list(equity.columns) == ["timestamp", "equity", "drawdown"]
        assert equity["drawdown"].max() == 0.0
        summary = report.summary()
        assert summary["n_trades"] == 3
        assert summary["final_equity"] == pytest.approx(9993.93)


class TestRules:
    def test_exit_on_flat(self):
        params = StrategyParams(
            pa=5, pb=2, pc=5, pd=2, contract_multiplier=10.0, exit_on_flat=True
        )
        out = run_backtest(_series(), LABELS, _vol(), params, COSTS)
        first = out.trades[0]
        assert (first.exit_index, first.exit_reason) == (2, SIGNAL_FLAT)
        assert first.exit_price == 100.5

    def test_no_entries_in_last_two_bars(self):
        labels = [1] * 10 + [2, 0]
        out = run_backtest(_series(), labels, _vol(), PARAMS, COSTS)
        assert out.trades == []
        np.testing.assert_array_equal(out.equity_curve, np.full(12, 10_000.0))
        assert out.sharpe is None

    def test_undefined_volatility_skips_entry(self):
        values = np.full(12, 0.01)
        values[0] = np.nan
        out = run_backtest(
            _series(), LABELS, VolatilityEstimate(span=1, values=values), PARAMS, COSTS
        )
        assert out.skipped_entries == 1
        assert out.trades[0].direction == "short"

    def test_zero_volatility_skips_entry(self):
        out = run_backtest(_series(), LABELS, _vol(sigma=0.0), PARAMS, COSTS)
        assert out.trades == []
        assert out.skipped_entries == 3

    def test_flat_labels_never_trade(self, gbm_bars):
        n = len(gbm_bars)
        out = run_backtest(gbm_bars, np.ones(n, dtype=int), _vol(n), PARAMS, COSTS)
        assert out.trades == []
        assert out.total_return == 0.0

    def test_misaligned_inputs(self):
        with pytest.raises(AlignmentMismatch):
            run_backtest(_series(), LABELS[:-1], _vol(), PARAMS, COSTS)

    def test_label_range(self):
        with pytest.raises(ValueError):
            run_backtest(_series(), [3] + LABELS[1:], _vol(), PARAMS, COSTS)

    @pytest.mark.parametrize(
        "kwargs", [{"pa": 0.0}, {"lot_size": 0}, {"contract_multiplier": -1.0}]
    )
    def test_invalid_params(self, kwargs):
        with pytest.raises(ValueError):
            StrategyParams(**kwargs)


class TestPerformanceStats:
    def test_single_day_has_no_sharpe(self):
        stats = performance_stats([100.0, 101.0, 102.0], [0, 1, 2])
        assert stats.sharpe is None
        assert stats.trading_days == 1
        assert stats.total_return == pytest.approx(0.02)
        assert stats.max_drawdown == 0.0

    def test_initial_capital_is_first_baseline(self):
        ts = [0, DAY_MS, 2 * DAY_MS]
        stats = performance_stats([105.0, 100.0, 110.0], ts, initial_capital=100.0)
        assert stats.profitable_days == 2
        assert stats.losing_days == 1
        assert stats.total_return == pytest.approx(0.1)

    def test_drawdown_counts_initial_value(self):
        stats = performance_stats([90.0, 95.0], [0, 1], initial_capital=100.0)
        assert stats.max_drawdown == pytest.approx(-0.1)

    def test_empty_curve(self):
        with pytest.raises(DegenerateCurve):
            performance_stats([], [])

    def test_misaligned_timestamps(self):
        with pytest.raises(AlignmentMismatch):
            performance_stats([1.0, 2.0], [0])


class TestObjective:
    def test_decode_floors_multipliers(self):
        params = params_from_vector([0.0, -1.0, 2.5, 3.0], PARAMS)
        assert params.multipliers == (1e-6, 1e-6, 2.5, 3.0)
        assert params.contract_multiplier == 10.0

    def test_objective_matches_report(self, report):
        sharpe = backtest_objective(_series(), LABELS, _vol(), COSTS)
        total = backtest_objective(
            _series(), LABELS, _vol(), COSTS, metric="total_return"
        )
        assert sharpe(PARAMS) == pytest.approx(report.sharpe)
        assert total(PARAMS) == pytest.approx(report.total_return)

    def test_undefined_sharpe_scores_zero(self):
        objective = backtest_objective(_series(), [1] * 12, _vol(), COSTS)
        assert objective(PARAMS) == 0.0

    def test_unknown_metric(self):
        with pytest.raises(ValueError):
            backtest_objective(_series(), LABELS, _vol(), COSTS, metric="sortino")


def test_make_bars_series_backtests(gbm_bars):
    series = make_bars(gbm_bars.close[:200], period_minutes=10)
    labels = np.tile([2, 1, 1, 0, 1, 1], 34)[:200]
    out = run_backtest(series, labels, _vol(200, 0.002), StrategyParams(), CostModel())
    assert len(out.trades) > 0
    for trade in out.trades:
        assert trade.entry_index < trade.exit_index


def _random_run(rng, n=240, **param_kwargs):
    close = 100.0 * np.exp(np.cumsum(rng.normal(0, 0.004, n)))
    open_ = np.concatenate(([close[0]], close[:-1])) * (1 + rng.normal(0, 5e-4, n))
    high = np.maximum(open_, close) * (1 + rng.exponential(0.002, n))
    low = np.minimum(open_, close) * (1 - rng.exponential(0.002, n))
    series = make_bars(close, open_=open_, high=high, low=low, period_minutes=10)
    labels = rng.choice(3, size=n, p=[0.2, 0.6, 0.2])
    params = StrategyParams(
        pa=float(rng.uniform(0.5, 4)),
        pb=float(rng.uniform(0.5, 4)),
        pc=float(rng.uniform(0.5, 4)),
        pd=float(rng.uniform(0.5, 4)),
        **param_kwargs,
    )
    return series, labels, _vol(n, 0.004), params


def _signed_moves(trades, units):
    return [
        (1 if t.direction == "long" else -1) * (t.exit_price - t.entry_price) * units
        for t in trades
    ]


class TestLedgerProperties:
    def test_accounting_identity(self, rng):
        for _ in range(100):
            series, labels, vol, params = _random_run(rng, contract_multiplier=10.0)
            out = run_backtest(series, labels, vol, params, COSTS)
            pnl = sum(t.pnl for t in out.trades)
            assert out.equity_curve[-1] == pytest.approx(
                COSTS.initial_capital + pnl, abs=1e-8
            )
            moves = _signed_moves(out.trades, 10.0)
            fees = sum(t.commission for t in out.trades)
            assert pnl == pytest.approx(sum(moves) - fees, abs=1e-8)

    def test_zero_cost_pnl_is_price_difference(self, rng):
        free = CostModel(commission_rate=0.0, slippage=0.0, initial_capital=1e5)
        for _ in range(20):
            series, labels, vol, params = _random_run(rng)
            out = run_backtest(series, labels, vol, params, free)
            moves = _signed_moves(out.trades, 1.0)
            np.testing.assert_allclose([t.pnl for t in out.trades], moves)
            for trade in out.trades:
                assert trade.entry_price == series.open[trade.entry_index]

    def test_lot_size_scales_pnl(self, rng):
        series, labels, vol, params = _random_run(rng)
        one = run_backtest(series, labels, vol, params, COSTS)
        three = run_backtest(series, labels, vol, replace(params, lot_size=3), COSTS)
        assert len(one.trades) > 0
        assert [t.exit_index for t in three.trades] == [
            t.exit_index for t in one.trades
        ]
        np.testing.assert_allclose(
            [t.pnl for t in three.trades], [3 * t.pnl for t in one.trades]
        )
        np.testing.assert_allclose(
            three.equity_curve - COSTS.initial_capital,
            3 * (one.equity_curve - COSTS.initial_capital),
            atol=1e-8,
        )

    def test_no_lookahead(self, rng):
        series, labels, vol, params = _random_run(rng, n=300)
        full = run_backtest(series, labels, vol, params, COSTS)
        m = 200
        head = make_bars(
            series.close[:m],
            open_=series.open[:m],
            high=series.high[:m],
            low=series.low[:m],
            period_minutes=10,
        )
        cut = run_backtest(head, labels[:m], _vol(m, 0.004), params, COSTS)
        np.testing.assert_array_equal(
            cut.equity_curve[: m - 1], full.equity_curve[: m - 1]
        )
        closed = [t for t in full.trades if t.exit_index < m - 1]
        assert [t for t in cut.trades if t.exit_index < m - 1] == closed


def test_stop_loss_wins_when_bar_spans_both_levels():
    # long decided at bar 0: take profit 105, stop loss 98
    bars = [
        (100.0, 100.0, 100.0, 100.0),
        (100.0, 100.5, 99.5, 100.0),
        (100.0, 106.0, 97.0, 100.0),
        (100.0, 100.0, 100.0, 100.0),
    ]
    free = CostModel(commission_rate=0.0, slippage=0.0, initial_capital=1e4)
    out = run_backtest(_series(bars), [2, 1, 1, 1], _vol(4), PARAMS, free)
    (trade,) = out.trades
    assert (trade.exit_index, trade.exit_reason) == (2, STOP_LOSS)
    assert trade.exit_price == pytest.approx(98.0)
