import numpy as np
import pytest

from ffdlab.modules.market_data import MINUTE_MS, BarSeries, write_csv
from ffdlab.services.synthetic import generate_synthetic


def make_bars(
    close,
    open_=None,
    high=None,
    low=None,
    period_minutes=1,
    start_ms=0,
    volume=None,
):
    """BarSeries from closes; missing columns default to a flat body at the close."""
    close = np.asarray(close, dtype=np.float64)
    open_ = close.copy() if open_ is None else np.asarray(open_, dtype=np.float64)
    high = np.maximum(open_, close) if high is None else np.asarray(high, np.float64)
    low = np.minimum(open_, close) if low is None else np.asarray(low, dtype=np.float64)
    volume = np.ones_like(close) if volume is None else np.asarray(volume, np.float64)
    steps = np.arange(len(close), dtype=np.int64) * period_minutes * MINUTE_MS
    timestamps = start_ms + steps
    return BarSeries(
        symbol="TEST",
        period_minutes=period_minutes,
        timestamp=timestamps,
        open=open_,
        high=high,
        low=low,
        close=close,
        volume=volume,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def random_walk():
    rng = np.random.default_rng(2000)
    return 100.0 + np.cumsum(rng.standard_normal(2000))


@pytest.fixture(scope="session")
def white_noise():
    rng = np.random.default_rng(2001)
    return rng.standard_normal(2000)


@pytest.fixture(scope="session")
def ar1_series():
    rng = np.random.default_rng(2002)
    x = np.zeros(2000)
    eps = rng.standard_normal(2000)
    for t in range(1, len(x)):
        x[t] = 0.5 * x[t - 1] + eps[t]
    return x


@pytest.fixture(scope="session")
def gbm_bars():
    params = {"sigma": 0.002, "period_minutes": 10}
    return generate_synthetic("gbm", 3000, seed=11, params=params)


@pytest.fixture
def csv_path(tmp_path, gbm_bars):
    path = tmp_path / "bars.csv"
    write_csv(gbm_bars, str(path))
    return str(path)

