import numpy as np
import pandas as pd
import pytest

from ffdlab.errors import NonConvergence, SeriesTooShort
from ffdlab.modules.fracdiff import (
    expanding_fracdiff_oracle,
    export_weights,
    ffd_transform,
    fracdiff_prices,
    generate_weights,
    memory_correlation,
)


class TestWeights:
    def test_first_difference(self):
        w = generate_weights(1.0, tau=1e-5)
        np.testing.assert_array_equal(w.weights, [1.0, -1.0])
        assert w.cutoff == 1

    def test_second_difference(self):
        np.testing.assert_array_equal(generate_weights(2.0).weights, [1.0, -2.0, 1.0])

    def test_zero_order_is_identity_kernel(self):
        np.testing.assert_array_equal(generate_weights(0.0).weights, [1.0])

    def test_half_order_recursion(self):
        w = generate_weights(0.5, tau=0.05).weights
        np.testing.assert_allclose(w, [1.0, -0.5, -0.125, -0.0625])

    def test_tail_below_tau(self):
        w = generate_weights(0.4, tau=1e-4)
        assert np.all(np.abs(w.weights) >= 1e-4)
        nxt = -w.weights[-1] * (0.4 - len(w) + 1) / len(w)
        assert abs(nxt) < 1e-4

    def test_non_convergence(self):
        with pytest.raises(NonConvergence):
            generate_weights(0.5, tau=1e-12, max_len=100)

    def test_capped_when_not_strict(self):
        w = generate_weights(0.5, tau=1e-12, max_len=100, strict=False)
        assert w.capped
        assert len(w) == 100

    @pytest.mark.parametrize("kwargs", [{"tau": 0.0}, {"max_len": 0}, {"d": -0.1}])
    def test_invalid_arguments(self, kwargs):
        args = {"d": 0.5, **kwargs}
        with pytest.raises(ValueError):
            generate_weights(**args)

    def test_weights_are_read_only(self):
        w = generate_weights(0.3)
        with pytest.raises(ValueError):
            w.weights[0] = 2.0


class TestTransform:
    def test_first_difference_matches_diff(self, random_walk):
        out = ffd_transform(random_walk, generate_weights(1.0))
        assert out.start_index == 1
        np.testing.assert_allclose(out.values, np.diff(random_walk))

    def test_zero_order_returns_input(self, random_walk):
        out = ffd_transform(random_walk, generate_weights(0.0))
        np.testing.assert_array_equal(out.values, random_walk)

    def test_matches_expanding_sum_per_window(self, random_walk):
        w = generate_weights(0.35, tau=1e-3)
        out = ffd_transform(random_walk, w)
        for t in range(w.cutoff, w.cutoff + 50):
            window = random_walk[t - w.cutoff : t + 1]
            expected = expanding_fracdiff_oracle(window, 0.35)[-1]
            got = out.values[t - w.cutoff]
            assert got == pytest.approx(expected, rel=1e-10, abs=1e-10)

    def test_truncation_error_bounded_by_dropped_weights(self, random_walk):
        x = random_walk[:400]
        d = 0.4
        w = generate_weights(d, tau=1e-3)
        out = ffd_transform(x, w)
        full = expanding_fracdiff_oracle(x, d)
        weights_all = np.empty(len(x))
        weights_all[0] = 1.0
        for k in range(1, len(x)):
            weights_all[k] = -weights_all[k - 1] * (d - k + 1) / k
        dropped = np.cumsum(np.abs(weights_all))
        scale = np.max(np.abs(x))
        for t in range(w.cutoff, len(x)):
            bound = (dropped[t] - dropped[w.cutoff]) * scale
            assert abs(full[t] - out.values[t - w.cutoff]) <= bound + 1e-9

    def test_too_short(self):
        w = generate_weights(0.5, tau=1e-2)
        with pytest.raises(SeriesTooShort):
            ffd_transform(np.ones(w.cutoff), w)

    def test_output_length(self, random_walk):
        w = generate_weights(0.5, tau=1e-3)
        out = ffd_transform(random_walk, w)
        assert len(out.values) == len(random_walk) - w.cutoff
        assert out.source_length == len(random_walk)


class TestPrices:
    def test_log_prices(self, random_walk):
        prices = np.exp(random_walk / 50.0)
        out = fracdiff_prices(prices, 1.0, log=True)
        assert out.log_prices
        np.testing.assert_allclose(out.values, np.diff(random_walk / 50.0), atol=1e-12)

    def test_non_positive_price_rejected(self):
        with pytest.raises(ValueError):
            fracdiff_prices([1.0, 2.0, 0.0, 3.0], 0.5)

    def test_raw_prices_allow_non_positive(self):
        out = fracdiff_prices([1.0, -2.0, 0.0, 3.0], 1.0, log=False)
        np.testing.assert_allclose(out.values, [-3.0, 2.0, 3.0])


class TestMemoryCorrelation:
    def test_identity(self, random_walk):
        out = ffd_transform(random_walk, generate_weights(0.0))
        assert memory_correlation(random_walk, out) == 1.0

    def test_decreases_with_order(self, random_walk):
        low = fracdiff_prices(random_walk, 0.2, tau=1e-3, log=False)
        high = fracdiff_prices(random_walk, 0.8, tau=1e-3, log=False)
        corr = memory_correlation
        assert corr(random_walk, low) > corr(random_walk, high)


def test_export_weights(tmp_path):
    w = generate_weights(0.5, tau=1e-3)
    path = tmp_path / "weights.csv"
    export_weights(w, str(path))
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["k", "weight"]
    np.testing.assert_allclose(frame["weight"].to_numpy(), w.weights, rtol=1e-15)
