import numpy as np
import pandas as pd
import pytest
from scipy.spatial.distance import pdist

from ffdlab.errors import AlignmentMismatch, RankDeficient, SeriesTooShort
from ffdlab.modules import features
from ffdlab.modules.features import (
    INDICATORS,
    INDICATOR_SETS,
    FeatureMatrix,
    assemble_dataset,
    compute_indicators,
    dataset_frame,
    dataset_metadata,
    load_dataset,
    normalize,
    pca_fit_transform,
    register_indicator,
    save_dataset,
)
from ffdlab.modules.fracdiff import fracdiff_prices
from ffdlab.modules.labeling import TripleBarrierConfig, triple_barrier_labels


@pytest.fixture(scope="module")
def feature_matrix(gbm_bars):
    ffd = fracdiff_prices(gbm_bars.close, 0.4, tau=1e-3)
    return compute_indicators(gbm_bars, ffd)


@pytest.fixture(scope="module")
def dataset(gbm_bars, feature_matrix):
    events = triple_barrier_labels(gbm_bars, TripleBarrierConfig())
    return assemble_dataset(feature_matrix, events, split_fraction=0.8, n_components=16)


class TestIndicators:
    def test_columns_and_warm_up(self, feature_matrix, gbm_bars):
        assert len(feature_matrix.column_names) == 22
        assert feature_matrix.column_names[:16] == INDICATOR_SETS["default16"]
        assert feature_matrix.column_names[-1] == "ffd_close"
        assert np.all(np.isfinite(feature_matrix.values))
        assert np.all(np.diff(feature_matrix.index) > 0)
        assert feature_matrix.index[0] >= 33
        assert feature_matrix.index[-1] == len(gbm_bars) - 1

    def test_indicators_are_causal(self, gbm_bars, feature_matrix):
        prefix = gbm_bars.slice(0, 1500)
        short = compute_indicators(prefix, fracdiff_prices(prefix.close, 0.4, tau=1e-3))
        rows = np.searchsorted(feature_matrix.index, short.index)
        np.testing.assert_array_equal(feature_matrix.index[rows], short.index)
        np.testing.assert_allclose(feature_matrix.values[rows], short.values, rtol=1e-9)

    def test_bounded_oscillators(self, feature_matrix):
        frame = feature_matrix.to_frame()
        assert frame["rsi_14"].between(0, 100).all()
        assert frame["stoch_k_14"].between(0, 100).all()
        assert frame["willr_14"].between(-100, 0).all()
        assert (frame["bb_upper_20"] >= frame["bb_lower_20"]).all()

    def test_moving_average_matches_rolling_mean(self, gbm_bars, feature_matrix):
        frame = feature_matrix.to_frame()
        expected = gbm_bars.to_frame()["close"].rolling(10).mean().to_numpy()
        np.testing.assert_allclose(frame["sma_10"], expected[feature_matrix.index])

    def test_too_short(self, gbm_bars):
        prefix = gbm_bars.slice(0, 30)
        with pytest.raises(SeriesTooShort):
            compute_indicators(prefix, fracdiff_prices(prefix.close, 1.0))

    def test_register_indicator(self, gbm_bars, monkeypatch):
        monkeypatch.setattr(features, "INDICATORS", dict(features.INDICATORS))
        monkeypatch.setattr(
            features,
            "INDICATOR_SETS",
            {k: list(v) for k, v in features.INDICATOR_SETS.items()},
        )
        register_indicator("range_1", lambda f: f["high"] - f["low"])
        matrix = compute_indicators(
            gbm_bars, fracdiff_prices(gbm_bars.close, 0.4, tau=1e-3), "custom"
        )
        assert "range_1" in matrix.column_names
        with pytest.raises(ValueError):
            register_indicator("close", lambda f: f["close"])

    def test_constant_price_oscillators(self):
        flat = pd.DataFrame(
            {c: np.full(60, 25.0) for c in ["open", "high", "low", "close"]}
        )
        flat["volume"] = 1.0
        rsi = INDICATORS["rsi_14"](flat).dropna()
        assert len(rsi) >= 45
        assert (rsi == 50.0).all()
        upper = INDICATORS["bb_upper_20"](flat)[19:]
        lower = INDICATORS["bb_lower_20"](flat)[19:]
        middle = INDICATORS["bb_middle_20"](flat)[19:]
        np.testing.assert_allclose(upper, middle, atol=1e-9)
        np.testing.assert_allclose(lower, middle, atol=1e-9)
        np.testing.assert_allclose(middle, 25.0)

    def test_macd_is_difference_of_two_emas(self, gbm_bars):
        close = gbm_bars.close

        def ema(x, span):
            a = 2.0 / (span + 1)
            out = np.empty_like(x)
            out[0] = x[0]
            for t in range(1, len(x)):
                out[t] = a * x[t] + (1 - a) * out[t - 1]
            out[: span - 1] = np.nan
            return out

        macd = INDICATORS["macd"](gbm_bars.to_frame()).to_numpy()
        expected = ema(close, 12) - ema(close, 26)
        np.testing.assert_allclose(macd[25:], expected[25:], rtol=1e-9, atol=1e-12)
        assert np.all(np.isnan(macd[:25]))


class TestNormalize:
    def test_fit_rows_are_standardized(self, feature_matrix):
        fit = np.arange(1000)
        z, params = normalize(feature_matrix, fit)
        np.testing.assert_allclose(z.values[fit].mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(z.values[fit].std(axis=0), 1.0, rtol=1e-9)
        assert params.columns == feature_matrix.column_names

    def test_constant_column_dropped(self):
        columns = [np.arange(10.0), np.full(10, 4.0), np.arange(10.0) ** 2]
        values = np.column_stack(columns)
        matrix = FeatureMatrix(
            index=np.arange(10), column_names=["a", "b", "c"], values=values
        )
        z, params = normalize(matrix, slice(0, 8))
        assert params.dropped == ["b"]
        assert z.column_names == ["a", "c"]

    def test_params_round_trip(self, feature_matrix):
        _, params = normalize(feature_matrix, np.arange(500))
        again = type(params).from_dict(params.to_dict())
        np.testing.assert_array_equal(again.mean, params.mean)
        assert again.columns == params.columns


class TestPca:
    def test_orthonormal_and_ordered(self, feature_matrix):
        z, _ = normalize(feature_matrix, np.arange(2000))
        scores, params = pca_fit_transform(z, np.arange(2000), 5)
        c = params.components
        np.testing.assert_allclose(c.T @ c, np.eye(5), atol=1e-10)
        assert np.all(np.diff(params.eigenvalues) <= 1e-12)
        assert params.full_variance_ratio.sum() == pytest.approx(1.0)
        assert scores.column_names == ["pc1", "pc2", "pc3", "pc4", "pc5"]
        cov = np.cov(scores.values[:2000], rowvar=False)
        np.testing.assert_allclose(cov, np.diag(params.eigenvalues[:5]), atol=1e-8)

    def test_largest_loading_positive(self, feature_matrix):
        z, _ = normalize(feature_matrix, np.arange(2000))
        _, params = pca_fit_transform(z, np.arange(2000), 5)
        c = params.components
        pivots = np.argmax(np.abs(c), axis=0)
        assert np.all(c[pivots, np.arange(5)] > 0)

    def test_fit_ignores_other_rows(self, feature_matrix):
        fit = np.arange(1500)
        _, first = pca_fit_transform(feature_matrix, fit, 3)
        values = feature_matrix.values.copy()
        values[1500:] *= 7.0
        changed = FeatureMatrix(
            feature_matrix.index, feature_matrix.column_names, values
        )
        _, second = pca_fit_transform(changed, fit, 3)
        np.testing.assert_array_equal(first.components, second.components)

    def test_rank_deficient(self, rng):
        base = rng.standard_normal((50, 2))
        values = np.column_stack([base, base.sum(axis=1)])
        matrix = FeatureMatrix(np.arange(50), ["a", "b", "c"], values)
        with pytest.raises(RankDeficient):
            pca_fit_transform(matrix, slice(None), 3)

    def test_component_count_bounds(self, feature_matrix):
        with pytest.raises(ValueError):
            pca_fit_transform(feature_matrix, np.arange(100), 0)

    def test_collinear_columns_put_all_variance_first(self, rng):
        x = rng.standard_normal(80)
        matrix = FeatureMatrix(np.arange(80), ["x", "y"], np.column_stack([x, x]))
        _, params = pca_fit_transform(matrix, slice(None), 1)
        np.testing.assert_allclose(params.full_variance_ratio, [1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(params.explained_variance_ratio, [1.0])

    def test_full_rank_projection_keeps_distances(self, rng):
        values = rng.standard_normal((60, 4)) * [1.0, 3.0, 0.5, 2.0]
        matrix = FeatureMatrix(np.arange(60), ["a", "b", "c", "d"], values)
        scores, _ = pca_fit_transform(matrix, slice(None), 4)
        np.testing.assert_allclose(pdist(scores.values), pdist(values), rtol=1e-9)


class TestDataset:
    def test_labels_and_split(self, dataset):
        assert set(np.unique(dataset.labels)) <= {0, 1, 2}
        n = len(dataset.labels)
        assert dataset.split_index == int(np.floor(0.8 * n))
        train = np.arange(dataset.split_index)
        np.testing.assert_array_equal(dataset.train_rows, train)
        assert dataset.X_train.shape[1] == dataset.X_test.shape[1] <= 16
        first_test = dataset.entry_index[dataset.test_rows][0]
        assert np.all(dataset.entry_index[dataset.train_rows] < first_test)

    def test_train_scores_centered(self, dataset):
        np.testing.assert_allclose(dataset.X_train.mean(axis=0), 0.0, atol=1e-8)

    def test_random_split_reproducible(self, gbm_bars, feature_matrix):
        events = triple_barrier_labels(gbm_bars, TripleBarrierConfig())
        kwargs = {"n_components": 8, "split": "random", "seed": 3}
        a = assemble_dataset(feature_matrix, events, **kwargs)
        b = assemble_dataset(feature_matrix, events, **kwargs)
        np.testing.assert_array_equal(a.train_rows, b.train_rows)
        assert not np.array_equal(a.train_rows, np.arange(a.split_index))

    def test_event_order_does_not_matter(self, gbm_bars, feature_matrix, rng):
        events = triple_barrier_labels(gbm_bars, TripleBarrierConfig())
        shuffled = [events[i] for i in rng.permutation(len(events))]
        a = assemble_dataset(feature_matrix, events, n_components=8)
        b = assemble_dataset(feature_matrix, shuffled, n_components=8)
        pd.testing.assert_frame_equal(dataset_frame(a), dataset_frame(b))
        assert dataset_metadata(a) == dataset_metadata(b)

    def test_no_shared_entries(self, gbm_bars, feature_matrix):
        cfg = TripleBarrierConfig(vol_span=5)
        events = triple_barrier_labels(gbm_bars.slice(0, 100), cfg)
        early = [e for e in events if e.entry_index < 20]
        with pytest.raises(AlignmentMismatch):
            assemble_dataset(feature_matrix, early)

    def test_save_and_load(self, dataset, tmp_path):
        path = str(tmp_path / "dataset.csv")
        sidecar = save_dataset(dataset, path, extra={"d": 0.4})
        assert sidecar.endswith("dataset.json")
        loaded = load_dataset(path)
        np.testing.assert_array_equal(loaded.labels, dataset.labels)
        np.testing.assert_array_equal(loaded.train_rows, dataset.train_rows)
        np.testing.assert_allclose(
            loaded.X_test, dataset.X_test, rtol=1e-10, atol=1e-10
        )
        assert loaded.split_index == dataset.split_index
