"""Indicator features, train-only normalisation and PCA, dataset assembly."""

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import pandas as pd
from loguru import logger
from scipy import linalg

from ffdlab.errors import (
    AlignmentMismatch,
    ConstantColumn,
    RankDeficient,
    SeriesTooShort,
)
from ffdlab.modules.fracdiff import FracdiffSeries
from ffdlab.modules.labeling import LabelEvent
from ffdlab.modules.market_data import BarSeries

IndicatorFn = Callable[[pd.DataFrame], pd.Series]


@dataclass(frozen=True)
class FeatureMatrix:
    index: np.ndarray  # bar index of each row
    column_names: list
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (len(self.index), len(self.column_names)):
            raise ValueError("values shape does not match index and columns")

    def __len__(self) -> int:
        return len(self.index)

    def take(self, rows) -> "FeatureMatrix":
        return FeatureMatrix(
            index=self.index[rows],
            column_names=list(self.column_names),
            values=self.values[rows],
        )

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.values, columns=self.column_names)
        frame.insert(0, "bar_index", self.index)
        return frame


@dataclass(frozen=True)
class NormalizationParams:
    columns: list
    mean: np.ndarray
    std: np.ndarray
    dropped: list = field(default_factory=list)

    def apply(self, matrix: FeatureMatrix) -> FeatureMatrix:
        keep = [matrix.column_names.index(c) for c in self.columns]
        z = (matrix.values[:, keep] - self.mean) / self.std
        return FeatureMatrix(
            index=matrix.index, column_names=list(self.columns), values=z
        )

    def to_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "dropped": list(self.dropped),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NormalizationParams":
        return cls(
            columns=list(data["columns"]),
            mean=np.asarray(data["mean"], dtype=np.float64),
            std=np.asarray(data["std"], dtype=np.float64),
            dropped=list(data.get("dropped", [])),
        )


@dataclass(frozen=True)
class PcaParams:
    components: np.ndarray  # columns x n_components, orthonormal
    mean: np.ndarray
    explained_variance_ratio: np.ndarray
    eigenvalues: np.ndarray  # full spectrum, descending
    input_columns: list = field(default_factory=list)

    @property
    def full_variance_ratio(self) -> np.ndarray:
        total = self.eigenvalues.sum()
        if total <= 0:
            return np.zeros_like(self.eigenvalues)
        return self.eigenvalues / total

    def apply(self, matrix: FeatureMatrix) -> FeatureMatrix:
        scores = (matrix.values - self.mean) @ self.components
        names = [f"pc{i + 1}" for i in range(self.components.shape[1])]
        return FeatureMatrix(index=matrix.index, column_names=names, values=scores)

    def to_dict(self) -> dict:
        return {
            "components": self.components.tolist(),
            "mean": self.mean.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "input_columns": list(self.input_columns),
            "fit_on": "train",
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PcaParams":
        return cls(
            components=np.asarray(data["components"], dtype=np.float64),
            mean=np.asarray(data["mean"], dtype=np.float64),
            explained_variance_ratio=np.asarray(
                data["explained_variance_ratio"], dtype=np.float64
            ),
            eigenvalues=np.asarray(data["eigenvalues"], dtype=np.float64),
            input_columns=list(data.get("input_columns", [])),
        )


@dataclass(frozen=True)
class Dataset:
    features: FeatureMatrix
    labels: np.ndarray  # {0, 1, 2}
    split_index: int
    normalization_params: NormalizationParams
    pca_params: PcaParams
    train_rows: np.ndarray
    test_rows: np.ndarray
    split: str = "chronological"

    @property
    def entry_index(self) -> np.ndarray:
        return self.features.index

    @property
    def X_train(self) -> np.ndarray:
        return self.features.values[self.train_rows]

    @property
    def y_train(self) -> np.ndarray:
        return self.labels[self.train_rows]

    @property
    def X_test(self) -> np.ndarray:
        return self.features.values[self.test_rows]

    @property
    def y_test(self) -> np.ndarray:
        return self.labels[self.test_rows]


# indicator registry


def _ema(x: pd.Series, span: int) -> pd.Series:
    return x.ewm(span=span, adjust=False, min_periods=span).mean()


def _wilder(x: pd.Series, period: int) -> pd.Series:
    return x.ewm(alpha=1.0 / period, adjust=False, min_periods=period).mean()


def _macd(f: pd.DataFrame) -> pd.Series:
    return _ema(f["close"], 12) - _ema(f["close"], 26)


def _macd_signal(f: pd.DataFrame) -> pd.Series:
    return _macd(f).ewm(span=9, adjust=False, min_periods=9).mean()


def _rsi(f: pd.DataFrame, period: int = 14) -> pd.Series:
    delta = f["close"].diff()
    gain = _wilder(delta.clip(lower=0.0), period)
    loss = _wilder((-delta).clip(lower=0.0), period)
    total = gain + loss
    # zero-movement windows read 50
    rsi = 100.0 * gain / total.where(total > 0)
    return rsi.mask(total == 0, 50.0)


def _stoch_k(f: pd.DataFrame, period: int = 14) -> pd.Series:
    lowest = f["low"].rolling(period).min()
    highest = f["high"].rolling(period).max()
    span = highest - lowest
    k = 100.0 * (f["close"] - lowest) / span.where(span > 0)
    return k.mask(span == 0, 50.0)


def _bollinger(f: pd.DataFrame, k: float) -> pd.Series:
    middle = f["close"].rolling(20).mean()
    return middle + k * f["close"].rolling(20).std(ddof=0)


def _atr(f: pd.DataFrame, period: int = 14) -> pd.Series:
    prev = f["close"].shift(1)
    tr = pd.concat(
        [f["high"] - f["low"], (f["high"] - prev).abs(), (f["low"] - prev).abs()],
        axis=1,
    ).max(axis=1)
    return _wilder(tr, period)


def _obv(f: pd.DataFrame) -> pd.Series:
    direction = np.sign(f["close"].diff()).fillna(0.0)
    return (direction * f["volume"]).cumsum()


def _cci(f: pd.DataFrame, period: int = 20) -> pd.Series:
    tp = (f["high"] + f["low"] + f["close"]) / 3.0
    mean = tp.rolling(period).mean()
    mad = tp.rolling(period).apply(lambda w: np.abs(w - w.mean()).mean(), raw=True)
    cci = (tp - mean) / (0.015 * mad.where(mad > 0))
    return cci.mask(mad == 0, 0.0)


def _williams_r(f: pd.DataFrame, period: int = 14) -> pd.Series:
    highest = f["high"].rolling(period).max()
    lowest = f["low"].rolling(period).min()
    span = highest - lowest
    r = -100.0 * (highest - f["close"]) / span.where(span > 0)
    return r.mask(span == 0, -50.0)


INDICATORS: dict[str, IndicatorFn] = {
    "sma_10": lambda f: f["close"].rolling(10).mean(),
    "ema_10": lambda f: _ema(f["close"], 10),
    "macd": _macd,
    "macd_signal": _macd_signal,
    "macd_hist": lambda f: _macd(f) - _macd_signal(f),
    "rsi_14": _rsi,
    "stoch_k_14": _stoch_k,
    "stoch_d_3": lambda f: _stoch_k(f).rolling(3).mean(),
    "bb_upper_20": lambda f: _bollinger(f, 2.0),
    "bb_middle_20": lambda f: _bollinger(f, 0.0),
    "bb_lower_20": lambda f: _bollinger(f, -2.0),
    "atr_14": _atr,
    "roc_10": lambda f: 100.0 * (f["close"] / f["close"].shift(10) - 1.0),
    "obv": _obv,
    "cci_20": _cci,
    "willr_14": _williams_r,
}

INDICATOR_SETS: dict[str, list] = {"default16": list(INDICATORS)}
SPLIT_MODES = ("chronological", "random")

RAW_COLUMNS = ["open", "high", "low", "close", "volume"]


def register_indicator(name: str, fn: IndicatorFn, sets=("custom",)) -> None:
    """Add a causal indicator column; it joins the named indicator sets."""
    if name in INDICATORS or name in RAW_COLUMNS or name == "ffd_close":
        raise ValueError(f"indicator '{name}' already exists")
    INDICATORS[name] = fn
    for set_name in sets:
        INDICATOR_SETS.setdefault(set_name, list(INDICATOR_SETS["default16"]))
        INDICATOR_SETS[set_name].append(name)


def compute_indicators(
    series: BarSeries, ffd_close: FracdiffSeries, indicators="default16"
) -> FeatureMatrix:
    """Indicator columns plus raw OHLCV and the fracdiff close, warm-up rows dropped."""
    if isinstance(indicators, str):
        names = INDICATOR_SETS[indicators]
    else:
        names = list(indicators)
    if ffd_close.source_length != len(series):
        raise ValueError("fracdiff series was not computed on these bars")

    frame = series.to_frame()
    columns = {name: INDICATORS[name](frame) for name in names}
    for name in RAW_COLUMNS:
        columns[name] = frame[name]
    ffd = np.full(len(series), np.nan)
    ffd[ffd_close.start_index :] = ffd_close.values
    columns["ffd_close"] = pd.Series(ffd)

    table = pd.DataFrame(columns)
    finite = np.isfinite(table.to_numpy()).all(axis=1)
    if not finite.any():
        raise SeriesTooShort(
            f"{len(series)} bars do not cover the indicator and fracdiff warm-up"
        )
    rows = np.flatnonzero(finite)
    logger.info(
        f"Computed {table.shape[1]} feature columns; {len(rows)} rows after warm-up "
        f"(dropped {len(series) - len(rows)})"
    )
    return FeatureMatrix(
        index=rows.astype(np.int64),
        column_names=list(table.columns),
        values=table.to_numpy()[rows],
    )


def _rows(fit_rows, n: int) -> np.ndarray:
    if isinstance(fit_rows, slice):
        return np.arange(n)[fit_rows]
    return np.asarray(fit_rows, dtype=np.int64)


def normalize(
    matrix: FeatureMatrix, fit_rows
) -> tuple[FeatureMatrix, NormalizationParams]:
    """Z-score each column with the mean and population std of ``fit_rows``."""
    rows = _rows(fit_rows, len(matrix))
    if rows.size == 0:
        raise ValueError("fit_rows must not be empty")
    fit = matrix.values[rows]
    keep, dropped = [], []
    for j, name in enumerate(matrix.column_names):
        if np.ptp(fit[:, j]) == 0:
            logger.warning(f"{ConstantColumn(name)}; dropped from features")
            dropped.append(name)
        else:
            keep.append(j)
    params = NormalizationParams(
        columns=[matrix.column_names[j] for j in keep],
        mean=fit[:, keep].mean(axis=0),
        std=fit[:, keep].std(axis=0, ddof=0),
        dropped=dropped,
    )
    return params.apply(matrix), params


def pca_fit_transform(
    matrix: FeatureMatrix, fit_rows, n_components: int
) -> tuple[FeatureMatrix, PcaParams]:
    """Project onto the leading eigenvectors of the fit-rows covariance."""
    rows = _rows(fit_rows, len(matrix))
    fit = matrix.values[rows]
    n_rows, n_cols = fit.shape
    if n_components < 1 or n_components > min(n_rows - 1, n_cols):
        raise ValueError(
            f"n_components={n_components} outside [1, {min(n_rows - 1, n_cols)}]"
        )
    mean = fit.mean(axis=0)
    centered = fit - mean
    rank = np.linalg.matrix_rank(centered)
    if n_components > rank:
        raise RankDeficient(f"requested {n_components} components, rank is {rank}")

    cov = centered.T @ centered / (n_rows - 1)
    eigenvalues, vectors = linalg.eigh(cov)
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = np.clip(eigenvalues[order], 0.0, None)
    vectors = vectors[:, order]
    # sign: largest-magnitude loading of each component is positive
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(n_cols)])
    vectors = vectors * np.where(signs == 0, 1.0, signs)

    total = eigenvalues.sum()
    ratios = eigenvalues / total if total > 0 else np.zeros_like(eigenvalues)
    params = PcaParams(
        components=vectors[:, :n_components],
        mean=mean,
        explained_variance_ratio=ratios[:n_components],
        eigenvalues=eigenvalues,
        input_columns=list(matrix.column_names),
    )
    logger.debug(
        f"PCA kept {n_components}/{n_cols} components, "
        f"{ratios[:n_components].sum():.4f} of train variance"
    )
    return params.apply(matrix), params


def assemble_dataset(
    features: FeatureMatrix,
    events: list[LabelEvent],
    split_fraction: float = 0.8,
    n_components: int = 16,
    split: str = "chronological",
    seed: int = 0,
) -> Dataset:
    """Align features with label events by entry index, split, then fit on train.

    ``split="random"`` draws the train rows with ``seed`` instead of taking the
    chronological prefix.
    """
    if not 0 < split_fraction < 1:
        raise ValueError("split_fraction must lie in (0, 1)")
    ordered = sorted(events, key=lambda e: e.entry_index)
    entries = np.array([e.entry_index for e in ordered], dtype=np.int64)
    if len(np.unique(entries)) != len(entries):
        raise AlignmentMismatch("duplicate entry indices among label events")

    common, feat_pos, event_pos = np.intersect1d(
        features.index, entries, assume_unique=True, return_indices=True
    )
    if common.size == 0:
        raise AlignmentMismatch(
            "no label event shares an entry index with the features"
        )
    if common.size < len(entries):
        logger.info(
            f"Aligned {common.size} of {len(entries)} events with feature rows "
            f"({len(entries) - common.size} fell in the warm-up)"
        )
    aligned = features.take(feat_pos)
    labels = np.array([ordered[i].label + 1 for i in event_pos], dtype=np.int64)

    n = len(aligned)
    split_index = int(np.floor(split_fraction * n))
    if split_index < 2 or split_index >= n:
        raise AlignmentMismatch(
            f"split of {n} rows at {split_fraction} leaves an empty side"
        )
    if split == "chronological":
        train_rows = np.arange(split_index)
        test_rows = np.arange(split_index, n)
    elif split == "random":
        perm = np.random.default_rng(seed).permutation(n)
        train_rows = np.sort(perm[:split_index])
        test_rows = np.sort(perm[split_index:])
    else:
        raise ValueError(f"unknown split '{split}'")

    normalized, norm_params = normalize(aligned, train_rows)
    limit = min(len(norm_params.columns), len(train_rows) - 1)
    if n_components > limit:
        logger.warning(f"Reducing PCA components from {n_components} to {limit}")
        n_components = limit
    reduced, pca_params = pca_fit_transform(normalized, train_rows, n_components)
    logger.info(
        f"Dataset: {len(train_rows)} train / {len(test_rows)} test rows, "
        f"{n_components} components ({split} split)"
    )
    return Dataset(
        features=reduced,
        labels=labels,
        split_index=split_index,
        normalization_params=norm_params,
        pca_params=pca_params,
        train_rows=train_rows,
        test_rows=test_rows,
        split=split,
    )


def dataset_frame(dataset: Dataset) -> pd.DataFrame:
    frame = dataset.features.to_frame()
    frame.insert(1, "label", dataset.labels)
    is_train = np.zeros(len(frame), dtype=np.int64)
    is_train[dataset.train_rows] = 1
    frame.insert(2, "train", is_train)
    return frame


def dataset_metadata(dataset: Dataset) -> dict:
    return {
        "split": dataset.split,
        "split_index": dataset.split_index,
        "normalization": dataset.normalization_params.to_dict(),
        "pca": dataset.pca_params.to_dict(),
    }


def save_dataset(dataset: Dataset, path: str, extra: dict | None = None) -> str:
    """Write the dataset CSV and a JSON sidecar; returns the sidecar path."""
    dataset_frame(dataset).to_csv(path, index=False, float_format="%.12g")
    sidecar = path.rsplit(".", 1)[0] + ".json"
    payload = {**dataset_metadata(dataset), **(extra or {})}
    with open(sidecar, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
    return sidecar


def load_dataset(path: str) -> Dataset:
    frame = pd.read_csv(path, comment="#")
    sidecar = path.rsplit(".", 1)[0] + ".json"
    with open(sidecar, "r") as f:
        payload = json.load(f)
    pcs = [c for c in frame.columns if c.startswith("pc")]
    features = FeatureMatrix(
        index=frame["bar_index"].to_numpy(dtype=np.int64),
        column_names=pcs,
        values=frame[pcs].to_numpy(dtype=np.float64),
    )
    train = frame["train"].to_numpy() == 1
    return Dataset(
        features=features,
        labels=frame["label"].to_numpy(dtype=np.int64),
        split_index=int(payload["split_index"]),
        normalization_params=NormalizationParams.from_dict(payload["normalization"]),
        pca_params=PcaParams.from_dict(payload["pca"]),
        train_rows=np.flatnonzero(train),
        test_rows=np.flatnonzero(~train),
        split=payload.get("split", "chronological"),
    )
