"""Fractional differentiation weights and the fixed-width window transform."""

from dataclasses import dataclass

import numpy as np
import pandas as pd
from loguru import logger
from scipy import stats

from ffdlab.errors import DegenerateVariance, NonConvergence, SeriesTooShort

DEFAULT_TAU = 1e-5
DEFAULT_MAX_LEN = 10_000


@dataclass(frozen=True)
class FracdiffWeights:
    d: float
    tau: float
    weights: np.ndarray
    capped: bool = False

    @property
    def cutoff(self) -> int:
        """Index l* of the last retained weight."""
        return len(self.weights) - 1

    def __len__(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class FracdiffSeries:
    source_length: int
    d: float
    tau: float
    start_index: int
    values: np.ndarray
    log_prices: bool = False

    def __post_init__(self):
        if len(self.values) != self.source_length - self.start_index:
            raise ValueError("values must cover source indices start_index..T-1")


def _next_weight(previous: float, d: float, k: int) -> float:
    return -previous * (d - k + 1) / k


def generate_weights(
    d: float,
    tau: float = DEFAULT_TAU,
    max_len: int = DEFAULT_MAX_LEN,
    strict: bool = True,
) -> FracdiffWeights:
    """Iterate the binomial weight recursion until the modulus drops below ``tau``.

    Exact zeros (integer ``d`` past its order) end the vector. When ``max_len``
    weights have been produced and the next one is still at least ``tau``,
    ``NonConvergence`` is raised, or with ``strict=False`` the capped vector is
    returned with ``capped`` set.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    if d < 0:
        raise ValueError("d must be non-negative")

    weights = [1.0]
    capped = False
    k = 1
    while True:
        w = _next_weight(weights[-1], d, k)
        if w == 0.0 or abs(w) < tau:
            break
        if len(weights) == max_len:
            if strict:
                raise NonConvergence(
                    f"weights for d={d} still above tau={tau} after {max_len} terms"
                )
            capped = True
            break
        weights.append(w)
        k += 1

    arr = np.asarray(weights, dtype=np.float64)
    arr.setflags(write=False)
    logger.debug(f"Generated {len(arr)} fracdiff weights for d={d}, tau={tau}")
    return FracdiffWeights(d=float(d), tau=float(tau), weights=arr, capped=capped)


def ffd_transform(
    series, weights: FracdiffWeights, log_prices: bool = False
) -> FracdiffSeries:
    """Apply one fixed weight window at every index with full history."""
    x = np.asarray(series, dtype=np.float64)
    cutoff = weights.cutoff
    if len(x) <= cutoff:
        raise SeriesTooShort(
            f"series of length {len(x)} needs more than {cutoff} points "
            f"for d={weights.d}"
        )
    # direct (non-FFT) convolution keeps a fixed summation order
    values = np.convolve(x, weights.weights, mode="valid")
    values.setflags(write=False)
    return FracdiffSeries(
        source_length=len(x),
        d=weights.d,
        tau=weights.tau,
        start_index=cutoff,
        values=values,
        log_prices=log_prices,
    )


def fracdiff_prices(
    prices,
    d: float,
    tau: float = DEFAULT_TAU,
    log: bool = True,
    max_len: int = DEFAULT_MAX_LEN,
) -> FracdiffSeries:
    p = np.asarray(prices, dtype=np.float64)
    if log:
        if np.any(p <= 0):
            raise ValueError("log transform needs strictly positive prices")
        p = np.log(p)
    weights = generate_weights(d, tau, max_len=max_len)
    return ffd_transform(p, weights, log_prices=log)


def expanding_fracdiff_oracle(series, d: float, min_periods: int = 1) -> np.ndarray:
    """Reference expanding-window fracdiff; every output uses all t+1 weights.

    Returns values for t = min_periods-1 .. T-1. Quadratic cost, meant for
    cross-checking ``ffd_transform`` only.
    """
    x = np.asarray(series, dtype=np.float64)
    if min_periods < 1:
        raise ValueError("min_periods must be positive")
    if len(x) < min_periods:
        raise SeriesTooShort(f"need at least {min_periods} points, got {len(x)}")

    full = np.empty(len(x), dtype=np.float64)
    full[0] = 1.0
    for k in range(1, len(x)):
        full[k] = _next_weight(full[k - 1], d, k)

    out = np.empty(len(x) - min_periods + 1, dtype=np.float64)
    for i, t in enumerate(range(min_periods - 1, len(x))):
        out[i] = np.dot(full[: t + 1], x[t::-1])
    return out


def memory_correlation(original, transformed: FracdiffSeries) -> float:
    """Pearson correlation of the source with its transform on the overlap."""
    x = np.asarray(original, dtype=np.float64)[transformed.start_index :]
    y = np.asarray(transformed.values, dtype=np.float64)
    if len(x) != len(y):
        raise ValueError("original series does not match the transform's source length")
    if len(x) < 3:
        raise SeriesTooShort("memory correlation needs at least 3 aligned points")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DegenerateVariance("constant series has no correlation")
    if np.array_equal(x, y):
        return 1.0
    r, _ = stats.pearsonr(x, y)
    return float(r)


def export_weights(weights: FracdiffWeights, path: str) -> None:
    frame = pd.DataFrame({"k": np.arange(len(weights)), "weight": weights.weights})
    frame.to_csv(path, index=False, float_format="%.17g")
