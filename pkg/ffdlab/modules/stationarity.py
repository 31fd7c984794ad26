"""Unit-root testing, autocorrelations and the fracdiff order sweep.

The ADF regression is constant-only:

    dy_t = a + g * y_{t-1} + sum_{i=1..p} b_i * dy_{t-i} + e_t

Lag order ``p`` is chosen by AIC over a common sample (the last
``len(dy) - max_lags`` differences) and the chosen model is refit on every
observation it can use. Critical values and p-values come from MacKinnon's
response surfaces.
"""

from dataclasses import dataclass, field

import numpy as np
from loguru import logger
from scipy import linalg
from statsmodels.tsa.adfvalues import mackinnoncrit, mackinnonp

from ffdlab.errors import (
    DegenerateInput,
    FfdlabError,
    NoPassingD,
    SeriesTooShort,
    SingularRegression,
    SweepRowError,
)
from ffdlab.modules.fracdiff import (
    DEFAULT_TAU,
    generate_weights,
    ffd_transform,
    memory_correlation,
)
from ffdlab.services.workers import ordered_map

CRITICAL_95_ASYMPTOTIC = -2.8618


@dataclass(frozen=True)
class AdfResult:
    statistic: float
    lags: int
    n_obs: int
    critical_95: float
    reject_unit_root: bool
    pvalue: float = float("nan")
    critical_values: dict = field(default_factory=dict)
    max_lags: int = 0
    regression: str = "c"
    autolag: str = "AIC"


@dataclass(frozen=True)
class DSweepRow:
    d: float
    adf_statistic: float
    correlation: float
    passes: bool
    critical_95: float = CRITICAL_95_ASYMPTOTIC
    lags: int = 0
    n_obs: int = 0
    cutoff: int = 0


def schwert_max_lags(n: int) -> int:
    return int(np.floor(12.0 * (n / 100.0) ** 0.25))


def _design(y: np.ndarray, dy: np.ndarray, lags: int, nobs: int):
    """Regressand and [const, level, lagged diffs] over the last ``nobs`` diffs."""
    end = len(dy)
    cols = [np.ones(nobs), y[end - nobs : end]]
    for i in range(1, lags + 1):
        cols.append(dy[end - nobs - i : end - i])
    return dy[end - nobs :], np.column_stack(cols)


def _ols(endog: np.ndarray, exog: np.ndarray):
    """Least squares through QR; returns (beta, ssr, R inverse)."""
    n, k = exog.shape
    if n <= k:
        raise SingularRegression(f"{n} observations for {k} regressors")
    q, r = np.linalg.qr(exog)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-12 * max(diag.max(), 1.0):
        raise SingularRegression("regressor matrix is rank deficient")
    beta = linalg.solve_triangular(r, q.T @ endog)
    resid = endog - exog @ beta
    ssr = float(resid @ resid)
    r_inv = linalg.solve_triangular(r, np.eye(k))
    return beta, ssr, r_inv


def _aic(ssr: float, nobs: int, k: int) -> float:
    with np.errstate(divide="ignore"):
        llf = -nobs / 2.0 * (np.log(2 * np.pi) + np.log(ssr / nobs) + 1.0)
    return float(-2.0 * llf + 2.0 * k)


def adf_test(series, max_lags: int | None = None) -> AdfResult:
    y = np.asarray(series, dtype=np.float64)
    n = len(y)
    if max_lags is None:
        max_lags = schwert_max_lags(n)
    if max_lags < 0:
        raise ValueError("max_lags must be non-negative")
    if n < max_lags + 10:
        raise DegenerateInput(f"series of length {n} too short for {max_lags} lags")
    if not np.all(np.isfinite(y)):
        raise DegenerateInput("series contains non-finite values")
    if np.ptp(y) == 0:
        raise DegenerateInput("series is constant")

    dy = np.diff(y)

    best_lag = 0
    if max_lags > 0:
        nobs = len(dy) - max_lags
        best_aic = np.inf
        for p in range(max_lags + 1):
            endog, exog = _design(y, dy, p, nobs)
            _, ssr, _ = _ols(endog, exog)
            aic = _aic(ssr, nobs, exog.shape[1])
            if aic < best_aic:
                best_aic, best_lag = aic, p

    nobs = len(dy) - best_lag
    endog, exog = _design(y, dy, best_lag, nobs)
    beta, ssr, r_inv = _ols(endog, exog)
    if ssr == 0.0:
        raise SingularRegression("regression fits the differences exactly")
    sigma2 = ssr / (nobs - exog.shape[1])
    se_gamma = np.sqrt(sigma2 * np.sum(r_inv[1, :] ** 2))
    statistic = float(beta[1] / se_gamma)

    crit = mackinnoncrit(N=1, regression="c", nobs=nobs)
    critical_values = {
        "1%": float(crit[0]), "5%": float(crit[1]), "10%": float(crit[2])
    }
    pvalue = float(mackinnonp(statistic, regression="c", N=1))

    return AdfResult(
        statistic=statistic,
        lags=best_lag,
        n_obs=nobs,
        critical_95=critical_values["5%"],
        reject_unit_root=statistic < critical_values["5%"],
        pvalue=pvalue,
        critical_values=critical_values,
        max_lags=max_lags,
    )


def d_grid(step: float, start: float = 0.0, stop: float = 1.0) -> list[float]:
    """Grid ``start, start+step, ..., stop``; ``stop`` is always included."""
    if not 0 < step:
        raise ValueError("grid step must be positive")
    count = int(np.floor((stop - start) / step + 1e-9))
    grid = [round(start + i * step, 10) for i in range(count + 1)]
    if grid[-1] < stop - 1e-12:
        grid.append(stop)
    return grid


def _prepare(series, log: bool) -> np.ndarray:
    x = np.asarray(series, dtype=np.float64)
    if log:
        if np.any(x <= 0):
            raise DegenerateInput("log transform needs strictly positive prices")
        x = np.log(x)
    return x


def _sweep_row(x: np.ndarray, d: float, tau: float, max_lags: int | None) -> DSweepRow:
    try:
        transformed = ffd_transform(x, generate_weights(d, tau))
        adf = adf_test(transformed.values, max_lags=max_lags)
        corr = memory_correlation(x, transformed)
    except FfdlabError as e:
        raise SweepRowError(d, e) from e
    return DSweepRow(
        d=d,
        adf_statistic=adf.statistic,
        correlation=corr,
        passes=adf.reject_unit_root,
        critical_95=adf.critical_95,
        lags=adf.lags,
        n_obs=adf.n_obs,
        cutoff=transformed.start_index,
    )


def d_sweep(
    series,
    grid=None,
    tau: float = DEFAULT_TAU,
    log: bool = True,
    max_lags: int | None = None,
    workers: int | None = None,
) -> list[DSweepRow]:
    """ADF statistic and memory correlation for each d, in grid order."""
    grid = d_grid(0.1) if grid is None else [float(d) for d in grid]
    if any(d < 0 or d > 1 for d in grid):
        raise ValueError("d values must lie in [0, 1]")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("d grid must be ascending")

    x = _prepare(series, log)
    rows = ordered_map(lambda d: _sweep_row(x, d, tau, max_lags), grid, workers)
    for row in rows:
        logger.debug(
            f"d={row.d:.3f} adf={row.adf_statistic:.4f} corr={row.correlation:.4f} "
            f"{'pass' if row.passes else 'fail'}"
        )
    return rows


def minimal_d(
    series,
    tau: float = DEFAULT_TAU,
    grid_step: float = 0.1,
    log: bool = True,
    max_lags: int | None = None,
    start: float = 0.0,
    stop: float = 1.0,
) -> float:
    """Smallest grid d whose transform rejects the unit root at 5%.

    A d whose weight window does not fit the series counts as not passing.
    """
    if not 0 < grid_step <= 0.5 and grid_step != 1:
        raise ValueError("grid_step must lie in (0, 0.5] or equal 1")
    x = _prepare(series, log)
    for d in d_grid(grid_step, start, stop):
        try:
            row = _sweep_row(x, d, tau, max_lags)
        except SweepRowError as e:
            if not isinstance(e.cause, SeriesTooShort):
                raise
            logger.warning(f"Skipping d={d}: {e.cause}")
            continue
        if row.passes:
            logger.info(f"Minimal d={d} (adf={row.adf_statistic:.4f})")
            return d
    raise NoPassingD(f"no d in [{start}, {stop}] rejects the unit root")


def sweep_table_row(rows: list[DSweepRow], name: str) -> dict:
    """One panel row: ADF statistic per d, the 5% critical value, the minimal d."""
    passing = [r.d for r in rows if r.passes]
    record = {"symbol": name}
    record.update({str(r.d): r.adf_statistic for r in rows})
    record["critical_95"] = rows[-1].critical_95
    record["min_d"] = passing[0] if passing else None
    return record


def acf_pacf(series, n_lags: int) -> tuple[np.ndarray, np.ndarray]:
    """Sample ACF (lag-0 normalised) and Durbin-Levinson PACF, lags 0..n_lags."""
    x = np.asarray(series, dtype=np.float64)
    n = len(x)
    if n_lags < 1:
        raise ValueError("n_lags must be positive")
    if n <= n_lags + 1:
        raise DegenerateInput(f"series of length {n} too short for {n_lags} lags")
    xc = x - x.mean()
    gamma0 = float(xc @ xc) / n
    if gamma0 == 0.0:
        raise DegenerateInput("series is constant")

    acf = np.empty(n_lags + 1)
    acf[0] = 1.0
    for k in range(1, n_lags + 1):
        acf[k] = float(xc[k:] @ xc[:-k]) / n / gamma0

    pacf = np.empty(n_lags + 1)
    pacf[0] = 1.0
    phi = np.zeros(n_lags + 1)
    phi[1] = pacf[1] = acf[1]
    for k in range(2, n_lags + 1):
        num = acf[k] - phi[1:k] @ acf[k - 1 : 0 : -1]
        den = 1.0 - phi[1:k] @ acf[1:k]
        phi_kk = num / den
        phi[1:k] = phi[1:k] - phi_kk * phi[k - 1 : 0 : -1]
        phi[k] = pacf[k] = phi_kk
    return acf, pacf


def confidence_band(n: int, z: float = 1.96) -> float:
    """Bartlett white-noise band for autocorrelation plots."""
    return z / np.sqrt(n)
