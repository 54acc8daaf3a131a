"""
Estimation of asset dynamics from monthly history and calibration of the rating
utility from indifference positions.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike
from scipy.optimize import brentq

from esgrisk.utils.errors import CalibrationError, DegenerateError, InputError
from esgrisk.utils.scenario_tools import (
    MONTHLY,
    RAW_RATING_MAX,
    RISK_CATEGORIES,
    AssetDynamics,
    BasketDynamics,
    categorize_ratings,
    draw_log_changes,
    normalize_rating,
    rescale_rating,
)

logger = logging.getLogger(__name__)

RATING_DECIMALS = 2
GAMMA2_START = 1.0
GAMMA2_MAX = 1e6


@dataclass(frozen=True, eq=False)
class HistoricalSeries:
    """
    Monthly prices and raw ratings; both frames share a month-start DatetimeIndex and
    one column per asset.
    """

    prices: pd.DataFrame
    ratings_raw: pd.DataFrame

    def __post_init__(self):
        prices, ratings = self.prices, self.ratings_raw
        if list(prices.columns) != list(ratings.columns):
            raise InputError("prices and ratings must list the same assets in the same order")
        if not prices.index.equals(ratings.index):
            raise InputError("prices and ratings must share the same dates")
        if len(prices) < 2:
            raise InputError(f"need at least 2 monthly observations, got {len(prices)}")
        if prices.shape[1] == 0:
            raise InputError("no assets in the series")
        index = pd.DatetimeIndex(prices.index)
        expected = pd.date_range(index[0], periods=len(index), freq="MS")
        if not index.equals(expected):
            raise InputError("dates must be consecutive month starts in ascending order")
        if prices.isna().any().any() or ratings.isna().any().any():
            raise InputError("series contain missing values")
        if (prices <= 0).any().any():
            raise InputError("prices must be positive")
        if ((ratings < 0) | (ratings > RAW_RATING_MAX)).any().any():
            raise InputError(f"raw ratings must lie in [0, {RAW_RATING_MAX:g}]")

    @property
    def assets(self) -> list[str]:
        return list(self.prices.columns)

    @property
    def dates(self) -> pd.DatetimeIndex:
        return pd.DatetimeIndex(self.prices.index)

    def __len__(self) -> int:
        return len(self.prices)

    def window(self, end: int, months: int) -> "HistoricalSeries":
        """The `months` monthly steps ending at position `end` (months + 1 observations)."""
        start = end - months
        if start < 0 or end >= len(self):
            raise InputError(f"window of {months} months ending at position {end} is out of range")
        return HistoricalSeries(self.prices.iloc[start : end + 1], self.ratings_raw.iloc[start : end + 1])

    def subset(self, assets: list[str]) -> "HistoricalSeries":
        return HistoricalSeries(self.prices[assets], self.ratings_raw[assets])

    def normalized_ratings(self) -> pd.DataFrame:
        return pd.DataFrame(normalize_rating(self.ratings_raw.to_numpy()), index=self.ratings_raw.index, columns=self.ratings_raw.columns)

    def log_returns(self) -> pd.DataFrame:
        return np.log(self.prices).diff().iloc[1:]

    def rescaled_log_changes(self) -> pd.DataFrame:
        normalized = self.normalized_ratings()
        if ((normalized <= 0) | (normalized >= 1)).any().any():
            raise InputError("ratings at the ends of the raw scale cannot be rescaled")
        rescaled = pd.DataFrame(rescale_rating(normalized.to_numpy()), index=normalized.index, columns=normalized.columns)
        return np.log(rescaled).diff().iloc[1:]

    def change_indicators(self) -> pd.DataFrame:
        rounded = self.ratings_raw.round(RATING_DECIMALS)
        return (rounded.diff().iloc[1:] != 0).astype(bool)


@dataclass(frozen=True)
class DynamicsEstimate:
    dynamics: AssetDynamics
    months: int
    change_months: int
    rho_unconditional: float = float("nan")
    warnings: tuple[str, ...] = field(default=())


def _annualize(monthly: np.ndarray, periods: float) -> tuple[float, float]:
    mean = float(np.mean(monthly)) * periods
    std = float(np.std(monthly, ddof=1)) * math.sqrt(periods) if monthly.size > 1 else 0.0
    return mean, std


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation; NaN when either series is constant or too short."""
    if a.size < 2 or np.std(a) == 0 or np.std(b) == 0:
        return float("nan")
    return float(np.corrcoef(a, b)[0, 1])


def _clamp_correlation(value: float, label: str, warnings: list[str]) -> float:
    if value > 1 or value < -1:
        warnings.append(f"{label}: sample correlation {value:.12g} clamped to [-1, 1]")
        logger.warning(warnings[-1])
        return float(np.clip(value, -1.0, 1.0))
    return value


def unconditional_correlation(h: HistoricalSeries, asset: str) -> float:
    """
    Pearson correlation of monthly price log-returns and log-changes of normalized
    ratings over all months, rating changes or not. Zero when undefined.
    """
    normalized = h.normalized_ratings()[asset]
    if (normalized <= 0).any():
        raise InputError(f"{asset}: normalized ratings must be positive for log changes")
    rating_changes = np.log(normalized).diff().iloc[1:].to_numpy()
    value = pearson(h.log_returns()[asset].to_numpy(), rating_changes)
    return 0.0 if math.isnan(value) else float(np.clip(value, -1.0, 1.0))


def estimate_dynamics(h: HistoricalSeries, asset: str, conditional: bool = True, horizon: float = MONTHLY) -> DynamicsEstimate:
    """
    Moment estimates of AssetDynamics for one asset.

    The rating moments and rho use the months in which the rating changed (the model's
    correlation conditional on a jump); `conditional=False` uses every month instead.
    """
    if asset not in h.assets:
        raise InputError(f"unknown asset '{asset}'")
    if len(h) < 3:
        raise InputError(f"{asset}: need at least 3 observations, got {len(h)}")

    periods = 1.0 / horizon
    warnings: list[str] = []

    r_x = h.log_returns()[asset].to_numpy()
    if np.allclose(r_x, 0.0, atol=0.0, rtol=0.0) or np.std(r_x) == 0:
        raise DegenerateError(f"{asset}: prices are constant, volatility cannot be estimated")
    mu_x, sigma_x = _annualize(r_x, periods)

    changed = h.change_indicators()[asset].to_numpy()
    n_changes = int(changed.sum())
    p = n_changes / changed.size

    q = h.rescaled_log_changes()[asset].to_numpy()
    mask = changed if conditional else np.ones_like(changed)
    if n_changes == 0:
        warnings.append(f"{asset}: rating never changes; p=0 and rating moments set to 0")
        logger.warning(warnings[-1])
        mu_s = sigma_s = rho = 0.0
    else:
        mu_s, sigma_s = _annualize(q[mask], periods)
        rho = pearson(r_x[mask], q[mask])
        if math.isnan(rho):
            warnings.append(f"{asset}: correlation undefined on {int(mask.sum())} months; rho set to 0")
            logger.warning(warnings[-1])
            rho = 0.0
        rho = _clamp_correlation(rho, asset, warnings)

    s0_rescaled = float(rescale_rating(normalize_rating(float(h.ratings_raw[asset].iloc[-1]))))
    dynamics = AssetDynamics(
        mu_x=mu_x,
        sigma_x=sigma_x,
        mu_s=mu_s,
        sigma_s=sigma_s,
        rho=rho,
        p=p,
        s0_rescaled=s0_rescaled,
        name=asset,
    )
    return DynamicsEstimate(
        dynamics=dynamics,
        months=changed.size,
        change_months=n_changes,
        rho_unconditional=unconditional_correlation(h, asset),
        warnings=tuple(warnings),
    )


def baseline_from_median(ratings_norm: ArrayLike) -> float:
    values = np.asarray(ratings_norm, dtype=float).ravel()
    if values.size == 0:
        raise InputError("cannot take the median of an empty cross-section")
    return float(np.median(values))


@dataclass(frozen=True)
class IndifferenceSpec:
    """A two-point rating position: s_low with probability p_low, s_high otherwise."""

    s_low: float
    s_high: float
    p_low: float

    def __post_init__(self):
        if not 0 < self.p_low < 1:
            raise InputError(f"p_low must lie in (0, 1), got {self.p_low}")
        if not self.s_low < self.s_high:
            raise InputError(f"s_low must be below s_high, got {self.s_low} and {self.s_high}")

    def mean(self) -> float:
        return self.p_low * self.s_low + (1 - self.p_low) * self.s_high


def _indifference_equation(spec: IndifferenceSpec, s0: float):
    low, high = spec.s_low - s0, spec.s_high - s0

    def f(gamma2: float) -> float:
        return spec.p_low * math.exp(-gamma2 * low) + (1 - spec.p_low) * math.exp(-gamma2 * high) - 1.0

    return f


def calibrate_gamma2(spec: IndifferenceSpec, s0: float) -> float:
    """
    Risk aversion gamma2 > 0 that makes `spec` an indifference position, i.e. the root of
    p_low * exp(-g (s_low - s0)) + (1 - p_low) * exp(-g (s_high - s0)) = 1.
    """
    if not spec.s_low < s0 < spec.s_high:
        raise InputError(f"baseline {s0} must lie strictly between s_low={spec.s_low} and s_high={spec.s_high}")

    drift = spec.mean() - s0
    if abs(drift) <= 1e-15 * max(1.0, abs(s0)):
        raise DegenerateError(
            "indifference position has mean rating equal to the baseline; only the "
            "risk-neutral limit gamma2 -> 0 solves it"
        )
    if drift < 0:
        raise CalibrationError(
            f"indifference position has mean {spec.mean():.6g} below the baseline {s0:.6g}; "
            "no risk-averse gamma2 > 0 makes it indifferent"
        )

    f = _indifference_equation(spec, s0)
    hi = GAMMA2_START
    while f(hi) <= 0:
        hi *= 2.0
        if hi > GAMMA2_MAX:
            raise CalibrationError(f"no gamma2 root found below {GAMMA2_MAX:g}")
    lo = hi
    while f(lo) >= 0:
        lo *= 0.5
        if lo < 1e-12:
            raise DegenerateError("gamma2 root collapses onto 0")

    gamma2 = brentq(f, lo, hi, xtol=1e-15, rtol=1e-14, maxiter=200)
    logger.debug(f"Calibrated gamma2={gamma2:.12g} from {spec}")
    return float(gamma2)


def indifference_probability(gamma2: float, s_low: float, s_high: float, s0: float) -> float:
    """The p_low making (s_low, s_high) an indifference position under gamma2."""
    if not gamma2 > 0:
        raise InputError(f"gamma2 must be > 0, got {gamma2}")
    if not s_low < s0 < s_high:
        raise InputError("need s_low < s0 < s_high")
    up = math.exp(-gamma2 * (s_low - s0))
    down = math.exp(-gamma2 * (s_high - s0))
    return (1.0 - down) / (up - down)


def describe_ratings(h: HistoricalSeries) -> tuple[pd.DataFrame, pd.DataFrame]:
    """
    Summary statistics of raw ratings over all dates and on the last date, and the number
    of assets per risk category (overall by each asset's mean rating).
    """
    def stats(values: np.ndarray) -> dict:
        q1, median, q3 = np.quantile(values, [0.25, 0.5, 0.75])
        return {"min": values.min(), "q1": q1, "median": median, "mean": values.mean(), "q3": q3, "max": values.max()}

    last_label = h.dates[-1].strftime("%Y-%m-%d")
    summary = pd.DataFrame(
        [
            {"scope": "overall", **stats(h.ratings_raw.to_numpy().ravel())},
            {"scope": last_label, **stats(h.ratings_raw.iloc[-1].to_numpy())},
        ]
    )

    def counts(values: np.ndarray) -> dict:
        categories = pd.Series(categorize_ratings(values))
        tally = categories.value_counts().reindex(RISK_CATEGORIES, fill_value=0)
        return {name: int(tally[name]) for name in RISK_CATEGORIES}

    category_counts = pd.DataFrame(
        [
            {"scope": "overall", **counts(h.ratings_raw.mean().to_numpy())},
            {"scope": last_label, **counts(h.ratings_raw.iloc[-1].to_numpy())},
        ]
    )
    return summary, category_counts


def describe_returns(h: HistoricalSeries, horizon: float = MONTHLY) -> pd.DataFrame:
    """
    Pooled annualised mean and volatility of monthly price log-returns and of monthly
    log-changes of normalized ratings, with the average number of rating changes.
    """
    periods = 1.0 / horizon
    normalized = h.normalized_ratings()
    if (normalized <= 0).any().any():
        raise InputError("normalized ratings must be positive for log changes")
    series = {
        "stock_prices": h.log_returns().to_numpy().ravel(),
        "normalized_esg_ratings": np.log(normalized).diff().iloc[1:].to_numpy().ravel(),
    }
    rows = []
    for name, values in series.items():
        mean, vol = _annualize(values, periods)
        rows.append({"series": name, "samples": len(h), "mean_return": mean, "volatility": vol})
    frame = pd.DataFrame(rows)
    frame["mean_rating_changes"] = float(h.change_indicators().sum().mean())
    return frame


def simulate_history(basket: BasketDynamics, months: int, seed: int | None = None, start: str = "2021-10-01", initial_price: float = 100.0) -> HistoricalSeries:
    """
    A synthetic monthly history driven by the model itself, starting from each asset's
    current rating. Raw ratings are rounded to the vendor precision.
    """
    if months < 2:
        raise InputError(f"need at least 2 months, got {months}")
    rng = np.random.default_rng(seed)
    r_x, r_s = draw_log_changes(basket, MONTHLY, months - 1, rng)

    log_prices = np.vstack([np.zeros(basket.n), np.cumsum(r_x, axis=0)])
    s0 = np.array([a.s0_rescaled for a in basket.assets])
    rescaled = s0 * np.exp(np.vstack([np.zeros(basket.n), np.cumsum(r_s, axis=0)]))
    normalized = (2.0 / np.pi) * np.arctan(rescaled)
    raw = np.round(RAW_RATING_MAX * (1.0 - normalized), RATING_DECIMALS)

    index = pd.date_range(start, periods=months, freq="MS", name="date")
    prices = pd.DataFrame(initial_price * np.exp(log_prices), index=index, columns=basket.names)
    ratings = pd.DataFrame(np.clip(raw, 0.0, RAW_RATING_MAX), index=index, columns=basket.names)
    return HistoricalSeries(prices, ratings)
