"""
Rolling-window backtest of minimum-risk portfolios.

At every rebalance date t the model is re-estimated on the trailing window of monthly
observations ending at t, a fresh scenario set is drawn, each strategy picks its weights,
and the ledger records the realized return and rating of month (t, t+1].
"""
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from tqdm import tqdm

from esgrisk.utils.calibration_tools import DynamicsEstimate, HistoricalSeries, estimate_dynamics, pearson
from esgrisk.utils.errors import EsgRiskError, InputError
from esgrisk.utils.portfolio_tools import FeasibleSet, OptimizerConfig, minimize_risk, risk_category_breakdown
from esgrisk.utils.risk_tools import RiskConfig
from esgrisk.utils.scenario_tools import MONTHLY, BasketDynamics, nearest_correlation, sample_basket
from esgrisk.utils.utility_tools import MultiUtility

logger = logging.getLogger(__name__)

STRATEGIES = ("entropic", "esg", "equal")
MIN_PAIRED_OBSERVATIONS = 3

RECORD_COLUMNS = ["date", "strategy", "log_return", "cum_log_return", "portfolio_esg_rating", "risk", "fallback"]
LEDGER_COLUMNS = ["date", "strategy", "cum_log_return", "portfolio_esg_rating"]


def parse_strategies(value: str | list[str] | tuple[str, ...]) -> tuple[str, ...]:
    names = [s.strip() for s in value.split(",")] if isinstance(value, str) else [str(s).strip() for s in value]
    names = [s for s in names if s]
    unknown = [s for s in names if s not in STRATEGIES]
    if unknown:
        raise InputError(f"unknown strategy '{unknown[0]}', expected one of {', '.join(STRATEGIES)}")
    if not names:
        raise InputError("no strategies selected")
    return tuple(dict.fromkeys(names))


def _paired_correlation(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> float:
    if mask.sum() < MIN_PAIRED_OBSERVATIONS:
        return 0.0
    value = pearson(a[mask], b[mask])
    return 0.0 if math.isnan(value) else float(np.clip(value, -1.0, 1.0))


def estimate_basket(h: HistoricalSeries, estimates: list[DynamicsEstimate], conditional: bool = True) -> tuple[BasketDynamics, list[str]]:
    """
    Cross-asset correlation matrices from paired monthly observations.

    Return/return pairs use every month. Pairs involving a rating change use the months in
    which that rating (or both ratings) changed, unless `conditional` is False. Jump
    correlations are Pearson correlations of the change indicators. Indefinite estimates
    are repaired to the nearest correlation matrix.
    """
    warnings: list[str] = []
    assets = [e.dynamics for e in estimates]
    n = len(assets)
    r = h.log_returns()[[a.name for a in assets]].to_numpy()
    q = h.rescaled_log_changes()[[a.name for a in assets]].to_numpy()
    changed = h.change_indicators()[[a.name for a in assets]].to_numpy()
    every = np.ones(r.shape[0], dtype=bool)

    series = []
    for i in range(n):
        series.append((r[:, i], every))
        series.append((q[:, i], changed[:, i] if conditional else every))

    z = np.eye(2 * n)
    for a in range(2 * n):
        for b in range(a + 1, 2 * n):
            if b == a + 1 and a % 2 == 0:
                value = assets[a // 2].rho
            else:
                (xa, ma), (xb, mb) = series[a], series[b]
                value = _paired_correlation(xa, xb, ma & mb)
            z[a, b] = z[b, a] = value

    jumps = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            value = pearson(changed[:, i].astype(float), changed[:, j].astype(float))
            jumps[i, j] = jumps[j, i] = 0.0 if math.isnan(value) else value

    repaired_z = nearest_correlation(z)
    if not np.array_equal(repaired_z, z):
        warnings.append("return/rating correlation matrix was not positive semidefinite and has been repaired")
        logger.warning(warnings[-1])
        assets = [replace(a, rho=float(repaired_z[2 * i, 2 * i + 1])) for i, a in enumerate(assets)]
    repaired_jumps = nearest_correlation(jumps)
    if not np.array_equal(repaired_jumps, jumps):
        warnings.append("jump correlation matrix was not positive semidefinite and has been repaired")
        logger.warning(warnings[-1])

    return BasketDynamics(tuple(assets), repaired_z, repaired_jumps), warnings


@dataclass(frozen=True, eq=False)
class BacktestLedger:
    records: pd.DataFrame
    weights: pd.DataFrame
    categories: pd.DataFrame
    warnings: tuple[str, ...] = field(default=())
    final_ratings: pd.Series | None = None

    def ledger_frame(self) -> pd.DataFrame:
        frame = self.records[LEDGER_COLUMNS].copy()
        frame["date"] = pd.to_datetime(frame["date"]).dt.strftime("%Y-%m-%d")
        return frame

    def weights_frame(self) -> pd.DataFrame:
        frame = self.weights.copy()
        frame["date"] = pd.to_datetime(frame["date"]).dt.strftime("%Y-%m-%d")
        return frame

    def category_frame(self) -> pd.DataFrame:
        frame = self.categories.copy()
        frame["date"] = pd.to_datetime(frame["date"]).dt.strftime("%Y-%m-%d")
        return frame

    def strategy(self, name: str) -> pd.DataFrame:
        return self.records[self.records["strategy"] == name].reset_index(drop=True)

    def telescopes(self, atol: float = 1e-12) -> bool:
        """Cumulative log-returns equal the running sums of the monthly log-returns."""
        for _, part in self.records.groupby("strategy", sort=False):
            if not np.allclose(part["cum_log_return"], part["log_return"].cumsum(), atol=atol, rtol=0.0):
                return False
        return True

    def average_weights(self) -> pd.DataFrame:
        """Weight of every asset averaged over the rebalance dates, per strategy."""
        grouped = self.weights.groupby(["strategy", "asset"], sort=False)["weight"].mean()
        return grouped.reset_index()

    def average_category_breakdown(self) -> pd.DataFrame:
        """
        Averaged weights grouped by each asset's risk category on the final date of the
        series, so an asset that changed category counts only in its final one.
        """
        if self.final_ratings is None:
            raise InputError("ledger carries no final ratings")
        rows = []
        for name, part in self.average_weights().groupby("strategy", sort=False):
            ratings = self.final_ratings.reindex(part["asset"]).to_numpy()
            breakdown = risk_category_breakdown(part["weight"].to_numpy(), ratings)
            rows.extend({"strategy": name, "category": c, "weight": float(v)} for c, v in breakdown.items())
        return pd.DataFrame(rows, columns=["strategy", "category", "weight"])

    def summary(self) -> pd.DataFrame:
        """
        Final cumulative log-return and mean portfolio rating per strategy, with the mean
        rating gap to the classical entropic strategy.
        """
        grouped = self.records.groupby("strategy", sort=False)
        frame = pd.DataFrame(
            {
                "final_cum_log_return": grouped["cum_log_return"].last(),
                "mean_esg_rating": grouped["portfolio_esg_rating"].mean(),
                "fallback_dates": grouped["fallback"].sum().astype(int),
            }
        )
        if "entropic" in frame.index:
            baseline = self.strategy("entropic")["portfolio_esg_rating"].to_numpy()
            frame["mean_rating_gap"] = [
                float(np.mean(self.strategy(name)["portfolio_esg_rating"].to_numpy() - baseline)) for name in frame.index
            ]
        else:
            frame["mean_rating_gap"] = np.nan
        return frame.rename_axis("strategy").reset_index()


def _child_seeds(seed: int | None, count: int) -> list[int]:
    sequence = np.random.SeedSequence(seed)
    return [int(child.generate_state(1)[0]) for child in sequence.spawn(count)]


def run_backtest(
    h: HistoricalSeries,
    U: MultiUtility,
    window: int = 20,
    strategies: str | tuple[str, ...] = STRATEGIES,
    samples: int = 10_000,
    seed: int | None = None,
    fs: FeasibleSet | None = None,
    opt_cfg: OptimizerConfig = OptimizerConfig(),
    risk_cfg: RiskConfig = RiskConfig(),
    conditional: bool = True,
    progress: bool = False,
) -> BacktestLedger:
    """
    Monthly rebalanced backtest over dates window, ..., T-2 of the series.

    The "entropic" strategy minimises the financial risk of u1 alone, "esg" the risk of the
    full utility U, and "equal" holds equal weights. When estimation or optimisation fails
    on a date, the model strategies fall back to equal weights and a warning is recorded.
    """
    strategies = parse_strategies(strategies)
    if window < 2:
        raise InputError(f"window must be at least 2 months, got {window}")
    if len(h) < window + 2:
        raise InputError(f"series of {len(h)} months is too short for a {window}-month window (need {window + 2})")
    fs = fs or FeasibleSet(len(h.assets))
    if fs.n != len(h.assets):
        raise InputError(f"feasible set has {fs.n} assets but the series has {len(h.assets)}")

    rebalance = list(range(window, len(h) - 1))
    seeds = _child_seeds(seed, len(rebalance))
    growth = (h.prices.shift(-1) / h.prices).to_numpy()
    ratings_next = h.normalized_ratings().shift(-1).to_numpy()
    raw = h.ratings_raw.to_numpy()

    records, weight_rows, category_rows = [], [], []
    warnings: list[str] = []
    cumulative = {name: 0.0 for name in strategies}

    for t, date_seed in zip(tqdm(rebalance, desc="Backtest", disable=not progress), seeds):
        date = h.dates[t]
        label = date.strftime("%Y-%m-%d")
        chosen: dict[str, tuple[np.ndarray, float, bool]] = {}

        model_strategies = [s for s in strategies if s != "equal"]
        scen = None
        if model_strategies:
            try:
                trailing = h.window(t, window)
                estimates = [estimate_dynamics(trailing, asset, conditional=conditional) for asset in h.assets]
                basket, basket_warnings = estimate_basket(trailing, estimates, conditional=conditional)
                warnings.extend(f"{label}: {w}" for e in estimates for w in e.warnings)
                warnings.extend(f"{label}: {w}" for w in basket_warnings)
                scen = sample_basket(basket, MONTHLY, samples, date_seed)
            except EsgRiskError as e:
                warnings.append(f"{label}: estimation failed ({e}); using equal weights")
                logger.warning(warnings[-1])

        for name in strategies:
            if name == "equal" or scen is None:
                chosen[name] = (fs.equal_weights(), math.nan, name != "equal")
                continue
            objective = U.u1 if name == "entropic" else U
            try:
                result = minimize_risk(objective, scen, fs, opt_cfg, risk_cfg, seed=date_seed)
                chosen[name] = (result.weights, result.risk, False)
            except EsgRiskError as e:
                warnings.append(f"{label}: {name} optimisation failed ({e}); using equal weights")
                logger.warning(warnings[-1])
                chosen[name] = (fs.equal_weights(), math.nan, True)

        for name, (w, risk, fallback) in chosen.items():
            log_return = float(np.log(w @ growth[t]))
            cumulative[name] += log_return
            records.append(
                {
                    "date": date,
                    "strategy": name,
                    "log_return": log_return,
                    "cum_log_return": cumulative[name],
                    "portfolio_esg_rating": float(w @ ratings_next[t]),
                    "risk": risk,
                    "fallback": fallback,
                }
            )
            weight_rows.extend({"date": date, "strategy": name, "asset": a, "weight": float(wi)} for a, wi in zip(h.assets, w))
            breakdown = risk_category_breakdown(w, raw[t])
            category_rows.extend({"date": date, "strategy": name, "category": c, "weight": float(v)} for c, v in breakdown.items())

        logger.debug(f"Rebalanced on {label}: " + ", ".join(f"{k}={v[0].round(4).tolist()}" for k, v in chosen.items()))

    return BacktestLedger(
        records=pd.DataFrame(records, columns=RECORD_COLUMNS),
        weights=pd.DataFrame(weight_rows, columns=["date", "strategy", "asset", "weight"]),
        categories=pd.DataFrame(category_rows, columns=["date", "strategy", "category", "weight"]),
        warnings=tuple(warnings),
        final_ratings=h.ratings_raw.iloc[-1],
    )
