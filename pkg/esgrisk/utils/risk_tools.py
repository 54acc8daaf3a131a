"""
Utility-based shortfall risk on an empirical scenario set.

    rho[X, S] = inf{ m : mean_i u(X_i + m, S_i) >= 0 }

The infimum is located by doubling a bracket around zero and bisecting the monotone
map m -> E[u(X + m, S)]. Samples carry uniform weights, so every identity (translation
invariance, the penalty decomposition, zero premium at indifference) holds exactly at
sample level.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike
from scipy.special import logsumexp

from esgrisk.utils.errors import InputError, ModelError
from esgrisk.utils.scenario_tools import ScenarioSet
from esgrisk.utils.utility_tools import NEG_INF, POS_INF, Exponential, Linear, MultiUtility, ScalarUtility, ext_add

logger = logging.getLogger(__name__)

MONOTONICITY_CHECKS = 6
# exp overflows above this exponent
EXP_LIMIT = math.log(np.finfo(float).max)


@dataclass(frozen=True)
class RiskConfig:
    root_tol: float = 1e-10
    bracket_seed: float = 1.0
    bracket_cap: float = 1e9
    max_iter: int = 500

    def __post_init__(self):
        if not self.root_tol > 0:
            raise InputError(f"root_tol must be > 0, got {self.root_tol}")
        if not self.bracket_seed > 0:
            raise InputError(f"bracket_seed must be > 0, got {self.bracket_seed}")
        if not self.bracket_cap >= self.bracket_seed:
            raise InputError("bracket_cap must be at least bracket_seed")
        if self.max_iter < 1:
            raise InputError(f"max_iter must be >= 1, got {self.max_iter}")


@dataclass(frozen=True)
class RiskResult:
    """
    `value` is POS_INF when no cash amount makes the position acceptable and NEG_INF when
    every amount down to -bracket_cap does.
    """

    value: float
    iterations: int
    bracket: tuple[float, float]
    acceptance_utility: float

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.value)


def _mean_utility(values: np.ndarray) -> float:
    if np.any(np.isneginf(values)):
        return NEG_INF
    return float(np.mean(values))


def _position(scen: ScenarioSet, asset: int | str | None) -> tuple[np.ndarray, np.ndarray]:
    if not isinstance(scen, ScenarioSet):
        raise InputError("expected a ScenarioSet")
    return scen.position(asset)


def _sample_means(u1: ScalarUtility, x: np.ndarray, v2: np.ndarray, k: float = 0.0) -> Callable[[float], float] | None:
    """
    E[u(X + m, S)] = mean(u1(X + m) * (1 + k*u2(S)) + u2(S)) is affine in m for a linear u1
    and in exp(-gamma*m) for an exponential u1, so a handful of sample means give every
    evaluation in O(1). Callers keep the per-sample path for capped utilities.
    """
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v2))):
        return None
    weight = 1.0 + k * v2

    if isinstance(u1, Linear):
        level = float(np.mean(x * weight) + np.mean(v2))
        slope = float(np.mean(weight))
        return lambda m: level + slope * m

    if isinstance(u1, Exponential):
        gamma = u1.gamma
        x_min = float(np.min(x))
        level = float(np.mean(weight / gamma + v2))
        # shifted by the smallest sample so the exponentials stay in (0, 1]
        scale = float(np.mean(np.exp(-gamma * (x - x_min)) * weight)) / gamma

        def expected(m: float) -> float:
            exponent = -gamma * (m + x_min)
            if exponent > EXP_LIMIT:
                return NEG_INF
            return level - math.exp(exponent) * scale

        return expected
    return None


def _acceptance_function(U: MultiUtility, x: np.ndarray, s: np.ndarray) -> Callable[[float], float]:
    # u2(S) does not depend on the cash amount
    v2 = U.u2(s)
    if not U.capped or U.k == 0.0:
        fast = _sample_means(U.u1, x, v2, U.k)
        if fast is not None:
            return fast

    def expected(m: float) -> float:
        return _mean_utility(U.compose(U.u1(x + m), v2))

    return expected


def expected_utility(U: MultiUtility, scen: ScenarioSet, m: float = 0.0, asset: int | str | None = None) -> float:
    x, s = _position(scen, asset)
    return _acceptance_function(U, x, s)(m)


def _check_single_crossing(evaluations: list[tuple[float, float]]):
    ordered = sorted(evaluations)
    accepted = [f >= 0 for _, f in ordered]
    # acceptable points must form an upper set in m
    if any(a and not b for a, b in zip(accepted, accepted[1:])):
        raise ModelError(
            "expected utility is not monotone in the cash amount (sign pattern +,-,+); "
            "use a capped utility for this position"
        )


def solve_acceptance(expected: Callable[[float], float], cfg: RiskConfig = RiskConfig()) -> RiskResult:
    """
    Smallest m with expected(m) >= 0 for a non-decreasing `expected`.
    """
    evaluations: list[tuple[float, float]] = []

    def evaluate(m: float) -> float:
        value = expected(m)
        if math.isnan(value):
            raise ModelError(f"expected utility is undefined at m={m:g}")
        evaluations.append((m, value))
        return value

    def check_below():
        # acceptable points under the lowest evaluated amount reveal a non-monotone map
        base = min(m for m, _ in evaluations)
        for j in range(MONOTONICITY_CHECKS):
            evaluate(base - cfg.bracket_seed * 2.0**j)
        _check_single_crossing(evaluations)

    iterations = 0
    lo, hi = -cfg.bracket_seed, cfg.bracket_seed
    f_hi = evaluate(hi)
    while f_hi < 0:
        lo, hi = hi, 2.0 * hi
        iterations += 1
        if hi > cfg.bracket_cap:
            check_below()
            logger.debug(f"No acceptable cash amount below {cfg.bracket_cap:g}")
            return RiskResult(POS_INF, iterations, (lo, POS_INF), f_hi)
        f_hi = evaluate(hi)

    f_lo = evaluate(lo) if iterations == 0 else -1.0
    while f_lo >= 0:
        hi, f_hi = lo, f_lo
        lo = 2.0 * lo
        iterations += 1
        if lo < -cfg.bracket_cap:
            _check_single_crossing(evaluations)
            return RiskResult(NEG_INF, iterations, (NEG_INF, hi), f_hi)
        f_lo = evaluate(lo)

    while hi - lo > cfg.root_tol and iterations < cfg.max_iter:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        f_mid = evaluate(mid)
        if f_mid >= 0:
            hi, f_hi = mid, f_mid
        else:
            lo = mid
        iterations += 1

    check_below()
    if hi - lo > cfg.root_tol:
        logger.warning(f"Bisection stopped after {iterations} iterations with bracket width {hi - lo:.3g}")
    return RiskResult(hi, iterations, (lo, hi), f_hi)


def shortfall_risk(U: MultiUtility, scen: ScenarioSet, cfg: RiskConfig = RiskConfig(), asset: int | str | None = None) -> RiskResult:
    x, s = _position(scen, asset)
    return solve_acceptance(_acceptance_function(U, x, s), cfg)


def financial_shortfall_risk(
    u1: ScalarUtility,
    scen: ScenarioSet,
    cfg: RiskConfig = RiskConfig(),
    asset: int | str | None = None,
    level: float = 0.0,
) -> RiskResult:
    """
    inf{ m : E[u1(X + m)] >= level }. A positive `level` is the acceptance threshold an
    additive rating penalty imposes on the financial part.
    """
    x, _ = _position(scen, asset)
    expected = _sample_means(u1, x, np.zeros_like(x))
    if expected is None:
        def expected(m: float) -> float:
            return _mean_utility(np.asarray(u1(x + m)))

    return solve_acceptance(lambda m: float(ext_add(expected(m), -level)), cfg)


def entropic_closed_form(gamma1: float, scen: ScenarioSet, asset: int | str | None = None) -> float:
    """
    (1 / gamma1) * log(mean(exp(-gamma1 * X))), evaluated through log-sum-exp.
    """
    if not gamma1 > 0:
        raise InputError(f"gamma1 must be > 0, got {gamma1}")
    x, _ = _position(scen, asset)
    return float((logsumexp(-gamma1 * x) - math.log(x.size)) / gamma1)


def _ext_difference(a: float, b: float) -> float:
    return float(ext_add(a, -b))


def esg_risk_premium(U: MultiUtility, scen: ScenarioSet, cfg: RiskConfig = RiskConfig(), asset: int | str | None = None) -> float:
    """
    rho[X, S] - rho_hat[X] on common samples. Infinite risks give an infinite premium of
    the matching sign.
    """
    rho = shortfall_risk(U, scen, cfg, asset).value
    rho_hat = financial_shortfall_risk(U.u1, scen, cfg, asset).value
    return _ext_difference(rho, rho_hat)


def indifference_gap(u2: ScalarUtility, scen: ScenarioSet, asset: int | str | None = None, weights: ArrayLike | None = None) -> float:
    """
    E[u2(S)]: positive for a favorable rating exposure, negative for an unfavorable one,
    zero for an indifference position. `weights` replaces the uniform sample weights.
    """
    _, s = _position(scen, asset)
    values = np.asarray(u2(s), dtype=float)
    if not np.all(np.isfinite(values)):
        raise InputError("u2 must be finite on the rating samples")
    return float(np.average(values, weights=weights))


@dataclass(frozen=True, eq=False)
class ShiftCurve:
    shifts: np.ndarray
    rho: np.ndarray
    marginal_rho: np.ndarray = field(repr=False)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"shift": self.shifts, "rho": self.rho, "marginal_rho": self.marginal_rho})


def shift_curve(U: MultiUtility, scen: ScenarioSet, shifts: Iterable[float], cfg: RiskConfig = RiskConfig(), asset: int | str | None = None) -> ShiftCurve:
    """
    m -> rho[X, min(max(S + m, 0), 1)] over a grid in [-1, 1], with its finite-difference
    derivative (the marginal ESG risk). The grid is sorted and repeated shifts are dropped.
    """
    grid = np.asarray(list(shifts), dtype=float)
    if grid.size == 0:
        raise InputError("shift grid is empty")
    if np.any(np.isnan(grid)) or np.any(np.abs(grid) > 1):
        raise InputError("rating shifts must lie in [-1, 1]")
    grid = np.unique(grid)

    position = scen.select(asset) if asset is not None else scen
    rho = np.array([shortfall_risk(U, position.shifted(rating=m), cfg).value for m in grid])

    if grid.size > 1 and np.all(np.isfinite(rho)):
        marginal = np.gradient(rho, grid)
    else:
        marginal = np.full_like(rho, np.nan)
    return ShiftCurve(grid, rho, marginal)


@dataclass(frozen=True)
class RiskRow:
    asset: str
    rho_financial: float
    rho_esg: float
    premium: float
    esg_rating_now: float
    rho_financial_closed_form: float = float("nan")


def risk_row(U: MultiUtility, scen: ScenarioSet, esg_rating_now: float, cfg: RiskConfig = RiskConfig(), asset: int | str | None = None) -> RiskRow:
    """Financial risk, ESG risk and premium of one position on common samples."""
    name = scen.names[scen.asset_index(asset if asset is not None else 0)]
    rho_hat = financial_shortfall_risk(U.u1, scen, cfg, asset).value
    rho = shortfall_risk(U, scen, cfg, asset).value
    closed = float("nan")
    if isinstance(U.u1, Exponential):
        closed = entropic_closed_form(U.u1.gamma, scen, asset)
    return RiskRow(name, rho_hat, rho, _ext_difference(rho, rho_hat), esg_rating_now, closed)


def rank_premia(table: pd.DataFrame, top: int = 5) -> pd.DataFrame:
    """
    The `top` largest positive and most negative ESG risk premia of a risk table.
    """
    finite = table[np.isfinite(table["premium"])]
    positive = finite[finite["premium"] > 0].sort_values("premium", ascending=False, kind="mergesort").head(top)
    negative = finite[finite["premium"] < 0].sort_values("premium", ascending=True, kind="mergesort").head(top)

    frames = []
    for side, part in (("positive", positive), ("negative", negative)):
        part = part[["asset", "rho_financial", "rho_esg", "premium"]].copy()
        part.insert(0, "rank", np.arange(1, len(part) + 1))
        part.insert(0, "side", side)
        frames.append(part)
    return pd.concat(frames, ignore_index=True)
