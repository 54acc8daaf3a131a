"""
Minimum-risk portfolios over the capped simplex

    { w : sum(w) = budget, lower <= w_i <= upper }

The objective w -> rho[X^w, S^w] is evaluated on one fixed scenario set (common random
numbers) and minimised by projected gradient descent with central finite-difference
gradients, Armijo backtracking and several feasible starts.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike
from tqdm import tqdm

from esgrisk.utils.errors import InputError, ModelError, OptimizationError
from esgrisk.utils.risk_tools import RiskConfig, financial_shortfall_risk, shortfall_risk
from esgrisk.utils.scenario_tools import RISK_CATEGORIES, ScenarioSet, categorize_ratings
from esgrisk.utils.utility_tools import MultiUtility, ScalarUtility

logger = logging.getLogger(__name__)

WEIGHT_TOLERANCE = 1e-12
ARMIJO_SLOPE = 1e-4
MIN_STEP = 1e-14
MAX_STEP = 1e6


@dataclass(frozen=True)
class FeasibleSet:
    n: int
    lower: float = 0.0
    upper: float = 0.2
    budget: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise InputError(f"need at least one asset, got n={self.n}")
        if not self.lower <= self.upper:
            raise InputError(f"lower bound {self.lower} exceeds upper bound {self.upper}")
        if self.n * self.upper < self.budget - WEIGHT_TOLERANCE:
            raise InputError(
                f"infeasible weights: {self.n} assets capped at {self.upper:g} cannot reach a budget of {self.budget:g}"
            )
        if self.n * self.lower > self.budget + WEIGHT_TOLERANCE:
            raise InputError(
                f"infeasible weights: {self.n} assets with floor {self.lower:g} exceed a budget of {self.budget:g}"
            )

    def equal_weights(self) -> np.ndarray:
        return np.full(self.n, self.budget / self.n)

    def contains(self, w: ArrayLike) -> bool:
        w = np.asarray(w, dtype=float)
        return (
            w.shape == (self.n,)
            and abs(w.sum() - self.budget) <= WEIGHT_TOLERANCE
            and bool(np.all(w >= self.lower - WEIGHT_TOLERANCE))
            and bool(np.all(w <= self.upper + WEIGHT_TOLERANCE))
        )


def check_weights(w: ArrayLike, fs: FeasibleSet) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (fs.n,):
        raise InputError(f"expected {fs.n} weights, got shape {w.shape}")
    if not fs.contains(w):
        raise InputError(f"weights {np.round(w, 6).tolist()} are outside the feasible set")
    return w


def portfolio_exposure(w: ArrayLike, scen: ScenarioSet, name: str = "portfolio") -> ScenarioSet:
    """
    The single position (X^w, S^w) = (sum w_i X_i, sum w_i S_i) per sample.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size != scen.n_assets:
        raise InputError(f"{w.size} weights for a scenario set of {scen.n_assets} assets")
    x = scen.x @ w
    # rounding in the convex combination can step just outside [0, 1]
    s = np.clip(scen.s_norm @ w, 0.0, 1.0)
    return ScenarioSet(x, s, scen.horizon, scen.seed, (name,))


def project_feasible(v: ArrayLike, fs: FeasibleSet, max_iter: int = 200) -> np.ndarray:
    """
    Euclidean projection of v onto the capped simplex: w = clip(v - lam, lower, upper)
    with the shift lam found by bisection so that sum(w) = budget.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (fs.n,):
        raise InputError(f"expected a vector of length {fs.n}, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InputError("cannot project a vector with non-finite entries")

    def total(lam: float) -> float:
        return float(np.clip(v - lam, fs.lower, fs.upper).sum())

    # total(lo) = n * upper >= budget >= n * lower = total(hi)
    lo, hi = float(v.min() - fs.upper), float(v.max() - fs.lower)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if total(mid) > fs.budget:
            lo = mid
        else:
            hi = mid
    w = np.clip(v - 0.5 * (lo + hi), fs.lower, fs.upper)

    # spread the last rounding residual over coordinates strictly inside the box
    residual = fs.budget - w.sum()
    free = (w > fs.lower) & (w < fs.upper)
    if residual != 0.0 and free.any():
        w[free] += residual / free.sum()
        w = np.clip(w, fs.lower, fs.upper)
    return w


@dataclass(frozen=True)
class OptimizerConfig:
    multistarts: int = 8
    opt_tol: float = 1e-6
    max_iter: int = 200
    fd_step: float = 1e-5

    def __post_init__(self):
        if self.multistarts < 1:
            raise InputError(f"multistarts must be >= 1, got {self.multistarts}")
        if not self.opt_tol > 0:
            raise InputError(f"opt_tol must be > 0, got {self.opt_tol}")
        if self.max_iter < 1:
            raise InputError(f"max_iter must be >= 1, got {self.max_iter}")
        if not self.fd_step > 0:
            raise InputError(f"fd_step must be > 0, got {self.fd_step}")


@dataclass(frozen=True, eq=False)
class PortfolioResult:
    weights: np.ndarray
    risk: float
    start_risks: tuple[float, ...] = field(default=())
    evaluations: int = 0

    @property
    def best_start(self) -> int:
        return int(np.argmin(self.start_risks))


def risk_objective(objective: MultiUtility | ScalarUtility, scen: ScenarioSet, cfg: RiskConfig = RiskConfig()) -> Callable[[np.ndarray], float]:
    """
    w -> rho[X^w, S^w] for a MultiUtility, or w -> rho_hat[X^w] for a financial utility u1.
    """
    if isinstance(objective, MultiUtility):
        def evaluate(w: np.ndarray) -> float:
            return shortfall_risk(objective, portfolio_exposure(w, scen), cfg).value
    elif isinstance(objective, ScalarUtility):
        def evaluate(w: np.ndarray) -> float:
            return financial_shortfall_risk(objective, portfolio_exposure(w, scen), cfg).value
    else:
        raise InputError(f"objective must be a MultiUtility or a ScalarUtility, got {type(objective).__name__}")
    return evaluate


def _gradient(f: Callable[[np.ndarray], float], w: np.ndarray, h: float) -> np.ndarray | None:
    grad = np.empty_like(w)
    for i in range(w.size):
        step = np.zeros_like(w)
        step[i] = h
        up, down = f(w + step), f(w - step)
        if not (math.isfinite(up) and math.isfinite(down)):
            return None
        grad[i] = (up - down) / (2.0 * h)
    return grad


def _descend(f: Callable[[np.ndarray], float], w: np.ndarray, fs: FeasibleSet, cfg: OptimizerConfig) -> tuple[np.ndarray, float]:
    value = f(w)
    step = None
    for iteration in range(cfg.max_iter):
        grad = _gradient(f, w, cfg.fd_step)
        if grad is None:
            logger.debug(f"Non-finite risk next to {np.round(w, 4).tolist()}, stopping this start")
            break
        scale = float(np.max(np.abs(grad)))
        if scale == 0.0:
            break
        if step is None:
            step = 1.0 / scale

        accepted = False
        while step >= MIN_STEP:
            candidate = project_feasible(w - step * grad, fs)
            move = candidate - w
            if not np.any(move):
                break
            trial = f(candidate)
            if math.isfinite(trial) and trial <= value + ARMIJO_SLOPE * float(grad @ move):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break

        improvement = value - trial
        w, value = candidate, trial
        step = min(2.0 * step, MAX_STEP)
        if improvement <= 1e-3 * cfg.opt_tol:
            break
    else:
        logger.debug(f"Projected gradient reached max_iter={cfg.max_iter}")
    return w, value


def minimize_risk(
    objective: MultiUtility | ScalarUtility,
    scen: ScenarioSet,
    fs: FeasibleSet,
    opt_cfg: OptimizerConfig = OptimizerConfig(),
    risk_cfg: RiskConfig = RiskConfig(),
    seed: int | None = None,
    progress: bool = False,
) -> PortfolioResult:
    """
    Minimise the shortfall risk of the portfolio exposure over the feasible set.

    Starts from equal weights, then from seeded random feasible points; the best end point
    over all starts is returned.
    """
    if scen.n_assets != fs.n:
        raise InputError(f"feasible set has {fs.n} assets but the scenario set has {scen.n_assets}")

    rng = np.random.default_rng(seed)
    starts = [fs.equal_weights()]
    for _ in range(opt_cfg.multistarts - 1):
        starts.append(project_feasible(fs.budget * rng.dirichlet(np.ones(fs.n)), fs))

    calls = 0
    base = risk_objective(objective, scen, risk_cfg)

    def f(w: np.ndarray) -> float:
        nonlocal calls
        calls += 1
        return base(w)

    best_w, best_value = None, math.inf
    start_risks = []
    for i, w0 in enumerate(tqdm(starts, desc="Multistart", disable=not progress, leave=False)):
        try:
            if not math.isfinite(f(w0)):
                logger.warning(f"Start {i}: risk is not finite at {np.round(w0, 4).tolist()}")
                start_risks.append(math.inf)
                continue
            w, value = _descend(f, w0, fs, opt_cfg)
        except ModelError as e:
            logger.warning(f"Start {i} failed: {e}")
            start_risks.append(math.inf)
            continue
        start_risks.append(value)
        if value < best_value - opt_cfg.opt_tol or best_w is None:
            best_w, best_value = w, value

    if best_w is None:
        raise OptimizationError("no feasible start has an acceptable cash amount: risk is infinite at every start")

    logger.debug(f"Minimum risk {best_value:.10g} after {calls} evaluations")
    return PortfolioResult(best_w, best_value, tuple(start_risks), calls)


def risk_category_breakdown(w: ArrayLike, ratings_raw: ArrayLike) -> pd.Series:
    """Portfolio weight per vendor risk category."""
    w = np.asarray(w, dtype=float)
    categories = categorize_ratings(ratings_raw)
    if len(categories) != w.size:
        raise InputError(f"{w.size} weights for {len(categories)} ratings")
    totals = pd.Series(w).groupby(np.asarray(categories, dtype=object)).sum()
    return totals.reindex(list(RISK_CATEGORIES), fill_value=0.0).rename("weight")
