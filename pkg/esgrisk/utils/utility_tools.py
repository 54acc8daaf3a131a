"""
Single- and multi-attribute utility functions.

Values live on the extended real line: a utility may evaluate to NEG_INF (and in
principle POS_INF). All extended-real arithmetic goes through `ext_add` and
`ext_mul`, which apply the convention inf - inf = -inf and 0 * inf = 0.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, ClassVar, Mapping

import numpy as np
from numpy.typing import ArrayLike

from esgrisk.utils.errors import InputError, UnsupportedError

logger = logging.getLogger(__name__)

NEG_INF = -math.inf
POS_INF = math.inf

REAL_LINE = (NEG_INF, POS_INF)
RATING_SCALE = (0.0, 1.0)


def ext_add(*terms: ArrayLike) -> np.ndarray:
    """
    Sum extended reals. Any NEG_INF term absorbs the sum, so inf - inf = -inf.
    """
    arrays = np.broadcast_arrays(*[np.asarray(t, dtype=float) for t in terms])
    with np.errstate(invalid="ignore", over="ignore"):
        total = np.sum(arrays, axis=0)
    absorbed = np.any([np.isneginf(a) for a in arrays], axis=0)
    return np.where(absorbed, NEG_INF, total)


def ext_mul(a: ArrayLike, b: ArrayLike) -> np.ndarray:
    """
    Multiply extended reals with 0 * (+/-inf) = 0.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    with np.errstate(invalid="ignore", over="ignore"):
        product = a * b
    return np.where((a == 0.0) | (b == 0.0), 0.0, product)


def _as_output(values: np.ndarray, like: ArrayLike):
    if np.ndim(like) == 0:
        return float(values)
    return values


@dataclass(frozen=True)
class ScalarUtility:
    """Base class of the parametric single-attribute utilities."""

    form: ClassVar[str] = ""
    domain: tuple[float, float] = field(default=REAL_LINE, init=False, repr=False)

    def __call__(self, x: ArrayLike):
        values = np.asarray(x, dtype=float)
        lo, hi = self.domain
        if np.any(np.isnan(values)) or np.any((values < lo) | (values > hi)):
            raise InputError(f"{self.form} utility evaluated outside its domain [{lo}, {hi}]")
        with np.errstate(over="ignore", invalid="ignore"):
            return _as_output(self._evaluate(values), x)

    def _evaluate(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_config(self) -> dict[str, Any]:
        raise NotImplementedError


@dataclass(frozen=True)
class Exponential(ScalarUtility):
    """u(x) = (1 / gamma) * (1 - exp(-gamma * x))."""

    form: ClassVar[str] = "exponential"
    gamma: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise InputError(f"exponential utility needs gamma > 0, got {self.gamma}")

    def _evaluate(self, x):
        return -np.expm1(-self.gamma * x) / self.gamma

    def to_config(self):
        return {"form": self.form, "gamma": self.gamma}


@dataclass(frozen=True)
class Linear(ScalarUtility):
    """u(x) = x, the risk-neutral limit of the exponential utility as gamma -> 0."""

    form: ClassVar[str] = "linear"

    def _evaluate(self, x):
        return x.copy()

    def to_config(self):
        return {"form": self.form}


@dataclass(frozen=True)
class ScaledShiftedExponential(ScalarUtility):
    """u(s) = (c / gamma) * (1 - exp(-gamma * (s - s0))), zero exactly at the baseline s0."""

    form: ClassVar[str] = "scaled_shifted_exponential"
    gamma: float = 0.75
    c: float = 0.1
    s0: float = 0.5982

    def __post_init__(self):
        if not self.gamma > 0:
            raise InputError(f"scaled shifted exponential needs gamma > 0, got {self.gamma}")
        # c = 0 switches the rating utility off entirely
        if not self.c >= 0:
            raise InputError(f"scale c must be non-negative, got {self.c}")
        if not RATING_SCALE[0] <= self.s0 <= RATING_SCALE[1]:
            raise InputError(f"baseline s0 must lie in [0, 1], got {self.s0}")

    def _evaluate(self, s):
        return -self.c * np.expm1(-self.gamma * (s - self.s0)) / self.gamma

    def to_config(self):
        return {"form": self.form, "gamma": self.gamma, "c": self.c, "s0": self.s0}


@dataclass(frozen=True)
class Step(ScalarUtility):
    """0 at or above the threshold, -penalty below it. An infinite penalty is allowed."""

    form: ClassVar[str] = "step"
    threshold: float = 0.5
    penalty: float = POS_INF

    def __post_init__(self):
        if not RATING_SCALE[0] <= self.threshold <= RATING_SCALE[1]:
            raise InputError(f"step threshold must lie in [0, 1], got {self.threshold}")
        if not self.penalty >= 0:
            raise InputError(f"step penalty must lie in [0, inf], got {self.penalty}")
        object.__setattr__(self, "domain", RATING_SCALE)

    def _evaluate(self, s):
        return np.where(s >= self.threshold, 0.0, -self.penalty)

    def to_config(self):
        return {"form": self.form, "threshold": self.threshold, "penalty": self.penalty}


@dataclass(frozen=True)
class SShaped(ScalarUtility):
    """
    Prospect-theory style utility around a reference rating s0:
    (s - s0)^gamma above s0 and -loss_aversion * |s - s0|^gamma below.
    """

    form: ClassVar[str] = "s_shaped"
    s0: float = 0.5
    gamma: float = 0.88
    loss_aversion: float = 2.25

    def __post_init__(self):
        if not RATING_SCALE[0] <= self.s0 <= RATING_SCALE[1]:
            raise InputError(f"reference point s0 must lie in [0, 1], got {self.s0}")
        if not 0 < self.gamma <= 1:
            raise InputError(f"s-shaped exponent must lie in (0, 1], got {self.gamma}")
        if not self.loss_aversion >= 0:
            raise InputError(f"loss aversion must be non-negative, got {self.loss_aversion}")
        object.__setattr__(self, "domain", RATING_SCALE)

    def _evaluate(self, s):
        gap = np.abs(s - self.s0) ** self.gamma
        return np.where(s >= self.s0, gap, -self.loss_aversion * gap)

    def to_config(self):
        return {"form": self.form, "s0": self.s0, "gamma": self.gamma, "lambda": self.loss_aversion}


SCALAR_FORMS: dict[str, type[ScalarUtility]] = {
    cls.form: cls for cls in (Exponential, Linear, ScaledShiftedExponential, Step, SShaped)
}
FINANCIAL_FORMS = {"exponential", "linear"}


def eval_scalar(u: ScalarUtility, x: ArrayLike):
    return u(x)


@dataclass(frozen=True)
class MultiUtility:
    """
    u(x, s) = u1(x) + u2(s) + k * u1(x) * u2(s).

    When `capped`, u is NEG_INF outside the effective domain
    {1 + k*u1(x) in [0, inf) and 1 + k*u2(s) in [0, inf)}.
    """

    u1: ScalarUtility
    u2: ScalarUtility
    k: float = 0.0
    capped: bool = False

    def __post_init__(self):
        if not math.isfinite(self.k):
            raise InputError(f"interaction coefficient k must be finite, got {self.k}")

    def __call__(self, x: ArrayLike, s: ArrayLike):
        values = self.compose(self.u1(x), self.u2(s))
        if np.ndim(x) == 0 and np.ndim(s) == 0:
            return float(values)
        return values

    def factor(self, v: ArrayLike) -> np.ndarray:
        """The linear transformation 1 + k*v of a single-attribute value."""
        return 1.0 + ext_mul(self.k, v)

    def compose(self, v1: ArrayLike, v2: ArrayLike) -> np.ndarray:
        """Combine already evaluated u1 and u2 values."""
        value = ext_add(v1, v2, ext_mul(self.k, ext_mul(v1, v2)))
        if not self.capped:
            return value
        f1, f2 = self.factor(v1), self.factor(v2)
        inside = np.isfinite(f1) & (f1 >= 0) & np.isfinite(f2) & (f2 >= 0)
        return np.where(inside, value, NEG_INF)


def eval_multi(U: MultiUtility, x: ArrayLike, s: ArrayLike):
    return U(x, s)


def entropic_esg_utility(
    gamma1: float = 1.0,
    gamma2: float = 0.75,
    c: float = 0.1,
    k: float = 1.0,
    s0: float = 0.5982,
    capped: bool = False,
) -> MultiUtility:
    """
    The (capped) entropic ESG utility; defaults are the reference parameter set.
    """
    return MultiUtility(
        u1=Exponential(gamma=gamma1),
        u2=ScaledShiftedExponential(gamma=gamma2, c=c, s0=s0),
        k=k,
        capped=capped,
    )


def effective_domain_bounds(U: MultiUtility) -> tuple[float, float]:
    """
    Closed-form lower bounds (x_min, s_min) of the effective domain for
    exponential parts and k > 0.
    """
    if not isinstance(U.u1, Exponential) or not isinstance(U.u2, ScaledShiftedExponential):
        raise UnsupportedError(
            f"effective domain bounds need exponential parts, got {U.u1.form} and {U.u2.form}"
        )
    if not U.k > 0:
        raise UnsupportedError(f"effective domain bounds need k > 0, got {U.k}")

    g1, g2 = U.u1.gamma, U.u2.gamma
    x_min = -math.log1p(g1 / U.k) / g1
    if U.u2.c == 0:
        s_min = NEG_INF
    else:
        s_min = -math.log1p(g2 / (U.u2.c * U.k)) / g2 + U.u2.s0
    return x_min, s_min


@dataclass(frozen=True, eq=False)
class MonotonicityReport:
    x_grid: np.ndarray
    s_grid: np.ndarray
    # monotone_in_x[j]: u(., s_j) is non-decreasing; monotone_in_s[i]: u(x_i, .) is
    monotone_in_x: np.ndarray
    monotone_in_s: np.ndarray

    @property
    def is_monotone(self) -> bool:
        return bool(np.all(self.monotone_in_x) and np.all(self.monotone_in_s))

    def grid(self) -> np.ndarray:
        """Boolean grid over (x_grid, s_grid) where u is monotone in both arguments."""
        return self.monotone_in_s[:, None] & self.monotone_in_x[None, :]


def _admissible_factor(f: np.ndarray) -> np.ndarray:
    return np.isneginf(f) | (f >= 0)


def monotonicity_report(U: MultiUtility, x_grid: ArrayLike, s_grid: ArrayLike) -> MonotonicityReport:
    x_grid = np.atleast_1d(np.asarray(x_grid, dtype=float))
    s_grid = np.atleast_1d(np.asarray(s_grid, dtype=float))
    in_x = _admissible_factor(U.factor(U.u2(s_grid)))
    in_s = _admissible_factor(U.factor(U.u1(x_grid)))
    if U.capped:
        # the canonical construction is monotone everywhere
        in_x = np.ones_like(in_x)
        in_s = np.ones_like(in_s)
    return MonotonicityReport(x_grid, s_grid, in_x, in_s)


# Flat key-value serialisation
_PARAM_KEYS = {
    "exponential": {"gamma": "gamma"},
    "linear": {},
    "scaled_shifted_exponential": {"gamma": "gamma", "c": "c", "s0": "s0"},
    "step": {"threshold": "threshold", "penalty": "penalty"},
    "s_shaped": {"s0": "s0", "gamma": "gamma", "lambda": "loss_aversion"},
}


def _scalar_from_config(prefix: str, config: Mapping[str, Any]) -> ScalarUtility:
    form = str(config.get(f"{prefix}.form", "exponential" if prefix == "u1" else "scaled_shifted_exponential"))
    if form not in SCALAR_FORMS:
        raise InputError(f"unknown utility form '{form}' for {prefix}.form")
    if prefix == "u1" and form not in FINANCIAL_FORMS:
        raise UnsupportedError(f"financial utility u1 must be one of {sorted(FINANCIAL_FORMS)}, got '{form}'")

    kwargs = {}
    for key, attr in _PARAM_KEYS[form].items():
        value = config.get(f"{prefix}.{key}")
        if value is not None:
            kwargs[attr] = float(value)
    return SCALAR_FORMS[form](**kwargs)


def utility_from_config(config: Mapping[str, Any]) -> MultiUtility:
    """
    Build a MultiUtility from flat keys: u1.form, u1.gamma, u2.form, u2.gamma, u2.c,
    u2.s0 (plus u2.threshold, u2.penalty, u2.lambda for the other forms), k, capped.
    Missing keys fall back to the reference entropic ESG parameters.
    """
    capped = config.get("capped", False)
    if isinstance(capped, str):
        capped = capped.strip().lower() in ("1", "true", "yes", "on")
    return MultiUtility(
        u1=_scalar_from_config("u1", config),
        u2=_scalar_from_config("u2", config),
        k=float(config.get("k", 1.0)),
        capped=bool(capped),
    )


def utility_to_config(U: MultiUtility) -> dict[str, Any]:
    config: dict[str, Any] = {}
    for prefix, part in (("u1", U.u1), ("u2", U.u2)):
        for key, value in part.to_config().items():
            config[f"{prefix}.{key}"] = value
    config["k"] = U.k
    config["capped"] = U.capped
    return config
