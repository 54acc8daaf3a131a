"""
Rating transforms and Monte Carlo generation of joint (financial exposure,
normalized ESG rating) scenarios.

Per asset i and sample:
    R_X = mu_X * dt + sqrt(dt) * Z1,    R_S = J_S * (mu_S * dt + sqrt(dt) * Z2)
    X = N * (exp(R_X) - 1),             S_norm = (2 / pi) * arctan(S0_rescaled * exp(R_S))

The normals (Z1^1, Z2^1, ..., Z1^n, Z2^n) are jointly Gaussian. The jump indicators
J_S^i come from a Gaussian copula, drawn independently of Z.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike
from scipy import linalg
from scipy.stats import norm

from esgrisk.utils.errors import InputError

logger = logging.getLogger(__name__)

RAW_RATING_MAX = 50.0
MONTHLY = 1.0 / 12.0
PSD_TOLERANCE = 1e-10


def normalize_rating(raw: ArrayLike):
    """
    Map a raw 0-50 risk score (0 = best) to the normalized [0, 1] scale (1 = best).
    """
    values = np.asarray(raw, dtype=float)
    if np.any(np.isnan(values)) or np.any((values < 0) | (values > RAW_RATING_MAX)):
        raise InputError(f"raw ratings must lie in [0, {RAW_RATING_MAX:g}]")
    result = (RAW_RATING_MAX - values) / RAW_RATING_MAX
    return float(result) if np.ndim(raw) == 0 else result


def rescale_rating(s_norm: ArrayLike):
    """
    Map a normalized rating in [0, 1) onto [0, inf) via tan(pi/2 * s).
    """
    values = np.asarray(s_norm, dtype=float)
    if np.any(np.isnan(values)) or np.any((values < 0) | (values >= 1)):
        raise InputError("normalized ratings must lie in [0, 1) to be rescaled")
    result = np.tan(0.5 * np.pi * values)
    return float(result) if np.ndim(s_norm) == 0 else result


def unscale_rating(s_rescaled: ArrayLike):
    """Inverse of `rescale_rating`."""
    result = (2.0 / np.pi) * np.arctan(np.asarray(s_rescaled, dtype=float))
    return float(result) if np.ndim(s_rescaled) == 0 else result


@dataclass(frozen=True)
class AssetDynamics:
    mu_x: float
    sigma_x: float
    mu_s: float = 0.0
    sigma_s: float = 0.0
    rho: float = 0.0
    p: float = 0.0
    s0_rescaled: float = 1.0
    notional: float = 1.0
    name: str = "asset"

    def __post_init__(self):
        problems = []
        if not (math.isfinite(self.mu_x) and math.isfinite(self.mu_s)):
            problems.append("mean returns must be finite")
        if not self.sigma_x > 0:
            problems.append(f"sigma_x must be > 0 (got {self.sigma_x})")
        if not self.sigma_s >= 0:
            problems.append(f"sigma_s must be >= 0 (got {self.sigma_s})")
        if not -1 <= self.rho <= 1:
            problems.append(f"rho must lie in [-1, 1] (got {self.rho})")
        if not 0 <= self.p <= 1:
            problems.append(f"p must lie in [0, 1] (got {self.p})")
        if not (self.s0_rescaled > 0 and math.isfinite(self.s0_rescaled)):
            problems.append(f"s0_rescaled must be a positive real (got {self.s0_rescaled})")
        if not self.notional > 0:
            problems.append(f"notional must be > 0 (got {self.notional})")
        if problems:
            raise InputError(f"invalid dynamics for {self.name}: " + "; ".join(problems))

    @property
    def s0_norm(self) -> float:
        return unscale_rating(self.s0_rescaled)


def _check_correlation(matrix: np.ndarray, label: str, size: int) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape != (size, size):
        raise InputError(f"{label} must have shape ({size}, {size}), got {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise InputError(f"{label} contains non-finite entries")
    if not np.allclose(matrix, matrix.T, atol=1e-12):
        raise InputError(f"{label} is not symmetric")
    if not np.allclose(np.diag(matrix), 1.0, atol=1e-12):
        raise InputError(f"{label} must have a unit diagonal")
    if np.any(np.abs(matrix) > 1 + 1e-12):
        raise InputError(f"{label} has entries outside [-1, 1]")
    if linalg.eigvalsh(matrix).min() < -PSD_TOLERANCE:
        raise InputError(f"{label} is not positive semidefinite")
    return matrix


def psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix, clipping tiny negative eigenvalues."""
    eigenvalues, eigenvectors = linalg.eigh(matrix)
    eigenvalues = np.clip(eigenvalues, 0.0, None)
    return (eigenvectors * np.sqrt(eigenvalues)) @ eigenvectors.T


def nearest_correlation(matrix: np.ndarray) -> np.ndarray:
    """
    Repair an estimated correlation matrix: clip negative eigenvalues and rescale to a
    unit diagonal.
    """
    matrix = 0.5 * (np.asarray(matrix, dtype=float) + np.asarray(matrix, dtype=float).T)
    eigenvalues, eigenvectors = linalg.eigh(matrix)
    if eigenvalues.min() >= 0:
        return matrix
    repaired = (eigenvectors * np.clip(eigenvalues, 0.0, None)) @ eigenvectors.T
    scale = np.sqrt(np.clip(np.diag(repaired), 1e-300, None))
    repaired = repaired / np.outer(scale, scale)
    np.fill_diagonal(repaired, 1.0)
    return np.clip(repaired, -1.0, 1.0)


@dataclass(frozen=True, eq=False)
class BasketDynamics:
    assets: tuple[AssetDynamics, ...]
    z_correlation: np.ndarray
    jump_correlation: np.ndarray

    def __post_init__(self):
        n = len(self.assets)
        if n == 0:
            raise InputError("a basket needs at least one asset")
        object.__setattr__(self, "assets", tuple(self.assets))
        z = _check_correlation(self.z_correlation, "z_correlation", 2 * n)
        jumps = _check_correlation(self.jump_correlation, "jump_correlation", n)
        for i, asset in enumerate(self.assets):
            if abs(z[2 * i, 2 * i + 1] - asset.rho) > 1e-9:
                raise InputError(
                    f"z_correlation block of {asset.name} has off-diagonal "
                    f"{z[2 * i, 2 * i + 1]:.6g}, expected rho={asset.rho:.6g}"
                )
        object.__setattr__(self, "z_correlation", z)
        object.__setattr__(self, "jump_correlation", jumps)

    @classmethod
    def independent(cls, assets) -> "BasketDynamics":
        """Assets independent of each other; only the own-asset rho couples Z1 and Z2."""
        assets = tuple(assets)
        z = np.eye(2 * len(assets))
        for i, asset in enumerate(assets):
            z[2 * i, 2 * i + 1] = z[2 * i + 1, 2 * i] = asset.rho
        return cls(assets, z, np.eye(len(assets)))

    @property
    def n(self) -> int:
        return len(self.assets)

    @property
    def names(self) -> list[str]:
        return [asset.name for asset in self.assets]


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    """
    M joint samples of (X, S_norm) for n assets; `x` and `s_norm` have shape (M, n).
    """

    x: np.ndarray
    s_norm: np.ndarray
    horizon: float = MONTHLY
    seed: int | None = None
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        s = np.array(self.s_norm, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if s.ndim == 1:
            s = s[:, None]
        if x.shape != s.shape:
            raise InputError(f"x and s_norm shapes differ: {x.shape} vs {s.shape}")
        if x.shape[0] == 0:
            raise InputError("scenario set is empty")
        if not np.all(np.isfinite(x)):
            raise InputError("financial exposures must be finite")
        if np.any(np.isnan(s)) or np.any((s < 0) | (s > 1)):
            raise InputError("normalized ratings must lie in [0, 1]")
        x.setflags(write=False)
        s.setflags(write=False)
        names = tuple(self.names) or tuple(f"asset{i}" for i in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise InputError(f"{len(names)} names for {x.shape[1]} assets")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "s_norm", s)
        object.__setattr__(self, "names", names)

    @property
    def count(self) -> int:
        return self.x.shape[0]

    @property
    def n_assets(self) -> int:
        return self.x.shape[1]

    def asset_index(self, asset: int | str) -> int:
        if isinstance(asset, str):
            if asset not in self.names:
                raise InputError(f"unknown asset '{asset}'")
            return self.names.index(asset)
        if not -self.n_assets <= asset < self.n_assets:
            raise InputError(f"asset index {asset} out of range for {self.n_assets} assets")
        return asset % self.n_assets

    def position(self, asset: int | str | None = None) -> tuple[np.ndarray, np.ndarray]:
        """The 1-d sample arrays (X, S_norm) of a single position."""
        if asset is None:
            if self.n_assets != 1:
                raise InputError(f"scenario set holds {self.n_assets} assets; choose one")
            asset = 0
        i = self.asset_index(asset)
        return self.x[:, i], self.s_norm[:, i]

    def select(self, asset: int | str) -> "ScenarioSet":
        x, s = self.position(asset)
        return ScenarioSet(x, s, self.horizon, self.seed, (self.names[self.asset_index(asset)],))

    def shifted(self, cash: float = 0.0, rating: float = 0.0) -> "ScenarioSet":
        """Add deterministic cash to X and a rating shift to S, clamping S to [0, 1]."""
        return ScenarioSet(
            self.x + cash,
            np.clip(self.s_norm + rating, 0.0, 1.0),
            self.horizon,
            self.seed,
            self.names,
        )


def draw_log_changes(dyn: BasketDynamics, horizon: float, count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """
    Draw `count` rows of (R_X, R_S), each of shape (count, n). Per sample the stream holds
    the 2n return normals first, then the n latent jump normals.
    """
    if count < 1:
        raise InputError(f"sample count must be >= 1, got {count}")
    if not horizon > 0:
        raise InputError(f"horizon must be > 0, got {horizon}")

    n = dyn.n
    draws = rng.standard_normal((count, 3 * n))

    sigma = np.empty(2 * n)
    sigma[0::2] = [a.sigma_x for a in dyn.assets]
    sigma[1::2] = [a.sigma_s for a in dyn.assets]
    covariance = dyn.z_correlation * np.outer(sigma, sigma)
    z = draws[:, : 2 * n] @ psd_sqrt(covariance)
    latent = draws[:, 2 * n :] @ psd_sqrt(dyn.jump_correlation)

    mu_x = np.array([a.mu_x for a in dyn.assets])
    mu_s = np.array([a.mu_s for a in dyn.assets])
    thresholds = norm.ppf([a.p for a in dyn.assets])
    jumps = latent <= thresholds

    root_dt = math.sqrt(horizon)
    r_x = mu_x * horizon + root_dt * z[:, 0::2]
    r_s = np.where(jumps, mu_s * horizon + root_dt * z[:, 1::2], 0.0)
    return r_x, r_s


def sample_basket(dyn: BasketDynamics, horizon: float = MONTHLY, count: int = 10_000, seed: int | None = None) -> ScenarioSet:
    r_x, r_s = draw_log_changes(dyn, horizon, count, np.random.default_rng(seed))

    notional = np.array([a.notional for a in dyn.assets])
    s0 = np.array([a.s0_rescaled for a in dyn.assets])
    x = notional * np.expm1(r_x)
    with np.errstate(over="ignore"):
        s_norm = unscale_rating(s0 * np.exp(r_s))

    logger.debug(f"Sampled {count} scenarios for {dyn.n} assets (seed={seed})")
    return ScenarioSet(x, s_norm, horizon, seed, tuple(dyn.names))


def sample_single(dyn: AssetDynamics, horizon: float = MONTHLY, count: int = 10_000, seed: int | None = None) -> ScenarioSet:
    return sample_basket(BasketDynamics.independent([dyn]), horizon, count, seed)


# Vendor risk categories on the raw scale, closed on the left
RISK_CATEGORIES = ("Negligible", "Low", "Medium", "High", "Severe")
CATEGORY_EDGES = (0.0, 10.0, 20.0, 30.0, 40.0, math.inf)


def categorize_ratings(raw: ArrayLike) -> pd.Categorical:
    values = np.atleast_1d(np.asarray(raw, dtype=float))
    if np.any(np.isnan(values)) or np.any((values < 0) | (values > RAW_RATING_MAX)):
        raise InputError(f"raw ratings must lie in [0, {RAW_RATING_MAX:g}]")
    return pd.cut(values, bins=CATEGORY_EDGES, labels=RISK_CATEGORIES, right=False)
