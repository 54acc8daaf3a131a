"""
Run configuration: flat `section.key=value` files or nested YAML, validated into RunConfig.
"""
import logging
import re
from os import PathLike
from pathlib import Path
from typing import Any, Mapping

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from esgrisk.utils.backtest_tools import STRATEGIES, parse_strategies
from esgrisk.utils.errors import ConfigError, EsgRiskError
from esgrisk.utils.portfolio_tools import FeasibleSet, OptimizerConfig
from esgrisk.utils.risk_tools import RiskConfig
from esgrisk.utils.utility_tools import MultiUtility, utility_from_config, utility_to_config

logger = logging.getLogger(__name__)

YAML_SUFFIXES = {".yaml", ".yml"}
_FRACTION = re.compile(r"^\s*([-+]?\d+(?:\.\d*)?)\s*/\s*(\d+(?:\.\d*)?)\s*$")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class ScalarSection(_Section):
    form: str
    gamma: float | None = None
    c: float | None = None
    s0: float | None = None
    threshold: float | None = None
    penalty: float | None = None
    loss_aversion: float | None = Field(default=None, alias="lambda")


class UtilitySection(_Section):
    u1: ScalarSection = ScalarSection(form="exponential", gamma=1.0)
    u2: ScalarSection = ScalarSection(form="scaled_shifted_exponential", gamma=0.75, c=0.1, s0=0.5982)
    k: float = 1.0
    capped: bool = False


class SimSection(_Section):
    horizon: float = Field(default=1.0 / 12.0, gt=0)
    samples: int = Field(default=10_000, ge=1)
    seed: int = Field(default=0, ge=0)


class RiskSection(_Section):
    root_tol: float = Field(default=1e-10, gt=0)
    bracket_seed: float = Field(default=1.0, gt=0)
    bracket_cap: float = Field(default=1e9, gt=0)
    max_iter: int = Field(default=500, ge=1)


class PortfolioSection(_Section):
    lower: float = 0.0
    upper: float = 0.2
    budget: float = 1.0
    window: int = Field(default=20, ge=2)
    strategies: str = ",".join(STRATEGIES)
    multistarts: int = Field(default=8, ge=1)
    opt_tol: float = Field(default=1e-6, gt=0)
    max_iter: int = Field(default=200, ge=1)
    fd_step: float = Field(default=1e-5, gt=0)

    @field_validator("strategies", mode="before")
    @classmethod
    def _check_strategies(cls, value):
        try:
            return ",".join(parse_strategies(value))
        except EsgRiskError as e:
            raise ValueError(str(e)) from e


class IoSection(_Section):
    prices: Path | None = None
    ratings: Path | None = None
    dynamics: Path | None = None
    out: Path = Path("out")


class RunConfig(_Section):
    utility: UtilitySection = UtilitySection()
    sim: SimSection = SimSection()
    risk: RiskSection = RiskSection()
    portfolio: PortfolioSection = PortfolioSection()
    io: IoSection = IoSection()

    @classmethod
    def from_flat(cls, flat: Mapping[str, Any]) -> "RunConfig":
        """
        Validate flat keys such as `u2.gamma`, `k`, `sim.samples`. Unknown keys are
        rejected by name.
        """
        nested: dict[str, Any] = {}
        for key, value in flat.items():
            parts = key.split(".")
            if parts[0] in ("u1", "u2", "k", "capped"):
                parts = ["utility", *parts]
            if parts[0] not in cls.model_fields or len(parts) > 3 or (len(parts) == 3 and parts[0] != "utility"):
                raise ConfigError(f"unknown config key '{key}'")
            node = nested
            for part in parts[:-1]:
                node = node.setdefault(part, {})
                if not isinstance(node, dict):
                    raise ConfigError(f"unknown config key '{key}'")
            node[parts[-1]] = value

        # a partly given utility part keeps its default form; missing parameters fall back
        # to the form's own defaults
        for prefix in ("u1", "u2"):
            part = nested.get("utility", {}).get(prefix)
            if isinstance(part, dict):
                part.setdefault("form", getattr(UtilitySection(), prefix).form)

        try:
            return cls.model_validate(nested)
        except ValidationError as e:
            error = e.errors()[0]
            key = _flat_key(error["loc"])
            raise ConfigError(f"invalid config key '{key}': {error['msg']}") from e

    def utility_config(self) -> dict[str, Any]:
        flat: dict[str, Any] = {"k": self.utility.k, "capped": self.utility.capped}
        for prefix in ("u1", "u2"):
            part = getattr(self.utility, prefix)
            for name, value in part.model_dump(by_alias=True).items():
                if value is not None:
                    flat[f"{prefix}.{name}"] = value
        return flat

    def build_utility(self) -> MultiUtility:
        try:
            return utility_from_config(self.utility_config())
        except EsgRiskError as e:
            raise ConfigError(f"invalid utility configuration: {e}") from e

    def risk_config(self) -> RiskConfig:
        return RiskConfig(**self.risk.model_dump())

    def optimizer_config(self) -> OptimizerConfig:
        p = self.portfolio
        return OptimizerConfig(multistarts=p.multistarts, opt_tol=p.opt_tol, max_iter=p.max_iter, fd_step=p.fd_step)

    def feasible_set(self, n: int) -> FeasibleSet:
        p = self.portfolio
        return FeasibleSet(n, lower=p.lower, upper=p.upper, budget=p.budget)

    def with_overrides(self, seed: int | None = None, samples: int | None = None, out: Path | None = None) -> "RunConfig":
        flat = self.to_flat()
        if seed is not None:
            flat["sim.seed"] = seed
        if samples is not None:
            flat["sim.samples"] = samples
        if out is not None:
            flat["io.out"] = str(out)
        return RunConfig.from_flat(flat)

    def to_flat(self) -> dict[str, Any]:
        flat = utility_to_config(self.build_utility())
        for section in ("sim", "risk", "portfolio", "io"):
            for name, value in getattr(self, section).model_dump().items():
                if value is not None:
                    flat[f"{section}.{name}"] = str(value) if isinstance(value, Path) else value
        return flat


def _flat_key(loc: tuple) -> str:
    parts = [str(p) for p in loc]
    if parts and parts[0] == "utility":
        parts = parts[1:]
    return ".".join(parts) or "<root>"


def _coerce(text: str) -> Any:
    match = _FRACTION.match(text)
    if match:
        return float(match.group(1)) / float(match.group(2))
    value = yaml.safe_load(text) if text.strip() else None
    if isinstance(value, str) and value.strip().lower() in ("inf", "+inf", "infinity"):
        return float("inf")
    return value


def _flatten(mapping: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    flat = {}
    for key, value in mapping.items():
        name = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(_flatten(value, f"{name}."))
        else:
            flat[name] = _coerce(value) if isinstance(value, str) else value
    return flat


def _read_flat(text: str, label: str) -> dict[str, Any]:
    settings = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{label} line {number}: expected 'key=value', got '{line}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{label} line {number}: empty key")
        if key in settings:
            raise ConfigError(f"{label} line {number}: duplicate key '{key}'")
        settings[key] = _coerce(value)
    return settings


def load_settings(file_path: str | PathLike | None = None) -> RunConfig:
    """
    Load a run configuration; no path gives the defaults.
    """
    if file_path is None:
        return RunConfig()
    path = Path(file_path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix.lower() in YAML_SUFFIXES:
        try:
            loaded = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path.name}: invalid YAML: {e}") from e
        if not isinstance(loaded, Mapping):
            raise ConfigError(f"{path.name}: top level must be a mapping")
        flat = _flatten(loaded)
    else:
        flat = _read_flat(text, path.name)
    logger.debug(f"Loaded {len(flat)} settings from {path}")
    return RunConfig.from_flat(flat)


def write_flat(flat: Mapping[str, Any], file_path: str | PathLike) -> Path:
    """Write key=value lines in the given key order."""
    path = Path(file_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for key, value in flat.items():
        if isinstance(value, bool):
            value = str(value).lower()
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key}={value}")
    path.write_text("\n".join(lines) + "\n")
    return path


def save_settings(config: RunConfig, file_path: str | PathLike) -> Path:
    return write_flat(config.to_flat(), file_path)
