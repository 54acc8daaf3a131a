import hashlib
import json
import logging
from os import PathLike
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd

from esgrisk.utils.calibration_tools import DynamicsEstimate, HistoricalSeries
from esgrisk.utils.errors import InputError, SchemaError
from esgrisk.utils.scenario_tools import RAW_RATING_MAX, AssetDynamics, ScenarioSet

logger = logging.getLogger(__name__)

# Fixed float rendering keeps exports byte-identical across runs
FLOAT_FORMAT = "%.10g"

DYNAMICS_COLUMNS = ["asset", "mu_x", "sigma_x", "mu_s", "sigma_s", "rho", "p", "s0_rescaled"]
SCENARIO_COLUMNS = ["sample", "asset", "x", "s_norm"]

# Header line is line 1, so data row i sits on line i + 2
_FIRST_DATA_LINE = 2


# Helper function to compute a file hash for the run manifest
def compute_file_hash(path: str | PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def _read_raw(path: str | PathLike) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise InputError(f"file not found: {path}")
    try:
        # header=None keeps duplicate column names as written
        table = pd.read_csv(path, dtype=str, keep_default_na=False, header=None)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise SchemaError(f"{path.name}: cannot parse CSV: {e}") from e
    frame = table.iloc[1:].reset_index(drop=True)
    frame.columns = [str(c) for c in table.iloc[0]]
    return frame


def _parse_numbers(frame: pd.DataFrame, columns: Iterable[str], label: str) -> pd.DataFrame:
    parsed = {}
    for column in columns:
        raw = frame[column].str.strip()
        values = pd.to_numeric(raw, errors="coerce")
        bad = values.isna() | ~np.isfinite(values.fillna(0.0))
        if bad.any():
            i = int(np.flatnonzero(bad.to_numpy())[0])
            text = raw.iloc[i]
            problem = "missing value" if text == "" else f"not a finite number: '{text}'"
            raise SchemaError(f"{label}: {problem}", row=i + _FIRST_DATA_LINE, column=column)
        parsed[column] = values.astype(float)
    return pd.DataFrame(parsed, index=frame.index)


# Read one wide monthly file: date,TICKER1,TICKER2,...
def read_monthly_frame(path: str | PathLike) -> pd.DataFrame:
    label = Path(path).name
    raw = _read_raw(path)
    columns = [c.strip() for c in raw.columns]
    raw.columns = columns
    if not columns or columns[0] != "date":
        raise SchemaError(f"{label}: first column must be 'date'", row=1, column=columns[0] if columns else None)
    tickers = columns[1:]
    if not tickers:
        raise SchemaError(f"{label}: no asset columns after 'date'", row=1)
    duplicates = sorted({t for t in tickers if tickers.count(t) > 1})
    if duplicates:
        raise SchemaError(f"{label}: duplicate asset column", row=1, column=duplicates[0])
    if raw.empty:
        raise SchemaError(f"{label}: no data rows")

    dates = pd.to_datetime(raw["date"].str.strip(), format="%Y-%m-%d", errors="coerce")
    for i, (text, date) in enumerate(zip(raw["date"], dates)):
        if pd.isna(date):
            raise SchemaError(f"{label}: not an ISO-8601 date: '{text}'", row=i + _FIRST_DATA_LINE, column="date")
        if date.day != 1:
            raise SchemaError(f"{label}: dates must be month starts, got '{text}'", row=i + _FIRST_DATA_LINE, column="date")
        if i > 0 and date != dates.iloc[i - 1] + pd.offsets.MonthBegin(1):
            raise SchemaError(f"{label}: dates must be consecutive ascending months", row=i + _FIRST_DATA_LINE, column="date")

    values = _parse_numbers(raw, tickers, label)
    values.index = pd.DatetimeIndex(dates, name="date")
    return values


def _check_cells(frame: pd.DataFrame, bad: pd.DataFrame, label: str, message: str):
    if bad.to_numpy().any():
        i, j = np.argwhere(bad.to_numpy())[0]
        raise SchemaError(f"{label}: {message}", row=int(i) + _FIRST_DATA_LINE, column=frame.columns[j])


def read_history(prices_path: str | PathLike, ratings_path: str | PathLike) -> HistoricalSeries:
    """
    Load `prices.csv` and `ratings.csv` into a HistoricalSeries. Schema violations are
    reported with the file line and column.
    """
    prices = read_monthly_frame(prices_path)
    ratings = read_monthly_frame(ratings_path)
    prices_label, ratings_label = Path(prices_path).name, Path(ratings_path).name

    _check_cells(prices, prices <= 0, prices_label, "prices must be positive")
    _check_cells(ratings, (ratings < 0) | (ratings > RAW_RATING_MAX), ratings_label, f"raw ratings must lie in [0, {RAW_RATING_MAX:g}]")

    if list(prices.columns) != list(ratings.columns):
        missing = [c for c in prices.columns if c not in ratings.columns] or [c for c in ratings.columns if c not in prices.columns]
        column = missing[0] if missing else None
        raise SchemaError(f"{ratings_label}: asset columns differ from {prices_label}", row=1, column=column)
    if not prices.index.equals(ratings.index):
        line = _first_mismatch(prices.index, ratings.index) + _FIRST_DATA_LINE
        raise SchemaError(f"{ratings_label}: dates differ from {prices_label}", row=line, column="date")

    logger.info(f"Loaded {len(prices)} months for {prices.shape[1]} assets from {prices_label} and {ratings_label}")
    return HistoricalSeries(prices, ratings)


def _first_mismatch(a: pd.Index, b: pd.Index) -> int:
    for i, (left, right) in enumerate(zip(a, b)):
        if left != right:
            return i
    return min(len(a), len(b))


# Dynamics table: asset,mu_x,sigma_x,mu_s,sigma_s,rho,p,s0_rescaled
def dynamics_frame(dynamics: Iterable[AssetDynamics]) -> pd.DataFrame:
    rows = [
        {
            "asset": d.name,
            "mu_x": d.mu_x,
            "sigma_x": d.sigma_x,
            "mu_s": d.mu_s,
            "sigma_s": d.sigma_s,
            "rho": d.rho,
            "p": d.p,
            "s0_rescaled": d.s0_rescaled,
        }
        for d in dynamics
    ]
    return pd.DataFrame(rows, columns=DYNAMICS_COLUMNS)


def estimates_frame(estimates: Iterable[DynamicsEstimate], unconditional: bool = False) -> pd.DataFrame:
    estimates = list(estimates)
    frame = dynamics_frame(e.dynamics for e in estimates)
    if unconditional:
        frame["rho_unconditional"] = [e.rho_unconditional for e in estimates]
    return frame


def read_dynamics(path: str | PathLike) -> list[AssetDynamics]:
    label = Path(path).name
    raw = _read_raw(path)
    raw.columns = [c.strip() for c in raw.columns]
    missing = [c for c in DYNAMICS_COLUMNS if c not in raw.columns]
    if missing:
        raise SchemaError(f"{label}: missing column", row=1, column=missing[0])
    if raw.empty:
        raise SchemaError(f"{label}: no data rows")

    values = _parse_numbers(raw, DYNAMICS_COLUMNS[1:], label)
    names = raw["asset"].str.strip()
    dynamics = []
    for i, name in enumerate(names):
        if not name:
            raise SchemaError(f"{label}: empty asset name", row=i + _FIRST_DATA_LINE, column="asset")
        row = values.iloc[i]
        try:
            dynamics.append(AssetDynamics(name=name, **{c: float(row[c]) for c in DYNAMICS_COLUMNS[1:]}))
        except InputError as e:
            raise SchemaError(f"{label}: {e}", row=i + _FIRST_DATA_LINE) from e
    if len(set(names)) != len(names):
        raise SchemaError(f"{label}: duplicate asset names", column="asset")
    return dynamics


def scenarios_frame(scen: ScenarioSet) -> pd.DataFrame:
    """Long format, sample-major: one row per (sample, asset)."""
    m, n = scen.x.shape
    return pd.DataFrame(
        {
            "sample": np.repeat(np.arange(m), n),
            "asset": np.tile(np.asarray(scen.names, dtype=object), m),
            "x": scen.x.ravel(),
            "s_norm": scen.s_norm.ravel(),
        },
        columns=SCENARIO_COLUMNS,
    )


def write_frame(frame: pd.DataFrame, path: str | PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def write_json(payload: dict, path: str | PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True, allow_nan=True)
        f.write("\n")
    return path


def write_run_manifest(out_dir: str | PathLike, command: str, inputs: Iterable[str | PathLike], config: dict) -> Path:
    """
    Record the command, the flat configuration and the SHA-256 of every input file next
    to the outputs.
    """
    payload = {
        "command": command,
        "config": config,
        "inputs": {Path(p).name: compute_file_hash(p) for p in inputs},
    }
    return write_json(payload, Path(out_dir) / "run.json")
