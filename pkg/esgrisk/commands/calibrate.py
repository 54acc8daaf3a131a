import logging
from dataclasses import replace
from pathlib import Path

from tqdm import tqdm

from esgrisk.commands import RunContext
from esgrisk.utils.calibration_tools import (
    IndifferenceSpec,
    baseline_from_median,
    calibrate_gamma2,
    describe_ratings,
    describe_returns,
    estimate_dynamics,
)
from esgrisk.utils.errors import InputError
from esgrisk.utils.ingestion_tools import estimates_frame, read_history, write_frame, write_run_manifest
from esgrisk.utils.settings_tools import write_flat
from esgrisk.utils.utility_tools import ScaledShiftedExponential, utility_to_config

logger = logging.getLogger(__name__)


def _indifference_spec(values: tuple[float | None, float | None, float | None]) -> IndifferenceSpec | None:
    given = [v is not None for v in values]
    if not any(given):
        return None
    if not all(given):
        raise InputError("--s-low, --s-high and --p-low must be given together")
    s_low, s_high, p_low = values
    return IndifferenceSpec(s_low=s_low, s_high=s_high, p_low=p_low)


def run(
    ctx: RunContext,
    prices: Path,
    ratings: Path,
    unconditional: bool = False,
    indifference: tuple[float | None, float | None, float | None] = (None, None, None),
) -> dict[str, Path]:
    """
    Writes dynamics.csv, utility.cfg (baseline s0 from the median current rating and,
    when an indifference position is given, the calibrated gamma2), rating_summary.csv,
    category_counts.csv and return_summary.csv.
    """
    history = read_history(prices, ratings)
    spec = _indifference_spec(indifference)
    U = ctx.settings.build_utility()
    if ctx.dry_run:
        return {}

    estimates = [
        estimate_dynamics(history, asset, conditional=not unconditional, horizon=ctx.settings.sim.horizon)
        for asset in tqdm(history.assets, desc="Calibrating", disable=not ctx.progress)
    ]
    for estimate in estimates:
        logger.info(
            f"{estimate.dynamics.name}: {estimate.change_months}/{estimate.months} change months, "
            f"mu_x={estimate.dynamics.mu_x:.4f}, sigma_x={estimate.dynamics.sigma_x:.4f}, rho={estimate.dynamics.rho:.4f}"
        )

    s0 = baseline_from_median(history.normalized_ratings().iloc[-1].to_numpy())
    logger.info(f"Baseline rating s0={s0:.6g} (median normalized rating on {history.dates[-1]:%Y-%m-%d})")
    if isinstance(U.u2, ScaledShiftedExponential):
        u2 = replace(U.u2, s0=s0)
        if spec is not None:
            u2 = replace(u2, gamma=calibrate_gamma2(spec, s0))
            logger.info(f"Calibrated gamma2={u2.gamma:.10g} from {spec}")
        U = replace(U, u2=u2)
    elif spec is not None:
        raise InputError(f"gamma2 calibration needs a scaled_shifted_exponential u2, configured form is '{U.u2.form}'")

    out = ctx.out
    rating_summary, category_counts = describe_ratings(history)
    outputs = {
        "dynamics": write_frame(estimates_frame(estimates, unconditional=unconditional), out / "dynamics.csv"),
        "utility": write_flat(utility_to_config(U), out / "utility.cfg"),
        "rating_summary": write_frame(rating_summary, out / "rating_summary.csv"),
        "category_counts": write_frame(category_counts, out / "category_counts.csv"),
        "return_summary": write_frame(describe_returns(history, ctx.settings.sim.horizon), out / "return_summary.csv"),
    }
    write_run_manifest(out, "calibrate", [prices, ratings], ctx.settings.to_flat())
    return outputs
