import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from esgrisk.commands import RunContext
from esgrisk.utils.errors import InputError, UnsupportedError
from esgrisk.utils.ingestion_tools import read_dynamics, write_frame, write_run_manifest
from esgrisk.utils.risk_tools import shift_curve
from esgrisk.utils.scenario_tools import sample_single
from esgrisk.utils.utility_tools import ScaledShiftedExponential

logger = logging.getLogger(__name__)


def run(
    ctx: RunContext,
    dynamics: Path,
    asset: str,
    grid: tuple[float, float, int] = (-1.0, 1.0, 41),
    compare_c: float | None = None,
) -> dict[str, Path]:
    """
    Writes shift_curve.csv (shift,rho,marginal_rho) and, with `compare_c`, the same curve
    for the alternate rating scale in shift_curve_compare.csv on the same scenarios.
    """
    matches = [d for d in read_dynamics(dynamics) if d.name == asset]
    if not matches:
        raise InputError(f"asset '{asset}' is not in {dynamics}")
    start, stop, points = grid
    shifts = np.linspace(start, stop, points)
    if np.any(np.abs(shifts) > 1):
        raise InputError(f"rating shifts must lie in [-1, 1], got [{start:g}, {stop:g}]")

    U = ctx.settings.build_utility()
    alternate = None
    if compare_c is not None:
        if not isinstance(U.u2, ScaledShiftedExponential):
            raise UnsupportedError(f"--compare-c needs a scaled_shifted_exponential u2, configured form is '{U.u2.form}'")
        alternate = replace(U, u2=replace(U.u2, c=compare_c))
    if ctx.dry_run:
        return {}

    sim = ctx.settings.sim
    cfg = ctx.settings.risk_config()
    scen = sample_single(matches[0], sim.horizon, sim.samples, sim.seed)
    curve = shift_curve(U, scen, shifts, cfg)
    outputs = {"shift_curve": write_frame(curve.to_frame(), ctx.out / "shift_curve.csv")}
    if alternate is not None:
        compared = shift_curve(alternate, scen, shifts, cfg)
        logger.info(
            f"Range of rho: {np.ptp(curve.rho):.6g} at c={U.u2.c:g}, {np.ptp(compared.rho):.6g} at c={compare_c:g}"
        )
        outputs["shift_curve_compare"] = write_frame(compared.to_frame(), ctx.out / "shift_curve_compare.csv")
    write_run_manifest(ctx.out, "shift-curve", [dynamics], ctx.settings.to_flat())
    return outputs
