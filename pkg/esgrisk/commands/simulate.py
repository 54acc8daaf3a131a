import logging
from pathlib import Path

from esgrisk.commands import RunContext
from esgrisk.utils.errors import InputError
from esgrisk.utils.ingestion_tools import read_dynamics, scenarios_frame, write_frame, write_run_manifest
from esgrisk.utils.scenario_tools import BasketDynamics, sample_basket

logger = logging.getLogger(__name__)


def run(ctx: RunContext, dynamics: Path, asset: str | None = None) -> dict[str, Path]:
    """Writes scenarios.csv (sample,asset,x,s_norm). Assets are simulated independently."""
    assets = read_dynamics(dynamics)
    if asset is not None:
        assets = [d for d in assets if d.name == asset]
        if not assets:
            raise InputError(f"asset '{asset}' is not in {dynamics}")
    if ctx.dry_run:
        return {}

    sim = ctx.settings.sim
    scen = sample_basket(BasketDynamics.independent(assets), sim.horizon, sim.samples, sim.seed)
    logger.info(f"Simulated {scen.count} scenarios for {scen.n_assets} assets with seed {sim.seed}")
    outputs = {"scenarios": write_frame(scenarios_frame(scen), ctx.out / "scenarios.csv")}
    write_run_manifest(ctx.out, "simulate", [dynamics], ctx.settings.to_flat())
    return outputs
