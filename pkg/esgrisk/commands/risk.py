import logging
from dataclasses import asdict
from pathlib import Path

import pandas as pd
from tqdm import tqdm

from esgrisk.commands import RunContext
from esgrisk.utils.ingestion_tools import read_dynamics, write_frame, write_run_manifest
from esgrisk.utils.risk_tools import risk_row
from esgrisk.utils.scenario_tools import AssetDynamics, sample_single

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ["asset", "rho_financial", "rho_esg", "premium", "esg_rating_now"]
DETAIL_COLUMNS = ["asset", "mu_x", "rho_financial_closed_form", "rho_financial", "rho_esg", "premium", "esg_rating_now"]


# Risk table over all assets, one scenario set per asset on the common seed
def risk_table(ctx: RunContext, assets: list[AssetDynamics]) -> pd.DataFrame:
    U = ctx.settings.build_utility()
    cfg = ctx.settings.risk_config()
    sim = ctx.settings.sim

    rows = []
    for dyn in tqdm(assets, desc="Risk", disable=not ctx.progress):
        scen = sample_single(dyn, sim.horizon, sim.samples, sim.seed)
        row = asdict(risk_row(U, scen, dyn.s0_norm, cfg))
        row["asset"] = dyn.name
        row["mu_x"] = dyn.mu_x
        rows.append(row)
        logger.debug(f"{dyn.name}: rho_financial={row['rho_financial']:.6g}, rho_esg={row['rho_esg']:.6g}")
    return pd.DataFrame(rows, columns=DETAIL_COLUMNS)


def run(ctx: RunContext, dynamics: Path) -> dict[str, Path]:
    """Writes risk_table.csv and risk_detail.csv."""
    assets = read_dynamics(dynamics)
    ctx.settings.build_utility()
    if ctx.dry_run:
        return {}

    detail = risk_table(ctx, assets)
    outputs = {
        "risk_table": write_frame(detail[TABLE_COLUMNS], ctx.out / "risk_table.csv"),
        "risk_detail": write_frame(detail, ctx.out / "risk_detail.csv"),
    }
    write_run_manifest(ctx.out, "risk", [dynamics], ctx.settings.to_flat())
    return outputs
