from pathlib import Path

from esgrisk.commands import RunContext
from esgrisk.commands.risk import TABLE_COLUMNS, risk_table
from esgrisk.utils.ingestion_tools import read_dynamics, write_frame, write_run_manifest
from esgrisk.utils.risk_tools import rank_premia


def run(ctx: RunContext, dynamics: Path, top: int = 5) -> dict[str, Path]:
    """Writes risk_table.csv and premium_ranking.csv."""
    assets = read_dynamics(dynamics)
    ctx.settings.build_utility()
    if ctx.dry_run:
        return {}

    table = risk_table(ctx, assets)[TABLE_COLUMNS]
    outputs = {
        "risk_table": write_frame(table, ctx.out / "risk_table.csv"),
        "premium_ranking": write_frame(rank_premia(table, top), ctx.out / "premium_ranking.csv"),
    }
    write_run_manifest(ctx.out, "premium", [dynamics], ctx.settings.to_flat())
    return outputs
