import logging
from pathlib import Path

import typer

from esgrisk.commands import RunContext
from esgrisk.utils.backtest_tools import parse_strategies, run_backtest
from esgrisk.utils.ingestion_tools import read_history, write_frame, write_run_manifest

logger = logging.getLogger(__name__)


def run(
    ctx: RunContext,
    prices: Path,
    ratings: Path,
    window: int | None = None,
    strategies: str | None = None,
) -> dict[str, Path]:
    """
    Writes ledger.csv, weights.csv, category_breakdown.csv, average_weights.csv,
    average_category_breakdown.csv and backtest_summary.csv, and prints the summary.
    """
    settings = ctx.settings
    history = read_history(prices, ratings)
    U = settings.build_utility()
    window = window or settings.portfolio.window
    chosen = parse_strategies(strategies or settings.portfolio.strategies)
    fs = settings.feasible_set(len(history.assets))
    if ctx.dry_run:
        return {}

    ledger = run_backtest(
        history,
        U,
        window=window,
        strategies=chosen,
        samples=settings.sim.samples,
        seed=settings.sim.seed,
        fs=fs,
        opt_cfg=settings.optimizer_config(),
        risk_cfg=settings.risk_config(),
        progress=ctx.progress,
    )
    if ledger.warnings:
        logger.warning(f"Backtest finished with {len(ledger.warnings)} warnings")

    out = ctx.out
    summary = ledger.summary()
    outputs = {
        "ledger": write_frame(ledger.ledger_frame(), out / "ledger.csv"),
        "weights": write_frame(ledger.weights_frame(), out / "weights.csv"),
        "category_breakdown": write_frame(ledger.category_frame(), out / "category_breakdown.csv"),
        "average_weights": write_frame(ledger.average_weights(), out / "average_weights.csv"),
        "average_category_breakdown": write_frame(
            ledger.average_category_breakdown(), out / "average_category_breakdown.csv"
        ),
        "summary": write_frame(summary, out / "backtest_summary.csv"),
    }
    write_run_manifest(out, "backtest", [prices, ratings], settings.to_flat())
    typer.echo(summary.to_string(index=False, float_format=lambda v: f"{v:.6f}"))
    return outputs
