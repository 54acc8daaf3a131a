import json
import logging
from pathlib import Path
from typing import Annotated, Callable, Optional

import typer

from esgrisk.commands import RunContext, backtest, calibrate, optimize, premium, risk, shift_curve, simulate
from esgrisk.utils.errors import EsgRiskError, InputError
from esgrisk.utils.settings_tools import load_settings

logger = logging.getLogger("esgrisk")

app = typer.Typer(
    name="esgrisk",
    help="Utility-based shortfall risk for joint financial and ESG rating positions.",
    add_completion=False,
    no_args_is_help=True,
)

# Shared options
ConfigOption = Annotated[Optional[Path], typer.Option("--config", "-c", help="Flat key=value or YAML run configuration.")]
SeedOption = Annotated[Optional[int], typer.Option("--seed", min=0, help="Random seed (overrides sim.seed).")]
OutOption = Annotated[Optional[Path], typer.Option("--out", "-o", help="Output directory (overrides io.out).")]
SamplesOption = Annotated[Optional[int], typer.Option("--samples", min=1, help="Monte Carlo samples (overrides sim.samples).")]
JsonErrorsOption = Annotated[bool, typer.Option("--json-errors", help="Print errors as JSON on stderr.")]
DryRunOption = Annotated[bool, typer.Option("--dry-run", help="Validate configuration and inputs, then stop.")]
VerboseOption = Annotated[bool, typer.Option("--verbose", "-v", help="Debug logging.")]
QuietOption = Annotated[bool, typer.Option("--quiet", "-q", help="Warnings only, no progress bars.")]

PricesOption = Annotated[Optional[Path], typer.Option("--prices", help="Monthly prices CSV (overrides io.prices).")]
RatingsOption = Annotated[Optional[Path], typer.Option("--ratings", help="Monthly raw ratings CSV (overrides io.ratings).")]
DynamicsOption = Annotated[Optional[Path], typer.Option("--dynamics", help="Calibrated dynamics CSV (overrides io.dynamics).")]


def _configure_logging(verbose: bool, quiet: bool):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s - %(levelname)s - %(message)s", force=True)


def _report(error: EsgRiskError, json_errors: bool):
    if json_errors:
        typer.echo(json.dumps(error.to_dict()), err=True)
    else:
        typer.echo(f"Error ({type(error).__name__}): {error}", err=True)


def _execute(
    command: Callable[[RunContext], None],
    config: Optional[Path],
    seed: Optional[int],
    out: Optional[Path],
    samples: Optional[int],
    json_errors: bool,
    dry_run: bool,
    verbose: bool,
    quiet: bool,
):
    _configure_logging(verbose, quiet)
    try:
        settings = load_settings(config).with_overrides(seed=seed, samples=samples, out=out)
        command(RunContext(settings, dry_run, progress=not quiet))
    except EsgRiskError as e:
        _report(e, json_errors)
        raise typer.Exit(code=e.exit_code)
    if dry_run:
        typer.echo("Configuration and inputs are valid.")


def _require(path: Optional[Path], fallback: Optional[Path], name: str) -> Path:
    chosen = path or fallback
    if chosen is None:
        raise InputError(f"no {name} file given: pass --{name} or set io.{name}")
    return chosen


@app.command("calibrate")
def calibrate_command(
    prices: PricesOption = None,
    ratings: RatingsOption = None,
    unconditional: Annotated[bool, typer.Option("--unconditional", help="Estimate rating moments and rho over all months.")] = False,
    s_low: Annotated[Optional[float], typer.Option("--s-low", help="Lower outcome of an indifference position.")] = None,
    s_high: Annotated[Optional[float], typer.Option("--s-high", help="Upper outcome of an indifference position.")] = None,
    p_low: Annotated[Optional[float], typer.Option("--p-low", help="Probability of the lower outcome.")] = None,
    config: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    samples: SamplesOption = None,
    json_errors: JsonErrorsOption = False,
    dry_run: DryRunOption = False,
    verbose: VerboseOption = False,
    quiet: QuietOption = False,
):
    """Estimate asset dynamics and the rating baseline from monthly history."""

    def command(ctx: RunContext):
        io = ctx.settings.io
        calibrate.run(
            ctx,
            _require(prices, io.prices, "prices"),
            _require(ratings, io.ratings, "ratings"),
            unconditional=unconditional,
            indifference=(s_low, s_high, p_low),
        )

    _execute(command, config, seed, out, samples, json_errors, dry_run, verbose, quiet)


@app.command("simulate")
def simulate_command(
    dynamics: DynamicsOption = None,
    asset: Annotated[Optional[str], typer.Option("--asset", help="Simulate a single asset.")] = None,
    config: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    samples: SamplesOption = None,
    json_errors: JsonErrorsOption = False,
    dry_run: DryRunOption = False,
    verbose: VerboseOption = False,
    quiet: QuietOption = False,
):
    """Draw joint (X, S_norm) scenarios from calibrated dynamics."""

    def command(ctx: RunContext):
        simulate.run(ctx, _require(dynamics, ctx.settings.io.dynamics, "dynamics"), asset=asset)

    _execute(command, config, seed, out, samples, json_errors, dry_run, verbose, quiet)


@app.command("risk")
def risk_command(
    dynamics: DynamicsOption = None,
    config: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    samples: SamplesOption = None,
    json_errors: JsonErrorsOption = False,
    dry_run: DryRunOption = False,
    verbose: VerboseOption = False,
    quiet: QuietOption = False,
):
    """Financial risk, ESG risk and ESG risk premium per asset."""

    def command(ctx: RunContext):
        risk.run(ctx, _require(dynamics, ctx.settings.io.dynamics, "dynamics"))

    _execute(command, config, seed, out, samples, json_errors, dry_run, verbose, quiet)


@app.command("premium")
def premium_command(
    dynamics: DynamicsOption = None,
    top: Annotated[int, typer.Option("--top", min=1, help="Assets per side of the ranking.")] = 5,
    config: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    samples: SamplesOption = None,
    json_errors: JsonErrorsOption = False,
    dry_run: DryRunOption = False,
    verbose: VerboseOption = False,
    quiet: QuietOption = False,
):
    """Rank the largest positive and negative ESG risk premia."""

    def command(ctx: RunContext):
        premium.run(ctx, _require(dynamics, ctx.settings.io.dynamics, "dynamics"), top=top)

    _execute(command, config, seed, out, samples, json_errors, dry_run, verbose, quiet)


@app.command("shift-curve")
def shift_curve_command(
    asset: Annotated[str, typer.Option("--asset", help="Asset whose rating is shifted.")],
    dynamics: DynamicsOption = None,
    grid_start: Annotated[float, typer.Option("--grid-start", help="First rating shift.")] = -1.0,
    grid_stop: Annotated[float, typer.Option("--grid-stop", help="Last rating shift.")] = 1.0,
    grid_points: Annotated[int, typer.Option("--grid-points", min=2, help="Number of shifts.")] = 41,
    compare_c: Annotated[Optional[float], typer.Option("--compare-c", help="Also run with this rating utility scale c.")] = None,
    config: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    samples: SamplesOption = None,
    json_errors: JsonErrorsOption = False,
    dry_run: DryRunOption = False,
    verbose: VerboseOption = False,
    quiet: QuietOption = False,
):
    """ESG risk as a function of a parallel shift of the normalized rating."""

    def command(ctx: RunContext):
        shift_curve.run(
            ctx,
            _require(dynamics, ctx.settings.io.dynamics, "dynamics"),
            asset=asset,
            grid=(grid_start, grid_stop, grid_points),
            compare_c=compare_c,
        )

    _execute(command, config, seed, out, samples, json_errors, dry_run, verbose, quiet)


@app.command("optimize")
def optimize_command(
    dynamics: DynamicsOption = None,
    config: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    samples: SamplesOption = None,
    json_errors: JsonErrorsOption = False,
    dry_run: DryRunOption = False,
    verbose: VerboseOption = False,
    quiet: QuietOption = False,
):
    """Minimum-risk portfolios over the capped simplex for each configured strategy."""

    def command(ctx: RunContext):
        optimize.run(ctx, _require(dynamics, ctx.settings.io.dynamics, "dynamics"))

    _execute(command, config, seed, out, samples, json_errors, dry_run, verbose, quiet)


@app.command("backtest")
def backtest_command(
    prices: PricesOption = None,
    ratings: RatingsOption = None,
    window: Annotated[Optional[int], typer.Option("--window", min=2, help="Estimation window in months (overrides portfolio.window).")] = None,
    rebalance: Annotated[str, typer.Option("--rebalance", help="Rebalancing frequency; only monthly is supported.")] = "monthly",
    strategies: Annotated[Optional[str], typer.Option("--strategies", help="Comma-separated subset of entropic,esg,equal.")] = None,
    config: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    samples: SamplesOption = None,
    json_errors: JsonErrorsOption = False,
    dry_run: DryRunOption = False,
    verbose: VerboseOption = False,
    quiet: QuietOption = False,
):
    """Rolling-window backtest of the minimum-risk strategies."""

    def command(ctx: RunContext):
        if rebalance != "monthly":
            raise InputError(f"unsupported rebalancing frequency '{rebalance}', only 'monthly' is available")
        io = ctx.settings.io
        backtest.run(
            ctx,
            _require(prices, io.prices, "prices"),
            _require(ratings, io.ratings, "ratings"),
            window=window,
            strategies=strategies,
        )

    _execute(command, config, seed, out, samples, json_errors, dry_run, verbose, quiet)


def main():
    app()


if __name__ == "__main__":
    main()
