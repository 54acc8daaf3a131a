import logging
from pathlib import Path

import numpy as np
import pandas as pd

from esgrisk.commands import RunContext
from esgrisk.utils.backtest_tools import parse_strategies
from esgrisk.utils.ingestion_tools import read_dynamics, write_frame, write_run_manifest
from esgrisk.utils.portfolio_tools import minimize_risk, portfolio_exposure, risk_category_breakdown
from esgrisk.utils.risk_tools import financial_shortfall_risk, shortfall_risk
from esgrisk.utils.scenario_tools import RAW_RATING_MAX, BasketDynamics, sample_basket

logger = logging.getLogger(__name__)


def run(ctx: RunContext, dynamics: Path) -> dict[str, Path]:
    """
    Writes optimal_weights.csv (strategy,asset,weight), portfolio_risk.csv and
    category_breakdown.csv. Assets are simulated independently of each other.
    """
    assets = read_dynamics(dynamics)
    settings = ctx.settings
    U = settings.build_utility()
    fs = settings.feasible_set(len(assets))
    strategies = parse_strategies(settings.portfolio.strategies)
    if ctx.dry_run:
        return {}

    sim = settings.sim
    cfg = settings.risk_config()
    scen = sample_basket(BasketDynamics.independent(assets), sim.horizon, sim.samples, sim.seed)
    raw_now = RAW_RATING_MAX * (1.0 - np.array([d.s0_norm for d in assets]))

    weight_rows, risk_rows, category_rows = [], [], []
    for name in strategies:
        if name == "equal":
            w = fs.equal_weights()
        else:
            objective = U.u1 if name == "entropic" else U
            w = minimize_risk(objective, scen, fs, settings.optimizer_config(), cfg, seed=sim.seed, progress=ctx.progress).weights
        exposure = portfolio_exposure(w, scen)
        risk_rows.append(
            {
                "strategy": name,
                "rho_financial": financial_shortfall_risk(U.u1, exposure, cfg).value,
                "rho_esg": shortfall_risk(U, exposure, cfg).value,
                "expected_esg_rating": float(exposure.s_norm.mean()),
            }
        )
        weight_rows.extend({"strategy": name, "asset": d.name, "weight": float(wi)} for d, wi in zip(assets, w))
        category_rows.extend(
            {"strategy": name, "category": c, "weight": float(v)} for c, v in risk_category_breakdown(w, raw_now).items()
        )
        logger.info(f"{name}: weights {np.round(w, 4).tolist()}")

    out = ctx.out
    outputs = {
        "optimal_weights": write_frame(pd.DataFrame(weight_rows), out / "optimal_weights.csv"),
        "portfolio_risk": write_frame(pd.DataFrame(risk_rows), out / "portfolio_risk.csv"),
        "category_breakdown": write_frame(pd.DataFrame(category_rows), out / "category_breakdown.csv"),
    }
    write_run_manifest(out, "optimize", [dynamics], settings.to_flat())
    return outputs
