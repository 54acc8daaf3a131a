import numpy as np
import pandas as pd
import pytest

from esgrisk.utils.calibration_tools import HistoricalSeries, simulate_history
from esgrisk.utils.scenario_tools import AssetDynamics, BasketDynamics, ScenarioSet, rescale_rating, sample_single
from esgrisk.utils.risk_tools import RiskConfig
from esgrisk.utils.utility_tools import entropic_esg_utility


@pytest.fixture
def entropic_esg():
    """Reference entropic ESG utility: gamma1=1, gamma2=0.75, c=0.1, k=1, s0=0.5982."""
    return entropic_esg_utility()


@pytest.fixture
def risk_cfg():
    return RiskConfig()


@pytest.fixture
def reference_dynamics():
    return AssetDynamics(
        mu_x=0.062,
        sigma_x=0.306,
        mu_s=0.01,
        sigma_s=0.2,
        rho=0.1,
        p=0.35,
        s0_rescaled=float(rescale_rating(0.5982)),
        name="REF",
    )


@pytest.fixture
def reference_scenarios(reference_dynamics):
    return sample_single(reference_dynamics, count=2_000, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_scenarios(x, s, names=()):
    return ScenarioSet(np.asarray(x, dtype=float), np.asarray(s, dtype=float), names=tuple(names))


def make_basket(n, seed=0, rating_spread=(0.3, 0.8), mu_x=0.06, sigma_x=0.25):
    """Independent assets with ratings spread evenly over `rating_spread`."""
    ratings = np.linspace(*rating_spread, n)
    assets = [
        AssetDynamics(
            mu_x=mu_x,
            sigma_x=sigma_x,
            mu_s=0.0,
            sigma_s=0.3,
            rho=0.2,
            p=0.4,
            s0_rescaled=float(rescale_rating(r)),
            name=f"A{i}",
        )
        for i, r in enumerate(ratings)
    ]
    return BasketDynamics.independent(assets)


def write_history_csv(history: HistoricalSeries, directory):
    """Write prices.csv and ratings.csv in the ingestion schema."""
    prices_path = directory / "prices.csv"
    ratings_path = directory / "ratings.csv"
    for frame, path in ((history.prices, prices_path), (history.ratings_raw, ratings_path)):
        out = frame.copy()
        out.index = pd.DatetimeIndex(out.index).strftime("%Y-%m-%d")
        out.index.name = "date"
        out.to_csv(path, float_format="%.10g")
    return prices_path, ratings_path


@pytest.fixture
def toy_history():
    """Two assets over 40 months generated from the model itself."""
    return simulate_history(make_basket(2, rating_spread=(0.4, 0.7)), months=40, seed=3)


@pytest.fixture
def toy_csv(tmp_path, toy_history):
    return write_history_csv(toy_history, tmp_path)
