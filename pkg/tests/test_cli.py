"""End-to-end tests of the esgrisk command line."""
import json

import pandas as pd
import pytest
from typer.testing import CliRunner

from esgrisk.cli import app
from esgrisk.utils.ingestion_tools import DYNAMICS_COLUMNS

runner = CliRunner(mix_stderr=False)

FAST_CONFIG = "sim.samples=400\nportfolio.upper=0.6\nportfolio.multistarts=1\nportfolio.max_iter=30\n"


def invoke(*args):
    return runner.invoke(app, [str(a) for a in args])


def last_line(text: str) -> str:
    return [line for line in text.splitlines() if line.strip()][-1]


@pytest.fixture
def fast_config(tmp_path):
    path = tmp_path / "fast.cfg"
    path.write_text(FAST_CONFIG)
    return path


@pytest.fixture
def dynamics_csv(tmp_path, toy_csv):
    prices, ratings = toy_csv
    result = invoke("calibrate", "--prices", prices, "--ratings", ratings, "--out", tmp_path / "cal", "--quiet")
    assert result.exit_code == 0, result.stderr
    return tmp_path / "cal" / "dynamics.csv"


class TestCalibrate:
    def test_outputs(self, tmp_path, toy_csv):
        prices, ratings = toy_csv
        out = tmp_path / "out"
        result = invoke("calibrate", "--prices", prices, "--ratings", ratings, "--out", out, "--unconditional")
        assert result.exit_code == 0, result.stderr
        dynamics = pd.read_csv(out / "dynamics.csv")
        assert dynamics.columns.tolist() == [*DYNAMICS_COLUMNS, "rho_unconditional"]
        assert dynamics["asset"].tolist() == ["A0", "A1"]
        for name in ("utility.cfg", "rating_summary.csv", "category_counts.csv", "return_summary.csv", "run.json"):
            assert (out / name).exists()
        manifest = json.loads((out / "run.json").read_text())
        assert manifest["command"] == "calibrate"
        assert set(manifest["inputs"]) == {"prices.csv", "ratings.csv"}

    def test_indifference_position_sets_gamma2(self, tmp_path, toy_csv):
        prices, ratings = toy_csv
        out = tmp_path / "out"
        result = invoke(
            "calibrate", "--prices", prices, "--ratings", ratings, "--out", out,
            "--s-low", 0.05, "--s-high", 0.99, "--p-low", 0.2,
        )
        assert result.exit_code == 0, result.stderr
        utility = dict(line.split("=", 1) for line in (out / "utility.cfg").read_text().splitlines())
        assert float(utility["u2.gamma"]) != 0.75
        assert utility["u2.form"] == "scaled_shifted_exponential"

    def test_partial_indifference_position(self, tmp_path, toy_csv):
        prices, ratings = toy_csv
        result = invoke("calibrate", "--prices", prices, "--ratings", ratings, "--out", tmp_path / "out", "--s-low", 0.2)
        assert result.exit_code == 2

    def test_output_is_deterministic(self, tmp_path, toy_csv):
        prices, ratings = toy_csv
        for name in ("a", "b"):
            assert invoke("calibrate", "--prices", prices, "--ratings", ratings, "--out", tmp_path / name).exit_code == 0
        assert (tmp_path / "a" / "dynamics.csv").read_bytes() == (tmp_path / "b" / "dynamics.csv").read_bytes()

    def test_constant_prices_exit_with_model_error(self, tmp_path, toy_history):
        prices = tmp_path / "prices.csv"
        ratings = tmp_path / "ratings.csv"
        dates = toy_history.dates.strftime("%Y-%m-%d")
        pd.DataFrame({"date": dates, "A0": 10.0}).to_csv(prices, index=False)
        pd.DataFrame({"date": dates, "A0": toy_history.ratings_raw["A0"].to_numpy()}).to_csv(ratings, index=False)
        result = invoke("calibrate", "--prices", prices, "--ratings", ratings, "--out", tmp_path / "out", "--json-errors")
        assert result.exit_code == 3
        payload = json.loads(last_line(result.stderr))
        assert payload["error"] == "DegenerateError"
        assert payload["exit_code"] == 3


class TestInputErrors:
    def test_schema_error_as_json(self, tmp_path, toy_csv):
        prices, ratings = toy_csv
        bad = tmp_path / "bad_prices.csv"
        lines = prices.read_text().splitlines()
        lines[3] = lines[3].split(",")[0] + ",oops," + ",".join(lines[3].split(",")[2:])
        bad.write_text("\n".join(lines) + "\n")
        result = invoke("calibrate", "--prices", bad, "--ratings", ratings, "--json-errors")
        assert result.exit_code == 2
        payload = json.loads(last_line(result.stderr))
        assert payload["error"] == "SchemaError"
        assert (payload["row"], payload["column"]) == (4, "A0")

    def test_missing_input_file(self, tmp_path):
        result = invoke("risk", "--dynamics", tmp_path / "absent.csv")
        assert result.exit_code == 2
        assert "not found" in result.stderr

    def test_no_input_given(self):
        result = invoke("risk")
        assert result.exit_code == 2
        assert "--dynamics" in result.stderr

    def test_unknown_config_key(self, tmp_path, dynamics_csv):
        config = tmp_path / "bad.cfg"
        config.write_text("sim.sampels=10\n")
        result = invoke("risk", "--dynamics", dynamics_csv, "--config", config)
        assert result.exit_code == 2
        assert "sim.sampels" in result.stderr

    def test_infeasible_weights(self, tmp_path, dynamics_csv):
        result = invoke("optimize", "--dynamics", dynamics_csv, "--out", tmp_path / "opt")
        assert result.exit_code == 2
        assert "infeasible" in result.stderr

    def test_unsupported_rebalancing(self, toy_csv):
        prices, ratings = toy_csv
        result = invoke("backtest", "--prices", prices, "--ratings", ratings, "--rebalance", "weekly")
        assert result.exit_code == 2

    def test_dry_run_writes_nothing(self, tmp_path, toy_csv):
        prices, ratings = toy_csv
        out = tmp_path / "dry"
        result = invoke("calibrate", "--prices", prices, "--ratings", ratings, "--out", out, "--dry-run")
        assert result.exit_code == 0
        assert "Configuration and inputs are valid." in result.stdout
        assert not out.exists()


class TestRiskCommands:
    def test_simulate(self, tmp_path, dynamics_csv):
        out = tmp_path / "sim"
        result = invoke("simulate", "--dynamics", dynamics_csv, "--samples", 50, "--seed", 3, "--out", out)
        assert result.exit_code == 0, result.stderr
        scenarios = pd.read_csv(out / "scenarios.csv")
        assert scenarios.columns.tolist() == ["sample", "asset", "x", "s_norm"]
        assert len(scenarios) == 100
        assert scenarios["s_norm"].between(0.0, 1.0).all()

    def test_risk_table_is_reproducible(self, tmp_path, dynamics_csv):
        for name in ("a", "b"):
            result = invoke("risk", "--dynamics", dynamics_csv, "--samples", 500, "--seed", 1, "--out", tmp_path / name)
            assert result.exit_code == 0, result.stderr
        first = (tmp_path / "a" / "risk_table.csv").read_bytes()
        assert first == (tmp_path / "b" / "risk_table.csv").read_bytes()
        table = pd.read_csv(tmp_path / "a" / "risk_table.csv")
        assert table.columns.tolist() == ["asset", "rho_financial", "rho_esg", "premium", "esg_rating_now"]
        detail = pd.read_csv(tmp_path / "a" / "risk_detail.csv")
        assert (detail["rho_financial_closed_form"] - detail["rho_financial"]).abs().max() < 1e-8

    def test_zero_rating_scale_gives_zero_premium(self, tmp_path, dynamics_csv):
        config = tmp_path / "c0.cfg"
        config.write_text("u2.c=0\nsim.samples=500\n")
        result = invoke("risk", "--dynamics", dynamics_csv, "--config", config, "--out", tmp_path / "out")
        assert result.exit_code == 0, result.stderr
        table = pd.read_csv(tmp_path / "out" / "risk_table.csv")
        assert (table["premium"] == 0.0).all()

    def test_premium_ranking(self, tmp_path, dynamics_csv):
        out = tmp_path / "prem"
        result = invoke("premium", "--dynamics", dynamics_csv, "--samples", 500, "--top", 1, "--out", out)
        assert result.exit_code == 0, result.stderr
        ranking = pd.read_csv(out / "premium_ranking.csv")
        assert ranking.columns.tolist() == ["side", "rank", "asset", "rho_financial", "rho_esg", "premium"]
        assert len(ranking) <= 2

    def test_shift_curve_with_comparison(self, tmp_path, dynamics_csv):
        out = tmp_path / "curve"
        result = invoke(
            "shift-curve", "--dynamics", dynamics_csv, "--asset", "A1", "--samples", 500,
            "--grid-points", 11, "--compare-c", 0.05, "--out", out,
        )
        assert result.exit_code == 0, result.stderr
        curve = pd.read_csv(out / "shift_curve.csv")
        compared = pd.read_csv(out / "shift_curve_compare.csv")
        assert len(curve) == len(compared) == 11
        assert curve["rho"].iloc[0] >= curve["rho"].iloc[-1]
        assert (compared["rho"].max() - compared["rho"].min()) < (curve["rho"].max() - curve["rho"].min())

    def test_shift_curve_grid_out_of_range(self, tmp_path, dynamics_csv):
        result = invoke("shift-curve", "--dynamics", dynamics_csv, "--asset", "A1", "--grid-stop", 1.5)
        assert result.exit_code == 2

    def test_shift_curve_unknown_asset(self, tmp_path, dynamics_csv):
        result = invoke("shift-curve", "--dynamics", dynamics_csv, "--asset", "ZZZ")
        assert result.exit_code == 2


class TestPortfolioCommands:
    def test_optimize(self, tmp_path, dynamics_csv, fast_config):
        out = tmp_path / "opt"
        result = invoke("optimize", "--dynamics", dynamics_csv, "--config", fast_config, "--out", out, "--quiet")
        assert result.exit_code == 0, result.stderr
        weights = pd.read_csv(out / "optimal_weights.csv")
        for _, group in weights.groupby("strategy"):
            assert group["weight"].sum() == pytest.approx(1.0, abs=1e-9)
            assert group["weight"].max() <= 0.6 + 1e-9
        risk = pd.read_csv(out / "portfolio_risk.csv")
        assert risk["strategy"].tolist() == ["entropic", "esg", "equal"]
        assert (out / "category_breakdown.csv").exists()

    def test_backtest(self, tmp_path, toy_csv, fast_config):
        prices, ratings = toy_csv
        out = tmp_path / "bt"
        result = invoke(
            "backtest", "--prices", prices, "--ratings", ratings, "--config", fast_config,
            "--window", 30, "--strategies", "esg,equal", "--out", out, "--quiet",
        )
        assert result.exit_code == 0, result.stderr
        ledger = pd.read_csv(out / "ledger.csv")
        assert ledger.columns.tolist() == ["date", "strategy", "cum_log_return", "portfolio_esg_rating"]
        assert set(ledger["strategy"]) == {"esg", "equal"}
        assert len(ledger) == 2 * (40 - 1 - 30)
        assert "final_cum_log_return" in result.stdout
        for name in ("weights.csv", "category_breakdown.csv", "backtest_summary.csv", "run.json"):
            assert (out / name).exists()
        averages = pd.read_csv(out / "average_weights.csv")
        assert averages.columns.tolist() == ["strategy", "asset", "weight"]
        for _, group in averages.groupby("strategy"):
            assert group["weight"].sum() == pytest.approx(1.0, abs=1e-6)
        breakdown = pd.read_csv(out / "average_category_breakdown.csv")
        assert breakdown.columns.tolist() == ["strategy", "category", "weight"]
        assert breakdown.groupby("strategy")["weight"].sum().to_numpy() == pytest.approx([1.0, 1.0], abs=1e-6)
