"""Tests for shortfall risk, the ESG risk premium and the rating shift curve."""
import math

import numpy as np
import pandas as pd
import pytest

from esgrisk.utils.errors import InputError, ModelError
from esgrisk.utils.risk_tools import (
    RiskConfig,
    entropic_closed_form,
    esg_risk_premium,
    expected_utility,
    financial_shortfall_risk,
    indifference_gap,
    rank_premia,
    risk_row,
    shift_curve,
    shortfall_risk,
    solve_acceptance,
)
from esgrisk.utils.scenario_tools import AssetDynamics, rescale_rating, sample_single
from esgrisk.utils.utility_tools import (
    NEG_INF,
    POS_INF,
    Exponential,
    Linear,
    MultiUtility,
    ScaledShiftedExponential,
    Step,
    entropic_esg_utility,
)
from tests.conftest import make_scenarios

TOL = RiskConfig().root_tol


def _indifferent_pair(u2: ScaledShiftedExponential, s_low: float) -> float:
    """The rating s_high with u2(s_high) = -u2(s_low)."""
    return u2.s0 - math.log(2.0 - math.exp(-u2.gamma * (s_low - u2.s0))) / u2.gamma


def _product_scenarios(x_values, s_values):
    """Every (x, s) pair once, so X and S are independent under the empirical measure."""
    x_values, s_values = np.asarray(x_values), np.asarray(s_values)
    return make_scenarios(np.repeat(x_values, s_values.size), np.tile(s_values, x_values.size))


class TestRiskConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [{"root_tol": 0.0}, {"bracket_seed": -1.0}, {"bracket_seed": 10.0, "bracket_cap": 1.0}, {"max_iter": 0}],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(InputError):
            RiskConfig(**kwargs)


class TestSolveAcceptance:
    def test_linear_root(self):
        result = solve_acceptance(lambda m: m - 0.37)
        assert result.value == pytest.approx(0.37, abs=TOL)
        assert result.value >= 0.37
        assert result.is_finite

    def test_far_root_is_bracketed(self):
        result = solve_acceptance(lambda m: m + 12345.6)
        assert result.value == pytest.approx(-12345.6, abs=TOL)

    def test_never_acceptable(self):
        result = solve_acceptance(lambda m: -1.0)
        assert result.value == POS_INF
        assert not result.is_finite

    def test_always_acceptable(self):
        assert solve_acceptance(lambda m: 1.0).value == NEG_INF

    def test_undefined_value(self):
        with pytest.raises(ModelError):
            solve_acceptance(lambda m: math.nan)

    def test_non_monotone_crossing(self):
        # acceptable far below, unacceptable around 0, acceptable again above 1
        with pytest.raises(ModelError, match="capped"):
            solve_acceptance(lambda m: 1.0 if m >= 1.0 or m < -2.0 else -1.0)


class TestFinancialRisk:
    def test_matches_entropic_closed_form(self, rng):
        for i in range(20):
            dyn = AssetDynamics(
                mu_x=float(rng.uniform(-0.3, 0.3)),
                sigma_x=float(rng.uniform(0.05, 0.8)),
                mu_s=0.0,
                sigma_s=0.2,
                rho=0.0,
                p=0.5,
                s0_rescaled=float(rescale_rating(0.5)),
            )
            gamma = float(rng.uniform(0.5, 3.0))
            scen = sample_single(dyn, count=10_000, seed=i)
            rho_hat = financial_shortfall_risk(Exponential(gamma=gamma), scen).value
            assert rho_hat == pytest.approx(entropic_closed_form(gamma, scen), abs=1e-8)

    def test_closed_form_two_point(self):
        scen = make_scenarios([-1.0, 1.0], [0.5, 0.5])
        assert entropic_closed_form(1.0, scen) == pytest.approx(math.log(math.cosh(1.0)), abs=1e-12)
        assert entropic_closed_form(1.0, scen) == pytest.approx(0.4338, abs=1e-4)

    @pytest.mark.parametrize("c", [-0.4, 0.0, 2.5])
    def test_constant_position(self, c):
        scen = make_scenarios(np.full(50, c), np.full(50, 0.5))
        assert entropic_closed_form(1.0, scen) == pytest.approx(-c, abs=1e-12)
        assert financial_shortfall_risk(Exponential(), scen).value == pytest.approx(-c, abs=2 * TOL)

    def test_closed_form_needs_positive_gamma(self, reference_scenarios):
        with pytest.raises(InputError):
            entropic_closed_form(0.0, reference_scenarios)

    def test_extreme_losses_do_not_overflow(self):
        scen = make_scenarios([-900.0, 0.0], [0.5, 0.5])
        assert entropic_closed_form(1.0, scen) == pytest.approx(900.0 - math.log(2.0), rel=1e-12)
        assert financial_shortfall_risk(Exponential(), scen).value == pytest.approx(900.0 - math.log(2.0), abs=2 * TOL)


class TestShortfallRisk:
    def test_translation_invariance(self, rng):
        for _ in range(30):
            U = MultiUtility(
                Exponential(gamma=float(rng.uniform(0.5, 3.0))),
                ScaledShiftedExponential(gamma=float(rng.uniform(0.3, 2.0)), c=float(rng.uniform(0.0, 0.2))),
                k=float(rng.choice([0.0, 0.5, 1.0])),
            )
            x = rng.normal(0.0, 0.1, 500)
            s = rng.uniform(0.0, 1.0, 500)
            eta = float(rng.uniform(-5.0, 5.0))
            scen = make_scenarios(x, s)
            rho = shortfall_risk(U, scen).value
            moved = shortfall_risk(U, scen.shifted(cash=eta)).value
            assert abs(moved - (rho - eta)) < 2 * TOL

    def test_monotone_in_both_attributes(self, rng):
        U = entropic_esg_utility(capped=True)
        for _ in range(25):
            x = rng.normal(0.01, 0.05, 300)
            s = rng.uniform(0.0, 0.9, 300)
            better = make_scenarios(x + np.abs(rng.normal(0.0, 0.02, 300)), np.minimum(s + rng.uniform(0.0, 0.1, 300), 1.0))
            assert shortfall_risk(U, better).value <= shortfall_risk(U, make_scenarios(x, s)).value + TOL

    def test_convex_without_interaction(self, rng):
        U = entropic_esg_utility(k=0.0)
        for _ in range(40):
            x1, x2 = rng.normal(0.0, 0.2, (2, 300))
            s1, s2 = rng.uniform(0.0, 1.0, (2, 300))
            lam = float(rng.uniform())
            mixed = make_scenarios(lam * x1 + (1 - lam) * x2, lam * s1 + (1 - lam) * s2)
            bound = lam * shortfall_risk(U, make_scenarios(x1, s1)).value + (1 - lam) * shortfall_risk(U, make_scenarios(x2, s2)).value
            assert shortfall_risk(U, mixed).value <= bound + 4 * TOL

    def test_non_monotone_utility_is_reported(self):
        U = MultiUtility(Exponential(), ScaledShiftedExponential(gamma=3.0, c=1.0, s0=0.9), k=1.0)
        scen = make_scenarios(np.zeros(10), [0.0] * 5 + [1.0] * 5)
        with pytest.raises(ModelError):
            shortfall_risk(U, scen)

    def test_asset_selection(self):
        scen = make_scenarios(np.column_stack([np.zeros(4), np.full(4, 0.5)]), np.full((4, 2), 0.5982), names=("A", "B"))
        U = entropic_esg_utility()
        assert shortfall_risk(U, scen, asset="B").value == pytest.approx(-0.5, abs=2 * TOL)
        with pytest.raises(InputError):
            shortfall_risk(U, scen)


class TestPenaltyDecomposition:
    def test_linear_financial_utility(self, rng):
        x = rng.normal(0.02, 0.1, 1000)
        s = rng.uniform(0.0, 1.0, 1000)
        scen = make_scenarios(x, s)
        step = Step(threshold=0.5, penalty=0.3)
        q = float(np.mean(s < step.threshold))

        rho = shortfall_risk(MultiUtility(Linear(), step), scen).value
        rho_hat = financial_shortfall_risk(Linear(), scen).value
        assert rho == pytest.approx(rho_hat + step.penalty * q, abs=2 * TOL)
        assert rho_hat == pytest.approx(-x.mean(), abs=TOL)

    def test_exponential_financial_utility(self, rng):
        x = rng.normal(0.02, 0.1, 1000)
        s = rng.uniform(0.0, 1.0, 1000)
        scen = make_scenarios(x, s)
        u1, step = Exponential(gamma=2.0), Step(threshold=0.4, penalty=0.1)
        q = float(np.mean(s < step.threshold))

        rho = shortfall_risk(MultiUtility(u1, step), scen).value
        rho_hat = financial_shortfall_risk(u1, scen).value
        assert rho == pytest.approx(financial_shortfall_risk(u1, scen, level=step.penalty * q).value, abs=2 * TOL)
        assert rho == pytest.approx(rho_hat - math.log(1.0 - u1.gamma * step.penalty * q) / u1.gamma, abs=2 * TOL)

    def test_infinite_penalty(self):
        U = MultiUtility(Exponential(), Step(threshold=0.5))
        assert shortfall_risk(U, make_scenarios([0.1, 0.2, 0.3], [0.6, 0.7, 0.4])).value == POS_INF

    def test_infinite_penalty_never_triggered(self):
        U = MultiUtility(Exponential(), Step(threshold=0.5))
        scen = make_scenarios([0.1, -0.2, 0.3], [0.6, 0.7, 0.5])
        assert shortfall_risk(U, scen).value == pytest.approx(financial_shortfall_risk(Exponential(), scen).value, abs=TOL)


class TestExpectedUtility:
    def test_capped_outside_domain(self):
        scen = make_scenarios([-1.0, 0.1, 0.2], [0.5, 0.5, 0.5])
        assert expected_utility(entropic_esg_utility(capped=True), scen) == NEG_INF
        assert math.isfinite(expected_utility(entropic_esg_utility(), scen))

    def test_cash_shift(self):
        scen = make_scenarios([0.0, 0.2], [0.5982, 0.5982])
        U = entropic_esg_utility()
        assert expected_utility(U, scen, m=0.3) == pytest.approx(expected_utility(U, scen.shifted(cash=0.3)), abs=1e-12)

    @pytest.mark.parametrize(
        "U",
        [
            entropic_esg_utility(),
            entropic_esg_utility(k=0.0, capped=True),
            MultiUtility(Linear(), ScaledShiftedExponential(), k=0.5),
            MultiUtility(Exponential(gamma=2.0), Step(threshold=0.5, penalty=0.3), k=-0.4),
        ],
    )
    def test_matches_samplewise_mean(self, rng, U):
        scen = make_scenarios(rng.normal(0.0, 0.3, 400), rng.uniform(0.0, 1.0, 400))
        x, s = scen.position()
        for m in (-2.0, -0.1, 0.0, 0.7, 5.0):
            assert expected_utility(U, scen, m=m) == pytest.approx(float(np.mean(U(x + m, s))), rel=1e-12, abs=1e-12)

    def test_overflowing_loss(self):
        scen = make_scenarios([-900.0, 0.0], [0.5982, 0.5982])
        assert expected_utility(entropic_esg_utility(), scen) == NEG_INF
        assert math.isfinite(expected_utility(entropic_esg_utility(), scen, m=900.0))


class TestEsgRiskPremium:
    def test_zero_when_rating_utility_is_off(self, reference_scenarios):
        U = entropic_esg_utility(c=0.0)
        assert esg_risk_premium(U, reference_scenarios) == 0.0

    def test_indifference_without_interaction(self, rng):
        u2 = ScaledShiftedExponential()
        s = np.array([0.4, _indifferent_pair(u2, 0.4)] * 250)
        scen = make_scenarios(rng.normal(0.0, 0.1, 500), s)
        assert indifference_gap(u2, scen) == pytest.approx(0.0, abs=1e-15)
        assert abs(esg_risk_premium(MultiUtility(Exponential(), u2, k=0.0), scen)) < 2 * TOL

    def test_indifference_with_interaction(self, rng):
        u2 = ScaledShiftedExponential()
        scen = _product_scenarios(rng.normal(0.0, 0.1, 60), [0.4, _indifferent_pair(u2, 0.4)] * 20)
        assert abs(esg_risk_premium(MultiUtility(Exponential(), u2, k=1.0), scen)) < 2 * TOL

    @pytest.mark.parametrize("ratings, sign", [((0.7, 0.9), -1.0), ((0.1, 0.3), 1.0)])
    def test_sign_follows_rating_exposure(self, rng, ratings, sign):
        U = entropic_esg_utility()
        scen = _product_scenarios(rng.normal(0.0, 0.1, 60), np.linspace(*ratings, 40))
        gap = indifference_gap(U.u2, scen)
        premium = esg_risk_premium(U, scen)
        assert np.sign(gap) == -sign
        assert np.sign(premium) == sign

    def test_infinite_risk_gives_infinite_premium(self):
        U = MultiUtility(Exponential(), Step(threshold=0.5))
        assert esg_risk_premium(U, make_scenarios([0.1, 0.2], [0.3, 0.9])) == POS_INF

    def test_weighted_gap(self):
        u2 = ScaledShiftedExponential()
        scen = make_scenarios([0.0, 0.0], [0.2, 0.9])
        assert indifference_gap(u2, scen, weights=[1.0, 0.0]) == pytest.approx(float(u2(0.2)))


class TestShiftCurve:
    def test_endpoints_and_monotonicity(self, entropic_esg, reference_scenarios):
        curve = shift_curve(entropic_esg, reference_scenarios, np.linspace(-1.0, 1.0, 21))
        x, _ = reference_scenarios.position()
        zero = shortfall_risk(entropic_esg, make_scenarios(x, np.zeros_like(x))).value
        one = shortfall_risk(entropic_esg, make_scenarios(x, np.ones_like(x))).value
        assert curve.rho[0] == pytest.approx(zero, abs=TOL)
        assert curve.rho[-1] == pytest.approx(one, abs=TOL)
        assert np.all(np.diff(curve.rho) <= 2 * TOL)
        assert np.all(curve.marginal_rho <= 1e-6)

    def test_smaller_scale_narrows_range(self, reference_scenarios):
        grid = np.linspace(-1.0, 1.0, 5)
        wide = shift_curve(entropic_esg_utility(c=0.1), reference_scenarios, grid)
        narrow = shift_curve(entropic_esg_utility(c=0.05), reference_scenarios, grid)
        assert np.ptp(narrow.rho) < np.ptp(wide.rho)

    def test_frame(self, entropic_esg, reference_scenarios):
        frame = shift_curve(entropic_esg, reference_scenarios, [-0.5, 0.0, 0.5]).to_frame()
        assert list(frame.columns) == ["shift", "rho", "marginal_rho"]
        assert len(frame) == 3

    def test_unsorted_grid_with_repeats(self, entropic_esg, reference_scenarios):
        curve = shift_curve(entropic_esg, reference_scenarios, [0.5, -0.5, 0.0, 0.5])
        assert curve.shifts.tolist() == [-0.5, 0.0, 0.5]
        ordered = shift_curve(entropic_esg, reference_scenarios, [-0.5, 0.0, 0.5])
        assert np.array_equal(curve.rho, ordered.rho)

    @pytest.mark.parametrize("grid", [[], [-1.5, 0.0], [0.0, math.nan]])
    def test_invalid_grid(self, entropic_esg, reference_scenarios, grid):
        with pytest.raises(InputError):
            shift_curve(entropic_esg, reference_scenarios, grid)


class TestRiskTable:
    def test_risk_row(self, entropic_esg, reference_scenarios):
        row = risk_row(entropic_esg, reference_scenarios, esg_rating_now=0.5982)
        assert row.asset == "REF"
        assert row.premium == pytest.approx(row.rho_esg - row.rho_financial)
        assert row.rho_financial_closed_form == pytest.approx(row.rho_financial, abs=1e-8)

    def test_rank_premia(self):
        table = pd.DataFrame(
            {
                "asset": list("ABCDEF"),
                "rho_financial": np.zeros(6),
                "rho_esg": np.zeros(6),
                "premium": [0.3, -0.2, 0.1, -0.5, math.inf, 0.0],
            }
        )
        ranked = rank_premia(table, top=2)
        assert ranked["side"].tolist() == ["positive", "positive", "negative", "negative"]
        assert ranked["asset"].tolist() == ["A", "C", "D", "B"]
        assert ranked["rank"].tolist() == [1, 2, 1, 2]
