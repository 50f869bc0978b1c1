import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_psd
from esg_portfolio.market_data import EsgTable, ReturnsPanel
from esg_portfolio.optimizer import (
    ESG_MV,
    MV,
    DegenerateMarketError,
    MarketInputs,
    NonPSDCovarianceError,
    OptimizerError,
    SolverConfig,
    annualize,
    initial_points,
    objective_functions,
    optimize_esg_mv,
    optimize_mv,
    portfolio_stats,
)
from oracles import central_difference, grid_best


def make_market(mu, cov, esg=None, rf=0.0):
    n = len(mu)
    esg = np.full(n, 5.0) if esg is None else esg
    return MarketInputs(tuple(f"A{i}" for i in range(n)), mu, cov, esg, rf)


def random_market(rng, n, esg=None):
    mu = rng.normal(0.10, 0.08, n)
    return make_market(mu, random_psd(rng, n), rng.uniform(0, 10, n) if esg is None else esg)


def _panel(mean, cov):
    n = len(mean)
    return ReturnsPanel(tuple(f"S{i}" for i in range(n)), np.array([], dtype="datetime64[D]"),
                        np.zeros((n, 0)), np.asarray(mean, float), np.asarray(cov, float))


class TestAnnualize:
    def test_mean_scaling(self):
        m = annualize(_panel([0.001], [[1e-4]]), [5.0])
        assert m.mu_annual[0] == pytest.approx(0.252, abs=1e-15)

    def test_risk_scaling(self):
        m = annualize(_panel([0.0], [[1e-4]]), [5.0])
        assert math.sqrt(m.cov_annual[0, 0]) == pytest.approx(0.158745, abs=1e-6)

    def test_zero_panel(self):
        m = annualize(_panel([0.0, 0.0], np.zeros((2, 2))), [1.0, 2.0])
        assert np.all(m.mu_annual == 0)

    def test_esg_lookup(self):
        m = annualize(_panel([0.0, 0.0], np.eye(2)), EsgTable({"S0": 1.0, "S1": 0.0}), risk_free=0.02)
        assert m.esg.tolist() == [1.0, 0.0] and m.risk_free == 0.02

    def test_missing_esg(self):
        with pytest.raises(OptimizerError, match="S1"):
            annualize(_panel([0.0, 0.0], np.eye(2)), EsgTable({"S0": 1.0}))


class TestPortfolioStats:
    def test_single_asset(self):
        p = portfolio_stats([1.0], make_market([0.20], [[0.04]]))
        assert (p.return_annual, p.risk_annual, p.sharpe) == pytest.approx((0.20, 0.20, 1.0), abs=1e-15)

    def test_identical_assets(self):
        single = portfolio_stats([1.0], make_market([0.20], [[0.04]]))
        pair = portfolio_stats([0.5, 0.5], make_market([0.2, 0.2], np.full((2, 2), 0.04)))
        assert pair.sharpe == pytest.approx(single.sharpe, abs=1e-12)
        assert pair.risk_annual == pytest.approx(single.risk_annual, abs=1e-12)

    def test_esg_mean(self):
        p = portfolio_stats([0.5, 0.5], make_market([0.1, 0.1], np.eye(2), [2.0, 8.0]))
        assert p.esg_mean == 5.0

    def test_esg_objective(self):
        m = make_market([0.1, 0.2], np.diag([0.04, 0.09]), [2.0, 8.0], rf=0.01)
        p = portfolio_stats([0.3, 0.7], m, ESG_MV)
        assert p.objective_value == pytest.approx(p.esg_mean * p.sharpe, rel=1e-15)

    def test_zero_risk_signals(self):
        assert math.isnan(portfolio_stats([1.0], make_market([0.0], [[0.0]])).sharpe)
        assert portfolio_stats([1.0], make_market([0.05], [[0.0]])).sharpe == math.inf

    def test_dimension_mismatch(self):
        with pytest.raises(OptimizerError):
            portfolio_stats([1.0], make_market([0.1, 0.1], np.eye(2)))


class TestMarketInputs:
    def test_non_psd(self):
        with pytest.raises(NonPSDCovarianceError):
            make_market([0.1, 0.1], [[1.0, 2.0], [2.0, 1.0]])

    def test_asymmetric(self):
        with pytest.raises(NonPSDCovarianceError):
            make_market([0.1, 0.1], [[1.0, 0.5], [0.1, 1.0]])

    def test_subset(self):
        m = make_market([0.1, 0.2, 0.3], np.diag([1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])
        s = m.subset(["A2", "A0"])
        assert s.mu_annual.tolist() == [0.3, 0.1] and s.cov_annual.tolist() == [[3.0, 0.0], [0.0, 1.0]]


class TestOptimize:
    def test_single_asset(self):
        p = optimize_mv(make_market([-0.3], [[0.5]]))
        assert p.weights.tolist() == [1.0]
        assert optimize_esg_mv(make_market([0.3], [[0.0]])).weights.tolist() == [1.0]

    @pytest.mark.parametrize("seed", range(5))
    def test_three_assets_against_grid(self, seed):
        rng = np.random.default_rng(seed)
        m = random_market(rng, 3)
        for optimize, weighted in ((optimize_mv, False), (optimize_esg_mv, True)):
            best, _ = grid_best(m.mu_annual, m.cov_annual, m.esg, m.risk_free, weighted)
            assert optimize(m).objective_value >= best - 1e-4

    def test_dominant_asset_gets_more(self):
        m = make_market([0.2, 0.1], np.diag([0.04, 0.04]))
        w = optimize_mv(m).weights
        best_w = grid_best(m.mu_annual, m.cov_annual, m.esg, 0.0, False)[1]
        assert w[0] > w[1] and best_w[0] > best_w[1]
        # closed form for independent assets: w proportional to mu / var
        assert w == pytest.approx([2 / 3, 1 / 3], abs=1e-4)

    @pytest.mark.parametrize("c", [0.5, 1.0, 10.0])
    def test_uniform_esg_does_not_move_weights(self, c):
        m = random_market(np.random.default_rng(21), 6, esg=np.full(6, c))
        assert optimize_esg_mv(m).weights == pytest.approx(optimize_mv(m).weights, abs=1e-4)

    def test_high_esg_gains_low_esg_loses(self):
        mu = np.array([0.20, 0.12, 0.06, 0.15])
        sd = np.array([0.15, 0.20, 0.12, 0.18])
        corr = np.array([[1, .2, .6, .3], [.2, 1, .2, .3], [.6, .2, 1, .2], [.3, .3, .2, 1]])
        m = MarketInputs(("CORE", "SDP", "WBIG", "MID"), mu, np.outer(sd, sd) * corr, [5.8, 0.0, 9.38, 6.0])
        mv, esg = optimize_mv(m), optimize_esg_mv(m)
        assert mv.weights[2] < 1e-6 and esg.weights[2] > 0.1
        assert mv.weights[1] > 0.05 and esg.weights[1] < 1e-6

    def test_degenerate_market(self):
        with pytest.raises(DegenerateMarketError):
            optimize_mv(make_market([0.0, 0.0], np.zeros((2, 2))))

    def test_negative_sharpe_warns(self):
        p = optimize_mv(make_market([-0.1, -0.2], np.diag([0.04, 0.09])))
        assert p.warning is not None and p.sharpe < 0
        assert p.weights.sum() == pytest.approx(1.0, abs=1e-8)

    def test_deterministic(self):
        m = random_market(np.random.default_rng(2), 12)
        a, b = optimize_esg_mv(m), optimize_esg_mv(m)
        assert np.array_equal(a.weights, b.weights)

    def test_initial_points(self):
        starts = initial_points(4, SolverConfig(multistarts=3, seed=1))
        assert len(starts) == 3 and starts[0].tolist() == [0.25] * 4
        assert all(abs(s.sum() - 1) < 1e-12 and s.min() >= 0 for s in starts)

    def test_extra_start_is_used(self):
        m = random_market(np.random.default_rng(8), 10)
        mv = optimize_mv(m)
        esg = optimize_esg_mv(m, SolverConfig(multistarts=1), extra_starts=[mv.weights])
        assert esg.objective_value >= portfolio_stats(mv.weights, m, ESG_MV).objective_value - 1e-9


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(2, 12))
def test_properties_on_random_markets(seed, n):
    m = random_market(np.random.default_rng(seed), n)
    config = SolverConfig(multistarts=3)
    mv, esg = optimize_mv(m, config), optimize_esg_mv(m, config)
    for p in (mv, esg):
        assert abs(p.weights.sum() - 1) <= 1e-8
        assert p.weights.min() >= 0 and p.weights.max() <= 1
        assert p.return_annual == p.weights @ m.mu_annual
        assert p.risk_annual == pytest.approx(math.sqrt(p.weights @ m.cov_annual @ p.weights), abs=1e-10)
    assert mv.sharpe >= esg.sharpe - 1e-6
    if mv.sharpe > 0 and esg.sharpe > 0:
        assert esg.esg_mean >= mv.esg_mean - 1e-6


@pytest.mark.parametrize("model", [MV, ESG_MV])
def test_gradient_matches_finite_differences(model):
    rng = np.random.default_rng(99)
    m = random_market(rng, 5)
    f, grad = objective_functions(m, model)
    for _ in range(20):
        w = rng.dirichlet(np.ones(5))
        np.testing.assert_allclose(grad(w), central_difference(f, w), rtol=1e-5, atol=1e-7)
