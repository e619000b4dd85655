import math

import numpy as np
import pytest

from armington.ces_model import (FirstStageParams, SecondStageParams,
                                 SimConfig, duality_check, price_index,
                                 shares, simulate_panel)
from armington.panel_econometrics import (panel_arrays, time_dummies,
                                          within_fe_2sls, within_fe_ls)
from conftest import default_alpha

HALF = FirstStageParams(sigma=2.0, alpha=(0.5, 0.5))


class TestPriceIndex:
    def test_symmetric_unit_prices(self):
        for sigma in (0.5, 2.0, 5.0, 29.5):
            params = FirstStageParams(sigma=sigma, alpha=(0.5, 0.5))
            assert price_index([1.0, 1.0], params) == pytest.approx(1.0)

    def test_hand_evaluated_case(self):
        # sum alpha p^(1-sigma) = .5*1 + .5*(1/2) = 3/4; q = (3/4)^(-1) = 4/3
        assert price_index([1.0, 2.0], HALF) == pytest.approx(4.0 / 3.0, rel=1e-15)

    def test_homogeneity_degree_one(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(2, 6))
            w = rng.uniform(0.1, 1.0, n)
            params = FirstStageParams(sigma=float(rng.uniform(1.2, 8.0)),
                                      alpha=tuple(w / w.sum()))
            p = rng.uniform(0.5, 3.0, n)
            lam = float(rng.uniform(0.5, 4.0))
            assert price_index(lam * p, params) == pytest.approx(
                lam * price_index(p, params), rel=1e-12)

    def test_sigma_one_rejected(self):
        with pytest.raises(ValueError):
            FirstStageParams(sigma=1.0, alpha=(0.5, 0.5))

    def test_nonpositive_price(self):
        with pytest.raises(ValueError):
            price_index([1.0, 0.0], HALF)


class TestShares:
    def test_hand_evaluated_case(self):
        s = shares([1.0, 2.0], HALF)
        assert s == pytest.approx([2.0 / 3.0, 1.0 / 3.0], rel=1e-15)

    def test_equal_prices_give_alpha(self):
        params = FirstStageParams(sigma=3.0, alpha=(0.2, 0.3, 0.5))
        assert shares([4.0, 4.0, 4.0], params) == pytest.approx([0.2, 0.3, 0.5])

    def test_sum_to_one_and_homogeneity_zero(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            n = int(rng.integers(2, 7))
            w = rng.uniform(0.1, 1.0, n)
            params = FirstStageParams(sigma=float(rng.uniform(1.2, 8.0)),
                                      alpha=tuple(w / w.sum()))
            p = rng.uniform(0.5, 3.0, n)
            s = shares(p, params)
            assert s.sum() == pytest.approx(1.0, abs=1e-12)
            assert shares(2.5 * p, params) == pytest.approx(s, rel=1e-12)

    def test_shephard_finite_difference(self):
        # d ln q / d ln p_i must equal the share, by central differences
        rng = np.random.default_rng(2)
        for _ in range(10):
            n = int(rng.integers(2, 6))
            w = rng.uniform(0.1, 1.0, n)
            params = FirstStageParams(sigma=float(rng.uniform(1.5, 6.0)),
                                      alpha=tuple(w / w.sum()))
            p = rng.uniform(0.5, 2.0, n)
            s = shares(p, params)
            h = 1e-6
            for i in range(n):
                up, dn = p.copy(), p.copy()
                up[i] *= math.exp(h)
                dn[i] *= math.exp(-h)
                deriv = (math.log(price_index(up, params))
                         - math.log(price_index(dn, params))) / (2 * h)
                assert abs(deriv - s[i]) < 1e-6


class TestDuality:
    def test_single_country_exact(self):
        first = FirstStageParams(sigma=3.0, alpha=(1.0,))
        second = SecondStageParams(rho=2.0, beta=0.4)
        assert duality_check([2.0], r=5.0, u=10.0, first=first,
                             second=second) < 1e-12

    def test_random_three_country(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            w = rng.uniform(0.1, 1.0, 3)
            first = FirstStageParams(sigma=float(rng.uniform(1.3, 9.0)),
                                     alpha=tuple(w / w.sum()))
            second = SecondStageParams(rho=float(rng.uniform(0.3, 3.0) + 1e-3),
                                       beta=float(rng.uniform(0.05, 0.95)))
            if second.rho == 1.0:
                continue
            res = duality_check(rng.uniform(0.5, 4.0, 3).tolist(),
                                r=float(rng.uniform(0.5, 4.0)),
                                u=float(rng.uniform(1.0, 20.0)),
                                first=first, second=second)
            assert res < 1e-9

    def test_beta_zero_degenerate(self):
        first = FirstStageParams(sigma=2.5, alpha=(0.6, 0.4))
        second = SecondStageParams(rho=1.8, beta=0.0)
        # all expenditure goes to imports: v*u = q*y exactly
        assert duality_check([1.0, 2.0], r=3.0, u=7.0, first=first,
                             second=second) < 1e-12


class TestSimulator:
    def test_deterministic_by_seed(self):
        cfg = SimConfig(n_countries=4, n_months=24)
        first = FirstStageParams(sigma=4.0, alpha=default_alpha(4))
        a = simulate_panel(cfg, first, seed=5)
        b = simulate_panel(cfg, first, seed=5)
        assert a.panel.to_frame().equals(b.panel.to_frame())
        c = simulate_panel(cfg, first, seed=6)
        assert not a.panel.to_frame().equals(c.panel.to_frame())

    def test_zero_shocks_match_closed_form_shares(self):
        cfg = SimConfig(n_countries=5, n_months=12, demand_shock_sd=0.0,
                        supply_shock_sd=0.0, cif_markup_sd=0.0,
                        fob_trend_sd=0.0)
        first = FirstStageParams(sigma=4.0, alpha=default_alpha(5))
        econ = simulate_panel(cfg, first, seed=7)
        frame = econ.panel.to_frame()
        for period, grp in frame.groupby("period"):
            grp = grp.sort_values("country")
            prices = np.exp(grp["P"].to_numpy())
            expected = shares(prices, first)
            assert np.exp(grp["S"].to_numpy()) == pytest.approx(expected,
                                                                rel=1e-10)

    def test_exogenous_prices_make_ls_consistent(self):
        # perfectly elastic supply: slope 0 removes the feedback channel
        cfg = SimConfig(n_countries=8, n_months=120, inverse_supply_slope=0.0)
        first = FirstStageParams(sigma=4.0, alpha=default_alpha(8))
        gammas = []
        for seed in range(8):
            econ = simulate_panel(cfg, first, seed=seed)
            arr = panel_arrays(econ.panel)
            D, codes = time_dummies(arr.times)
            names = ["lnp"] + [f"d:{c}" for c in codes]
            fit = within_fe_ls(arr.S, np.column_stack([arr.P, D]), names,
                               arr.entities, arr.times)
            gammas.append(fit.param("lnp"))
        assert np.mean(gammas) == pytest.approx(first.gamma, abs=0.1)

    def test_endogenous_prices_bias_ls_toward_zero(self):
        cfg = SimConfig(n_countries=8, n_months=120, inverse_supply_slope=0.5)
        first = FirstStageParams(sigma=4.0, alpha=default_alpha(8))
        g_ls, g_iv = [], []
        for seed in range(8):
            econ = simulate_panel(cfg, first, seed=100 + seed)
            arr = panel_arrays(econ.panel)
            D, codes = time_dummies(arr.times)
            names = ["lnp"] + [f"d:{c}" for c in codes]
            ls = within_fe_ls(arr.S, np.column_stack([arr.P, D]), names,
                              arr.entities, arr.times)
            iv = within_fe_2sls(arr.S, arr.P, D, arr.E.reshape(-1, 1), names,
                                arr.entities, arr.times)
            g_ls.append(ls.param("lnp"))
            g_iv.append(iv.param("lnp"))
        bias_ls = abs(np.mean(g_ls) - first.gamma)
        bias_iv = abs(np.mean(g_iv) - first.gamma)
        assert abs(np.mean(g_ls)) < abs(first.gamma)  # attenuated toward zero
        assert bias_iv < bias_ls

    def test_high_elasticity_compresses_price_dispersion(self):
        alpha = default_alpha(8)
        disp = {}
        for sigma in (4.0, 29.5):
            cfg = SimConfig(n_countries=8, n_months=60)
            econ = simulate_panel(cfg, FirstStageParams(sigma=sigma, alpha=alpha),
                                  seed=3)
            frame = econ.panel.to_frame()
            # average within-month cross-country spread of CIF prices
            disp[sigma] = frame.groupby("period")["C"].std().mean()
        assert disp[29.5] < 0.5 * disp[4.0]

    def test_truth_index_normalized_at_last_period(self):
        econ = simulate_panel(SimConfig(n_countries=4, n_months=24),
                              FirstStageParams(sigma=3.0, alpha=default_alpha(4)),
                              seed=1)
        assert econ.truth.q_index[-1] == pytest.approx(1.0, abs=1e-12)

    def test_domestic_block_satisfies_value_ratio_equation(self):
        cfg = SimConfig(n_countries=4, n_months=48, domestic_shock_sd=0.0)
        first = FirstStageParams(sigma=3.0, alpha=default_alpha(4))
        second = SecondStageParams(rho=1.5, beta=0.6)
        econ = simulate_panel(cfg, first, second, seed=9)
        t = econ.truth
        dom = econ.domestic
        H = np.log(dom["price_jpy_per_kg"].to_numpy()
                   * dom["quantity_kg"].to_numpy()
                   / np.array([t.monthly_import_value[
                       [m.year == y for m in t.periods]].sum()
                       for y in t.years]))
        fitted = t.phi + t.eta * (t.annual_R - t.annual_Q)
        assert H == pytest.approx(fitted, rel=1e-10)
