import math

import numpy as np
import pytest

from armington.errors import EmptyPanelError, MalformedRecordError, MissingDataError
from armington.periods import Month
from armington.trade_data import (MeatGroup, PanelDataset, PanelObservation,
                                  TransactionRecord, aggregate_items,
                                  build_panel, compute_shares, filter_sparse,
                                  split_pork)

M0 = Month(2000, 1)
BEEF = MeatGroup.default("beef")


def rec(value, quantity, item=1, country="AA", period=M0):
    return TransactionRecord(period=period, country=country, item=item,
                             value=value, quantity=quantity)


class TestAggregateItems:
    def test_additivity(self):
        out = aggregate_items([rec(100, 50), rec(200, 50, item=2)], BEEF)
        agg = out[("AA", M0)]
        assert (agg.value, agg.quantity, agg.cif) == (300, 100, 3.0)

    def test_single_record(self):
        out = aggregate_items([rec(500, 250)], BEEF)
        assert out[("AA", M0)].cif == 2.0

    def test_brute_force_oracle(self):
        # 78-item month with random entries vs independent re-summation
        rng = np.random.default_rng(0)
        group = MeatGroup(meat=BEEF.meat, items=frozenset(range(1, 79)))
        records = [rec(float(rng.uniform(1, 100)), float(rng.uniform(1, 50)), item=g)
                   for g in range(1, 79)]
        out = aggregate_items(records, group)
        total_v = 0.0
        total_x = 0.0
        for r in records:  # oracle: plain running sums
            total_v += r.value
            total_x += r.quantity
        assert out[("AA", M0)].value == pytest.approx(total_v, rel=1e-13)
        assert out[("AA", M0)].cif == pytest.approx(total_v / total_x, rel=1e-13)

    def test_zero_quantity_with_value_errors(self):
        with pytest.raises(MalformedRecordError, match="AA"):
            aggregate_items([rec(10.0, 0.0)], BEEF)

    def test_zero_zero_skipped(self):
        assert aggregate_items([rec(0.0, 0.0)], BEEF) == {}

    def test_unpriceable_zero_value_pair_dropped(self):
        # positive quantity but no value: no usable log price
        assert aggregate_items([rec(0.0, 50.0)], BEEF) == {}

    def test_items_outside_group_ignored(self):
        assert aggregate_items([rec(10, 5, item=50)], BEEF) == {}

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        records = [rec(float(rng.uniform(1, 9)), float(rng.uniform(1, 9)),
                       item=1 + int(rng.integers(16)),
                       country=f"C{int(rng.integers(3))}")
                   for _ in range(40)]
        forward = aggregate_items(records, BEEF)
        backward = aggregate_items(records[::-1], BEEF)
        assert forward == backward


class TestComputeShares:
    def test_single_country(self):
        assert compute_shares({"AA": 7.0}) == {"AA": 1.0}

    def test_symmetry(self):
        shares = compute_shares({"AA": 3.0, "BB": 3.0})
        assert shares == {"AA": 0.5, "BB": 0.5}

    def test_direct_arithmetic(self):
        shares = compute_shares({"A": 1.0, "B": 2.0, "C": 3.0})
        assert shares["A"] == pytest.approx(1 / 6, rel=1e-15)
        assert shares["B"] == pytest.approx(2 / 6, rel=1e-15)
        assert shares["C"] == pytest.approx(3 / 6, rel=1e-15)

    def test_sum_to_one_random(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            vals = {f"c{i}": float(v)
                    for i, v in enumerate(rng.uniform(0.01, 1e9, size=40))}
            assert abs(sum(compute_shares(vals).values()) - 1.0) < 1e-12

    def test_empty_period(self):
        with pytest.raises(EmptyPanelError):
            compute_shares({})


def toy_panel(counts=None, n_periods=4):
    """Panel with controllable per-country observation counts."""
    counts = counts or {"AA": n_periods, "BB": n_periods}
    aggregates = {}
    tariffs = {}
    fx = {}
    for country, n in counts.items():
        for t in range(n):
            key = (country, M0.shift(t))
            aggregates[key] = __import__("armington.trade_data", fromlist=["ItemAggregate"]).ItemAggregate(
                value=100.0 + t, quantity=10.0)
            tariffs[key] = 0.05
            fx[key] = 1.5
    return build_panel("beef", aggregates, tariffs, fx)


class TestBuildPanel:
    def test_identity_p_equals_c_plus_t(self):
        panel = toy_panel()
        for o in panel.observations:
            assert o.P - o.C - o.T == 0.0

    def test_shares_sum_per_period(self):
        panel = toy_panel()
        for period in panel.periods:
            total = sum(math.exp(o.S) for o in panel.observations
                        if o.period == period)
            assert abs(total - 1.0) < 1e-12
            assert all(o.S <= 0 for o in panel.observations)

    def test_missing_tariff_errors(self):
        from armington.trade_data import ItemAggregate
        aggregates = {("AA", M0): ItemAggregate(100.0, 10.0)}
        with pytest.raises(MissingDataError, match="AA"):
            build_panel("beef", aggregates, {}, {})

    def test_missing_fx_gives_nan_e(self):
        from armington.trade_data import ItemAggregate
        aggregates = {("AA", M0): ItemAggregate(100.0, 10.0)}
        panel = build_panel("beef", aggregates, {("AA", M0): 0.0}, {})
        assert math.isnan(panel.observations[0].E)


class TestFilterSparse:
    def test_boundary_drop_and_keep(self):
        panel = toy_panel(counts={"AA": 9, "BB": 10, "CC": 12}, n_periods=12)
        kept = filter_sparse(panel, min_obs=9)
        assert kept.countries == ["BB", "CC"]

    def test_min_obs_zero_identity(self):
        panel = toy_panel()
        assert len(filter_sparse(panel, min_obs=0)) == len(panel)

    def test_all_dropped(self):
        panel = toy_panel(counts={"AA": 3, "BB": 3})
        with pytest.raises(EmptyPanelError):
            filter_sparse(panel, min_obs=5)

    def test_shares_not_recomputed(self):
        panel = toy_panel(counts={"AA": 12, "BB": 2})
        kept = filter_sparse(panel, min_obs=9)
        original = {(o.country, o.period): o.S for o in panel.observations}
        for o in kept.observations:
            assert o.S == original[(o.country, o.period)]


def test_duplicate_observation_rejected():
    obs = [pork_obs(500.0), pork_obs(600.0)]
    with pytest.raises(ValueError, match="duplicate"):
        PanelDataset(meat="pork", observations=obs)


def pork_obs(c_jpy, period=M0, country="AA"):
    C = math.log(c_jpy)
    return PanelObservation(country=country, period=period, S=-0.7,
                            P=C + 0.1, C=C, T=0.1, E=0.0, x=10.0, w=5.0)


class TestSplitPork:
    def test_below_threshold_regular(self):
        panel = PanelDataset(meat="pork", observations=[pork_obs(790.0)])
        regular, prime = split_pork(panel)
        assert len(regular) == 1 and len(prime) == 0

    def test_boundary_is_prime(self):
        panel = PanelDataset(meat="pork", observations=[pork_obs(800.0)])
        regular, prime = split_pork(panel)
        assert len(regular) == 0 and len(prime) == 1

    def test_partition(self):
        rng = np.random.default_rng(2)
        obs = [pork_obs(float(c), period=M0.shift(i))
               for i, c in enumerate(rng.uniform(300, 1500, size=60))]
        panel = PanelDataset(meat="pork", observations=obs)
        regular, prime = split_pork(panel)
        assert len(regular) + len(prime) == len(panel)
        merged = sorted((o.country, o.period)
                        for o in regular.observations + prime.observations)
        assert merged == sorted((o.country, o.period) for o in obs)
