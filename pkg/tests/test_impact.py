import math
from datetime import date, timedelta

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_benchmarks, t_pvalue_quad
from tradenet.impact import (
    LAGS,
    N_LAGS,
    SCALE,
    BenchmarkIndex,
    PriceTape,
    ReturnWindow,
    benchmark_set,
    event_windows,
    excess_returns,
    impact_report,
    lag_table,
    one_sample_ttest,
    stars,
    t_pvalue,
    trade_returns,
)
from tradenet.tape import BUYER, SELLER, SESSION_OPEN_MS, Trade

D0 = date(2024, 1, 1)


def market(prices_by_day, times_by_day=None, aggressors=None):
    out = []
    for d, prices in enumerate(prices_by_day):
        day = D0 + timedelta(days=d)
        for k, p in enumerate(prices):
            t = times_by_day[d][k] if times_by_day else SESSION_OPEN_MS + 1000 * k
            a = aggressors[d][k] if aggressors else (BUYER if k % 2 else SELLER)
            out.append(Trade("S1", day, int(t), "a", "b", int(p), 1, a, k + 1))
    return out


def random_market(rng, n_days=12, per_day=80):
    prices, times, aggs = [], [], []
    for _ in range(n_days):
        steps = rng.integers(-2, 3, per_day)
        prices.append(1000 + np.cumsum(steps))
        times.append(np.sort(rng.choice(np.arange(SESSION_OPEN_MS, SESSION_OPEN_MS + 14_400_000, 250), per_day, replace=False)))
        aggs.append([BUYER if x else SELLER for x in rng.random(per_day) < 0.5])
    return market(prices, times, aggs)


# ---------------------------------------------------------------- return windows


def test_flat_prices_give_zero_returns():
    tr = market([[500] * 40])
    w = trade_returns(tr, (D0, 20))
    assert w.shape == (N_LAGS,) and np.all(w == 0)


def test_lag_zero_is_event_return():
    prices = [100] * 40
    prices[20:] = [101] * 20  # trade seq 21 (index 20) moves 100 -> 101
    tr = market([prices])
    w = trade_returns(tr, (D0, 21))
    assert w[LAGS] == pytest.approx(math.log(101 / 100), abs=0, rel=1e-12)
    assert np.count_nonzero(w) == 1


def test_window_matches_direct_recomputation():
    rng = np.random.default_rng(0)
    tr = random_market(rng, n_days=3)
    tape = PriceTape(tr)
    logp = [math.log(t.price) for t in tape.trades]
    for k in range(len(tape)):
        w = tape.window(k)
        same_day = k - 11 >= 0 and k + 10 < len(tape) and tape.trades[k - 11].day == tape.trades[k + 10].day
        if not same_day:
            assert w is None
            continue
        want = [logp[k + i] - logp[k + i - 1] for i in range(-LAGS, LAGS + 1)]
        np.testing.assert_allclose(w, want, rtol=0, atol=1e-15)


def test_windows_do_not_use_overnight_returns():
    tr = market([[100] * 30, [200] * 30])
    tape = PriceTape(tr)
    assert tape.window(30) is None and tape.window(40) is None and tape.window(41) is not None
    assert tape.window(41).sum() == 0


def test_unknown_trade_key():
    with pytest.raises(KeyError):
        trade_returns(market([[1] * 30]), (D0, 999))


# ---------------------------------------------------------------- benchmarks


def test_exact_time_matches_are_selected():
    n_days = 21
    times = [[SESSION_OPEN_MS + 1000 * k for k in range(40)] for _ in range(n_days)]
    aggs = [[SELLER] * 40 for _ in range(n_days)]
    for d in range(n_days):
        aggs[d][20] = BUYER
    tr = market([[100] * 40] * n_days, times, aggs)
    chosen = benchmark_set((D0, 21), tr)
    assert sorted(chosen) == [(D0 + timedelta(days=d), 21) for d in range(1, n_days)]


def test_opposite_aggressors_only_means_no_benchmark():
    n_days = 6
    aggs = [[SELLER] * 40 for _ in range(n_days)]
    aggs[0][20] = BUYER
    tr = market([[100] * 40] * n_days, aggressors=aggs)
    assert benchmark_set((D0, 21), tr) is None


def test_small_control_sets():
    # six other days with one same-aggressor candidate each: usable but short
    n_days = 7
    aggs = [[SELLER] * 40 for _ in range(n_days)]
    for d in range(n_days):
        aggs[d][20] = BUYER
    tr = market([[100] * 40] * n_days, aggressors=aggs)
    assert len(benchmark_set((D0, 21), tr)) == 6
    assert benchmark_set((D0, 21), tr[: 40 * 5]) is None  # only four other days


@pytest.mark.parametrize("seed", range(6))
def test_benchmarks_match_reranking_oracle(seed):
    rng = np.random.default_rng(seed)
    tr = random_market(rng)
    tape = PriceTape(tr)
    keys = [t.key for t in tr if tape.valid[tape.index[t.key]]]
    events = [keys[int(i)] for i in rng.choice(len(keys), 15, replace=False)]
    index = BenchmarkIndex(tape, events)
    for key in events:
        got = index.select(tape.index[key])
        want = brute_benchmarks(tr, key, set(events))
        assert [tape.trades[j].key for j in got] == want


# ---------------------------------------------------------------- excess returns and tests


def test_excess_arithmetic():
    rng = np.random.default_rng(1)
    raw = rng.normal(size=N_LAGS)
    assert np.all(excess_returns(raw, [raw, raw]).excess == 0)
    np.testing.assert_array_equal(excess_returns(raw, [np.zeros(N_LAGS)] * 3).excess, raw)
    bench = rng.normal(size=(20, N_LAGS))
    np.testing.assert_allclose(excess_returns(raw, bench).excess, raw - bench.mean(axis=0), rtol=0, atol=1e-15)


@pytest.mark.parametrize("t,df", [(0.0, 5), (0.5, 3), (1.96, 30), (-2.5, 12), (4.0, 19), (10.0, 100), (0.01, 1)])
def test_t_pvalue_matches_quadrature(t, df):
    assert t_pvalue(t, df) == pytest.approx(t_pvalue_quad(t, df), rel=1e-9, abs=1e-15)


def test_ttest_matches_scipy():
    from scipy import stats

    x = np.random.default_rng(2).normal(0.3, 1, 25)
    r = one_sample_ttest(x)
    ref = stats.ttest_1samp(x, 0.0)
    assert r.t == pytest.approx(ref.statistic, rel=1e-12)
    assert r.p == pytest.approx(ref.pvalue, rel=1e-10)


def test_zero_variance_is_degenerate():
    r = one_sample_ttest([0.002] * 10)
    assert r.degenerate and r.p == 0.0 and r.mean == pytest.approx(0.002)
    z = one_sample_ttest([0.0] * 10)
    assert z.degenerate and z.p == 1.0
    assert one_sample_ttest([1.0]) is None


def test_stars():
    assert [stars(p) for p in (0.2, 0.04, 0.009, 0.0009, None)] == ["", "*", "**", "***", ""]


def test_panel_b_is_sum_of_panel_a():
    rng = np.random.default_rng(3)
    ws = [ReturnWindow(None, BUYER, r, b, r - b) for r, b in zip(rng.normal(0, 1e-3, (40, N_LAGS)), rng.normal(0, 1e-3, (40, N_LAGS)))]
    tab = lag_table(ws)
    a = {row["i"]: row for row in tab["panel_a"]}
    b = {row["i"]: row for row in tab["panel_b"]}
    for label, lags in (("[-10,-1]", range(-10, 0)), ("0", [0]), ("[1,10]", range(1, 11))):
        for col in ("mean_raw", "mean_excess"):
            assert math.isclose(b[label][col], sum(a[i][col] for i in lags), rel_tol=1e-12, abs_tol=1e-12)
    assert tab["n_events"] == 40 and tab["testable"]


def test_short_tables_have_no_pvalues():
    tab = lag_table([])
    assert tab["n_events"] == 0 and not tab["testable"]
    assert all(row["p_raw"] is None for row in tab["panel_a"])


def test_injected_jumps_have_table_signs():
    rng = np.random.default_rng(4)
    tr = random_market(rng, n_days=15, per_day=100)
    tape = PriceTape(tr)
    keys = [t.key for t in tr if tape.valid[tape.index[t.key]]]
    picked = set(keys[int(i)] for i in rng.choice(len(keys), 40, replace=False))
    # rebuild the market with a jump at each picked trade in its aggressor's direction
    out, shift = [], {}
    for t in tape.trades:
        lvl = shift.get(t.day, 0)
        if t.key in picked:
            lvl += 30 if t.aggressor == BUYER else -30
            shift[t.day] = lvl
        out.append(t._replace(price=t.price + lvl))
    rep = impact_report(event_windows(out, sorted(picked)))
    assert rep["scale"] == SCALE
    assert rep["buyer"]["panel_a"][LAGS]["mean_raw"] > 0
    assert rep["seller"]["panel_a"][LAGS]["mean_raw"] < 0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e-2, 1e-2, allow_nan=False), min_size=2, max_size=40))
def test_pvalue_bounds(xs):
    r = one_sample_ttest(xs)
    assert 0.0 <= r.p <= 1.0
