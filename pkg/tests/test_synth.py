import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import label_misses
from tradenet import pipeline
from tradenet.synth import (
    Bump,
    Injection,
    InjectionPlan,
    Label,
    MarketConfig,
    PlanError,
    ScheduledTrade,
    _bump_factor,
    _void_broken,
    generate,
    random_plan,
    read_labels,
    write_labels,
)
from tradenet.tape import BUYER, SELLER, SESSION_MINUTES, render_order_tape, session_minute

SMALL = dict(n_days=3, n_background_traders=200, order_rate=5.0, seed=11)


def run(config, plan=None):
    res = generate(config, plan)
    trades, _, _, _ = pipeline.replay_all(res.events)
    return res, trades


def motif_index(trades):
    rep = pipeline.motif_report(trades)
    return {s: [(i["kind"], i["traders"], i["trades"]) for i in e["instances"]] for s, e in rep["stocks"].items()}


def test_same_seed_same_bytes():
    cfg = MarketConfig(**SMALL)
    plan = random_plan(cfg, 6, seed=2)
    a, b = generate(cfg, plan), generate(cfg, plan)
    assert render_order_tape(a.events) == render_order_tape(b.events)
    assert a.labels == b.labels


def test_different_seed_differs():
    a = generate(MarketConfig(**SMALL))
    b = generate(MarketConfig(**{**SMALL, "seed": 12}))
    assert render_order_tape(a.events) != render_order_tape(b.events)


def test_parallel_generation_matches_sequential():
    cfg = MarketConfig(**{**SMALL, "n_stocks": 3, "n_days": 2})
    plan = random_plan(cfg, 3, seed=4)
    assert render_order_tape(generate(cfg, plan, jobs=2).events) == render_order_tape(generate(cfg, plan).events)


def test_stock_streams_are_independent_of_other_stocks():
    one = generate(MarketConfig(**{**SMALL, "n_stocks": 1}))
    two = generate(MarketConfig(**{**SMALL, "n_stocks": 2}))
    assert render_order_tape(one.events) == render_order_tape([e for e in two.events if e.stock == "S001"])


def test_single_wash_injection_self_trades():
    cfg = MarketConfig(**SMALL)
    plan = InjectionPlan({"S001": [Injection("A", ("W",), (ScheduledTrade(1, 120.0, 77),))]})
    res, trades = run(cfg, plan)
    wash = [t for t in trades if t.seller == t.buyer == "W"]
    assert len(wash) >= 1
    assert session_minute(wash[0].timestamp) in (120, 121)
    assert wash[0].size == 77
    (lab,) = res.labels
    assert not lab.voided and lab.seq == wash[0].seq and lab.traders == ("W", "W")


def test_empty_plan_replays():
    res, trades = run(MarketConfig(n_days=4, n_background_traders=300, order_rate=10.0, seed=3))
    assert 8000 <= len(res.events) <= 12000
    assert res.labels == []
    rep = pipeline.motif_report(trades)
    assert set(rep["stocks"]["S001"]["census"]) >= {"N_A", "N_B", "N_C"}


def test_b_pairs_are_found():
    cfg = MarketConfig(**SMALL)
    injs = [
        Injection("B", (f"P{k}", f"Q{k}"), (ScheduledTrade(0, 30.0 + 20 * k, 10), ScheduledTrade(2, 40.0 + 20 * k, 12, reverse=True)))
        for k in range(5)
    ]
    res, trades = run(cfg, InjectionPlan({"S001": injs}))
    assert not any(lab.voided for lab in res.labels)
    inst = motif_index(trades)["S001"]
    pairs = {tuple(sorted(tr)) for kind, tr, _ in inst if kind == "B"}
    assert {(f"P{k}", f"Q{k}") for k in range(5)} <= pairs
    assert label_misses(res.labels, trades, motif_index(trades)) == []


@pytest.mark.parametrize("seed", range(3))
def test_labels_are_sound_and_recovered(seed):
    cfg = MarketConfig(**{**SMALL, "n_stocks": 2, "seed": seed})
    res, trades = run(cfg, random_plan(cfg, 12, seed=seed))
    assert len(res.labels) == sum(len(i.schedule) for injs in random_plan(cfg, 12, seed=seed).stocks.values() for i in injs)
    assert label_misses(res.labels, trades, motif_index(trades)) == []


def test_broken_injection_voids_all_labels():
    # the C pair is down to one realised arc; the B pair is intact
    labs = [
        Label("S001", "2024-01-02", 1, "C", ("X", "Y"), 5, 0, BUYER, 3, False),
        Label("S001", "2024-01-02", 2, "C", ("X", "Y"), 5, 0, BUYER, None, True),
        Label("S001", "2024-01-02", 3, "B", ("U", "V"), 5, 1, BUYER, 4, False),
        Label("S001", "2024-01-02", 4, "B", ("V", "U"), 5, 1, BUYER, 5, False),
    ]
    out = _void_broken(labs)
    assert [lab.voided for lab in out] == [True, True, False, False]
    assert out[0].seq == 3


def test_bump_factor_shape():
    cfg = MarketConfig(n_days=3)
    inj = Injection("A", ("W",), (ScheduledTrade(1, 100.5, 5),), Bump(4.0, 0.5))
    f = _bump_factor(cfg, [inj], 1)
    assert f.shape == (SESSION_MINUTES,)
    assert f[99] == pytest.approx(1 + 4.0)  # the event's own bar: |t| clipped to 1
    assert f[99 + 16] == pytest.approx(1 + 4.0 * 16**-0.5)
    # spill-over into the next day, nothing beyond the horizon
    g = _bump_factor(cfg, [inj], 2)
    assert g[0] > 1 and np.all(_bump_factor(cfg, [inj], 0)[:41] == 1)


def test_bump_raises_local_activity():
    cfg = MarketConfig(**{**SMALL, "n_days": 2, "order_rate": 4.0})
    plan = InjectionPlan({"S001": [Injection("A", ("W",), (ScheduledTrade(1, 120.0, 5),), Bump(30.0, 0.1))]})
    base = [e for e in generate(cfg).events if str(e.day) == cfg.trading_days()[1].isoformat()]
    bumped = [e for e in generate(cfg, plan).events if str(e.day) == cfg.trading_days()[1].isoformat()]
    assert len(bumped) > 5 * len(base)


# ---------------------------------------------------------------- validation


def bad(inj, **cfg):
    with pytest.raises(PlanError):
        generate(MarketConfig(**{**SMALL, **cfg}), InjectionPlan({"S001": inj if isinstance(inj, list) else [inj]}))


def test_plan_validation_errors():
    ok = ScheduledTrade(0, 10.0, 5)
    bad(Injection("D", ("X",), (ok,)))
    bad(Injection("A", ("X", "Y"), (ok,)))
    bad(Injection("B", ("X", "X"), (ok, ok)))
    bad(Injection("B", ("X", "Y"), (ok, ScheduledTrade(0, 11.0, 5))))  # one direction only
    bad(Injection("C", ("X", "Y"), (ok,)))
    bad(Injection("A", ("X",), ()))
    bad(Injection("A", ("X",), (ScheduledTrade(9, 10.0, 5),)))
    bad(Injection("A", ("X",), (ScheduledTrade(0, 241.0, 5),)))
    bad(Injection("A", ("X",), (ScheduledTrade(0, 10.0, 0),)))
    bad(Injection("A", ("X",), (ScheduledTrade(0, 10.0, 5, aggressor="both"),)))
    bad(Injection("A", ("X",), (ok,), Bump(-1.0, 0.1)))
    # the same account twice in one millisecond
    bad([Injection("A", ("X",), (ok,)), Injection("C", ("X", "Y"), (ok, ScheduledTrade(1, 10.0, 5)))])
    with pytest.raises(PlanError):
        InjectionPlan({"S999": [Injection("A", ("X",), (ok,))]}).validate(MarketConfig(**SMALL))


def test_config_validation():
    for field, value in (("n_days", 0), ("order_rate", 0.0), ("cancel_prob", 1.0), ("start_day", "soon"), ("n_stocks", -1)):
        with pytest.raises(PlanError):
            MarketConfig(**{field: value})
    with pytest.raises(PlanError, match="unknown"):
        MarketConfig.from_dict({"n_days": 2, "colour": "red"})
    assert MarketConfig.from_dict({"n_days": 2}).n_days == 2


def test_plan_dict_round_trip():
    cfg = MarketConfig(**SMALL)
    plan = random_plan(cfg, 5, seed=1)
    again = InjectionPlan.from_dict(json.loads(json.dumps(plan.to_dict())))
    assert again.stocks == plan.stocks
    with pytest.raises(PlanError):
        InjectionPlan.from_dict({"stocks": {"S001": [{"kind": "A"}]}})


def test_trading_days_skip_weekends():
    days = MarketConfig(n_days=6, start_day="2024-03-08").trading_days()
    assert [d.weekday() for d in days] == [4, 0, 1, 2, 3, 4]


def test_label_file_round_trip(tmp_path):
    labs = [Label("S001", "2024-01-02", 34_200_000, "B", ("X", "Y"), 5, 0, BUYER, 7, False), Label("S001", "2024-01-02", 34_200_001, "A", ("Z", "Z"), 1, 1, SELLER, None, True)]
    write_labels(labs, tmp_path / "l.jsonl")
    assert read_labels(tmp_path / "l.jsonl") == labs
    first = json.loads((tmp_path / "l.jsonl").read_text().splitlines()[0])
    assert {"stock", "day", "ts_ms", "kind", "traders", "size"} <= set(first)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 8))
def test_random_plans_validate_and_replay(seed, n):
    cfg = MarketConfig(n_days=2, n_background_traders=50, order_rate=2.0, seed=seed % 1000)
    plan = random_plan(cfg, n, seed=seed)
    res, trades = run(cfg, plan)
    assert label_misses(res.labels, trades, motif_index(trades)) == []
