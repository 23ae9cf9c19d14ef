"""Pipeline stages over in-memory records, shared by the CLI and the tests."""

from __future__ import annotations

from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from datetime import date
from typing import Iterable, Mapping, Sequence

from . import events as ev_mod
from . import impact as imp_mod
from .matching import mid_quotes, replay
from .network import KINDS, build_network, cluster_sizes, detect_motifs, edge_count_sample, motif_subnetwork
from .tape import MinuteBar, OrderEvent, ParsedTape, Quote, Trade, bar_series, group_by_stock_day


def _map(fn, items: Sequence, jobs: int) -> list:
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))
    return [fn(x) for x in items]


def _replay_stock(streams: list[list[OrderEvent]]):
    trades, quotes, bars, diags = [], [], [], []
    for evs in streams:
        r = replay(evs)
        trades.extend(r.trades)
        quotes.extend(r.quotes)
        diags.extend((evs[0].stock, evs[0].day, d) for d in r.diagnostics)
        bars.extend(bar_series(r.trades, mid_quotes(r.quotes, r.trades), evs[0].stock, evs[0].day))
    return trades, quotes, bars, diags


def replay_all(events: Iterable[OrderEvent], jobs: int = 1):
    """Replay every ``(stock, day)`` stream; returns ``(trades, quotes, bars, diagnostics)``."""
    by_stock: dict[str, list[list[OrderEvent]]] = defaultdict(list)
    for (stock, _day), evs in ParsedTape(list(events)).streams().items():
        by_stock[stock].append(evs)
    parts = _map(_replay_stock, [by_stock[s] for s in sorted(by_stock)], jobs)
    trades, quotes, bars, diags = [], [], [], []
    for t, q, b, d in parts:
        trades += t
        quotes += q
        bars += b
        diags += d
    return trades, quotes, bars, diags


def trades_by_stock(trades: Iterable[Trade]) -> dict[str, list[Trade]]:
    out: dict[str, list[Trade]] = defaultdict(list)
    for t in trades:
        out[t.stock].append(t)
    return {s: sorted(out[s], key=lambda t: (t.day, t.seq)) for s in sorted(out)}


def _instance_record(inst) -> dict:
    return {
        "kind": inst.kind,
        "traders": list(inst.traders),
        "n_edges": inst.n_edges,
        "trades": [[e.day.isoformat(), e.seq] for e in sorted(inst.edges, key=lambda e: e.key)],
    }


def _stock_motifs(trades: list[Trade]) -> dict:
    net = build_network(trades)
    instances, census = detect_motifs(net)
    return {
        "n_nodes": len(net.nodes),
        "n_edges": net.n_edges,
        "census": census.as_dict(),
        "instances": [_instance_record(i) for i in instances],
        "cluster_sizes": {k: cluster_sizes(motif_subnetwork(net, k, instances)) for k in KINDS},
        "edge_counts": edge_count_sample(instances, "C"),
    }


def motif_report(trades: Iterable[Trade], jobs: int = 1) -> dict:
    by_stock = trades_by_stock(trades)
    names = list(by_stock)
    parts = _map(_stock_motifs, [by_stock[s] for s in names], jobs)
    return {"stocks": dict(zip(names, parts))}


def motif_trade_keys(report: Mapping, stock: str) -> list[tuple[date, int]]:
    """Distinct ``(day, seq)`` of all motif trades of a stock, sorted."""
    keys = set()
    for inst in report["stocks"].get(stock, {}).get("instances", []):
        for day, seq in inst["trades"]:
            keys.add((date.fromisoformat(day), int(seq)))
    return sorted(keys)


def bars_from(trades: Iterable[Trade], quotes: Iterable[Quote]) -> list[MinuteBar]:
    """Rebuild minute bars for every ``(stock, day)`` seen in trades or quotes."""
    t_by = group_by_stock_day(trades)
    q_by = group_by_stock_day(quotes)
    bars = []
    for key in sorted(set(t_by) | set(q_by)):
        ts, qs = t_by.get(key, []), q_by.get(key, [])
        bars.extend(bar_series(ts, mid_quotes(qs, ts), key[0], key[1]))
    return bars


def event_study(
    trades: Sequence[Trade],
    quotes: Sequence[Quote],
    report: Mapping,
    group_size: int = ev_mod.DEFAULT_GROUP_SIZE,
    fit_range: tuple[int, int] = ev_mod.DEFAULT_FIT_RANGE,
    side: str = "both",
) -> dict:
    by_stock = trades_by_stock(trades)
    bars_by: dict[str, list[MinuteBar]] = defaultdict(list)
    for b in bars_from(trades, quotes):
        bars_by[b.stock].append(b)
    inputs = {}
    for stock, ts in by_stock.items():
        index = {t.key: t for t in ts}
        ev_trades = [index[k] for k in motif_trade_keys(report, stock) if k in index]
        mean_size = sum(t.size for t in ts) / len(ts)
        inputs[stock] = ev_mod.StockEvents(bars_by[stock], ev_trades, mean_size)
    return ev_mod.run_event_study(inputs, group_size, fit_range, side)


def impact_study(trades: Sequence[Trade], report: Mapping, side: str = "both") -> dict:
    windows = []
    for stock, ts in trades_by_stock(trades).items():
        windows += imp_mod.event_windows(ts, motif_trade_keys(report, stock))
    out = imp_mod.impact_report(windows)
    if side != "both":
        out = {"scale": out["scale"], side: out[side]}
    return out
