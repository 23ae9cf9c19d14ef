"""Continuous double auction with price-time priority.

One ``MatchingEngine`` replays one ``(stock, day)`` stream. An incoming
submit sweeps the opposite side from the best price outward, FIFO within a
level, and produces one trade per resting order it touches, priced at the
resting order's limit. Whatever is left rests at the incoming limit price.
Self-crossing is executed like any other cross.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from datetime import date
from typing import Iterable, Sequence

from .tape import BUY, BUYER, CANCEL, SELLER, Diagnostic, OrderEvent, Quote, Trade


class _Resting:
    __slots__ = ("ref", "trader", "remaining", "timestamp", "side", "price")

    def __init__(self, ref: str, trader: str, remaining: int, timestamp: int, side: str, price: int):
        self.ref = ref
        self.trader = trader
        self.remaining = remaining
        self.timestamp = timestamp
        self.side = side
        self.price = price


@dataclass(frozen=True)
class BookLevel:
    price: int
    queue: tuple[tuple[str, str, int, int], ...]  # (order_ref, trader, remaining, arrival ts)


class OrderBook:
    """Limit order book: price levels per side, each a FIFO queue."""

    def __init__(self) -> None:
        self._levels: dict[str, dict[int, deque[_Resting]]] = {BUY: {}, "sell": {}}
        # bids are stored negated so both heaps pop the best price first
        self._heaps: dict[str, list[int]] = {BUY: [], "sell": []}
        self._orders: dict[str, _Resting] = {}

    def _best(self, side: str) -> int | None:
        heap, levels = self._heaps[side], self._levels[side]
        while heap:
            p = -heap[0] if side == BUY else heap[0]
            if p in levels:
                return p
            heapq.heappop(heap)
        return None

    @property
    def best_bid(self) -> int | None:
        return self._best(BUY)

    @property
    def best_ask(self) -> int | None:
        return self._best("sell")

    def __contains__(self, ref: str) -> bool:
        return ref in self._orders

    def __len__(self) -> int:
        return len(self._orders)

    def owner(self, ref: str) -> str:
        return self._orders[ref].trader

    def remaining(self, ref: str) -> int:
        """Remaining resting size of a live order, 0 if filled, canceled or unknown."""
        o = self._orders.get(ref)
        return o.remaining if o is not None else 0

    def add(self, order: _Resting) -> None:
        levels = self._levels[order.side]
        q = levels.get(order.price)
        if q is None:
            q = levels[order.price] = deque()
            heapq.heappush(self._heaps[order.side], -order.price if order.side == BUY else order.price)
        q.append(order)
        self._orders[order.ref] = order

    def cancel(self, ref: str) -> _Resting | None:
        o = self._orders.pop(ref, None)
        if o is None:
            return None
        levels = self._levels[o.side]
        q = levels[o.price]
        q.remove(o)
        if not q:
            del levels[o.price]
        return o

    def levels(self, side: str) -> list[BookLevel]:
        """Snapshot of one side, best price first."""
        prices = sorted(self._levels[side], reverse=(side == BUY))
        return [
            BookLevel(p, tuple((o.ref, o.trader, o.remaining, o.timestamp) for o in self._levels[side][p]))
            for p in prices
        ]

    def match(self, side: str, price: int, size: int) -> list[tuple[_Resting, int]]:
        """Sweep the side opposite ``side`` up to limit ``price``; return ``(resting, fill)`` pairs."""
        opp = "sell" if side == BUY else BUY
        levels = self._levels[opp]
        fills = []
        while size > 0:
            best = self._best(opp)
            if best is None or (best > price if side == BUY else best < price):
                break
            q = levels[best]
            while size > 0 and q:
                o = q[0]
                qty = o.remaining if o.remaining < size else size
                o.remaining -= qty
                size -= qty
                fills.append((o, qty))
                if o.remaining == 0:
                    q.popleft()
                    del self._orders[o.ref]
            if not q:
                del levels[best]
        return fills


def mid_price(book: OrderBook | None, last_trade: int | None = None) -> float | None:
    """Mid of the best quotes; the last trade price when a side is empty; else None."""
    if book is not None:
        bid, ask = book.best_bid, book.best_ask
        if bid is not None and ask is not None:
            return (bid + ask) / 2
    return None if last_trade is None else float(last_trade)


class MatchingEngine:
    """Stateful replay of a single ``(stock, day)`` stream."""

    def __init__(self, stock: str, day: date) -> None:
        self.stock = stock
        self.day = day
        self.book = OrderBook()
        self.trades: list[Trade] = []
        self.quotes: list[Quote] = []
        self.diagnostics: list[Diagnostic] = []
        self.last_price: int | None = None
        self._seen: set[str] = set()
        self._top: tuple[int | None, int | None] = (None, None)
        self._n = 0

    def process(self, ev: OrderEvent) -> list[Trade]:
        """Apply one event; return the trades it generated."""
        self._n += 1
        out: list[Trade] = []
        if ev.action == CANCEL:
            if self.book.cancel(ev.order_ref) is None:
                self.diagnostics.append(
                    Diagnostic(self._n, f"cancel of inactive order_ref {ev.order_ref!r} ignored")
                )
        else:
            if ev.order_ref in self._seen:
                self.diagnostics.append(Diagnostic(self._n, f"duplicate order_ref {ev.order_ref!r} ignored"))
                return out
            self._seen.add(ev.order_ref)
            fills = self.book.match(ev.side, ev.price, ev.size)
            buy = ev.side == BUY
            aggressor = BUYER if buy else SELLER
            filled = 0
            for resting, qty in fills:
                filled += qty
                seller, buyer = (resting.trader, ev.trader) if buy else (ev.trader, resting.trader)
                t = Trade(
                    self.stock,
                    self.day,
                    ev.timestamp,
                    seller,
                    buyer,
                    resting.price,
                    qty,
                    aggressor,
                    len(self.trades) + 1,
                )
                self.trades.append(t)
                out.append(t)
            if out:
                self.last_price = out[-1].price
            if filled < ev.size:
                self.book.add(_Resting(ev.order_ref, ev.trader, ev.size - filled, ev.timestamp, ev.side, ev.price))
        top = (self.book.best_bid, self.book.best_ask)
        if top != self._top:
            self._top = top
            self.quotes.append(Quote(self.stock, self.day, ev.timestamp, top[0], top[1]))
        return out

    def mid(self) -> float | None:
        return mid_price(self.book, self.last_price)


@dataclass
class ReplayResult:
    trades: list[Trade] = field(default_factory=list)
    quotes: list[Quote] = field(default_factory=list)
    diagnostics: list[Diagnostic] = field(default_factory=list)

    def __iter__(self):
        # allows ``trades, quotes = replay(...)``
        return iter((self.trades, self.quotes))


def replay(events: Iterable[OrderEvent]) -> ReplayResult:
    """Replay one validated ``(stock, day)`` stream through a fresh book."""
    engine: MatchingEngine | None = None
    for ev in events:
        if engine is None:
            engine = MatchingEngine(ev.stock, ev.day)
        elif (ev.stock, ev.day) != (engine.stock, engine.day):
            raise ValueError(f"replay expects one (stock, day) stream, got {ev.stock} {ev.day}")
        engine.process(ev)
    if engine is None:
        return ReplayResult()
    return ReplayResult(engine.trades, engine.quotes, engine.diagnostics)


def mid_quotes(quotes: Sequence[Quote], trades: Sequence[Trade]) -> list[tuple[int, float | None]]:
    """Mid series of one stream: one entry per quote and per trade, timestamp ordered.

    A one-sided or empty book falls back to the last trade price seen so far.
    """
    events = sorted(
        [(q.timestamp, 0, i) for i, q in enumerate(quotes)] + [(t.timestamp, 1, i) for i, t in enumerate(trades)]
    )
    out: list[tuple[int, float | None]] = []
    bid = ask = None
    last = None
    for ts, kind, i in events:
        if kind == 0:
            bid, ask = quotes[i].bid, quotes[i].ask
        else:
            last = trades[i].price
        if bid is not None and ask is not None:
            out.append((ts, (bid + ask) / 2))
        else:
            out.append((ts, None if last is None else float(last)))
    return out
