"""Seeded synthetic order flow with labelled manipulation patterns.

Background: zero-intelligence traders arriving as a Poisson stream. Each
arrival either cancels one of the live background orders or submits a limit
order priced uniformly within +-``price_offset`` ticks of the current mid
with a log-normal size.

Injections: for each scheduled trade the generator posts a resting order for
one account strictly inside the spread and, in the same millisecond, a
counter-order one tick through it from the other account (the same account
for kind A). If the counter-order does not fill exactly against the resting
order the label is voided and both leftovers are canceled. Scheduled trades
that never find room in the spread before the close are voided too. If the
surviving trades of an injection no longer form its motif (a B pair missing
a direction, a C pair down to one arc), all of its labels are voided.

An injection may carry an activity bump: around each of its trades the
background arrival rate is multiplied by ``1 + a * max(|t|, 1)^-b`` with
``t`` in trading minutes (continuing across day boundaries), up to
``bump_horizon`` minutes away.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import date, timedelta
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .matching import MatchingEngine
from .tape import (
    BUY,
    BUYER,
    CANCEL,
    MINUTE_MS,
    SELL,
    SELLER,
    SESSION_MINUTES,
    SESSION_OPEN_MS,
    SUBMIT,
    OrderEvent,
)

log = logging.getLogger(__name__)


class PlanError(ValueError):
    """Invalid market configuration or injection plan."""


@dataclass(frozen=True)
class MarketConfig:
    n_stocks: int = 1
    n_days: int = 20
    n_background_traders: int = 1000
    order_rate: float = 10.0  # background arrivals per minute
    cancel_prob: float = 0.2
    tick_size: float = 0.01  # currency per tick, informational
    initial_price: int = 1000
    price_offset: int = 5
    size_log_mean: float = 5.0
    size_log_sigma: float = 1.0
    bump_horizon: int = 200
    start_day: str = "2003-01-02"
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("n_stocks", "n_days", "n_background_traders", "initial_price"):
            if getattr(self, name) <= 0:
                raise PlanError(f"{name} must be positive")
        if self.order_rate <= 0:
            raise PlanError("order_rate must be positive")
        if not 0 <= self.cancel_prob < 1:
            raise PlanError("cancel_prob must be in [0, 1)")
        if self.price_offset < 0:
            raise PlanError("price_offset must be >= 0")
        try:
            date.fromisoformat(self.start_day)
        except ValueError:
            raise PlanError(f"bad start_day {self.start_day!r}") from None

    @classmethod
    def from_dict(cls, d: Mapping) -> "MarketConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise PlanError(f"unknown config fields {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise PlanError(str(exc)) from None

    def stock_names(self) -> list[str]:
        return [f"S{i + 1:03d}" for i in range(self.n_stocks)]

    def trading_days(self) -> list[date]:
        """Weekdays from ``start_day``; weekends are skipped."""
        d = date.fromisoformat(self.start_day)
        out = []
        while len(out) < self.n_days:
            if d.weekday() < 5:
                out.append(d)
            d += timedelta(days=1)
        return out


@dataclass(frozen=True)
class ScheduledTrade:
    day: int  # trading-day index, 0-based
    minute: float  # session minute in [1, 241)
    size: int
    reverse: bool = False  # False: traders[0] sells to traders[-1]
    aggressor: str = BUYER

    @property
    def timestamp(self) -> int:
        return SESSION_OPEN_MS + int(round((self.minute - 1) * MINUTE_MS))


@dataclass(frozen=True)
class Bump:
    amplitude: float
    exponent: float


@dataclass(frozen=True)
class Injection:
    kind: str
    traders: tuple[str, ...]
    schedule: tuple[ScheduledTrade, ...]
    bump: Bump | None = None

    def parties(self, st: ScheduledTrade) -> tuple[str, str]:
        """``(seller, buyer)`` of one scheduled trade."""
        a, b = self.traders[0], self.traders[-1]
        return (b, a) if st.reverse else (a, b)


@dataclass
class InjectionPlan:
    stocks: dict[str, list[Injection]] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: Mapping) -> "InjectionPlan":
        try:
            stocks = {}
            for stock, injections in d.get("stocks", {}).items():
                out = []
                for inj in injections:
                    bump = inj.get("bump")
                    out.append(
                        Injection(
                            kind=inj["kind"],
                            traders=tuple(inj["traders"]),
                            schedule=tuple(ScheduledTrade(**s) for s in inj["schedule"]),
                            bump=Bump(**bump) if bump else None,
                        )
                    )
                stocks[stock] = out
        except (KeyError, TypeError, AttributeError) as exc:
            raise PlanError(f"malformed plan: {exc}") from None
        return cls(stocks)

    def to_dict(self) -> dict:
        return {
            "stocks": {
                s: [
                    {
                        "kind": inj.kind,
                        "traders": list(inj.traders),
                        "schedule": [asdict(st) for st in inj.schedule],
                        "bump": asdict(inj.bump) if inj.bump else None,
                    }
                    for inj in injs
                ]
                for s, injs in self.stocks.items()
            }
        }

    def validate(self, config: MarketConfig) -> None:
        names = set(config.stock_names())
        for stock, injections in self.stocks.items():
            if stock not in names:
                raise PlanError(f"plan names unknown stock {stock!r}")
            busy: set[tuple[str, int, int]] = set()
            for n, inj in enumerate(injections):
                where = f"{stock} injection {n}"
                if inj.kind not in ("A", "B", "C"):
                    raise PlanError(f"{where}: unknown kind {inj.kind!r}")
                want = 1 if inj.kind == "A" else 2
                if len(inj.traders) != want or len(set(inj.traders)) != want or not all(inj.traders):
                    raise PlanError(f"{where}: kind {inj.kind} needs {want} distinct non-empty traders")
                if not inj.schedule:
                    raise PlanError(f"{where}: empty schedule")
                if inj.kind == "B" and len({st.reverse for st in inj.schedule}) != 2:
                    raise PlanError(f"{where}: kind B needs trades in both directions")
                if inj.kind == "C":
                    if max(sum(st.reverse for st in inj.schedule), sum(not st.reverse for st in inj.schedule)) < 2:
                        raise PlanError(f"{where}: kind C needs at least two trades in one direction")
                if inj.bump is not None and (inj.bump.amplitude < 0 or inj.bump.exponent < 0):
                    raise PlanError(f"{where}: bump parameters must be non-negative")
                for st in inj.schedule:
                    if not 0 <= st.day < config.n_days:
                        raise PlanError(f"{where}: day {st.day} outside 0..{config.n_days - 1}")
                    if not 1 <= st.minute < SESSION_MINUTES + 1:
                        raise PlanError(f"{where}: minute {st.minute} outside [1, 241)")
                    if st.size <= 0:
                        raise PlanError(f"{where}: size must be positive")
                    if st.aggressor not in (BUYER, SELLER):
                        raise PlanError(f"{where}: bad aggressor {st.aggressor!r}")
                    for trader in set(inj.traders):
                        slot = (trader, st.day, st.timestamp)
                        if slot in busy:
                            raise PlanError(f"{where}: {trader} has two injections at day {st.day} ts {st.timestamp}")
                        busy.add(slot)


@dataclass(frozen=True)
class Label:
    stock: str
    day: str
    ts_ms: int
    kind: str
    traders: tuple[str, str]  # (seller, buyer)
    size: int
    injection: int
    aggressor: str
    seq: int | None
    voided: bool

    def to_json(self) -> str:
        d = asdict(self)
        d["traders"] = list(self.traders)
        return json.dumps(d, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "Label":
        d = json.loads(line)
        d["traders"] = tuple(d["traders"])
        return cls(**d)


@dataclass
class SynthResult:
    events: list[OrderEvent]
    labels: list[Label]


def _bump_factor(config: MarketConfig, injections: Sequence[Injection], day_index: int) -> np.ndarray:
    """Rate multiplier for the 240 minutes of one day.

    ``t`` is the offset in whole bars from the bar holding the scheduled trade.
    """
    factor = np.ones(SESSION_MINUTES)
    bars = day_index * SESSION_MINUTES + np.arange(SESSION_MINUTES)
    for inj in injections:
        if inj.bump is None or inj.bump.amplitude == 0:
            continue
        for st in inj.schedule:
            pos = st.day * SESSION_MINUTES + int(st.minute) - 1
            dt = np.abs(bars - pos)
            near = dt <= config.bump_horizon
            if near.any():
                factor[near] += inj.bump.amplitude * np.maximum(dt[near], 1.0) ** -inj.bump.exponent
    return factor


def _entry_price(bid: int | None, ask: int | None, ref: float) -> int | None:
    """A price strictly inside the spread, or None when the spread is one tick."""
    if bid is not None and ask is not None:
        if ask - bid < 2:
            return None
        return (bid + ask) // 2
    if bid is not None:
        return bid + 1
    if ask is not None:
        return ask - 1 if ask > 1 else None
    return max(1, int(round(ref)))


def generate_stock(config: MarketConfig, stock_index: int, injections: Sequence[Injection]) -> SynthResult:
    """Generate the tape of one stock; the random stream depends only on (seed, stock_index)."""
    stock = config.stock_names()[stock_index]
    rng = np.random.default_rng([config.seed, stock_index])
    days = config.trading_days()
    events: list[OrderEvent] = []
    labels: list[Label] = []
    ref_price = float(config.initial_price)

    scheduled: dict[int, list[tuple[int, int, Injection, ScheduledTrade]]] = {}
    for n, inj in enumerate(injections):
        for st in inj.schedule:
            scheduled.setdefault(st.day, []).append((st.timestamp, n, inj, st))

    for di, day in enumerate(days):
        engine = MatchingEngine(stock, day)
        book = engine.book
        next_ref = 0
        live: list[str] = []
        last_ts = 0

        def submit(ts: int, trader: str, side: str, price: int, size: int) -> tuple[str, list]:
            nonlocal next_ref
            next_ref += 1
            ref = f"o{next_ref}"
            ev = OrderEvent(stock, day, ts, trader, SUBMIT, side, price, size, ref)
            events.append(ev)
            return ref, engine.process(ev)

        def cancel(ts: int, trader: str, ref: str) -> None:
            ev = OrderEvent(stock, day, ts, trader, CANCEL, None, None, None, ref)
            events.append(ev)
            engine.process(ev)

        # background arrivals: Poisson counts per minute, uniform times inside the minute
        rates = config.order_rate * _bump_factor(config, injections, di)
        counts = rng.poisson(rates)
        total = int(counts.sum())
        minute_of = np.repeat(np.arange(SESSION_MINUTES), counts)
        times = SESSION_OPEN_MS + minute_of * MINUTE_MS + rng.integers(0, MINUTE_MS, size=total)
        times.sort()
        u_cancel = rng.random(total)
        u_pick = rng.random(total)
        who = rng.integers(0, config.n_background_traders, size=total)
        is_buy = rng.random(total) < 0.5
        offsets = rng.integers(-config.price_offset, config.price_offset + 1, size=total)
        sizes = np.maximum(1, np.rint(rng.lognormal(config.size_log_mean, config.size_log_sigma, size=total))).astype(np.int64)

        todo = sorted(scheduled.get(di, []), key=lambda x: (x[0], x[1]))
        pending: list[tuple[int, int, Injection, ScheduledTrade]] = []
        j = 0
        for k in range(total + 1):
            ts = int(times[k]) if k < total else None
            while j < len(todo) and (ts is None or todo[j][0] <= ts):
                pending.append(todo[j])
                j += 1
            # inject at the scheduled time, or at the first arrival after it that leaves room in the spread
            still = []
            for item in pending:
                at = max(item[0], last_ts)
                lab = _inject(engine, submit, cancel, stock, day, at, item[1], item[2], item[3], ref_price)
                if lab is None:
                    still.append(item)
                else:
                    labels.append(lab)
                    last_ts = at
            pending = still
            if ts is None:
                break
            last_ts = ts
            if u_cancel[k] < config.cancel_prob:
                while live:
                    i = int(u_pick[k] * len(live))
                    ref = live[i]
                    live[i] = live[-1]
                    live.pop()
                    if ref in book:
                        cancel(ts, book.owner(ref), ref)
                        break
                continue
            mid = engine.mid()
            base = ref_price if mid is None else mid
            price = max(1, int(math.floor(base + 0.5)) + int(offsets[k]))
            ref, _ = submit(ts, f"T{who[k] + 1:05d}", BUY if is_buy[k] else SELL, price, int(sizes[k]))
            if ref in book:
                live.append(ref)
        for _, n, inj, st in pending:
            seller, buyer = inj.parties(st)
            log.info("injection %d of %s on %s found no room in the spread; label voided", n, stock, day)
            labels.append(Label(stock, day.isoformat(), st.timestamp, inj.kind, (seller, buyer), st.size, n, st.aggressor, None, True))
        mid = engine.mid()
        if mid is not None:
            ref_price = mid
    return SynthResult(events, _void_broken(labels))


def _complete(kind: str, labels: Sequence[Label]) -> bool:
    dirs = [lab.traders for lab in labels if not lab.voided]
    if kind == "A":
        return bool(dirs)
    if kind == "B":
        return len(set(dirs)) == 2
    return any(dirs.count(d) >= 2 for d in set(dirs))


def _void_broken(labels: list[Label]) -> list[Label]:
    """Void every label of an injection whose realised trades no longer form its motif."""
    by_inj: dict[int, list[Label]] = {}
    for lab in labels:
        by_inj.setdefault(lab.injection, []).append(lab)
    broken = set()
    for n, labs in by_inj.items():
        if not all(lab.voided for lab in labs) and not _complete(labs[0].kind, labs):
            broken.add(n)
            log.info("injection %d of %s lost trades and no longer forms motif %s; labels voided", n, labs[0].stock, labs[0].kind)
    return [replace(lab, voided=True) if lab.injection in broken else lab for lab in labels]


def _inject(engine, submit, cancel, stock, day, ts, n, inj: Injection, st: ScheduledTrade, ref_price) -> Label | None:
    seller, buyer = inj.parties(st)
    book = engine.book
    mid = engine.mid()
    price = _entry_price(book.best_bid, book.best_ask, ref_price if mid is None else mid)
    if price is None:
        return None
    if st.aggressor == BUYER:
        rest_ref, _ = submit(ts, seller, SELL, price, st.size)
        hit_ref, fills = submit(ts, buyer, BUY, price + 1, st.size)
        owners = ((rest_ref, seller), (hit_ref, buyer))
    else:
        rest_ref, _ = submit(ts, buyer, BUY, price, st.size)
        hit_ref, fills = submit(ts, seller, SELL, max(1, price - 1), st.size)
        owners = ((rest_ref, buyer), (hit_ref, seller))
    seq = None
    if len(fills) == 1 and fills[0].size == st.size and (fills[0].seller, fills[0].buyer) == (seller, buyer):
        seq = fills[0].seq
    for ref, who in owners:
        if ref in book:
            cancel(ts, who, ref)
    voided = seq is None
    if voided:
        log.info("injection %d of %s on %s at %d intercepted; label voided", n, stock, day, ts)
    return Label(stock, day.isoformat(), ts, inj.kind, (seller, buyer), st.size, n, st.aggressor, seq, voided)


def generate(config: MarketConfig, plan: InjectionPlan | None = None, jobs: int = 1) -> SynthResult:
    """Generate every stock; output is independent of ``jobs``."""
    plan = plan or InjectionPlan()
    plan.validate(config)
    names = config.stock_names()
    args = [(config, i, plan.stocks.get(name, [])) for i, name in enumerate(names)]
    if jobs > 1 and len(names) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(generate_stock, *zip(*args)))
    else:
        parts = [generate_stock(*a) for a in args]
    return SynthResult(
        [e for p in parts for e in p.events],
        [lab for p in parts for lab in p.labels],
    )


def write_labels(labels: Sequence[Label], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for lab in labels:
            fh.write(lab.to_json() + "\n")


def read_labels(path: str | Path) -> list[Label]:
    with open(path, encoding="utf-8") as fh:
        return [Label.from_json(line) for line in fh if line.strip()]


def random_plan(
    config: MarketConfig,
    n_per_stock: int,
    seed: int,
    kinds: Sequence[str] = ("A", "B", "C"),
    max_trades: int = 4,
) -> InjectionPlan:
    """A plan of ``n_per_stock`` injections per stock on fresh, disjoint accounts."""
    rng = np.random.default_rng(seed)
    stocks = {}
    for s, stock in enumerate(config.stock_names()):
        injs = []
        for n in range(n_per_stock):
            kind = kinds[n % len(kinds)]
            accounts = (f"M{s + 1:03d}{n:04d}a",) if kind == "A" else (f"M{s + 1:03d}{n:04d}a", f"M{s + 1:03d}{n:04d}b")
            n_trades = int(rng.integers(2, max_trades + 1))
            reverse = [False] * n_trades
            if kind == "B":
                reverse[-1] = True
            elif kind == "C" and rng.random() < 0.5:
                reverse = [True] * n_trades
            schedule = tuple(
                ScheduledTrade(
                    day=int(rng.integers(0, config.n_days)),
                    minute=float(rng.integers(1, SESSION_MINUTES + 1)),
                    size=int(rng.integers(1, 2000)),
                    reverse=r,
                    aggressor=BUYER if rng.random() < 0.5 else SELLER,
                )
                for r in reverse
            )
            # distinct timestamps per account inside one injection
            seen, fixed = set(), []
            for st in schedule:
                while (st.day, st.timestamp) in seen:
                    st = ScheduledTrade(st.day, st.minute + 1 / 60 if st.minute + 1 / 60 < 241 else 1.0, st.size, st.reverse, st.aggressor)
                seen.add((st.day, st.timestamp))
                fixed.append(st)
            injs.append(Injection(kind, accounts, tuple(fixed)))
        stocks[stock] = injs
    return InjectionPlan(stocks)
