"""Minute-level event study around motif trades.

Per stock: estimate the intraday pattern of each bar variable, divide it
out, pick up to 20 events per size group on distinct days, cut a
+-200-minute window around each (borrowing from neighbouring trading days at
the session edges), then pool the windows of all stocks per group, average
them and fit power laws to the pre- and post-event branches.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import date
from typing import Iterable, Mapping, Sequence

import numpy as np

from .powerlaw import SlopeFit, loglog_slope
from .tape import BUYER, SELLER, SESSION_MINUTES, MinuteBar, Trade, session_minute

log = logging.getLogger(__name__)

HALF_WINDOW = 200
WINDOW_LEN = 2 * HALF_WINDOW + 1
DEFAULT_FIT_RANGE = (3, 200)
DEFAULT_GROUP_SIZE = 20
GROUPS = ("L", "M", "S")

# variable code -> MinuteBar attribute
VARIABLES = {"v": "volatility", "w_cum": "volume", "w_ave": "avg_size", "f": "turnover"}


@dataclass(frozen=True)
class DaySeries:
    """One variable of one stock as a ``(n_days, 240)`` matrix over sorted trading days."""

    stock: str
    variable: str
    days: tuple[date, ...]
    values: np.ndarray

    def day_index(self, day: date) -> int | None:
        try:
            return self.days.index(day)
        except ValueError:
            return None


@dataclass(frozen=True)
class IntradayPattern:
    stock: str
    variable: str
    values: np.ndarray
    n_days: int


@dataclass(frozen=True)
class EventRef:
    stock: str
    day: date
    minute: int
    trade_seq: int
    trade_size: int
    normalized_size: float
    aggressor: str


@dataclass(frozen=True)
class EventWindow:
    event: EventRef
    variable: str
    trajectory: np.ndarray  # t = -200..200


def day_series(bars: Iterable[MinuteBar], variable: str) -> DaySeries:
    """Arrange the bars of one stock into a day-by-minute matrix."""
    attr = VARIABLES[variable]
    by_day: dict[date, np.ndarray] = {}
    stock = None
    for b in bars:
        if stock is None:
            stock = b.stock
        elif b.stock != stock:
            raise ValueError(f"bars of several stocks: {stock}, {b.stock}")
        row = by_day.get(b.day)
        if row is None:
            row = by_day[b.day] = np.zeros(SESSION_MINUTES)
        row[b.minute - 1] = getattr(b, attr)
    if not by_day:
        raise ValueError("no bars")
    days = tuple(sorted(by_day))
    return DaySeries(stock, variable, days, np.vstack([by_day[d] for d in days]))


def intraday_pattern(series: DaySeries) -> IntradayPattern:
    """Mean over days of each minute."""
    return IntradayPattern(series.stock, series.variable, series.values.mean(axis=0), len(series.days))


def deseasonalize(series: DaySeries, pattern: IntradayPattern) -> DaySeries:
    """Divide every day by the pattern; minutes whose pattern is 0 become 1."""
    if pattern.variable != series.variable:
        raise ValueError("pattern and series are for different variables")
    p = pattern.values
    zero = p == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = series.values / np.where(zero, 1.0, p)
    out[:, zero] = 1.0
    return DaySeries(series.stock, series.variable, series.days, out)


def make_events(trades: Iterable[Trade], mean_trade_size: float) -> list[EventRef]:
    return [
        EventRef(
            t.stock,
            t.day,
            session_minute(t.timestamp),
            t.seq,
            t.size,
            t.size / mean_trade_size,
            t.aggressor,
        )
        for t in trades
    ]


def _size_order(events: Sequence[EventRef]) -> list[EventRef]:
    # decreasing size; equal sizes by (day, seq)
    return sorted(events, key=lambda e: (-e.trade_size, e.day, e.trade_seq))


def _greedy(ordered: Iterable[EventRef], n: int) -> list[EventRef]:
    chosen, days = [], set()
    for e in ordered:
        if e.day in days:
            continue
        chosen.append(e)
        days.add(e.day)
        if len(chosen) == n:
            break
    return chosen


def _outward(n_items: int, start: int) -> Iterable[int]:
    yield start
    for k in range(1, n_items):
        for i in (start - k, start + k):
            if 0 <= i < n_items:
                yield i


def select_events(events: Sequence[EventRef], group: str, n: int = DEFAULT_GROUP_SIZE) -> list[EventRef]:
    """Pick up to ``n`` events on distinct days for group L, M or S.

    L scans from the largest trade, S from the smallest and M outward from
    the median position (larger neighbour first).
    """
    if group not in GROUPS:
        raise ValueError(f"unknown group {group!r}")
    ordered = _size_order(events)
    if not ordered:
        log.warning("no events to select for group %s", group)
        return []
    if group == "L":
        scan = ordered
    elif group == "S":
        scan = ordered[::-1]
    else:
        scan = (ordered[i] for i in _outward(len(ordered), (len(ordered) - 1) // 2))
    return _greedy(scan, n)


def extract_window(series: DaySeries, event: EventRef) -> EventWindow | None:
    """Trajectory ``x(t0 + t)`` for ``t = -200..200``; None if a neighbouring day is missing."""
    d = series.day_index(event.day)
    if d is None:
        log.debug("event on %s has no bars", event.day)
        return None
    # absolute minute offsets relative to day d's first minute (0-based)
    pos = (event.minute - 1) + np.arange(-HALF_WINDOW, HALF_WINDOW + 1)
    day_off = pos // SESSION_MINUTES
    lo, hi = int(day_off.min()), int(day_off.max())
    if d + lo < 0 or d + hi >= len(series.days):
        log.debug("window of event %s/%s minute %d lacks a neighbouring day", event.day, event.trade_seq, event.minute)
        return None
    traj = series.values[d + day_off, pos % SESSION_MINUTES]
    return EventWindow(event, series.variable, traj)


def group_average(windows: Sequence[EventWindow]) -> np.ndarray:
    if not windows:
        raise ValueError("cannot average an empty group")
    variables = {w.variable for w in windows}
    if len(variables) > 1:
        raise ValueError(f"windows mix variables {sorted(variables)}")
    return np.mean([w.trajectory for w in windows], axis=0)


@dataclass(frozen=True)
class DynamicsFit:
    pre: SlopeFit
    post: SlopeFit


def event_dynamics_exponents(mean: np.ndarray, fit_range: tuple[int, int] = DEFAULT_FIT_RANGE) -> DynamicsFit:
    """Power-law exponents of the post branch and of the reflected pre branch."""
    mean = np.asarray(mean, dtype=np.float64)
    if mean.shape != (WINDOW_LEN,):
        raise ValueError(f"expected a {WINDOW_LEN}-point trajectory")
    pre = {t: mean[HALF_WINDOW - t] for t in range(1, HALF_WINDOW + 1)}
    post = {t: mean[HALF_WINDOW + t] for t in range(1, HALF_WINDOW + 1)}
    return DynamicsFit(loglog_slope(pre, fit_range), loglog_slope(post, fit_range))


@dataclass
class StockEvents:
    """Inputs of one stock for the event study."""

    bars: Sequence[MinuteBar]
    event_trades: Sequence[Trade]
    mean_trade_size: float


def _side_ok(e: EventRef, side: str) -> bool:
    return side == "both" or (side == "buyer" and e.aggressor == BUYER) or (side == "seller" and e.aggressor == SELLER)


def run_event_study(
    stocks: Mapping[str, StockEvents],
    group_size: int = DEFAULT_GROUP_SIZE,
    fit_range: tuple[int, int] = DEFAULT_FIT_RANGE,
    side: str = "both",
    variables: Sequence[str] = tuple(VARIABLES),
) -> dict:
    """Full event study; returns the report as a JSON-ready dict."""
    if side not in ("both", "buyer", "seller"):
        raise ValueError(f"bad side {side!r}")
    pooled: dict[tuple[str, str], list[EventWindow]] = {(g, v): [] for g in GROUPS for v in variables}
    for stock in sorted(stocks):
        inp = stocks[stock]
        if not inp.bars:
            continue
        events = [e for e in make_events(inp.event_trades, inp.mean_trade_size) if _side_ok(e, side)]
        selected = {g: select_events(events, g, group_size) for g in GROUPS}
        dropped = 0
        for v in variables:
            raw = day_series(inp.bars, v)
            des = deseasonalize(raw, intraday_pattern(raw))
            for g in GROUPS:
                for e in selected[g]:
                    w = extract_window(des, e)
                    if w is None:
                        dropped += 1
                    else:
                        pooled[(g, v)].append(w)
        if dropped:
            log.warning("%s: %d selected events lack a neighbouring day and were left out", stock, dropped // len(variables))

    groups = {}
    for g in GROUPS:
        per_var = {}
        for v in variables:
            ws = pooled[(g, v)]
            entry = {
                "n_events": len(ws),
                "mean_normalized_size": float(np.mean([w.event.normalized_size for w in ws])) if ws else None,
                "trajectory": None,
                "beta_pre": None,
                "beta_post": None,
                "stderr_pre": None,
                "stderr_post": None,
                "error": None,
            }
            if ws:
                mean = group_average(ws)
                entry["trajectory"] = [float(x) for x in mean]
                try:
                    fit = event_dynamics_exponents(mean, fit_range)
                except ValueError as exc:
                    entry["error"] = str(exc)
                else:
                    entry.update(
                        beta_pre=fit.pre.beta,
                        beta_post=fit.post.beta,
                        stderr_pre=fit.pre.stderr,
                        stderr_post=fit.post.stderr,
                    )
            else:
                entry["error"] = "no events"
            per_var[v] = entry
        groups[g] = per_var
    return {
        "fit_range": list(fit_range),
        "group_size": group_size,
        "side": side,
        "groups": groups,
    }
