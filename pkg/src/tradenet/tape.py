"""Order-flow and trade record formats, file I/O and minute bars.

Times are integer milliseconds since midnight. The continuous session is
modelled as 240 contiguous one-minute bins starting at ``SESSION_OPEN_MS``.
Prices are integer ticks; sizes are integer shares.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from datetime import date
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

SESSION_OPEN_MS = 9 * 3_600_000 + 30 * 60_000
SESSION_MINUTES = 240
MINUTE_MS = 60_000
SESSION_CLOSE_MS = SESSION_OPEN_MS + SESSION_MINUTES * MINUTE_MS

BUY, SELL = "buy", "sell"
SUBMIT, CANCEL = "submit", "cancel"
BUYER, SELLER = "buyer", "seller"  # aggressor labels

ORDER_FIELDS = ("stock", "day", "timestamp_ms", "trader", "action", "side", "price_ticks", "size", "order_ref")
TRADE_FIELDS = ("stock", "day", "timestamp_ms", "seller", "buyer", "price_ticks", "size", "aggressor", "seq")
QUOTE_FIELDS = ("stock", "day", "timestamp_ms", "bid_ticks", "ask_ticks")
BAR_FIELDS = ("stock", "day", "minute", "volatility", "volume", "avg_size", "turnover", "n_trades", "mid_close")

FORMATS = ("csv", "jsonl")


class TapeError(ValueError):
    """Raised for unreadable files or unsupported formats."""


class OrderEvent(NamedTuple):
    stock: str
    day: date
    timestamp: int
    trader: str
    action: str
    side: str | None
    price: int | None
    size: int | None
    order_ref: str


class Trade(NamedTuple):
    stock: str
    day: date
    timestamp: int
    seller: str
    buyer: str
    price: int
    size: int
    aggressor: str
    seq: int

    @property
    def key(self) -> tuple[date, int]:
        """Identity of the trade within its stock: ``(day, seq)``."""
        return (self.day, self.seq)


class Quote(NamedTuple):
    stock: str
    day: date
    timestamp: int
    bid: int | None
    ask: int | None


class MinuteBar(NamedTuple):
    stock: str
    day: date
    minute: int
    volatility: float
    volume: int
    avg_size: float
    turnover: int
    n_trades: int
    mid_close: float


@dataclass(frozen=True, slots=True)
class Diagnostic:
    line: int
    message: str
    level: str = "row"  # "row" or "stream"

    def __str__(self) -> str:
        return f"line {self.line}: [{self.level}] {self.message}"


@dataclass
class ParsedTape:
    events: list[OrderEvent] = field(default_factory=list)
    diagnostics: list[Diagnostic] = field(default_factory=list)

    def streams(self) -> dict[tuple[str, date], list[OrderEvent]]:
        """Events grouped by ``(stock, day)``, keys sorted, file order kept inside a stream."""
        out: dict[tuple[str, date], list[OrderEvent]] = defaultdict(list)
        for ev in self.events:
            out[(ev.stock, ev.day)].append(ev)
        return {k: out[k] for k in sorted(out)}


def session_minute(timestamp: int) -> int:
    """1-based session minute of a timestamp, clipped to [1, 240]."""
    m = (timestamp - SESSION_OPEN_MS) // MINUTE_MS + 1
    return min(max(m, 1), SESSION_MINUTES)


# ---------------------------------------------------------------------------
# generic row I/O


def _detect_format(path: Path, fmt: str | None) -> str:
    if fmt is None:
        fmt = "jsonl" if path.suffix.lower() in (".jsonl", ".ndjson") else "csv"
    if fmt not in FORMATS:
        raise TapeError(f"unsupported format {fmt!r}; expected one of {FORMATS}")
    return fmt


def _iter_rows(path: Path, fmt: str, fields: Sequence[str]) -> Iterator[tuple[int, list | None, str | None]]:
    """Yield ``(line_number, values, error)``; values follow ``fields`` order, None on error."""
    width = len(fields)
    with open(path, encoding="utf-8", newline="") as fh:
        if fmt == "csv":
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                return
            if tuple(header) != tuple(fields):
                raise TapeError(f"{path}: bad header {header!r}; expected {','.join(fields)}")
            for row in reader:
                if len(row) != width:
                    if row:
                        yield reader.line_num, None, f"expected {width} fields, got {len(row)}"
                    continue
                yield reader.line_num, row, None
        else:
            for lineno, raw in enumerate(fh, start=1):
                if not raw.strip():
                    continue
                try:
                    obj = json.loads(raw)
                except json.JSONDecodeError as exc:
                    yield lineno, None, f"invalid JSON: {exc.msg}"
                    continue
                if not isinstance(obj, dict):
                    yield lineno, None, "JSON row is not an object"
                    continue
                missing = [f for f in fields if f not in obj]
                if missing:
                    yield lineno, None, f"missing fields {missing}"
                    continue
                yield lineno, [obj[f] for f in fields], None


def _csv_columns(path: Path, fields: Sequence[str]) -> tuple[list[int], list[list[str]]] | None:
    """Columns of a clean CSV file plus each row's line number; None if any row is short or long."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        if tuple(next(reader, ())) != tuple(fields):
            return None
        rows, lines = [], []
        width = len(fields)
        for row in reader:
            if len(row) != width:
                if row:
                    return None
                continue
            rows.append(row)
            lines.append(reader.line_num)
    if not rows:
        return lines, [[] for _ in fields]
    return lines, [list(c) for c in zip(*rows)]


def _int_column(col: list[str], lo: int, hi: int | None = None, empty: bool = False) -> list | None:
    """Integers in ``[lo, hi)``; empty strings become None if allowed. None on any bad value."""
    try:
        vals = [int(v) if v else None for v in col] if empty else list(map(int, col))
    except ValueError:
        return None
    present = [v for v in vals if v is not None] if empty else vals
    if present and (min(present) < lo or (hi is not None and max(present) >= hi)):
        return None
    return vals


def _day_column(col: list[str]) -> list[date] | None:
    try:
        lookup = {v: _parse_day(v) for v in set(col)}
    except ValueError:
        return None
    return [lookup[v] for v in col]


def _write_rows(path: Path, fmt: str, fields: Sequence[str], rows: Iterable[Sequence]) -> None:
    path = Path(path)
    fmt = _detect_format(path, fmt)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if fmt == "csv":
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(fields)
            for row in rows:
                writer.writerow(["" if v is None else v for v in row])
        else:
            for row in rows:
                fh.write(json.dumps(dict(zip(fields, row)), separators=(",", ":")) + "\n")


def _opt_str(v) -> str | None:
    if v.__class__ is str:
        return v or None
    if v is None:
        return None
    v = str(v)
    return v if v != "" else None


def _opt_int(v, name: str, positive: bool = True) -> int | None:
    # fast path for plain decimal strings, the common CSV case
    if v.__class__ is str and v.isdigit():
        out = int(v)
        if positive and out == 0:
            raise ValueError(f"{name} must be positive, got 0")
        return out
    if v is None or v == "":
        return None
    if isinstance(v, bool):
        raise ValueError(f"{name} must be an integer")
    if isinstance(v, float):
        if not v.is_integer():
            raise ValueError(f"{name} must be an integer, got {v}")
        v = int(v)
    try:
        out = int(v)
    except (TypeError, ValueError):
        raise ValueError(f"{name} must be an integer, got {v!r}") from None
    if positive and out <= 0:
        raise ValueError(f"{name} must be positive, got {out}")
    return out


@lru_cache(maxsize=4096)
def _parse_day(v: str) -> date:
    try:
        return date.fromisoformat(v)
    except ValueError:
        raise ValueError(f"bad day {v!r}; expected YYYY-MM-DD") from None


def _day(v) -> date:
    return _parse_day(str(v))


def _timestamp(v) -> int:
    ts = _opt_int(v, "timestamp_ms", positive=False)
    if ts is None or not 0 <= ts < 86_400_000:
        raise ValueError(f"timestamp_ms out of range: {v!r}")
    return ts


# ---------------------------------------------------------------------------
# order tape


def _order_from_row(row: Sequence) -> OrderEvent:
    stock, day, ts, trader, action, side, price, size, ref = row
    stock, trader, ref = _opt_str(stock), _opt_str(trader), _opt_str(ref)
    if not stock:
        raise ValueError("empty stock")
    if not trader:
        raise ValueError("empty trader")
    if not ref:
        raise ValueError("empty order_ref")
    action, side = _opt_str(action), _opt_str(side)
    price = _opt_int(price, "price_ticks")
    size = _opt_int(size, "size")
    if action == SUBMIT:
        if side not in (BUY, SELL):
            raise ValueError(f"submit needs side buy/sell, got {side!r}")
        if price is None or size is None:
            raise ValueError("submit needs price_ticks and size")
    elif action == CANCEL:
        if side is not None:
            raise ValueError("cancel must not carry a side")
    else:
        raise ValueError(f"unknown action {action!r}")
    return OrderEvent(stock, _day(day), _timestamp(ts), trader, action, side, price, size, ref)


def _slow_orders(path: Path, fmt: str, diagnostics: list[Diagnostic]) -> Iterator[tuple[int, OrderEvent]]:
    for lineno, row, err in _iter_rows(path, fmt, ORDER_FIELDS):
        if err is not None:
            diagnostics.append(Diagnostic(lineno, err))
            continue
        try:
            yield lineno, _order_from_row(row)
        except ValueError as exc:
            diagnostics.append(Diagnostic(lineno, str(exc)))


def _fast_orders(path: Path) -> Iterable[tuple[int, OrderEvent]] | None:
    """Columnar parse of a CSV tape with no malformed rows; None sends the caller to the row parser."""
    got = _csv_columns(path, ORDER_FIELDS)
    if got is None:
        return None
    lines, (stock, day, ts, trader, action, side, price, size, ref) = got
    if "" in set(stock) or "" in set(trader) or "" in set(ref):
        return None
    kinds = set(zip(action, side))
    if not kinds <= {(SUBMIT, BUY), (SUBMIT, SELL), (CANCEL, "")}:
        return None
    days = _day_column(day)
    ts = _int_column(ts, 0, 86_400_000)
    price = _int_column(price, 1, empty=True)
    size = _int_column(size, 1, empty=True)
    if days is None or ts is None or price is None or size is None:
        return None
    if any((p is None or q is None) for a, p, q in zip(action, price, size) if a == SUBMIT):
        return None
    side = [v or None for v in side]
    return zip(lines, map(OrderEvent, stock, days, ts, trader, action, side, price, size, ref))


def parse_order_tape(path: str | Path, fmt: str | None = None) -> ParsedTape:
    """Parse and validate an order tape.

    Malformed rows, duplicate submit refs and cancels of unknown or already
    canceled refs are dropped with a row diagnostic. A timestamp that goes
    backwards inside a ``(stock, day)`` stream is dropped with a stream
    diagnostic. Whether a canceled order was already filled is only known
    to the matching engine.
    """
    path = Path(path)
    fmt = _detect_format(path, fmt)
    out = ParsedTape()
    parsed = _fast_orders(path) if fmt == "csv" else None
    if parsed is None:
        parsed = _slow_orders(path, fmt, out.diagnostics)
    last_ts: dict[tuple[str, date], int] = {}
    live: dict[tuple[str, date], set[str]] = defaultdict(set)
    seen: dict[tuple[str, date], set[str]] = defaultdict(set)
    for lineno, ev in parsed:
        key = (ev.stock, ev.day)
        prev = last_ts.get(key)
        if prev is not None and ev.timestamp < prev:
            out.diagnostics.append(
                Diagnostic(lineno, f"timestamp {ev.timestamp} precedes {prev} in stream {ev.stock} {ev.day}", "stream")
            )
            continue
        if ev.action == SUBMIT:
            if ev.order_ref in seen[key]:
                out.diagnostics.append(Diagnostic(lineno, f"duplicate order_ref {ev.order_ref!r}"))
                continue
            seen[key].add(ev.order_ref)
            live[key].add(ev.order_ref)
        else:
            if ev.order_ref not in live[key]:
                out.diagnostics.append(Diagnostic(lineno, f"cancel of unknown order_ref {ev.order_ref!r}"))
                continue
            live[key].discard(ev.order_ref)
        last_ts[key] = ev.timestamp
        out.events.append(ev)
    return out


def order_row(ev: OrderEvent) -> tuple:
    return (ev.stock, ev.day.isoformat(), ev.timestamp, ev.trader, ev.action, ev.side, ev.price, ev.size, ev.order_ref)


def write_order_tape(events: Iterable[OrderEvent], path: str | Path, fmt: str | None = None) -> None:
    _write_rows(Path(path), fmt, ORDER_FIELDS, (order_row(e) for e in events))


def render_order_tape(events: Iterable[OrderEvent]) -> str:
    """CSV rendering of an order stream, used for byte-level comparisons."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ORDER_FIELDS)
    for ev in events:
        writer.writerow(["" if v is None else v for v in order_row(ev)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# trades and quotes


def trade_row(t: Trade) -> tuple:
    return (t.stock, t.day.isoformat(), t.timestamp, t.seller, t.buyer, t.price, t.size, t.aggressor, t.seq)


def write_trades(trades: Iterable[Trade], path: str | Path, fmt: str | None = None) -> None:
    _write_rows(Path(path), fmt, TRADE_FIELDS, (trade_row(t) for t in trades))


def _fast_trades(path: Path) -> list[Trade] | None:
    got = _csv_columns(path, TRADE_FIELDS)
    if got is None:
        return None
    _, (stock, day, ts, seller, buyer, price, size, aggressor, seq) = got
    if "" in set(seller) or "" in set(buyer) or not set(aggressor) <= {BUYER, SELLER}:
        return None
    days = _day_column(day)
    cols = [_int_column(ts, 0, 86_400_000), _int_column(price, 1), _int_column(size, 1), _int_column(seq, 1)]
    if days is None or any(c is None for c in cols):
        return None
    ts, price, size, seq = cols
    return list(map(Trade, stock, days, ts, seller, buyer, price, size, aggressor, seq))


def read_trades(path: str | Path, fmt: str | None = None) -> list[Trade]:
    """Read a trade file. Any invalid row raises ``TapeError`` with its line number."""
    path = Path(path)
    fmt = _detect_format(path, fmt)
    if fmt == "csv":
        fast = _fast_trades(path)
        if fast is not None:
            return fast
    out = []
    for lineno, row, err in _iter_rows(path, fmt, TRADE_FIELDS):
        try:
            if err is not None:
                raise ValueError(err)
            stock, day, ts, seller, buyer, price, size, aggressor, seq = row
            seller, buyer = _opt_str(seller), _opt_str(buyer)
            if not seller or not buyer:
                raise ValueError("empty seller or buyer")
            if aggressor not in (BUYER, SELLER):
                raise ValueError(f"bad aggressor {aggressor!r}")
            price, size, seq = _opt_int(price, "price_ticks"), _opt_int(size, "size"), _opt_int(seq, "seq")
            if price is None or size is None or seq is None:
                raise ValueError("price_ticks, size and seq are required")
            out.append(Trade(str(stock), _day(day), _timestamp(ts), seller, buyer, price, size, aggressor, seq))
        except ValueError as exc:
            raise TapeError(f"{path}: line {lineno}: {exc}") from None
    return out


def quote_row(q: Quote) -> tuple:
    return (q.stock, q.day.isoformat(), q.timestamp, q.bid, q.ask)


def write_quotes(quotes: Iterable[Quote], path: str | Path, fmt: str | None = None) -> None:
    _write_rows(Path(path), fmt, QUOTE_FIELDS, (quote_row(q) for q in quotes))


def _fast_quotes(path: Path) -> list[Quote] | None:
    got = _csv_columns(path, QUOTE_FIELDS)
    if got is None:
        return None
    _, (stock, day, ts, bid, ask) = got
    days = _day_column(day)
    cols = [_int_column(ts, 0, 86_400_000), _int_column(bid, 1, empty=True), _int_column(ask, 1, empty=True)]
    if days is None or any(c is None for c in cols):
        return None
    return list(map(Quote, stock, days, *cols))


def read_quotes(path: str | Path, fmt: str | None = None) -> list[Quote]:
    path = Path(path)
    fmt = _detect_format(path, fmt)
    if fmt == "csv":
        fast = _fast_quotes(path)
        if fast is not None:
            return fast
    out = []
    for lineno, row, err in _iter_rows(path, fmt, QUOTE_FIELDS):
        try:
            if err is not None:
                raise ValueError(err)
            stock, day, ts, bid, ask = row
            out.append(Quote(str(stock), _day(day), _timestamp(ts), _opt_int(bid, "bid_ticks"), _opt_int(ask, "ask_ticks")))
        except ValueError as exc:
            raise TapeError(f"{path}: line {lineno}: {exc}") from None
    return out


def bar_row(b: MinuteBar) -> tuple:
    return (
        b.stock,
        b.day.isoformat(),
        b.minute,
        repr(b.volatility),
        b.volume,
        repr(b.avg_size),
        b.turnover,
        b.n_trades,
        None if math.isnan(b.mid_close) else repr(b.mid_close),
    )


def write_bars(bars: Iterable[MinuteBar], path: str | Path, fmt: str | None = None) -> None:
    _write_rows(Path(path), fmt, BAR_FIELDS, (bar_row(b) for b in bars))


def group_by_stock_day(records: Iterable) -> dict[tuple[str, date], list]:
    """Group trades or quotes by ``(stock, day)``; keys sorted, input order kept."""
    out: dict[tuple[str, date], list] = defaultdict(list)
    for r in records:
        out[(r.stock, r.day)].append(r)
    return {k: out[k] for k in sorted(out)}


# ---------------------------------------------------------------------------
# minute bars


def bar_series(
    trades: Sequence[Trade],
    mid_quotes: Sequence[tuple[int, float | None]],
    stock: str | None = None,
    day: date | None = None,
) -> list[MinuteBar]:
    """Aggregate one ``(stock, day)`` into 240 one-minute bars.

    ``mid_quotes`` is a timestamp-ordered sequence of ``(timestamp, mid)``;
    a ``None`` mid carries the previous one forward. The bar close mid is the
    last mid at or before the bar's end boundary. Volatility of the first bar
    is measured against the opening mid (last mid at or before the open, else
    the first mid of the day). Without any mid, volatility is 0 and
    ``mid_close`` is NaN.
    """
    if stock is None or day is None:
        if trades:
            stock, day = trades[0].stock, trades[0].day
        elif stock is None or day is None:
            raise ValueError("stock and day are required when there are no trades")

    n = SESSION_MINUTES
    if trades:
        minutes = np.fromiter((session_minute(t.timestamp) for t in trades), dtype=np.int64, count=len(trades))
        sizes = np.fromiter((t.size for t in trades), dtype=np.int64, count=len(trades))
        values = np.fromiter((t.price * t.size for t in trades), dtype=np.int64, count=len(trades))
        volume = np.bincount(minutes - 1, weights=sizes, minlength=n).astype(np.int64)
        turnover = np.bincount(minutes - 1, weights=values, minlength=n).astype(np.int64)
        counts = np.bincount(minutes - 1, minlength=n)
    else:
        volume = np.zeros(n, dtype=np.int64)
        turnover = np.zeros(n, dtype=np.int64)
        counts = np.zeros(n, dtype=np.int64)

    q_ts, q_mid = [], []
    last = None
    for ts, mid in mid_quotes:
        if mid is not None and not (isinstance(mid, float) and math.isnan(mid)):
            last = float(mid)
        if last is not None:
            q_ts.append(ts)
            q_mid.append(last)
    closes = np.full(n + 1, np.nan)
    if q_ts:
        q_ts_arr = np.asarray(q_ts, dtype=np.int64)
        q_mid_arr = np.asarray(q_mid, dtype=np.float64)
        bounds = SESSION_OPEN_MS + MINUTE_MS * np.arange(n + 1, dtype=np.int64)
        idx = np.searchsorted(q_ts_arr, bounds, side="right") - 1
        opening = q_mid_arr[idx[0]] if idx[0] >= 0 else q_mid_arr[0]
        closes = np.where(idx >= 0, q_mid_arr[np.maximum(idx, 0)], opening)
        closes[0] = opening
        with np.errstate(divide="ignore", invalid="ignore"):
            vol = np.abs(np.diff(np.log(closes)))
        vol = np.where(np.isfinite(vol), vol, 0.0)
    else:
        vol = np.zeros(n)

    bars = []
    for i in range(n):
        c = int(counts[i])
        bars.append(
            MinuteBar(
                stock,
                day,
                i + 1,
                float(vol[i]),
                int(volume[i]),
                float(volume[i]) / c if c else 0.0,
                int(turnover[i]),
                c,
                float(closes[i + 1]),
            )
        )
    return bars
