"""Trade-by-trade price impact of motif trades.

For each event trade ``m`` the raw window is ``r_{m,i} = log p(m+i) - log
p(m+i-1)`` for ``i = -10..10`` over the stock's trade sequence. A control
set of up to 20 same-aggressor trades from other days, nearest in intraday
time, gives the benchmark mean; the excess window is raw minus benchmark.
Windows that would need an overnight return are not used.
"""

from __future__ import annotations

import logging
import math
from bisect import bisect_left
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import betainc

from .tape import BUYER, SELLER, Trade

log = logging.getLogger(__name__)

LAGS = 10
N_LAGS = 2 * LAGS + 1
BENCHMARK_SIZE = 20
MIN_BENCHMARK = 5
SCALE = 1e5
PANEL_B = (("[-10,-1]", slice(0, LAGS)), ("0", slice(LAGS, LAGS + 1)), ("[1,10]", slice(LAGS + 1, N_LAGS)))


class PriceTape:
    """The pooled, ordered trade sequence of one stock."""

    def __init__(self, trades: Iterable[Trade]) -> None:
        self.trades = sorted(trades, key=lambda t: (t.day, t.seq))
        n = len(self.trades)
        self.log_price = np.log(np.fromiter((t.price for t in self.trades), dtype=np.float64, count=n))
        self.day = np.fromiter((t.day.toordinal() for t in self.trades), dtype=np.int64, count=n)
        self.time = np.fromiter((t.timestamp for t in self.trades), dtype=np.int64, count=n)
        self.index = {t.key: k for k, t in enumerate(self.trades)}
        # a window at k spans trades k-11 .. k+10, all on one day
        valid = np.zeros(n, dtype=bool)
        if n > N_LAGS:
            k = np.arange(LAGS + 1, n - LAGS)
            valid[k] = self.day[k - LAGS - 1] == self.day[k + LAGS]
        self.valid = valid
        # row k - 11 of this view is the window of trade k
        r = np.diff(self.log_price)
        self._windows = np.lib.stride_tricks.sliding_window_view(r, N_LAGS) if len(r) >= N_LAGS else np.zeros((0, N_LAGS))

    def __len__(self) -> int:
        return len(self.trades)

    def window(self, k: int) -> np.ndarray | None:
        if not (0 <= k < len(self.trades)) or not self.valid[k]:
            return None
        return self._windows[k - LAGS - 1]

    def windows(self, ks: Sequence[int]) -> np.ndarray:
        return self._windows[np.asarray(ks, dtype=np.int64) - LAGS - 1]


def trade_returns(trades: Sequence[Trade], seq_key) -> np.ndarray | None:
    """Raw 21-point return window around the trade with key ``(day, seq)``."""
    tape = trades if isinstance(trades, PriceTape) else PriceTape(trades)
    k = tape.index.get(seq_key)
    if k is None:
        raise KeyError(f"no trade {seq_key}")
    w = tape.window(k)
    if w is None:
        log.warning("event %s lacks return history on its day; dropped", seq_key)
    return w


class BenchmarkIndex:
    """Same-aggressor candidate trades sorted by intraday time."""

    def __init__(self, tape: PriceTape, event_keys: Iterable) -> None:
        self.tape = tape
        excluded = {tape.index[k] for k in event_keys if k in tape.index}
        self._by_side = {}
        for side in (BUYER, SELLER):
            ks = [k for k, t in enumerate(tape.trades) if t.aggressor == side and tape.valid[k] and k not in excluded]
            ks.sort(key=lambda k: (tape.time[k], k))
            self._by_side[side] = (np.asarray(ks, dtype=np.int64), [int(tape.time[k]) for k in ks])

    def select(self, k: int, n: int = BENCHMARK_SIZE, min_n: int = MIN_BENCHMARK) -> list[int] | None:
        """Control set of event at position ``k``; None if fewer than ``min_n`` candidates."""
        tape = self.tape
        t0, d0 = int(tape.time[k]), int(tape.day[k])
        ks, times = self._by_side[tape.trades[k].aggressor]
        left = bisect_left(times, t0) - 1
        right = left + 1
        picked: list[tuple] = []
        cutoff = None
        while left >= 0 or right < len(times):
            dl = t0 - times[left] if left >= 0 else None
            dr = times[right] - t0 if right < len(times) else None
            if dr is None or (dl is not None and dl <= dr):
                j, dist = int(ks[left]), dl
                left -= 1
            else:
                j, dist = int(ks[right]), dr
                right += 1
            if cutoff is not None and dist > cutoff:
                break
            if tape.day[j] == d0:
                continue
            t = tape.trades[j]
            picked.append((dist, abs(int(tape.day[j]) - d0), t.day, t.seq, j))
            if len(picked) == n:
                cutoff = dist
        picked.sort()
        chosen = [p[-1] for p in picked[:n]]
        if len(chosen) < min_n:
            return None
        if len(chosen) < n:
            log.debug("event %s has only %d benchmark trades", tape.trades[k].key, len(chosen))
        return chosen


def benchmark_set(event_key, trades: Sequence[Trade] | PriceTape, event_keys: Iterable = (), n: int = BENCHMARK_SIZE) -> list[tuple] | None:
    """Keys ``(day, seq)`` of the control trades for one event."""
    tape = trades if isinstance(trades, PriceTape) else PriceTape(trades)
    keys = set(event_keys) | {event_key}
    chosen = BenchmarkIndex(tape, keys).select(tape.index[event_key], n)
    return None if chosen is None else [tape.trades[j].key for j in chosen]


@dataclass(frozen=True)
class ReturnWindow:
    key: tuple
    aggressor: str
    raw: np.ndarray
    benchmark_mean: np.ndarray
    excess: np.ndarray


def excess_returns(raw: np.ndarray, benchmarks: Sequence[np.ndarray], key=None, aggressor: str = BUYER) -> ReturnWindow:
    bench = np.mean(np.asarray(benchmarks, dtype=np.float64), axis=0)
    raw = np.asarray(raw, dtype=np.float64)
    return ReturnWindow(key, aggressor, raw, bench, raw - bench)


@dataclass(frozen=True)
class TTest:
    mean: float
    t: float
    p: float
    n: int
    degenerate: bool = False


def t_pvalue(t: float, df: int) -> float:
    """Two-sided Student-t p-value through the regularized incomplete beta."""
    if math.isinf(t):
        return 0.0
    return float(betainc(df / 2, 0.5, df / (df + t * t)))


def one_sample_ttest(x: Sequence[float]) -> TTest | None:
    """Test mean = 0. None if fewer than two values.

    With zero sample variance (up to rounding) the test is degenerate: p is 0 for a nonzero
    mean and 1 for a zero mean.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n < 2:
        return None
    mean = float(x.mean())
    sd = float(x.std(ddof=1))
    # spread at rounding level counts as constant
    if not math.isfinite(sd) or sd <= 8 * np.finfo(np.float64).eps * float(np.abs(x).max()):
        return TTest(mean, math.copysign(math.inf, mean) if mean else 0.0, 0.0 if mean else 1.0, n, True)
    t = mean / (sd / math.sqrt(n))
    return TTest(mean, t, t_pvalue(t, n - 1), n)


def stars(p: float | None) -> str:
    if p is None:
        return ""
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def _row(label, raw: Sequence[float], excess: Sequence[float]) -> dict:
    tr, te = one_sample_ttest(raw), one_sample_ttest(excess)
    return {
        "i": label,
        "n": len(raw),
        "mean_raw": float(np.mean(raw)) * SCALE if len(raw) else None,
        "p_raw": tr.p if tr else None,
        "stars_raw": stars(tr.p if tr else None),
        "degenerate_raw": bool(tr and tr.degenerate),
        "mean_excess": float(np.mean(excess)) * SCALE if len(excess) else None,
        "p_excess": te.p if te else None,
        "stars_excess": stars(te.p if te else None),
        "degenerate_excess": bool(te and te.degenerate),
    }


def lag_table(windows: Sequence[ReturnWindow]) -> dict:
    """Panel A (per lag) and Panel B (cumulative) rows; means are scaled by 1e5.

    Fewer than two windows gives rows without p-values.
    """
    if windows:
        raw = np.vstack([w.raw for w in windows])
        exc = np.vstack([w.excess for w in windows])
    else:
        raw = exc = np.zeros((0, N_LAGS))
    panel_a = [_row(i, raw[:, i + LAGS], exc[:, i + LAGS]) for i in range(-LAGS, LAGS + 1)]
    panel_b = [_row(label, raw[:, sl].sum(axis=1), exc[:, sl].sum(axis=1)) for label, sl in PANEL_B]
    return {"n_events": len(windows), "panel_a": panel_a, "panel_b": panel_b, "testable": len(windows) >= 2}


def event_windows(
    trades: Sequence[Trade], event_keys: Sequence, n_benchmark: int = BENCHMARK_SIZE
) -> list[ReturnWindow]:
    """Return windows of every usable event of one stock."""
    tape = PriceTape(trades)
    keys = [k for k in event_keys if k in tape.index]
    index = BenchmarkIndex(tape, keys)
    out = []
    no_history = no_bench = 0
    for key in keys:
        k = tape.index[key]
        raw = tape.window(k)
        if raw is None:
            no_history += 1
            continue
        bench = index.select(k, n_benchmark)
        if bench is None:
            no_bench += 1
            continue
        out.append(excess_returns(raw, tape.windows(bench), key, tape.trades[k].aggressor))
    if no_history or no_bench:
        stock = tape.trades[0].stock
        log.warning(
            "%s: dropped %d events without same-day return history and %d with fewer than %d benchmarks",
            stock, no_history, no_bench, MIN_BENCHMARK,
        )
    return out


def impact_report(windows: Sequence[ReturnWindow]) -> dict:
    buyer = [w for w in windows if w.aggressor == BUYER]
    seller = [w for w in windows if w.aggressor == SELLER]
    return {"scale": SCALE, "buyer": lag_table(buyer), "seller": lag_table(seller)}
