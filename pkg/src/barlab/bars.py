"""Timing-enhanced one-minute OHLC bars.

Each bar carries, besides OHLC/VWAP/volume, the timestamps at which the
four prices occurred: the first trade (open), the FIRST trade attaining
the high, the FIRST attaining the low, and the last trade (close). Ticks
whose condition code is excluded still show up in the per-code counters
but contribute nothing to OHLC, VWAP, volume or the tick count.

VWAP is computed in exact integer arithmetic on the 1e-4 price grid
(price_ticks * size), so the result is independent of tick order.
"""

from __future__ import annotations

import datetime as dt
import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .ticks import PRICE_SCALE, DayTicks, SessionSpec


class BarFormatError(ValueError):
    """Bar CSV does not match the expected schema (format version 1)."""


class ContractViolation(ValueError):
    """An operation precondition was violated by the caller."""


class CodeCount(NamedTuple):
    volume: int
    tick_count: int


@dataclass(frozen=True)
class Bar:
    symbol: str
    day: dt.date
    minute_index: int
    open: float
    high: float
    low: float
    close: float
    open_ts: int
    high_ts: int
    low_ts: int
    close_ts: int
    vwap: float
    volume: int
    dollar_volume: float
    tick_count: int
    per_code: dict = field(default_factory=dict)  # code -> CodeCount


@dataclass(frozen=True)
class BarBuildConfig:
    excluded_codes: frozenset = frozenset()
    session: SessionSpec = field(default_factory=SessionSpec)


def build_bars(ticks: DayTicks, cfg: BarBuildConfig) -> list:
    """Aggregate one (symbol, day) tick partition into per-minute bars.

    Minutes with no included tick are absent from the result (never
    zero-filled). Input must already be sorted by ts ascending.
    """
    session = cfg.session
    if len(ticks) == 0:
        return []
    ts = ticks.ts
    if np.any(np.diff(ts) < 0):
        raise ContractViolation("ticks must be sorted by ts ascending")

    width = session.bar_width_ns
    minutes = ((ts - session.open_ns) // width).astype(np.int64)
    if cfg.excluded_codes:
        included = ~np.isin(ticks.code, list(cfg.excluded_codes))
    else:
        included = np.ones(len(ts), dtype=bool)

    price_ticks = ticks.price_ticks
    sizes = ticks.size
    codes = ticks.code

    # ts is sorted, so minutes are nondecreasing: bars are contiguous slices
    uniq, starts = np.unique(minutes, return_index=True)
    bounds = np.append(starts, len(minutes))

    out = []
    for i, m in enumerate(uniq):
        sl = slice(int(bounds[i]), int(bounds[i + 1]))
        bar_codes = codes[sl]
        bar_sizes = sizes[sl]
        per_code: dict = {}
        for code in np.unique(bar_codes):
            c = bar_codes == code
            per_code[str(code)] = CodeCount(int(bar_sizes[c].sum()), int(c.sum()))
        inc = included[sl]
        if not np.any(inc):
            continue  # only excluded ticks in this minute

        p = price_ticks[sl][inc]
        t = ts[sl][inc]
        s = bar_sizes[inc]
        hi = p.max()
        lo = p.min()
        volume = int(s.sum())
        dollar_ticks = int(np.dot(p, s))
        out.append(
            Bar(
                symbol=ticks.symbol,
                day=ticks.day,
                minute_index=int(m),
                open=p[0] / PRICE_SCALE,
                high=hi / PRICE_SCALE,
                low=lo / PRICE_SCALE,
                close=p[-1] / PRICE_SCALE,
                open_ts=int(t[0]),
                high_ts=int(t[np.argmax(p == hi)]),  # first occurrence
                low_ts=int(t[np.argmax(p == lo)]),
                close_ts=int(t[-1]),
                vwap=dollar_ticks / (volume * PRICE_SCALE),
                volume=volume,
                dollar_volume=dollar_ticks / PRICE_SCALE,
                tick_count=int(inc.sum()),
                per_code=per_code,
            )
        )
    return out


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

_FIXED_COLUMNS = [
    "symbol", "date", "minute", "open", "high", "low", "close",
    "open_ts", "high_ts", "low_ts", "close_ts",
    "vwap", "volume", "dollar_volume", "ticks",
]


def bar_file_name(symbol: str, day: dt.date) -> str:
    return f"{symbol}_{day.isoformat()}.bars.csv"


def write_bars(bars: list, path) -> None:
    codes = sorted({c for b in bars for c in b.per_code})
    header = list(_FIXED_COLUMNS)
    for c in codes:
        header += [f"vol[{c}]", f"ticks[{c}]"]
    lines = [",".join(header)]
    for b in bars:
        row = [
            b.symbol,
            b.day.isoformat(),
            str(b.minute_index),
            f"{b.open:.4f}",
            f"{b.high:.4f}",
            f"{b.low:.4f}",
            f"{b.close:.4f}",
            str(b.open_ts),
            str(b.high_ts),
            str(b.low_ts),
            str(b.close_ts),
            f"{b.vwap:.8f}",
            str(b.volume),
            f"{b.dollar_volume:.4f}",
            str(b.tick_count),
        ]
        for c in codes:
            cc = b.per_code.get(c)
            row += [str(cc.volume), str(cc.tick_count)] if cc else ["0", "0"]
        lines.append(",".join(row))
    with open(path, "w", newline="") as f:
        f.write("\n".join(lines))
        f.write("\n")


def read_bars(path) -> list:
    """Read one bar CSV back into Bar values, preserving minute order."""
    with open(path, newline="") as f:
        text = f.read()
    lines = [ln for ln in text.split("\n") if ln]
    if not lines:
        return []
    header = lines[0].split(",")
    if header[: len(_FIXED_COLUMNS)] != _FIXED_COLUMNS:
        raise BarFormatError(
            f"{path}: header does not match bar format v1 (got {header[:5]}...)"
        )
    code_cols = header[len(_FIXED_COLUMNS):]
    if len(code_cols) % 2 != 0:
        raise BarFormatError(f"{path}: dangling per-code column")
    codes = []
    for i in range(0, len(code_cols), 2):
        v, t = code_cols[i], code_cols[i + 1]
        if not (v.startswith("vol[") and v.endswith("]") and t == f"ticks[{v[4:-1]}]"):
            raise BarFormatError(f"{path}: malformed per-code columns {v!r}, {t!r}")
        codes.append(v[4:-1])

    out = []
    for ln_no, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(header):
            raise BarFormatError(f"{path}:{ln_no}: expected {len(header)} fields")
        try:
            per_code = {}
            for i, c in enumerate(codes):
                vol = int(parts[len(_FIXED_COLUMNS) + 2 * i])
                cnt = int(parts[len(_FIXED_COLUMNS) + 2 * i + 1])
                if vol or cnt:
                    per_code[c] = CodeCount(vol, cnt)
            out.append(
                Bar(
                    symbol=parts[0],
                    day=dt.date.fromisoformat(parts[1]),
                    minute_index=int(parts[2]),
                    open=float(parts[3]),
                    high=float(parts[4]),
                    low=float(parts[5]),
                    close=float(parts[6]),
                    open_ts=int(parts[7]),
                    high_ts=int(parts[8]),
                    low_ts=int(parts[9]),
                    close_ts=int(parts[10]),
                    vwap=float(parts[11]),
                    volume=int(parts[12]),
                    dollar_volume=float(parts[13]),
                    tick_count=int(parts[14]),
                    per_code=per_code,
                )
            )
        except ValueError as e:
            raise BarFormatError(f"{path}:{ln_no}: {e}") from e
    return out


def write_bars_dir(partitions, out_dir) -> list:
    """Write one bar file per (symbol, day) partition; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for bars in partitions:
        if not bars:
            continue
        path = os.path.join(out_dir, bar_file_name(bars[0].symbol, bars[0].day))
        write_bars(bars, path)
        paths.append(path)
    return paths
