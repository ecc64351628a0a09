"""Trade-tick data model, tick file I/O, and the synthetic tick generator.

The generator produces one (symbol, day) partition at a time, each fully
determined by (config, seed, symbol index, day index) so partitions can be
produced in any order or in parallel with identical output.

Signal structure per minute m (all in log-price space):

    delta_m = phi * delta_{m-1} + Normal(0, drift_shock_scale^2)
    mean_m  = delta_m + a_mom * r_{m-1}
                      + a_cf  * (2 * cf_{m-1} - 1) * vol
                      + a_td  * timediff_{m-1}     * vol
    r_m     = mean_m + vol * curve[m] * T(tick_noise_dof)

where r, cf (close fraction) and timediff (normalized high-minus-low time)
are realized from the previous minute's quantized tick path. Within the
minute, tick log prices bridge from open to open*exp(r_m) with per-tick
t-distributed shocks, so OHLC, VWAP and the price timestamps are mutually
consistent. Setting a_td = 0 removes every dependence of future returns on
within-bar high/low ordering.
"""

from __future__ import annotations

import csv
import datetime as dt
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

NS_PER_SEC = 1_000_000_000
PRICE_SCALE = 10_000  # prices live on a 1e-4 grid

# Within-minute bridge noise relative to the minute's return scale. Kept
# well below the bounce so the bar extremes (and their times) are governed
# by transient noise rather than the efficient path: the injected timing
# signal reads the OBSERVED time difference either way, but a path-driven
# extreme would let timing features reconstruct efficient prices and leak
# predictive value even with the timing coefficient at zero.
BRIDGE_SCALE = 0.4

# Bid-ask-bounce-style transient noise per traded tick, relative to the
# minute's return scale. It perturbs every traded price (including the
# close) but never propagates to the efficient path, so the previous close
# is a noisy predictor of the next bar while the VWAP averages it away -
# the reason VWAP is the forecast target in the first place. Large enough
# that the bar extremes are mostly bounce order statistics, which keeps the
# extreme TIMES nearly uninformative about the efficient price (the
# residual attribution channel at timing_coef = 0 sits well below the
# training experiments' resolution).
BOUNCE_SCALE = 2.5

# Degrees of freedom of the minute-return innovation. Heavier than normal
# (conditional targets must reward the t head over a matched Gaussian) but
# lighter than the raw tick noise, which averages out in the VWAP anyway.
MINUTE_DOF = 5.0

# Per-symbol volatility dispersion (log-uniform multiplier on vol_per_minute).
# Pooling symbols of different vol makes the standardized target a scale
# mixture - heavy-tailed marginally, like a real cross-section - without
# touching any per-symbol signal-to-noise ratio.
VOL_FACTOR_RANGE = (0.4, 2.5)


class TickValidationError(ValueError):
    """A tick row violates the data contract (price/size/session bounds)."""


class TickParseError(ValueError):
    """A tick file row could not be parsed; carries the 1-based line number."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


@dataclass(frozen=True)
class Tick:
    symbol: str
    day: dt.date
    ts: int  # nanoseconds since midnight, exchange-local
    price: float
    size: int
    code: str = ""


@dataclass(frozen=True)
class SessionSpec:
    minutes_per_day: int = 390
    session_open: dt.time = dt.time(9, 30)
    bar_width: float = 60.0  # seconds

    def __post_init__(self):
        if self.minutes_per_day < 1:
            raise ValueError("minutes_per_day must be >= 1")
        if self.bar_width <= 0:
            raise ValueError("bar_width must be > 0")

    @property
    def open_ns(self) -> int:
        t = self.session_open
        return ((t.hour * 60 + t.minute) * 60 + t.second) * NS_PER_SEC + t.microsecond * 1000

    @property
    def bar_width_ns(self) -> int:
        return int(round(self.bar_width * NS_PER_SEC))

    @property
    def close_ns(self) -> int:
        return self.open_ns + self.minutes_per_day * self.bar_width_ns

    def bar_start_ns(self, minute_index: int) -> int:
        return self.open_ns + minute_index * self.bar_width_ns


def default_vol_curve(minutes: int) -> np.ndarray:
    """U-shaped intraday volatility multiplier: busy open, quiet middle,
    active close. Mean is deliberately not normalized to 1."""
    m = np.arange(minutes, dtype=np.float64)
    return 0.45 + 1.05 * np.exp(-m / 25.0) + 0.35 * np.exp(-(minutes - 1 - m) / 60.0)


@dataclass(frozen=True)
class SynthConfig:
    symbols: int = 20
    days: int = 30
    seed: int = 12345
    base_price_range: tuple = (5.0, 500.0)
    drift_phi: float = 0.97
    drift_shock_scale: float = 2e-5
    vol_per_minute: float = 1e-3
    vol_curve: tuple = ()  # empty -> default_vol_curve(minutes_per_day)
    momentum_coef: float = 0.1
    close_frac_coef: float = 0.1
    timing_coef: float = 0.5
    tick_base: int = 30
    tick_rate: float = 40.0  # Poisson mean for ticks beyond the base
    tick_noise_dof: float = 4.0
    off_exchange_fraction: float = 0.05
    size_log_mean: float = 4.6
    size_log_sd: float = 1.0
    start_day: dt.date = dt.date(2021, 1, 4)

    def __post_init__(self):
        if self.symbols < 1 or self.days < 1:
            raise ValueError("symbols and days must be >= 1")
        lo, hi = self.base_price_range
        if not (0 < lo <= hi):
            raise ValueError("base_price_range must satisfy 0 < low <= high")
        if not (0.0 <= self.off_exchange_fraction <= 1.0):
            raise ValueError("off_exchange_fraction must be in [0, 1]")
        if self.tick_base < 1:
            raise ValueError("tick_base must be >= 1")
        if self.tick_noise_dof <= 2.0:
            raise ValueError("tick_noise_dof must be > 2 (finite variance)")

    def curve(self, minutes: int) -> np.ndarray:
        if self.vol_curve:
            c = np.asarray(self.vol_curve, dtype=np.float64)
            if len(c) != minutes:
                raise ValueError(f"vol_curve length {len(c)} != minutes_per_day {minutes}")
            return c
        return default_vol_curve(minutes)


@dataclass
class DayTicks:
    """One (symbol, day) partition as columnar arrays, sorted by ts.

    price_ticks holds prices in integer 1e-4 units so downstream VWAP
    arithmetic can stay exact.
    """

    symbol: str
    day: dt.date
    ts: np.ndarray  # int64 ns since midnight
    price_ticks: np.ndarray  # int64, price * 1e4
    size: np.ndarray  # int64
    code: np.ndarray  # unicode array, "" = regular trade

    def __len__(self):
        return len(self.ts)

    @property
    def price(self) -> np.ndarray:
        return self.price_ticks / PRICE_SCALE

    def rows(self):
        for i in range(len(self.ts)):
            yield Tick(
                self.symbol,
                self.day,
                int(self.ts[i]),
                float(self.price_ticks[i]) / PRICE_SCALE,
                int(self.size[i]),
                str(self.code[i]),
            )


def trading_days(start: dt.date, n: int) -> list:
    """n consecutive weekdays starting at (or after) `start`."""
    out = []
    d = start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += dt.timedelta(days=1)
    return out


def symbol_name(index: int) -> str:
    return f"S{index:04d}"


def tick_file_name(symbol: str, day: dt.date) -> str:
    return f"{symbol}_{day.isoformat()}.ticks.csv"


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def _strictly_increasing(ts: np.ndarray, end_ns: int) -> np.ndarray:
    """Repair ties by +1 ns steps, keeping everything below end_ns."""
    n = len(ts)
    idx = np.arange(n, dtype=np.int64)
    out = np.maximum.accumulate(ts - idx) + idx
    if out[-1] >= end_ns:
        out = np.minimum(out, end_ns - n + idx)
    return out


def symbol_profile(cfg: SynthConfig, symbol_index: int) -> tuple:
    """(base price, vol multiplier) for a symbol; fixed across its days."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, symbol_index]))
    lo, hi = cfg.base_price_range
    price = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
    vlo, vhi = VOL_FACTOR_RANGE
    vol_factor = float(np.exp(rng.uniform(np.log(vlo), np.log(vhi))))
    return price, vol_factor


def base_price(cfg: SynthConfig, symbol_index: int) -> float:
    return symbol_profile(cfg, symbol_index)[0]


def generate_day_ticks(
    cfg: SynthConfig, session: SessionSpec, symbol_index: int, day_index: int
) -> DayTicks:
    """Generate one (symbol, day) partition. Pure and deterministic."""
    minutes = session.minutes_per_day
    curve = cfg.curve(minutes)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, symbol_index, day_index, 1]))
    open_price, vol_factor = symbol_profile(cfg, symbol_index)
    vol = cfg.vol_per_minute * vol_factor

    # one rng pass for the whole day, in a fixed draw order
    eta = rng.normal(0.0, cfg.drift_shock_scale, size=minutes)
    if abs(cfg.drift_phi) < 1.0:
        stationary_sd = cfg.drift_shock_scale / np.sqrt(1.0 - cfg.drift_phi**2)
    else:
        stationary_sd = 0.0
    delta = float(rng.normal(0.0, stationary_sd))
    minute_shock = rng.standard_t(MINUTE_DOF, size=minutes)
    counts = cfg.tick_base + rng.poisson(cfg.tick_rate, size=minutes)
    total = int(counts.sum())
    u_all = rng.random(total)
    bridge_all = rng.standard_t(cfg.tick_noise_dof, size=total)
    sizes_all = np.maximum(1, np.round(rng.lognormal(cfg.size_log_mean, cfg.size_log_sd, total))).astype(np.int64)
    off_all = rng.random(total) < cfg.off_exchange_fraction
    bounce_all = rng.standard_t(cfg.tick_noise_dof, size=total)

    day = trading_days(cfg.start_day, cfg.days)[day_index]
    ln_eff_open = float(np.log(max(open_price, 1.0 / PRICE_SCALE)))

    ts_parts, price_parts = [], []
    width_ns = session.bar_width_ns
    r_prev = 0.0
    cf_prev = 0.5
    td_prev = 0.0
    offset = 0
    for m in range(minutes):
        n = int(counts[m])
        u = u_all[offset : offset + n]
        shocks = bridge_all[offset : offset + n]
        bounce = bounce_all[offset : offset + n]
        offset += n

        mean_m = (
            delta
            + cfg.momentum_coef * r_prev
            + cfg.close_frac_coef * (2.0 * cf_prev - 1.0) * vol
            + cfg.timing_coef * td_prev * vol
        )
        scale_m = vol * curve[m]
        r_m = mean_m + scale_m * minute_shock[m]

        start = session.bar_start_ns(m)
        ts = start + np.floor(np.sort(u) * width_ns).astype(np.int64)
        ts = _strictly_increasing(ts, start + width_ns)

        # efficient path: bridge pinned from open to open*exp(r_m)
        if n > 1:
            v = (ts - ts[0]) / max(1, int(ts[-1] - ts[0]))
            eps = shocks * (BRIDGE_SCALE * scale_m / np.sqrt(n))
            eps[0] = 0.0
            s = np.cumsum(eps)
            ln_eff = ln_eff_open + v * r_m + (s - v * s[-1])
        else:
            ln_eff = np.array([ln_eff_open])
        # traded prices: transient bounce on top, then the 1e-4 grid
        ln_traded = ln_eff + bounce * (BOUNCE_SCALE * scale_m)
        p_ticks = np.maximum(1, np.round(np.exp(ln_traded) * PRICE_SCALE)).astype(np.int64)

        # realized state for the next minute, from the quantized traded path
        # (exactly what the bar builder and the timing features will see)
        o, c = p_ticks[0], p_ticks[-1]
        h, l = p_ticks.max(), p_ticks.min()
        r_prev = float(np.log(c / o))
        cf_prev = float((c - l) / (h - l)) if h > l else 0.5
        hi_ts = ts[int(np.argmax(p_ticks == h))]
        lo_ts = ts[int(np.argmax(p_ticks == l))]
        td_prev = float(hi_ts - lo_ts) / width_ns
        delta = cfg.drift_phi * delta + float(eta[m])
        ln_eff_open += r_m

        ts_parts.append(ts)
        price_parts.append(p_ticks)

    codes = np.where(off_all, "X", "").astype("U4")
    return DayTicks(
        symbol=symbol_name(symbol_index),
        day=day,
        ts=np.concatenate(ts_parts),
        price_ticks=np.concatenate(price_parts),
        size=sizes_all,
        code=codes,
    )


def generate_ticks(cfg: SynthConfig, session: SessionSpec, out_dir, threads: int = 1) -> list:
    """Write one tick CSV per (symbol, day); returns the file paths written."""
    os.makedirs(out_dir, exist_ok=True)
    jobs = [(s, d) for s in range(cfg.symbols) for d in range(cfg.days)]

    def run(job):
        s, d = job
        ticks = generate_day_ticks(cfg, session, s, d)
        path = os.path.join(out_dir, tick_file_name(ticks.symbol, ticks.day))
        write_ticks(ticks, path)
        return path

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            paths = list(ex.map(run, jobs))
    else:
        paths = [run(j) for j in jobs]
    return paths


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

TICK_HEADER = "symbol,date,ts_ns,price,size,code"


def _format_price(price_ticks: int) -> str:
    sign = "-" if price_ticks < 0 else ""
    pt = abs(int(price_ticks))
    return f"{sign}{pt // PRICE_SCALE}.{pt % PRICE_SCALE:04d}"


def write_ticks(ticks: DayTicks, path) -> None:
    day = ticks.day.isoformat()
    sym = ticks.symbol
    lines = [TICK_HEADER]
    for i in range(len(ticks)):
        lines.append(
            f"{sym},{day},{ticks.ts[i]},{_format_price(ticks.price_ticks[i])},"
            f"{ticks.size[i]},{ticks.code[i]}"
        )
    with open(path, "w", newline="") as f:
        f.write("\n".join(lines))
        f.write("\n")


def _parse_price_ticks(text: str) -> int:
    if "." in text:
        whole, frac = text.split(".", 1)
        if len(frac) > 4:
            raise ValueError(f"price {text!r} has more than 4 fractional digits")
        frac = frac.ljust(4, "0")
    else:
        whole, frac = text, "0000"
    neg = whole.startswith("-")
    if neg:
        whole = whole[1:]
    value = int(whole) * PRICE_SCALE + int(frac)
    return -value if neg else value


def read_ticks(path, session: SessionSpec | None = None) -> list:
    """Read a tick CSV into DayTicks partitions grouped by (symbol, day).

    Rows are sorted by ts within each partition (stable for equal ts).
    Malformed rows raise TickParseError with the line number; non-positive
    price/size or out-of-session timestamps raise TickValidationError.
    """
    session = session or SessionSpec()
    lo, hi = session.open_ns, session.close_ns
    groups: dict = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            return []
        if [h.strip() for h in header] != TICK_HEADER.split(","):
            raise TickParseError(path, 1, f"unexpected header {header!r}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 6:
                raise TickParseError(path, line_no, f"expected 6 fields, got {len(row)}")
            sym, date_s, ts_s, price_s, size_s, code = row
            try:
                day = dt.date.fromisoformat(date_s)
                ts = int(ts_s)
                price_ticks = _parse_price_ticks(price_s)
                size = int(size_s)
            except ValueError as e:
                raise TickParseError(path, line_no, str(e)) from e
            if price_ticks <= 0 or size <= 0:
                raise TickValidationError(
                    f"{path}:{line_no}: price and size must be positive "
                    f"(price={price_s}, size={size_s})"
                )
            if not (lo <= ts < hi):
                raise TickValidationError(
                    f"{path}:{line_no}: ts {ts} outside session [{lo}, {hi})"
                )
            groups.setdefault((sym, day), []).append((ts, price_ticks, size, code))

    out = []
    for (sym, day) in sorted(groups):
        rows = groups[(sym, day)]
        ts = np.array([r[0] for r in rows], dtype=np.int64)
        order = np.argsort(ts, kind="stable")
        out.append(
            DayTicks(
                symbol=sym,
                day=day,
                ts=ts[order],
                price_ticks=np.array([r[1] for r in rows], dtype=np.int64)[order],
                size=np.array([r[2] for r in rows], dtype=np.int64)[order],
                code=np.array([r[3] for r in rows], dtype="U4")[order],
            )
        )
    return out
