"""Engineered per-bar features and the three nested feature sets.

Column order is fixed and published via the column manifest; BASIC is a
prefix of NO_TIMING, which is a prefix of FULL, so a matrix built for a
larger set contains the smaller sets as leading columns.

Normalization by group:
  basic prices      -- min-max per sample: lowest low in the lookback -> -1,
                       highest high -> +1
  log returns       -- (x - mean) / std, training-set moments
  volume measures   -- (x - median) / IQR, training-set statistics
  bar scale         -- none (already window- or bar-relative)
  time of day       -- none (integer minute index, 0 = first session minute)
  recent volume     -- (x - mean) / std, training-set moments
  relative activity -- none (z-scores against the raw prior-volume stats)
  basic timing      -- in [0, 1] by construction (0 = bar start, 1 = bar end)
  derived timing    -- none
"""

from __future__ import annotations

import datetime as dt
import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .bars import Bar, ContractViolation
from .ticks import SessionSpec

LOOKBACK = 20


class FeatureSet(enum.Enum):
    BASIC = "basic"
    NO_TIMING = "no_timing"
    FULL = "full"


class Column(NamedTuple):
    name: str
    group: str
    normalization: str


COLUMNS = [
    Column("scaled_open", "basic_prices", "minmax[-1,1] per sample"),
    Column("scaled_high", "basic_prices", "minmax[-1,1] per sample"),
    Column("scaled_low", "basic_prices", "minmax[-1,1] per sample"),
    Column("scaled_close", "basic_prices", "minmax[-1,1] per sample"),
    Column("vwap_log_return", "log_returns", "train mean/std"),
    Column("bar_log_return", "log_returns", "train mean/std"),
    Column("high_close_log_return", "log_returns", "train mean/std"),  # ln(close/high)
    Column("high_low_log_return", "log_returns", "train mean/std"),
    Column("close_vwap_log_return", "log_returns", "train mean/std"),
    Column("volume", "volume_measures", "train median/IQR"),
    Column("log_volume", "volume_measures", "train median/IQR"),
    Column("dollar_volume", "volume_measures", "train median/IQR"),
    Column("log_dollar_volume", "volume_measures", "train median/IQR"),
    Column("tick_count", "volume_measures", "train median/IQR"),
    Column("scaled_bar_height", "bar_scale", "none"),
    Column("scaled_close_vs_open", "bar_scale", "none"),
    Column("close_fraction", "bar_scale", "none"),
    Column("open_fraction", "bar_scale", "none"),
    Column("minute_index", "time_of_day", "none"),
    Column("mean_prior_volume", "recent_volume", "train mean/std"),
    Column("std_prior_volume", "recent_volume", "train mean/std"),
    Column("median_prior_volume", "recent_volume", "train mean/std"),
    Column("p25_prior_volume", "recent_volume", "train mean/std"),
    Column("p75_prior_volume", "recent_volume", "train mean/std"),
    Column("prior_volume_z", "relative_activity", "none"),
    Column("prior_volume_robust_z", "relative_activity", "none"),
    Column("high_time_norm", "basic_timing", "[0,1] by construction"),
    Column("low_time_norm", "basic_timing", "[0,1] by construction"),
    Column("time_diff", "derived_timing", "none"),
    Column("timing_surprise", "derived_timing", "none"),
]

_SET_WIDTH = {FeatureSet.BASIC: 5, FeatureSet.NO_TIMING: 26, FeatureSet.FULL: 30}

MEAN_STD_COLUMNS = [c.name for c in COLUMNS if c.normalization == "train mean/std"]
MEDIAN_IQR_COLUMNS = [c.name for c in COLUMNS if c.normalization == "train median/IQR"]


def feature_dim(tag: FeatureSet) -> int:
    return _SET_WIDTH[tag]


def columns_for(tag: FeatureSet) -> list:
    return COLUMNS[: _SET_WIDTH[tag]]


def column_index(name: str) -> int:
    for i, c in enumerate(COLUMNS):
        if c.name == name:
            return i
    raise KeyError(name)


class PriorVolumeStats(NamedTuple):
    """Same-minute log dollar volume statistics over the last 5 trading days."""

    mean: float
    std: float
    median: float
    p25: float
    p75: float


@dataclass
class WindowSample:
    """One candidate sample: 21 consecutive same-day bars (context bar first),
    prior-volume stats for the 20 feature bars, and the raw/standardized
    next-bar VWAP log-return target."""

    symbol: str
    day: dt.date
    end_minute: int
    raw_bars: list  # 21 Bars, minutes end_minute-20 .. end_minute
    prior_stats: list  # 20 PriorVolumeStats, one per feature bar
    target_raw: float
    target_std: float = float("nan")


@dataclass
class FeatureMatrix:
    tag: FeatureSet
    values: np.ndarray  # (LOOKBACK, D), oldest bar first
    norm_ref: str = ""


# ---------------------------------------------------------------------------
# individual feature groups (single-sample reference implementations)
# ---------------------------------------------------------------------------


def minmax_scale_prices(window_bars: list) -> np.ndarray:
    """Affine map sending min(low) -> -1 and max(high) -> +1 over the window;
    returns (n, 4) scaled [open, high, low, close]."""
    lows = np.array([b.low for b in window_bars])
    highs = np.array([b.high for b in window_bars])
    span = highs.max() - lows.min()
    if span <= 0:
        raise ContractViolation("flat window reached the scaler; filters must reject it")
    lo = lows.min()
    prices = np.array([[b.open, b.high, b.low, b.close] for b in window_bars])
    return 2.0 * (prices - lo) / span - 1.0


def log_return_features(bar: Bar, prev_bar: Bar) -> dict:
    """Raw (pre-normalization) log-return features for one bar."""
    for p in (bar.open, bar.high, bar.low, bar.close, bar.vwap, prev_bar.vwap):
        if p <= 0:
            raise ContractViolation("log-return features require positive prices")
    return {
        "vwap_log_return": np.log(bar.vwap / prev_bar.vwap),
        "bar_log_return": np.log(bar.close / bar.open),
        "high_close_log_return": np.log(bar.close / bar.high),
        "high_low_log_return": np.log(bar.high / bar.low),
        "close_vwap_log_return": np.log(bar.close / bar.vwap),
    }


def volume_features(bar: Bar) -> dict:
    """Raw (pre-normalization) volume measures for one bar."""
    return {
        "volume": float(bar.volume),
        "log_volume": np.log(bar.volume),
        "dollar_volume": bar.dollar_volume,
        "log_dollar_volume": np.log(bar.dollar_volume),
        "tick_count": float(bar.tick_count),
    }


def bar_scale_features(bar: Bar, window_low: float, window_span: float) -> dict:
    scale = 2.0 / window_span
    out = {
        "scaled_bar_height": (bar.high - bar.low) * scale,
        "scaled_close_vs_open": (bar.close - bar.open) * scale,
    }
    rng = bar.high - bar.low
    if rng > 0:
        out["close_fraction"] = (bar.close - bar.low) / rng
        out["open_fraction"] = (bar.open - bar.low) / rng
    else:
        # flat bar: both fractions take the symmetric, information-free value
        out["close_fraction"] = 0.5
        out["open_fraction"] = 0.5
    return out


def time_and_activity_features(bar: Bar, prior: PriorVolumeStats) -> dict:
    """Minute index, raw prior-volume stats, and the two activity z-scores
    (computed against the raw prior stats, never the normalized ones)."""
    if not (prior.std > 0.0) or not (prior.p75 > prior.p25):
        raise ContractViolation("prior stats with zero dispersion must be filtered out")
    log_dollar = np.log(bar.dollar_volume)
    return {
        "minute_index": float(bar.minute_index),
        "mean_prior_volume": prior.mean,
        "std_prior_volume": prior.std,
        "median_prior_volume": prior.median,
        "p25_prior_volume": prior.p25,
        "p75_prior_volume": prior.p75,
        "prior_volume_z": (log_dollar - prior.mean) / prior.std,
        "prior_volume_robust_z": (log_dollar - prior.median) / (prior.p75 - prior.p25),
    }


def timing_features(bar: Bar, session: SessionSpec) -> dict:
    start = session.bar_start_ns(bar.minute_index)
    width = session.bar_width_ns
    high_t = (bar.high_ts - start) / width
    low_t = (bar.low_ts - start) / width
    up = bar.close > bar.open
    down = bar.close < bar.open
    surprise = (up and bar.high_ts < bar.low_ts) or (down and bar.low_ts < bar.high_ts)
    return {
        "high_time_norm": high_t,
        "low_time_norm": low_t,
        "time_diff": high_t - low_t,
        "timing_surprise": 1.0 if surprise else 0.0,
    }


# ---------------------------------------------------------------------------
# sample assembly
# ---------------------------------------------------------------------------


def assemble(sample: WindowSample, tag: FeatureSet, norm_stats, session: SessionSpec) -> FeatureMatrix:
    """Build the (LOOKBACK, D) matrix for one filtered sample.

    Reference implementation over Bar objects; the dataset builder has a
    vectorized equivalent that must agree with this one (tested).
    """
    bars = sample.raw_bars
    if len(bars) != LOOKBACK + 1:
        raise ContractViolation(f"expected {LOOKBACK + 1} bars, got {len(bars)}")
    feature_bars = bars[1:]
    scaled = minmax_scale_prices(feature_bars)
    lows = np.array([b.low for b in feature_bars])
    highs = np.array([b.high for b in feature_bars])
    window_low = lows.min()
    window_span = highs.max() - window_low

    d = feature_dim(tag)
    out = np.empty((LOOKBACK, d), dtype=np.float64)
    for i, bar in enumerate(feature_bars):
        row = {}
        row["scaled_open"], row["scaled_high"], row["scaled_low"], row["scaled_close"] = scaled[i]
        row.update(log_return_features(bar, bars[i]))
        row.update(volume_features(bar))
        row.update(bar_scale_features(bar, window_low, window_span))
        row.update(time_and_activity_features(bar, sample.prior_stats[i]))
        row.update(timing_features(bar, session))
        for j, col in enumerate(columns_for(tag)):
            raw = row[col.name]
            if col.normalization == "train mean/std":
                m, s = norm_stats.mean_std[col.name]
                raw = (raw - m) / s
            elif col.normalization == "train median/IQR":
                med, iqr = norm_stats.median_iqr[col.name]
                raw = (raw - med) / iqr
            out[i, j] = raw
    if not np.all(np.isfinite(out)):
        raise ContractViolation("non-finite feature value in a filtered sample")
    return FeatureMatrix(tag=tag, values=out, norm_ref=getattr(norm_stats, "ref", ""))


def column_manifest(tag: FeatureSet, symbols: list, lookback: int = LOOKBACK) -> dict:
    """JSON-ready column-order manifest emitted alongside datasets."""
    return {
        "format_version": 1,
        "feature_set": tag.value,
        "lookback": lookback,
        "columns": [{"name": c.name, "group": c.group, "normalization": c.normalization}
                    for c in columns_for(tag)],
        "symbols": list(symbols),
    }


def manifest_hash(manifest: dict) -> str:
    """Content hash over the parts that define feature order & meaning."""
    import hashlib
    import json

    core = {
        "feature_set": manifest["feature_set"],
        "lookback": manifest["lookback"],
        "columns": manifest["columns"],
    }
    blob = json.dumps(core, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
