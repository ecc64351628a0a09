"""Windowed, filtered, standardized samples from bar files.

A sample is keyed by (symbol, day, t): 21 consecutive same-day bars
covering minutes t-20 .. t (the extra oldest bar supplies the predecessor
for the first VWAP log return), prior-volume statistics for each of the
20 feature bars, and the target ln(vwap_{t+1} / vwap_t), standardized by
the training-set mean and std.

Filters (all must hold):
  MIN_PRICE        min(low) >= $4 over the 21 bars
  MIN_TICKS        min(tick_count) >= 30 over the 21 bars
  FLAT_WINDOW      max(high) != min(low) over the 20 feature bars
  MISSING_OHLC     21 bars present at consecutive minutes
  TARGET_MISSING   bar t+1 exists (same day)
  PRIOR_VOLUME     prior-volume stats available for every feature bar

Normalization statistics are computed from the training split only and
applied everywhere (no leakage); sample std/IQR use the (n-1)/linear-
interpolation conventions throughout.
"""

from __future__ import annotations

import datetime as dt
import glob
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import features as F
from .bars import Bar, read_bars
from .ticks import SessionSpec

MAGIC = b"BARLAB\0"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<7sHBIIQ")
_TAG_CODE = {F.FeatureSet.BASIC: 0, F.FeatureSet.NO_TIMING: 1, F.FeatureSet.FULL: 2}
_CODE_TAG = {v: k for k, v in _TAG_CODE.items()}

MIN_PRICE = 4.0
MIN_TICKS = 30
PRIOR_DAYS = 5

FILTER_RULES = (
    "MIN_PRICE",
    "MIN_TICKS",
    "FLAT_WINDOW",
    "MISSING_OHLC",
    "TARGET_MISSING",
    "PRIOR_VOLUME",
)


class DatasetFormatError(ValueError):
    """Dataset binary is corrupt, truncated, or the wrong version."""


class ConfigError(ValueError):
    """Fatal configuration problem (e.g. empty training split)."""


@dataclass(frozen=True)
class SplitSpec:
    """Half-open [start, end) date ranges; train < valid < test."""

    train: tuple
    valid: tuple
    test: tuple

    def __post_init__(self):
        for name, (a, b) in zip(("train", "valid", "test"), (self.train, self.valid, self.test)):
            if a >= b:
                raise ValueError(f"{name} range must satisfy start < end")
        if not (self.train[1] <= self.valid[0] and self.valid[1] <= self.test[0]):
            raise ValueError("ranges must be disjoint and ordered train < valid < test")

    def split_of(self, day: dt.date):
        for name, (a, b) in (("train", self.train), ("valid", self.valid), ("test", self.test)):
            if a <= day < b:
                return name
        return None


@dataclass
class NormStats:
    """Training-set normalization constants; keys match feature names."""

    target_mean: float
    target_std: float
    mean_std: dict = field(default_factory=dict)  # name -> (mean, std)
    median_iqr: dict = field(default_factory=dict)  # name -> (median, iqr)

    def __post_init__(self):
        if not (self.target_std > 0.0):
            raise ConfigError("target std must be > 0")
        for k, (_, s) in self.mean_std.items():
            if not (s > 0.0):
                raise ConfigError(f"zero std for feature {k!r}")
        for k, (_, iqr) in self.median_iqr.items():
            if not (iqr > 0.0):
                raise ConfigError(f"zero IQR for feature {k!r}")

    def to_dict(self):
        return {
            "target_mean": self.target_mean,
            "target_std": self.target_std,
            "mean_std": {k: list(v) for k, v in self.mean_std.items()},
            "median_iqr": {k: list(v) for k, v in self.median_iqr.items()},
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            target_mean=d["target_mean"],
            target_std=d["target_std"],
            mean_std={k: tuple(v) for k, v in d["mean_std"].items()},
            median_iqr={k: tuple(v) for k, v in d["median_iqr"].items()},
        )

    def ref(self) -> str:
        import hashlib

        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class SampleSet:
    split: str
    tag: F.FeatureSet
    symbols: list  # id -> name
    keys: np.ndarray  # (N, 3) int64: symbol_id, yyyymmdd, end_minute
    features: np.ndarray  # (N, LOOKBACK, D) float32
    targets: np.ndarray  # (N,) float32, standardized
    aux_close: np.ndarray = None  # (N,) float64 close_t (in-memory only)
    aux_vwap: np.ndarray = None  # (N,) float64 vwap_t (in-memory only)

    def __len__(self):
        return len(self.targets)


# ---------------------------------------------------------------------------
# single-sample reference operations
# ---------------------------------------------------------------------------


def prior_volume_stats(history) -> F.PriorVolumeStats | None:
    """Stats of same-minute log dollar volume over the last 5 prior trading
    days that had a bar at this minute. `history` is chronological; None
    means unavailable (fewer than 5 days, or zero variation)."""
    vals = np.asarray(history, dtype=np.float64)
    if len(vals) < PRIOR_DAYS:
        return None
    vals = vals[-PRIOR_DAYS:]
    std = float(vals.std(ddof=1))
    p25, med, p75 = np.percentile(vals, [25.0, 50.0, 75.0])
    if std == 0.0 or not (p75 > p25):
        return None
    return F.PriorVolumeStats(float(vals.mean()), std, float(med), float(p25), float(p75))


def apply_filters(
    window_bars,
    has_target: bool,
    prior_available,
    min_price: float = MIN_PRICE,
    min_ticks: int = MIN_TICKS,
):
    """Accept/reject one candidate window; returns (accepted, reason).

    `window_bars` is the 21-bar candidate (context bar first; None marks a
    missing minute), `prior_available` has one flag per feature bar. The
    reason is the first failed rule in the documented order.
    """
    present = [b for b in window_bars if b is not None]
    if any(b.low < min_price for b in present):
        return False, "MIN_PRICE"
    if any(b.tick_count < min_ticks for b in present):
        return False, "MIN_TICKS"
    feature_present = [b for b in window_bars[1:] if b is not None]
    if feature_present:
        if max(b.high for b in feature_present) == min(b.low for b in feature_present):
            return False, "FLAT_WINDOW"
    if len(window_bars) != F.LOOKBACK + 1 or any(b is None for b in window_bars):
        return False, "MISSING_OHLC"
    minutes = [b.minute_index for b in window_bars]
    if minutes != list(range(minutes[0], minutes[0] + F.LOOKBACK + 1)):
        return False, "MISSING_OHLC"
    if not has_target:
        return False, "TARGET_MISSING"
    if not all(prior_available):
        return False, "PRIOR_VOLUME"
    return True, None


# ---------------------------------------------------------------------------
# vectorized build
# ---------------------------------------------------------------------------


@dataclass
class _DayTable:
    symbol: str
    day: dt.date
    present: np.ndarray
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    vwap: np.ndarray
    dollar: np.ndarray
    volume: np.ndarray
    ticks: np.ndarray
    high_ts: np.ndarray
    low_ts: np.ndarray


def _day_table(bars, session: SessionSpec) -> _DayTable:
    m = session.minutes_per_day
    t = _DayTable(
        symbol=bars[0].symbol,
        day=bars[0].day,
        present=np.zeros(m, dtype=bool),
        open=np.full(m, np.nan),
        high=np.full(m, np.nan),
        low=np.full(m, np.nan),
        close=np.full(m, np.nan),
        vwap=np.full(m, np.nan),
        dollar=np.full(m, np.nan),
        volume=np.full(m, np.nan),
        ticks=np.full(m, np.nan),
        high_ts=np.zeros(m, dtype=np.int64),
        low_ts=np.zeros(m, dtype=np.int64),
    )
    for b in bars:
        i = b.minute_index
        if not (0 <= i < m):
            continue
        t.present[i] = True
        t.open[i], t.high[i], t.low[i], t.close[i] = b.open, b.high, b.low, b.close
        t.vwap[i], t.dollar[i] = b.vwap, b.dollar_volume
        t.volume[i], t.ticks[i] = b.volume, b.tick_count
        t.high_ts[i], t.low_ts[i] = b.high_ts, b.low_ts
    return t


def load_bar_dir(path) -> list:
    """All bar partitions under `path`, sorted by (symbol, day)."""
    parts = []
    for f in sorted(glob.glob(os.path.join(path, "*.bars.csv"))):
        bars = read_bars(f)
        if bars:
            parts.append(bars)
    parts.sort(key=lambda bs: (bs[0].symbol, bs[0].day))
    return parts


def _prior_stat_tables(tables):
    """Per-day (M, 5) prior-volume stats + availability, per symbol.

    For each (symbol, minute), walks the symbol's day sequence and uses the
    last 5 prior days with a bar at that minute.
    """
    m = len(tables[0].present)
    k = len(tables)
    log_dollar = np.full((k, m), np.nan)
    for i, t in enumerate(tables):
        with np.errstate(invalid="ignore"):
            log_dollar[i] = np.where(t.present, np.log(t.dollar), np.nan)
    stats = np.full((k, m, 5), np.nan)
    avail = np.zeros((k, m), dtype=bool)
    for col in range(m):
        v = log_dollar[:, col]
        rows = np.where(~np.isnan(v))[0]
        if len(rows) <= PRIOR_DAYS:
            continue
        vals = v[rows]
        win = sliding_window_view(vals, PRIOR_DAYS)[:-1]  # window j -> vals[j..j+4]
        target_rows = rows[PRIOR_DAYS:]
        mean = win.mean(axis=1)
        std = win.std(axis=1, ddof=1)
        s = np.sort(win, axis=1)
        stats[target_rows, col, 0] = mean
        stats[target_rows, col, 1] = std
        stats[target_rows, col, 2] = s[:, 2]  # median of 5
        stats[target_rows, col, 3] = s[:, 1]  # p25 of 5
        stats[target_rows, col, 4] = s[:, 3]  # p75 of 5
        # the activity z-scores need both dispersions nonzero
        avail[target_rows, col] = (std > 0.0) & (s[:, 3] > s[:, 1])
    return stats, avail


def _window_samples(table: _DayTable, prior: np.ndarray, prior_ok: np.ndarray,
                    session: SessionSpec, min_price: float, min_ticks: int):
    """Accepted windows for one day: (t_idx, raw_features(n,20,30), target_raw,
    close_t, vwap_t). Returns None if nothing accepted."""
    m = session.minutes_per_day
    lb = F.LOOKBACK
    if m < lb + 2 or not table.present.any():
        return None
    present = table.present
    low_inf = np.where(present, table.low, np.inf)
    high_neg = np.where(present, table.high, -np.inf)
    ticks_inf = np.where(present, table.ticks, np.inf)

    # window start s covers minutes s..s+20, target at s+21
    n_s = m - lb - 1  # s in [0, m - lb - 2]
    w21_present = sliding_window_view(present, lb + 1).all(axis=1)[:n_s]
    w21_low = sliding_window_view(low_inf, lb + 1).min(axis=1)[:n_s]
    w21_ticks = sliding_window_view(ticks_inf, lb + 1).min(axis=1)[:n_s]
    f20_high = sliding_window_view(high_neg, lb).max(axis=1)[1 : n_s + 1]
    f20_low = sliding_window_view(low_inf, lb).min(axis=1)[1 : n_s + 1]
    f20_prior = sliding_window_view(prior_ok, lb).all(axis=1)[1 : n_s + 1]
    target_ok = present[lb + 1 :][:n_s]

    accept = (
        w21_present
        & (w21_low >= min_price)
        & (w21_ticks >= min_ticks)
        & (f20_high > f20_low)
        & target_ok
        & f20_prior
    )
    s_idx = np.where(accept)[0]
    if len(s_idx) == 0:
        return None
    t_idx = s_idx + lb

    # per-minute raw feature columns (window-independent)
    with np.errstate(invalid="ignore", divide="ignore"):
        ln_vwap = np.log(table.vwap)
        vlr = np.full(m, np.nan)
        vlr[1:] = ln_vwap[1:] - ln_vwap[:-1]
        blr = np.log(table.close / table.open)
        hclr = np.log(table.close / table.high)
        hllr = np.log(table.high / table.low)
        cvlr = np.log(table.close / table.vwap)
        log_vol = np.log(table.volume)
        log_dollar = np.log(table.dollar)
        rng = table.high - table.low
        flat = rng <= 0
        rng_safe = np.where(flat, 1.0, rng)
        cf = np.where(flat, 0.5, (table.close - table.low) / rng_safe)
        of = np.where(flat, 0.5, (table.open - table.low) / rng_safe)
        z = (log_dollar - prior[:, 0]) / prior[:, 1]
        rz = (log_dollar - prior[:, 2]) / (prior[:, 4] - prior[:, 3])

    starts = session.open_ns + np.arange(m, dtype=np.int64) * session.bar_width_ns
    width = session.bar_width_ns
    htn = (table.high_ts - starts) / width
    ltn = (table.low_ts - starts) / width
    td = htn - ltn
    up = table.close > table.open
    down = table.close < table.open
    surprise = ((up & (table.high_ts < table.low_ts)) | (down & (table.low_ts < table.high_ts))).astype(np.float64)

    base = np.stack(
        [
            vlr, blr, hclr, hllr, cvlr,
            table.volume, log_vol, table.dollar, log_dollar, table.ticks,
            cf, of,
            np.arange(m, dtype=np.float64),
            prior[:, 0], prior[:, 1], prior[:, 2], prior[:, 3], prior[:, 4],
            z, rz,
            htn, ltn, td, surprise,
        ],
        axis=1,
    )  # (m, 24)

    # gather feature-bar windows: rows s+1 .. s+20
    win_base = sliding_window_view(base, lb, axis=0)  # (m-19, 24, lb)
    raw_base = win_base[s_idx + 1].transpose(0, 2, 1)  # (n, lb, 24)

    win_o = sliding_window_view(table.open, lb)[s_idx + 1]
    win_h = sliding_window_view(table.high, lb)[s_idx + 1]
    win_l = sliding_window_view(table.low, lb)[s_idx + 1]
    win_c = sliding_window_view(table.close, lb)[s_idx + 1]
    w_low = f20_low[s_idx][:, None]
    w_span = (f20_high[s_idx] - f20_low[s_idx])[:, None]
    scale = 2.0 / w_span

    n = len(s_idx)
    raw = np.empty((n, lb, 30), dtype=np.float64)
    raw[:, :, 0] = (win_o - w_low) * scale - 1.0
    raw[:, :, 1] = (win_h - w_low) * scale - 1.0
    raw[:, :, 2] = (win_l - w_low) * scale - 1.0
    raw[:, :, 3] = (win_c - w_low) * scale - 1.0
    raw[:, :, 4:14] = raw_base[:, :, 0:10]
    raw[:, :, 14] = (win_h - win_l) * scale
    raw[:, :, 15] = (win_c - win_o) * scale
    raw[:, :, 16:18] = raw_base[:, :, 10:12]
    raw[:, :, 18] = raw_base[:, :, 12]
    raw[:, :, 19:26] = raw_base[:, :, 13:20]
    raw[:, :, 26:30] = raw_base[:, :, 20:24]

    target_raw = ln_vwap[t_idx + 1] - ln_vwap[t_idx]
    return t_idx, raw, target_raw, table.close[t_idx], table.vwap[t_idx]


def build_dataset(
    partitions,
    splits: SplitSpec,
    session: SessionSpec,
    tag: F.FeatureSet,
    min_price: float = MIN_PRICE,
    min_ticks: int = MIN_TICKS,
):
    """Enumerate, filter, and standardize samples for all three splits.

    `partitions` is either a bars directory path or an iterable of per-
    (symbol, day) Bar lists. Returns ({split: SampleSet}, NormStats).
    """
    if isinstance(partitions, (str, os.PathLike)):
        partitions = load_bar_dir(partitions)
    by_symbol: dict = {}
    for bars in partitions:
        if bars:
            by_symbol.setdefault(bars[0].symbol, []).append(bars)

    symbols = sorted(by_symbol)
    sym_id = {s: i for i, s in enumerate(symbols)}
    acc: dict = {name: {"keys": [], "raw": [], "target": [], "close": [], "vwap": []}
                 for name in ("train", "valid", "test")}

    for sym in symbols:
        day_parts = sorted(by_symbol[sym], key=lambda bs: bs[0].day)
        tables = [_day_table(bars, session) for bars in day_parts]
        stats, avail = _prior_stat_tables(tables)
        for i, table in enumerate(tables):
            split = splits.split_of(table.day)
            if split is None:
                continue  # history-only day (e.g. prior-volume warmup)
            res = _window_samples(table, stats[i], avail[i], session, min_price, min_ticks)
            if res is None:
                continue
            t_idx, raw, target_raw, close_t, vwap_t = res
            day_int = table.day.year * 10000 + table.day.month * 100 + table.day.day
            keys = np.column_stack(
                [
                    np.full(len(t_idx), sym_id[sym], dtype=np.int64),
                    np.full(len(t_idx), day_int, dtype=np.int64),
                    t_idx.astype(np.int64),
                ]
            )
            a = acc[split]
            a["keys"].append(keys)
            a["raw"].append(raw.astype(np.float32))
            a["target"].append(target_raw)
            a["close"].append(close_t)
            a["vwap"].append(vwap_t)

    if not acc["train"]["keys"]:
        raise ConfigError("empty training split: no samples in the train date range")

    merged = {}
    for name, a in acc.items():
        if a["keys"]:
            merged[name] = (
                np.concatenate(a["keys"]),
                np.concatenate(a["raw"]),
                np.concatenate(a["target"]),
                np.concatenate(a["close"]),
                np.concatenate(a["vwap"]),
            )
        else:
            merged[name] = (
                np.zeros((0, 3), dtype=np.int64),
                np.zeros((0, F.LOOKBACK, 30), dtype=np.float32),
                np.zeros(0),
                np.zeros(0),
                np.zeros(0),
            )

    train_raw = merged["train"][1]
    train_targets = merged["train"][2]
    norm = _fit_norm_stats(train_raw, train_targets)

    d = F.feature_dim(tag)
    out = {}
    for name, (keys, raw, target_raw, close_t, vwap_t) in merged.items():
        feats = raw[:, :, :d].copy()
        _normalize_inplace(feats, norm, tag)
        targets = ((target_raw - norm.target_mean) / norm.target_std).astype(np.float32)
        out[name] = SampleSet(
            split=name,
            tag=tag,
            symbols=symbols,
            keys=keys,
            features=feats,
            targets=targets,
            aux_close=close_t,
            aux_vwap=vwap_t,
        )
    return out, norm


def _fit_norm_stats(train_raw: np.ndarray, train_targets: np.ndarray) -> NormStats:
    mean_std = {}
    for name in F.MEAN_STD_COLUMNS:
        col = train_raw[:, :, F.column_index(name)].astype(np.float64)
        mean_std[name] = (float(col.mean()), float(col.std(ddof=1)))
    median_iqr = {}
    for name in F.MEDIAN_IQR_COLUMNS:
        col = train_raw[:, :, F.column_index(name)].astype(np.float64)
        p25, med, p75 = np.percentile(col, [25.0, 50.0, 75.0])
        median_iqr[name] = (float(med), float(p75 - p25))
    t = train_targets.astype(np.float64)
    return NormStats(
        target_mean=float(t.mean()),
        target_std=float(t.std(ddof=1)),
        mean_std=mean_std,
        median_iqr=median_iqr,
    )


def _normalize_inplace(feats: np.ndarray, norm: NormStats, tag: F.FeatureSet) -> None:
    d = feats.shape[2]
    for name, (m, s) in norm.mean_std.items():
        j = F.column_index(name)
        if j < d:
            feats[:, :, j] = (feats[:, :, j] - m) / s
    for name, (med, iqr) in norm.median_iqr.items():
        j = F.column_index(name)
        if j < d:
            feats[:, :, j] = (feats[:, :, j] - med) / iqr


def subset_feature_set(sample_set: SampleSet, tag: F.FeatureSet) -> SampleSet:
    """Restrict a sample set to a smaller feature set (leading columns).

    Valid because the feature sets are nested by construction and shared
    columns use identical normalization.
    """
    d = F.feature_dim(tag)
    if d > sample_set.features.shape[2]:
        raise ValueError(f"{tag.value} needs {d} columns, set has {sample_set.features.shape[2]}")
    return SampleSet(
        split=sample_set.split,
        tag=tag,
        symbols=sample_set.symbols,
        keys=sample_set.keys,
        features=np.ascontiguousarray(sample_set.features[:, :, :d]),
        targets=sample_set.targets,
        aux_close=sample_set.aux_close,
        aux_vwap=sample_set.aux_vwap,
    )


# ---------------------------------------------------------------------------
# binary dataset format
# ---------------------------------------------------------------------------


def _record_dtype(d: int):
    return np.dtype(
        [
            ("sym", "<u4"),
            ("day", "<u4"),
            ("minute", "<u2"),
            ("feat", "<f4", (F.LOOKBACK, d)),
            ("target", "<f4"),
        ]
    )


def dataset_base(path) -> str:
    base, _ = os.path.splitext(str(path))
    return base


def write_dataset(sample_set: SampleSet, norm: NormStats, path) -> None:
    """Binary samples at `path`, NormStats at `<base>.norm.json`, and the
    column manifest at `<base>.manifest.json`."""
    d = F.feature_dim(sample_set.tag)
    rec = np.zeros(len(sample_set), dtype=_record_dtype(d))
    rec["sym"] = sample_set.keys[:, 0].astype(np.uint32)
    rec["day"] = sample_set.keys[:, 1].astype(np.uint32)
    rec["minute"] = sample_set.keys[:, 2].astype(np.uint16)
    rec["feat"] = sample_set.features
    rec["target"] = sample_set.targets
    header = _HEADER.pack(
        MAGIC, FORMAT_VERSION, _TAG_CODE[sample_set.tag], d, F.LOOKBACK, len(sample_set)
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(rec.tobytes())
    base = dataset_base(path)
    with open(base + ".norm.json", "w") as f:
        json.dump(norm.to_dict(), f, sort_keys=True, indent=1)
    manifest = F.column_manifest(sample_set.tag, sample_set.symbols)
    manifest["split"] = sample_set.split
    manifest["norm_ref"] = norm.ref()
    with open(base + ".manifest.json", "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=1)


def read_dataset(path):
    """Read a dataset binary; returns (SampleSet, NormStats, manifest)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _HEADER.size:
        raise DatasetFormatError(f"{path}: shorter than the header")
    magic, version, tag_code, d, lookback, count = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    if tag_code not in _CODE_TAG:
        raise DatasetFormatError(f"{path}: unknown feature-set tag {tag_code}")
    if lookback != F.LOOKBACK:
        raise DatasetFormatError(f"{path}: unsupported lookback {lookback}")
    tag = _CODE_TAG[tag_code]
    if d != F.feature_dim(tag):
        raise DatasetFormatError(f"{path}: D={d} does not match {tag.value}")
    rec_dtype = _record_dtype(d)
    expected = _HEADER.size + count * rec_dtype.itemsize
    if len(blob) != expected:
        raise DatasetFormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    rec = np.frombuffer(blob, dtype=rec_dtype, offset=_HEADER.size)

    base = dataset_base(path)
    try:
        with open(base + ".norm.json") as f:
            norm = NormStats.from_dict(json.load(f))
        with open(base + ".manifest.json") as f:
            manifest = json.load(f)
    except FileNotFoundError as e:
        raise DatasetFormatError(f"{path}: missing sidecar {e.filename}") from e

    keys = np.column_stack(
        [rec["sym"].astype(np.int64), rec["day"].astype(np.int64), rec["minute"].astype(np.int64)]
    )
    ss = SampleSet(
        split=manifest.get("split", ""),
        tag=tag,
        symbols=list(manifest["symbols"]),
        keys=keys,
        features=rec["feat"].copy(),
        targets=rec["target"].copy(),
    )
    return ss, norm, manifest
