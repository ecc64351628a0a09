"""Feature definitions, normalization rules, set nesting, and invariances."""

import datetime as dt
import math

import numpy as np
import pytest

from barlab.bars import Bar
from barlab.dataset import NormStats
from barlab.features import (
    COLUMNS,
    FeatureSet,
    PriorVolumeStats,
    WindowSample,
    assemble,
    bar_scale_features,
    column_index,
    column_manifest,
    columns_for,
    feature_dim,
    log_return_features,
    manifest_hash,
    minmax_scale_prices,
    time_and_activity_features,
    timing_features,
    volume_features,
)
from barlab.ticks import SessionSpec

SES = SessionSpec()


def make_bar(minute=0, open_=100.0, high=101.0, low=99.0, close=100.5, vwap=100.2,
             volume=5000, ticks=60, high_s=20.0, low_s=40.0):
    start = SES.bar_start_ns(minute)
    return Bar(
        symbol="T", day=dt.date(2021, 1, 11), minute_index=minute,
        open=open_, high=high, low=low, close=close,
        open_ts=start, high_ts=start + int(high_s * 1e9),
        low_ts=start + int(low_s * 1e9), close_ts=start + 59 * 10**9,
        vwap=vwap, volume=volume, dollar_volume=volume * vwap,
        tick_count=ticks, per_code={},
    )


PRIOR = PriorVolumeStats(mean=3.0, std=1.5811388300841898, median=3.0, p25=2.0, p75=4.0)


def identity_norm():
    return NormStats(
        target_mean=0.0, target_std=1.0,
        mean_std={c.name: (0.0, 1.0) for c in COLUMNS if c.normalization == "train mean/std"},
        median_iqr={c.name: (0.0, 1.0) for c in COLUMNS if c.normalization == "train median/IQR"},
    )


# ---------------------------------------------------------------------------
# individual groups
# ---------------------------------------------------------------------------


def test_minmax_endpoints_and_midpoint():
    bars = [make_bar(low=99.0, high=101.0, open_=100.0, close=100.0, vwap=100.0)] * 20
    scaled = minmax_scale_prices(bars)
    assert scaled[0, 1] == 1.0  # high 101 -> +1
    assert scaled[0, 2] == -1.0  # low 99 -> -1
    assert scaled[0, 0] == 0.0  # open 100 -> 0
    bars[0] = make_bar(low=99.0, high=101.0, open_=100.5, close=100.0)
    assert minmax_scale_prices(bars)[0, 0] == pytest.approx(0.5)


def test_minmax_shift_invariance():
    bars = [make_bar(low=99.0 + i * 0.01, high=101.0 - i * 0.005) for i in range(20)]
    shifted = [
        make_bar(low=b.low + 50.0, high=b.high + 50.0, open_=b.open + 50.0, close=b.close + 50.0)
        for b in bars
    ]
    np.testing.assert_allclose(
        minmax_scale_prices(bars), minmax_scale_prices(shifted), atol=1e-9
    )


def test_log_returns_flat_bar_zero():
    flat = make_bar(open_=100.0, high=100.0, low=100.0, close=100.0, vwap=100.0)
    prev = make_bar(vwap=100.0)
    vals = log_return_features(flat, prev)
    for v in vals.values():
        assert v == 0.0


def test_log_return_close_over_high():
    b = make_bar(close=101.0, high=102.0, low=99.0)
    vals = log_return_features(b, make_bar())
    assert vals["high_close_log_return"] == pytest.approx(math.log(101.0 / 102.0), rel=1e-12)
    assert vals["high_close_log_return"] == pytest.approx(-0.009852, abs=1e-6)
    assert vals["high_low_log_return"] >= 0.0


def test_volume_normalization_units():
    norm = identity_norm()
    norm.median_iqr["volume"] = (5000.0, 123.0)
    b = make_bar(volume=5000)
    raw = volume_features(b)
    assert (raw["volume"] - 5000.0) / 123.0 == 0.0
    b2 = make_bar(volume=5123)
    assert (volume_features(b2)["volume"] - 5000.0) / 123.0 == pytest.approx(1.0)


def test_dollar_volume_of_worked_bar():
    # the 5-tick bars-module example: sum(price*size) = 600
    b = make_bar(volume=6, vwap=100.0)
    b = Bar(**{**b.__dict__, "dollar_volume": 600.0})
    assert volume_features(b)["dollar_volume"] == 600.0


def test_bar_scale_features():
    b = make_bar(high=100.5, low=100.0, close=100.5, open_=100.0)
    out = bar_scale_features(b, window_low=99.0, window_span=2.0)
    assert out["scaled_bar_height"] == pytest.approx(0.5)
    assert out["close_fraction"] == 1.0
    assert bar_scale_features(make_bar(close=99.0, low=99.0, high=100.0), 99.0, 2.0)["close_fraction"] == 0.0


def test_bar_scale_flat_bar_half():
    b = make_bar(high=100.0, low=100.0, open_=100.0, close=100.0)
    out = bar_scale_features(b, 99.0, 2.0)
    assert out["close_fraction"] == 0.5
    assert out["open_fraction"] == 0.5


def test_time_and_activity_z_scores():
    b = make_bar(volume=5000, vwap=100.0)
    log_dollar = math.log(b.dollar_volume)
    prior = PriorVolumeStats(mean=log_dollar, std=0.5, median=log_dollar - 0.1, p25=log_dollar - 0.6, p75=log_dollar + 0.4)
    out = time_and_activity_features(b, prior)
    assert out["prior_volume_z"] == 0.0
    prior2 = PriorVolumeStats(mean=0.0, std=1.0, median=log_dollar - 1.0, p25=log_dollar - 1.5, p75=log_dollar - 0.5)
    out2 = time_and_activity_features(b, prior2)
    assert out2["prior_volume_robust_z"] == pytest.approx(1.0)


def test_activity_worked_example():
    # prior values {1..5}, current log dollar volume 4
    b = make_bar()
    b = Bar(**{**b.__dict__, "dollar_volume": math.exp(4.0)})
    out = time_and_activity_features(b, PRIOR)
    assert out["prior_volume_z"] == pytest.approx(0.6325, abs=1e-4)
    assert out["prior_volume_robust_z"] == pytest.approx(0.5, rel=1e-12)


def test_timing_features_expected_ordering():
    up = make_bar(open_=100.0, close=100.5, low_s=5.0, high_s=50.0)
    out = timing_features(up, SES)
    assert out["timing_surprise"] == 0.0
    assert out["time_diff"] == pytest.approx(45.0 / 60.0)
    assert out["high_time_norm"] == pytest.approx(50.0 / 60.0)


def test_timing_surprise_up_bar_high_first():
    up = make_bar(open_=100.0, close=100.5, high_s=5.0, low_s=50.0)
    assert timing_features(up, SES)["timing_surprise"] == 1.0
    down = make_bar(open_=100.5, close=100.0, low_s=5.0, high_s=50.0)
    assert timing_features(down, SES)["timing_surprise"] == 1.0


def test_timing_one_tick_bar_ties():
    b = make_bar(high_s=7.0, low_s=7.0, open_=100.0, close=100.0)
    out = timing_features(b, SES)
    assert out["time_diff"] == 0.0
    assert out["timing_surprise"] == 0.0


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


def make_sample():
    bars = []
    rng = np.random.default_rng(9)
    for i in range(21):
        low = 99.0 + rng.uniform(0, 0.3)
        high = 100.5 + rng.uniform(0, 0.3)
        open_ = rng.uniform(low, high)
        close = rng.uniform(low, high)
        bars.append(
            make_bar(minute=i, open_=open_, high=high, low=low, close=close,
                     vwap=(low + high) / 2, volume=int(rng.integers(1000, 9000)),
                     high_s=rng.uniform(0, 59), low_s=rng.uniform(0, 59))
        )
    prior = [PRIOR] * 20
    return WindowSample("T", dt.date(2021, 1, 11), 20, bars, prior, 0.001)


def test_feature_dims():
    assert feature_dim(FeatureSet.BASIC) == 5
    assert feature_dim(FeatureSet.NO_TIMING) == 26
    assert feature_dim(FeatureSet.FULL) == 30
    assert len(COLUMNS) == 30


def test_assemble_no_nan_and_nesting():
    sample = make_sample()
    norm = identity_norm()
    full = assemble(sample, FeatureSet.FULL, norm, SES).values
    basic = assemble(sample, FeatureSet.BASIC, norm, SES).values
    nt = assemble(sample, FeatureSet.NO_TIMING, norm, SES).values
    assert full.shape == (20, 30)
    assert np.all(np.isfinite(full))
    np.testing.assert_array_equal(basic, full[:, :5])
    np.testing.assert_array_equal(nt, full[:, :26])


def test_assemble_bounds():
    sample = make_sample()
    full = assemble(sample, FeatureSet.FULL, identity_norm(), SES).values
    for name, lo, hi in [
        ("scaled_open", -1, 1), ("scaled_high", -1, 1), ("scaled_low", -1, 1),
        ("scaled_close", -1, 1), ("close_fraction", 0, 1), ("open_fraction", 0, 1),
        ("high_time_norm", 0, 1), ("low_time_norm", 0, 1), ("time_diff", -1, 1),
    ]:
        col = full[:, column_index(name)]
        assert col.min() >= lo and col.max() <= hi, name
    surprise = full[:, column_index("timing_surprise")]
    assert set(np.unique(surprise)) <= {0.0, 1.0}
    td = full[:, column_index("time_diff")]
    htn = full[:, column_index("high_time_norm")]
    ltn = full[:, column_index("low_time_norm")]
    np.testing.assert_array_equal(td, htn - ltn)


def test_price_level_invariance():
    sample = make_sample()
    k = 3.7
    scaled_bars = [
        Bar(**{**b.__dict__, "open": b.open * k, "high": b.high * k, "low": b.low * k,
               "close": b.close * k, "vwap": b.vwap * k})
        for b in sample.raw_bars
    ]
    sample2 = WindowSample("T", sample.day, 20, scaled_bars, sample.prior_stats, sample.target_raw)
    norm = identity_norm()
    a = assemble(sample, FeatureSet.FULL, norm, SES).values
    b = assemble(sample2, FeatureSet.FULL, norm, SES).values
    # dollar-volume columns shift by ln k; everything else is unchanged
    skip = {column_index(n) for n in ("volume", "log_volume", "dollar_volume",
                                      "log_dollar_volume", "tick_count",
                                      "prior_volume_z", "prior_volume_robust_z")}
    cols = [j for j in range(30) if j not in skip]
    np.testing.assert_allclose(a[:, cols], b[:, cols], atol=1e-9)


def test_assemble_missing_stats_key_errors():
    sample = make_sample()
    norm = identity_norm()
    del norm.mean_std["vwap_log_return"]
    with pytest.raises(KeyError):
        assemble(sample, FeatureSet.FULL, norm, SES)


def test_manifest_and_hash_stability():
    m1 = column_manifest(FeatureSet.FULL, ["A", "B"])
    m2 = column_manifest(FeatureSet.FULL, ["C"])  # symbols don't affect the hash
    assert manifest_hash(m1) == manifest_hash(m2)
    m3 = column_manifest(FeatureSet.BASIC, ["A"])
    assert manifest_hash(m1) != manifest_hash(m3)
    assert [c["name"] for c in m3["columns"]] == [c.name for c in columns_for(FeatureSet.BASIC)]
