#!/usr/bin/env python3
"""The central experiment, desk-sized: does timing information help?

Trains the t-head MLP on the three nested feature sets at two generator
settings - timing signal on (coef 0.5) and off (0.0) - and compares
validation NLL. With the signal on, FULL must beat NO_TIMING; with it off,
the timing features are pure noise and the gap must vanish.

This is a scaled-down version of the acceptance experiment (2 seeds, fewer
symbols/days/epochs); expect ~6-8 minutes. The full-size run lives in
tests/test_acceptance.py (criteria 5 and 6).
"""

import time

import numpy as np

from barlab import (
    BarBuildConfig,
    MlpSpec,
    SessionSpec,
    SynthConfig,
    TrainConfig,
    build_bars,
    build_dataset,
    train,
)
from barlab.config import default_splits
from barlab.dataset import subset_feature_set
from barlab.features import FeatureSet, LOOKBACK, feature_dim
from barlab.ticks import generate_day_ticks

session = SessionSpec()
bb = BarBuildConfig(excluded_codes=frozenset({"X"}), session=session)
tcfg = TrainConfig(learning_rate=1e-3, weight_decay=1e-4, dropout_rate=0.1,
                   batch_size=1024, epochs=6, batches_per_epoch=120, seeds=(1, 2))
TAGS = (FeatureSet.BASIC, FeatureSet.NO_TIMING, FeatureSet.FULL)


def experiment(timing_coef):
    cfg = SynthConfig(symbols=10, days=20, seed=2026, timing_coef=timing_coef)
    parts = [
        build_bars(generate_day_ticks(cfg, session, s, d), bb)
        for s in range(cfg.symbols)
        for d in range(cfg.days)
    ]
    sets, _ = build_dataset(parts, default_splits(cfg), session, FeatureSet.FULL)
    out = {}
    for tag in TAGS:
        tr = subset_feature_set(sets["train"], tag)
        va = subset_feature_set(sets["valid"], tag)
        spec = MlpSpec(input_dim=LOOKBACK * feature_dim(tag), dropout_rate=tcfg.dropout_rate)
        out[tag] = [train(tr, va, spec, tcfg, seed).best_valid_nll for seed in tcfg.seeds]
    return out


for coef in (0.5, 0.0):
    t0 = time.time()
    res = experiment(coef)
    print(f"\ntiming coefficient {coef} ({time.time() - t0:.0f}s):")
    for tag in TAGS:
        nlls = res[tag]
        print(f"  {tag.value:10s} valid NLL {np.mean(nlls):.4f}  (seeds: "
              + ", ".join(f"{v:.4f}" for v in nlls) + ")")
    gap = np.array(res[FeatureSet.NO_TIMING]) - np.array(res[FeatureSet.FULL])
    se = gap.std(ddof=1) / np.sqrt(len(gap))
    verdict = ("timing features carry real signal"
               if gap.mean() > 2 * se else
               "indistinguishable from zero at this scale")
    print(f"  no_timing - full = {gap.mean():+.4f} (seed SE {se:.4f}) <- {verdict}")
print("\n(the full-size, 3-seed version of both experiments runs in "
      "tests/test_acceptance.py, criteria 5 and 6)")
