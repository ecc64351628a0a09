"""Acceptance suite: every criterion at its stated tolerance.

One pass/fail line per criterion is printed (run pytest with -s to stream
them). The desk-scale fixtures (criteria 5-9) generate 20 symbols x 30 days
and train 3 seeds per feature set; expect roughly half an hour of wall
clock for the whole module on a laptop-class CPU.
"""

import datetime as dt
import hashlib
import json
import math
import time

import numpy as np
import pytest
from scipy import integrate, stats as sp_stats

import barlab.model as M
from barlab.autodiff import Tensor
from barlab.bars import BarBuildConfig, build_bars
from barlab.cli import EXIT_OK, main as cli_main
from barlab.config import default_splits
from barlab.dataset import apply_filters, build_dataset, subset_feature_set
from barlab.evaluation import (
    EvalSamples,
    baselines,
    calibration,
    directional,
    gaussian_ablation_nll,
    nll as eval_nll,
    target_stats,
)
from barlab.features import FeatureSet, LOOKBACK, feature_dim
from barlab.model import MlpSpec, TrainConfig, init_params, nll_graph, predict, train
from barlab.tdist import gauss_cdf, gauss_logpdf, t_cdf, t_logpdf, t_quantile
from barlab.ticks import SessionSpec, SynthConfig, generate_day_ticks

from test_bars import CFG as BAR_CFG, naive_bars, random_tick_list
from test_dataset import make_bar, window_of


def report(criterion, ok, detail):
    print(f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"{criterion}: {detail}"


# ---------------------------------------------------------------------------
# criterion 1: bar-builder oracle equivalence
# ---------------------------------------------------------------------------


def test_criterion_1_bar_oracle_equivalence():
    rng = np.random.default_rng(1001)
    t0 = time.time()
    for _ in range(1000):
        ticks = random_tick_list(rng, int(rng.integers(1, 501)))
        got = {b.minute_index: b for b in build_bars(ticks, BAR_CFG)}
        want = naive_bars(ticks)
        assert got.keys() == want.keys()
        for m, w in want.items():
            g = got[m]
            assert (g.open, g.high, g.low, g.close) == (
                w["open"], w["high"], w["low"], w["close"])
            assert (g.open_ts, g.high_ts, g.low_ts, g.close_ts) == (
                w["open_ts"], w["high_ts"], w["low_ts"], w["close_ts"])
            assert g.volume == w["volume"] and g.tick_count == w["tick_count"]
            assert abs(g.vwap - w["vwap"]) <= 1e-12 * w["vwap"]
            assert g.per_code == w["per_code"]
    elapsed = time.time() - t0
    report("criterion 1 (bar oracle, 1000 random lists)", elapsed < 5.0,
           f"exact match; runtime {elapsed:.2f}s < 5s")


# ---------------------------------------------------------------------------
# criterion 2: distribution numerics
# ---------------------------------------------------------------------------


def test_criterion_2_distribution_numerics():
    worst_limit = 0.0
    # normal limit: logpdf and cdf against the Gaussian within 1e-4 over the
    # bulk (the t-vs-normal log-density gap itself grows as z^4/(4 nu), so
    # +-6 sigma only supports the looser 1e-3 band tested elsewhere)
    y = np.linspace(-4, 4, 161)
    worst_limit = max(worst_limit, np.abs(
        t_logpdf((0.0, 1.0, 1e6), y) - gauss_logpdf((0.0, 1.0), y)).max())
    worst_limit = max(worst_limit, np.abs(
        t_cdf((0.0, 1.0, 1e6), y) - gauss_cdf((0.0, 1.0), y)).max())
    # near-Cauchy regime (lower bound of the nu domain) against scipy
    worst_limit = max(worst_limit, np.abs(
        t_logpdf((0.0, 1.0, 2.0001), y) - sp_stats.t.logpdf(y, 2.0001)).max())
    worst_limit = max(worst_limit, np.abs(
        t_cdf((0.0, 1.0, 2.0001), y) - sp_stats.t.cdf(y, 2.0001)).max())
    assert worst_limit < 1e-4

    worst_norm = 0.0
    for nu in (2.1, 3.0, 5.0, 30.0, 1e6):
        total, _ = integrate.quad(
            lambda v: math.exp(t_logpdf((0.0, 1.0, nu), v)), -np.inf, np.inf)
        worst_norm = max(worst_norm, abs(total - 1.0))
    assert worst_norm < 1e-6

    q = np.arange(1, 100) / 100.0
    worst_rt = 0.0
    for nu in (2.1, 3.0, 5.0, 30.0, 1e6):
        x = t_quantile((0.0, 1.0, nu), q)
        worst_rt = max(worst_rt, np.abs(t_cdf((0.0, 1.0, nu), x) - q).max())
    assert worst_rt < 1e-8
    report("criterion 2 (distribution numerics)", True,
           f"limits {worst_limit:.2e} < 1e-4; normalization {worst_norm:.2e} < 1e-6; "
           f"round-trip {worst_rt:.2e} < 1e-8")


# ---------------------------------------------------------------------------
# criterion 3: gradient suite
# ---------------------------------------------------------------------------


def _relu_preacts(params, spec, x, masks, dropout):
    """Pre-relu activations of every block (the finite-difference oracle is
    only valid when none sits on a kink)."""
    h = x @ params["in_w"] + params["in_b"]
    out = []
    for i in range(spec.blocks):
        pre = h @ params[f"b{i}_w1"] + params[f"b{i}_b1"]
        out.append(pre)
        a = np.maximum(pre, 0.0)
        if masks is not None:
            a = a * masks[i] / (1.0 - dropout)
        v = a @ params[f"b{i}_w2"] + params[f"b{i}_b2"]
        z = h + v
        mu = z.mean(axis=-1, keepdims=True)
        var = ((z - mu) ** 2).mean(axis=-1, keepdims=True)
        h = (z - mu) / np.sqrt(var + 1e-5) * params[f"b{i}_ln_g"] + params[f"b{i}_ln_b"]
    return np.concatenate([p.reshape(-1) for p in out])


def test_criterion_3_gradient_suite():
    rng = np.random.default_rng(1003)
    t0 = time.time()
    worst = 0.0
    kink_margin = 3e-4  # 30x the bias FD step: no relu flips inside the stencil
    for cfg_i in range(20):
        d = int(rng.integers(2, 10))
        hidden = int(rng.integers(4, 13))
        blocks = int(rng.integers(1, 3))
        dropout = float(rng.choice([0.0, 0.25]))
        spec = MlpSpec(input_dim=d, hidden=hidden, blocks=blocks, dropout_rate=dropout)
        params = init_params(spec, seed=cfg_i, dtype=np.float64)
        for k in params:
            params[k] = params[k] + 0.05 * rng.normal(size=params[k].shape)
        for _ in range(100):
            x = rng.normal(size=(16, d))
            yv = rng.normal(size=16)
            masks = None
            if dropout > 0:
                masks = [rng.random((16, hidden)) >= dropout for _ in range(blocks)]
            if np.abs(_relu_preacts(params, spec, x, masks, dropout)).min() >= kink_margin:
                break
        else:
            pytest.fail("could not find a kink-free configuration")

        def loss_value():
            pt = {k: Tensor(w) for k, w in params.items()}
            return float(nll_graph(pt, spec, x, yv, masks, dropout).data)

        pt = {k: Tensor(w, requires_grad=True) for k, w in params.items()}
        loss = nll_graph(pt, spec, x, yv, masks, dropout)
        loss.backward()
        for k, w in params.items():
            flat = w.reshape(-1)
            gref = pt[k].grad.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                eps = 1e-5 * max(1.0, abs(orig))
                flat[i] = orig + eps
                fp = loss_value()
                flat[i] = orig - eps
                fm = loss_value()
                flat[i] = orig
                fd = (fp - fm) / (2 * eps)
                rel = abs(gref[i] - fd) / max(abs(gref[i]), abs(fd), 1e-6)
                worst = max(worst, rel)
    elapsed = time.time() - t0
    report("criterion 3 (gradient suite, 20 configs)",
           worst < 1e-4 and elapsed < 60.0,
           f"worst rel err {worst:.2e} < 1e-4; runtime {elapsed:.1f}s < 60s")


# ---------------------------------------------------------------------------
# criterion 4: calibration self-consistency
# ---------------------------------------------------------------------------


def test_criterion_4_calibration_self_consistency():
    rng = np.random.default_rng(1004)
    n = 100_000
    spec = MlpSpec(input_dim=60, hidden=64, blocks=2)
    params = init_params(spec, seed=11)
    feats = rng.normal(size=(n, LOOKBACK, 3)).astype(np.float32)
    mu, sigma, nu = predict(params, spec, feats)
    y = mu + sigma * rng.standard_t(nu)
    keys = np.column_stack([np.zeros(n, np.int64), np.zeros(n, np.int64),
                            np.arange(n, dtype=np.int64)])
    samples = EvalSamples(keys=keys, y=y, mu=mu, sigma=sigma, nu=nu)
    curve = calibration(samples)
    report("criterion 4 (calibration self-consistency)",
           curve.cal_error * 100 < 0.1,
           f"calError x100 = {curve.cal_error * 100:.4f} < 0.1 (N=1e5)")


# ---------------------------------------------------------------------------
# desk-scale experiments (criteria 5-9)
# ---------------------------------------------------------------------------

DESK_TRAIN = TrainConfig(
    learning_rate=1e-3, weight_decay=1e-4, dropout_rate=0.1,
    batch_size=1024, epochs=10, batches_per_epoch=200, seeds=(1, 2, 3),
)


def _desk_data(timing_coef):
    cfg = SynthConfig(symbols=20, days=30, seed=12345, timing_coef=timing_coef)
    ses = SessionSpec()
    bb = BarBuildConfig(excluded_codes=frozenset({"X"}), session=ses)
    parts = [
        build_bars(generate_day_ticks(cfg, ses, s, d), bb)
        for s in range(cfg.symbols)
        for d in range(cfg.days)
    ]
    sets, norm = build_dataset(parts, default_splits(cfg), ses, FeatureSet.FULL)
    return sets, norm


def _train_tags(sets, tags, seeds=DESK_TRAIN.seeds):
    out = {}
    for tag in tags:
        tr = subset_feature_set(sets["train"], tag)
        va = subset_feature_set(sets["valid"], tag)
        spec = MlpSpec(input_dim=LOOKBACK * feature_dim(tag), dropout_rate=DESK_TRAIN.dropout_rate)
        runs = []
        for seed in seeds:
            res = train(tr, va, spec, DESK_TRAIN, seed)
            runs.append(res)
        out[tag] = (spec, runs)
    return out


def _paired_se(diffs):
    d = np.asarray(diffs, dtype=np.float64)
    return d.std(ddof=1) / math.sqrt(len(d))


@pytest.fixture(scope="module")
def desk_td05():
    sets, norm = _desk_data(0.5)
    models = _train_tags(sets, (FeatureSet.BASIC, FeatureSet.NO_TIMING, FeatureSet.FULL))
    return sets, norm, models


@pytest.fixture(scope="module")
def desk_td0():
    sets, norm = _desk_data(0.0)
    models = _train_tags(sets, (FeatureSet.NO_TIMING, FeatureSet.FULL))
    return sets, norm, models


def _eval_samples(sets, split, tag, spec, params):
    ss = subset_feature_set(sets[split], tag)
    mu, sigma, nu = predict(params, spec, ss.features)
    return EvalSamples(
        keys=ss.keys, y=ss.targets.astype(np.float64),
        mu=mu, sigma=sigma, nu=nu, close=ss.aux_close, vwap=ss.aux_vwap,
    )


def _best_run(runs):
    return min(runs, key=lambda r: r.best_valid_nll)


def test_criterion_5_feature_set_ordering(desk_td05):
    _, _, models = desk_td05
    nlls = {tag: [r.best_valid_nll for r in runs] for tag, (_, runs) in models.items()}
    m_basic = float(np.mean(nlls[FeatureSet.BASIC]))
    m_nt = float(np.mean(nlls[FeatureSet.NO_TIMING]))
    m_full = float(np.mean(nlls[FeatureSet.FULL]))
    diffs = np.array(nlls[FeatureSet.NO_TIMING]) - np.array(nlls[FeatureSet.FULL])
    se = _paired_se(diffs)
    ok = (m_basic > m_nt > m_full) and (m_nt - m_full) > 2.0 * se
    report("criterion 5 (feature-set NLL ordering, a_td=0.5)", ok,
           f"basic {m_basic:.4f} > no_timing {m_nt:.4f} > full {m_full:.4f}; "
           f"nt-full gap {m_nt - m_full:.4f} vs 2xSE {2 * se:.4f}")


def test_criterion_6_falsification(desk_td0):
    _, _, models = desk_td0
    nlls = {tag: [r.best_valid_nll for r in runs] for tag, (_, runs) in models.items()}
    diffs = np.array(nlls[FeatureSet.NO_TIMING]) - np.array(nlls[FeatureSet.FULL])
    gap = float(np.mean(diffs))
    se = _paired_se(diffs)
    ok = abs(gap) <= 2.0 * se
    report("criterion 6 (falsification, a_td=0)", ok,
           f"|no_timing - full| = {abs(gap):.4f} <= 2xSE {2 * se:.4f}")


def test_criterion_7_directional_decile_shape(desk_td05):
    sets, _, models = desk_td05
    spec, runs = models[FeatureSet.FULL]
    best = _best_run(runs)
    samples = _eval_samples(sets, "valid", FeatureSet.FULL, spec, best.checkpoint.params)
    d = directional(samples)
    accs = d.by_decile * 100.0
    inversions = [max(0.0, accs[i] - accs[i + 1]) for i in range(9)]
    n_inv = sum(1 for v in inversions if v > 0)
    ok = (
        n_inv <= 1
        and max(inversions, default=0.0) <= 0.5
        and accs[0] > 50.0
        and d.overall * 100 > 55.0
    )
    report("criterion 7 (directional decile shape)", ok,
           f"deciles {np.round(accs, 2).tolist()}; overall {d.overall * 100:.2f}% > 55%; "
           f"inversions {n_inv} (max {max(inversions, default=0):.2f}pp)")


def test_criterion_8_baseline_behavior(desk_td05):
    sets, norm, models = desk_td05
    spec, runs = models[FeatureSet.FULL]
    best = _best_run(runs)
    samples = _eval_samples(sets, "valid", FeatureSet.FULL, spec, best.checkpoint.params)
    block = baselines(samples, norm.target_mean, norm.target_std)
    model_cal = calibration(samples).cal_error
    all_model_nlls = [r.best_valid_nll for _, rs in models.values() for r in rs]
    ok = (
        abs(block["std_normal_r2"]) < 1e-2
        and block["std_normal_nll"] > max(all_model_nlls)
        and block["std_normal_cal_error"] >= 10.0 * model_cal
        and block["vwap_to_close_mse"] > block["zero_raw_mse_on_subset"]
    )
    report("criterion 8 (baseline behavior)", ok,
           f"N(0,1): R2 {block['std_normal_r2']:.2e}, NLL {block['std_normal_nll']:.4f} > "
           f"best model {min(all_model_nlls):.4f}; cal {block['std_normal_cal_error'] * 100:.2f} "
           f">= 10x model {model_cal * 100:.4f} (x100); vwap-close MSE "
           f"{block['vwap_to_close_mse']:.4f} > zero MSE {block['zero_raw_mse_on_subset']:.4f}")


def test_criterion_9_gaussian_ablation_sign(desk_td05):
    sets, _, models = desk_td05
    deltas = {}
    for tag, (spec, runs) in models.items():
        best = _best_run(runs)
        samples = _eval_samples(sets, "valid", tag, spec, best.checkpoint.params)
        _, delta = gaussian_ablation_nll(samples)
        deltas[tag.value] = delta
    ok = all(v > 0 for v in deltas.values())
    report("criterion 9 (Gaussian-ablation sign)", ok,
           "deltas " + ", ".join(f"{k}: {v:+.4f}" for k, v in deltas.items()))


# ---------------------------------------------------------------------------
# criterion 10: robust statistics
# ---------------------------------------------------------------------------


def test_criterion_10_robust_statistics():
    rng = np.random.default_rng(1010)
    y = rng.normal(size=1_000_000)
    ts = target_stats(y)
    ok = abs(ts["quantile_excess_kurtosis"]) <= 0.05 and abs(ts["quartile_skewness"]) <= 0.01
    report("criterion 10 (robust statistics on N(0,1))", ok,
           f"quantile excess kurtosis {ts['quantile_excess_kurtosis']:+.4f} in [-.05,.05]; "
           f"quartile skewness {ts['quartile_skewness']:+.5f} in [-.01,.01]")


# ---------------------------------------------------------------------------
# criterion 11: filter unit suite
# ---------------------------------------------------------------------------


def test_criterion_11_filter_suite():
    results = []

    def case(name, window, has_target, prior_ok, want_reason):
        ok, reason = apply_filters(window, has_target, prior_ok)
        results.append((name, reason == want_reason))
        assert reason == want_reason, name

    case("accept", window_of(), True, [True] * 20, None)
    w = window_of(); w[4] = make_bar(4, low=3.99)
    case("min price $4", w, True, [True] * 20, "MIN_PRICE")
    w = window_of(); w[4] = make_bar(4, ticks=29)
    case("min 30 ticks", w, True, [True] * 20, "MIN_TICKS")
    flat = [make_bar(i, low=50.0, high=50.0, open_=50.0, close=50.0, vwap=50.0)
            for i in range(21)]
    case("flat window", flat, True, [True] * 20, "FLAT_WINDOW")
    w = window_of(); w[9] = None
    case("missing OHLC", w, True, [True] * 20, "MISSING_OHLC")
    case("target missing", window_of(), False, [True] * 20, "TARGET_MISSING")
    case("prior volume", window_of(), True, [False] * 20, "PRIOR_VOLUME")
    report("criterion 11 (filter unit suite)", all(ok for _, ok in results),
           "; ".join(f"{n}: {'ok' if ok else 'BAD'}" for n, ok in results))


# ---------------------------------------------------------------------------
# criterion 12: end-to-end determinism
# ---------------------------------------------------------------------------


def _pipeline_config(root):
    cfg = {
        "synth": {"symbols": 2, "days": 9, "seed": 777},
        "splits": {
            "train": ["2021-01-04", "2021-01-13"],
            "valid": ["2021-01-13", "2021-01-14"],
            "test": ["2021-01-14", "2021-01-15"],
        },
        "train": {
            "learning_rate": 1e-3, "weight_decay": 1e-4, "dropout_rate": 0.1,
            "batch_size": 256, "epochs": 2, "batches_per_epoch": 10, "seeds": [1],
        },
        "paths": {
            "ticks": str(root / "ticks"), "bars": str(root / "bars"),
            "datasets": str(root / "datasets"), "runs": str(root / "runs"),
            "reports": str(root / "reports"),
        },
    }
    path = root / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def _run_pipeline(root, threads):
    root.mkdir(parents=True, exist_ok=True)
    cfg = _pipeline_config(root)
    t = str(threads)
    for cmd in (
        ["gen-ticks", "--config", str(cfg), "--threads", t],
        ["build-bars", "--config", str(cfg), "--threads", t],
        ["build-dataset", "--config", str(cfg), "--feature-set", "full"],
        ["train", "--config", str(cfg), "--feature-set", "full", "--seed", "1"],
        ["evaluate", "--config", str(cfg), "--feature-set", "full", "--seed", "1",
         "--split", "valid"],
    ):
        assert cli_main(cmd) == EXIT_OK, cmd
    digest = {}
    for rel in ("datasets/train_full.dataset", "datasets/valid_full.dataset",
                "datasets/test_full.dataset", "runs/full_seed1.weights.bin",
                "runs/full_seed1.manifest.json",
                "reports/full_seed1_valid/report.json"):
        digest[rel] = hashlib.sha256((root / rel).read_bytes()).hexdigest()
    with open(root / "reports/full_seed1_valid/report.json") as f:
        scalars = json.load(f)
    return digest, scalars


def _scalar_close(a, b, tol=1e-9):
    if isinstance(a, dict):
        return set(a) == set(b) and all(_scalar_close(a[k], b[k], tol) for k in a)
    if isinstance(a, list):
        return len(a) == len(b) and all(_scalar_close(x, y, tol) for x, y in zip(a, b))
    if isinstance(a, float):
        return abs(a - b) <= tol * max(1.0, abs(a), abs(b))
    return a == b


def test_criterion_12_end_to_end_determinism(tmp_path):
    d1, s1 = _run_pipeline(tmp_path / "run1", threads=1)
    d2, s2 = _run_pipeline(tmp_path / "run2", threads=1)
    byte_identical = d1 == d2
    d8, s8 = _run_pipeline(tmp_path / "run8", threads=8)
    scalars_close = _scalar_close(s1, s8)
    report("criterion 12 (end-to-end determinism)",
           byte_identical and scalars_close,
           f"threads=1 reruns byte-identical: {byte_identical}; "
           f"threads=8 report scalars within 1e-9: {scalars_close}")
