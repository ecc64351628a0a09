"""Command-line pipeline driver.

    barlab gen-ticks     --config cfg.json [--threads N]
    barlab build-bars    --config cfg.json [--threads N]
    barlab build-dataset --config cfg.json [--feature-set full]
    barlab train         --config cfg.json [--feature-set full] [--seed 1]
    barlab grid          --config cfg.json [--feature-set full]
    barlab evaluate      --config cfg.json [--feature-set full] [--seed 1] [--split valid]
    barlab stats         --config cfg.json [--feature-set full]
    barlab report        --config cfg.json [--feature-set full] [--seed 1] [--split valid]

Every command is idempotent for identical inputs (outputs are overwritten
deterministically) and leaves a copy of the effective config plus its
content hash in each output directory. Exit codes: 0 success, 2 usage,
3 config error, 4 checkpoint/dataset manifest mismatch, 5 data format or
validation error, 1 anything else.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import features as F
from .bars import BarFormatError, ContractViolation, bar_file_name, build_bars, read_bars, write_bars
from .config import ConfigKeyError, RunConfig, load_config, write_fingerprint
from .dataset import (
    DatasetFormatError,
    ConfigError,
    build_dataset,
    read_dataset,
    write_dataset,
)
from .evaluation import EvalSamples, build_report, emit_report, target_stats
from .model import (
    ManifestMismatch,
    MlpSpec,
    TrainConfig,
    check_manifest,
    grid_search,
    load_checkpoint,
    predict,
    save_checkpoint,
    spec_from_manifest,
    train,
    write_training_log,
)
from .ticks import (
    TickParseError,
    TickValidationError,
    generate_ticks,
    read_ticks,
    symbol_name,
    tick_file_name,
    trading_days,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MANIFEST = 4
EXIT_DATA = 5


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("BARLAB_THREADS")
    return max(1, int(env)) if env else 1


def _dataset_path(cfg: RunConfig, split: str, tag: F.FeatureSet) -> str:
    return os.path.join(cfg.paths.datasets, f"{split}_{tag.value}.dataset")


def _run_base(cfg: RunConfig, tag: F.FeatureSet, seed: int) -> str:
    return os.path.join(cfg.paths.runs, f"{tag.value}_seed{seed}")


def cmd_gen_ticks(cfg: RunConfig, args) -> None:
    out = args.out or cfg.paths.ticks
    paths = generate_ticks(cfg.synth, cfg.session, out, threads=_threads(args))
    write_fingerprint(cfg, out)
    print(f"gen-ticks: wrote {len(paths)} tick files to {out}")


def cmd_build_bars(cfg: RunConfig, args) -> None:
    out = args.out or cfg.paths.bars
    os.makedirs(out, exist_ok=True)
    days = trading_days(cfg.synth.start_day, cfg.synth.days)
    jobs = []
    for s in range(cfg.synth.symbols):
        sym = symbol_name(s)
        for day in days:
            path = os.path.join(cfg.paths.ticks, tick_file_name(sym, day))
            if os.path.exists(path):
                jobs.append(path)

    def run(path):
        n = 0
        for part in read_ticks(path, cfg.session):
            bars = build_bars(part, cfg.bar_build)
            if bars:
                write_bars(bars, os.path.join(out, bar_file_name(part.symbol, part.day)))
                n += 1
        return n

    threads = _threads(args)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            done = sum(ex.map(run, jobs))
    else:
        done = sum(run(j) for j in jobs)
    write_fingerprint(cfg, out)
    print(f"build-bars: wrote {done} bar files to {out}")


def cmd_build_dataset(cfg: RunConfig, args) -> None:
    tag = F.FeatureSet(args.feature_set or cfg.feature_set.value)
    out_dir = args.out or cfg.paths.datasets
    os.makedirs(out_dir, exist_ok=True)
    sets, norm = build_dataset(cfg.paths.bars, cfg.splits, cfg.session, tag)
    for split, ss in sets.items():
        path = os.path.join(out_dir, f"{split}_{tag.value}.dataset")
        write_dataset(ss, norm, path)
        print(f"build-dataset: {split}/{tag.value}: {len(ss)} samples -> {path}")
    write_fingerprint(cfg, out_dir)


def _load_split(cfg: RunConfig, split: str, tag: F.FeatureSet):
    return read_dataset(_dataset_path(cfg, split, tag))


def cmd_train(cfg: RunConfig, args) -> None:
    tag = F.FeatureSet(args.feature_set or cfg.feature_set.value)
    seed = args.seed if args.seed is not None else cfg.train.seeds[0]
    train_set, norm, manifest = _load_split(cfg, "train", tag)
    valid_set, _, _ = _load_split(cfg, "valid", tag)
    spec = MlpSpec(input_dim=F.LOOKBACK * F.feature_dim(tag), dropout_rate=cfg.train.dropout_rate)
    extra = {
        "feature_set": tag.value,
        "d": F.feature_dim(tag),
        "norm_ref": norm.ref(),
        "column_manifest_hash": F.manifest_hash(manifest),
    }
    res = train(train_set, valid_set, spec, cfg.train, seed, manifest_extra=extra)
    os.makedirs(cfg.paths.runs, exist_ok=True)
    base = args.out or _run_base(cfg, tag, seed)
    save_checkpoint(res.checkpoint, base)
    write_training_log(res.log, base + ".log.csv")
    write_fingerprint(cfg, cfg.paths.runs)
    print(
        f"train: {tag.value} seed {seed}: best valid NLL {res.best_valid_nll:.6f} "
        f"(epoch {res.best_epoch}) -> {base}.manifest.json"
    )


def cmd_grid(cfg: RunConfig, args) -> None:
    tag = F.FeatureSet(args.feature_set or cfg.feature_set.value)
    train_set, _, _ = _load_split(cfg, "train", tag)
    valid_set, _, _ = _load_split(cfg, "valid", tag)
    spec = MlpSpec(input_dim=F.LOOKBACK * F.feature_dim(tag))
    result = grid_search(train_set, valid_set, spec, cfg.train)
    os.makedirs(cfg.paths.runs, exist_ok=True)
    table = os.path.join(cfg.paths.runs, f"grid_{tag.value}.csv")
    with open(table, "w") as f:
        f.write("stage,dropout,weight_decay,learning_rate,mean_valid_nll,seed_nlls\n")
        for r in result.rows:
            f.write(
                f"{r['stage']},{r['dropout']},{r['weight_decay']},{r['learning_rate']},"
                f"{r['mean_valid_nll']:.8g},\"{r['seed_nlls']}\"\n"
            )
    winner = os.path.join(cfg.paths.runs, f"grid_{tag.value}_winner.json")
    with open(winner, "w") as f:
        json.dump(
            {
                "dropout_rate": result.winner.dropout_rate,
                "weight_decay": result.winner.weight_decay,
                "learning_rate": result.winner.learning_rate,
            },
            f,
            indent=1,
            sort_keys=True,
        )
    write_fingerprint(cfg, cfg.paths.runs)
    print(f"grid: table -> {table}; winner -> {winner}")


def _aux_from_bars(cfg: RunConfig, sample_set) -> tuple:
    """close_t / vwap_t per sample, looked up from the bar files."""
    need = {}
    for sid, day_int, minute in sample_set.keys:
        need.setdefault((int(sid), int(day_int)), []).append(int(minute))
    cache = {}
    for (sid, day_int), _minutes in sorted(need.items()):
        sym = sample_set.symbols[sid]
        day = dt.date(day_int // 10000, day_int % 10000 // 100, day_int % 100)
        path = os.path.join(cfg.paths.bars, bar_file_name(sym, day))
        for b in read_bars(path):
            cache[(sid, day_int, b.minute_index)] = (b.close, b.vwap)
    close = np.empty(len(sample_set))
    vwap = np.empty(len(sample_set))
    for i, (sid, day_int, minute) in enumerate(sample_set.keys):
        close[i], vwap[i] = cache[(int(sid), int(day_int), int(minute))]
    return close, vwap


def cmd_evaluate(cfg: RunConfig, args) -> None:
    tag = F.FeatureSet(args.feature_set or cfg.feature_set.value)
    seed = args.seed if args.seed is not None else cfg.train.seeds[0]
    split = args.split
    sample_set, norm, manifest = _load_split(cfg, split, tag)
    ckpt = load_checkpoint(_run_base(cfg, tag, seed))
    check_manifest(ckpt, F.manifest_hash(manifest))
    spec = spec_from_manifest(ckpt.manifest)
    mu, sigma, nu = predict(ckpt.params, spec, sample_set.features)
    close, vwap = _aux_from_bars(cfg, sample_set)
    samples = EvalSamples(
        keys=sample_set.keys,
        y=sample_set.targets.astype(np.float64),
        mu=mu,
        sigma=sigma,
        nu=nu,
        close=close,
        vwap=vwap,
    )
    report = build_report(samples, norm.target_mean, norm.target_std)
    out = args.out or os.path.join(cfg.paths.reports, f"{tag.value}_seed{seed}_{split}")
    paths = emit_report(report, out)
    write_fingerprint(cfg, out)
    print(f"evaluate: NLL {report.nll:.6f}, MSE {report.mse:.6f}, R2 {report.r2:.6f}")
    print(f"evaluate: wrote {len(paths)} files to {out}")


def cmd_stats(cfg: RunConfig, args) -> None:
    tag = F.FeatureSet(args.feature_set or cfg.feature_set.value)
    out = {}
    for split in ("train", "valid", "test"):
        ss, _, _ = _load_split(cfg, split, tag)
        block = target_stats(ss.targets.astype(np.float64))
        out[split] = block
        print(
            f"stats: {split}: mean {block['mean']:.3e} std {block['std']:.4f} "
            f"iqr {block['iqr']:.4f} qekurt {block['quantile_excess_kurtosis']:.3f}"
        )
    os.makedirs(cfg.paths.reports, exist_ok=True)
    path = os.path.join(cfg.paths.reports, f"target_stats_{tag.value}.json")
    with open(path, "w") as f:
        json.dump(out, f, sort_keys=True, indent=1)
    print(f"stats: wrote {path}")


def cmd_report(cfg: RunConfig, args) -> None:
    tag = F.FeatureSet(args.feature_set or cfg.feature_set.value)
    seed = args.seed if args.seed is not None else cfg.train.seeds[0]
    out = args.out or os.path.join(cfg.paths.reports, f"{tag.value}_seed{seed}_{args.split}")
    path = os.path.join(out, "report.json")
    from .evaluation import EvalReport

    with open(path) as f:
        report = EvalReport.from_dict(json.load(f))
    paths = emit_report(report, out)
    print(f"report: re-emitted {len(paths)} files in {out}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="barlab", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in [
        ("gen-ticks", cmd_gen_ticks),
        ("build-bars", cmd_build_bars),
        ("build-dataset", cmd_build_dataset),
        ("train", cmd_train),
        ("grid", cmd_grid),
        ("evaluate", cmd_evaluate),
        ("stats", cmd_stats),
        ("report", cmd_report),
    ]:
        sp = sub.add_parser(name)
        sp.set_defaults(fn=fn)
        sp.add_argument("--config", required=True, help="run-config JSON file")
        sp.add_argument("--feature-set", choices=[t.value for t in F.FeatureSet], default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--split", choices=["train", "valid", "test"], default="valid")
        sp.add_argument("--out", default=None)
        sp.add_argument("--threads", type=int, default=None,
                        help="worker threads (fallback: BARLAB_THREADS, default 1)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        args.fn(cfg, args)
        return EXIT_OK
    except (ConfigKeyError, ConfigError) as e:
        print(f"error[config]: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ManifestMismatch as e:
        print(f"error[manifest]: {e}", file=sys.stderr)
        return EXIT_MANIFEST
    except (TickParseError, TickValidationError, BarFormatError, DatasetFormatError,
            ContractViolation) as e:
        print(f"error[data]: {e}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as e:
        print(f"error[data]: missing file: {e.filename}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # anything else is a runtime failure
        print(f"error[runtime]: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
