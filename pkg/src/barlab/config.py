"""Run configuration: one JSON file drives every pipeline stage."""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import os
from dataclasses import dataclass, field

from .dataset import SplitSpec
from .features import FeatureSet
from .model import TrainConfig
from .bars import BarBuildConfig
from .ticks import SessionSpec, SynthConfig, trading_days


class ConfigKeyError(KeyError):
    """Missing or invalid run-config key."""


@dataclass(frozen=True)
class RunPaths:
    ticks: str = "out/ticks"
    bars: str = "out/bars"
    datasets: str = "out/datasets"
    runs: str = "out/runs"
    reports: str = "out/reports"

    def __post_init__(self):
        vals = [self.ticks, self.bars, self.datasets, self.runs, self.reports]
        if len(set(map(os.path.normpath, vals))) != len(vals):
            raise ConfigKeyError("paths must be distinct")


@dataclass(frozen=True)
class RunConfig:
    session: SessionSpec = field(default_factory=SessionSpec)
    synth: SynthConfig = field(default_factory=SynthConfig)
    splits: SplitSpec = None
    bar_build: BarBuildConfig = None
    feature_set: FeatureSet = FeatureSet.FULL
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: RunPaths = field(default_factory=RunPaths)


def default_splits(synth: SynthConfig) -> SplitSpec:
    """Temporal split over the synthetic calendar: 2/3 train (the first five
    days only feed prior-volume history), then valid and test."""
    days = trading_days(synth.start_day, synth.days)
    n = len(days)
    t_end = days[max(1, int(n * 2 / 3))]
    v_end = days[max(2, int(n * 5 / 6))]
    end = days[-1] + dt.timedelta(days=1)
    return SplitSpec(train=(days[0], t_end), valid=(t_end, v_end), test=(v_end, end))


def default_config() -> RunConfig:
    synth = SynthConfig()
    return RunConfig(
        splits=default_splits(synth),
        bar_build=BarBuildConfig(excluded_codes=frozenset({"X"}), session=SessionSpec()),
    )


# ---------------------------------------------------------------------------
# JSON mapping
# ---------------------------------------------------------------------------


def _date(s: str) -> dt.date:
    return dt.date.fromisoformat(s)


def config_to_dict(cfg: RunConfig) -> dict:
    ses = cfg.session
    sy = cfg.synth
    return {
        "session": {
            "minutes_per_day": ses.minutes_per_day,
            "session_open": ses.session_open.strftime("%H:%M:%S"),
            "bar_width_seconds": ses.bar_width,
        },
        "synth": {
            "symbols": sy.symbols,
            "days": sy.days,
            "seed": sy.seed,
            "base_price_range": list(sy.base_price_range),
            "drift_phi": sy.drift_phi,
            "drift_shock_scale": sy.drift_shock_scale,
            "vol_per_minute": sy.vol_per_minute,
            "vol_curve": list(sy.vol_curve),
            "momentum_coef": sy.momentum_coef,
            "close_frac_coef": sy.close_frac_coef,
            "timing_coef": sy.timing_coef,
            "tick_base": sy.tick_base,
            "tick_rate": sy.tick_rate,
            "tick_noise_dof": sy.tick_noise_dof,
            "off_exchange_fraction": sy.off_exchange_fraction,
            "size_log_mean": sy.size_log_mean,
            "size_log_sd": sy.size_log_sd,
            "start_day": sy.start_day.isoformat(),
        },
        "splits": {
            "train": [cfg.splits.train[0].isoformat(), cfg.splits.train[1].isoformat()],
            "valid": [cfg.splits.valid[0].isoformat(), cfg.splits.valid[1].isoformat()],
            "test": [cfg.splits.test[0].isoformat(), cfg.splits.test[1].isoformat()],
        },
        "bar_build": {"excluded_codes": sorted(cfg.bar_build.excluded_codes)},
        "feature_set": cfg.feature_set.value,
        "train": {
            "learning_rate": cfg.train.learning_rate,
            "weight_decay": cfg.train.weight_decay,
            "dropout_rate": cfg.train.dropout_rate,
            "batch_size": cfg.train.batch_size,
            "epochs": cfg.train.epochs,
            "batches_per_epoch": cfg.train.batches_per_epoch,
            "seeds": list(cfg.train.seeds),
        },
        "paths": {
            "ticks": cfg.paths.ticks,
            "bars": cfg.paths.bars,
            "datasets": cfg.paths.datasets,
            "runs": cfg.paths.runs,
            "reports": cfg.paths.reports,
        },
    }


def config_from_dict(d: dict) -> RunConfig:
    try:
        s = d.get("session", {})
        session = SessionSpec(
            minutes_per_day=s.get("minutes_per_day", 390),
            session_open=dt.time.fromisoformat(s.get("session_open", "09:30:00")),
            bar_width=s.get("bar_width_seconds", 60.0),
        )
        sy = d.get("synth", {})
        synth = SynthConfig(
            symbols=sy.get("symbols", 20),
            days=sy.get("days", 30),
            seed=sy.get("seed", 12345),
            base_price_range=tuple(sy.get("base_price_range", (5.0, 500.0))),
            drift_phi=sy.get("drift_phi", 0.97),
            drift_shock_scale=sy.get("drift_shock_scale", 2e-5),
            vol_per_minute=sy.get("vol_per_minute", 1e-3),
            vol_curve=tuple(sy.get("vol_curve", ())),
            momentum_coef=sy.get("momentum_coef", 0.1),
            close_frac_coef=sy.get("close_frac_coef", 0.1),
            timing_coef=sy.get("timing_coef", 0.5),
            tick_base=sy.get("tick_base", 30),
            tick_rate=sy.get("tick_rate", 40.0),
            tick_noise_dof=sy.get("tick_noise_dof", 4.0),
            off_exchange_fraction=sy.get("off_exchange_fraction", 0.05),
            size_log_mean=sy.get("size_log_mean", 4.6),
            size_log_sd=sy.get("size_log_sd", 1.0),
            start_day=_date(sy.get("start_day", "2021-01-04")),
        )
        if "splits" in d:
            sp = d["splits"]
            splits = SplitSpec(
                train=(_date(sp["train"][0]), _date(sp["train"][1])),
                valid=(_date(sp["valid"][0]), _date(sp["valid"][1])),
                test=(_date(sp["test"][0]), _date(sp["test"][1])),
            )
        else:
            splits = default_splits(synth)
        bar_build = BarBuildConfig(
            excluded_codes=frozenset(d.get("bar_build", {}).get("excluded_codes", ["X"])),
            session=session,
        )
        t = d.get("train", {})
        train = TrainConfig(
            learning_rate=t.get("learning_rate", 1e-3),
            weight_decay=t.get("weight_decay", 1e-4),
            dropout_rate=t.get("dropout_rate", 0.1),
            batch_size=t.get("batch_size", 1024),
            epochs=t.get("epochs", 10),
            batches_per_epoch=t.get("batches_per_epoch", 200),
            seeds=tuple(t.get("seeds", (1, 2, 3))),
        )
        p = d.get("paths", {})
        paths = RunPaths(
            ticks=p.get("ticks", "out/ticks"),
            bars=p.get("bars", "out/bars"),
            datasets=p.get("datasets", "out/datasets"),
            runs=p.get("runs", "out/runs"),
            reports=p.get("reports", "out/reports"),
        )
        return RunConfig(
            session=session,
            synth=synth,
            splits=splits,
            bar_build=bar_build,
            feature_set=FeatureSet(d.get("feature_set", "full")),
            train=train,
            paths=paths,
        )
    except (KeyError, IndexError) as e:
        raise ConfigKeyError(f"missing config key: {e}") from e
    except (TypeError, ValueError) as e:
        raise ConfigKeyError(f"invalid config value: {e}") from e


def load_config(path) -> RunConfig:
    try:
        with open(path) as f:
            raw = json.load(f)
    except FileNotFoundError as e:
        raise ConfigKeyError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigKeyError(f"config is not valid JSON: {e}") from e
    return config_from_dict(raw)


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def write_fingerprint(cfg: RunConfig, out_dir) -> None:
    """Copy of the effective config + content hash, for reproducibility."""
    os.makedirs(out_dir, exist_ok=True)
    body = config_to_dict(cfg)
    body["config_sha256"] = config_hash(cfg)
    with open(os.path.join(out_dir, "effective_config.json"), "w") as f:
        json.dump(body, f, sort_keys=True, indent=1)
