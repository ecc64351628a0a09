"""Student's-t MLP forecaster: architecture, training loop, grid runner,
and checkpoint files.

Architecture (flattened lookback input of size 20*D):

    x -> Linear(20*D, 256)
      -> 2 x [ h = LayerNorm(h + W2 @ dropout(relu(W1 @ h)) ) ]   (post-norm)
      -> Linear(256, 3) = (m, s, v)
      -> mu = m, sigma = softplus(s) + 1e-6, nu = 2 + softplus(v)

Training minimizes the mean negative log-likelihood of the Student's t
under adaptive-moment updates with DECOUPLED weight decay (the decay
multiplies the weights directly and never enters the moment estimates).
Weights are float32; losses and metrics accumulate in float64; everything
is deterministic given the seed when run single-threaded.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tensor
from .features import FeatureSet, LOOKBACK
from .tdist import t_logpdf

SIGMA_FLOOR = 1e-6
NU_FLOOR = 2.0


class TrainDivergence(RuntimeError):
    """Loss became non-finite; carries the offending batch's key range."""


class ManifestMismatch(ValueError):
    """Checkpoint and dataset disagree on the feature manifest."""


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden: int = 256
    blocks: int = 2
    dropout_rate: float = 0.1
    head_dim: int = 3

    def __post_init__(self):
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError("dropout_rate must be in [0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    dropout_rate: float = 0.1
    batch_size: int = 1024
    epochs: int = 10
    batches_per_epoch: int = 200
    seeds: tuple = (1, 2, 3)

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "epochs", "batches_per_epoch"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


# Table-2-shaped default search space for the grid runner
GRID_DROPOUT = (0.1, 0.2, 0.3, 0.4, 0.5)
GRID_WEIGHT_DECAY = (1e-5, 1e-4, 1e-3, 1e-2)
GRID_LEARNING_RATE = (1e-5, 1e-4, 1e-3, 1e-2)
STAGE1_WEIGHT_DECAY = 1e-4
STAGE1_LEARNING_RATE = 1e-4


def _param_order(spec: MlpSpec):
    names = ["in_w", "in_b"]
    for i in range(spec.blocks):
        names += [f"b{i}_w1", f"b{i}_b1", f"b{i}_w2", f"b{i}_b2", f"b{i}_ln_g", f"b{i}_ln_b"]
    names += ["head_w", "head_b"]
    return names


def init_params(spec: MlpSpec, seed: int, dtype=np.float32) -> dict:
    """Deterministic Kaiming-uniform init; head bias starts the distribution
    at sigma ~= 1, nu ~= 5."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))

    def kaiming(fan_in, fan_out):
        bound = math.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)

    h = spec.hidden
    params = {"in_w": kaiming(spec.input_dim, h), "in_b": np.zeros(h, dtype=dtype)}
    for i in range(spec.blocks):
        params[f"b{i}_w1"] = kaiming(h, h)
        params[f"b{i}_b1"] = np.zeros(h, dtype=dtype)
        params[f"b{i}_w2"] = kaiming(h, h)
        params[f"b{i}_b2"] = np.zeros(h, dtype=dtype)
        params[f"b{i}_ln_g"] = np.ones(h, dtype=dtype)
        params[f"b{i}_ln_b"] = np.zeros(h, dtype=dtype)
    params["head_w"] = (kaiming(h, spec.head_dim) * 0.01).astype(dtype)
    # softplus(b) = 1 and 3: sigma starts near 1, nu near 5
    params["head_b"] = np.array(
        [0.0, math.log(math.expm1(1.0)), math.log(math.expm1(3.0))], dtype=dtype
    )
    return params


def head_transform(raw: np.ndarray):
    """(B, 3) raw head -> (mu, sigma, nu); sigma > 0 and nu > 2 always."""
    mu = raw[:, 0]
    sigma = np.logaddexp(0.0, raw[:, 1]) + SIGMA_FLOOR
    nu = NU_FLOOR + np.logaddexp(0.0, raw[:, 2])
    return mu, sigma, nu


def forward_np(params: dict, spec: MlpSpec, x: np.ndarray):
    """Evaluation-mode forward (no dropout), plain numpy.

    Returns (mu, sigma, nu) as float64 arrays.
    """
    h = x @ params["in_w"] + params["in_b"]
    for i in range(spec.blocks):
        a = np.maximum(h @ params[f"b{i}_w1"] + params[f"b{i}_b1"], 0.0)
        v = a @ params[f"b{i}_w2"] + params[f"b{i}_b2"]
        pre = h + v
        mu_ = pre.mean(axis=-1, keepdims=True)
        var = ((pre - mu_) ** 2).mean(axis=-1, keepdims=True)
        h = (pre - mu_) / np.sqrt(var + 1e-5) * params[f"b{i}_ln_g"] + params[f"b{i}_ln_b"]
    raw = h @ params["head_w"] + params["head_b"]
    mu, sigma, nu = head_transform(raw.astype(np.float64))
    return mu, sigma, nu


def nll_graph(params_t: dict, spec: MlpSpec, x: np.ndarray, y: np.ndarray,
              dropout_masks=None, dropout_rate: float = 0.0) -> Tensor:
    """Mean Student-t NLL as an autodiff graph over the parameter tensors."""
    xd = x.dtype
    h = Tensor(x) @ params_t["in_w"] + params_t["in_b"]
    for i in range(spec.blocks):
        a = (h @ params_t[f"b{i}_w1"] + params_t[f"b{i}_b1"]).relu()
        if dropout_masks is not None and dropout_rate > 0.0:
            a = a.dropout(dropout_masks[i], dropout_rate)
        v = a @ params_t[f"b{i}_w2"] + params_t[f"b{i}_b2"]
        h = (h + v).layer_norm(params_t[f"b{i}_ln_g"], params_t[f"b{i}_ln_b"])
    raw = h @ params_t["head_w"] + params_t["head_b"]

    mu = raw.col(0)
    sigma = raw.col(1).softplus() + np.array(SIGMA_FLOOR, dtype=xd)
    nu = raw.col(2).softplus() + np.array(NU_FLOOR, dtype=xd)

    yt = Tensor(y.astype(xd))
    z = (yt - mu) / sigma
    half = np.array(0.5, dtype=xd)
    one = np.array(1.0, dtype=xd)
    logpdf = (
        ((nu + one) * half).log_gamma()
        - (nu * half).log_gamma()
        - half * (nu * np.array(math.pi, dtype=xd)).log()
        - sigma.log()
        - (nu + one) * half * (z.square() / nu).log1p()
    )
    return -logpdf.mean()


@dataclass
class AdamState:
    """Adaptive moments with decoupled weight decay (moments in float64)."""

    lr: float
    weight_decay: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for k, w in params.items():
            g = grads[k].astype(np.float64)
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            new = w.astype(np.float64)
            new *= 1.0 - self.lr * self.weight_decay
            new -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
            params[k] = new.astype(w.dtype)


@dataclass
class Checkpoint:
    manifest: dict
    params: dict  # name -> float32 ndarray


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list  # rows of (epoch, step, train_nll, valid_nll)
    best_valid_nll: float
    best_epoch: int


def _flatten(features: np.ndarray, dtype) -> np.ndarray:
    return np.ascontiguousarray(features.reshape(len(features), -1), dtype=dtype)


def predict(params: dict, spec: MlpSpec, features: np.ndarray, chunk: int = 65536):
    """Evaluation-mode (mu, sigma, nu) for a (N, LOOKBACK, D) feature tensor."""
    x = _flatten(features, np.float32)
    mus, sigmas, nus = [], [], []
    for lo in range(0, len(x), chunk):
        mu, sigma, nu = forward_np(params, spec, x[lo : lo + chunk])
        mus.append(mu)
        sigmas.append(sigma)
        nus.append(nu)
    return np.concatenate(mus), np.concatenate(sigmas), np.concatenate(nus)


def valid_nll(params: dict, spec: MlpSpec, x: np.ndarray, y: np.ndarray,
              chunk: int = 65536) -> float:
    """Evaluation-mode NLL with exact float64 accumulation."""
    from .evaluation import compensated_sum

    total = 0.0
    for lo in range(0, len(x), chunk):
        mu, sigma, nu = forward_np(params, spec, x[lo : lo + chunk])
        vals = t_logpdf((mu, sigma, nu), y[lo : lo + chunk].astype(np.float64))
        total += compensated_sum(vals)
    return -total / len(x)


def train(
    train_set,
    valid_set,
    spec: MlpSpec,
    cfg: TrainConfig,
    seed: int,
    dtype=np.float32,
    manifest_extra: dict | None = None,
) -> TrainResult:
    """MLE training with best-validation-NLL checkpoint selection."""
    x_train = _flatten(train_set.features, dtype)
    y_train = train_set.targets.astype(dtype)
    x_valid = _flatten(valid_set.features, dtype)
    y_valid = valid_set.targets.astype(dtype)
    if x_train.shape[1] != spec.input_dim:
        raise ValueError(f"dataset D*{LOOKBACK}={x_train.shape[1]} != spec input_dim {spec.input_dim}")

    params = init_params(spec, seed, dtype)
    adam = AdamState(lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    batch_rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    mask_rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))

    n = len(x_train)
    order = batch_rng.permutation(n)
    cursor = 0
    step = 0
    log = []
    best = math.inf
    best_epoch = -1
    best_params = {k: w.copy() for k, w in params.items()}

    for epoch in range(cfg.epochs):
        epoch_nll = 0.0
        for _ in range(cfg.batches_per_epoch):
            if cursor + cfg.batch_size > n:
                order = batch_rng.permutation(n)
                cursor = 0
            idx = order[cursor : cursor + cfg.batch_size]
            cursor += cfg.batch_size
            xb, yb = x_train[idx], y_train[idx]

            params_t = {k: Tensor(w, requires_grad=True) for k, w in params.items()}
            masks = None
            if cfg.dropout_rate > 0.0:
                masks = [
                    mask_rng.random((len(xb), spec.hidden), dtype=np.float32) >= cfg.dropout_rate
                    for _ in range(spec.blocks)
                ]
            loss = nll_graph(params_t, spec, xb, yb, masks, cfg.dropout_rate)
            loss_val = float(loss.data)
            if not math.isfinite(loss_val):
                keys = train_set.keys[idx]
                raise TrainDivergence(
                    f"non-finite loss at epoch {epoch} step {step}; "
                    f"batch keys {keys.min(axis=0).tolist()} .. {keys.max(axis=0).tolist()}"
                )
            loss.backward()
            adam.step(params, {k: t.grad for k, t in params_t.items()})
            epoch_nll += loss_val
            step += 1

        v_nll = valid_nll(params, spec, x_valid, y_valid)
        log.append((epoch, step, epoch_nll / cfg.batches_per_epoch, v_nll))
        if v_nll < best:
            best = v_nll
            best_epoch = epoch
            best_params = {k: w.copy() for k, w in params.items()}

    manifest = {
        "format_version": 1,
        "architecture": {
            "input_dim": spec.input_dim,
            "hidden": spec.hidden,
            "blocks": spec.blocks,
            "dropout_rate": cfg.dropout_rate,
            "head_dim": spec.head_dim,
        },
        "train_config": {
            "learning_rate": cfg.learning_rate,
            "weight_decay": cfg.weight_decay,
            "dropout_rate": cfg.dropout_rate,
            "batch_size": cfg.batch_size,
            "epochs": cfg.epochs,
            "batches_per_epoch": cfg.batches_per_epoch,
        },
        "seed": seed,
        "best_valid_nll": best,
        "best_epoch": best_epoch,
        "tensors": [
            {"name": k, "shape": list(best_params[k].shape), "dtype": "float32"}
            for k in _param_order(spec)
        ],
    }
    manifest.update(manifest_extra or {})
    ckpt = Checkpoint(manifest=manifest, params={k: best_params[k].astype(np.float32) for k in _param_order(spec)})
    return TrainResult(checkpoint=ckpt, log=log, best_valid_nll=best, best_epoch=best_epoch)


# ---------------------------------------------------------------------------
# checkpoint files
# ---------------------------------------------------------------------------


def save_checkpoint(ckpt: Checkpoint, base_path) -> None:
    base = str(base_path)
    with open(base + ".manifest.json", "w") as f:
        json.dump(ckpt.manifest, f, sort_keys=True, indent=1)
    with open(base + ".weights.bin", "wb") as f:
        for t in ckpt.manifest["tensors"]:
            arr = ckpt.params[t["name"]]
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(base_path) -> Checkpoint:
    base = str(base_path)
    with open(base + ".manifest.json") as f:
        manifest = json.load(f)
    params = {}
    with open(base + ".weights.bin", "rb") as f:
        blob = f.read()
    offset = 0
    for t in manifest["tensors"]:
        size = int(np.prod(t["shape"])) if t["shape"] else 1
        arr = np.frombuffer(blob, dtype="<f4", count=size, offset=offset)
        params[t["name"]] = arr.reshape(t["shape"]).copy()
        offset += size * 4
    if offset != len(blob):
        raise ValueError(f"{base}.weights.bin: {len(blob)} bytes, manifest expects {offset}")
    return Checkpoint(manifest=manifest, params=params)


def spec_from_manifest(manifest: dict) -> MlpSpec:
    a = manifest["architecture"]
    return MlpSpec(
        input_dim=a["input_dim"],
        hidden=a["hidden"],
        blocks=a["blocks"],
        dropout_rate=a["dropout_rate"],
        head_dim=a["head_dim"],
    )


def check_manifest(ckpt: Checkpoint, dataset_manifest_hash: str) -> None:
    """Refuse to evaluate a checkpoint against a differently-ordered dataset."""
    want = ckpt.manifest.get("column_manifest_hash")
    if want is not None and want != dataset_manifest_hash:
        raise ManifestMismatch(
            f"checkpoint built for manifest {want[:12]}…, dataset has {dataset_manifest_hash[:12]}…"
        )


# ---------------------------------------------------------------------------
# hyperparameter grid
# ---------------------------------------------------------------------------


@dataclass
class GridResult:
    rows: list  # dicts: stage, dropout, weight_decay, learning_rate, per-seed nlls, mean
    winner: TrainConfig


def grid_search(
    train_set,
    valid_set,
    spec: MlpSpec,
    base_cfg: TrainConfig,
    dropout_grid=GRID_DROPOUT,
    weight_decay_grid=GRID_WEIGHT_DECAY,
    learning_rate_grid=GRID_LEARNING_RATE,
    dtype=np.float32,
) -> GridResult:
    """Two-stage tuning: dropout first (wd/lr at stage-1 defaults), then the
    weight-decay x learning-rate grid at the winning dropout. Each cell is
    scored by the mean validation NLL over the seed list; a cell with any
    diverged run scores +inf and can never win."""

    def run_cell(dropout, wd, lr, stage):
        cfg = replace(
            base_cfg, dropout_rate=dropout, weight_decay=wd, learning_rate=lr
        )
        nlls = []
        for seed in base_cfg.seeds:
            try:
                res = train(train_set, valid_set, spec, cfg, seed, dtype=dtype)
                nlls.append(res.best_valid_nll)
            except TrainDivergence:
                nlls.append(math.inf)
        mean = float(np.mean(nlls)) if all(math.isfinite(v) for v in nlls) else math.inf
        return {
            "stage": stage,
            "dropout": dropout,
            "weight_decay": wd,
            "learning_rate": lr,
            "seed_nlls": nlls,
            "mean_valid_nll": mean,
        }

    rows = []
    stage1 = [run_cell(d, STAGE1_WEIGHT_DECAY, STAGE1_LEARNING_RATE, 1) for d in dropout_grid]
    rows += stage1
    best_dropout = min(stage1, key=lambda r: r["mean_valid_nll"])["dropout"]

    stage2 = [
        run_cell(best_dropout, wd, lr, 2)
        for wd in weight_decay_grid
        for lr in learning_rate_grid
    ]
    rows += stage2
    best = min(stage2, key=lambda r: r["mean_valid_nll"])
    winner = replace(
        base_cfg,
        dropout_rate=best["dropout"],
        weight_decay=best["weight_decay"],
        learning_rate=best["learning_rate"],
    )
    return GridResult(rows=rows, winner=winner)


def write_training_log(log, path) -> None:
    with open(path, "w") as f:
        f.write("epoch,step,train_nll,valid_nll\n")
        for epoch, step, tr, va in log:
            f.write(f"{epoch},{step},{tr:.10g},{va:.10g}\n")
