"""Evaluation metrics, baselines, target statistics, and report files.

All reductions run over samples in a fixed key order with compensated
(Neumaier) float64 accumulation, so results do not depend on how upstream
stages were parallelized.

Metrics: negative log-likelihood, Gaussian-ablation NLL delta, quantile
calibration error (with a descriptive Pearson chi-squared summary), MSE,
R^2, conditional-variance RMSE, directional accuracy overall and by decile
of |predicted mean|, plus the standardized-normal / zero-return /
VWAP-to-close baselines and robust target summary statistics.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .tdist import gauss_cdf, gauss_logpdf, t_cdf, t_logpdf

# (P99 - P1) / IQR for a Normal distribution: 2 * 2.3263 / 1.3490
NORMAL_TRIMMED_RANGE_RATIO = 3.449


class EvalError(ValueError):
    pass


def compensated_sum(values) -> float:
    """Exactly-rounded float64 sum (Shewchuk, via math.fsum); independent of
    summation order and thread count by construction."""
    import math

    return math.fsum(np.asarray(values, dtype=np.float64))


def compensated_mean(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise EvalError("empty sample set")
    return compensated_sum(values) / values.size


@dataclass
class EvalSamples:
    """Predictions aligned with observations, in fixed key order."""

    keys: np.ndarray  # (N, 3) int64
    y: np.ndarray  # (N,) standardized observed targets
    mu: np.ndarray
    sigma: np.ndarray
    nu: np.ndarray
    close: np.ndarray = None  # close_t (for the VWAP-to-close baseline)
    vwap: np.ndarray = None  # vwap_t

    def __len__(self):
        return len(self.y)


@dataclass
class CalibrationCurve:
    levels: np.ndarray  # (M,) nominal quantile levels p_j
    empirical: np.ndarray  # (M,) empirical coverage p-hat_j
    cal_error: float  # sum_j (p_j - p-hat_j)^2
    chi_sq: float  # Pearson statistic of the 100-bin PIT histogram


def nll(samples: EvalSamples) -> float:
    if len(samples) == 0:
        raise EvalError("empty sample set")
    return -compensated_mean(t_logpdf((samples.mu, samples.sigma, samples.nu), samples.y))


def gaussian_ablation_nll(samples: EvalSamples):
    """NLL after replacing each t with a Gaussian of the same mean/variance;
    returns (gaussian_nll, delta_vs_t)."""
    var = samples.sigma**2 * samples.nu / (samples.nu - 2.0)
    g_nll = -compensated_mean(gauss_logpdf((samples.mu, var), samples.y))
    return g_nll, g_nll - nll(samples)


def calibration_from_cdf_values(f_values: np.ndarray, m: int = 100) -> CalibrationCurve:
    n = len(f_values)
    if n == 0:
        raise EvalError("empty sample set")
    levels = np.arange(1, m + 1, dtype=np.float64) / (m + 1)
    f_sorted = np.sort(np.asarray(f_values, dtype=np.float64))
    empirical = np.searchsorted(f_sorted, levels, side="left") / n
    cal_error = float(np.sum((levels - empirical) ** 2))
    counts, _ = np.histogram(f_sorted, bins=100, range=(0.0, 1.0))
    expected = n / 100.0
    chi_sq = float(np.sum((counts - expected) ** 2) / expected)
    return CalibrationCurve(levels, empirical, cal_error, chi_sq)


def calibration(samples: EvalSamples, m: int = 100) -> CalibrationCurve:
    f = t_cdf((samples.mu, samples.sigma, samples.nu), samples.y)
    return calibration_from_cdf_values(f, m)


def mse_r2(samples: EvalSamples):
    y = np.asarray(samples.y, dtype=np.float64)
    yhat = np.asarray(samples.mu, dtype=np.float64)  # t mean
    return _mse_r2(y, yhat)


def _mse_r2(y, yhat):
    if len(y) == 0:
        raise EvalError("empty sample set")
    res = (y - yhat) ** 2
    mse = compensated_mean(res)
    tot = compensated_sum((y - compensated_mean(y)) ** 2)
    if tot == 0.0:
        raise EvalError("zero total variance: R^2 undefined")
    r2 = 1.0 - compensated_sum(res) / tot
    return mse, r2


def cond_var_rmse(samples: EvalSamples) -> float:
    var_pred = samples.sigma**2 * samples.nu / (samples.nu - 2.0)
    realized = (samples.y - samples.mu) ** 2
    return float(np.sqrt(compensated_mean((var_pred - realized) ** 2)))


@dataclass
class DirectionalAccuracy:
    overall: float
    by_decile: np.ndarray  # (10,)
    decile_counts: np.ndarray  # (10,) ints summing to N
    decile_edges: np.ndarray  # (11,) |mu| quantiles at k/10


def _sign(x):
    return np.where(np.asarray(x) >= 0.0, 1.0, -1.0)  # sign(0) = +1


def directional(samples: EvalSamples) -> DirectionalAccuracy:
    if len(samples) == 0:
        raise EvalError("empty sample set")
    hits = _sign(samples.mu) == _sign(samples.y)
    overall = float(hits.mean())
    amu = np.abs(samples.mu)
    order = np.argsort(amu, kind="stable")  # ties keep key order
    n = len(amu)
    base, extra = divmod(n, 10)
    sizes = np.array([base + (1 if i < extra else 0) for i in range(10)])
    accs = np.empty(10)
    counts = np.empty(10, dtype=np.int64)
    lo = 0
    for i in range(10):
        part = order[lo : lo + sizes[i]]
        accs[i] = float(hits[part].mean()) if sizes[i] else np.nan
        counts[i] = sizes[i]
        lo += sizes[i]
    edges = np.quantile(amu, np.linspace(0.0, 1.0, 11))
    return DirectionalAccuracy(overall, accs, counts, edges)


def baselines(samples: EvalSamples, target_mean: float, target_std: float) -> dict:
    """Standardized-N(0,1), zero-return, and previous-VWAP-to-close blocks."""
    y = np.asarray(samples.y, dtype=np.float64)
    n = len(y)
    zeros = np.zeros(n)
    ones = np.ones(n)
    std_nll = -compensated_mean(gauss_logpdf((0.0, 1.0), y))
    std_mse, std_r2 = _mse_r2(y, zeros)
    std_cal = calibration_from_cdf_values(gauss_cdf((0.0, 1.0), y))
    std_cv = float(np.sqrt(compensated_mean((ones - y**2) ** 2)))
    out = {
        "std_normal_nll": std_nll,
        "std_normal_mse": std_mse,
        "std_normal_r2": std_r2,
        "std_normal_cal_error": std_cal.cal_error,
        "std_normal_cond_var_rmse": std_cv,
        "zero_raw_mse": compensated_mean((y - (0.0 - target_mean) / target_std) ** 2),
    }
    if samples.close is not None and samples.vwap is not None:
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.asarray(samples.close, dtype=np.float64) / np.asarray(
                samples.vwap, dtype=np.float64
            )
            ok = np.isfinite(ratio) & (ratio > 0.0)
            pred = (np.log(ratio[ok]) - target_mean) / target_std
        if ok.any():
            out["vwap_to_close_mse"] = compensated_mean((y[ok] - pred) ** 2)
            out["vwap_to_close_n"] = int(ok.sum())
            out["zero_raw_mse_on_subset"] = compensated_mean(
                (y[ok] - (0.0 - target_mean) / target_std) ** 2
            )
    return out


def target_stats(targets, hist_bins: int = 512) -> dict:
    """Moment and robust summary statistics of a target sample, plus the
    density histogram data."""
    y = np.asarray(targets, dtype=np.float64)
    n = len(y)
    if n < 100:
        raise EvalError("need at least 100 targets for summary statistics")
    mean = y.mean()
    std = y.std(ddof=1)
    q1, med, q3 = np.percentile(y, [25.0, 50.0, 75.0])
    iqr = q3 - q1
    if iqr == 0.0:
        raise EvalError("zero IQR: robust statistics undefined")
    p01, p99 = np.percentile(y, [1.0, 99.0])
    c = y - mean
    m2 = np.mean(c**2)
    m3 = np.mean(c**3)
    m4 = np.mean(c**4)
    g1 = m3 / m2**1.5
    skew_adj = g1 * np.sqrt(n * (n - 1.0)) / (n - 2.0)
    g2 = m4 / m2**2 - 3.0
    kurt_adj = ((n + 1.0) * g2 + 6.0) * (n - 1.0) / ((n - 2.0) * (n - 3.0))
    counts, edges = np.histogram(y, bins=hist_bins)
    return {
        "n": n,
        "mean": float(mean),
        "median": float(med),
        "std": float(std),
        "iqr": float(iqr),
        "skewness": float(skew_adj),
        "quartile_skewness": float((q3 + q1 - 2.0 * med) / iqr),
        "excess_kurtosis": float(kurt_adj),
        "quantile_excess_kurtosis": float((p99 - p01) / iqr - NORMAL_TRIMMED_RANGE_RATIO),
        "hist_counts": counts.tolist(),
        "hist_edges": edges.tolist(),
    }


# ---------------------------------------------------------------------------
# full report
# ---------------------------------------------------------------------------


def _hexbin(x, y, bins: int = 64):
    counts, xe, ye = np.histogram2d(np.asarray(x), np.asarray(y), bins=bins)
    return {"counts": counts.astype(int).tolist(), "x_edges": xe.tolist(), "y_edges": ye.tolist()}


@dataclass
class EvalReport:
    nll: float
    nll_gauss: float
    nll_gauss_delta: float
    calibration: CalibrationCurve
    mse: float
    r2: float
    cond_var_rmse: float
    directional: DirectionalAccuracy
    baselines: dict
    target_stats: dict
    figures: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "nll": self.nll,
            "nll_gauss": self.nll_gauss,
            "nll_gauss_delta": self.nll_gauss_delta,
            "calibration": {
                "levels": self.calibration.levels.tolist(),
                "empirical": self.calibration.empirical.tolist(),
                "cal_error": self.calibration.cal_error,
                "chi_sq": self.calibration.chi_sq,
            },
            "mse": self.mse,
            "r2": self.r2,
            "cond_var_rmse": self.cond_var_rmse,
            "directional": {
                "overall": self.directional.overall,
                "by_decile": self.directional.by_decile.tolist(),
                "decile_counts": self.directional.decile_counts.tolist(),
                "decile_edges": self.directional.decile_edges.tolist(),
            },
            "baselines": self.baselines,
            "target_stats": self.target_stats,
            "figures": self.figures,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        cal = CalibrationCurve(
            np.array(d["calibration"]["levels"]),
            np.array(d["calibration"]["empirical"]),
            d["calibration"]["cal_error"],
            d["calibration"]["chi_sq"],
        )
        da = DirectionalAccuracy(
            d["directional"]["overall"],
            np.array(d["directional"]["by_decile"]),
            np.array(d["directional"]["decile_counts"]),
            np.array(d["directional"]["decile_edges"]),
        )
        return cls(
            nll=d["nll"],
            nll_gauss=d["nll_gauss"],
            nll_gauss_delta=d["nll_gauss_delta"],
            calibration=cal,
            mse=d["mse"],
            r2=d["r2"],
            cond_var_rmse=d["cond_var_rmse"],
            directional=da,
            baselines=d["baselines"],
            target_stats=d["target_stats"],
            figures=d.get("figures", {}),
        )


def build_report(samples: EvalSamples, target_mean: float, target_std: float,
                 m: int = 100) -> EvalReport:
    g_nll, delta = gaussian_ablation_nll(samples)
    mse, r2 = mse_r2(samples)
    var_pred = samples.sigma**2 * samples.nu / (samples.nu - 2.0)
    realized = np.maximum((samples.y - samples.mu) ** 2, 1e-300)
    log_vp = np.log10(var_pred)
    log_rv = np.log10(realized)
    lo = min(log_vp.min(), log_rv.min())
    hi = max(log_vp.max(), log_rv.max())
    vp_counts, v_edges = np.histogram(log_vp, bins=512, range=(lo, hi))
    rv_counts, _ = np.histogram(log_rv, bins=512, range=(lo, hi))
    figures = {
        "mean_hexbin": _hexbin(samples.mu, samples.y),
        "var_hexbin": _hexbin(log_vp, log_rv),
        "var_density": {
            "edges": v_edges.tolist(),
            "predicted": vp_counts.astype(int).tolist(),
            "realized": rv_counts.astype(int).tolist(),
        },
    }
    return EvalReport(
        nll=nll(samples),
        nll_gauss=g_nll,
        nll_gauss_delta=delta,
        calibration=calibration(samples, m),
        mse=mse,
        r2=r2,
        cond_var_rmse=cond_var_rmse(samples),
        directional=directional(samples),
        baselines=baselines(samples, target_mean, target_std),
        target_stats=target_stats(samples.y),
        figures=figures,
    )


def emit_report(report: EvalReport, out_dir) -> list:
    """report.json plus the plot-ready CSV files; returns written paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    def path(name):
        p = os.path.join(out_dir, name)
        paths.append(p)
        return p

    with open(path("report.json"), "w") as f:
        json.dump(report.to_dict(), f, sort_keys=True, indent=1)

    with open(path("calibration.csv"), "w") as f:
        f.write("level,empirical\n")
        for p, e in zip(report.calibration.levels, report.calibration.empirical):
            f.write(f"{p:.10g},{e:.10g}\n")

    with open(path("deciles.csv"), "w") as f:
        f.write("decile,abs_mean_lo,abs_mean_hi,accuracy,count\n")
        e = report.directional.decile_edges
        for i in range(10):
            f.write(
                f"{i + 1},{e[i]:.10g},{e[i + 1]:.10g},"
                f"{report.directional.by_decile[i]:.10g},{report.directional.decile_counts[i]}\n"
            )

    with open(path("target_hist.csv"), "w") as f:
        f.write("bin_lo,bin_hi,count\n")
        edges = report.target_stats["hist_edges"]
        for i, c in enumerate(report.target_stats["hist_counts"]):
            f.write(f"{edges[i]:.10g},{edges[i + 1]:.10g},{c}\n")

    def write_hexbin(name, hb, x_name, y_name):
        with open(path(name), "w") as f:
            f.write(f"{x_name}_lo,{x_name}_hi,{y_name}_lo,{y_name}_hi,count\n")
            counts = hb["counts"]
            xe, ye = hb["x_edges"], hb["y_edges"]
            for i, row in enumerate(counts):
                for j, c in enumerate(row):
                    if c:
                        f.write(
                            f"{xe[i]:.10g},{xe[i + 1]:.10g},{ye[j]:.10g},{ye[j + 1]:.10g},{c}\n"
                        )

    write_hexbin("mean_hexbin.csv", report.figures["mean_hexbin"], "pred", "obs")
    write_hexbin("var_hexbin.csv", report.figures["var_hexbin"], "log_pred_var", "log_realized_var")

    with open(path("var_density.csv"), "w") as f:
        f.write("bin_lo,bin_hi,predicted,realized\n")
        vd = report.figures["var_density"]
        for i in range(len(vd["predicted"])):
            f.write(
                f"{vd['edges'][i]:.10g},{vd['edges'][i + 1]:.10g},"
                f"{vd['predicted'][i]},{vd['realized'][i]}\n"
            )
    return paths
