"""barlab: a tick-to-forecast laboratory.

Builds timing-enhanced OHLC bars from trade ticks, engineers the full
feature dictionary, trains a distributional (Student's-t) MLP forecaster
of next-bar VWAP log returns, and evaluates it with calibration, accuracy,
and baseline suites on synthetic tick data with a controllable
timing-signal strength.
"""

from .ticks import (
    DayTicks,
    SessionSpec,
    SynthConfig,
    Tick,
    generate_day_ticks,
    generate_ticks,
    read_ticks,
    write_ticks,
)
from .bars import Bar, BarBuildConfig, build_bars, read_bars, write_bars
from .dataset import (
    NormStats,
    SampleSet,
    SplitSpec,
    apply_filters,
    build_dataset,
    prior_volume_stats,
    read_dataset,
    write_dataset,
)
from .features import FeatureMatrix, FeatureSet, WindowSample, assemble, feature_dim
from .tdist import (
    GaussianParams,
    StudentTParams,
    gauss_cdf,
    gauss_logpdf,
    t_cdf,
    t_logpdf,
    t_logpdf_grad,
    t_mean_var,
    t_quantile,
)
from .model import (
    Checkpoint,
    MlpSpec,
    TrainConfig,
    forward_np,
    grid_search,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
)
from .evaluation import (
    EvalReport,
    EvalSamples,
    baselines,
    build_report,
    calibration,
    cond_var_rmse,
    directional,
    emit_report,
    gaussian_ablation_nll,
    mse_r2,
    nll,
    target_stats,
)
from .config import RunConfig, default_config, load_config

__version__ = "0.1.0"
