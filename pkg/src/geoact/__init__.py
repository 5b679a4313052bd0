"""Geofence activation decisions from sparse, sporadic location measurements.

The package combines probabilistic short-term location prediction (per-axis
Gaussian processes), expected-utility thresholding over a payoff matrix,
and an arrival-process cutoff on the prediction horizon, plus the
realized-value evaluation harness and a CLI.
"""

from .decide import (
    ADVERTISING,
    ALERT_ZONE,
    PAYOFF_PRESETS,
    CutoffPolicy,
    DecisionOutcome,
    Geofence,
    PayoffMatrix,
    act_threshold,
    expected_values,
    find_act_time,
    poisson_cutoff,
    prob_inside,
    prob_measurement_by,
)
from .evalharness import (
    METHODS,
    CorpusEntry,
    EvalParams,
    FenceCrossing,
    FenceGrid,
    RealizedScore,
    SweepResult,
    build_grid,
    fence_crossing,
    realized_value_step,
    run_sweep,
    score_fence_trajectory,
)
from .predict import (
    KIND_GP,
    KIND_GP_MEANFUNC,
    KIND_PW,
    FitSettings,
    FittedPredictor,
    GaussianLocation,
    KernelParams,
    PredictorConfig,
    fit,
    linear_mean,
    log_marginal_likelihood,
    predict,
    predict_many,
)
from .trajdata import (
    PoissonRate,
    RawFix,
    SplitTrajectory,
    Trajectory,
    bernoulli_subsample,
    dominant_gap,
    estimate_lambda,
    filter_short,
    load_csv,
    project_to_local,
    split_on_gap,
    train_test_split,
    unproject_from_local,
    write_csv,
)

__version__ = "0.1.0"
