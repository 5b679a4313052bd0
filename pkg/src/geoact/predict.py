"""Probabilistic short-term location predictors.

Two independent per-axis Gaussian processes with a squared-exponential
kernel model x(t) and y(t); the mean function is either zero or the line
through the two most recent measurements. The stationary baseline simply
repeats the latest measurement with measurement noise. All predictors
share one interface: fit on a look-back window, then query a Gaussian
location at any forward offset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from .errors import DegenerateMean, IllConditioned, NoTrainingData, TooShort
from .trajdata import Trajectory

KIND_PW = "PW"
KIND_GP = "GP"
KIND_GP_MEANFUNC = "GP+meanfunc"
KINDS = (KIND_PW, KIND_GP, KIND_GP_MEANFUNC)

_JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6)
_VAR_FLOOR = 1e-12


@dataclass(frozen=True)
class GaussianLocation:
    """Axis-independent bivariate Gaussian over the local plane."""

    mean: tuple[float, float]
    std: tuple[float, float]

    def __post_init__(self):
        sx, sy = self.std
        if not (sx > 0 and sy > 0 and math.isfinite(sx) and math.isfinite(sy)):
            raise ValueError(f"std must be positive and finite, got {self.std}")


@dataclass(frozen=True)
class KernelParams:
    """Squared-exponential kernel: k(t,t') = sigma_f^2 exp(-(t-t')^2 / (2 l^2))."""

    sigma_f: float
    length_scale: float

    def __post_init__(self):
        if self.sigma_f <= 0 or self.length_scale <= 0:
            raise ValueError("sigma_f and length_scale must be positive")


@dataclass(frozen=True)
class FitSettings:
    """Hyperparameter search budget: log-space grid then simplex refinement."""

    sigma_f_bounds: tuple[float, float] = (1.0, 1e4)
    length_scale_bounds: tuple[float, float] = (1.0, 600.0)
    grid_size: int = 5
    n_restarts: int = 2
    max_evals: int = 200
    fixed_params: KernelParams | None = None


@dataclass(frozen=True)
class PredictorConfig:
    sigma_m: float = 3.0
    lookback: float = 300.0
    mean_mode: str = "zero"  # mean used by the plain GP kind
    fit: FitSettings = field(default_factory=FitSettings)

    def __post_init__(self):
        if self.sigma_m <= 0:
            raise ValueError("sigma_m must be positive")
        if self.lookback <= 0:
            raise ValueError("lookback must be positive")
        if self.mean_mode not in ("zero", "linear"):
            raise ValueError(f"unknown mean_mode {self.mean_mode!r}")


@dataclass(frozen=True)
class AxisModel:
    """Trained state of one coordinate axis."""

    times_rel: np.ndarray          # offsets from the anchor, all <= 0
    values: np.ndarray
    params: KernelParams
    mean_slope: float
    mean_at_anchor: float
    chol_lower: np.ndarray         # L with L L^T = K + sigma_m^2 I (+ jitter)
    alpha: np.ndarray              # (K + sigma_m^2 I)^-1 residuals
    jitter: float


@dataclass(frozen=True)
class FittedPredictor:
    """Immutable fitted predictor; safe to query from many threads."""

    kind: str
    anchor_time: float
    anchor_xy: tuple[float, float]
    sigma_m: float
    lookback: float
    axis_x: AxisModel | None = None
    axis_y: AxisModel | None = None

    def to_diagnostic_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "anchor_time": self.anchor_time,
            "anchor_xy": list(self.anchor_xy),
            "sigma_m": self.sigma_m,
            "lookback": self.lookback,
        }
        for name, axis in (("x", self.axis_x), ("y", self.axis_y)):
            if axis is not None:
                out[name] = {
                    "sigma_f": axis.params.sigma_f,
                    "length_scale": axis.params.length_scale,
                    "mean_slope": axis.mean_slope,
                    "mean_at_anchor": axis.mean_at_anchor,
                    "n_train": int(axis.times_rel.size),
                    "jitter": axis.jitter,
                }
        return out


def _sq_kernel(d2: np.ndarray, params: KernelParams) -> np.ndarray:
    return params.sigma_f ** 2 * np.exp(-d2 / (2.0 * params.length_scale ** 2))


def _chol_with_jitter(k_noisy: np.ndarray):
    """Lower Cholesky of K + sigma_m^2 I, escalating jitter before giving up."""
    n = k_noisy.shape[0]
    scale = float(np.trace(k_noisy)) / n
    for level in _JITTER_LADDER:
        jitter = level * scale
        try:
            lower = cholesky(k_noisy + jitter * np.eye(n), lower=True)
            return lower, jitter
        except np.linalg.LinAlgError:
            continue
    raise IllConditioned("Cholesky failed after jitter ladder")


def _line_through(t0: float, v0: float, t1: float, v1: float) -> tuple[float, float]:
    """Slope and intercept (value at t = 0) of the line through two points."""
    if t1 == t0:
        raise DegenerateMean("identical timestamps for mean line")
    slope = (v1 - v0) / (t1 - t0)
    return slope, v1 - slope * t1


def linear_mean(history: Trajectory, t0: float):
    """Per-axis line through the two latest measurements at or before t0.

    Returns ((slope_x, intercept_x), (slope_y, intercept_y)) with the
    intercept expressed at t = 0 in the history's own time coordinates.
    """
    mask = history.t <= t0
    if int(np.sum(mask)) < 2:
        raise TooShort("need at least 2 points at or before t0")
    t = history.t[mask][-2:]
    x = history.x[mask][-2:]
    y = history.y[mask][-2:]
    return (_line_through(t[0], x[0], t[1], x[1]),
            _line_through(t[0], y[0], t[1], y[1]))


def _axis_mean(times_rel: np.ndarray, values: np.ndarray,
               mean_mode: str) -> tuple[float, float]:
    """(slope, value at offset 0). Falls back to a constant for one point."""
    if mean_mode == "zero":
        return 0.0, 0.0
    if times_rel.size == 1:
        return 0.0, float(values[-1])
    slope, intercept = _line_through(times_rel[-2], values[-2],
                                     times_rel[-1], values[-1])
    return slope, slope * 0.0 + intercept


def _lml_from_chol(resid: np.ndarray, lower: np.ndarray,
                   alpha: np.ndarray) -> float:
    n = resid.size
    return float(-0.5 * resid @ alpha
                 - np.sum(np.log(np.diag(lower)))
                 - 0.5 * n * math.log(2.0 * math.pi))


def log_marginal_likelihood(times, values, params: KernelParams,
                            sigma_m: float, mean_mode: str = "zero") -> float:
    """Gaussian-process log marginal likelihood of one axis.

    Mean-function residuals are used when mean_mode = "linear". Times are
    shifted internally so the result is invariant to the time origin.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.size == 0:
        raise NoTrainingData("no points for marginal likelihood")
    t_rel = t - t[-1]
    slope, at_anchor = _axis_mean(t_rel, v, mean_mode)
    resid = v - (at_anchor + slope * t_rel)
    d2 = (t_rel[:, None] - t_rel[None, :]) ** 2
    k_noisy = _sq_kernel(d2, params) + sigma_m ** 2 * np.eye(t.size)
    lower, _ = _chol_with_jitter(k_noisy)
    alpha = cho_solve((lower, True), resid)
    return _lml_from_chol(resid, lower, alpha)


def _fit_axis(times_rel: np.ndarray, values: np.ndarray, sigma_m: float,
              mean_mode: str, settings: FitSettings) -> AxisModel:
    slope, at_anchor = _axis_mean(times_rel, values, mean_mode)
    resid = values - (at_anchor + slope * times_rel)
    n = times_rel.size
    d2 = (times_rel[:, None] - times_rel[None, :]) ** 2
    eye = np.eye(n)
    sf_lo, sf_hi = settings.sigma_f_bounds
    ls_lo, ls_hi = settings.length_scale_bounds
    # generous box so simplex refinement cannot wander into overflow regimes
    guard_lo = np.log([sf_lo / 10.0, ls_lo / 10.0])
    guard_hi = np.log([sf_hi * 10.0, ls_hi * 10.0])

    def neg_lml(log_params: np.ndarray) -> float:
        if np.any(log_params < guard_lo) or np.any(log_params > guard_hi):
            return np.inf
        params = KernelParams(math.exp(log_params[0]), math.exp(log_params[1]))
        k_noisy = _sq_kernel(d2, params) + sigma_m ** 2 * eye
        try:
            lower, _ = _chol_with_jitter(k_noisy)
        except IllConditioned:
            return np.inf
        alpha = cho_solve((lower, True), resid)
        return -_lml_from_chol(resid, lower, alpha)

    if settings.fixed_params is not None:
        best_params = settings.fixed_params
    else:
        sf_grid = np.geomspace(sf_lo, sf_hi, settings.grid_size)
        ls_grid = np.geomspace(ls_lo, ls_hi, settings.grid_size)
        candidates = np.array([[math.log(sf), math.log(ls)]
                               for sf in sf_grid for ls in ls_grid])
        scores = np.array([neg_lml(c) for c in candidates])
        order = np.argsort(scores, kind="stable")
        best_log = candidates[order[0]]
        best_score = scores[order[0]]
        budget = settings.max_evals - len(candidates)
        n_starts = max(1, settings.n_restarts)
        maxfev = max(1, budget // n_starts)
        for rank in range(min(n_starts, len(candidates))):
            start = candidates[order[rank]]
            res = minimize(neg_lml, start, method="Nelder-Mead",
                           options={"maxfev": maxfev, "xatol": 1e-3,
                                    "fatol": 1e-6})
            if np.isfinite(res.fun) and res.fun < best_score:
                best_score = res.fun
                best_log = res.x
        best_params = KernelParams(math.exp(best_log[0]),
                                   math.exp(best_log[1]))

    k_noisy = _sq_kernel(d2, best_params) + sigma_m ** 2 * eye
    lower, jitter = _chol_with_jitter(k_noisy)
    alpha = cho_solve((lower, True), resid)
    return AxisModel(times_rel=times_rel, values=values, params=best_params,
                     mean_slope=slope, mean_at_anchor=at_anchor,
                     chol_lower=lower, alpha=alpha, jitter=jitter)


def fit(history: Trajectory, t0: float, config: PredictorConfig,
        kind: str) -> FittedPredictor:
    """Train a predictor on the look-back window [t0 - lookback, t0]."""
    if kind not in KINDS:
        raise ValueError(f"unknown predictor kind {kind!r}")
    mask = (history.t >= t0 - config.lookback) & (history.t <= t0)
    if not np.any(mask):
        raise NoTrainingData(f"no measurements in [{t0 - config.lookback}, {t0}]")
    t_win = history.t[mask]
    x_win = history.x[mask]
    y_win = history.y[mask]
    anchor_time = float(t_win[-1])
    anchor_xy = (float(x_win[-1]), float(y_win[-1]))
    if kind == KIND_PW:
        return FittedPredictor(kind=kind, anchor_time=anchor_time,
                               anchor_xy=anchor_xy, sigma_m=config.sigma_m,
                               lookback=config.lookback)
    mean_mode = "linear" if kind == KIND_GP_MEANFUNC else config.mean_mode
    times_rel = t_win - anchor_time
    axis_x = _fit_axis(times_rel, x_win, config.sigma_m, mean_mode, config.fit)
    axis_y = _fit_axis(times_rel, y_win, config.sigma_m, mean_mode, config.fit)
    return FittedPredictor(kind=kind, anchor_time=anchor_time,
                           anchor_xy=anchor_xy, sigma_m=config.sigma_m,
                           lookback=config.lookback,
                           axis_x=axis_x, axis_y=axis_y)


def _axis_predict(axis: AxisModel, dts: np.ndarray, sigma_m: float):
    d2 = (dts[:, None] - axis.times_rel[None, :]) ** 2
    k_star = _sq_kernel(d2, axis.params)              # (n_dt, n_train)
    mean = (axis.mean_at_anchor + axis.mean_slope * dts) + k_star @ axis.alpha
    v = solve_triangular(axis.chol_lower, k_star.T, lower=True)
    var = axis.params.sigma_f ** 2 + sigma_m ** 2 - np.sum(v * v, axis=0)
    return mean, np.sqrt(np.maximum(var, _VAR_FLOOR))


def predict_many(pred: FittedPredictor, dts) -> tuple[np.ndarray, ...]:
    """Vectorized predictions: (mu_x, mu_y, sd_x, sd_y) arrays over offsets."""
    dts = np.atleast_1d(np.asarray(dts, dtype=float))
    if pred.kind == KIND_PW:
        ones = np.ones_like(dts)
        return (pred.anchor_xy[0] * ones, pred.anchor_xy[1] * ones,
                pred.sigma_m * ones, pred.sigma_m * ones)
    mu_x, sd_x = _axis_predict(pred.axis_x, dts, pred.sigma_m)
    mu_y, sd_y = _axis_predict(pred.axis_y, dts, pred.sigma_m)
    return mu_x, mu_y, sd_x, sd_y


def predict(pred: FittedPredictor, dt: float) -> GaussianLocation:
    """Gaussian location at forward offset dt (seconds past the anchor).

    Predictive variance includes measurement noise, so every predictor is
    compared at the level of future measurement-like locations.
    """
    if dt < 0:
        raise ValueError("dt must be >= 0")
    mu_x, mu_y, sd_x, sd_y = predict_many(pred, [dt])
    return GaussianLocation(mean=(float(mu_x[0]), float(mu_y[0])),
                            std=(float(sd_x[0]), float(sd_y[0])))
