"""Realized-value evaluation protocol.

Ground-truth fence entry/exit times come from the dense test trajectory by
straight-line interpolation; the decision engine only ever sees the sparse
subsample. Scores accrue per (fence, trajectory) with the act-while-inside
reward granted at most once, then aggregate over a fence grid and over a
corpus of trajectories.
"""

from __future__ import annotations

import hashlib
import math
import multiprocessing
from dataclasses import dataclass, field, replace

import numpy as np

from .decide import (
    CutoffPolicy,
    Geofence,
    PayoffMatrix,
    act_threshold,
    axis_interval_prob,
    poisson_cutoff,
    scan_offsets,
)
from .errors import TooShort
from .predict import FitSettings, FittedPredictor, PredictorConfig, fit, predict_many
from .trajdata import PoissonRate, SplitTrajectory, Trajectory, bernoulli_subsample

METHODS = ("PW", "GP", "GP+meanfunc")


@dataclass(frozen=True)
class FenceCrossing:
    """First entry and first exit times of the true path; None when absent."""

    t_in: float | None
    t_out: float | None

    def __post_init__(self):
        if self.t_in is None and self.t_out is not None:
            raise ValueError("t_out without t_in")
        if self.t_in is not None and self.t_out is not None:
            if self.t_in > self.t_out:
                raise ValueError("t_in must not exceed t_out")


@dataclass(frozen=True)
class FenceGrid:
    """Square cells on a lattice phased so one cell is centered at (0, 0)."""

    cell_size: float
    x_centers: np.ndarray
    y_centers: np.ndarray
    extent: tuple[float, float, float, float]  # expanded bounding box

    @property
    def n_cells(self) -> int:
        return self.x_centers.size * self.y_centers.size

    @property
    def cells(self) -> list[Geofence]:
        hw = self.cell_size / 2.0
        return [Geofence(center=(float(cx), float(cy)), half_width=hw)
                for cx in self.x_centers for cy in self.y_centers]

    def cell_index(self, x: float, y: float) -> tuple[int, int]:
        """Lattice indices of the cell containing (x, y), clipped to range."""
        L = self.cell_size
        ix = int(math.floor((x + L / 2.0) / L)) - int(round(self.x_centers[0] / L))
        iy = int(math.floor((y + L / 2.0) / L)) - int(round(self.y_centers[0] / L))
        return (min(max(ix, 0), self.x_centers.size - 1),
                min(max(iy, 0), self.y_centers.size - 1))


@dataclass(frozen=True)
class RealizedScore:
    """Per-measurement realized values for one (fence, trajectory) pair."""

    per_measurement: np.ndarray
    v_fence_traj: float
    latched_at: int | None


@dataclass(frozen=True)
class SweepResult:
    param: str
    value: float
    method: str
    V: float
    n_trajectories: int
    mean_acts: float
    mean_pred_std: float


@dataclass(frozen=True)
class CorpusEntry:
    """One preprocessed segment ready for evaluation."""

    traj_id: str
    split: SplitTrajectory
    tau: float


@dataclass(frozen=True)
class EvalParams:
    """Operating point of one evaluation run; defaults follow the defaults
    used throughout the experiments."""

    lam: float = 0.5
    delta_t: float = 60.0
    epsilon: float = 0.2
    scan_step: float = 1.0
    cell_size: float = 1000.0
    margin: float = 18000.0
    sigma_m: float = 3.0
    lookback: float = 300.0
    fit: FitSettings = field(default_factory=FitSettings)


SWEEPABLE = {
    "lambda": "lam",
    "epsilon": "epsilon",
    "cell_size": "cell_size",
    "lookback": "lookback",
    "sigma_m": "sigma_m",
}


def derive_seed(master_seed: int, *parts) -> int:
    """Stable per-trajectory seed; never depends on the process hash salt."""
    text = "|".join([str(master_seed), *map(str, parts)])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def _clip_segment(x0, y0, x1, y1, bounds):
    """Liang-Barsky clip; returns the (u0, u1) parameter window of the
    segment inside the box, or None when disjoint."""
    x_lo, x_hi, y_lo, y_hi = bounds
    dx = x1 - x0
    dy = y1 - y0
    u0, u1 = 0.0, 1.0
    for p, q in ((-dx, x0 - x_lo), (dx, x_hi - x0),
                 (-dy, y0 - y_lo), (dy, y_hi - y0)):
        if p == 0.0:
            if q < 0.0:
                return None
            continue
        r = q / p
        if p < 0.0:
            if r > u1:
                return None
            if r > u0:
                u0 = r
        else:
            if r < u0:
                return None
            if r < u1:
                u1 = r
    return u0, u1


def fence_crossing(dense: Trajectory, fence: Geofence) -> FenceCrossing:
    """First entry/exit times of the dense path through a fence.

    Straight-line motion is assumed between adjacent points; containment is
    half-open per axis, so boundary grazing counts as outside on the high
    edges. A pass fully inside one segment yields both times from that
    segment; a path that ends inside has no exit time.
    """
    if len(dense) < 2:
        raise TooShort("need at least 2 points to interpolate crossings")
    t, x, y = dense.t, dense.x, dense.y
    bounds = fence.bounds
    n = len(dense)
    t_in = None
    resume = None
    if fence.contains(float(x[0]), float(y[0])):
        t_in = float(t[0])
        resume = 0
    else:
        for i in range(n - 1):
            hit = _clip_segment(x[i], y[i], x[i + 1], y[i + 1], bounds)
            if hit is None:
                continue
            u0, u1 = hit
            if u1 <= u0 or u0 >= 1.0:
                continue  # single-point graze carries no interior time
            t_in = float(t[i] + u0 * (t[i + 1] - t[i]))
            if u1 < 1.0:
                t_out = float(t[i] + u1 * (t[i + 1] - t[i]))
                return FenceCrossing(t_in=t_in, t_out=t_out)
            resume = i + 1
            break
        else:
            return FenceCrossing(t_in=None, t_out=None)
    for j in range(resume, n - 1):
        hit = _clip_segment(x[j], y[j], x[j + 1], y[j + 1], bounds)
        if hit is None or hit[1] <= 0.0:
            return FenceCrossing(t_in=t_in, t_out=float(t[j]))
        if hit[1] < 1.0:
            t_out = float(t[j] + hit[1] * (t[j + 1] - t[j]))
            return FenceCrossing(t_in=t_in, t_out=t_out)
    return FenceCrossing(t_in=t_in, t_out=None)


def realized_value_step(t_hat_abs: float, crossing: FenceCrossing,
                        t_i: float, t_next: float,
                        payoff: PayoffMatrix) -> float:
    """Realized value of one measurement interval.

    Acting before the next measurement earns beta inside [t_in, t_out]
    (closed) and delta outside it; waiting earns alpha only when the first
    exit falls inside this interval, and 0 in every deferred or missed
    configuration. ``t_hat_abs`` is absolute time, +inf for never acting.
    A path that ends inside the fence keeps rewarding acts after entry.
    """
    if not t_i < t_next:
        raise ValueError("need t_i < t_next")
    t_in = math.inf if crossing.t_in is None else crossing.t_in
    t_out = math.inf if crossing.t_out is None else crossing.t_out
    if t_hat_abs <= t_next:
        inside = t_in <= t_hat_abs <= t_out
        return payoff.beta if inside else payoff.delta
    if crossing.t_out is not None and t_i <= crossing.t_out <= t_next:
        return payoff.alpha
    return 0.0


def realized_value_matrix(t_hat_abs: np.ndarray, t_in: np.ndarray,
                          t_out: np.ndarray, times: np.ndarray,
                          payoff: PayoffMatrix):
    """Vectorized twin of :func:`realized_value_step` plus the beta latch.

    Shapes: t_hat_abs (F, M); t_in, t_out (F,) with +inf encoding missing
    times; times (M+1,). Returns (values (F, M), acts mask (F, M),
    first-beta index per fence with M meaning no beta).
    """
    n_meas = t_hat_abs.shape[1]
    t_now = times[:-1][None, :]
    t_next = times[1:][None, :]
    t_in_c = t_in[:, None]
    t_out_c = t_out[:, None]
    acted = t_hat_abs <= t_next
    inside = (t_hat_abs >= t_in_c) & (t_hat_abs <= t_out_c)
    beta_m = acted & inside
    delta_m = acted & ~inside
    alpha_m = ~acted & (t_out_c >= t_now) & (t_out_c <= t_next)
    any_beta = beta_m.any(axis=1)
    first_beta = np.where(any_beta, beta_m.argmax(axis=1), n_meas)
    keep = np.arange(n_meas)[None, :] <= first_beta[:, None]
    values = np.where(beta_m, payoff.beta,
                      np.where(delta_m, payoff.delta,
                               np.where(alpha_m, payoff.alpha, 0.0)))
    values = values * keep
    acts = (beta_m | delta_m) & keep
    return values, acts, first_beta


def assemble_realized_values(t_hat_abs, crossing: FenceCrossing,
                             times: np.ndarray,
                             payoff: PayoffMatrix) -> RealizedScore:
    """Apply the per-step rule along one trajectory with the beta latch."""
    times = np.asarray(times, dtype=float)
    t_hat_abs = np.asarray(t_hat_abs, dtype=float)
    if times.size != t_hat_abs.size + 1:
        raise ValueError("need one more time than act decisions")
    values = np.zeros(t_hat_abs.size)
    latched_at = None
    for i in range(t_hat_abs.size):
        values[i] = realized_value_step(float(t_hat_abs[i]), crossing,
                                        float(times[i]), float(times[i + 1]),
                                        payoff)
        acted = t_hat_abs[i] <= times[i + 1]
        if acted and _acted_inside(float(t_hat_abs[i]), crossing):
            latched_at = i
            break
    return RealizedScore(per_measurement=values,
                         v_fence_traj=float(values.sum()),
                         latched_at=latched_at)


def _acted_inside(t_hat_abs: float, crossing: FenceCrossing) -> bool:
    t_in = math.inf if crossing.t_in is None else crossing.t_in
    t_out = math.inf if crossing.t_out is None else crossing.t_out
    return t_in <= t_hat_abs <= t_out


def build_grid(split: SplitTrajectory, cell_size: float,
               margin: float = 18000.0) -> FenceGrid:
    """Grid of cells covering the test bounding box expanded by ``margin``.

    The lattice is phased so one cell is centered on the last training
    point (the local origin); every cell with positive-area overlap of the
    expanded box is included.
    """
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    test = split.test
    x_lo = float(test.x.min()) - margin
    x_hi = float(test.x.max()) + margin
    y_lo = float(test.y.min()) - margin
    y_hi = float(test.y.max()) + margin

    def centers(lo: float, hi: float) -> np.ndarray:
        L = cell_size
        k_min = math.floor((lo - L / 2.0) / L) + 1
        k_max = math.ceil((hi + L / 2.0) / L) - 1
        return np.arange(k_min, k_max + 1, dtype=float) * L

    return FenceGrid(cell_size=cell_size,
                     x_centers=centers(x_lo, x_hi),
                     y_centers=centers(y_lo, y_hi),
                     extent=(x_lo, x_hi, y_lo, y_hi))


def grid_crossings(dense: Trajectory, grid: FenceGrid):
    """Entry/exit time arrays (+inf when absent) for every grid cell.

    Only cells the dense path can touch are walked; every other cell is
    never entered by construction.
    """
    n_x, n_y = grid.x_centers.size, grid.y_centers.size
    t_in = np.full(n_x * n_y, math.inf)
    t_out = np.full(n_x * n_y, math.inf)
    candidates = set()
    xs, ys = dense.x, dense.y
    for i in range(len(dense) - 1):
        ix0, iy0 = grid.cell_index(min(xs[i], xs[i + 1]), min(ys[i], ys[i + 1]))
        ix1, iy1 = grid.cell_index(max(xs[i], xs[i + 1]), max(ys[i], ys[i + 1]))
        for ix in range(ix0, ix1 + 1):
            for iy in range(iy0, iy1 + 1):
                candidates.add((ix, iy))
    hw = grid.cell_size / 2.0
    for ix, iy in candidates:
        fence = Geofence(center=(float(grid.x_centers[ix]),
                                 float(grid.y_centers[iy])), half_width=hw)
        crossing = fence_crossing(dense, fence)
        flat = ix * n_y + iy
        if crossing.t_in is not None:
            t_in[flat] = crossing.t_in
        if crossing.t_out is not None:
            t_out[flat] = crossing.t_out
    return t_in, t_out


def grid_act_times(pred: FittedPredictor, grid: FenceGrid,
                   thresholds, policy: CutoffPolicy):
    """First profitable act offset per grid cell and per threshold.

    Exploits the grid's tensor structure: the inside probability of cell
    (i, j) factors into per-axis interval probabilities, so one prediction
    pass covers every cell. Returns (list of (F,) offset arrays with +inf
    for never, mean predictive std over the scan).
    """
    t_star = poisson_cutoff(policy)
    dts = scan_offsets(policy, t_star)
    mu_x, mu_y, sd_x, sd_y = predict_many(pred, dts)
    hw = grid.cell_size / 2.0
    px = axis_interval_prob(grid.x_centers[:, None] - hw,
                            grid.x_centers[:, None] + hw,
                            mu_x[None, :], sd_x[None, :])   # (n_x, n_dt)
    py = axis_interval_prob(grid.y_centers[:, None] - hw,
                            grid.y_centers[:, None] + hw,
                            mu_y[None, :], sd_y[None, :])   # (n_y, n_dt)
    p = px[:, None, :] * py[None, :, :]                      # (n_x, n_y, n_dt)
    flat = p.reshape(-1, dts.size)
    outs = []
    for thr in thresholds:
        above = flat > thr
        hit = above.any(axis=1)
        first = above.argmax(axis=1)
        rel = np.where(hit, dts[np.minimum(first, dts.size - 1)], math.inf)
        outs.append(rel)
    mean_sd = float(np.mean((sd_x + sd_y) / 2.0))
    return outs, mean_sd, dts.size


def _history(sparse_train: Trajectory, sparse_test: Trajectory) -> Trajectory:
    if sparse_train.t[-1] >= sparse_test.t[0]:
        raise ValueError("training part must end before the test part")
    return Trajectory(np.concatenate([sparse_train.t, sparse_test.t]),
                      np.concatenate([sparse_train.x, sparse_test.x]),
                      np.concatenate([sparse_train.y, sparse_test.y]))


@dataclass(frozen=True)
class TraceRow:
    """One measurement's decision record for diagnostic traces."""

    t_i: float
    t_star: float
    t_hat_abs: float | None
    p_at_act: float | None
    value: float


def decision_trace(split: SplitTrajectory, sparse_train: Trajectory,
                   sparse_test: Trajectory, fence: Geofence, kind: str,
                   config: PredictorConfig, payoff: PayoffMatrix,
                   policy: CutoffPolicy):
    """Per-measurement decisions and realized values for one fence.

    The predictor refits at every sparse test measurement on the sparse
    history inside the look-back window; ground-truth crossing times come
    from the dense test part. The last measurement is only a pivot.
    Returns (RealizedScore, list of TraceRow).
    """
    from .decide import find_act_time

    if len(sparse_test) < 2:
        raise TooShort("need at least 2 sparse test points")
    crossing = fence_crossing(split.test, fence)
    history = _history(sparse_train, sparse_test)
    t_hats = np.empty(len(sparse_test) - 1)
    outcomes = []
    for i in range(len(sparse_test) - 1):
        t_i = float(sparse_test.t[i])
        pred = fit(history, t_i, config, kind)
        outcome = find_act_time(pred, fence, payoff, policy)
        outcomes.append((t_i, outcome, pred.anchor_time))
        t_hats[i] = (pred.anchor_time + outcome.t_hat
                     if outcome.acted else math.inf)
    score = assemble_realized_values(t_hats, crossing, sparse_test.t, payoff)
    rows = []
    for i, (t_i, outcome, anchor) in enumerate(outcomes):
        rows.append(TraceRow(
            t_i=t_i, t_star=outcome.t_star,
            t_hat_abs=anchor + outcome.t_hat if outcome.acted else None,
            p_at_act=outcome.p_at_act,
            value=float(score.per_measurement[i])))
    return score, rows


def score_fence_trajectory(split: SplitTrajectory, sparse_train: Trajectory,
                           sparse_test: Trajectory, fence: Geofence,
                           kind: str, config: PredictorConfig,
                           payoff: PayoffMatrix,
                           policy: CutoffPolicy) -> RealizedScore:
    """Realized value of one predictor on one fence along one trajectory."""
    score, _ = decision_trace(split, sparse_train, sparse_test, fence, kind,
                              config, payoff, policy)
    return score


@dataclass(frozen=True)
class TrajectoryEval:
    """Aggregates of one (trajectory, method, parameter point, payoff)."""

    v_s: float
    n_acts: int
    sd_sum: float
    n_preds: int


def evaluate_split(entry: CorpusEntry, method: str, params: EvalParams,
                   payoffs: tuple[PayoffMatrix, ...],
                   master_seed: int) -> list[TrajectoryEval]:
    """Score one trajectory against its whole fence grid, for each payoff.

    All methods see identical sparse samples because the subsample seeds
    derive from the trajectory id alone.
    """
    rate = PoissonRate(lam=params.lam, delta_t=params.delta_t)
    sparse_train = bernoulli_subsample(
        entry.split.train, rate, entry.tau,
        derive_seed(master_seed, entry.traj_id, "train"))
    sparse_test = bernoulli_subsample(
        entry.split.test, rate, entry.tau,
        derive_seed(master_seed, entry.traj_id, "test"))
    grid = build_grid(entry.split, params.cell_size, params.margin)
    t_in, t_out = grid_crossings(entry.split.test, grid)
    policy = CutoffPolicy(epsilon=params.epsilon, rate=rate,
                          scan_step=params.scan_step)
    config = PredictorConfig(sigma_m=params.sigma_m,
                             lookback=params.lookback, fit=params.fit)
    thresholds = [act_threshold(p) for p in payoffs]
    history = _history(sparse_train, sparse_test)
    n_meas = len(sparse_test) - 1
    t_hat_abs = [np.full((grid.n_cells, n_meas), math.inf)
                 for _ in payoffs]
    sd_sum = 0.0
    n_preds = 0
    for i in range(n_meas):
        t_i = float(sparse_test.t[i])
        pred = fit(history, t_i, config, method)
        rels, mean_sd, n_scan = grid_act_times(pred, grid, thresholds, policy)
        sd_sum += mean_sd * n_scan
        n_preds += n_scan
        for k, rel in enumerate(rels):
            t_hat_abs[k][:, i] = pred.anchor_time + rel
    results = []
    for k, payoff in enumerate(payoffs):
        values, acts, _ = realized_value_matrix(
            t_hat_abs[k], t_in, t_out, sparse_test.t, payoff)
        results.append(TrajectoryEval(v_s=float(values.sum()),
                                      n_acts=int(acts.sum()),
                                      sd_sum=sd_sum, n_preds=n_preds))
    return results


def _sweep_task(args):
    value, method, entry, params, payoffs, master_seed = args
    return evaluate_split(entry, method, params, payoffs, master_seed)


def run_sweep(corpus: list[CorpusEntry], param: str, values,
              base: EvalParams, payoff: PayoffMatrix, master_seed: int,
              methods=METHODS, workers: int = 1) -> list[SweepResult]:
    """Evaluate every method over one swept parameter.

    Result ordering and reductions are fixed (corpus order, then value
    order, then method order), so serial and pooled runs emit identical
    numbers.
    """
    if param not in SWEEPABLE:
        raise ValueError(f"unknown sweep parameter {param!r}; "
                         f"expected one of {sorted(SWEEPABLE)}")
    if not corpus:
        raise ValueError("empty corpus")
    field_name = SWEEPABLE[param]
    tasks = []
    for value in values:
        point = replace(base, **{field_name: float(value)})
        for method in methods:
            for entry in corpus:
                tasks.append((float(value), method, entry, point,
                              (payoff,), master_seed))
    if workers > 1:
        with multiprocessing.Pool(workers) as pool:
            evals = pool.map(_sweep_task, tasks, chunksize=1)
    else:
        evals = [_sweep_task(t) for t in tasks]
    results = []
    n = len(corpus)
    idx = 0
    for value in values:
        for method in methods:
            chunk = [evals[idx + j][0] for j in range(n)]
            idx += n
            v = sum(e.v_s for e in chunk) / n
            mean_acts = sum(e.n_acts for e in chunk) / n
            total_preds = sum(e.n_preds for e in chunk)
            mean_sd = (sum(e.sd_sum for e in chunk) / total_preds
                       if total_preds else float("nan"))
            results.append(SweepResult(param=param, value=float(value),
                                       method=method, V=v, n_trajectories=n,
                                       mean_acts=mean_acts,
                                       mean_pred_std=mean_sd))
    return results


def write_sweep_csv(results: list[SweepResult], path) -> None:
    """Serialize sweep rows; float fields use shortest round-trip repr."""
    lines = ["param,value,method,V,n_traj,mean_acts,mean_pred_std"]
    for r in results:
        lines.append(",".join([r.param, repr(r.value), r.method, repr(r.V),
                               str(r.n_trajectories), repr(r.mean_acts),
                               repr(r.mean_pred_std)]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
