"""Act-or-wait decision engine for a single geofence.

Combines the probability of being inside an axis-aligned square fence with
a payoff matrix to find the earliest profitable activation time, scanning
forward until the arrival-process cutoff.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import InvalidPayoff
from .predict import FittedPredictor, GaussianLocation, predict_many
from .trajdata import PoissonRate

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class Geofence:
    """Axis-aligned square region on the local plane."""

    center: tuple[float, float]
    half_width: float

    def __post_init__(self):
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        cx, cy = self.center
        hw = self.half_width
        return cx - hw, cx + hw, cy - hw, cy + hw

    def contains(self, x: float, y: float) -> bool:
        """Half-open containment [lo, hi) per axis."""
        x_lo, x_hi, y_lo, y_hi = self.bounds
        return (x_lo <= x < x_hi) and (y_lo <= y < y_hi)


@dataclass(frozen=True)
class PayoffMatrix:
    """Values of wait/act crossed with in/out; wait-while-out is fixed at 0."""

    alpha: float   # wait while inside
    beta: float    # act while inside
    delta: float   # act while outside

    def __post_init__(self):
        if self.delta + self.alpha - self.beta >= 0:
            raise InvalidPayoff(
                f"delta + alpha - beta = {self.delta + self.alpha - self.beta}"
                " must be negative")
        if self.beta <= 0 or self.alpha > 0 or self.delta > 0:
            warnings.warn("payoff outside the usual regime "
                          "(beta > 0, alpha <= 0, delta <= 0)", stacklevel=2)


ADVERTISING = PayoffMatrix(alpha=-0.5, beta=1.0, delta=-0.25)
ALERT_ZONE = PayoffMatrix(alpha=-2.0, beta=1.0, delta=-0.25)
PAYOFF_PRESETS = {"advertising": ADVERTISING, "alert-zone": ALERT_ZONE}


@dataclass(frozen=True)
class CutoffPolicy:
    """Prediction is abandoned once a new measurement is likely enough."""

    epsilon: float
    rate: PoissonRate
    scan_step: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must be in (0, 1)")
        if self.scan_step <= 0:
            raise ValueError("scan_step must be positive")


@dataclass(frozen=True)
class DecisionOutcome:
    """Result of one forward scan. ``t_hat`` is None when we never act."""

    t_hat: float | None
    t_star: float
    p_at_act: float | None
    scanned_steps: int

    @property
    def acted(self) -> bool:
        return self.t_hat is not None


def normal_cdf(z):
    return 0.5 * (1.0 + erf(np.asarray(z, dtype=float) / _SQRT2))


def axis_interval_prob(lo, hi, mu, sd):
    """P(lo <= N(mu, sd^2) <= hi), broadcast over array inputs."""
    return normal_cdf((hi - mu) / sd) - normal_cdf((lo - mu) / sd)


def prob_inside(loc: GaussianLocation, fence: Geofence) -> float:
    """Mass of an axis-independent Gaussian inside a square fence.

    Closed form: the double integral factors into per-axis CDF differences.
    """
    x_lo, x_hi, y_lo, y_hi = fence.bounds
    (mu_x, mu_y), (sd_x, sd_y) = loc.mean, loc.std
    px = axis_interval_prob(x_lo, x_hi, mu_x, sd_x)
    py = axis_interval_prob(y_lo, y_hi, mu_y, sd_y)
    return float(np.clip(px * py, 0.0, 1.0))


def expected_values(p: float, payoff: PayoffMatrix) -> tuple[float, float]:
    """(expected value of waiting, expected value of acting) at inside-probability p."""
    e_wait = payoff.alpha * p
    e_act = payoff.beta * p + payoff.delta * (1.0 - p)
    return e_wait, e_act


def act_threshold(payoff: PayoffMatrix) -> float:
    """Inside-probability above which acting beats waiting."""
    denom = payoff.delta + payoff.alpha - payoff.beta
    if denom >= 0:
        raise InvalidPayoff("delta + alpha - beta must be negative")
    return payoff.delta / denom


def poisson_cutoff(policy: CutoffPolicy) -> float:
    """Seconds until a new measurement arrived with probability >= 1 - epsilon."""
    return -math.log(policy.epsilon) / policy.rate.lam * policy.rate.delta_t


def prob_measurement_by(policy: CutoffPolicy, t: float) -> float:
    """Probability that at least one new measurement arrives within t seconds."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return 1.0 - math.exp(-policy.rate.lam * t / policy.rate.delta_t)


def scan_offsets(policy: CutoffPolicy, t_star: float | None = None) -> np.ndarray:
    """Forward-scan grid: multiples of scan_step from 0 up to the cutoff."""
    if t_star is None:
        t_star = poisson_cutoff(policy)
    n = int(math.floor(t_star / policy.scan_step * (1.0 + 1e-12)))
    return np.arange(n + 1, dtype=float) * policy.scan_step


def find_act_time(pred: FittedPredictor, fence: Geofence, payoff: PayoffMatrix,
                  policy: CutoffPolicy) -> DecisionOutcome:
    """Earliest scanned offset where acting beats waiting, if any.

    The scan starts at offset 0 so a measurement already inside the fence
    triggers immediately, and stops at the arrival cutoff; ties at the
    threshold mean wait.
    """
    t_star = poisson_cutoff(policy)
    dts = scan_offsets(policy, t_star)
    mu_x, mu_y, sd_x, sd_y = predict_many(pred, dts)
    x_lo, x_hi, y_lo, y_hi = fence.bounds
    p = (axis_interval_prob(x_lo, x_hi, mu_x, sd_x)
         * axis_interval_prob(y_lo, y_hi, mu_y, sd_y))
    above = p > act_threshold(payoff)
    hits = np.nonzero(above)[0]
    if hits.size == 0:
        return DecisionOutcome(t_hat=None, t_star=t_star, p_at_act=None,
                               scanned_steps=len(dts))
    first = int(hits[0])
    return DecisionOutcome(t_hat=float(dts[first]), t_star=t_star,
                           p_at_act=float(p[first]), scanned_steps=first + 1)
