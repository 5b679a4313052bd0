"""Synthetic trajectory generators.

Stand-ins for real high-density traces: uniform-gap driving tracks with
Gaussian position jitter, in the local metric frame. Generation is fully
deterministic given a seed.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError
from .trajdata import RawFix, Trajectory, unproject_from_local

KINDS = ("constant", "turn", "stopgo")


def _time_grid(duration: float, tau: float, t0: float) -> np.ndarray:
    if duration <= 0 or tau <= 0:
        raise ConfigError("duration and tau must be positive")
    n = int(round(duration / tau)) + 1
    return t0 + np.arange(n, dtype=float) * tau


def _jittered(t, x, y, jitter_sigma, rng) -> Trajectory:
    if jitter_sigma < 0:
        raise ConfigError("jitter sigma must be >= 0")
    if jitter_sigma > 0:
        x = x + rng.normal(0.0, jitter_sigma, x.size)
        y = y + rng.normal(0.0, jitter_sigma, y.size)
    return Trajectory(t, x, y, gap=tau_of(t))


def tau_of(t: np.ndarray) -> float:
    return float(t[1] - t[0]) if t.size > 1 else 0.0


def constant_velocity_track(duration: float, tau: float, speed: float,
                            heading_deg: float, jitter_sigma: float,
                            rng: np.random.Generator,
                            t0: float = 0.0) -> Trajectory:
    """Straight drive at constant speed from the local origin."""
    t = _time_grid(duration, tau, t0)
    h = math.radians(heading_deg)
    rel = t - t[0]
    x = speed * math.cos(h) * rel
    y = speed * math.sin(h) * rel
    return _jittered(t, x, y, jitter_sigma, rng)


def turning_track(duration: float, tau: float, speed: float,
                  heading_deg: float, turn_rate_deg_s: float,
                  jitter_sigma: float, rng: np.random.Generator,
                  t0: float = 0.0) -> Trajectory:
    """Constant speed along a steady arc (piecewise-straight between samples)."""
    t = _time_grid(duration, tau, t0)
    headings = np.radians(heading_deg + turn_rate_deg_s * (t - t[0]))
    step = speed * tau
    x = np.concatenate([[0.0], np.cumsum(step * np.cos(headings[:-1]))])
    y = np.concatenate([[0.0], np.cumsum(step * np.sin(headings[:-1]))])
    return _jittered(t, x, y, jitter_sigma, rng)


def stop_and_go_track(duration: float, tau: float, speed: float,
                      heading_deg: float, move_span: float, stop_span: float,
                      jitter_sigma: float, rng: np.random.Generator,
                      t0: float = 0.0) -> Trajectory:
    """Alternating move/stop phases along a straight line."""
    if move_span <= 0 or stop_span < 0:
        raise ConfigError("move_span must be > 0 and stop_span >= 0")
    t = _time_grid(duration, tau, t0)
    rel = t - t[0]
    period = move_span + stop_span
    phase = np.mod(rel, period)
    moved = np.floor(rel / period) * move_span + np.minimum(phase, move_span)
    h = math.radians(heading_deg)
    x = speed * moved * math.cos(h)
    y = speed * moved * math.sin(h)
    return _jittered(t, x, y, jitter_sigma, rng)


def to_raw_fixes(traj: Trajectory, user_id: str,
                 origin: tuple[float, float]) -> list[RawFix]:
    """Map a local-frame track back to lat/lon fixes around ``origin``."""
    lat, lon = unproject_from_local(traj.x, traj.y, origin)
    return [RawFix(user_id=user_id, timestamp=float(t), lat=float(la),
                   lon=float(lo))
            for t, la, lo in zip(traj.t, lat, lon)]


def make_synthetic_corpus(n: int, seed: int, duration: float = 720.0,
                          tau: float = 5.0, jitter_sigma: float = 2.0,
                          kinds: tuple[str, ...] = ("constant", "turn"),
                          speed_range: tuple[float, float] = (8.0, 25.0),
                          ) -> list[tuple[str, Trajectory]]:
    """Deterministic mixed corpus of driving tracks, round-robin over kinds."""
    for kind in kinds:
        if kind not in KINDS:
            raise ConfigError(f"unknown track kind {kind!r}")
    corpus = []
    for i in range(n):
        rng = np.random.default_rng((seed, i))
        kind = kinds[i % len(kinds)]
        speed = rng.uniform(*speed_range)
        heading = rng.uniform(0.0, 360.0)
        if kind == "constant":
            traj = constant_velocity_track(duration, tau, speed, heading,
                                           jitter_sigma, rng)
        elif kind == "turn":
            turn_rate = rng.uniform(0.3, 1.5) * rng.choice([-1.0, 1.0])
            traj = turning_track(duration, tau, speed, heading, turn_rate,
                                 jitter_sigma, rng)
        else:
            traj = stop_and_go_track(duration, tau, speed, heading,
                                     move_span=120.0, stop_span=60.0,
                                     jitter_sigma=jitter_sigma, rng=rng)
        corpus.append((f"{kind}-{i:03d}", traj))
    return corpus
