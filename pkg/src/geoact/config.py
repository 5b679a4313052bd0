"""Run configuration: defaults, flat key=value files, CLI overrides.

The file format is deliberately dependency-free and diff-friendly: one
``key = value`` per line, ``#`` comments, lists comma-separated. Every key
mirrors a RunConfig field; command-line flags override file values.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace

from .decide import PAYOFF_PRESETS, PayoffMatrix
from .errors import ConfigError


@dataclass(frozen=True)
class RunConfig:
    """All knobs of a run, with the experiment defaults baked in."""

    master_seed: int = 0
    # predictor
    sigma_m: float = 3.0
    lookback: float = 300.0
    mean_mode: str = "zero"
    fit_max_evals: int = 200
    # decision
    payoff: str = "advertising"
    epsilon: float = 0.2
    scan_step: float = 1.0
    # data / harness
    lam: float = 0.5
    delta_t: float = 60.0
    cell_size: float = 1000.0
    margin: float = 18000.0
    train_span: float = 300.0
    min_duration: float = 600.0
    min_speed: float = 5.0
    # sweep ranges
    lambda_values: tuple = (0.25, 0.5, 1.0, 2.0, 4.0, 8.0)
    epsilon_values: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    cell_size_values: tuple = (500.0, 1000.0, 1500.0, 2000.0, 2500.0)
    lookback_values: tuple = (200.0, 300.0, 400.0, 500.0, 600.0)
    sigma_m_values: tuple = (3.0, 10.0, 30.0, 100.0, 500.0)
    workers: int = os.cpu_count() or 1

    def payoff_matrix(self) -> PayoffMatrix:
        return resolve_payoff(self.payoff)

    def sweep_values(self, param: str) -> tuple:
        table = {
            "lambda": self.lambda_values,
            "epsilon": self.epsilon_values,
            "cell_size": self.cell_size_values,
            "lookback": self.lookback_values,
            "sigma_m": self.sigma_m_values,
        }
        if param not in table:
            raise ConfigError(f"no sweep range for parameter {param!r}")
        return table[param]


def resolve_payoff(text: str) -> PayoffMatrix:
    """Preset name or an explicit ``alpha,beta,delta`` triple."""
    if text in PAYOFF_PRESETS:
        return PAYOFF_PRESETS[text]
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(
            f"payoff must be one of {sorted(PAYOFF_PRESETS)} or "
            f"'alpha,beta,delta', got {text!r}")
    try:
        alpha, beta, delta = (float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"non-numeric payoff triple {text!r}") from None
    return PayoffMatrix(alpha=alpha, beta=beta, delta=delta)


def _coerce(name: str, raw: str, like):
    try:
        if isinstance(like, bool):
            return raw.strip().lower() in ("1", "true", "yes")
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, tuple):
            return tuple(float(p) for p in raw.split(",") if p.strip())
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def load_config_file(path) -> dict:
    """Parse a flat key=value file into raw string values."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, value = stripped.partition("=")
            values[key.strip()] = value.strip()
    return values


def build_config(file_path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults <- config file <- CLI overrides, in that order."""
    config = RunConfig()
    known = {f.name: getattr(config, f.name) for f in fields(RunConfig)}
    updates = {}
    if file_path is not None:
        for key, raw in load_config_file(file_path).items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            updates[key] = _coerce(key, raw, known[key])
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        updates[key] = (_coerce(key, value, known[key])
                        if isinstance(value, str) else value)
    return replace(config, **updates)


def config_as_dict(config: RunConfig) -> dict:
    out = {}
    for f in fields(RunConfig):
        value = getattr(config, f.name)
        out[f.name] = list(value) if isinstance(value, tuple) else value
    return out
