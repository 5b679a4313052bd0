"""Command-line entry point: preprocess, synth, simulate, sweep.

Every command writes a manifest.json with the echoed configuration, seeds,
and input digests so runs can be reproduced bit-exactly.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from .config import RunConfig, build_config, config_as_dict
from .decide import CutoffPolicy, Geofence, poisson_cutoff
from .errors import (
    ConfigError,
    DegenerateMean,
    DuplicateTimestamp,
    EmptyTrajectory,
    GeoactError,
    IllConditioned,
    InvalidPayoff,
    InvalidRate,
    NoTrainingData,
    ParseError,
    RateTooHigh,
    TooShort,
)
from .evalharness import (
    METHODS,
    CorpusEntry,
    EvalParams,
    decision_trace,
    derive_seed,
    run_sweep,
    write_sweep_csv,
)
from .predict import KIND_GP, KIND_GP_MEANFUNC, KIND_PW, FitSettings, PredictorConfig
from .synth import make_synthetic_corpus, to_raw_fixes
from .trajdata import (
    PoissonRate,
    bernoulli_subsample,
    dominant_gap,
    estimate_lambda,
    filter_short,
    load_csv,
    load_local_csv,
    project_to_local,
    split_on_gap,
    train_test_split,
    write_csv,
    write_local_csv,
)

__version__ = "0.1.0"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_DATA_ERRORS = (ParseError, EmptyTrajectory, DuplicateTimestamp, TooShort,
                RateTooHigh, InvalidRate, NoTrainingData, FileNotFoundError,
                IsADirectoryError, NotADirectoryError)
_NUMERIC_ERRORS = (IllConditioned, DegenerateMean, np.linalg.LinAlgError,
                   FloatingPointError)

METHOD_TOKENS = {"pw": KIND_PW, "gp": KIND_GP, "gp-meanfunc": KIND_GP_MEANFUNC}


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; we reserve 2 for data."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, config: RunConfig,
                    inputs: list[Path], outputs: list[str],
                    extra: dict | None = None,
                    started: float | None = None) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "config": config_as_dict(config),
        "seed_derivation": "sha256(master_seed|trajectory_id|part), first 8 bytes",
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": sorted(outputs),
    }
    if started is not None:
        manifest["wall_clock_s"] = round(time.monotonic() - started, 3)
    if extra:
        manifest.update(extra)
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="key=value config file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None, dest="master_seed")
    parser.add_argument("--lambda", type=float, default=None, dest="lam",
                        help="measurements per reference interval")
    parser.add_argument("--epsilon", type=float, default=None)
    parser.add_argument("--cell-size", type=float, default=None,
                        dest="cell_size")
    parser.add_argument("--lookback", type=float, default=None)
    parser.add_argument("--sigma-m", type=float, default=None, dest="sigma_m")
    parser.add_argument("--payoff", default=None,
                        help="preset name or alpha,beta,delta")
    parser.add_argument("--mean-mode", default=None, dest="mean_mode",
                        choices=["zero", "linear"])
    parser.add_argument("--scan-step", type=float, default=None,
                        dest="scan_step")
    parser.add_argument("--margin", type=float, default=None)
    parser.add_argument("--delta-t", type=float, default=None, dest="delta_t")
    parser.add_argument("--train-span", type=float, default=None,
                        dest="train_span")
    parser.add_argument("--workers", type=int, default=None)


_CONFIG_KEYS = ("master_seed", "lam", "epsilon", "cell_size", "lookback",
                "sigma_m", "payoff", "mean_mode", "scan_step", "margin",
                "delta_t", "train_span", "workers")


def _config_from_args(args) -> RunConfig:
    overrides = {key: getattr(args, key) for key in _CONFIG_KEYS
                 if getattr(args, key, None) is not None}
    return build_config(args.config, overrides)


def _fit_settings(config: RunConfig) -> FitSettings:
    return FitSettings(max_evals=config.fit_max_evals)


def _predictor_config(config: RunConfig) -> PredictorConfig:
    return PredictorConfig(sigma_m=config.sigma_m, lookback=config.lookback,
                           mean_mode=config.mean_mode,
                           fit=_fit_settings(config))


def _eval_params(config: RunConfig) -> EvalParams:
    return EvalParams(lam=config.lam, delta_t=config.delta_t,
                      epsilon=config.epsilon, scan_step=config.scan_step,
                      cell_size=config.cell_size, margin=config.margin,
                      sigma_m=config.sigma_m, lookback=config.lookback,
                      fit=_fit_settings(config))


def cmd_preprocess(args) -> int:
    config = _config_from_args(args)
    in_path = Path(args.input)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()
    fixes = load_csv(in_path)
    by_user: dict[str, list] = {}
    for f in fixes:
        by_user.setdefault(f.user_id, []).append(f)
    stats = {"input": str(in_path), "n_fixes": len(fixes), "users": {}}
    outputs = []
    for user in sorted(by_user):
        user_fixes = sorted(by_user[user], key=lambda f: f.timestamp)
        deduped = [user_fixes[0]]
        for f in user_fixes[1:]:
            if f.timestamp != deduped[-1].timestamp:
                deduped.append(f)
        user_stats = {"n_fixes": len(deduped), "tau": None, "segments": []}
        stats["users"][user] = user_stats
        if len(deduped) < 2:
            continue
        traj = project_to_local(deduped, (deduped[0].lat, deduped[0].lon))
        tau = dominant_gap(traj)
        user_stats["tau"] = tau
        segments = filter_short(split_on_gap(traj, tau),
                                min_duration=config.min_duration,
                                min_speed=config.min_speed)
        for k, seg in enumerate(segments):
            try:
                split = train_test_split(seg, config.train_span)
            except TooShort:
                continue
            name = f"seg_{user}_{k:03d}.csv"
            merged_t = np.concatenate([split.train.t, split.test.t])
            merged_x = np.concatenate([split.train.x, split.test.x])
            merged_y = np.concatenate([split.train.y, split.test.y])
            from .trajdata import Trajectory
            write_local_csv(Trajectory(merged_t, merged_x, merged_y),
                            out_dir / name)
            outputs.append(name)
            user_stats["segments"].append({
                "file": name,
                "n_points": len(seg),
                "duration_s": seg.duration,
                "lambda_hat": estimate_lambda(seg, config.delta_t).lam,
                "train_span_s": config.train_span,
            })
    stats["n_segments"] = len(outputs)
    with open(out_dir / "stats.json", "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(out_dir, "preprocess", config, [in_path],
                    outputs + ["stats.json"], started=started)
    print(f"preprocess: {len(outputs)} segment(s) from "
          f"{len(by_user)} user(s) -> {out_dir}")
    return EXIT_OK


def cmd_synth(args) -> int:
    config = _config_from_args(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()
    kinds = tuple(k.strip() for k in args.kinds.split(",") if k.strip())
    lat0, lon0 = (float(v) for v in args.origin.split(","))
    speed_lo, speed_hi = (float(v) for v in args.speed_range.split(","))
    corpus = make_synthetic_corpus(
        n=args.n, seed=config.master_seed, duration=args.duration,
        tau=args.tau, jitter_sigma=args.jitter, kinds=kinds,
        speed_range=(speed_lo, speed_hi))
    all_fixes = []
    for traj_id, traj in corpus:
        all_fixes.extend(to_raw_fixes(traj, traj_id, (lat0, lon0)))
    out_csv = out_dir / "synthetic.csv"
    write_csv(all_fixes, out_csv)
    _write_manifest(out_dir, "synth", config, [], ["synthetic.csv"],
                    extra={"synth": {"n": args.n, "duration": args.duration,
                                     "tau": args.tau, "jitter": args.jitter,
                                     "kinds": list(kinds),
                                     "origin": [lat0, lon0],
                                     "speed_range": [speed_lo, speed_hi]}},
                    started=started)
    print(f"synth: wrote {len(all_fixes)} fixes for {len(corpus)} "
          f"trajectories -> {out_csv}")
    return EXIT_OK


def _load_segment(path: Path, config: RunConfig):
    segment = load_local_csv(path)
    tau = dominant_gap(segment)
    split = train_test_split(segment, config.train_span)
    return CorpusEntry(traj_id=path.stem, split=split, tau=tau)


def cmd_simulate(args) -> int:
    config = _config_from_args(args)
    in_path = Path(args.input)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()
    entry = _load_segment(in_path, config)
    try:
        cx, cy, hw = (float(v) for v in args.fence.split(","))
    except ValueError:
        raise ConfigError(f"--fence expects cx,cy,half_width, got {args.fence!r}")
    fence = Geofence(center=(cx, cy), half_width=hw)
    kind = METHOD_TOKENS[args.method]
    rate = PoissonRate(lam=config.lam, delta_t=config.delta_t)
    sparse_train = bernoulli_subsample(
        entry.split.train, rate, entry.tau,
        derive_seed(config.master_seed, entry.traj_id, "train"))
    sparse_test = bernoulli_subsample(
        entry.split.test, rate, entry.tau,
        derive_seed(config.master_seed, entry.traj_id, "test"))
    policy = CutoffPolicy(epsilon=config.epsilon, rate=rate,
                          scan_step=config.scan_step)
    score, rows = decision_trace(entry.split, sparse_train, sparse_test,
                                 fence, kind, _predictor_config(config),
                                 config.payoff_matrix(), policy)
    trace_path = out_dir / "trace.csv"
    with open(trace_path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t_i", "t_star", "t_hat", "p_at_act", "decision",
                         "value"])
        for row in rows:
            acted = row.t_hat_abs is not None
            writer.writerow([
                repr(row.t_i), repr(row.t_star),
                repr(row.t_hat_abs) if acted else "NEVER",
                repr(row.p_at_act) if acted else "",
                "act" if acted else "wait",
                repr(row.value),
            ])
    _write_manifest(out_dir, "simulate", config, [in_path], ["trace.csv"],
                    extra={"fence": [cx, cy, hw], "method": args.method,
                           "V": score.v_fence_traj,
                           "latched_at": score.latched_at},
                    started=started)
    print(f"simulate: V = {score.v_fence_traj} over {len(rows)} "
          f"measurement(s) -> {trace_path}")
    return EXIT_OK


def _t_star_table(config: RunConfig) -> list[str]:
    lines = ["epsilon,lambda,t_star"]
    for eps in config.epsilon_values:
        for lam in config.lambda_values:
            policy = CutoffPolicy(
                epsilon=eps, rate=PoissonRate(lam=lam, delta_t=config.delta_t))
            lines.append(f"{repr(float(eps))},{repr(float(lam))},"
                         f"{repr(poisson_cutoff(policy))}")
    return lines


def cmd_sweep(args) -> int:
    config = _config_from_args(args)
    in_dir = Path(args.input)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()
    seg_paths = sorted(in_dir.glob("seg_*.csv")) or sorted(in_dir.glob("*.csv"))
    if not seg_paths:
        raise EmptyTrajectory(f"no segment CSVs under {in_dir}")
    corpus = [_load_segment(p, config) for p in seg_paths]
    params = [p.strip() for p in args.params.split(",") if p.strip()]
    payoff = config.payoff_matrix()
    base = _eval_params(config)
    outputs = []
    timings = {}
    for param in params:
        t0 = time.monotonic()
        values = config.sweep_values(param)
        results = run_sweep(corpus, param, values, base, payoff,
                            config.master_seed, methods=METHODS,
                            workers=config.workers)
        name = f"sweep_{param}.csv"
        write_sweep_csv(results, out_dir / name)
        outputs.append(name)
        timings[param] = round(time.monotonic() - t0, 3)
        if param == "epsilon":
            table = _t_star_table(config)
            with open(out_dir / "t_star_table.csv", "w", encoding="utf-8",
                      newline="\n") as fh:
                fh.write("\n".join(table) + "\n")
            outputs.append("t_star_table.csv")
    _write_manifest(out_dir, "sweep", config, seg_paths, outputs,
                    extra={"params": params, "n_trajectories": len(corpus),
                           "timings_s": timings},
                    started=started)
    print(f"sweep: {len(params)} parameter(s) x {len(corpus)} trajectories "
          f"-> {out_dir}")
    return EXIT_OK


def make_parser() -> _Parser:
    parser = _Parser(prog="geoact",
                     description="Geofence activation decisions from sparse, "
                                 "sporadic location measurements")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_pre = sub.add_parser("preprocess", parents=[], help="raw CSV -> uniform "
                           "local-frame segments + stats")
    p_pre.add_argument("--input", required=True, help="raw user_id,t,lat,lon CSV")
    _add_common(p_pre)
    p_pre.set_defaults(func=cmd_preprocess)

    p_synth = sub.add_parser("synth", help="generate a synthetic raw corpus")
    p_synth.add_argument("--n", type=int, default=50)
    p_synth.add_argument("--duration", type=float, default=720.0)
    p_synth.add_argument("--tau", type=float, default=5.0)
    p_synth.add_argument("--jitter", type=float, default=2.0)
    p_synth.add_argument("--kinds", default="constant,turn")
    p_synth.add_argument("--speed-range", default="8,25", dest="speed_range")
    p_synth.add_argument("--origin", default="47.6062,-122.3321",
                         help="lat,lon of the local origin")
    _add_common(p_synth)
    p_synth.set_defaults(func=cmd_synth)

    p_sim = sub.add_parser("simulate", help="single trajectory + fence "
                           "decision trace")
    p_sim.add_argument("--input", required=True, help="local-frame segment CSV")
    p_sim.add_argument("--fence", required=True, help="cx,cy,half_width meters")
    p_sim.add_argument("--method", default="gp", choices=sorted(METHOD_TOKENS))
    _add_common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_sweep = sub.add_parser("sweep", help="parameter sweeps over a corpus")
    p_sweep.add_argument("--input", required=True,
                         help="directory of segment CSVs")
    p_sweep.add_argument("--params",
                         default="lambda,epsilon,cell_size,lookback,sigma_m")
    _add_common(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidPayoff) as exc:
        print(f"geoact: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        print(f"geoact: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except _NUMERIC_ERRORS as exc:
        print(f"geoact: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
