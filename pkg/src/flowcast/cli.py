"""Command-line entry points.

Subcommands cover the full workflow: ``simulate`` writes synthetic logs,
``align`` estimates and undoes the command-to-effect lag, ``train`` fits a
forward model, ``predict`` dumps a one-frame prediction table, ``eval``
scores models against the baselines (optionally ablating the action features
or sweeping the novelty threshold), ``collide`` calibrates and scores the
collision signal, and ``pipeline`` chains everything into one output
directory with a content-hash manifest.

All artifacts are plain text written atomically with repr-exact floats and
no timestamps, so re-running a command with the same inputs reproduces every
output byte for byte.  Numeric flag defaults can be overridden with
``FLOWCAST_<NAME>`` environment variables (e.g. ``FLOWCAST_SEED=7``).
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys

import numpy as np

from .alignment import AlignmentConfig, apply_delay, estimate_delay
from .collision import (CollisionMonitor, CreditConfig, alarm_events,
                        anticipation_igmm_profile, bump_onsets,
                        calibrate_alarm_threshold)
from .core import InputEncoding, StreamLog, atomic_write_text, fmt_float, read_stream_log, training_arrays, write_stream_log
from .evaluation import ablation_run, fit_split_model
from .forward_model import ForwardModel, default_igmm_config
from . import simulator

__all__ = ["build_parser", "main"]


def _env(name: str, default, cast):
    value = os.environ.get(f"FLOWCAST_{name}")
    if value is None:
        return default
    try:
        return cast(value)
    except ValueError as exc:
        raise SystemExit(f"invalid FLOWCAST_{name}={value!r}: {exc}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowcast", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic sensorimotor log")
    p.add_argument("--kind", choices=["wander", "approach", "rotate"], default="wander")
    p.add_argument("--scenario", help="read a scenario file instead of using --kind")
    p.add_argument("--seed", type=int, default=_env("SEED", 0, int))
    p.add_argument("--duration", type=float, default=_env("DURATION", 120.0, float))
    p.add_argument("--delay", type=int, default=_env("DELAY", 6, int),
                   help="actuation delay in frames")
    p.add_argument("--episodes", type=int, default=20, help="approach: bump episodes")
    p.add_argument("--save-scenario", help="also write the scenario description here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("align", help="estimate the command-to-effect delay of a log")
    p.add_argument("--log", required=True)
    p.add_argument("--max-delay", type=int, default=_env("MAX_DELAY", 15, int))
    p.add_argument("--use-proprio", action="store_true")
    p.add_argument("--aligned-out", help="write the re-synchronized log here")
    p.add_argument("--out", required=True, help="score report path")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("train", help="fit a forward model on a log")
    p.add_argument("--log", required=True)
    p.add_argument("--horizon", type=int, default=_env("HORIZON", 15, int))
    p.add_argument("--delay", type=int, default=0,
                   help="shift actions by this many frames before pairing")
    p.add_argument("--no-action", action="store_true")
    p.add_argument("--no-proprio", action="store_true")
    p.add_argument("--cell-coords", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--train-fraction", type=float, default=1.0,
                   help="train on this leading fraction of pairs only")
    p.add_argument("--novelty", type=float, default=_env("NOVELTY", 2.5, float),
                   help="novelty threshold as a Mahalanobis radius")
    p.add_argument("--update-skip", type=float, default=_env("UPDATE_SKIP", 1e-4, float))
    p.add_argument("--mass-fraction", type=float, default=_env("MASS_FRACTION", 0.9, float))
    p.add_argument("--max-components", type=int, default=None)
    p.add_argument("--progress-every", type=int, default=0,
                   help="report to stderr every N pairs (0 = silent)")
    p.add_argument("--out", required=True, help="model file path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="dump per-cell predictions against truth")
    p.add_argument("--model", required=True)
    p.add_argument("--log", required=True)
    p.add_argument("--start", type=int, default=0, help="first frame to dump")
    p.add_argument("--count", type=int, default=-1,
                   help="frames to dump (-1 = all with a target in the log)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score a model against the baselines")
    p.add_argument("--log", required=True)
    p.add_argument("--horizon", type=int, default=_env("HORIZON", 15, int))
    p.add_argument("--delay", type=int, default=0)
    p.add_argument("--split", type=float, default=0.7, help="train fraction")
    p.add_argument("--novelty", type=float, default=_env("NOVELTY", 2.5, float))
    p.add_argument("--ablate-action", action="store_true",
                   help="also run without action features")
    p.add_argument("--sweep-novelty", nargs="?", const="1.5,2.0,2.5,3.0,3.5,4.0",
                   default=None,
                   help="comma-separated novelty radii to sweep "
                        "(bare flag uses 1.5..4.0 in 6 steps)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("collide", help="collision signal: calibrate and score")
    p.add_argument("--log", required=True, help="log containing bump episodes")
    p.add_argument("--horizon", type=int, default=5)
    p.add_argument("--gamma", type=float, default=_env("GAMMA", 0.9, float))
    p.add_argument("--window", type=int, default=_env("WINDOW", 30, int))
    p.add_argument("--calibrate-fraction", type=float, default=0.5)
    p.add_argument("--lead-s", type=float, default=2.0)
    p.add_argument("--wander-log", help="bump-free log for false-alarm counting")
    p.add_argument("--signals-out", help="write the raw signal trace here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_collide)

    p = sub.add_parser("pipeline", help="simulate, align, train, eval, collide")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=_env("SEED", 0, int))
    p.add_argument("--horizon", type=int, default=_env("HORIZON", 15, int))
    p.add_argument("--duration", type=float, default=_env("DURATION", 120.0, float))
    p.add_argument("--delay", type=int, default=_env("DELAY", 6, int))
    p.add_argument("--episodes", type=int, default=12)
    p.set_defaults(func=cmd_pipeline)

    return parser


# ----------------------------------------------------------------- commands


def _encoding_from_args(args) -> InputEncoding:
    return InputEncoding(
        use_action=not args.no_action,
        use_proprio=not args.no_proprio,
        use_cell_coords=args.cell_coords,
    )


def cmd_simulate(args) -> int:
    if args.scenario:
        scenario = simulator.read_scenario(args.scenario)
    elif args.kind == "wander":
        scenario = simulator.wander_scenario(
            seed=args.seed, duration_s=args.duration, delay=args.delay
        )
    elif args.kind == "approach":
        scenario = simulator.approach_scenario(
            seed=args.seed, episodes=args.episodes, delay=args.delay
        )
    else:
        scenario = simulator.rotate_scenario(
            seed=args.seed, duration_s=args.duration, delay=args.delay
        )
    log = simulator.run(scenario)
    write_stream_log(log, args.out)
    if args.save_scenario:
        simulator.write_scenario(scenario, args.save_scenario)
    bumps = sum(1 for f in log.frames if f.bump)
    print(f"wrote {args.out}: frames={len(log.frames)} bump_frames={bumps}")
    return 0


def cmd_align(args) -> int:
    log = read_stream_log(args.log)
    result = estimate_delay(
        log, AlignmentConfig(max_delay=args.max_delay, use_proprio=args.use_proprio)
    )
    lines = [
        "format=flow-align-report",
        "version=1",
        f"estimated_delay={result.best_delay}",
    ]
    for candidate, score in result.scores:
        lines.append(f"score.{candidate}={fmt_float(score)}")
    for candidate, count in result.n_pairs_per_delay:
        lines.append(f"pairs.{candidate}={count}")
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    if args.aligned_out:
        write_stream_log(apply_delay(log, result.best_delay), args.aligned_out)
    print(f"estimated_delay={result.best_delay}")
    return 0


def _train_model(log: StreamLog, horizon: int, encoding: InputEncoding, igmm_config,
                 progress_every: int = 0) -> ForwardModel:
    X, Y, _, _ = training_arrays(log, horizon, encoding)
    if len(X) == 0:
        raise ValueError("log too short for this horizon")
    model = ForwardModel(
        horizon=horizon,
        encoding=encoding,
        igmm_config=igmm_config,
        grid_shape=(log.header.rows, log.header.cols),
    )
    if progress_every > 0:
        for start in range(0, len(X), progress_every):
            model.learn_pairs(X[start : start + progress_every], Y[start : start + progress_every])
            done = min(start + progress_every, len(X))
            print(
                f"learned {done}/{len(X)} pairs, components={model.mixture.n_components}",
                file=sys.stderr,
            )
    else:
        model.learn_pairs(X, Y)
    model.ensure_ready()
    return model


def cmd_train(args) -> int:
    log = read_stream_log(args.log)
    if args.delay:
        log = apply_delay(log, args.delay)
    config = default_igmm_config(
        novelty_mahalanobis=args.novelty,
        update_skip_threshold=args.update_skip,
        min_mass_fraction_for_prediction=args.mass_fraction,
        max_components=args.max_components,
    )
    if args.train_fraction < 1.0:
        model, _, _, split = fit_split_model(
            log, args.horizon, _encoding_from_args(args), config, args.train_fraction
        )
        print(f"trained on the first {split} pairs", file=sys.stderr)
    else:
        model = _train_model(
            log, args.horizon, _encoding_from_args(args), config, args.progress_every
        )
    model.save(args.out)
    print(
        f"wrote {args.out}: pairs={model.n_pairs} components={model.mixture.n_components}"
    )
    return 0


def cmd_predict(args) -> int:
    model = ForwardModel.load(args.model)
    log = read_stream_log(args.log)
    h = model.horizon
    last = len(log.frames) - h
    if last < 1:
        raise ValueError(f"log of length {len(log.frames)} too short for horizon {h}")
    if not 0 <= args.start < last:
        raise ValueError(f"--start must be in [0, {last - 1}]")
    count = last - args.start if args.count < 0 else min(args.count, last - args.start)

    d = model.encoding.x_dim
    names = (
        ["t", "row", "col"]
        + [f"x{i}" for i in range(d)]
        + ["du_pred", "dv_pred", "du_true", "dv_true",
           "component", "posterior", "loglik_x", "loglik_y"]
    )
    lines = ["\t".join(names)]
    mixture = model.mixture
    for t in range(args.start, args.start + count):
        frame = log.frames[t]
        cols = frame.flow.cols
        x = model.assemble_inputs(frame)
        deltas, comps, posts = model.predict_batch(x)
        true = (log.frames[t + h].flow.cells - frame.flow.cells).reshape(-1, 2)
        idx = np.arange(len(comps))
        lx = mixture.log_density_x(model.feature_scales.apply(x))[idx, comps]
        ly = mixture.log_density_y(true)[idx, comps]
        for i in range(x.shape[0]):
            rec = (
                [str(t), str(i // cols), str(i % cols)]
                + [fmt_float(v) for v in x[i]]
                + [fmt_float(deltas[i, 0]), fmt_float(deltas[i, 1]),
                   fmt_float(true[i, 0]), fmt_float(true[i, 1]),
                   str(int(comps[i])), fmt_float(posts[i]),
                   fmt_float(lx[i]), fmt_float(ly[i])]
            )
            lines.append("\t".join(rec))
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    print(f"wrote {args.out}: {len(lines) - 1} records")
    return 0


def _eval_blocks(log: StreamLog, horizon: int, split: float, novelties, ablate: bool):
    runs = []
    for novelty in novelties:
        variants = [("yes", InputEncoding())]
        if ablate:
            variants.append(("no", InputEncoding(use_action=False)))
        for label, encoding in variants:
            config = default_igmm_config(novelty_mahalanobis=novelty)
            _, report = ablation_run(
                log, horizon, encoding=encoding, igmm_config=config, train_fraction=split
            )
            runs.append((label, novelty, report))
    return runs


def cmd_eval(args) -> int:
    log = read_stream_log(args.log)
    if args.delay:
        log = apply_delay(log, args.delay)
    if args.sweep_novelty:
        novelties = [float(v) for v in args.sweep_novelty.split(",") if v.strip()]
    else:
        novelties = [args.novelty]
    runs = _eval_blocks(log, args.horizon, args.split, novelties, args.ablate_action)
    blocks = []
    for label, novelty, report in runs:
        blocks.append(f"# run action={label} novelty={fmt_float(novelty)}\n" + report.to_text())
        print(
            f"action={label} novelty={fmt_float(novelty)} "
            f"aepe={fmt_float(report.aepe_model)} reduction={fmt_float(report.relative_reduction)}"
        )
    atomic_write_text(args.out, "\n".join(blocks))
    return 0


def _collision_report(log, signals, threshold, pre_frames) -> list:
    onsets = bump_onsets([f.bump for f in log.frames])
    lines = [
        "format=flow-collision-report",
        "version=1",
        f"threshold={fmt_float(threshold)}",
        f"bump_onsets={len(onsets)}",
    ]
    detected = 0
    for k, onset in enumerate(onsets):
        lo = max(0, onset - pre_frames)
        hits = np.nonzero(signals[lo:onset] >= threshold)[0]
        lead = int(onset - (lo + hits[0])) if hits.size else -1
        detected += lead >= 0
        lines.append(f"lead_frames.{k}={lead}")
    lines.insert(4, f"detected={detected}")
    return lines


def cmd_collide(args) -> int:
    log = read_stream_log(args.log)
    model = ForwardModel(
        horizon=args.horizon,
        grid_shape=(log.header.rows, log.header.cols),
        igmm_config=anticipation_igmm_profile(),
    )
    monitor = CollisionMonitor(model, CreditConfig(window=args.window, gamma=args.gamma))
    signals = monitor.run(log)
    n_cal = max(int(len(signals) * args.calibrate_fraction), 1)
    bumps = np.array([f.bump for f in log.frames])
    threshold = calibrate_alarm_threshold(
        signals[:n_cal], bumps[:n_cal], log.header.frame_rate_hz, pre_s=args.lead_s
    )
    pre_frames = int(round(args.lead_s * log.header.frame_rate_hz))
    lines = _collision_report(log, signals, threshold, pre_frames)

    if args.wander_log:
        quiet_log = read_stream_log(args.wander_log)
        quiet_monitor = CollisionMonitor(model, monitor.credit, learn=False)
        quiet_signals = quiet_monitor.run(quiet_log)
        false_events = [
            (s, e) for s, e in alarm_events(quiet_signals, threshold)
        ]
        minutes = len(quiet_log.frames) / quiet_log.header.frame_rate_hz / 60.0
        lines.append(f"quiet_alarm_events={len(false_events)}")
        lines.append(f"quiet_minutes={fmt_float(minutes)}")
        lines.append(
            f"quiet_alarms_per_minute={fmt_float(len(false_events) / minutes if minutes else 0.0)}"
        )

    atomic_write_text(args.out, "\n".join(lines) + "\n")
    if args.signals_out:
        trace = ["t\tsignal\talarm\tbump"] + [
            f"{f.t}\t{fmt_float(sig)}\t{int(sig >= threshold)}\t{int(f.bump)}"
            for f, sig in zip(log.frames, signals)
        ]
        atomic_write_text(args.signals_out, "\n".join(trace) + "\n")
    print(f"wrote {args.out}: threshold={fmt_float(threshold)}")
    return 0


def cmd_pipeline(args) -> int:
    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    paths = {}

    wander = simulator.run(
        simulator.wander_scenario(seed=args.seed, duration_s=args.duration, delay=args.delay)
    )
    paths["wander.log"] = os.path.join(out, "wander.log")
    write_stream_log(wander, paths["wander.log"])

    approach = simulator.run(
        simulator.approach_scenario(seed=args.seed + 1, episodes=args.episodes, delay=args.delay)
    )
    paths["approach.log"] = os.path.join(out, "approach.log")
    write_stream_log(approach, paths["approach.log"])

    result = estimate_delay(wander, AlignmentConfig(max_delay=max(args.delay + 4, 8)))
    align_lines = [f"estimated_delay={result.best_delay}"] + [
        f"score.{d}={fmt_float(s)}" for d, s in result.scores
    ]
    paths["align.txt"] = os.path.join(out, "align.txt")
    atomic_write_text(paths["align.txt"], "\n".join(align_lines) + "\n")
    print(f"pipeline: estimated_delay={result.best_delay}")

    aligned = apply_delay(wander, result.best_delay)
    model, report = ablation_run(aligned, args.horizon)
    paths["model.txt"] = os.path.join(out, "model.txt")
    model.save(paths["model.txt"])
    paths["eval.txt"] = os.path.join(out, "eval.txt")
    atomic_write_text(paths["eval.txt"], report.to_text())
    print(
        f"pipeline: aepe={fmt_float(report.aepe_model)} "
        f"reduction={fmt_float(report.relative_reduction)}"
    )

    collide_model = ForwardModel(
        horizon=5,
        grid_shape=(approach.header.rows, approach.header.cols),
        igmm_config=anticipation_igmm_profile(),
    )
    monitor = CollisionMonitor(collide_model, CreditConfig())
    signals = monitor.run(approach)
    bumps = np.array([f.bump for f in approach.frames])
    n_cal = len(signals) // 2
    threshold = calibrate_alarm_threshold(
        signals[:n_cal], bumps[:n_cal], approach.header.frame_rate_hz
    )
    pre_frames = int(round(2.0 * approach.header.frame_rate_hz))
    paths["collide.txt"] = os.path.join(out, "collide.txt")
    atomic_write_text(
        paths["collide.txt"],
        "\n".join(_collision_report(approach, signals, threshold, pre_frames)) + "\n",
    )

    manifest = []
    for name in sorted(paths):
        with open(paths[name], "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
        manifest.append(f"{digest}  {name}")
    atomic_write_text(os.path.join(out, "manifest.txt"), "\n".join(manifest) + "\n")
    print(f"pipeline: wrote {len(paths) + 1} artifacts to {out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surface a clean one-line error, exit nonzero
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
