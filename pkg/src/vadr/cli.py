"""Command-line runner: ``vadr {train,eval,pose-eval,policy-sweep,replay}``.

Exit codes: 0 success, 2 configuration or input error, 3 runtime fault.
All outputs are deterministic given the seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import replace

import numpy as np

from vadr import pose as posegeom
from vadr.adr import UNPINNED, AdrState, sample_values
from vadr.config import ConfigError, ExperimentConfig, from_ini, load, to_ini
from vadr.curriculum import CurriculumHistory, rollout_episodes, run_curriculum
from vadr.env import (
    TEST_THRESHOLD,
    TRAIN_THRESHOLD,
    ReorientEnvBatch,
    RewardTerms,
    TrajectoryRecorder,
    read_trajectories,
    replay_count,
)
from vadr.policy import expected_consecutive_successes
from vadr.randomisation import DEPLOY_EMA_FACTOR, RandomisationPipeline
from vadr.stats import TrialSummary, format_frame_hold_table, format_trials_table

logger = logging.getLogger("vadr")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
FRAME_HOLD_SWEEP = (0, 5, 10, 20)

BOUNDS_SCHEMA = "vadr.bounds/1"
NPD_SCHEMA = "vadr.npd/1"
EPISODES_SCHEMA = "vadr.episodes/1"
REWARDS_SCHEMA = "vadr.rewards/1"
UPDATES_SCHEMA = "vadr.adr_updates/1"
SWEEP_SCHEMA = "vadr.policy_sweep/1"
EPISODE_FIELDS = ("step", "env", "episode", "mode", "successes", "length", "reason")


class InputError(Exception):
    """Unreadable or malformed input file (exit code 2)."""


def _num(v) -> str:
    return repr(float(v))


def _csv_writer(fh, schema, header):
    fh.write(f"# schema: {schema}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    return w


def _outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _resolve(args) -> ExperimentConfig:
    cfg = load(args.config) if args.config else from_ini("")
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out is not None:
        over["out"] = args.out
    if args.frame_hold is not None:
        if args.frame_hold < 0:
            raise ConfigError(["--frame-hold: must be >= 0"])
        over["frame_hold"] = args.frame_hold
    if args.threshold_mode is not None:
        over["threshold_mode"] = args.threshold_mode
    elif args.command in ("eval", "replay"):
        over["threshold_mode"] = "test"
    if getattr(args, "steps", None) is not None:
        if args.steps < 0:
            raise ConfigError(["--steps: must be >= 0"])
        over["steps"] = args.steps
    if getattr(args, "num_envs", None) is not None:
        if args.num_envs < 1:
            raise ConfigError(["--num-envs: must be >= 1"])
        over["env"] = replace(cfg.env, num_envs=args.num_envs)
    cfg = replace(cfg, **over)
    # re-validate overrides through the same parser
    return from_ini(to_ini(cfg))


def _dump_pipeline(cfg: ExperimentConfig, out):
    pipe = RandomisationPipeline(cfg.pipeline, cfg.adr, 1, 24, 6, np.random.default_rng(cfg.seed))
    for line in pipe.describe(cfg.adr):
        out.write(line + "\n")


# -- train ------------------------------------------------------------------------


def cmd_train(cfg: ExperimentConfig, out=None) -> CurriculumHistory:
    """Run the curriculum and write bounds/npd/episode/reward/update logs."""
    out = sys.stdout if out is None else out
    outdir = _outdir(cfg.out)
    rng = np.random.default_rng(cfg.seed)
    env = ReorientEnvBatch(cfg.env_config(), cfg.adr, rng, cfg.pipeline, seed=cfg.seed)
    state = AdrState(cfg.adr, env.num_envs)
    names = cfg.adr.names

    # the saved config points at its own directory so reruns elsewhere stay byte-identical
    with open(os.path.join(outdir, "config.ini"), "w", encoding="utf-8") as fh:
        fh.write(to_ini(replace(cfg, out=".")))
    upd = open(os.path.join(outdir, "adr_updates.jsonl"), "w", encoding="utf-8")
    bfh = open(os.path.join(outdir, "bounds.csv"), "w", encoding="utf-8")
    nfh = open(os.path.join(outdir, "npd.csv"), "w", encoding="utf-8")
    rfh = open(os.path.join(outdir, "rewards.csv"), "w", encoding="utf-8")
    try:
        upd.write(json.dumps({"schema": UPDATES_SCHEMA, "dimensions": names}) + "\n")
        bw = _csv_writer(bfh, BOUNDS_SCHEMA, ["step"] + [f"{n}_{s}" for n in names for s in ("lo", "hi")])
        nw = _csv_writer(nfh, NPD_SCHEMA, ["step", "npd", "mean_successes", "competence"])
        rw = _csv_writer(rfh, REWARDS_SCHEMA, ["step"] + list(RewardTerms.NAMES))
        written = {"events": 0}

        def sink(hist: CurriculumHistory):
            for e in hist.events[written["events"]:]:
                upd.write(json.dumps(e.record()) + "\n")
            written["events"] = len(hist.events)
            step = hist.steps[-1]
            bw.writerow([step] + [_num(v) for v in hist.bounds[-1]])
            nw.writerow([step, _num(hist.npd[-1]), _num(hist.mean_successes[-1]), _num(hist.competence[-1])])
            rw.writerow([step] + [_num(hist.reward_terms[-1][k]) for k in RewardTerms.NAMES])

        hist = run_curriculum(
            cfg.adr, env, cfg.build_policy(), cfg.steps, rng, state=state, schedule=cfg.schedule(),
            improve_every=cfg.policy.improve_every, record_every=cfg.record_every, on_record=sink,
        )
        for e in hist.events[written["events"]:]:
            upd.write(json.dumps(e.record()) + "\n")
    finally:
        for fh in (upd, bfh, nfh, rfh):
            fh.close()
    with open(os.path.join(outdir, "episodes.csv"), "w", encoding="utf-8") as fh:
        w = _csv_writer(fh, EPISODES_SCHEMA, EPISODE_FIELDS)
        for e in hist.episodes:
            w.writerow([e.step, e.env, e.episode, e.mode, e.successes, e.length, e.reason])
    finished = [e for e in hist.episodes if e.reason != "running"]
    out.write(f"steps {cfg.steps}  episodes {len(finished)}  boundary moves {len(hist.events)}  "
              f"npd {state.npd():.4f}\n")
    for n, (lo, hi) in state.bounds().items():
        out.write(f"  {n:24s} [{lo:.4g}, {hi:.4g}]\n")
    out.write(f"logs written to {outdir}\n")
    return hist


# -- eval ----------------------------------------------------------------------------


def read_bounds(path, cfg: ExperimentConfig) -> np.ndarray:
    """Final row of a ``bounds.csv`` as a boundary vector ordered like ``cfg.adr``."""
    try:
        with open(path, encoding="utf-8") as fh:
            rows = [ln for ln in fh if not ln.startswith("#")]
    except OSError as exc:
        raise InputError(f"cannot read bounds file {path}: {exc.strerror}") from None
    reader = csv.DictReader(rows)
    last = None
    for last in reader:
        pass
    if last is None:
        raise InputError(f"bounds file {path} has no rows")
    try:
        return np.array([float(last[f"{n}_{s}"]) for n in cfg.adr.names for s in ("lo", "hi")])
    except (KeyError, ValueError) as exc:
        raise InputError(f"bounds file {path}: missing or bad column {exc}") from None


def run_trials(cfg: ExperimentConfig, bounds, trials: int, seed: int, frame_hold: int | None = None,
               recorder_fh=None) -> np.ndarray:
    """``trials`` independent episodes with ADR values drawn from ``bounds``; one count per trial."""
    if trials < 1:
        raise ConfigError(["--trials: must be >= 1"])
    rng = np.random.default_rng(seed)
    state = AdrState(cfg.adr, trials)
    if bounds is not None:
        state.set_bounds(bounds)
    env_cfg = cfg.env_config(num_envs=trials, frame_hold=frame_hold)
    env = ReorientEnvBatch(env_cfg, cfg.adr, rng, cfg.pipeline, seed=seed)
    env.pipeline.ema_factor = DEPLOY_EMA_FACTOR
    values = sample_values(state, np.full(trials, UNPINNED, dtype=np.int64), rng)
    on_step = None
    if recorder_fh is not None:
        rec = TrajectoryRecorder(recorder_fh)

        def on_step(env, result, active):
            rec.env_ids = np.flatnonzero(active)
            rec.record(env, result)

    return rollout_episodes(env, cfg.build_policy(), rng, adr_values=values, on_step=on_step)


def cmd_eval(cfg: ExperimentConfig, bounds_file=None, trials=None, days=1, frame_hold_sweep=False,
             record=None, out=None) -> list[TrialSummary]:
    out = sys.stdout if out is None else out
    trials = cfg.trials if trials is None else trials
    if trials < 1:
        raise ConfigError(["--trials: must be >= 1"])
    if days < 1:
        raise ConfigError(["--days: must be >= 1"])
    bounds = read_bounds(bounds_file, cfg) if bounds_file else None
    if bounds is not None:
        try:
            AdrState(cfg.adr, 1).set_bounds(bounds)
        except ValueError as exc:
            raise InputError(f"bounds file {bounds_file}: {exc}") from None
    threshold = TEST_THRESHOLD if cfg.threshold_mode == "test" else TRAIN_THRESHOLD
    out.write(f"threshold {threshold} rad, frame hold {cfg.frame_hold}, {trials} trials per row\n")
    rows = []
    summaries = []
    for day in range(days):
        rec_fh = open(record, "w", encoding="utf-8") if (record and day == 0) else None
        try:
            counts = run_trials(cfg, bounds, trials, cfg.seed + day, recorder_fh=rec_fh)
        finally:
            if rec_fh is not None:
                rec_fh.close()
        s = TrialSummary.from_trials(counts)
        summaries.append(s)
        rows.append((f"day {day + 1}" if days > 1 else "policy", s))
    out.write(format_trials_table(rows))
    if frame_hold_sweep:
        sweep = []
        for n in FRAME_HOLD_SWEEP:
            counts = run_trials(cfg, bounds, trials, cfg.seed, frame_hold=n)
            sweep.append((n, TrialSummary.from_trials(counts).mean))
        out.write("\nframe hold sweep\n")
        out.write(format_frame_hold_table(sweep))
    return summaries


# -- pose-eval ----------------------------------------------------------------------


def cmd_pose_eval(rig_file=None, scenes=1000, noise_sigma=0.0, seed=0, threshold_px=posegeom.FILTER_THRESHOLD_PX,
                  outdir=None, out=None) -> posegeom.PoseErrorReport:
    out = sys.stdout if out is None else out
    if scenes < 1:
        raise ConfigError(["--scenes: must be >= 1"])
    if noise_sigma < 0:
        raise ConfigError(["--noise-sigma: must be >= 0"])
    if rig_file:
        try:
            with open(rig_file, encoding="utf-8") as fh:
                rig = posegeom.read_rig(fh)
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot use rig file {rig_file}: {exc}") from None
    else:
        rig = posegeom.default_rig()
    rng = np.random.default_rng(seed)
    model = posegeom.CubeModel()
    estimates, truths = [], []
    methods: dict[str, int] = {}
    last = None
    for _ in range(scenes):
        truth = posegeom.random_pose(rng)
        obs = posegeom.synthesize(rig, truth, model, noise_sigma, rng)
        est = posegeom.estimate_pose(rig, obs, model, threshold_px, last_pose=last)
        methods[est.method] = methods.get(est.method, 0) + 1
        if est.pose is None:
            continue
        last = est.pose
        estimates.append(est.pose)
        truths.append(truth)
    if not estimates:
        raise RuntimeError("pose pipeline produced no estimate for any scene")
    report = posegeom.pose_errors(estimates, truths)
    out.write(report.table())
    if outdir:
        _outdir(outdir)
        with open(os.path.join(outdir, "pose_report.json"), "w", encoding="utf-8") as fh:
            posegeom.write_report(fh, report, {
                "scenes": scenes, "noise_sigma_px": noise_sigma, "cameras": len(rig),
                "threshold_px": threshold_px, "methods": methods, "seed": seed,
            })
    return report


# -- policy-sweep -----------------------------------------------------------------


def cmd_policy_sweep(cfg: ExperimentConfig, dimension: str, points: int = 21, lo=None, hi=None, out=None):
    """q and expected consecutive successes along one dimension, others at nominal."""
    out = sys.stdout if out is None else out
    try:
        n = cfg.adr.index(dimension)
    except KeyError as exc:
        raise ConfigError([f"--dimension: {exc.args[0]}"]) from None
    if points < 2:
        raise ConfigError(["--points: must be >= 2"])
    d = cfg.adr.dimensions[n]
    lo = (d.min_bound if math.isfinite(d.min_bound) else d.init_lo) if lo is None else lo
    hi = (d.max_bound if math.isfinite(d.max_bound) else d.init_hi) if hi is None else hi
    policy = cfg.build_policy()
    grid = np.linspace(lo, hi, points)
    values = np.tile([x.nominal for x in cfg.adr.dimensions], (points, 1))
    values[:, n] = grid
    q = policy.success_probability(values)
    sev = policy.severity(values)[:, n]
    w = _csv_writer(out, SWEEP_SCHEMA, ["value", "severity", "q", "expected_successes"])
    rows = []
    for v, s, qi in zip(grid, sev, q):
        e = expected_consecutive_successes(float(qi)) if qi < 1 else math.inf
        w.writerow([_num(v), _num(s), _num(qi), _num(e)])
        rows.append((float(v), float(s), float(qi), e))
    return rows


# -- replay -------------------------------------------------------------------------


def cmd_replay(trajectory, threshold: float, frame_holds=FRAME_HOLD_SWEEP, stuck_timeout_steps=2400, out=None):
    out = sys.stdout if out is None else out
    try:
        with open(trajectory, encoding="utf-8") as fh:
            episodes = list(read_trajectories(fh))
    except OSError as exc:
        raise InputError(f"cannot read trajectory file {trajectory}: {exc.strerror}") from None
    except (ValueError, KeyError) as exc:
        raise InputError(f"trajectory file {trajectory}: {exc}") from None
    if not episodes:
        raise InputError(f"trajectory file {trajectory} has no rows")
    table = []
    counts = {}
    for n in frame_holds:
        c = [replay_count(e, threshold, n, stuck_timeout_steps) for e in episodes]
        counts[n] = c
        table.append((n, float(np.mean(c))))
    out.write(f"{len(episodes)} recorded episodes, threshold {threshold} rad\n")
    out.write(format_frame_hold_table(table))
    return counts


# -- entry point ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (INI); defaults apply when omitted")
    common.add_argument("--seed", type=int, help="override experiment.seed")
    common.add_argument("--out", help="output directory (overrides experiment.out)")
    common.add_argument("--threshold-mode", choices=("train", "test"),
                        help="success threshold: train 0.1 rad, test 0.4 rad (eval and replay default to test)")
    common.add_argument("--frame-hold", type=int, metavar="N", help="frames the goal must be held to count")
    common.add_argument("--dump-pipeline", action="store_true", help="print the resolved operator chains and exit")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="vadr", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="run the ADR curriculum and write logs")
    t.add_argument("--steps", type=int, help="override experiment.steps")
    t.add_argument("--num-envs", type=int, help="override env.num_envs")

    e = sub.add_parser("eval", parents=[common], help="sorted trials, mean +- 90%% CI, median")
    e.add_argument("--bounds", help="bounds.csv from a train run (last row is used)")
    e.add_argument("--trials", type=int, help="episodes per row (default experiment.trials)")
    e.add_argument("--days", type=int, default=1, help="rows to report, day k seeded with seed + k")
    e.add_argument("--frame-hold-sweep", action="store_true", help="also report N = 0, 5, 10, 20")
    e.add_argument("--record", metavar="CSV", help="write the first row's trajectories here")

    pe = sub.add_parser("pose-eval", parents=[common], help="synthetic multi-camera pose accuracy")
    pe.add_argument("--rig", help="rig INI file (default: built-in three-camera rig)")
    pe.add_argument("--scenes", type=int, default=1000)
    pe.add_argument("--noise-sigma", type=float, default=0.0, help="pixel noise standard deviation")
    pe.add_argument("--threshold-px", type=float, default=posegeom.FILTER_THRESHOLD_PX)

    ps = sub.add_parser("policy-sweep", parents=[common], help="q and expected successes along one dimension")
    ps.add_argument("--dimension", required=True)
    ps.add_argument("--points", type=int, default=21)
    ps.add_argument("--lo", type=float)
    ps.add_argument("--hi", type=float)

    r = sub.add_parser("replay", parents=[common], help="recount recorded trajectories under frame-hold rules")
    r.add_argument("--trajectory", required=True)
    r.add_argument("--holds", default="0,5,10,20", help="comma-separated frame-hold values")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        if args.dump_pipeline:
            _dump_pipeline(cfg, sys.stdout)
            return EXIT_OK
        if args.command == "train":
            cmd_train(cfg)
        elif args.command == "eval":
            cmd_eval(cfg, args.bounds, args.trials, args.days, args.frame_hold_sweep, args.record)
        elif args.command == "pose-eval":
            cmd_pose_eval(args.rig, args.scenes, args.noise_sigma, cfg.seed, args.threshold_px,
                          args.out if args.out is not None else None)
        elif args.command == "policy-sweep":
            if args.out:
                _outdir(args.out)
                with open(os.path.join(args.out, "policy_sweep.csv"), "w", encoding="utf-8") as fh:
                    cmd_policy_sweep(cfg, args.dimension, args.points, args.lo, args.hi, out=fh)
            else:
                cmd_policy_sweep(cfg, args.dimension, args.points, args.lo, args.hi)
        elif args.command == "replay":
            try:
                holds = tuple(int(x) for x in args.holds.split(",") if x.strip())
            except ValueError:
                raise ConfigError([f"--holds: expected integers, got {args.holds!r}"]) from None
            if any(h < 0 for h in holds):
                raise ConfigError(["--holds: values must be >= 0"])
            threshold = TEST_THRESHOLD if cfg.threshold_mode == "test" else TRAIN_THRESHOLD
            cmd_replay(args.trajectory, threshold, holds, cfg.env.protocol.stuck_timeout_steps)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as a runtime fault
        logger.debug("runtime fault", exc_info=True)
        print(f"runtime fault: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
