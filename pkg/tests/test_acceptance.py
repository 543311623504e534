"""Primary acceptance criteria, one test each.

Every test carries a ``criterion`` marker; conftest turns the outcome into a
PASS/FAIL line in the ``acceptance criteria`` section of the pytest summary.
Measured quantities are attached as ``detail`` properties so the summary
shows how close each criterion came to its tolerance.
"""

import io
import math
import re
import statistics
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import brentq

from adr_cases import CASES, check_case
from test_env import straight_line_reward
from vadr import cli, quat
from vadr import randomisation as R
from vadr.adr import AdrConfig, AdrState, DimensionSpec, npd
from vadr.config import load
from vadr.curriculum import rollout_episodes, run_curriculum
from vadr.defaults import default_adr_config
from vadr.env import (
    STUCK_TIMEOUT_STEPS,
    EnvConfig,
    ReorientEnvBatch,
    SuccessProtocol,
    TrajectoryRecorder,
    compute_reward,
    read_trajectories,
    replay_count,
)
from vadr.policy import SyntheticPolicy
from vadr.pose import (
    POSE_HEADER,
    KeypointObservation,
    estimate_pose,
    filter_cameras,
    pnp_solve,
    random_pose,
    random_rig,
    register,
    synthesize,
)
from vadr.stats import TRIALS_HEADER

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _train(cfg):
    rng = np.random.default_rng(cfg.seed)
    env = ReorientEnvBatch(cfg.env_config(), cfg.adr, rng, cfg.pipeline, seed=cfg.seed)
    state = AdrState(cfg.adr, env.num_envs)
    hist = run_curriculum(
        cfg.adr, env, cfg.build_policy(), cfg.steps, rng, state=state, schedule=cfg.schedule(),
        improve_every=cfg.policy.improve_every, record_every=cfg.record_every,
    )
    return state, hist


def _analytic_boundary(expected, competence, gain, weight, nominal, span, side):
    """Value on one side of nominal where q / (1 - q) equals ``expected``."""

    def excess(x):
        q = 1.0 / (1.0 + math.exp(-gain * (competence - weight * abs(x - nominal) / span)))
        return q / (1.0 - q) - expected

    far = nominal + side * span
    return brentq(excess, nominal, far, xtol=1e-14)


@pytest.mark.criterion("ADR oracle equilibrium")
def test_adr_equilibrium(record_property):
    cfg = load(CONFIGS / "equilibrium.ini")
    assert cfg.env.num_envs == 1024 and cfg.adr.queue_length == 256
    assert (cfg.adr.t_high, cfg.adr.t_low) == (20.0, 5.0)
    dim = cfg.adr.dimensions[0]
    pol = cfg.policy
    weight = cfg.build_policy().sensitivity[0]
    span = dim.max_bound - dim.min_bound
    args = (pol.competence, pol.gain, weight, dim.nominal, span)
    hi_band = sorted(_analytic_boundary(e, *args, side=+1) for e in (20.0, 5.0))
    lo_band = sorted(_analytic_boundary(e, *args, side=-1) for e in (20.0, 5.0))

    start = time.perf_counter()
    state, hist = _train(cfg)
    elapsed = time.perf_counter() - start
    lo, hi = state.bounds()[dim.name]
    slack = 2 * dim.delta
    record_property("detail", f"upper {hi:.3f} in [{hi_band[0] - slack:.3f}, {hi_band[1] + slack:.3f}]")
    record_property("detail", f"lower {lo:.3f} in [{lo_band[0] - slack:.3f}, {lo_band[1] + slack:.3f}]")
    record_property("detail", f"{cfg.steps} steps x {cfg.env.num_envs} envs in {elapsed:.1f} s")
    assert hist.events, "the boundary never moved"
    assert hi_band[0] - slack <= hi <= hi_band[1] + slack
    assert elapsed < 60.0


@pytest.mark.criterion("npd correctness")
def test_npd_correctness(record_property):
    assert npd(np.array([0.0, 1.0, 0.0, math.e])) == 0.5
    cfg = load(CONFIGS / "curriculum.ini")
    assert cfg.steps == 100_000 and cfg.schedule().competence_rate > 0
    state, hist = _train(cfg)
    at_events = hist.npd_at_events()
    drops = sum(b < a for a, b in zip(at_events, at_events[1:]))
    record_property("detail", f"{len(at_events)} queue-full moves, {drops} decreases")
    record_property("detail", f"npd {at_events[0]:.3f} -> {at_events[-1]:.3f}" if at_events else "no events")
    assert len(at_events) >= 10
    assert drops == 0
    assert hist.competence == sorted(hist.competence)


@pytest.mark.criterion("Boundary update unit suite")
def test_boundary_update_suite(record_property):
    failures = {case.name: problems for case in CASES if (problems := check_case(case))}
    moves = {m for c in CASES for m in c.expect_actions}
    record_property("detail", f"{len(CASES) - len(failures)}/{len(CASES)} hand-traced states")
    assert moves == {(side, act) for side in ("lower", "upper") for act in ("widen", "tighten")}
    assert len(CASES) == 20
    assert not failures, failures


@pytest.mark.criterion("Operator laws")
def test_operator_laws(record_property):
    rng = np.random.default_rng(31)

    # zero-ADR pipeline identity
    n = 32
    cfg = default_adr_config()
    pipe = R.RandomisationPipeline(R.PipelineSpec(ema_start=1.0, ema_end=1.0), cfg, n, 24, 6, rng)
    zeros = np.zeros((n, len(cfg.dimensions)))
    pose = np.concatenate([rng.normal(size=(n, 3)), quat.random(rng, n)], axis=1)
    pipe.reset(np.arange(n), zeros, pose, rng)
    identity_err = 0.0
    for step in range(50):
        pose = np.concatenate([rng.normal(size=(n, 3)), quat.random(rng, n)], axis=1)
        identity_err = max(identity_err, np.max(np.abs(pipe.observe(pose, zeros, rng) - pose)))
        a = rng.uniform(-1, 1, size=(n, 6))
        identity_err = max(identity_err, np.max(np.abs(pipe.act(a, rng.normal(size=(n, 24)), zeros, rng, step) - a)))
    record_property("detail", f"identity max err {identity_err:.1e}")
    assert identity_err <= 1e-12

    # uncorrelated noise variance against exp(a^2) - 1
    for a in (0.04, 0.14, 0.48):
        ch = R.NoiseChannel(1000, 1000, corr_index=None, uncorr_index=0)
        var = np.var(ch.apply(np.zeros((1000, 1000)), np.full((1000, 1), a), rng))
        rel = abs(var / (math.exp(a * a) - 1.0) - 1.0)
        record_property("detail", f"var rel err {rel:.2%} at a={a}")
        assert rel < 0.02

    # latency cross-correlation peak
    for k in range(4):
        buf = R.ActionLatencyBuffer(1, 1, max_latency=3)
        buf.reset([0], None, rng, k=[k])
        x = rng.standard_normal(4000)
        y = np.array([buf.push(np.array([[v]]))[0, 0] for v in x])
        xc = [np.dot(y[lag:], x[: len(x) - lag]) for lag in range(6)]
        assert int(np.argmax(xc)) == k

    # gate schedule over every (d, r) pair up to the default delay ceiling
    pairs = [(d, r) for d in range(1, 7) for r in range(d)]
    gate = R.ObsRateGate(len(pairs), 1, delay_max=6)
    d = np.array([p[0] for p in pairs])
    r = np.array([p[1] for p in pairs])
    gate.reset(np.arange(len(pairs)), None, np.zeros((len(pairs), 1)), rng, d=d, r=r)
    for t in range(60):
        assert np.array_equal(gate.fires(), (t + r) % d == 0), t
        gate.apply(np.full((len(pairs), 1), float(t)))

    # injection frequency over 1e5 steps
    for p in (0.05, 0.3):
        inj = R.PoseInjector(1)
        inj.p[:] = p
        still = np.array([[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]])
        hits = sum(not np.array_equal(inj.apply(still, rng), still) for _ in range(100_000))
        record_property("detail", f"injection {hits / 1e5:.4f} at p={p}")
        assert abs(hits / 100_000 - p) <= 0.01

    # RNA blend is an exact convex combination
    rna = R.RandomNetworkAdversary(24, 6, 4, rng)
    obs = rng.normal(size=(4, 24))
    act = rng.uniform(-1, 1, size=(4, 6))
    for alpha in (0.0, 0.16, 0.5, 1.0):
        out = rna.act(obs, act, np.full(4, alpha))
        assert np.array_equal(out, alpha * rna.forward(obs) + (1.0 - alpha) * act)


@pytest.mark.criterion("Reward oracle")
def test_reward_oracle(record_property):
    rng = np.random.default_rng(77)
    n = 10_000
    q = quat.random(rng, n)
    g = quat.random(rng, n)
    near = rng.random(n) < 0.3
    g[near] = quat.multiply(q[near], quat.from_rotvec(rng.normal(0, 0.06, size=(near.sum(), 3))))
    p, gp = rng.normal(0, 0.05, size=(2, n, 3))
    a, prev, curr, v = rng.uniform(-1, 1, size=(4, n, 6))
    total, _ = compute_reward(q, p, g, gp, a, prev, curr, v)
    worst = 0.0
    bonus = 0
    for i in range(n):
        r, d = straight_line_reward(q[i], p[i], g[i], gp[i], a[i], prev[i], curr[i], v[i])
        worst = max(worst, abs(total[i] - r) / max(1.0, abs(r)))
        without_bonus = r - (250.0 if d < 0.1 else 0.0)
        assert (total[i] - without_bonus > 125.0) == (d < 0.1)
        bonus += d < 0.1
    record_property("detail", f"max rel err {worst:.1e} over {n} states, bonus in {bonus}")
    assert worst <= 1e-12
    assert 0 < bonus < n


def _record_episodes(count, frame_hold, threshold, seed):
    dims = (DimensionSpec("unused", init_lo=0.0, init_hi=1.0, min_bound=0.0, max_bound=1.0),)
    proto = SuccessProtocol(threshold=threshold, frame_hold_n=frame_hold)
    env = ReorientEnvBatch(EnvConfig(num_envs=count, protocol=proto), AdrConfig(dims), np.random.default_rng(seed))
    # enough jitter that some goals are reached but not held for the full 20 frames
    policy = SyntheticPolicy.constant(0.92, dims, hold_jitter=0.26)
    fh = io.StringIO()
    rec = TrajectoryRecorder(fh)

    def on_step(env, result, active):
        rec.env_ids = np.flatnonzero(active)
        rec.record(env, result)

    live = rollout_episodes(env, policy, np.random.default_rng(seed + 1), np.zeros((count, 1)), on_step=on_step)
    fh.seek(0)
    return live, list(read_trajectories(fh))


@pytest.mark.criterion("Success protocol")
def test_success_protocol(record_property):
    dims = (DimensionSpec("unused", init_lo=0.0, init_hi=1.0, min_bound=0.0, max_bound=1.0),)
    cfg = EnvConfig(num_envs=3, gravity_std=0.0, start_jitter=0.0, protocol=SuccessProtocol())
    env = ReorientEnvBatch(cfg, AdrConfig(dims), np.random.default_rng(0))
    env.reset(None, np.zeros((3, 1)))
    env.goal[:] = quat.from_axis_angle([0, 1, 0], 2.0)
    env.orientation[:] = quat.IDENTITY
    fired = None
    for t in range(1, STUCK_TIMEOUT_STEPS + 10):
        result = env.step(np.zeros((3, 6)))
        if result.dones.any():
            fired = t
            break
    record_property("detail", f"stuck fired at step {fired}")
    assert fired == STUCK_TIMEOUT_STEPS == 2400
    assert set(result.reasons) == {"stuck"} and result.dones.all()

    threshold = 0.1
    live, episodes = _record_episodes(100, 20, threshold, seed=5)
    assert len(episodes) == 100
    holds = (0, 5, 10, 20)
    counts = np.array([[replay_count(ep, threshold, n) for n in holds] for ep in episodes])
    assert all(replay_count(ep, threshold, 20) == ep.counter for ep in episodes)
    assert sorted(live) == sorted(ep.counter for ep in episodes)
    means = counts.mean(axis=0)
    record_property("detail", "mean by N " + ", ".join(f"{n}:{m:.1f}" for n, m in zip(holds, means)))
    assert np.all(np.diff(counts, axis=1) <= 0)
    assert means[0] > means[-1]


@pytest.mark.criterion("Pose round-trip")
def test_pose_round_trip(record_property):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst_rot = worst_trans = 0.0
    for _ in range(1000):
        rig = random_rig(rng, 3)
        truth = random_pose(rng)
        est = estimate_pose(rig, synthesize(rig, truth))
        worst_rot = max(worst_rot, quat.rotation_distance(est.pose.rotation, truth.rotation))
        worst_trans = max(worst_trans, float(np.max(np.abs(est.pose.translation - truth.translation))))
    record_property("detail", f"worst rot {worst_rot:.1e} rad, trans {worst_trans:.1e} m")
    assert worst_rot < 1e-6 and worst_trans < 1e-8

    excluded = clean_kept = 0
    for _ in range(100):
        rig = random_rig(rng, 3)
        obs = synthesize(rig, random_pose(rng))
        bad = int(rng.integers(3))
        corner = int(rng.integers(8))
        uv = obs[bad].uv.copy()
        angle = rng.uniform(0, 2 * math.pi)
        uv[corner] += 50.0 * np.array([math.cos(angle), math.sin(angle)])
        obs[bad] = KeypointObservation(obs[bad].camera_id, uv, obs[bad].valid)
        kept = filter_cameras(rig, {c: pnp_solve(rig[c], obs[c]) for c in obs}, obs, 5.0)
        excluded += bad not in kept
        clean_kept += sorted(kept) == sorted(set(range(3)) - {bad})
    record_property("detail", f"corrupted camera excluded {excluded}/100, clean cameras kept {clean_kept}/100")
    assert excluded == 100

    proper = 0
    for _ in range(10_000):
        pts = rng.normal(size=(8, 3))
        if rng.random() < 0.5:
            pts[:, 0] *= -1
        proper += abs(np.linalg.det(register(pts).matrix) - 1.0) < 1e-9
    elapsed = time.perf_counter() - start
    record_property("detail", f"det +1 on {proper}/10000, {elapsed:.1f} s")
    assert proper == 10_000
    assert elapsed < 30.0


@pytest.mark.criterion("Determinism")
def test_train_determinism(tmp_path, record_property, capsys):
    argv = ["train", "--config", str(CONFIGS / "equilibrium.ini"), "--steps", "2500", "--seed", "11"]
    for name in ("a", "b"):
        assert cli.main(argv + ["--out", str(tmp_path / name)]) == 0
    capsys.readouterr()
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    same = [f for f in files if (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()]
    moves = len((tmp_path / "a" / "adr_updates.jsonl").read_text().splitlines()) - 1
    record_property("detail", f"{len(same)}/{len(files)} files byte-identical, {moves} boundary moves logged")
    assert moves > 0
    assert same == files and len(files) == 6


@pytest.mark.criterion("Reporting parity")
def test_reporting_parity(tmp_path, record_property, capsys):
    short = tmp_path / "short.ini"
    short.write_text("[policy]\ncompetence = 0.3\n")
    assert cli.main(["eval", "--config", str(short), "--trials", "10", "--seed", "4"]) == 0
    lines = capsys.readouterr().out.splitlines()
    i = lines.index("\t".join(TRIALS_HEADER))
    label, trials, average, median = lines[i + 1].split("\t")
    counts = [int(x) for x in trials.split()]
    assert counts == sorted(counts) and len(counts) == 10
    mean, ci = (float(x) for x in average.split(" ± "))
    assert mean == round(statistics.mean(counts), 1)
    assert ci == round(1.645 * statistics.stdev(counts) / math.sqrt(len(counts) - 1), 1)
    assert float(median) == statistics.median(counts)
    record_property("detail", f"eval row: {lines[i + 1]!r}")

    assert cli.main(["pose-eval", "--scenes", "30", "--noise-sigma", "1.0", "--seed", "4"]) == 0
    header, row = capsys.readouterr().out.splitlines()
    assert tuple(header.split("\t")) == POSE_HEADER
    cells = row.split("\t")
    assert cells[0] == "Sim"
    assert re.fullmatch(r"\d+\.\d±\d+\.\d\d°", cells[1])
    assert all(re.fullmatch(r"\d+\.\d±\d+\.\d mm", c) for c in cells[2:])
    record_property("detail", f"pose-eval row: {row!r}")
