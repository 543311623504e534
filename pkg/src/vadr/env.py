"""Desk-scale vectorised cube-reorientation environment.

The hand is replaced by first-order kinematics: the first three action
components command a world-frame angular velocity of the cube, the last
three a palm-frame linear velocity. Everything that decides a success
(rotation distance, thresholds, frame hold, stuck timeout, drop) follows
the task protocol; only the contact physics is a stand-in.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from vadr import kernels, quat
from vadr.adr import AdrConfig, EpisodeOutcome, Kind
from vadr.randomisation import (
    PipelineSpec,
    RandomisationPipeline,
    physics_value,
    resample_gravity,
)

logger = logging.getLogger(__name__)

ACTION_DIM = 6
OBS_DIM = 3 + 4 + 3 + 4 + 4 + ACTION_DIM
TRAIN_THRESHOLD = 0.1
TEST_THRESHOLD = 0.4
CONTROL_DT = 1.0 / 30.0
STUCK_TIMEOUT_STEPS = 2400  # 80 s at 30 Hz

DROP, STUCK, FAULT = "drop", "stuck", "fault"


@dataclass(frozen=True)
class RewardWeights:
    rot_close: float = 1.0
    pos_dist: float = -10.0
    action_penalty: float = -0.001
    action_delta_penalty: float = -0.25
    joint_vel_penalty: float = -0.003
    reach_goal_bonus: float = 250.0
    bonus_threshold: float = 0.1
    rot_eps: float = 0.1


@dataclass(frozen=True)
class SuccessProtocol:
    threshold: float = TRAIN_THRESHOLD
    frame_hold_n: int = 0
    stuck_timeout_steps: int = STUCK_TIMEOUT_STEPS
    fall_distance: float = 0.24

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if self.frame_hold_n < 0:
            raise ValueError("frame_hold_n must be >= 0")
        if self.stuck_timeout_steps < 1:
            raise ValueError("stuck_timeout_steps must be >= 1")

    @classmethod
    def for_mode(cls, mode: str, **kw):
        if mode not in ("train", "test"):
            raise ValueError(f"threshold mode must be 'train' or 'test', got {mode!r}")
        return cls(threshold=TRAIN_THRESHOLD if mode == "train" else TEST_THRESHOLD, **kw)


@dataclass(frozen=True)
class EnvConfig:
    num_envs: int = 1024
    control_dt: float = CONTROL_DT
    max_angular_speed: float = 6.0
    max_linear_speed: float = 1.0
    goal_position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    start_jitter: float = 0.01
    external_force_scale: float = 0.05
    gravity_coupling: float = 0.01
    gravity_std: float = 0.5
    gravity_period: int = 720
    protocol: SuccessProtocol = field(default_factory=SuccessProtocol)
    reward: RewardWeights = field(default_factory=RewardWeights)

    def __post_init__(self):
        if self.num_envs < 1:
            raise ValueError("num_envs must be >= 1")
        if self.control_dt <= 0:
            raise ValueError("control_dt must be positive")


def rotation_distance(q1, q2):
    """``2 acos(min(1, |<q1, q2>|))``; see :func:`vadr.quat.rotation_distance`."""
    return quat.rotation_distance(q1, q2)


@dataclass
class RewardTerms:
    rot_close: np.ndarray
    pos_dist: np.ndarray
    action_penalty: np.ndarray
    action_delta_penalty: np.ndarray
    joint_vel_penalty: np.ndarray
    reach_goal_bonus: np.ndarray

    NAMES = ("rot_close", "pos_dist", "action_penalty", "action_delta_penalty", "joint_vel_penalty", "reach_goal_bonus")

    def total(self):
        return (
            self.rot_close
            + self.pos_dist
            + self.action_penalty
            + self.action_delta_penalty
            + self.joint_vel_penalty
            + self.reach_goal_bonus
        )

    def as_dict(self):
        return {k: getattr(self, k) for k in self.NAMES}


def reward_terms(d, obj_pos, goal_pos, action, targ_curr, targ_prev, joint_vel, w: RewardWeights) -> RewardTerms:
    """Weighted reward terms, batched over the leading axis."""
    d = np.asarray(d, dtype=np.float64)
    sq = lambda v: np.sum(np.square(np.asarray(v, dtype=np.float64)), axis=-1)  # noqa: E731
    return RewardTerms(
        rot_close=w.rot_close / (d + w.rot_eps),
        pos_dist=w.pos_dist * np.linalg.norm(np.asarray(obj_pos) - np.asarray(goal_pos), axis=-1),
        action_penalty=w.action_penalty * sq(action),
        action_delta_penalty=w.action_delta_penalty * sq(np.asarray(targ_curr) - np.asarray(targ_prev)),
        joint_vel_penalty=w.joint_vel_penalty * sq(joint_vel),
        reach_goal_bonus=np.where(d < w.bonus_threshold, w.reach_goal_bonus, 0.0),
    )


def compute_reward(
    orientation, position, goal_orientation, goal_position, action, prev_target, curr_target, joint_vel,
    weights: RewardWeights = RewardWeights(), threshold: float = TRAIN_THRESHOLD,
):
    """Reward and the success flag for one or many states.

    The +bonus fires on ``d < weights.bonus_threshold`` whatever success
    threshold is in use; ``reached`` uses ``threshold``.
    """
    d = quat.rotation_distance(orientation, goal_orientation)
    terms = reward_terms(d, position, goal_position, action, curr_target, prev_target, joint_vel, weights)
    total = terms.total()
    reached = np.asarray(d) < threshold
    if np.ndim(total) == 0:
        return float(total), bool(reached)
    return total, reached


def resample_goal(rng: np.random.Generator, n: int | None = None):
    """Goal orientations uniform on SO(3)."""
    return quat.random(rng, n)


@dataclass
class Observation:
    cube_pos: np.ndarray
    cube_quat: np.ndarray
    goal_pos: np.ndarray
    goal_quat: np.ndarray
    last_action: np.ndarray
    goal_draw: np.ndarray
    adr_values: np.ndarray

    def vector(self):
        q = quat.normalize(self.cube_quat)
        rel = quat.multiply(self.goal_quat, quat.conjugate(q))
        return np.concatenate([self.cube_pos, self.cube_quat, self.goal_pos, self.goal_quat, rel, self.last_action], axis=1)


@dataclass
class StepResult:
    observation: Observation
    rewards: np.ndarray
    dones: np.ndarray
    distances: np.ndarray
    successes: np.ndarray
    episode_successes: np.ndarray
    reasons: list
    terms: RewardTerms
    goals: np.ndarray

    def outcomes(self) -> list[EpisodeOutcome]:
        ids = np.flatnonzero(self.dones)
        return [EpisodeOutcome(int(i), int(self.episode_successes[i]), True) for i in ids]


class ReorientEnvBatch:
    """A structure-of-arrays batch of cube-reorientation environments.

    ``step`` never resets environments itself; finished environments are
    reported in ``dones`` and must be passed to ``reset`` (normally after the
    ADR assignment for their next episode has been redrawn).
    """

    def __init__(self, config: EnvConfig, adr_config: AdrConfig, rng: np.random.Generator,
                 pipeline_spec: PipelineSpec | None = None, seed: int = 0):
        self.config = config
        self.adr_config = adr_config
        self.rng = rng
        self.seed = seed
        n = config.num_envs
        self.num_envs = n
        self.pipeline = RandomisationPipeline(
            pipeline_spec if pipeline_spec is not None else PipelineSpec.empty(), adr_config, n, OBS_DIM, ACTION_DIM, rng
        )
        names = adr_config.names
        self._effort = names.index("hand_effort") if "hand_effort" in names else None
        self._forces = names.index("object_external_forces") if "object_external_forces" in names else None
        self.goal_position = np.asarray(config.goal_position, dtype=np.float64)
        self.orientation = np.tile(quat.IDENTITY, (n, 1))
        self.position = np.tile(self.goal_position, (n, 1))
        self.goal = np.tile(quat.IDENTITY, (n, 1))
        self.goal_draw = np.zeros(n)
        self.last_action = np.zeros((n, ACTION_DIM))
        self.prev_target = np.zeros((n, ACTION_DIM))
        self.adr_values = np.zeros((n, len(names)))
        self.hold = np.zeros(n, dtype=np.int64)
        self.successes = np.zeros(n, dtype=np.int64)
        self.stuck = np.zeros(n, dtype=np.int64)
        self.episode_index = np.zeros(n, dtype=np.int64)
        self.episode_steps = np.zeros(n, dtype=np.int64)
        self.observed_pose = np.zeros((n, 7))
        self.global_step = 0
        self.total_successes = 0
        self.faults = 0
        self._started = False
        self._gravity_epoch = -1
        self._gravity = None

    @property
    def protocol(self) -> SuccessProtocol:
        return self.config.protocol

    def set_protocol(self, protocol: SuccessProtocol):
        self.config = EnvConfig(**{**self.config.__dict__, "protocol": protocol})

    def true_pose(self):
        return np.concatenate([self.position, self.orientation], axis=1)

    def reset(self, ids=None, adr_values=None, orientation=None, goal=None):
        """Start new episodes for ``ids`` (all environments by default)."""
        n = self.num_envs
        ids = np.arange(n) if ids is None else np.asarray(ids, dtype=np.int64).reshape(-1)
        if ids.size == 0:
            return
        k = ids.size
        rng = self.rng
        if adr_values is not None:
            adr_values = np.asarray(adr_values, dtype=np.float64)
            self.adr_values[ids] = adr_values.reshape(k, -1) if adr_values.ndim == 2 else adr_values
        self.orientation[ids] = quat.random(rng, k) if orientation is None else orientation
        self.position[ids] = self.goal_position + rng.uniform(-self.config.start_jitter, self.config.start_jitter, (k, 3))
        self.goal[ids] = resample_goal(rng, k) if goal is None else goal
        self.goal_draw[ids] = rng.random(k)
        self.last_action[ids] = 0.0
        self.prev_target[ids] = 0.0
        self.hold[ids] = 0
        self.successes[ids] = 0
        self.stuck[ids] = 0
        self.episode_steps[ids] = 0
        if self._started:
            self.episode_index[ids] += 1
        pose = self.true_pose()[ids]
        self.pipeline.reset(ids, self.adr_values[ids], pose, rng)
        self.observed_pose[ids] = pose
        self._started = True

    def observe(self) -> Observation:
        return Observation(
            cube_pos=self.observed_pose[:, :3].copy(),
            cube_quat=self.observed_pose[:, 3:].copy(),
            goal_pos=np.tile(self.goal_position, (self.num_envs, 1)),
            goal_quat=self.goal.copy(),
            last_action=self.last_action.copy(),
            goal_draw=self.goal_draw.copy(),
            adr_values=self.adr_values.copy(),
        )

    def _effort_scale(self):
        if self._effort is None:
            return np.ones(self.num_envs)
        return physics_value(1.0, Kind.SCALING, self.adr_values[:, self._effort])

    def step(self, actions, adr_values=None) -> StepResult:
        cfg = self.config
        proto = cfg.protocol
        n = self.num_envs
        rng = self.rng
        if adr_values is not None:
            self.adr_values[:] = adr_values
        actions = np.clip(np.asarray(actions, dtype=np.float64), -1.0, 1.0)
        obs_vec = self.observe().vector() if self.pipeline.needs_observation else None
        executed = np.clip(self.pipeline.act(actions, obs_vec, self.adr_values, rng, self.global_step), -1.0, 1.0)

        omega = executed[:, :3] * (cfg.max_angular_speed * self._effort_scale())[:, None]
        vel = executed[:, 3:] * cfg.max_linear_speed
        self.orientation = kernels.integrate_orientation(
            np.ascontiguousarray(self.orientation), np.ascontiguousarray(omega), cfg.control_dt
        )
        epoch = self.global_step // cfg.gravity_period
        if self._gravity_epoch != epoch:
            self._gravity = resample_gravity(self.global_step, self.seed, std=cfg.gravity_std, period=cfg.gravity_period)
            self._gravity_epoch = epoch
        gravity = self._gravity
        drift = cfg.gravity_coupling * (gravity - np.array([0.0, 0.0, -9.81])) * cfg.control_dt
        if self._forces is not None:
            force = physics_value(0.0, Kind.ADDITIVE, self.adr_values[:, self._forces])
            drift = drift + cfg.external_force_scale * force[:, None] * np.sqrt(cfg.control_dt) * rng.standard_normal((n, 3))
        self.position = self.position + vel * cfg.control_dt + drift

        fault = ~(np.all(np.isfinite(self.orientation), axis=1) & np.all(np.isfinite(self.position), axis=1))
        if np.any(fault):
            logger.warning("non-finite state in envs %s; forcing reset with zero successes", np.flatnonzero(fault).tolist())
            self.orientation[fault] = quat.IDENTITY
            self.position[fault] = self.goal_position
            # the faulted episode reports 0, so its earlier successes leave the global tally
            self.total_successes -= int(self.successes[fault].sum())
            self.successes[fault] = 0
            self.faults += int(fault.sum())

        d = kernels.rotation_distance(np.ascontiguousarray(self.orientation), np.ascontiguousarray(self.goal))
        terms = reward_terms(
            d, self.position, self.goal_position, executed, executed, self.prev_target,
            np.concatenate([omega, vel], axis=1), cfg.reward,
        )
        goals = self.goal.copy()
        before = self.successes.copy()
        reached, success, timed_out = kernels.protocol_step(
            d, float(proto.threshold), int(proto.frame_hold_n), self.hold, self.successes, self.stuck,
            int(proto.stuck_timeout_steps),
        )
        self.total_successes += int((self.successes - before).sum())
        ids = np.flatnonzero(success)
        if ids.size:
            self.goal[ids] = resample_goal(rng, ids.size)
            self.goal_draw[ids] = rng.random(ids.size)
        dropped = np.linalg.norm(self.position - self.goal_position, axis=1) > proto.fall_distance
        dones = dropped | timed_out | fault
        reasons = [None] * n
        for i in np.flatnonzero(dones):
            reasons[i] = FAULT if fault[i] else (DROP if dropped[i] else STUCK)

        self.prev_target = executed
        self.last_action = executed
        self.episode_steps += 1
        self.global_step += 1
        self.observed_pose = self.pipeline.observe(self.true_pose(), self.adr_values, rng)
        return StepResult(
            observation=self.observe(),
            rewards=terms.total(),
            dones=dones,
            distances=d,
            successes=success,
            episode_successes=self.successes.copy(),
            reasons=reasons,
            terms=terms,
            goals=goals,
        )


# -- trajectory recording / replay -----------------------------------------

TRAJECTORY_SCHEMA = "vadr.trajectory/1"
TRAJECTORY_FIELDS = (
    ["t", "env", "episode", "qw", "qx", "qy", "qz", "px", "py", "pz", "gw", "gx", "gy", "gz", "d"]
    + ["r_" + k for k in RewardTerms.NAMES]
    + ["reward", "counter", "done"]
)


class TrajectoryRecorder:
    """Per-step CSV rows for selected environments.

    The goal columns hold the goal the distance ``d`` was measured against
    (before any resampling triggered by that step).
    """

    def __init__(self, fh, env_ids=None):
        self.fh = fh
        self.env_ids = None if env_ids is None else np.asarray(env_ids, dtype=np.int64)
        fh.write(f"# schema: {TRAJECTORY_SCHEMA}\n")
        self.writer = csv.writer(fh, lineterminator="\n")
        self.writer.writerow(TRAJECTORY_FIELDS)

    def record(self, env: ReorientEnvBatch, result: StepResult):
        ids = np.arange(env.num_envs) if self.env_ids is None else self.env_ids
        terms = result.terms.as_dict()
        for i in ids:
            row = [env.episode_steps[i], i, env.episode_index[i]]
            row += [repr(float(v)) for v in env.orientation[i]]
            row += [repr(float(v)) for v in env.position[i]]
            row += [repr(float(v)) for v in result.goals[i]]
            row.append(repr(float(result.distances[i])))
            row += [repr(float(terms[k][i])) for k in RewardTerms.NAMES]
            row.append(repr(float(result.rewards[i])))
            row.append(int(result.episode_successes[i]))
            row.append(int(result.dones[i]))
            self.writer.writerow(row)


@dataclass
class RecordedEpisode:
    env: int
    episode: int
    quats: np.ndarray
    goals: np.ndarray
    counter: int
    starts: np.ndarray


def read_trajectories(fh) -> Iterator[RecordedEpisode]:
    """Group a trajectory CSV into episodes with their distinct goal schedule."""
    first = fh.readline()
    if not first.startswith("# schema:"):
        raise ValueError("trajectory file lacks a schema header")
    if first.split(":", 1)[1].strip() != TRAJECTORY_SCHEMA:
        raise ValueError(f"unsupported trajectory schema {first.strip()!r}")
    reader = csv.DictReader(fh)
    episodes: dict[tuple[int, int], dict] = {}
    for row in reader:
        key = (int(row["env"]), int(row["episode"]))
        ep = episodes.setdefault(key, {"q": [], "g": [], "counter": 0})
        ep["q"].append([float(row[c]) for c in ("qw", "qx", "qy", "qz")])
        ep["g"].append([float(row[c]) for c in ("gw", "gx", "gy", "gz")])
        ep["counter"] = int(row["counter"])
    for (env_id, episode), ep in sorted(episodes.items()):
        g = np.asarray(ep["g"])
        change = np.ones(len(g), dtype=bool)
        change[1:] = np.any(g[1:] != g[:-1], axis=1)
        yield RecordedEpisode(env_id, episode, np.ascontiguousarray(ep["q"]), np.ascontiguousarray(g[change]),
                              ep["counter"], np.flatnonzero(change).astype(np.int64))


def replay_count(episode: RecordedEpisode, threshold: float, frame_hold_n: int,
                 stuck_timeout_steps: int = STUCK_TIMEOUT_STEPS) -> int:
    """Consecutive successes a recorded pose trajectory earns under a frame-hold rule.

    Goals change where the recording changed them, so a stricter rule than
    the one recorded can only lose goals and a looser one can only gain the
    goal that was in progress when the episode ended.
    """
    count, _ = kernels.replay_frame_hold(
        episode.quats, episode.goals, episode.starts, float(threshold), int(frame_hold_n), int(stuck_timeout_steps)
    )
    return int(count)
