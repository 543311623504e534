"""The VADR training loop and single-episode rollouts.

``run_curriculum`` steps a batch, feeds finished episodes to the boundary
queues, redraws the ADR assignment of finished environments and resets
them with their new values, in that order, every control step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from vadr.adr import AdrConfig, AdrState, BoundaryEvent, DimensionSpec, adr_update_arrays, reset_adr_values
from vadr.env import EnvConfig, ReorientEnvBatch, RewardTerms, SuccessProtocol
from vadr.policy import ImprovementSchedule, SyntheticPolicy, improve

MIN_CURRICULUM_ENVS = 64
RUNNING = "running"


@dataclass(frozen=True)
class EpisodeRecord:
    step: int
    env: int
    episode: int
    mode: int
    successes: int
    length: int
    reason: str


@dataclass
class CurriculumHistory:
    """Time series of a curriculum run.

    ``bounds``/``npd``/``mean_successes`` are sampled every ``record_every``
    steps (and at the last step); ``mean_successes`` averages the episodes
    that finished since the previous sample and is NaN when none did.
    ``episodes`` lists every episode once; those still in progress at the
    end carry reason ``"running"``.
    """

    names: list[str]
    steps: list[int] = field(default_factory=list)
    bounds: list[np.ndarray] = field(default_factory=list)
    npd: list[float] = field(default_factory=list)
    mean_successes: list[float] = field(default_factory=list)
    competence: list[float] = field(default_factory=list)
    reward_terms: list[dict] = field(default_factory=list)
    events: list[BoundaryEvent] = field(default_factory=list)
    episodes: list[EpisodeRecord] = field(default_factory=list)
    final_policy: SyntheticPolicy | None = None

    def bounds_array(self) -> np.ndarray:
        return np.array(self.bounds) if self.bounds else np.zeros((0, 2 * len(self.names)))

    def npd_at_events(self) -> list[float]:
        """npd right after each queue-full boundary move."""
        return [e.npd for e in self.events]


def run_curriculum(
    config: AdrConfig,
    env: ReorientEnvBatch,
    policy: SyntheticPolicy,
    steps: int,
    rng: np.random.Generator,
    *,
    state: AdrState | None = None,
    schedule: ImprovementSchedule | None = None,
    improve_every: int = 1,
    record_every: int = 1,
    on_record: Callable[[CurriculumHistory], None] | None = None,
) -> CurriculumHistory:
    """Train-time VADR loop against a synthetic policy.

    A fresh :class:`AdrState` is created unless ``state`` is given. When a
    ``schedule`` is given the policy improves once every ``improve_every``
    steps. Returns the history whether or not the bounds converged.
    """
    if env.num_envs < MIN_CURRICULUM_ENVS:
        raise ValueError(f"curriculum needs at least {MIN_CURRICULUM_ENVS} environments, got {env.num_envs}")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if record_every < 1 or improve_every < 1:
        raise ValueError("record_every and improve_every must be >= 1")
    if state is None:
        state = AdrState(config, env.num_envs)
    elif state.num_envs != env.num_envs:
        raise ValueError("AdrState and environment batch sizes differ")

    hist = CurriculumHistory(names=config.names)
    n = env.num_envs
    reset_adr_values(state, np.ones(n, dtype=bool), rng)
    env.reset(None, state.values)
    window_counts: list[int] = []
    term_sums = dict.fromkeys(RewardTerms.NAMES, 0.0)
    term_steps = 0

    def sample(step):
        hist.steps.append(step)
        hist.bounds.append(state.copy_bounds())
        hist.npd.append(state.npd())
        hist.mean_successes.append(float(np.mean(window_counts)) if window_counts else math.nan)
        hist.competence.append(policy.competence)
        hist.reward_terms.append({k: v / max(term_steps, 1) for k, v in term_sums.items()})
        if on_record is not None:
            on_record(hist)

    obs = env.observe()
    for t in range(steps):
        env.pipeline.set_progress(t / max(steps - 1, 1))
        result = env.step(policy.act(obs, rng))
        obs = result.observation
        terms = result.terms.as_dict()
        for k in RewardTerms.NAMES:
            term_sums[k] += float(np.mean(terms[k]))
        term_steps += 1

        ids = np.flatnonzero(result.dones)
        if ids.size:
            counts = result.episode_successes[ids]
            for i, c in zip(ids, counts):
                hist.episodes.append(
                    EpisodeRecord(t, int(i), int(env.episode_index[i]), int(state.modes[i]), int(c),
                                  int(env.episode_steps[i]), result.reasons[i])
                )
            window_counts.extend(int(c) for c in counts)
            hist.events.extend(adr_update_arrays(state, ids, counts, step=t))
            reset_adr_values(state, result.dones, rng)
            env.reset(ids, state.values[ids])
            obs = env.observe()

        if schedule is not None and (t + 1) % improve_every == 0:
            policy = improve(policy, schedule)
        if (t + 1) % record_every == 0 or t == steps - 1:
            sample(t)
            window_counts = []
            term_sums = dict.fromkeys(RewardTerms.NAMES, 0.0)
            term_steps = 0

    for i in range(n):
        hist.episodes.append(
            EpisodeRecord(steps, i, int(env.episode_index[i]), int(state.modes[i]), int(env.successes[i]),
                          int(env.episode_steps[i]), RUNNING)
        )
    hist.final_policy = policy
    return hist


def rollout_episodes(
    env: ReorientEnvBatch,
    policy: SyntheticPolicy,
    rng: np.random.Generator,
    adr_values=None,
    max_steps: int = 1_000_000,
    on_step: Callable | None = None,
) -> np.ndarray:
    """Run one episode in every environment and return the final counts.

    Environments that finish keep stepping (their state is ignored) until
    the whole batch is done.
    """
    n = env.num_envs
    env.reset(None, adr_values)
    counts = np.full(n, -1, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    for _ in range(max_steps):
        result = env.step(policy.act(env.observe(), rng))
        if on_step is not None:
            on_step(env, result, active)
        finished = result.dones & active
        counts[finished] = result.episode_successes[finished]
        active &= ~result.dones
        if not active.any():
            return counts
    raise RuntimeError(f"{int(active.sum())} episodes still running after {max_steps} steps")


def monte_carlo_consecutive_successes(
    q: float,
    episodes: int,
    rng: np.random.Generator,
    env_config: EnvConfig | None = None,
    batch: int = 4096,
) -> np.ndarray:
    """Episode-final counts of a constant-``q`` policy under the full protocol."""
    dims = (DimensionSpec("unused", init_lo=0.0, init_hi=1.0, min_bound=0.0, max_bound=1.0),)
    adr_config = AdrConfig(dims)
    policy = SyntheticPolicy.constant(q, dims)
    base = env_config if env_config is not None else EnvConfig(protocol=SuccessProtocol())
    out = []
    left = episodes
    while left > 0:
        k = min(batch, left)
        cfg = EnvConfig(**{**base.__dict__, "num_envs": k})
        env = ReorientEnvBatch(cfg, adr_config, rng, seed=int(rng.integers(2**31)))
        out.append(rollout_episodes(env, policy, rng, adr_values=np.zeros((k, 1))))
        left -= k
    return np.concatenate(out)

