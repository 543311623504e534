from collections import Counter
from types import SimpleNamespace

import numpy as np
import pytest

from vadr.adr import AdrConfig, DimensionSpec
from vadr.curriculum import MIN_CURRICULUM_ENVS, RUNNING, run_curriculum
from vadr.env import EnvConfig, ReorientEnvBatch, RewardTerms
from vadr.policy import ImprovementSchedule, SyntheticPolicy


class ScriptedEnv:
    """Every environment finishes every step with a fixed success count."""

    def __init__(self, num_envs, score):
        self.num_envs = num_envs
        self.score = score
        self.pipeline = SimpleNamespace(set_progress=lambda progress: None)
        self.episode_index = np.zeros(num_envs, dtype=np.int64)
        self.episode_steps = np.zeros(num_envs, dtype=np.int64)
        self.successes = np.zeros(num_envs, dtype=np.int64)
        self.resets = []

    def observe(self):
        return None

    def reset(self, ids, values):
        ids = np.arange(self.num_envs) if ids is None else np.asarray(ids)
        self.resets.append(np.asarray(values)[: len(ids)].copy())
        if len(self.resets) > 1:
            self.episode_index[ids] += 1

    def step(self, actions):
        n = self.num_envs
        zeros = np.zeros(n)
        self.episode_steps[:] = 1
        return SimpleNamespace(
            observation=None,
            terms=RewardTerms(*(zeros for _ in RewardTerms.NAMES)),
            dones=np.ones(n, dtype=bool),
            episode_successes=np.full(n, self.score, dtype=np.int64),
            reasons=["drop"] * n,
        )


class NullPolicy:
    competence = 0.0

    def act(self, obs, rng):
        return None


def _config():
    dims = tuple(
        DimensionSpec(f"d{i}", init_lo=0.8, init_hi=1.2, min_bound=0.5, max_bound=1.5, delta=0.1) for i in range(2)
    )
    return AdrConfig(dims)


def test_forced_widen_reaches_every_clamp():
    cfg = _config()
    hist = run_curriculum(cfg, ScriptedEnv(256, 30), NullPolicy(), 300, np.random.default_rng(0))
    np.testing.assert_allclose(hist.bounds[-1], [0.5, 1.5, 0.5, 1.5], atol=1e-12)
    npd_events = hist.npd_at_events()
    assert npd_events and all(b >= a for a, b in zip(npd_events, npd_events[1:]))
    assert {e.action for e in hist.events} == {"widen"}


def test_forced_tighten_collapses_ranges():
    cfg = _config()
    hist = run_curriculum(cfg, ScriptedEnv(256, 0), NullPolicy(), 300, np.random.default_rng(1))
    final = hist.bounds[-1]
    widths = final[1::2] - final[0::2]
    np.testing.assert_allclose(widths, 0.0, atol=1e-12)
    assert np.all(final >= 0.8 - 1e-12) and np.all(final <= 1.2 + 1e-12)
    assert {e.action for e in hist.events} == {"tighten"}


def test_too_few_envs_rejected():
    with pytest.raises(ValueError, match="at least"):
        run_curriculum(_config(), ScriptedEnv(MIN_CURRICULUM_ENVS - 1, 1), NullPolicy(), 1, np.random.default_rng(0))


def test_reset_receives_redrawn_values():
    env = ScriptedEnv(128, 10)
    run_curriculum(_config(), env, NullPolicy(), 5, np.random.default_rng(2))
    # one full reset plus one per step, each with values inside the current ranges
    assert len(env.resets) == 6
    for values in env.resets:
        assert values.shape == (128, 2)
        assert np.all((values >= 0.8) & (values <= 1.2))


def _real_run(seed, steps=400):
    dims = (DimensionSpec("f", init_lo=0.8, init_hi=1.2, min_bound=0.0, max_bound=3.0, delta=0.05, nominal=1.0),)
    cfg = AdrConfig(dims, queue_length=8)
    rng = np.random.default_rng(seed)
    env = ReorientEnvBatch(EnvConfig(num_envs=64, max_angular_speed=30.0), cfg, rng, seed=seed)
    policy = SyntheticPolicy(dims, (3.0,), competence=0.5, gain=5.0)
    return run_curriculum(cfg, env, policy, steps, rng, schedule=ImprovementSchedule(1e-3), record_every=50)


def test_history_is_deterministic():
    a, b = _real_run(3), _real_run(3)
    np.testing.assert_array_equal(a.bounds_array(), b.bounds_array())
    assert a.episodes == b.episodes
    assert [e.record() for e in a.events] == [e.record() for e in b.events]


def test_every_episode_logged_once():
    hist = _real_run(4)
    keys = Counter((e.env, e.episode) for e in hist.episodes)
    assert max(keys.values()) == 1
    for env_id in range(64):
        episodes = sorted(ep for (e, ep) in keys if e == env_id)
        assert episodes == list(range(len(episodes)))
    running = [e for e in hist.episodes if e.reason == RUNNING]
    assert len(running) == 64
    assert hist.final_policy.competence == pytest.approx(0.9)
    assert hist.steps[-1] == 399 and len(hist.steps) == 8
