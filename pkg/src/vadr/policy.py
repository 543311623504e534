"""Synthetic controller whose per-goal success probability is known in closed form.

Per goal the controller succeeds with probability
``q = logistic(gain * (competence - w . severity) + bias)`` where ``severity`` is
each randomised value's distance from its nominal, normalised by the
dimension's hard-limit span. Success is realised by driving the cube along
the geodesic to the goal; failure by a zero-mean random push that carries
the cube off the palm. The fumble decision compares a per-goal uniform draw
made by the environment against ``q``, so each goal is an independent
Bernoulli(q) trial and the episode count is geometric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from vadr import quat
from vadr.adr import DimensionSpec
from vadr.env import ACTION_DIM, CONTROL_DT, Observation


def logistic(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


@dataclass(frozen=True)
class ImprovementSchedule:
    competence_rate: float = 0.0
    cap: float = 1.0

    def __post_init__(self):
        if self.competence_rate < 0:
            raise ValueError("competence_rate must be >= 0")
        if self.cap > 1:
            raise ValueError("cap must be <= 1")


@dataclass(frozen=True)
class SyntheticPolicy:
    dims: tuple[DimensionSpec, ...]
    sensitivity: tuple[float, ...]
    competence: float = 1.0
    gain: float = 5.0
    bias: float = 0.0
    hold_jitter: float = 0.0
    position_gain: float = 0.5
    max_angular_speed: float = 6.0
    max_linear_speed: float = 1.0
    control_dt: float = CONTROL_DT

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))
        object.__setattr__(self, "sensitivity", tuple(float(w) for w in self.sensitivity))
        if len(self.sensitivity) != len(self.dims):
            raise ValueError(f"need one sensitivity weight per dimension ({len(self.dims)}), got {len(self.sensitivity)}")
        if any(w < 0 for w in self.sensitivity):
            raise ValueError("sensitivity weights must be non-negative")
        if not 0.0 <= self.competence <= 1.0:
            raise ValueError(f"competence must lie in [0, 1], got {self.competence}")
        if self.gain <= 0:
            raise ValueError("gain must be positive")

    @classmethod
    def constant(cls, q: float, dims, gain: float = 1.0, **kw):
        """A policy with success probability ``q`` whatever the randomisation."""
        if not 0.0 < q < 1.0:
            raise ValueError("q must lie in (0, 1)")
        return cls(dims=dims, sensitivity=(0.0,) * len(dims), competence=0.0, gain=gain, bias=math.log(q / (1.0 - q)), **kw)

    def severity(self, values):
        values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        nominal = np.array([d.nominal for d in self.dims])
        span = np.array([d.span for d in self.dims])
        return np.abs(values - nominal) / span

    def success_probability(self, values):
        w = np.asarray(self.sensitivity)
        return logistic(self.gain * (self.competence - self.severity(values) @ w) + self.bias)

    def act(self, obs: Observation, rng: np.random.Generator):
        n = obs.cube_quat.shape[0]
        rel = quat.multiply(obs.goal_quat, quat.conjugate(quat.normalize(obs.cube_quat)))
        rot = quat.to_rotvec(rel) / (self.control_dt * self.max_angular_speed)
        scale = np.maximum(np.max(np.abs(rot), axis=1, keepdims=True), 1.0)
        rot = rot / scale
        if self.hold_jitter > 0:
            rot = rot + self.hold_jitter * rng.standard_normal(rot.shape)
        move = (obs.goal_pos - obs.cube_pos) * self.position_gain / (self.control_dt * self.max_linear_speed)
        action = np.clip(np.concatenate([rot, move], axis=1), -1.0, 1.0)

        fumble = obs.goal_draw >= self.success_probability(obs.adr_values)
        push = rng.standard_normal((n, 3))
        push /= np.linalg.norm(push, axis=1, keepdims=True)
        action[fumble, :3] = 0.0
        action[fumble, 3:] = push[fumble]
        assert action.shape[1] == ACTION_DIM
        return action


def act(obs: Observation, policy: SyntheticPolicy, rng):
    return policy.act(obs, rng)


def improve(policy: SyntheticPolicy, schedule: ImprovementSchedule) -> SyntheticPolicy:
    """One improvement step: competence grows by the rate, capped."""
    if schedule.competence_rate == 0:
        return policy
    return replace(policy, competence=min(schedule.cap, policy.competence + schedule.competence_rate))


def expected_consecutive_successes(q: float, drop_independent: bool = True, *, episodes: int = 10_000, seed: int = 0) -> float:
    """Mean episode-final success count when each goal succeeds with probability ``q``.

    With ``drop_independent`` the closed form ``q / (1 - q)`` of the
    geometric model is returned. Otherwise ``episodes`` single episodes of
    the full environment protocol are simulated and their mean returned.
    """
    if not 0.0 <= q < 1.0:
        raise ValueError(f"q must lie in [0, 1) for a finite expectation, got {q}")
    if drop_independent:
        return q / (1.0 - q)
    from vadr.curriculum import monte_carlo_consecutive_successes

    return float(np.mean(monte_carlo_consecutive_successes(q, episodes, np.random.default_rng(seed))))


def success_probability_for(expected: float) -> float:
    """Inverse of :func:`expected_consecutive_successes`."""
    if expected < 0:
        raise ValueError("expected successes must be >= 0")
    return expected / (1.0 + expected)
