"""Observation, action and physics randomisation operators.

Every operator keeps per-environment state in arrays indexed by environment,
so a batch of environments is processed in one call. Episode-scoped
quantities (correlated noise offset, latency, gate period and phase,
injection probability) are drawn in ``reset`` and held until the next one.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from vadr import quat
from vadr.adr import AdrConfig, Kind

DEPLOY_EMA_FACTOR = 0.1
EMA_ANNEAL = (0.2, 0.15)
GRAVITY_PERIOD = 720
GRAVITY_STD = 0.5
NOMINAL_GRAVITY = (0.0, 0.0, -9.81)
POSE_WIDTH = 7  # position (3) + quaternion (4)


def noise_variance(a):
    """``exp(a^2) - 1``: zero at ``a = 0`` so ADR can switch noise fully off."""
    return np.expm1(np.square(np.asarray(a, dtype=np.float64)))


def _column(values, index, n, default):
    if index is None:
        return np.full(n, float(default))
    return np.asarray(values, dtype=np.float64)[:, index]


class NoiseChannel:
    """Additive Gaussian noise ``x + delta + eps``.

    ``delta`` is drawn per episode with variance ``var(a_corr)``, ``eps``
    every step with variance ``var(a_uncorr)``.
    """

    def __init__(self, num_envs, width, corr_index=None, uncorr_index=None):
        self.width = width
        self.corr_index = corr_index
        self.uncorr_index = uncorr_index
        self.delta = np.zeros((num_envs, width))

    def reset(self, ids, adr_values, rng):
        a = _column(adr_values, self.corr_index, len(ids), 0.0)
        std = np.sqrt(noise_variance(a))
        self.delta[ids] = std[:, None] * rng.standard_normal((len(ids), self.width))

    def apply(self, x, adr_values, rng):
        a = _column(adr_values, self.uncorr_index, x.shape[0], 0.0)
        std = np.sqrt(noise_variance(a))
        eps = std[:, None] * rng.standard_normal(x.shape)
        return x + self.delta + eps


class ExponentialDelayLine:
    """Hold the previous output with probability ``p``, else pass ``x`` through."""

    def __init__(self, num_envs, width, prob_index=None):
        self.prob_index = prob_index
        self.last = np.zeros((num_envs, width))

    def reset(self, ids, initial):
        self.last[ids] = initial

    def apply(self, x, p, rng, hold=None):
        p = np.asarray(p, dtype=np.float64)
        if np.any((p < 0) | (p >= 1)):
            raise ValueError("delay probability must lie in [0, 1)")
        if hold is None:
            hold = rng.random(x.shape[0]) < p
        out = np.where(np.asarray(hold, dtype=bool)[:, None], self.last, x)
        self.last = out.copy()
        return out


def latency_from_value(v, rng):
    """Integer delay ``round(v + U(-0.5, 0.5))`` clamped at zero.

    ``v`` is the already-sampled ADR value; the jitter blends neighbouring
    integer delays so the delay grows smoothly with the bound.
    """
    v = np.asarray(v, dtype=np.float64)
    eps = v + rng.uniform(-0.5, 0.5, size=v.shape)
    return np.maximum(np.floor(eps + 0.5), 0).astype(np.int64)


def sample_latency(b, rng, size=None):
    """``k = round(U(0, b) + U(-0.5, 0.5))``, clamped at zero."""
    if b < 0:
        raise ValueError("latency bound must be >= 0")
    return latency_from_value(rng.uniform(0.0, b, size=size), rng)


class ActionLatencyBuffer:
    """Executes the action from ``k`` steps ago, zeros before the first ``k`` steps."""

    def __init__(self, num_envs, width, max_latency, latency_index=None):
        if max_latency < 0:
            raise ValueError("max_latency must be >= 0")
        self.max_latency = int(max_latency)
        self.latency_index = latency_index
        self.k = np.zeros(num_envs, dtype=np.int64)
        self.history = np.zeros((num_envs, self.max_latency + 1, width))

    def reset(self, ids, adr_values, rng, k=None):
        if k is None:
            v = _column(adr_values, self.latency_index, len(ids), 0.0)
            k = latency_from_value(v, rng)
        self.k[ids] = np.clip(k, 0, self.max_latency)
        self.history[ids] = 0.0

    def push(self, a):
        self.history[:, 1:] = self.history[:, :-1]
        self.history[:, 0] = a
        return self.history[np.arange(a.shape[0]), self.k].copy()


def delay_action(buffer: ActionLatencyBuffer, a):
    return buffer.push(a)


class ObsRateGate:
    """Refresh the held observation only when ``(t + r) mod d == 0``."""

    def __init__(self, num_envs, width, freq_index=None, delay_max=1):
        self.freq_index = freq_index
        self.delay_max = max(int(delay_max), 1)
        self.d = np.ones(num_envs, dtype=np.int64)
        self.r = np.zeros(num_envs, dtype=np.int64)
        self.t = np.zeros(num_envs, dtype=np.int64)
        self.held = np.zeros((num_envs, width))

    def reset(self, ids, adr_values, initial, rng, d=None, r=None):
        if d is None:
            v = _column(adr_values, self.freq_index, len(ids), 1.0)
            d = np.clip(latency_from_value(v, rng), 1, self.delay_max)
        d = np.asarray(d, dtype=np.int64)
        if r is None:
            r = rng.integers(0, d)
        self.d[ids] = d
        self.r[ids] = r
        self.t[ids] = 0
        self.held[ids] = initial

    def fires(self):
        return (self.t + self.r) % self.d == 0

    def apply(self, fresh):
        fire = self.fires()
        self.held[fire] = fresh[fire]
        self.t += 1
        return self.held.copy()


def gate_observation(t, gate: ObsRateGate, fresh):
    """Single-call form: sets the gate clock to ``t`` for every env, then applies."""
    gate.t[:] = t
    return gate.apply(fresh)


def random_poses(rng, n, center=(0.0, 0.0, 0.0), half_width=0.05):
    pos = np.asarray(center) + rng.uniform(-half_width, half_width, size=(n, 3))
    return np.concatenate([pos, quat.random(rng, n)], axis=1)


class PoseInjector:
    """Replace the observed pose by a random one with per-episode probability ``p``."""

    def __init__(self, num_envs, p_index=None, p_max=0.3, center=(0.0, 0.0, 0.0), half_width=0.05):
        self.p_index = p_index
        self.p_max = p_max
        self.center = center
        self.half_width = half_width
        self.p = np.zeros(num_envs)

    def reset(self, ids, adr_values, rng):
        p_max = _column(adr_values, self.p_index, len(ids), self.p_max)
        self.p[ids] = rng.uniform(0.0, 1.0, size=len(ids)) * p_max

    def apply(self, pose, rng, m=None):
        n = pose.shape[0]
        if m is None:
            m = rng.random(n) < self.p
        m = np.asarray(m, dtype=np.float64)[:, None]
        injected = random_poses(rng, n, self.center, self.half_width)
        return pose * (1.0 - m) + injected * m


def inject_pose(true_pose, injector: PoseInjector, rng):
    return injector.apply(true_pose, rng)


class RandomNetworkAdversary:
    """One shared random MLP, per-environment dropout masks on its hidden layer.

    Weights are drawn once with standard deviation ``1/sqrt(fan_in)``; masks
    keep each hidden unit with probability ``keep`` and are redrawn every
    ``refresh_period`` steps. Output goes through ``tanh`` so it stays in
    the action range.
    """

    def __init__(self, obs_dim, act_dim, num_envs, rng, hidden=256, keep=0.5, refresh_period=720, alpha_index=None):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.keep = keep
        self.refresh_period = refresh_period
        self.alpha_index = alpha_index
        self.w1 = rng.normal(0.0, 1.0 / np.sqrt(obs_dim), size=(obs_dim, hidden))
        self.w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, act_dim))
        self.w1.setflags(write=False)
        self.w2.setflags(write=False)
        self.masks = np.ones((num_envs, hidden), dtype=bool)
        self.refresh(rng)

    def refresh(self, rng, ids=None):
        if ids is None:
            self.masks = rng.random(self.masks.shape) < self.keep
        else:
            self.masks[ids] = rng.random((len(ids), self.masks.shape[1])) < self.keep

    def maybe_refresh(self, step, rng):
        if step > 0 and step % self.refresh_period == 0:
            self.refresh(rng)

    def forward(self, obs, masks=None):
        obs = np.asarray(obs, dtype=np.float64)
        if obs.ndim != 2 or obs.shape[1] != self.obs_dim:
            raise ValueError(f"RNA expects observations of width {self.obs_dim}, got shape {obs.shape}")
        masks = self.masks if masks is None else masks
        h = np.maximum(obs @ self.w1, 0.0) * masks
        return np.tanh(h @ self.w2)

    def act(self, obs, a_policy, alpha):
        alpha = np.asarray(alpha, dtype=np.float64)
        if np.any((alpha < 0) | (alpha > 1)):
            raise ValueError("alpha must lie in [0, 1]")
        alpha = alpha.reshape(-1, 1) if alpha.ndim else alpha
        return alpha * self.forward(obs) + (1.0 - alpha) * np.asarray(a_policy, dtype=np.float64)


def rna_act(obs, rna: RandomNetworkAdversary, a_policy, alpha):
    return rna.act(obs, a_policy, alpha)


def ema_factor(progress, start=EMA_ANNEAL[0], end=EMA_ANNEAL[1]):
    """Linear anneal of the smoothing factor over training progress in [0, 1]."""
    progress = min(max(float(progress), 0.0), 1.0)
    return start + (end - start) * progress


class EmaFilter:
    def __init__(self, num_envs, width, factor=1.0):
        self.factor = factor
        self.state = np.zeros((num_envs, width))

    @property
    def factor(self):
        return self._factor

    @factor.setter
    def factor(self, value):
        if not 0 < value <= 1:
            raise ValueError(f"EMA factor must lie in (0, 1], got {value}")
        self._factor = float(value)

    def reset(self, ids):
        self.state[ids] = 0.0

    def step(self, x):
        self.state = self._factor * x + (1.0 - self._factor) * self.state
        return self.state.copy()


def ema_step(x, filt: EmaFilter):
    return filt.step(x)


@dataclass(frozen=True)
class PhysicsParamBinding:
    nominal: float
    kind: Kind
    sampled: float


def apply_physics(binding: PhysicsParamBinding):
    kind = Kind(binding.kind)
    if kind is Kind.SCALING:
        return binding.nominal * binding.sampled
    if kind is Kind.ADDITIVE:
        return binding.nominal + binding.sampled
    return binding.sampled


def physics_value(nominal, kind, sampled):
    """Vectorised :func:`apply_physics`."""
    kind = Kind(kind)
    sampled = np.asarray(sampled, dtype=np.float64)
    if kind is Kind.SCALING:
        return nominal * sampled
    if kind is Kind.ADDITIVE:
        return nominal + sampled
    return sampled


def resample_gravity(step, seed, nominal=NOMINAL_GRAVITY, std=GRAVITY_STD, period=GRAVITY_PERIOD):
    """Gravity for a global step: nominal plus ``N(0, std)`` per axis, redrawn every ``period`` steps.

    A pure function of ``(seed, step // period)``.
    """
    epoch = int(step) // int(period)
    rng = np.random.default_rng([int(seed), epoch])
    return np.asarray(nominal, dtype=np.float64) + rng.normal(0.0, std, size=3)


# -- pipeline ---------------------------------------------------------------

OBS_OPS = {"gate": 1, "delay": 1, "inject": 1, "noise": 2}
ACTION_OPS = {"rna": 1, "noise": 2, "latency": 1, "delay": 1, "ema": 0}

DEFAULT_OBS_CHAIN = (
    "gate(obj_pose_freq)",
    "delay(obj_pose_delay_prob)",
    "inject(random_pose_injection)",
    "noise(obs_corr_noise, obs_uncorr_noise)",
)
DEFAULT_ACTION_CHAIN = (
    "rna(rna_alpha)",
    "noise(action_corr_noise, action_uncorr_noise)",
    "latency(action_latency)",
    "delay(action_delay_prob)",
    "ema",
)

_OP_RE = re.compile(r"^\s*([a-z_]+)\s*(?:\(([^)]*)\))?\s*$")


@dataclass(frozen=True)
class OpSpec:
    op: str
    refs: tuple[str, ...] = ()

    def __str__(self):
        return f"{self.op}({', '.join(self.refs)})" if self.refs else self.op


def parse_chain(items: Sequence[str] | str, allowed: dict[str, int]) -> tuple[OpSpec, ...]:
    if isinstance(items, str):
        items = [s for s in re.split(r"[;,]\s*(?![^()]*\))", items) if s.strip()]
    out = []
    for item in items:
        m = _OP_RE.match(item)
        if not m:
            raise ValueError(f"cannot parse operator {item!r}")
        name, args = m.group(1), m.group(2)
        refs = tuple(a.strip() for a in args.split(",") if a.strip()) if args else ()
        if name not in allowed:
            raise ValueError(f"operator {name!r} not allowed here (allowed: {sorted(allowed)})")
        if len(refs) != allowed[name]:
            raise ValueError(f"operator {name!r} takes {allowed[name]} dimension reference(s), got {len(refs)}")
        out.append(OpSpec(name, refs))
    return tuple(out)


@dataclass
class PipelineSpec:
    observation: tuple[OpSpec, ...] = field(default_factory=lambda: parse_chain(DEFAULT_OBS_CHAIN, OBS_OPS))
    action: tuple[OpSpec, ...] = field(default_factory=lambda: parse_chain(DEFAULT_ACTION_CHAIN, ACTION_OPS))
    ema_start: float = EMA_ANNEAL[0]
    ema_end: float = EMA_ANNEAL[1]
    rna_hidden: int = 256
    rna_keep: float = 0.5
    rna_refresh: int = 720
    injection_half_width: float = 0.05

    @classmethod
    def empty(cls):
        return cls(observation=(), action=())


class RandomisationPipeline:
    """The resolved operator chains for one environment batch.

    Observation chain acts on the cube pose ``[pos(3), quat(4)]``; action
    chain acts on raw policy actions and ends with whatever the config lists
    last (EMA by default).
    """

    def __init__(self, spec: PipelineSpec, adr_config: AdrConfig, num_envs, obs_dim, act_dim, rng):
        self.spec = spec
        self.num_envs = num_envs
        self.ema_factor = spec.ema_start
        self.obs_ops = [self._build(s, adr_config, POSE_WIDTH, obs_dim, act_dim, rng, obs=True) for s in spec.observation]
        self.action_ops = [self._build(s, adr_config, act_dim, obs_dim, act_dim, rng, obs=False) for s in spec.action]

    def _build(self, s: OpSpec, cfg, width, obs_dim, act_dim, rng, obs):
        try:
            idx = [cfg.index(r) for r in s.refs]
        except KeyError as exc:
            raise ValueError(f"{'observation' if obs else 'action'} operator {s}: {exc.args[0]}") from None
        n = self.num_envs
        if s.op == "gate":
            delay_max = int(np.ceil(cfg.dimensions[idx[0]].max_bound)) if np.isfinite(cfg.dimensions[idx[0]].max_bound) else 10
            return s, idx, ObsRateGate(n, width, idx[0], delay_max)
        if s.op == "delay":
            return s, idx, ExponentialDelayLine(n, width, idx[0])
        if s.op == "inject":
            return s, idx, PoseInjector(n, idx[0], half_width=self.spec.injection_half_width)
        if s.op == "noise":
            return s, idx, NoiseChannel(n, width, idx[0], idx[1])
        if s.op == "latency":
            mb = cfg.dimensions[idx[0]].max_bound
            max_latency = int(np.floor(mb + 1.0)) if np.isfinite(mb) else 8
            return s, idx, ActionLatencyBuffer(n, width, max_latency, idx[0])
        if s.op == "rna":
            rna = RandomNetworkAdversary(
                obs_dim, act_dim, n, rng, self.spec.rna_hidden, self.spec.rna_keep, self.spec.rna_refresh, idx[0]
            )
            return s, idx, rna
        if s.op == "ema":
            return s, idx, EmaFilter(n, width, 1.0)
        raise AssertionError(s.op)

    @property
    def needs_observation(self):
        return any(s.op == "rna" for s, _, _ in self.action_ops)

    def set_progress(self, progress):
        self.ema_factor = ema_factor(progress, self.spec.ema_start, self.spec.ema_end)

    def reset(self, ids, adr_values, pose, rng):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size == 0:
            return
        for s, _, op in self.obs_ops:
            if s.op == "gate":
                op.reset(ids, adr_values, pose, rng)
            elif s.op == "delay":
                op.reset(ids, pose)
            else:
                op.reset(ids, adr_values, rng)
        for s, _, op in self.action_ops:
            if s.op == "noise" or s.op == "latency":
                op.reset(ids, adr_values, rng)
            elif s.op == "delay":
                op.reset(ids, 0.0)
            elif s.op == "ema":
                op.reset(ids)

    def observe(self, pose, adr_values, rng):
        x = pose
        for s, idx, op in self.obs_ops:
            if s.op == "gate":
                x = op.apply(x)
            elif s.op == "delay":
                x = op.apply(x, adr_values[:, idx[0]], rng)
            elif s.op == "inject":
                x = op.apply(x, rng)
            else:
                x = op.apply(x, adr_values, rng)
        return x

    def act(self, a_policy, obs_vec, adr_values, rng, step=0):
        a = a_policy
        for s, idx, op in self.action_ops:
            if s.op == "rna":
                op.maybe_refresh(step, rng)
                a = op.act(obs_vec, a, adr_values[:, idx[0]])
            elif s.op == "noise":
                a = op.apply(a, adr_values, rng)
            elif s.op == "latency":
                a = op.push(a)
            elif s.op == "delay":
                a = op.apply(a, adr_values[:, idx[0]], rng)
            else:
                op.factor = self.ema_factor
                a = op.step(a)
        return a

    def describe(self, adr_config: AdrConfig) -> list[str]:
        lines = []
        for label, ops in (("observation", self.obs_ops), ("action", self.action_ops)):
            lines.append(f"{label}:")
            for i, (s, idx, _) in enumerate(ops):
                refs = ", ".join(
                    f"{r} -> dim {j} (bounds p[{2 * j}], p[{2 * j + 1}])" for r, j in zip(s.refs, idx)
                )
                extra = f" factor anneal {self.spec.ema_start} -> {self.spec.ema_end}" if s.op == "ema" else ""
                lines.append(f"  {i}. {s.op}" + (f": {refs}" if refs else "") + extra)
        return lines
