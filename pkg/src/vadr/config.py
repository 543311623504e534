"""Experiment configuration as sectioned INI text.

Sections: ``[experiment]``, ``[env]``, ``[protocol]``, ``[reward]``,
``[adr]`` plus one ``[adr.dim.<name>]`` per dimension, ``[pipeline]`` and
``[policy]``. Parsing then serialising gives back the same text, so a
resolved config written next to a run's logs reproduces it.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field, fields, replace

from vadr.adr import AdrConfig, DimensionSpec, Kind
from vadr.defaults import default_dimensions
from vadr.env import EnvConfig, RewardWeights, SuccessProtocol
from vadr.policy import ImprovementSchedule, SyntheticPolicy
from vadr.randomisation import ACTION_OPS, DEFAULT_ACTION_CHAIN, DEFAULT_OBS_CHAIN, OBS_OPS, PipelineSpec, parse_chain


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists ``section.key: problem`` entries."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class PolicyConfig:
    competence: float = 1.0
    gain: float = 5.0
    bias: float = 0.0
    sensitivity: tuple[tuple[str, float], ...] = ()
    hold_jitter: float = 0.0
    position_gain: float = 0.5
    competence_rate: float = 0.0
    cap: float = 1.0
    improve_every: int = 100

    def weights(self, names) -> tuple[float, ...]:
        w = dict(self.sensitivity)
        return tuple(float(w.get(n, 0.0)) for n in names)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    steps: int = 2000
    record_every: int = 50
    trials: int = 10
    threshold_mode: str = "train"
    frame_hold: int = 0
    out: str = "runs/default"
    env: EnvConfig = field(default_factory=EnvConfig)
    adr: AdrConfig = field(default_factory=lambda: AdrConfig(default_dimensions()))
    pipeline: PipelineSpec = field(
        default_factory=lambda: PipelineSpec(
            parse_chain(DEFAULT_OBS_CHAIN, OBS_OPS), parse_chain(DEFAULT_ACTION_CHAIN, ACTION_OPS)
        )
    )
    policy: PolicyConfig = field(default_factory=PolicyConfig)

    def protocol(self, mode: str | None = None, frame_hold: int | None = None) -> SuccessProtocol:
        p = self.env.protocol
        return SuccessProtocol.for_mode(
            mode or self.threshold_mode,
            frame_hold_n=self.frame_hold if frame_hold is None else frame_hold,
            stuck_timeout_steps=p.stuck_timeout_steps,
            fall_distance=p.fall_distance,
        )

    def env_config(self, num_envs: int | None = None, mode: str | None = None, frame_hold: int | None = None) -> EnvConfig:
        return replace(self.env, num_envs=num_envs or self.env.num_envs, protocol=self.protocol(mode, frame_hold))

    def build_policy(self) -> SyntheticPolicy:
        p = self.policy
        return SyntheticPolicy(
            dims=self.adr.dimensions,
            sensitivity=p.weights(self.adr.names),
            competence=p.competence,
            gain=p.gain,
            bias=p.bias,
            hold_jitter=p.hold_jitter,
            position_gain=p.position_gain,
            max_angular_speed=self.env.max_angular_speed,
            max_linear_speed=self.env.max_linear_speed,
            control_dt=self.env.control_dt,
        )

    def schedule(self) -> ImprovementSchedule | None:
        if self.policy.competence_rate == 0:
            return None
        return ImprovementSchedule(self.policy.competence_rate, self.policy.cap)


# -- serialisation ------------------------------------------------------------

_ENV_KEYS = ("num_envs", "control_dt", "max_angular_speed", "max_linear_speed", "start_jitter",
             "external_force_scale", "gravity_coupling", "gravity_std", "gravity_period")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_ini(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp["experiment"] = {k: _fmt(getattr(cfg, k)) for k in
                        ("seed", "steps", "record_every", "trials", "threshold_mode", "frame_hold", "out")}
    cp["env"] = {k: _fmt(getattr(cfg.env, k)) for k in _ENV_KEYS}
    cp["protocol"] = {
        "stuck_timeout_steps": _fmt(cfg.env.protocol.stuck_timeout_steps),
        "fall_distance": _fmt(cfg.env.protocol.fall_distance),
    }
    cp["reward"] = {f.name: _fmt(getattr(cfg.env.reward, f.name)) for f in fields(RewardWeights)}
    a = cfg.adr
    cp["adr"] = {
        "t_high": _fmt(a.t_high), "t_low": _fmt(a.t_low), "eval_fraction": _fmt(a.eval_fraction),
        "queue_length": _fmt(a.queue_length), "dimensions": ", ".join(a.names),
    }
    for d in a.dimensions:
        cp[f"adr.dim.{d.name}"] = {
            "kind": d.kind.value, "init_lo": _fmt(d.init_lo), "init_hi": _fmt(d.init_hi),
            "min_bound": _fmt(d.min_bound), "max_bound": _fmt(d.max_bound), "delta": _fmt(d.delta),
            "nominal": _fmt(d.nominal), "distribution": d.distribution, "fixed": _fmt(d.fixed),
        }
    s = cfg.pipeline
    cp["pipeline"] = {
        "observation": "; ".join(str(o) for o in s.observation),
        "action": "; ".join(str(o) for o in s.action),
        "ema_start": _fmt(s.ema_start), "ema_end": _fmt(s.ema_end), "rna_hidden": _fmt(s.rna_hidden),
        "rna_keep": _fmt(s.rna_keep), "rna_refresh": _fmt(s.rna_refresh),
        "injection_half_width": _fmt(s.injection_half_width),
    }
    p = cfg.policy
    cp["policy"] = {
        "competence": _fmt(p.competence), "gain": _fmt(p.gain), "bias": _fmt(p.bias),
        "sensitivity": ", ".join(f"{n}:{_fmt(w)}" for n, w in p.sensitivity),
        "hold_jitter": _fmt(p.hold_jitter), "position_gain": _fmt(p.position_gain),
        "competence_rate": _fmt(p.competence_rate), "cap": _fmt(p.cap), "improve_every": _fmt(p.improve_every),
    }
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


class _Reader:
    def __init__(self, cp):
        self.cp = cp
        self.errors: list[str] = []

    def get(self, section, key, conv, default):
        if not self.cp.has_section(section) or not self.cp.has_option(section, key):
            return default
        raw = self.cp.get(section, key)
        try:
            return conv(raw)
        except (TypeError, ValueError) as exc:
            self.errors.append(f"{section}.{key}: cannot parse {raw!r} ({exc})")
            return default

    def check_keys(self, section, allowed):
        if self.cp.has_section(section):
            for key in self.cp.options(section):
                if key not in allowed:
                    self.errors.append(f"{section}.{key}: unknown key")


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _float(s):
    v = float(s)
    if math.isnan(v):
        raise ValueError("NaN is not allowed")
    return v


def _sensitivity(s):
    out = []
    for item in (x.strip() for x in s.split(",")):
        if not item:
            continue
        name, sep, w = item.partition(":")
        if not sep:
            raise ValueError(f"expected name:weight, got {item!r}")
        out.append((name.strip(), float(w)))
    return tuple(out)


def _build(label, errors, fn):
    try:
        return fn()
    except (TypeError, ValueError) as exc:
        errors.append(f"{label}: {exc}")
        return None


def from_ini(text: str) -> ExperimentConfig:
    """Parse INI text; missing keys take their defaults. Raises :class:`ConfigError`."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}"]) from None
    r = _Reader(cp)
    base = ExperimentConfig()
    known = {"experiment", "env", "protocol", "reward", "adr", "pipeline", "policy"}
    for s in cp.sections():
        if s not in known and not s.startswith("adr.dim."):
            r.errors.append(f"{s}: unknown section")

    exp_keys = ("seed", "steps", "record_every", "trials", "threshold_mode", "frame_hold", "out")
    r.check_keys("experiment", exp_keys)
    exp = {
        "seed": r.get("experiment", "seed", int, base.seed),
        "steps": r.get("experiment", "steps", int, base.steps),
        "record_every": r.get("experiment", "record_every", int, base.record_every),
        "trials": r.get("experiment", "trials", int, base.trials),
        "threshold_mode": r.get("experiment", "threshold_mode", str.strip, base.threshold_mode),
        "frame_hold": r.get("experiment", "frame_hold", int, base.frame_hold),
        "out": r.get("experiment", "out", str.strip, base.out),
    }
    if exp["threshold_mode"] not in ("train", "test"):
        r.errors.append(f"experiment.threshold_mode: must be train or test, got {exp['threshold_mode']!r}")
    for k in ("steps", "frame_hold"):
        if exp[k] < 0:
            r.errors.append(f"experiment.{k}: must be >= 0")
    for k in ("record_every", "trials"):
        if exp[k] < 1:
            r.errors.append(f"experiment.{k}: must be >= 1")

    r.check_keys("env", _ENV_KEYS)
    env_kw = {}
    for k in _ENV_KEYS:
        default = getattr(base.env, k)
        env_kw[k] = r.get("env", k, int if isinstance(default, int) else _float, default)
    r.check_keys("protocol", ("stuck_timeout_steps", "fall_distance"))
    proto = _build("protocol", r.errors, lambda: SuccessProtocol(
        stuck_timeout_steps=r.get("protocol", "stuck_timeout_steps", int, base.env.protocol.stuck_timeout_steps),
        fall_distance=r.get("protocol", "fall_distance", _float, base.env.protocol.fall_distance),
    ))
    reward_names = [f.name for f in fields(RewardWeights)]
    r.check_keys("reward", reward_names)
    reward = RewardWeights(**{k: r.get("reward", k, _float, getattr(base.env.reward, k)) for k in reward_names})
    env = _build("env", r.errors, lambda: EnvConfig(**env_kw, protocol=proto or SuccessProtocol(), reward=reward))

    r.check_keys("adr", ("t_high", "t_low", "eval_fraction", "queue_length", "dimensions"))
    default_dims = {d.name: d for d in base.adr.dimensions}
    names = r.get("adr", "dimensions", lambda s: [n.strip() for n in s.split(",") if n.strip()], list(default_dims))
    dim_sections = {s[len("adr.dim."):] for s in cp.sections() if s.startswith("adr.dim.")}
    for extra in sorted(dim_sections - set(names)):
        r.errors.append(f"adr.dim.{extra}: section for a dimension not listed in adr.dimensions")
    dims = []
    dim_keys = ("kind", "init_lo", "init_hi", "min_bound", "max_bound", "delta", "nominal", "distribution", "fixed")
    for name in names:
        sec = f"adr.dim.{name}"
        r.check_keys(sec, dim_keys)
        d0 = default_dims.get(name)
        if d0 is None and not cp.has_section(sec):
            r.errors.append(f"{sec}: dimension {name!r} has no defaults and no section")
            continue
        d0 = d0 or DimensionSpec(name)
        kw = {
            "kind": r.get(sec, "kind", lambda s: Kind(s.strip()), d0.kind),
            "init_lo": r.get(sec, "init_lo", _float, d0.init_lo),
            "init_hi": r.get(sec, "init_hi", _float, d0.init_hi),
            "min_bound": r.get(sec, "min_bound", _float, d0.min_bound),
            "max_bound": r.get(sec, "max_bound", _float, d0.max_bound),
            "delta": r.get(sec, "delta", _float, d0.delta),
            "nominal": r.get(sec, "nominal", _float, d0.nominal),
            "distribution": r.get(sec, "distribution", str.strip, d0.distribution),
            "fixed": r.get(sec, "fixed", _bool, d0.fixed),
        }
        d = _build(sec, r.errors, lambda: DimensionSpec(name, **kw))
        if d is not None:
            dims.append(d)
    adr = _build("adr", r.errors, lambda: AdrConfig(
        dims,
        t_high=r.get("adr", "t_high", _float, base.adr.t_high),
        t_low=r.get("adr", "t_low", _float, base.adr.t_low),
        eval_fraction=r.get("adr", "eval_fraction", _float, base.adr.eval_fraction),
        queue_length=r.get("adr", "queue_length", int, base.adr.queue_length),
    ))

    pipe_keys = ("observation", "action", "ema_start", "ema_end", "rna_hidden", "rna_keep", "rna_refresh",
                 "injection_half_width")
    r.check_keys("pipeline", pipe_keys)
    bp = base.pipeline
    obs_chain = _build("pipeline.observation", r.errors, lambda: parse_chain(
        r.get("pipeline", "observation", str, "; ".join(map(str, bp.observation))), OBS_OPS))
    act_chain = _build("pipeline.action", r.errors, lambda: parse_chain(
        r.get("pipeline", "action", str, "; ".join(map(str, bp.action))), ACTION_OPS))
    pipeline = PipelineSpec(
        obs_chain or (), act_chain or (),
        ema_start=r.get("pipeline", "ema_start", _float, bp.ema_start),
        ema_end=r.get("pipeline", "ema_end", _float, bp.ema_end),
        rna_hidden=r.get("pipeline", "rna_hidden", int, bp.rna_hidden),
        rna_keep=r.get("pipeline", "rna_keep", _float, bp.rna_keep),
        rna_refresh=r.get("pipeline", "rna_refresh", int, bp.rna_refresh),
        injection_half_width=r.get("pipeline", "injection_half_width", _float, bp.injection_half_width),
    )
    for k in ("ema_start", "ema_end"):
        v = getattr(pipeline, k)
        if not 0 < v <= 1:
            r.errors.append(f"pipeline.{k}: must lie in (0, 1], got {v}")
    if adr is not None:
        for label, chain in (("observation", pipeline.observation), ("action", pipeline.action)):
            for op in chain:
                for ref in op.refs:
                    if ref not in adr.names:
                        r.errors.append(f"pipeline.{label}: {op.op} refers to unknown dimension {ref!r}")

    pol_keys = tuple(f.name for f in fields(PolicyConfig))
    r.check_keys("policy", pol_keys)
    p0 = base.policy
    policy = PolicyConfig(
        competence=r.get("policy", "competence", _float, p0.competence),
        gain=r.get("policy", "gain", _float, p0.gain),
        bias=r.get("policy", "bias", _float, p0.bias),
        sensitivity=r.get("policy", "sensitivity", _sensitivity, p0.sensitivity),
        hold_jitter=r.get("policy", "hold_jitter", _float, p0.hold_jitter),
        position_gain=r.get("policy", "position_gain", _float, p0.position_gain),
        competence_rate=r.get("policy", "competence_rate", _float, p0.competence_rate),
        cap=r.get("policy", "cap", _float, p0.cap),
        improve_every=r.get("policy", "improve_every", int, p0.improve_every),
    )
    if not 0 <= policy.competence <= 1:
        r.errors.append(f"policy.competence: must lie in [0, 1], got {policy.competence}")
    if policy.gain <= 0:
        r.errors.append("policy.gain: must be positive")
    if policy.competence_rate < 0 or policy.cap > 1:
        r.errors.append("policy: need competence_rate >= 0 and cap <= 1")
    if policy.improve_every < 1:
        r.errors.append("policy.improve_every: must be >= 1")
    if adr is not None:
        for n, w in policy.sensitivity:
            if n not in adr.names:
                r.errors.append(f"policy.sensitivity: unknown dimension {n!r}")
            if w < 0:
                r.errors.append(f"policy.sensitivity: weight for {n!r} must be >= 0")

    if r.errors:
        raise ConfigError(r.errors)
    return ExperimentConfig(env=env, adr=adr, pipeline=pipeline, policy=policy, **exp)


def load(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([f"config: cannot read {path}: {exc.strerror}"]) from None
    return from_ini(text)
