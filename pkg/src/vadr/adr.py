"""Vectorised automatic domain randomisation.

Each randomised parameter ``n`` owns a uniform range ``[p[2n], p[2n+1]]``.
A share of environments is pinned, per episode, to one boundary of one
dimension; their episode-final consecutive-success counts accumulate in a
fixed-capacity queue per boundary. A full queue whose mean is above
``t_high`` widens that boundary by the dimension's step, below ``t_low``
tightens it, and any boundary that fires has its queue cleared.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

NPD_WIDTH_FLOOR = 1e-12
UNPINNED = -1


class Kind(str, enum.Enum):
    SCALING = "Scaling"
    ADDITIVE = "Additive"
    SET_VALUE = "SetValue"


@dataclass(frozen=True)
class DimensionSpec:
    name: str
    kind: Kind = Kind.SCALING
    init_lo: float = 0.0
    init_hi: float = 0.0
    min_bound: float = -math.inf
    max_bound: float = math.inf
    delta: float = 0.01
    nominal: float = 0.0
    distribution: str = "uniform"
    fixed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if not self.init_lo <= self.init_hi:
            raise ValueError(f"{self.name}: init_lo {self.init_lo} > init_hi {self.init_hi}")
        if not self.min_bound <= self.init_lo:
            raise ValueError(f"{self.name}: min_bound {self.min_bound} > init_lo {self.init_lo}")
        if not self.init_hi <= self.max_bound:
            raise ValueError(f"{self.name}: init_hi {self.init_hi} > max_bound {self.max_bound}")
        if not self.delta > 0:
            raise ValueError(f"{self.name}: delta must be positive, got {self.delta}")
        if self.distribution not in ("uniform", "loguniform"):
            raise ValueError(f"{self.name}: unknown distribution {self.distribution!r}")
        if self.distribution == "loguniform" and self.min_bound <= 0:
            raise ValueError(f"{self.name}: loguniform needs a positive min_bound")

    @property
    def span(self) -> float:
        """Width used to normalise severity; falls back to the initial range."""
        if math.isfinite(self.min_bound) and math.isfinite(self.max_bound) and self.max_bound > self.min_bound:
            return self.max_bound - self.min_bound
        return max(self.init_hi - self.init_lo, 1.0)


@dataclass(frozen=True)
class AdrConfig:
    dimensions: tuple[DimensionSpec, ...]
    t_high: float = 20.0
    t_low: float = 5.0
    eval_fraction: float = 0.4
    queue_length: int = 256

    def __post_init__(self):
        object.__setattr__(self, "dimensions", tuple(self.dimensions))
        if not 0 < self.t_low < self.t_high:
            raise ValueError(f"need 0 < t_low < t_high, got t_low={self.t_low}, t_high={self.t_high}")
        if not 0 < self.eval_fraction < 1:
            raise ValueError(f"eval_fraction must lie in (0, 1), got {self.eval_fraction}")
        if self.queue_length < 1:
            raise ValueError("queue_length must be >= 1")
        names = [d.name for d in self.dimensions]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate dimension names in {names}")
        if not names:
            raise ValueError("at least one dimension is required")

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dimensions]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown ADR dimension {name!r}") from None


@dataclass(frozen=True)
class EpisodeOutcome:
    env_index: int
    consecutive_successes: int
    done: bool = True


@dataclass(frozen=True)
class BoundaryEvent:
    """A full-queue evaluation that crossed a threshold."""

    step: int
    dimension: str
    boundary: str
    action: str
    mean_queue: float
    bound_value: float
    npd: float

    def record(self) -> dict:
        return {
            "step": self.step,
            "dimension": self.dimension,
            "boundary": self.boundary,
            "action": self.action,
            "mean_queue": self.mean_queue,
            "bound_value": self.bound_value,
            "npd": self.npd,
        }


@dataclass
class AdrState:
    """Boundaries, per-boundary queues and the per-environment assignment."""

    config: AdrConfig
    num_envs: int
    p: np.ndarray = field(init=False)
    queues: list = field(init=False)
    modes: np.ndarray = field(init=False)
    values: np.ndarray = field(init=False)
    events: list = field(init=False, default_factory=list)

    def __post_init__(self):
        if self.num_envs < 1:
            raise ValueError("num_envs must be >= 1")
        dims = self.config.dimensions
        self.p = np.array([b for d in dims for b in (d.init_lo, d.init_hi)], dtype=np.float64)
        self.queues = [deque(maxlen=self.config.queue_length) for _ in range(2 * len(dims))]
        self.modes = np.full(self.num_envs, UNPINNED, dtype=np.int64)
        self.values = np.tile(self.p[0::2], (self.num_envs, 1))
        self.events = []

    @property
    def num_dims(self) -> int:
        return len(self.config.dimensions)

    @property
    def lower(self) -> np.ndarray:
        return self.p[0::2]

    @property
    def upper(self) -> np.ndarray:
        return self.p[1::2]

    def bounds(self) -> dict[str, tuple[float, float]]:
        return {d.name: (float(self.p[2 * i]), float(self.p[2 * i + 1])) for i, d in enumerate(self.config.dimensions)}

    def npd(self) -> float:
        return npd(self.p)

    def copy_bounds(self) -> np.ndarray:
        return self.p.copy()

    def set_bounds(self, p) -> None:
        p = np.asarray(p, dtype=np.float64)
        if p.shape != self.p.shape:
            raise ValueError(f"expected {self.p.shape[0]} boundary values, got {p.shape}")
        for n, d in enumerate(self.config.dimensions):
            lo, hi = p[2 * n], p[2 * n + 1]
            if not d.min_bound <= lo <= hi <= d.max_bound:
                raise ValueError(f"{d.name}: bounds [{lo}, {hi}] violate [{d.min_bound}, {d.max_bound}]")
        self.p[:] = p


def npd(p) -> float:
    """Nats per dimension: mean log-width of the ranges, widths floored at 1e-12."""
    p = np.asarray(p, dtype=np.float64).reshape(-1, 2)
    width = p[:, 1] - p[:, 0]
    if np.any(width < 0):
        raise ValueError("npd: negative range width")
    return float(np.mean(np.log(np.maximum(width, NPD_WIDTH_FLOOR))))


def _step_boundary(state: AdrState, b: int, step: int) -> None:
    cfg = state.config
    queue = state.queues[b]
    if len(queue) < cfg.queue_length:
        return
    n, is_upper = divmod(b, 2)
    dim = cfg.dimensions[n]
    mean = float(np.mean(queue))
    if mean > cfg.t_high:
        direction, action = (1.0 if is_upper else -1.0), "widen"
    elif mean < cfg.t_low:
        direction, action = (-1.0 if is_upper else 1.0), "tighten"
    else:
        return
    value = state.p[b] + direction * dim.delta
    if is_upper:
        value = min(max(value, dim.min_bound, state.p[b - 1]), dim.max_bound)
    else:
        value = max(min(value, dim.max_bound, state.p[b + 1]), dim.min_bound)
    state.p[b] = value
    queue.clear()
    event = BoundaryEvent(
        step=step,
        dimension=dim.name,
        boundary="upper" if is_upper else "lower",
        action=action,
        mean_queue=mean,
        bound_value=float(value),
        npd=npd(state.p),
    )
    state.events.append(event)


def adr_update_arrays(state: AdrState, env_ids, successes, step: int = 0) -> list[BoundaryEvent]:
    """Array form of :func:`adr_update` used by the training loop.

    ``env_ids`` are environments whose episodes just finished and
    ``successes`` their final consecutive-success counts. Outcomes from
    unpinned environments are ignored. Returns the events fired.
    """
    env_ids = np.asarray(env_ids, dtype=np.int64).reshape(-1)
    successes = np.asarray(successes).reshape(-1)
    if env_ids.shape != successes.shape:
        raise ValueError("env_ids and successes must have the same length")
    if env_ids.size and (env_ids.min() < 0 or env_ids.max() >= state.num_envs):
        bad = env_ids[(env_ids < 0) | (env_ids >= state.num_envs)]
        raise ValueError(f"env_index out of range [0, {state.num_envs}): {bad.tolist()}")
    if np.any(successes < 0):
        raise ValueError("consecutive success counts must be non-negative")
    before = len(state.events)
    modes = state.modes[env_ids]
    pinned = modes >= 0
    # append in environment order, boundary by boundary
    order = np.argsort(env_ids[pinned], kind="stable")
    pinned_modes = modes[pinned][order]
    pinned_counts = successes[pinned][order]
    touched = np.unique(pinned_modes)
    for b in touched:
        if state.config.dimensions[b // 2].fixed:
            continue
        state.queues[b].extend(int(c) for c in pinned_counts[pinned_modes == b])
    for b in touched:
        if state.config.dimensions[b // 2].fixed:
            continue
        _step_boundary(state, int(b), step)
    return state.events[before:]


def adr_update(state: AdrState, outcomes: Sequence[EpisodeOutcome], step: int = 0) -> AdrState:
    """Feed finished episodes to their boundary queues and move bounds.

    For a lower boundary a full queue with mean above ``t_high`` lowers the
    bound by ``delta`` and a mean below ``t_low`` raises it; the upper
    boundary moves the opposite way. The moved bound is clamped to the
    dimension's hard limits and to the other end of its range, and the
    queue is emptied. Outcomes must all be ``done``.
    """
    env_ids = []
    counts = []
    for o in outcomes:
        if not o.done:
            raise ValueError(f"outcome for env {o.env_index} is not done")
        if isinstance(o.env_index, bool) or int(o.env_index) != o.env_index:
            raise ValueError(f"malformed env_index {o.env_index!r}")
        env_ids.append(int(o.env_index))
        counts.append(int(o.consecutive_successes))
    adr_update_arrays(state, np.array(env_ids, dtype=np.int64), np.array(counts, dtype=np.int64), step)
    return state


def sample_values(state: AdrState, modes: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """ADR values for environments with the given modes; pinned dims get ``p[mode]``."""
    k = modes.shape[0]
    dims = state.config.dimensions
    lo = state.p[0::2]
    hi = state.p[1::2]
    u = rng.random((k, len(dims)))
    values = lo + (hi - lo) * u
    for n, d in enumerate(dims):
        if d.distribution == "loguniform" and lo[n] > 0:
            values[:, n] = np.exp(np.log(lo[n]) + (np.log(hi[n]) - np.log(lo[n])) * u[:, n])
    pinned = np.flatnonzero(modes >= 0)
    values[pinned, modes[pinned] // 2] = state.p[modes[pinned]]
    return values


def reset_adr_values(state: AdrState, done_mask, rng: np.random.Generator) -> AdrState:
    """Redraw modes and values for finished environments.

    Each finished environment is unpinned with probability
    ``1 - eval_fraction`` and otherwise pinned to a boundary drawn uniformly
    from ``0 .. 2D-1``. Unfinished environments keep their assignment.
    """
    done_mask = np.asarray(done_mask, dtype=bool)
    if done_mask.shape != (state.num_envs,):
        raise ValueError(f"done_mask must have shape ({state.num_envs},), got {done_mask.shape}")
    ids = np.flatnonzero(done_mask)
    if ids.size == 0:
        return state
    k = ids.size
    is_eval = rng.random(k) < state.config.eval_fraction
    boundary = rng.integers(0, 2 * state.num_dims, size=k)
    modes = np.where(is_eval, boundary, UNPINNED)
    state.modes[ids] = modes
    state.values[ids] = sample_values(state, modes, rng)
    return state
