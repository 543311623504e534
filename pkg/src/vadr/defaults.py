"""Default randomisation dimension table.

``REFERENCE_RANGES`` holds, per parameter, the application type, the noise
or sampling distribution, the initial range ADR starts from and the range
ADR reached in the reference training run. ``DEFAULT_LIMITS`` adds the
hard clamps, step sizes and nominal values this package chooses so each
row becomes a :class:`~vadr.adr.DimensionSpec`.
"""

from __future__ import annotations

from dataclasses import dataclass

from vadr.adr import AdrConfig, DimensionSpec, Kind


@dataclass(frozen=True)
class ReferenceRow:
    name: str
    group: str
    label: str
    kind: Kind | None
    distribution: str
    initial: tuple[float, float] | None
    discovered: tuple[float, float] | None


_S, _A, _V = Kind.SCALING, Kind.ADDITIVE, Kind.SET_VALUE

REFERENCE_RANGES: tuple[ReferenceRow, ...] = (
    ReferenceRow("hand_mass", "Hand", "Mass", _S, "uniform", (0.4, 1.5), (0.4, 1.5)),
    ReferenceRow("hand_scale", "Hand", "Scale", _S, "uniform", (0.95, 1.05), (0.95, 1.05)),
    ReferenceRow("hand_friction", "Hand", "Friction", _S, "uniform", (0.8, 1.2), (0.54, 1.58)),
    ReferenceRow("hand_armature", "Hand", "Armature", _S, "uniform", (0.8, 1.02), (0.31, 1.24)),
    ReferenceRow("hand_effort", "Hand", "Effort", _S, "uniform", (0.9, 1.1), (0.9, 2.49)),
    ReferenceRow("hand_joint_stiffness", "Hand", "Joint Stiffness", _S, "loguniform", (0.3, 3.0), (0.3, 3.52)),
    ReferenceRow("hand_joint_damping", "Hand", "Joint Damping", _S, "loguniform", (0.75, 1.5), (0.43, 1.6)),
    ReferenceRow("hand_restitution", "Hand", "Restitution", _A, "uniform", (0.0, 0.4), (0.0, 0.4)),
    ReferenceRow("object_mass", "Object", "Mass", _S, "uniform", (0.4, 1.6), (0.4, 1.6)),
    ReferenceRow("object_friction", "Object", "Friction", _S, "uniform", (0.3, 0.9), (0.01, 1.60)),
    ReferenceRow("object_scale", "Object", "Scale", _S, "uniform", (0.95, 1.05), (0.95, 1.05)),
    ReferenceRow("object_external_forces", "Object", "External Forces", _A, "external", None, None),
    ReferenceRow("object_restitution", "Object", "Restitution", _A, "uniform", (0.0, 0.4), (0.0, 0.4)),
    ReferenceRow("obj_pose_delay_prob", "Observation", "Obj. Pose Delay Prob.", _V, "uniform", (0.0, 0.05), (0.0, 0.47)),
    ReferenceRow("obj_pose_freq", "Observation", "Obj. Pose Freq.", _V, "uniform", (1.0, 1.0), (1.0, 6.0)),
    ReferenceRow("obs_corr_noise", "Observation", "Obs Corr. Noise", _A, "gaussian", (0.0, 0.04), (0.0, 0.12)),
    ReferenceRow("obs_uncorr_noise", "Observation", "Obs Uncorr. Noise", _A, "gaussian", (0.0, 0.04), (0.0, 0.14)),
    ReferenceRow("random_pose_injection", "Observation", "Random Pose Injection", _V, "uniform", (0.3, 0.3), (0.3, 0.3)),
    ReferenceRow("action_delay_prob", "Action", "Action Delay Prob.", _V, "uniform", (0.0, 0.05), (0.0, 0.31)),
    ReferenceRow("action_latency", "Action", "Action Latency", _V, "uniform", (0.0, 0.0), (0.0, 1.5)),
    ReferenceRow("action_corr_noise", "Action", "Action Corr. Noise", _A, "gaussian", (0.0, 0.04), (0.0, 0.32)),
    ReferenceRow("action_uncorr_noise", "Action", "Action Uncorr. Noise", _A, "gaussian", (0.0, 0.04), (0.0, 0.48)),
    ReferenceRow("rna_alpha", "Action", "RNA alpha", _V, "uniform", (0.0, 0.0), (0.0, 0.16)),
    ReferenceRow("gravity", "Environment", "Gravity (each coord.)", _A, "normal", (0.0, 0.5), (0.0, 0.5)),
)

# name -> (min_bound, max_bound, delta, nominal)
DEFAULT_LIMITS: dict[str, tuple[float, float, float, float]] = {
    "hand_mass": (0.4, 1.5, 0.01, 1.0),
    "hand_scale": (0.95, 1.05, 0.01, 1.0),
    "hand_friction": (0.01, 3.0, 0.01, 1.0),
    "hand_armature": (0.01, 3.0, 0.01, 1.0),
    "hand_effort": (0.1, 3.0, 0.01, 1.0),
    "hand_joint_stiffness": (0.01, 10.0, 0.01, 1.0),
    "hand_joint_damping": (0.01, 10.0, 0.01, 1.0),
    "hand_restitution": (0.0, 0.4, 0.01, 0.0),
    "object_mass": (0.4, 1.6, 0.01, 1.0),
    "object_friction": (0.01, 3.0, 0.01, 1.0),
    "object_scale": (0.95, 1.05, 0.01, 1.0),
    "object_restitution": (0.0, 0.4, 0.01, 0.0),
    "obj_pose_delay_prob": (0.0, 0.95, 0.01, 0.0),
    "obj_pose_freq": (1.0, 10.0, 0.05, 1.0),
    "obs_corr_noise": (0.0, 1.0, 0.005, 0.0),
    "obs_uncorr_noise": (0.0, 1.0, 0.005, 0.0),
    "random_pose_injection": (0.3, 0.3, 0.01, 0.0),
    "action_delay_prob": (0.0, 0.95, 0.01, 0.0),
    "action_latency": (0.0, 3.0, 0.05, 0.0),
    "action_corr_noise": (0.0, 1.0, 0.005, 0.0),
    "action_uncorr_noise": (0.0, 1.0, 0.005, 0.0),
    "rna_alpha": (0.0, 1.0, 0.01, 0.0),
}

# mass and scale cannot change collision geometry at run time, so they keep
# their initial range; the injection probability ceiling is held constant
FIXED_DIMENSIONS = frozenset({"hand_mass", "hand_scale", "object_mass", "object_scale", "random_pose_injection"})


def reference_row(name: str) -> ReferenceRow:
    for row in REFERENCE_RANGES:
        if row.name == name:
            return row
    raise KeyError(f"no default randomisation named {name!r}")


def default_dimensions() -> tuple[DimensionSpec, ...]:
    """Every row with an initial range and a per-environment ADR value.

    External forces (no range given) and gravity (one batch-wide draw,
    resampled on a fixed period) are handled by the environment instead.
    """
    dims = []
    for row in REFERENCE_RANGES:
        if row.name not in DEFAULT_LIMITS:
            continue
        lo, hi, delta, nominal = DEFAULT_LIMITS[row.name]
        dims.append(
            DimensionSpec(
                name=row.name,
                kind=row.kind,
                init_lo=row.initial[0],
                init_hi=row.initial[1],
                min_bound=lo,
                max_bound=hi,
                delta=delta,
                nominal=nominal,
                distribution="loguniform" if row.distribution == "loguniform" else "uniform",
                fixed=row.name in FIXED_DIMENSIONS,
            )
        )
    return tuple(dims)


def default_adr_config(**kw) -> AdrConfig:
    return AdrConfig(default_dimensions(), **kw)
