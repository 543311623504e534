from pathlib import Path

import pytest

from vadr.adr import Kind
from vadr.config import ConfigError, ExperimentConfig, from_ini, load, to_ini
from vadr.defaults import (
    DEFAULT_LIMITS,
    FIXED_DIMENSIONS,
    REFERENCE_RANGES,
    default_adr_config,
    default_dimensions,
    reference_row,
)

CONFIGS = sorted((Path(__file__).resolve().parents[1] / "configs").glob("*.ini"))

# (label, type, initial range, discovered range), transcribed from the reference table
EXPECTED_ROWS = {
    "hand_mass": ("Scaling", (0.4, 1.5), (0.4, 1.5)),
    "hand_scale": ("Scaling", (0.95, 1.05), (0.95, 1.05)),
    "hand_friction": ("Scaling", (0.8, 1.2), (0.54, 1.58)),
    "hand_armature": ("Scaling", (0.8, 1.02), (0.31, 1.24)),
    "hand_effort": ("Scaling", (0.9, 1.1), (0.9, 2.49)),
    "hand_joint_stiffness": ("Scaling", (0.3, 3.0), (0.3, 3.52)),
    "hand_joint_damping": ("Scaling", (0.75, 1.5), (0.43, 1.6)),
    "hand_restitution": ("Additive", (0.0, 0.4), (0.0, 0.4)),
    "object_mass": ("Scaling", (0.4, 1.6), (0.4, 1.6)),
    "object_friction": ("Scaling", (0.3, 0.9), (0.01, 1.60)),
    "object_scale": ("Scaling", (0.95, 1.05), (0.95, 1.05)),
    "object_external_forces": ("Additive", None, None),
    "object_restitution": ("Additive", (0.0, 0.4), (0.0, 0.4)),
    "obj_pose_delay_prob": ("SetValue", (0.0, 0.05), (0.0, 0.47)),
    "obj_pose_freq": ("SetValue", (1.0, 1.0), (1.0, 6.0)),
    "obs_corr_noise": ("Additive", (0.0, 0.04), (0.0, 0.12)),
    "obs_uncorr_noise": ("Additive", (0.0, 0.04), (0.0, 0.14)),
    "random_pose_injection": ("SetValue", (0.3, 0.3), (0.3, 0.3)),
    "action_delay_prob": ("SetValue", (0.0, 0.05), (0.0, 0.31)),
    "action_latency": ("SetValue", (0.0, 0.0), (0.0, 1.5)),
    "action_corr_noise": ("Additive", (0.0, 0.04), (0.0, 0.32)),
    "action_uncorr_noise": ("Additive", (0.0, 0.04), (0.0, 0.48)),
    "rna_alpha": ("SetValue", (0.0, 0.0), (0.0, 0.16)),
    "gravity": ("Additive", (0.0, 0.5), (0.0, 0.5)),
}


def test_reference_rows_transcribed():
    assert [r.name for r in REFERENCE_RANGES] == list(EXPECTED_ROWS)
    for name, (kind, init, found) in EXPECTED_ROWS.items():
        row = reference_row(name)
        assert row.kind == Kind(kind)
        assert row.initial == init and row.discovered == found
    with pytest.raises(KeyError):
        reference_row("nope")


def test_default_dimensions_cover_discovered_ranges():
    dims = default_dimensions()
    assert len(dims) == len(DEFAULT_LIMITS) == 22
    for d in dims:
        row = reference_row(d.name)
        assert (d.init_lo, d.init_hi) == row.initial
        assert d.min_bound <= row.discovered[0] and row.discovered[1] <= d.max_bound
        assert d.fixed == (d.name in FIXED_DIMENSIONS)
    friction = default_adr_config().dimensions[default_adr_config().index("hand_friction")]
    assert (friction.init_lo, friction.init_hi) == (0.8, 1.2)


def test_default_round_trip_is_fixed_point():
    text = to_ini(ExperimentConfig())
    assert to_ini(from_ini(text)) == text


@pytest.mark.parametrize("path", CONFIGS, ids=[p.name for p in CONFIGS])
def test_shipped_configs_round_trip(path):
    cfg = load(path)
    text = to_ini(cfg)
    again = from_ini(text)
    assert again == cfg
    assert to_ini(again) == text


def test_missing_keys_take_defaults():
    cfg = from_ini("[experiment]\nseed = 5\n")
    assert cfg.seed == 5 and cfg.adr == ExperimentConfig().adr


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("[experiment]\nseed = abc\n", "experiment.seed"),
        ("[experiment]\nthreshold_mode = deploy\n", "threshold_mode"),
        ("[experiment]\ncolour = red\n", "unknown key"),
        ("[bogus]\nx = 1\n", "unknown section"),
        ("[adr]\ndimensions = mystery\n", "no defaults"),
        ("[adr.dim.hand_friction]\ninit_lo = 2.0\n", "adr.dim.hand_friction"),
        ("[pipeline]\nobservation = gate(nope)\n", "unknown dimension"),
        ("[pipeline]\naction = warp(rna_alpha)\n", "pipeline.action"),
        ("[policy]\nsensitivity = hand_friction\n", "policy.sensitivity"),
        ("[policy]\ncompetence = 2\n", "policy.competence"),
        ("[env]\nnum_envs = 0\n", "env"),
        ("not an ini", "syntax"),
    ],
)
def test_field_level_errors(text, fragment):
    with pytest.raises(ConfigError) as exc:
        from_ini(text)
    assert any(fragment in e for e in exc.value.errors), exc.value.errors


def test_errors_are_collected_together():
    with pytest.raises(ConfigError) as exc:
        from_ini("[experiment]\nseed = x\ntrials = 0\n[policy]\ngain = -1\n")
    assert len(exc.value.errors) == 3


def test_unreadable_path(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load(tmp_path / "missing.ini")


def test_policy_and_protocol_resolution():
    cfg = load(CONFIGS[[p.name for p in CONFIGS].index("equilibrium.ini")])
    pol = cfg.build_policy()
    assert pol.sensitivity == (3.0,) and pol.competence == 0.95
    assert cfg.protocol("test", 10).threshold == 0.4
    assert cfg.env_config(num_envs=8, mode="train").protocol.threshold == 0.1
    assert cfg.schedule() is None
