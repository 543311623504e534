"""Vectorised automatic domain randomisation with a desk-scale reorientation harness."""

from vadr.adr import AdrConfig, AdrState, DimensionSpec, EpisodeOutcome, Kind, adr_update, npd, reset_adr_values
from vadr.curriculum import run_curriculum
from vadr.env import EnvConfig, ReorientEnvBatch, RewardWeights, SuccessProtocol, compute_reward, rotation_distance
from vadr.kernels import BACKEND
from vadr.policy import ImprovementSchedule, SyntheticPolicy, expected_consecutive_successes, improve

__version__ = "0.1.0"

__all__ = [
    "AdrConfig",
    "AdrState",
    "BACKEND",
    "DimensionSpec",
    "EnvConfig",
    "EpisodeOutcome",
    "ImprovementSchedule",
    "Kind",
    "ReorientEnvBatch",
    "RewardWeights",
    "SuccessProtocol",
    "SyntheticPolicy",
    "adr_update",
    "compute_reward",
    "expected_consecutive_successes",
    "improve",
    "npd",
    "reset_adr_values",
    "rotation_distance",
    "run_curriculum",
]
