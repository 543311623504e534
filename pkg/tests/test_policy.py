import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vadr.adr import DimensionSpec
from vadr.curriculum import monte_carlo_consecutive_successes
from vadr.policy import (
    ImprovementSchedule,
    SyntheticPolicy,
    expected_consecutive_successes,
    improve,
    success_probability_for,
)

DIM = DimensionSpec("f", init_lo=0.8, init_hi=1.2, min_bound=0.0, max_bound=3.0, nominal=1.0)


def _policy(**kw):
    base = dict(dims=(DIM,), sensitivity=(3.0,), competence=0.9, gain=5.0)
    base.update(kw)
    return SyntheticPolicy(**base)


def test_midpoint_gives_one_half():
    pol = _policy(competence=0.3, sensitivity=(3.0,))
    # severity |v - 1| / 3 times weight 3 equals competence at v = 1.3
    assert pol.success_probability([[1.3]])[0] == pytest.approx(0.5, abs=1e-12)


def test_zero_competence_is_below_half():
    pol = _policy(competence=0.0)
    assert np.all(pol.success_probability([[1.1], [2.0], [0.2]]) < 0.5)


def test_high_competence_zero_severity_saturates():
    pol = _policy(competence=1.0, gain=50.0)
    assert pol.success_probability([[1.0]])[0] > 1 - 1e-12


def test_constant_policy_ignores_values():
    pol = SyntheticPolicy.constant(0.3, (DIM,))
    np.testing.assert_allclose(pol.success_probability([[0.0], [1.0], [3.0]]), 0.3, rtol=1e-12)
    with pytest.raises(ValueError):
        SyntheticPolicy.constant(1.0, (DIM,))


def test_policy_validation():
    with pytest.raises(ValueError):
        _policy(sensitivity=(1.0, 2.0))
    with pytest.raises(ValueError):
        _policy(competence=1.5)
    with pytest.raises(ValueError):
        _policy(sensitivity=(-1.0,))


def test_expected_successes_closed_form():
    assert expected_consecutive_successes(0.5) == 1.0
    assert expected_consecutive_successes(0.0) == 0.0
    assert expected_consecutive_successes(20 / 21) == pytest.approx(20.0)
    assert success_probability_for(20.0) == pytest.approx(20 / 21)
    with pytest.raises(ValueError):
        expected_consecutive_successes(1.0)


@pytest.mark.parametrize("q", [0.3, 0.5, 0.8])
def test_monte_carlo_matches_geometric_model(q):
    counts = monte_carlo_consecutive_successes(q, 10_000, np.random.default_rng(int(q * 10)))
    se = counts.std(ddof=1) / np.sqrt(counts.size)
    assert abs(counts.mean() - q / (1 - q)) < 3 * se


def test_improve_arithmetic():
    pol = _policy(competence=0.2)
    assert improve(pol, ImprovementSchedule(0.0)) is pol
    sched = ImprovementSchedule(0.005, cap=1.0)
    for _ in range(100):
        pol = improve(pol, sched)
    assert pol.competence == pytest.approx(0.7)
    capped = _policy(competence=0.2)
    for _ in range(100):
        capped = improve(capped, ImprovementSchedule(0.005, cap=0.5))
    assert capped.competence == 0.5


@given(st.floats(0.0, 0.99), st.floats(0.0, 0.01), st.floats(0.0, 3.0))
def test_improvement_never_lowers_success_probability(c, rate, v):
    pol = _policy(competence=c)
    better = improve(pol, ImprovementSchedule(rate))
    assert better.success_probability([[v]])[0] >= pol.success_probability([[v]])[0]
