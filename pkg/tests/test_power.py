import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floasim.aggregation import StandardizationFactors
from floasim.channel import ChannelProfile, rayleigh_magnitudes
from floasim.errors import DegenerateChannelError, DegenerateGradientError, UsageError
from floasim.power import attack_power, bev_power, ci_b0, ci_power
from floasim.rng import RngStreams


def test_bev_uses_full_budget():
    for p_max, dim in [(50890.0, 50890), (3.0, 7), (1e-3, 1000)]:
        p = bev_power(p_max, dim)
        assert dim * p * p == pytest.approx(p_max, rel=1e-15)


def test_ci_b0_closed_form():
    prof = ChannelProfile(np.ones(10), 0.0)
    assert ci_b0(prof, 50890.0, 50890) == pytest.approx(math.sqrt(0.2), rel=1e-15)
    # heterogeneous budgets: the tightest budget sets the level
    assert ci_b0(ChannelProfile(np.ones(2), 0.0), [4.0, 1.0], 1) == pytest.approx(math.sqrt(1.0 * 1.0), rel=1e-15)


@settings(max_examples=50, deadline=None)
@given(b0=st.floats(1e-3, 1e3), h=st.floats(1e-6, 1e3))
def test_ci_alignment(b0, h):
    assert ci_power(b0, h) * h == pytest.approx(b0, rel=1e-12)


def test_ci_truncation_and_zero_channel():
    assert ci_power(1.0, 0.01, cap=2.0) == 2.0
    assert ci_power(1.0, 1.0, cap=2.0) == 1.0
    with pytest.raises(DegenerateChannelError):
        ci_power(1.0, 0.0)


def test_attack_power_formula():
    f = StandardizationFactors(0.1, 0.04)
    assert attack_power(10.0, 20, f) == pytest.approx(math.sqrt(10.0 / (0.05 * 20)), rel=1e-15)
    with pytest.raises(DegenerateGradientError):
        attack_power(10.0, 20, StandardizationFactors(0.0, 0.0))
    with pytest.raises(UsageError):
        bev_power(0.0, 10)


def test_ci_violates_instant_cap_in_deep_fades():
    prof = ChannelProfile(np.ones(10), 0.0)
    b0 = ci_b0(prof, 1.0, 1)
    h = rayleigh_magnitudes(np.ones(10), RngStreams(0).generator("f"), size=2000)
    assert np.mean(b0 / h > 1.0) > 0.0
