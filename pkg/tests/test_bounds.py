import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floasim import bounds
from floasim.bounds import BoundParams
from floasim.errors import NoConvergenceGuarantee, UsageError

D = 50890


def iid(N, **kw):
    return BoundParams.isomorphic(10, N, 1.0, float(D), D, **kw)


def test_ci_omega_hand_values():
    # b0 = sqrt(0.2); attacker term sqrt(pi/2) each
    for N in range(11):
        expect = (10 - N) * math.sqrt(0.2) - N * math.sqrt(math.pi / 2)
        assert bounds.omega_ci(iid(N)) == pytest.approx(expect, abs=1e-12)


def test_general_and_isomorphic_forms_agree():
    for N in range(11):
        for sigma, p_max, dim in [(1.0, D, D), (0.7, 3.0, 11), (2.5, 100.0, 1000)]:
            p = BoundParams.isomorphic(10, N, sigma, p_max, dim)
            assert abs(bounds.omega_ci(p) - bounds.omega_ci_isomorphic(10, N, sigma, p_max, dim)) <= 1e-12


def test_big_omega_hand_values():
    assert bounds.omega_big_ci(iid(0)) == pytest.approx(20.0, rel=1e-14)
    # (U+N)(U b0^2 + N * 2 sigma^2 p/D) with N=2
    assert bounds.omega_big_ci(iid(2)) == pytest.approx(12 * (10 * 0.2 + 2 * 2.0), rel=1e-14)
    assert bounds.omega_big_bev(iid(3)) == pytest.approx(13 * 10 * 2.0, rel=1e-14)
    assert bounds.omega_bev(iid(3)) == pytest.approx(4 * math.sqrt(math.pi / 2), rel=1e-14)


def test_heterogeneous_by_hand():
    sig = np.array([0.5, 1.0, 2.0])
    pm = np.array([2.0, 1.0, 3.0])
    p = BoundParams(sig, pm, 4, attackers=(2,))
    lam = 1.0 / sum(1 / (2 * s * s) for s in sig)
    b0 = math.sqrt(min(pm / 4) * lam)
    att = math.sqrt(math.pi * 4.0 * 3.0 / 8)
    assert bounds.omega_ci(p) == pytest.approx(2 * b0 - att, rel=1e-14)
    honest = math.sqrt(math.pi * 0.25 * 2 / 8) + math.sqrt(math.pi * 1 * 1 / 8)
    assert bounds.omega_bev(p) == pytest.approx(honest - att, rel=1e-14)
    assert bounds.omega_big_bev(p) == pytest.approx(4 * sum(2 * s * s * q / 4 for s, q in zip(sig, pm)), rel=1e-14)


def test_attack_free_reduction():
    p = iid(0, L=3.0, delta=0.4, eps=0.2, z=math.sqrt(0.1))
    for T in (10, 500, 12345):
        for ab in (0.1, 1.0, 3.0):
            general = bounds.rate_rhs("CI", p, T, ab, 2.0)
            reduced = bounds.rate_rhs_ci_no_attack(p, T, ab, 2.0)
            assert abs(general - reduced) <= 1e-12


def test_rate_quarter_T_halves_exactly():
    p = iid(1, L=2.0, delta=0.5, eps=0.3, z=0.1)
    for policy in ("CI", "BEV"):
        for T in (1, 7, 500, 10_000):
            assert bounds.rate_rhs(policy, p, 4 * T, 1.5, 0.8) == bounds.rate_rhs(policy, p, T, 1.5, 0.8) / 2


def test_rate_preconditions():
    p = iid(0)
    with pytest.raises(UsageError):
        bounds.rate_rhs("BEV", p, 4, 4.0, 1.0)  # alpha_bar >= 2 sqrt(T)
    with pytest.raises(NoConvergenceGuarantee):
        bounds.rate_rhs("CI", iid(5), 100, 1.0, 1.0)
    with pytest.raises(UsageError):
        bounds.rate_rhs_ci_no_attack(iid(1), 10, 1.0, 1.0)


def test_tolerance_scans():
    assert bounds.max_tolerable_n("BEV", iid(0)) == 4
    assert bounds.max_tolerable_n("CI", iid(0)) == 2
    scan = bounds.omega_scan("BEV", iid(0))
    assert scan[5] == pytest.approx(0.0, abs=1e-12) and scan[4] > 0


def test_threshold_forms():
    assert bounds.ci_threshold_printed(10) == pytest.approx(10 / (1 + math.sqrt(10 * math.pi)), rel=1e-15)
    assert bounds.ci_threshold_solved(10) == pytest.approx(10 / (1 + math.sqrt(10 * math.pi) / 2), rel=1e-15)
    assert math.floor(bounds.ci_threshold_printed(10)) == 1
    assert math.floor(bounds.ci_threshold_solved(10)) == bounds.max_tolerable_n("CI", iid(0))


def test_attacker_order():
    p = BoundParams(np.array([1.0, 3.0, 0.5, 3.0]), 1.0, 1, attackers=(2,))
    assert bounds.attacker_order(p, "strongest") == [1, 3, 0, 2]
    assert bounds.attacker_order(p, "weakest") == [2, 0, 1, 3]
    assert bounds.attacker_order(p, "given") == [2, 1, 3, 0]


def test_learning_rate_maps():
    omega, big = 2.0, 8.0
    assert bounds.lr_from_hat(0.4, omega, big) == pytest.approx(0.1)
    assert bounds.lr_from_scaled(1.0, 2.0, omega, big, 100) == pytest.approx(2.0 / (2.0 * 8.0 * 10.0))
    assert bounds.lr_upper_bound(1.0, omega, big) == pytest.approx(0.5)
    assert bounds.converges(0.49, 1.0, omega, big) and not bounds.converges(0.51, 1.0, omega, big)
    with pytest.raises(NoConvergenceGuarantee):
        bounds.lr_from_hat(1.0, -1.0, big)


def test_ef_constants():
    assert bounds.constants("EF", iid(0)) == (1.0, 1.0)


def test_bound_curve_marks_invalid_rows():
    rows = bounds.bound_curve("CI", iid(4, L=1.0), [100], 0.1, 1.0)
    assert rows[0].rhs == math.inf and "omega" in rows[0].note
    rows = bounds.bound_curve("BEV", iid(0, L=1.0), [100, 400], 3.0, 1.0)
    assert all(r.rhs == math.inf for r in rows)
    rows = bounds.bound_curve("BEV", iid(0, L=1.0), [100, 400], 0.1, 1.0)
    assert all(math.isfinite(r.rhs) for r in rows)


def test_lipschitz_estimate_on_quadratic():
    A = np.diag([3.0, 1.0, 0.5])
    probes = [np.zeros(3), np.array([1.0, 0, 0]), np.array([0, 1.0, 0])]
    assert bounds.estimate_lipschitz(lambda w: A @ w, probes) == pytest.approx(3.0)
    with pytest.raises(UsageError):
        bounds.estimate_lipschitz(lambda w: w, [np.zeros(2)])


def test_delta_eps_estimates():
    g1, g2 = np.array([1.0, 3.0]), np.array([3.0, 1.0])
    assert bounds.round_deviation([g1, g2]) == pytest.approx(math.sqrt(2.0))
    delta, eps = bounds.estimate_delta_eps([[g1, g2], [g1, g1]])
    assert delta == pytest.approx(math.sqrt(2.0)) and eps == pytest.approx(1.0)


@settings(max_examples=60, deadline=None)
@given(U=st.integers(1, 30), sigma=st.floats(0.1, 5), p=st.floats(0.1, 1e4), dim=st.integers(1, 10**5))
def test_bev_never_tolerates_half(U, sigma, p, dim):
    n = bounds.max_tolerable_n("BEV", BoundParams.isomorphic(U, 0, sigma, p, dim))
    assert n == math.ceil(U / 2) - 1
    assert bounds.max_tolerable_n("CI", BoundParams.isomorphic(U, 0, sigma, p, dim)) <= n
