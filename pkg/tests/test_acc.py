import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from recbf_kit import acc as a
from recbf_kit.errors import UndefinedStopError

from oracles import dmin_kinematic, force_bound_dense, force_bound_full_tensor

ACT = a.AccActual()
BR = a.BrakeModel()
UNC = a.AccUncertainty()
GAINS = a.gains_from_poles()


def _boxes(unc):
    return {"m": unc.m_box, "AfCd0": unc.AfCd0_box, "ct": unc.ct_box,
            "a1": unc.a1_range, "alpha": unc.alpha_range}


def test_actual_validation():
    with pytest.raises(ValueError):
        a.AccActual(c2=0.0)
    with pytest.raises(ValueError):
        a.AccActual(c1=40.0, c2=32.0)


def test_drag_factor_examples():
    assert a.drag_factor(0.0, ACT) == pytest.approx(0.6875)
    assert a.drag_factor(20.0, ACT) == pytest.approx(0.8077, abs=1e-4)
    assert a.cd_of_d(20.0, ACT) == pytest.approx(3.392, abs=1e-3)


@given(st.floats(0.0, 500.0), st.floats(0.0, 500.0))
def test_drag_factor_increasing_in_gap(d1, d2):
    lo, hi = sorted((d1, d2))
    assert 0 < a.drag_factor(lo, ACT) <= a.drag_factor(hi, ACT) < 1


def test_trailing_derivative_coasting():
    dx = a.trailing_derivative([30.0, 30.0, 100.0], 0.0, ACT, 0.0, 0.0)
    drag = 1.225 * 900 * 4.2 * (1 - 10 / 132) / (2 * 5000)
    assert dx[1] == pytest.approx(-drag - 9.81 * 0.007)
    assert dx[1] == pytest.approx(-0.4966, abs=1e-4)
    assert dx[0] == 0.0 and dx[2] == 0.0


def test_grade_opposes_uphill_motion():
    flat = a.trailing_derivative([30.0, 20.0, 50.0], 1000.0, ACT, 0.0, 0.0)
    up = a.trailing_derivative([30.0, 20.0, 50.0], 1000.0, ACT, 0.0, 0.06)
    assert up[1] - flat[1] == pytest.approx(-9.81 * 0.06)


def test_stopped_vehicles_do_not_roll_back():
    dx = a.trailing_derivative([0.0, 0.0, 5.0], -1000.0, ACT, -9.0, 0.06)
    assert dx[0] == 0.0 and dx[1] == 0.0


def test_max_decelerations():
    ab1, ab2 = a.max_decelerations(5000.0, 0.0, BR)
    assert ab1 == pytest.approx(-9.0)
    assert ab2 == pytest.approx(-6.8)
    _, ab2 = a.max_decelerations(8500.0, 0.0, BR)
    assert ab2 == pytest.approx(-4.0)


def test_safe_distance_examples():
    assert a.safe_distance(30, 30, 5000.0, 0.0, BR) == pytest.approx(16.18, abs=0.01)
    assert a.dmin_worst(30, 30, UNC, BR) == pytest.approx(78.4, abs=0.5)


@given(st.floats(0, 35), st.floats(0, 35), st.floats(4500, 8500), st.floats(-0.06, 0.06))
def test_safe_distance_matches_kinematic_oracle(v1, v2, m, alpha):
    got = a.safe_distance(v1, v2, m, alpha, BR)
    assert got == pytest.approx(dmin_kinematic(v1, v2, m, alpha), abs=1e-6)


@given(st.floats(0, 35), st.floats(4500, 8500), st.floats(-0.06, 0.06))
def test_safe_distance_monotone_in_follower_speed(v1, m, alpha):
    vals = a.safe_distance(v1, np.linspace(0, 35, 20), m, alpha, BR)
    assert np.all(np.diff(vals) >= 0)


def test_safe_distance_undefined_on_steep_descent():
    with pytest.raises(UndefinedStopError):
        a.safe_distance(30, 30, 8500.0, -0.5, BR)


def test_s1_s2_examples():
    x = np.array([30.0, 30.0, 100.0])
    s1 = a.s1(x, 5000.0, 4.2, 0.007, 0.0, 0.0, GAINS.k1, GAINS.k2, BR)
    expected = 5000 * (0.75 * (100 - 16.17647058823529) + 1.225 * 900 * 4.2 / (2 * 5000) + 9.81 * 0.007)
    assert s1 == pytest.approx(expected)
    s2 = a.s2(x, 5000.0, 4.2, 0.007, 0.0, 0.5, BR)
    assert s2 == pytest.approx(5000 * (0.5 * 2 + 1.225 * 900 * 4.2 / 10000 + 9.81 * 0.007))
    with pytest.raises(ValueError):
        a.s2(x, 5000.0, 4.2, 0.007, 0.0, 0.0, BR)


def test_gains_from_poles():
    g = a.gains_from_poles((-0.5, -1.5))
    assert (g.k1, g.k2) == (0.75, 2.0)


# -- robust bound ------------------------------------------------------------------

def test_robust_bound_worst_case_details():
    bound, det = a.robust_force_bound(np.array([30.0, 30.0, 100.0]), UNC, GAINS, BR, details=True)
    assert bound == min(det["s1"], det["s2"])
    assert det["alpha_worst"] == -0.06
    assert det["s2"] == pytest.approx(4500 * (1 + 1.225 * 900 * 3.4 / 9000 + 9.81 * (0.005 - 0.06)))


states = st.tuples(st.floats(0, 35), st.floats(0, 35), st.floats(0, 200)).map(np.array)


@given(states)
def test_robust_bound_matches_dense_oracle(x):
    ours = a.robust_force_bound(x, UNC, GAINS, BR)
    ref = force_bound_dense(x, _boxes(UNC), GAINS.k1, GAINS.k2, GAINS.k3, n=129)
    assert ours == pytest.approx(ref, abs=0.1)


def test_robust_bound_matches_full_tensor_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = np.array([rng.uniform(0, 35), rng.uniform(0, 35), rng.uniform(0, 200)])
        ref = force_bound_full_tensor(x, _boxes(UNC), GAINS.k1, GAINS.k2, GAINS.k3, n=11)
        # the structured search covers every node of the coarse tensor grid
        assert a.robust_force_bound(x, UNC, GAINS, BR) <= ref + 1e-6


@given(states)
def test_robust_bound_below_actual_parameter_bound(x):
    bound = a.robust_force_bound(x, UNC, GAINS, BR)
    for alpha in (-0.06, 0.06):
        s1 = a.s1(x, ACT.m, ACT.AfCd0, ACT.ct, -9.0, alpha, GAINS.k1, GAINS.k2, BR)
        s2 = a.s2(x, ACT.m, ACT.AfCd0, ACT.ct, alpha, GAINS.k3, BR)
        assert bound <= min(s1, s2) + 1e-9


def test_collapsed_box_equals_point_evaluation():
    unc = a.AccUncertainty(m_box=(5000, 5000), AfCd0_box=(4.2, 4.2), ct_box=(0.007, 0.007),
                           a1_range=(-9, -9), alpha_range=(0.02, 0.02))
    x = np.array([28.0, 30.0, 60.0])
    expected = min(a.s1(x, 5000, 4.2, 0.007, -9, 0.02, GAINS.k1, GAINS.k2, BR),
                   a.s2(x, 5000, 4.2, 0.007, 0.02, GAINS.k3, BR))
    assert a.robust_force_bound(x, unc, GAINS, BR) == pytest.approx(expected)


def test_tightened_mass_box_raises_bound():
    x = np.array([30.0, 30.0, 60.0])
    tight = UNC.with_learned("m", 4855.0, 5197.0)
    assert a.robust_force_bound(x, tight, GAINS, BR) > a.robust_force_bound(x, UNC, GAINS, BR)
    assert a.dmin_worst(30, 30, tight, BR) < a.dmin_worst(30, 30, UNC, BR)


def test_disturbances_never_learned():
    with pytest.raises(PermissionError):
        UNC.with_learned("a1", -1.0, 1.0)
    with pytest.raises(PermissionError):
        UNC.with_learned("alpha", 0.0, 0.0)
    with pytest.raises(KeyError):
        UNC.with_learned("rho", 1.0, 1.0)


def test_uncertainty_validation_and_contains():
    with pytest.raises(ValueError):
        a.AccUncertainty(m_box=(9000, 4000))
    assert UNC.contains(ACT)
    assert not UNC.with_learned("m", 5500, 6000).contains(ACT)
    assert UNC.to_box().names == ("m", "AfCd0", "ct", "a1", "alpha")


# -- nominal controller ---------------------------------------------------------

def test_nominal_force_examples():
    # at the nominal safe distance only the feedforward remains
    d = a.safe_distance(30, 30, 6500.0, 0.0, BR)
    assert a.nominal_force(np.array([30, 30, d]), 400, 4.9, BR) == pytest.approx(2701.125)
    # far behind: power limited
    assert a.nominal_force(np.array([30, 30, 100.0]), 400, 4.9, BR) == pytest.approx(250e3 / 30)
    # too close: brake floor
    assert a.nominal_force(np.array([30, 30, 0.0]), 4000, 4.9, BR) == pytest.approx(-34000.0)
    assert a.nominal_force(np.array([30, 30, d]), 400, 4.9, BR, literal_sign=True) == pytest.approx(-2701.125)
    with pytest.raises(ValueError):
        a.nominal_force(np.zeros(3), 0.0, 4.9, BR)


def test_tractive_limit_caps_low_speed():
    assert a.tractive_limit(0.0, BR) == 250e3
    assert a.tractive_limit(25.0, BR) == 10e3


def test_h1_actual():
    x = np.array([30.0, 30.0, 20.0])
    assert a.h1_actual(x, ACT, 0.0, BR) == pytest.approx(20 - 16.17647, abs=1e-4)


def test_braking_energy_covers_safe_distance():
    # integrate both vehicles braking at their limits from the safe gap: they stop touching
    v1, v2, m, alpha = 25.0, 30.0, 5000.0, 0.03
    ab1, ab2 = a.max_decelerations(m, alpha, BR)
    d = a.safe_distance(v1, v2, m, alpha, BR)
    t = np.linspace(0, 10, 200001)
    p1 = np.cumsum(np.maximum(v1 + ab1 * t, 0)) * (t[1] - t[0])
    p2 = np.cumsum(np.maximum(v2 + ab2 * t, 0)) * (t[1] - t[0])
    assert np.min(d + p1 - p2) == pytest.approx(0.0, abs=1e-3)
