import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from recbf_kit.cbf_core import (
    HChain,
    UncertaintyBox,
    check_initial_membership,
    clamp_to_robust_bound,
    companion_system,
    comparison_lower_bound,
    grid_minimize,
    place_poles,
)
from recbf_kit.errors import (
    AssumptionViolation,
    InfeasibleConstraint,
    InvalidBoxError,
    InvalidOrderError,
)

from oracles import envelope, poly_from_roots

negative_poles = st.lists(st.floats(min_value=-8.0, max_value=-0.2), min_size=1, max_size=5)


# -- companion form ----------------------------------------------------------------

def test_companion_r1():
    eta = companion_system(1)
    assert eta.F.tolist() == [[0.0]]
    assert eta.G.tolist() == [[1.0]]
    assert eta.C.tolist() == [[1.0]]


def test_companion_r2():
    eta = companion_system(2)
    assert eta.F.tolist() == [[0, 1], [0, 0]]
    assert eta.G.ravel().tolist() == [0, 1]
    assert eta.C.ravel().tolist() == [1, 0]


def test_companion_r3_superdiagonal():
    F = companion_system(3).F
    assert F[0, 1] == 1 and F[1, 2] == 1
    assert F.sum() == 2


@pytest.mark.parametrize("r", [0, -1, 1.5])
def test_companion_rejects_bad_order(r):
    with pytest.raises(InvalidOrderError):
        companion_system(r)


# -- pole placement ------------------------------------------------------------------

@pytest.mark.parametrize("poles,k", [
    ((-1, -2), [2, 3]),
    ((-5,), [5]),
    ((-2, -4, -6), [48, 44, 12]),
])
def test_place_poles_examples(poles, k):
    assert np.allclose(place_poles(poles).k, k, rtol=0, atol=1e-12)


@given(negative_poles)
def test_place_poles_matches_expanded_polynomial(poles):
    k = place_poles(poles).k
    assert np.allclose(k, poly_from_roots(poles)[:-1], rtol=1e-12, atol=1e-12)


@given(negative_poles)
def test_pole_round_trip(poles):
    gain = place_poles(poles)
    # the characteristic polynomial of the closed loop has the requested roots
    char = np.poly(gain.closed_loop())
    assert np.allclose(char, np.poly(poles), rtol=1e-9, atol=1e-9 * np.abs(np.poly(poles)).max())


@pytest.mark.parametrize("bad", [(0.0,), (-1.0, 0.5), (float("nan"),), (-np.inf,)])
def test_place_poles_rejects_non_negative(bad):
    with pytest.raises(AssumptionViolation):
        place_poles(bad)


# -- comparison envelope ------------------------------------------------------------

def test_envelope_at_zero_is_h0():
    assert comparison_lower_bound(place_poles((-2, -4, -6)), [1.3, -0.2, 4.0], 0.0) == pytest.approx(1.3)


def test_envelope_two_pole_example():
    val = comparison_lower_bound(place_poles((-1, -2)), [1.0, 0.0], 1.0)
    assert val == pytest.approx(2 * np.exp(-1) - np.exp(-2), abs=1e-12)
    assert val == pytest.approx(0.6004, abs=1e-4)


def test_envelope_decays():
    gain = place_poles((-1, -2))
    vals = [comparison_lower_bound(gain, [1.0, 0.0], t) for t in (5.0, 20.0, 40.0)]
    assert all(v > 0 for v in vals)
    assert vals[2] < 1e-15 + 1e-12


@given(st.lists(st.floats(-6.0, -0.3), min_size=2, max_size=3, unique=True),
       st.floats(0.0, 5.0))
def test_envelope_matches_modal_oracle(poles, t):
    poles = sorted(poles)
    if min(np.diff(poles)) < 0.2:
        return
    eta0 = np.linspace(1.0, -0.5, len(poles))
    gain = place_poles(poles)
    assert comparison_lower_bound(gain, eta0, t) == pytest.approx(envelope(poles, eta0, t), abs=1e-9)


def test_envelope_rejects_negative_time():
    with pytest.raises(ValueError):
        comparison_lower_bound(place_poles((-1,)), [1.0], -0.1)


# -- uncertainty boxes and grid search -------------------------------------------

def test_box_validation():
    with pytest.raises(InvalidBoxError):
        UncertaintyBox((("a", 1.0, 0.0),))
    with pytest.raises(InvalidBoxError):
        UncertaintyBox((("a", 0.0, 1.0), ("a", 0.0, 2.0)))


def test_grid_minimize_corner():
    box = UncertaintyBox((("d1", 0.6, 1.4), ("d2", 0.6, 1.4)))
    point, value = grid_minimize(lambda d: d[0] + d[1], box)
    assert value == pytest.approx(1.2)
    assert np.allclose(point, [0.6, 0.6])


def test_grid_minimize_nearest_node():
    box = UncertaintyBox((("d1", 0.6, 1.4),))
    point, value = grid_minimize(lambda d: (d[0] - 1.0) ** 2, box)
    nodes = np.linspace(0.6, 1.4, 10)
    assert value == pytest.approx(np.min((nodes - 1.0) ** 2))
    assert value == pytest.approx(0.001975, abs=2e-6)
    # 0.9556 and 1.0444 are equidistant on paper; rounding decides which wins
    assert min(abs(point[0] - 0.6 - 4 * 0.8 / 9), abs(point[0] - 0.6 - 5 * 0.8 / 9)) < 1e-12


def test_grid_minimize_constant_takes_first_point():
    box = UncertaintyBox((("a", -1.0, 1.0), ("b", 2.0, 3.0)), 5)
    point, value = grid_minimize(lambda d: 7.0, box)
    assert value == 7.0
    assert np.allclose(point, [-1.0, 2.0])


def test_grid_minimize_counts_evaluations():
    box = UncertaintyBox((("a", 0, 1), ("b", 0, 1), ("c", 0, 1)), 4)
    calls = []
    grid_minimize(lambda d: calls.append(1) or 0.0, box)
    assert len(calls) == 4 ** 3


def test_grid_minimize_vectorized_agrees():
    box = UncertaintyBox((("a", -1, 2), ("b", 0, 3)), 7)
    f = lambda d: np.sin(3 * d[..., 0]) + np.cos(2 * d[..., 1])  # noqa: E731
    p1, v1 = grid_minimize(f, box)
    p2, v2 = grid_minimize(f, box, vectorized=True)
    assert v1 == v2 and np.array_equal(p1, p2)


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.5, 3.0))
def test_grid_minimize_within_resolution_of_fine_grid(cx, cy, scale):
    f = lambda d: scale * np.abs(d[..., 0] - cx) + np.abs(d[..., 1] - cy)  # noqa: E731
    box = UncertaintyBox((("x", -1.0, 1.0), ("y", -1.0, 1.0)))
    _, coarse = grid_minimize(f, box, vectorized=True)
    fine = np.meshgrid(np.linspace(-1, 1, 100), np.linspace(-1, 1, 100), indexing="ij")
    fine_min = f(np.stack(fine, axis=-1)).min()
    h = 2.0 / 9
    # Lipschitz constants (scale, 1) times half the grid spacing per axis
    assert fine_min - 1e-12 <= coarse + 1e-12
    assert coarse - fine_min <= (scale + 1.0) * h / 2 + 1e-12


# -- initial membership ------------------------------------------------------------

def _chain1(h, hdot):
    return HChain(1, (lambda x, d: h,), lambda x, u, d: hdot)


def test_membership_first_order():
    rep = check_initial_membership(_chain1(1.0, 0.0), None, place_poles((-2,)), UncertaintyBox(()))
    assert rep.ok
    assert rep.min_nu[1] == pytest.approx(2.0)


def test_membership_zero_chain_is_boundary_ok():
    chain = HChain(2, (lambda x, d: 0.0, lambda x, d: 0.0), lambda x, u, d: 0.0)
    assert check_initial_membership(chain, None, place_poles((-1, -2)), UncertaintyBox(())).ok


def test_membership_flags_negative_h():
    box = UncertaintyBox((("a", 0.0, 1.0),), 3)
    rep = check_initial_membership(_chain1(-0.1, 0.0), None, place_poles((-2,)), box)
    assert not rep.ok
    assert {v[0] for v in rep.violations} >= {0}


def test_membership_order_mismatch():
    with pytest.raises(InvalidOrderError):
        check_initial_membership(_chain1(1, 0), None, place_poles((-1, -2)), UncertaintyBox(()))


@given(st.floats(0.0, 2.0), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_membership_grid_true_implies_corners_true(h0, a, b):
    # nu_1 = hdot - p h is affine in d, so corners decide
    chain = HChain(1, (lambda x, d: h0,), lambda x, u, d: a * d["d1"] + b * d["d2"])
    gain = place_poles((-1.0,))
    grid = UncertaintyBox((("d1", -1.0, 1.0), ("d2", -1.0, 1.0)), 10)
    corners = UncertaintyBox(grid.entries, 2)
    if check_initial_membership(chain, None, gain, grid).ok:
        assert check_initial_membership(chain, None, gain, corners).ok


# -- clamp -------------------------------------------------------------------------

def test_clamp_active():
    assert clamp_to_robust_bound(0.05, 0.0255) == 0.0255


def test_clamp_inactive():
    assert clamp_to_robust_bound(0.01, 0.0255) == 0.01


def test_clamp_floor():
    assert clamp_to_robust_bound(-40000.0, 1000.0, -34000.0) == -34000.0


def test_clamp_infeasible_carries_floor():
    with pytest.raises(InfeasibleConstraint) as info:
        clamp_to_robust_bound(0.0, -50000.0, -34000.0)
    assert info.value.u_floor == -34000.0


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
def test_clamp_monotone(u_nom, u_max):
    u = clamp_to_robust_bound(u_nom, u_max)
    assert u <= u_max
    if u_nom <= u_max:
        assert u == u_nom
