"""Stage-cost tests: values, input-minimized lower bound, gradients."""

from __future__ import annotations

import numpy as np
import pytest

from tailmpc import ConstraintBox, QuadraticStageCost, stage_cost, stage_cost_min


def make_cost(n=2, m=1, q=None, r=None, x_s=None, u_s=None):
    return QuadraticStageCost(
        x_s=np.zeros(n) if x_s is None else x_s,
        u_s=np.zeros(m) if u_s is None else u_s,
        q_diag=np.ones(n) if q is None else q,
        r_diag=np.ones(m) if r is None else r,
    )


def test_cost_is_zero_exactly_at_setpoint():
    cost = make_cost(x_s=np.array([1.0, -2.0]), u_s=np.array([3.0]))
    assert stage_cost(cost, np.array([1.0, -2.0]), np.array([3.0])) == 0.0


def test_cost_matches_weighted_squares():
    cost = make_cost(q=np.array([1.0, 2.0]), r=np.array([0.5]))
    # 1*2^2 + 2*(-1)^2 + 0.5*3^2 = 4 + 2 + 4.5
    assert stage_cost(cost, np.array([2.0, -1.0]), np.array([3.0])) == pytest.approx(10.5)
    shifted = make_cost(q=np.array([1.0, 2.0]), r=np.array([0.5]),
                        x_s=np.array([1.0, 1.0]), u_s=np.array([-1.0]))
    # 1*1^2 + 2*(-2)^2 + 0.5*4^2 = 1 + 8 + 8
    assert stage_cost(shifted, np.array([2.0, -1.0]), np.array([3.0])) == pytest.approx(17.0)


def test_cost_broadcasts_over_trajectories():
    cost = make_cost(q=np.array([1.0, 2.0]), r=np.array([0.5]))
    X = np.array([[2.0, -1.0], [0.0, 0.0], [1.0, 1.0]])
    U = np.array([[3.0], [0.0], [-2.0]])
    vals = stage_cost(cost, X, U)
    assert vals.shape == (3,)
    assert np.allclose(vals, [10.5, 0.0, 1.0 + 2.0 + 2.0])


def test_cost_rejects_mismatched_dimensions():
    cost = make_cost()
    with pytest.raises(ValueError):
        stage_cost(cost, np.zeros(3), np.zeros(1))
    with pytest.raises(ValueError):
        stage_cost(cost, np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        stage_cost_min(cost, np.zeros(3))


def test_input_minimized_cost_without_box_drops_input_term():
    cost = make_cost(q=np.array([2.0, 1.0]), r=np.array([100.0]))
    x = np.array([1.0, 2.0])
    assert stage_cost_min(cost, x) == pytest.approx(2.0 + 4.0)


def test_input_minimized_cost_with_interior_setpoint_has_no_offset():
    cost = make_cost(q=np.array([1.0]), r=np.array([1.0]), x_s=np.zeros(1),
                     u_s=np.zeros(1))
    box = ConstraintBox(x_lo=[-5.0], x_hi=[5.0], u_lo=[-1.0], u_hi=[1.0])
    assert stage_cost_min(cost, np.array([2.0]), box) == pytest.approx(4.0)


def test_input_minimized_cost_adds_clip_distance_when_setpoint_outside():
    # u_s = 2 but the box tops out at 1: nearest admissible input is 1,
    # contributing R * (1 - 2)^2 = 1 to every state's lower bound.
    cost = QuadraticStageCost(x_s=np.zeros(1), u_s=np.array([2.0]),
                              q_diag=np.array([1.0]), r_diag=np.array([1.0]))
    box = ConstraintBox(x_lo=[-5.0], x_hi=[5.0], u_lo=[0.0], u_hi=[1.0])
    assert stage_cost_min(cost, np.array([0.0]), box) == pytest.approx(1.0)
    assert stage_cost_min(cost, np.array([3.0]), box) == pytest.approx(10.0)


def test_input_minimized_cost_lower_bounds_every_admissible_input():
    rng = np.random.default_rng(5)
    cost = QuadraticStageCost(x_s=np.array([0.5, -0.5]), u_s=np.array([0.3]),
                              q_diag=np.array([1.0, 3.0]), r_diag=np.array([0.7]))
    box = ConstraintBox(x_lo=[-9.0, -9.0], x_hi=[9.0, 9.0], u_lo=[-1.0], u_hi=[1.0])
    for _ in range(200):
        x = rng.uniform(-9.0, 9.0, size=2)
        u = rng.uniform(-1.0, 1.0, size=1)
        assert stage_cost_min(cost, x, box) <= stage_cost(cost, x, u) + 1e-12


def test_cost_is_sandwiched_by_setpoint_distance():
    # Weighted-norm bounds: min(w) * |z - z_s|^2 <= cost <= max(w) * |z - z_s|^2.
    rng = np.random.default_rng(6)
    cost = QuadraticStageCost(x_s=np.array([1.0, 0.0]), u_s=np.array([-1.0]),
                              q_diag=np.array([0.4, 2.5]), r_diag=np.array([1.5]))
    w_lo, w_hi = 0.4, 2.5
    for _ in range(200):
        x = rng.uniform(-5.0, 5.0, size=2)
        u = rng.uniform(-5.0, 5.0, size=1)
        d2 = np.sum((x - cost.x_s) ** 2) + np.sum((u - cost.u_s) ** 2)
        val = stage_cost(cost, x, u)
        assert w_lo * d2 - 1e-12 <= val <= w_hi * d2 + 1e-12


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    cost = QuadraticStageCost(x_s=np.array([1.0, -1.0]), u_s=np.array([0.5]),
                              q_diag=np.array([1.2, 0.3]), r_diag=np.array([2.0]))
    h = 1e-6
    for _ in range(20):
        x = rng.uniform(-3.0, 3.0, size=2)
        u = rng.uniform(-3.0, 3.0, size=1)
        gx, gu = cost.gradients(x, u)
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            fd = (stage_cost(cost, x + e, u) - stage_cost(cost, x - e, u)) / (2 * h)
            assert gx[i] == pytest.approx(fd, abs=1e-6, rel=1e-6)
        e = np.array([h])
        fd = (stage_cost(cost, x, u + e) - stage_cost(cost, x, u - e)) / (2 * h)
        assert gu[0] == pytest.approx(fd, abs=1e-6, rel=1e-6)


def test_cost_validation_rejects_bad_weights():
    with pytest.raises(ValueError):
        make_cost(q=np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        make_cost(r=np.array([-1.0]))
    with pytest.raises(ValueError):
        QuadraticStageCost(x_s=np.zeros(2), u_s=np.zeros(1),
                           q_diag=np.ones(3), r_diag=np.ones(1))
    with pytest.raises(ValueError):
        QuadraticStageCost(x_s=np.zeros(2), u_s=np.zeros(1),
                           q_diag=np.ones(2), r_diag=np.ones(2))
    with pytest.raises(ValueError):
        QuadraticStageCost(x_s=np.zeros((2, 1)), u_s=np.zeros(1),
                           q_diag=np.ones(2), r_diag=np.ones(1))
