import numpy as np
import pytest

from tube_empc.ocp import (EqualityTerminal, solution_residuals, solve_ocp, solve_reach_ball,
                           solve_tube_ocp, terminal_decrease_check, riccati_terminal,
                           value_inf_proxy)

from oracles import dp_two_step_scalar


def test_value_zero_at_steady_state(e1):
    sol = solve_ocp(e1.problem(10), [1.5])
    assert sol.ok
    assert sol.value == pytest.approx(0.0, abs=1e-8)
    assert sol.v_traj.ravel() == pytest.approx([0.75] * 10, abs=1e-5)


def test_outside_tightened_set_is_infeasible(e1):
    assert solve_ocp(e1.problem(10), [1.9]).status == "infeasible"


def test_two_step_value(e1):
    prob = e1.problem(2)
    sol = solve_ocp(prob, [0.0])
    assert sol.value == pytest.approx(3.78, abs=1e-7)
    assert sol.z_traj.ravel() == pytest.approx([0.0, 0.9, 1.5], abs=1e-6)


def test_two_step_matches_dp_grid(e1):
    prob = e1.problem(2)
    Zb = e1.z_bar

    def stage(z, v):
        return prob.stage([z], [v])

    def feasible(z, v):
        return Zb.contains([z, v], 1e-9)

    grid = np.linspace(-1.8, 1.8, 401)
    # two steps reach the steady state only from z0 >= -1/3
    assert not solve_ocp(prob, [-0.6]).ok
    for z0 in (0.0, 0.5, 1.0):
        ref = dp_two_step_scalar(z0, grid, stage, feasible, 1.5, lambda z: 1.5 - 0.5 * z)
        sol = solve_ocp(prob, [z0])
        assert sol.ok
        # the grid value is an upper bound within grid resolution
        assert sol.value <= ref + 1e-9
        assert ref - sol.value <= 1e-3


@pytest.mark.parametrize("mode", ["tc", "uc"])
def test_solution_invariants(e2, mode):
    prob = e2.problem(12, mode)
    for z0 in ([-2.0, 0.0], [0.5, -0.4], [3.0, 0.5]):
        sol = solve_ocp(prob, z0)
        assert sol.ok
        res = solution_residuals(prob, sol)
        assert res["dynamics"] <= 1e-7
        assert res["constraint"] <= 1e-7
        assert res["terminal"] <= 1e-7
        assert res["value_mismatch"] <= 1e-6


@pytest.mark.parametrize("N", [6, 10])
def test_dynamic_programming_consistency(e2, N):
    prob = e2.problem(N)
    z0 = np.array([-1.0, 0.3])
    sol = solve_ocp(prob, z0)
    for P in (1, N // 2):
        head = sum(prob.stage(sol.z_traj[k], sol.v_traj[k]) for k in range(P))
        tail = solve_ocp(prob.with_horizon(N - P), sol.z_traj[P])
        assert sol.value == pytest.approx(head + tail.value, abs=1e-5)


def test_tube_ocp_examples(e1):
    prob = e1.problem(10)
    z0, sol = solve_tube_ocp(prob, [1.5])
    assert z0 == pytest.approx([1.5], abs=1e-6) and sol.value == pytest.approx(0, abs=1e-8)
    z0, sol = solve_tube_ocp(prob, [1.7])
    # the value grows quadratically away from the steady state, so the argmin is
    # resolved only to about the square root of the objective tolerance
    assert z0 == pytest.approx([1.5], abs=1e-4) and sol.value == pytest.approx(0, abs=1e-8)
    z0, sol = solve_tube_ocp(prob, [2.2])
    assert sol.status == "infeasible"
    assert np.all(np.isnan(z0))


def test_tube_ocp_matches_scan(e1):
    prob = e1.problem(10)
    x = 0.3
    z0, sol = solve_tube_ocp(prob, [x])
    scan = min(solve_ocp(prob, [z]).value for z in np.linspace(x - 0.2, x + 0.2, 81))
    assert sol.value <= scan + 1e-8
    assert abs(z0[0] - x) <= 0.2 + 1e-9


def test_inf_proxy(e1):
    prob = e1.problem(10)
    assert value_inf_proxy(prob, [1.5], 100) == pytest.approx(0, abs=1e-8)
    a, b = value_inf_proxy(prob, [0.0], 300), value_inf_proxy(prob, [0.0], 600)
    assert abs(a - b) <= 1e-6
    # the long horizon can only do better than a short terminal-constrained one
    assert a <= solve_ocp(prob, [0.0]).value + 1e-9


def test_reach_ball(e1):
    prob = e1.problem(10)
    sol = solve_reach_ball(prob, [1.5], 5, 0.0)
    assert sol.value == pytest.approx(0, abs=1e-8)
    assert solve_reach_ball(prob, [0.0], 1, 0.0).status == "infeasible"
    wide = solve_reach_ball(prob, [0.0], 6, 10.0)
    free = solve_ocp(prob.with_mode("uc").with_horizon(6), [0.0])
    assert wide.value == pytest.approx(free.value, abs=1e-6)
    with pytest.raises(ValueError):
        solve_reach_ball(prob, [0.0], 3, -1.0)


def test_equality_terminal_trivially_passes(e1):
    rep = terminal_decrease_check(e1.problem(5), EqualityTerminal())
    assert rep.holds


def test_quadratic_terminal(e1):
    prob = e1.problem(5)
    good = riccati_terminal(prob, level=0.02)
    assert terminal_decrease_check(prob, good).holds
    big = riccati_terminal(prob, level=50.0)
    rep = terminal_decrease_check(prob, big)
    assert rep.admissible_margin < 0
    # a quadratic terminal problem has a value no larger than the equality one
    qp = prob.with_mode("tc", good)
    assert solve_ocp(qp, [1.0]).value <= solve_ocp(prob, [1.0]).value + 1e-8
    res = solution_residuals(qp, solve_ocp(qp, [1.0]))
    assert res["terminal"] <= 1e-7 and res["value_mismatch"] <= 1e-6


def test_worst_case_transcription(e2):
    prob = e2.problem(8, variant="worst_case")
    sol = solve_ocp(prob, [-1.0, 0.0])
    assert sol.ok
    res = solution_residuals(prob, sol)
    assert res["value_mismatch"] <= 1e-6 and res["dynamics"] <= 1e-7
