import numpy as np
import pytest

from tube_empc.analysis import (SELECTORS, VinfProxy, decrease_check, is_nonincreasing,
                                jcl_nominal, jcl_real, lemma3_residuals, sweep,
                                telescoping_check, turnpike_profile, value_modulus,
                                verify_corollaries, verify_lemma_gap, verify_nap,
                                verify_transient)
from tube_empc.closedloop import DisturbanceSource, run
from tube_empc.cost import eval_stage
from tube_empc.errors import SelectorError
from tube_empc.ocp import solve_ocp, solve_reach_ball

from oracles import brute_force_cardinality


@pytest.fixture(scope="module")
def e1_log(e1):
    return run(e1.problem(10), [0.0], 40, DisturbanceSource("zero"), e1.scenario.W)


def test_jcl_matches_recomputation(e1, e1_log):
    prob = e1.problem(10)
    ref = sum(eval_stage(prob.cost, e1.model, e1.omega, e1_log.z0[t], e1_log.v[t]) for t in range(40))
    assert jcl_nominal(e1_log, 40) == pytest.approx(ref, abs=1e-9)
    assert jcl_nominal(e1_log, 0) == 0.0


def test_equilibrium_functionals_vanish(e1):
    lg = run(e1.problem(10), [1.5], 10, DisturbanceSource("zero"), e1.scenario.W)
    assert jcl_nominal(lg, 10) == pytest.approx(0, abs=1e-8)
    assert jcl_real(lg, 10) == pytest.approx(0, abs=1e-8)
    rep = verify_nap(lg, e1.problem(10), 100)
    assert rep.lhs == pytest.approx(0, abs=1e-8) and rep.measured_gap == pytest.approx(0, abs=1e-8)
    tr = verify_transient(lg, e1.problem(10), 10)
    assert tr.measured_gap == pytest.approx(0, abs=1e-8)


def test_turnpike_profile(e1):
    ross = e1.ross()
    sol = solve_ocp(e1.problem(40), [0.0])
    for eps in (0.02, 0.1, 0.2):
        idx, card = turnpike_profile(sol, ross, eps)
        assert card == brute_force_cardinality(sol.z_traj, sol.v_traj, ross.zs, ross.vs, eps)
        assert card == len(idx)
    assert turnpike_profile(solve_ocp(e1.problem(40), ross.zs), ross, 1e-6)[1] == 0


def test_lemma_gap_pairs(e1):
    prob = e1.problem(10)
    proxy = VinfProxy(prob, 300)
    same = verify_lemma_gap(prob, [0.3], [0.3], 10, 300, proxy)
    assert same.measured_gap == 0.0
    a = verify_lemma_gap(prob, [0.0], [1.0], 10, 300, proxy)
    b = verify_lemma_gap(prob, [1.0], [0.0], 10, 300, proxy)
    assert a.lhs == pytest.approx(-b.lhs) and a.measured_gap == pytest.approx(-b.measured_gap)
    gaps = [abs(verify_lemma_gap(prob, [0.0], [1.0], N, 300, proxy).measured_gap) for N in (10, 20, 40)]
    assert is_nonincreasing(gaps, 1e-8)


def test_telescoping_and_decrease(e1_log):
    assert abs(telescoping_check(e1_log, 10).measured_gap) <= 1e-9
    assert decrease_check(e1_log, 10).passed
    assert np.max(lemma3_residuals(e1_log)) <= 1e-6


def test_transient_kappa_monotone(e1, e1_log):
    prob = e1.problem(10)
    for T in (10, 20):
        base = verify_transient(e1_log, prob, T)
        wide = verify_transient(e1_log, prob, T, inflate=10.0)
        assert wide.rhs_core <= base.rhs_core + 1e-9
    z0 = e1_log.z0[0]
    vals = [solve_reach_ball(prob, z0, 10, k).value for k in (0.0, 0.1, 0.5, 2.0)]
    assert is_nonincreasing(vals, 1e-9)


def test_real_cost_bound_zero_disturbance(e1):
    prob = e1.problem(10)
    lg = run(prob, [1.0], 20, DisturbanceSource("zero"), e1.scenario.W)
    # x0 = 1.0 is re-centred to z0* = 1.2, so the real state lags the nominal
    rep = verify_corollaries(lg, prob, 20)
    assert rep.passed and rep.details["slack"] > 0


def test_worst_case_real_cost_pathwise(e1):
    prob = e1.problem(10, variant="worst_case")
    for seed in range(5):
        lg = run(prob, [0.0], 30, DisturbanceSource("uniform_seeded", seed), e1.scenario.W)
        rep = verify_corollaries(lg, prob, 30)
        assert rep.passed and rep.details["pathwise_max_excess"] <= 1e-9


def test_value_modulus_spread(e1):
    grid = [[z] for z in np.linspace(-1.5, 1.8, 12)]
    rep = value_modulus(lambda N: e1.problem(N), grid, [10, 20, 40], e1.ross())
    assert rep["spread"] <= 0.05


def test_sweep_bundle_shape(e1):
    empty = sweep(e1, [], [10], [0])
    assert all(not rows for rows in empty.rows.values())
    b = sweep(e1, [6, 10], [5, 10], [0, 1], selectors=["nap_tc", "telescoping", "turnpike"])
    assert len(b.rows["nap_tc"]) == 2 * 2 * 2
    assert len(b.rows["telescoping"]) == 8
    assert len(b.rows["turnpike"]) == 2 * 4
    assert b.verdicts["telescoping"]["passed"]
    with pytest.raises(SelectorError):
        sweep(e1, [6], [5], [0], selectors=["bogus"])
    assert set(SELECTORS) >= {"nap_uc", "transient_tc", "corollary"}


def test_sweep_failures_are_rows(e2):
    # N = 2 cannot reach the steady state from the scenario start
    b = sweep(e2, [2, 10], [5], [0], selectors=["nap_tc"])
    statuses = [r.status for r in b.rows["nap_tc"]]
    assert statuses[0] == "initial_infeasible" and statuses[1] == "ok"
