"""Acceptance criteria 1 to 10 for the bundled reference problems.

Each test appends one ``criterion k: PASS|FAIL ...`` line to the session
summary (printed at the end of the pytest run) and then asserts it. The
module can also be executed directly: ``python tests/test_acceptance.py``.
"""

import sys
import time
from pathlib import Path

import numpy as np
import pytest

import conftest
from oracles import active_set_qp, dp_two_step_scalar
from tube_empc.analysis import (VinfProxy, decrease_check, is_nonincreasing, lemma_gap_curve,
                                telescoping_check, turnpike_profile, verify_corollaries,
                                verify_nap, verify_transient)
from tube_empc.cli import main as cli_main
from tube_empc.closedloop import DisturbanceSource, run, tube_containment
from tube_empc.geometry import Polytope, hausdorff_by_support
from tube_empc.ocp import solve_ocp, solve_reach_ball
from tube_empc.rci import min_rpi, verify_rci
from tube_empc.solver import ConvexProgram, solve_convex

SEEDS = range(100)
CONTAIN_TOL = 1e-7
MONO_SLACK = 1e-8
FINAL_GAP = 1e-4


def record(k: int, ok: bool, detail: str):
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'} {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _fmt_curve(curve):
    return "{" + ", ".join(f"{k}: {v:.3g}" for k, v in curve.items()) + "}"


@pytest.fixture(scope="session")
def seeded_logs(e1, e2):
    """100 seeded nominal runs (T=60, N=10) per reference problem."""
    start = time.perf_counter()
    out, failures = {}, []
    for name, system, x0 in (("e1", e1, [0.0]), ("e2", e2, e2.x0())):
        prob = system.problem(10, "tc", "nominal")
        out[name] = []
        for seed in SEEDS:
            try:
                out[name].append(run(prob, x0, 60, DisturbanceSource("uniform_seeded", seed),
                                     system.scenario.W))
            except Exception as exc:  # recorded, judged by criterion 2
                failures.append((name, seed, repr(exc)))
    return out, failures, time.perf_counter() - start


@pytest.fixture(scope="session")
def worst_case_logs(e1):
    prob = e1.problem(10, "tc", "worst_case")
    return [run(prob, [0.0], 60, DisturbanceSource("uniform_seeded", s), e1.scenario.W)
            for s in SEEDS]


def test_criterion_1_rpi(e1, e2):
    start = time.perf_counter()
    omega = min_rpi(e1.model.A_K, e1.scenario.W, tol=1e-6)
    dist = hausdorff_by_support(omega, Polytope.box([-0.2], [0.2]))
    margins, holds = {}, True
    for name, system in (("e1", e1), ("e2", e2)):
        rep = verify_rci(system.model, system.omega, system.constraints, n_samples=10_000, seed=0)
        # margins are judged at the fixed geometric tolerance of 1e-9
        margins[name] = rep.worst_margin
        holds &= rep.holds and rep.n_checked >= 10_000
    elapsed = time.perf_counter() - start
    ok = dist <= 1e-6 and holds and elapsed < 5
    record(1, ok, f"hausdorff={dist:.2e} margins e1={margins['e1']:.3g} "
                  f"e2={margins['e2']:.3g} time={elapsed:.2f}s")


def test_criterion_2_tube_soundness(seeded_logs, e1, e2):
    logs, failures, elapsed = seeded_logs
    worst = min(tube_containment(lg, s.omega) for key, s in (("e1", e1), ("e2", e2))
                for lg in logs[key])
    runs = sum(len(v) for v in logs.values())
    ok = not failures and runs == 200 and worst >= -CONTAIN_TOL and elapsed < 60
    record(2, ok, f"runs={runs} infeasible={len(failures)} worst margin={worst:.3g} "
                  f"time={elapsed:.1f}s")


def test_criterion_3_solver_oracles(e1):
    prob = e1.problem(2, "tc", "nominal")
    grid = np.linspace(-1.8, 1.8, 401)

    def stage(z, v):
        return prob.stage([z], [v])

    def feasible(z, v):
        return e1.z_bar.contains([z, v], 1e-9)

    dp_err = 0.0
    for z0 in (0.0, 0.25, 0.5, 1.0, 1.5, 1.8):
        ref = dp_two_step_scalar(z0, grid, stage, feasible, 1.5, lambda z: 1.5 - 0.5 * z)
        sol = solve_ocp(prob, [z0])
        dp_err = max(dp_err, abs(ref - sol.value))
    rng = np.random.default_rng(2024)
    qp_err = 0.0
    for _ in range(20):
        M = rng.standard_normal((6, 6))
        P = M @ M.T + 0.1 * np.eye(6)
        q = rng.standard_normal(6)
        G = rng.standard_normal((8, 6))
        h = rng.random(8) + 0.05
        x_ref, v_ref = active_set_qp(P, q, G, h)
        res = solve_convex(ConvexProgram(P=P, q=q, G=G, h=h))
        qp_err = max(qp_err, abs(res.value - v_ref), float(np.max(np.abs(res.x - x_ref))))
    record(3, dp_err <= 1e-3 and qp_err <= 1e-6, f"dp max err={dp_err:.2e} qp max err={qp_err:.2e}")


def test_criterion_4_turnpike(e1):
    ross = e1.ross("nominal")
    sols = {N: solve_ocp(e1.problem(N, "tc", "nominal"), [0.0]) for N in (10, 20, 40, 80)}
    cards = {eps: [turnpike_profile(sols[N], ross, eps)[1] for N in (10, 20, 40, 80)]
             for eps in (0.02, 0.05, 0.1, 0.2)}
    same = cards[0.1][2] == cards[0.1][3]
    growing = [eps for eps, c in cards.items() if not is_nonincreasing(c)]
    record(4, same and not growing, f"cards over N=10,20,40,80: {cards}")


def test_criterion_5_lemma_gap(e1):
    N_list = (10, 20, 40, 60)
    reps = lemma_gap_curve(lambda N: e1.problem(N, "tc", "nominal"), e1.points("nominal"),
                           N_list, 600)
    gaps = [r.measured_gap for r in reps]
    ok = is_nonincreasing(gaps, MONO_SLACK) and gaps[-1] <= FINAL_GAP
    record(5, ok, "delta1(N)=" + _fmt_curve(dict(zip(N_list, gaps))))


def test_criterion_6_non_averaged(e1):
    zero = DisturbanceSource("zero")
    tc, uc = {}, {}
    proxy = VinfProxy(e1.problem(10, "tc", "nominal"), 600)
    for N in (10, 20, 40, 60):
        prob = e1.problem(N, "tc", "nominal")
        lg = run(prob, [0.0], 60, zero, e1.scenario.W)
        tc[N] = verify_nap(lg, prob, 600, proxy).measured_gap
    for N in (10, 20, 40):
        prob = e1.problem(N, "uc", "nominal")
        lg = run(prob, [0.0], 60, zero, e1.scenario.W)
        uc[N] = verify_nap(lg, prob, 600, proxy).details["gap_per_step"]
    ok = (is_nonincreasing(list(tc.values()), MONO_SLACK) and tc[60] <= FINAL_GAP
          and is_nonincreasing(list(uc.values()), MONO_SLACK))
    record(6, ok, f"tc gap={_fmt_curve(tc)} uc gap/T={_fmt_curve(uc)}")


def test_criterion_7_transient(e1):
    zero = DisturbanceSource("zero")
    gaps = {T: {} for T in (20, 40)}
    kappa_monotone = True
    for N in (10, 20, 40, 60):
        prob = e1.problem(N, "tc", "nominal")
        lg = run(prob, [0.0], 40, zero, e1.scenario.W)
        for T in gaps:
            gaps[T][N] = verify_transient(lg, prob, T).measured_gap
            kappa = float(np.max(np.abs(lg.z0[T] - prob.ross.zs)))
            base = [solve_reach_ball(prob, lg.z0[0], T, kappa * f).value for f in (1, 2, 10, 100)]
            kappa_monotone &= is_nonincreasing(base, 1e-9)
    floor_ok = all(g >= -1e-6 for c in gaps.values() for g in c.values())
    mono_ok = all(is_nonincreasing(list(c.values()), MONO_SLACK) for c in gaps.values())
    detail = " ".join(f"T={T} gap={_fmt_curve(c)}" for T, c in gaps.items())
    record(7, floor_ok and mono_ok and kappa_monotone,
           f"{detail} floor_ok={floor_ok} monotone={mono_ok} kappa_monotone={kappa_monotone}")


def test_criterion_8_real_cost_bounds(e1, seeded_logs, worst_case_logs):
    wc_prob = e1.problem(10, "tc", "worst_case")
    wc = [verify_corollaries(lg, wc_prob, 60) for lg in worst_case_logs]
    nom_prob = e1.problem(10, "tc", "nominal")
    nom = [verify_corollaries(lg, nom_prob, 60) for lg in seeded_logs[0]["e1"]]
    wc_excess = max(r.details["pathwise_max_excess"] for r in wc)
    nom_excess = max(r.measured_gap for r in nom)
    ok = len(wc) == 100 and len(nom) == 100 and all(r.passed for r in wc + nom)
    record(8, ok, f"worst_case max pathwise excess={wc_excess:.3g}; "
                  f"nominal max (J_real - J_nom - slack)={nom_excess:.3g} "
                  f"kappa_ell={nom_prob.cost.kappa_ell:.4g}")


def test_criterion_9_telescoping(seeded_logs, worst_case_logs):
    logs = seeded_logs[0]["e1"] + seeded_logs[0]["e2"] + worst_case_logs
    tele = max(abs(telescoping_check(lg, 10).measured_gap) for lg in logs)
    dec = max(decrease_check(lg, 10).lhs for lg in logs)
    record(9, tele <= 1e-9 and dec <= 1e-6,
           f"logs={len(logs)} max telescoping err={tele:.2e} max decrease residual={dec:.2e}")


def test_criterion_10_determinism(tmp_path):
    times, outs = [], []
    for k in range(2):
        out = tmp_path / f"sweep{k}"
        start = time.perf_counter()
        code = cli_main(["sweep", "--scenario", "e1", "--out", str(out), "--no-figures"])
        times.append(time.perf_counter() - start)
        assert code == 0
        outs.append(out)
    names = sorted(p.name for p in outs[0].glob("*.csv"))
    same = names and all((outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in names)
    same = same and (outs[0] / "verdicts.json").read_bytes() == (outs[1] / "verdicts.json").read_bytes()
    ok = bool(same) and max(times) < 300
    record(10, ok, f"csv files={len(names)} identical={bool(same)} "
                   f"times={times[0]:.0f}s,{times[1]:.0f}s")


if __name__ == "__main__":
    sys.exit(pytest.main([str(Path(__file__).resolve()), "-v", "-s"]))
