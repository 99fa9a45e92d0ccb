"""Closed-loop performance functionals and empirical checks of the bounds.

Every check produces a :class:`PerformanceReport` with ``lhs``,
``rhs_core`` and ``measured_gap = lhs - rhs_core``. Existence-only
constants of the theory (error terms in N and T, convergence envelopes)
are never inputs: they are measured as maxima of gaps over initial
conditions or seeds, and judged by monotonicity in N.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .closedloop import ClosedLoopLog, DisturbanceSource, run
from .errors import InitialInfeasibleError, MidRunInfeasibleError, SelectorError
from .ocp import OcpProblem, OcpSolution, solve_ocp, solve_reach_ball, value_inf_proxy

log = logging.getLogger(__name__)

SELECTORS = ("turnpike", "lemma_gap", "nap_tc", "nap_uc", "transient_tc", "transient_uc",
             "lemma3", "corollary", "telescoping", "decrease")
# selectors judged by monotonicity in N need at least two horizons
NEEDS_TWO_HORIZONS = ("turnpike", "lemma_gap", "nap_tc", "nap_uc", "transient_tc",
                      "transient_uc", "lemma3")
CSV_COLUMNS = ("N", "T", "seed", "lhs", "rhs_core", "gap", "status")


@dataclass
class PerformanceReport:
    lhs: float
    rhs_core: float
    measured_gap: float
    N: int
    T: Optional[int]
    context: str
    passed: bool = True
    seed: Optional[int] = None
    status: str = "ok"
    details: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {"N": self.N, "T": self.T, "seed": self.seed, "lhs": self.lhs,
                "rhs_core": self.rhs_core, "gap": self.measured_gap, "status": self.status}

    def to_dict(self) -> dict:
        out = self.row()
        out.update(context=self.context, passed=self.passed, details=self.details)
        return out


def _report(lhs, rhs, N, T, context, passed=True, **kw) -> PerformanceReport:
    lhs, rhs = float(lhs), float(rhs)
    return PerformanceReport(lhs, rhs, lhs - rhs, N, T, context, passed, **kw)


def _failed(N, T, context, status, seed=None, **details) -> PerformanceReport:
    nan = float("nan")
    return PerformanceReport(nan, nan, nan, N, T, context, False, seed, status, details)


def is_nonincreasing(values: Sequence[float], slack: float = 0.0) -> bool:
    vals = [v for v in values if np.isfinite(v)]
    return all(b <= a + slack for a, b in zip(vals, vals[1:]))


# -- functionals ------------------------------------------------------------

def jcl_nominal(log_: ClosedLoopLog, T: int) -> float:
    """Accumulated nominal stage cost ``sum_{t<T} ell(z0*(t), v*(t))``."""
    if T > log_.T:
        raise ValueError(f"log has only {log_.T} steps")
    return float(np.sum(log_.stage_nominal[:T]))


def jcl_real(log_: ClosedLoopLog, T: int) -> float:
    """Accumulated real-state cost ``sum_{t<T} L_pi(x(t), v*(t))`` (same offset)."""
    if T > log_.T:
        raise ValueError(f"log has only {log_.T} steps")
    return float(np.sum(log_.stage_real[:T]))


def turnpike_profile(solution: OcpSolution, ross, eps: float):
    """Steps where ``|(z(k), v(k)) - (zs, vs)|_inf >= eps``.

    Returns:
        ``(indices, cardinality)`` over ``k = 0..N-1``.
    """
    Y = np.hstack([solution.z_traj[:-1], solution.v_traj])
    center = np.concatenate([ross.zs, ross.vs])
    dist = np.max(np.abs(Y - center), axis=1)
    idx = np.flatnonzero(dist >= eps)
    return idx, int(len(idx))


class VinfProxy:
    """Memoized long-horizon value ``V_{N_inf}`` (independent of the running N)."""

    def __init__(self, problem: OcpProblem, n_inf: int):
        self.problem = problem
        self.n_inf = int(n_inf)
        self._memo = {}

    def __call__(self, z) -> float:
        z = np.asarray(z, float).ravel()
        key = z.tobytes()
        if key not in self._memo:
            self._memo[key] = value_inf_proxy(self.problem, z, self.n_inf)
        return self._memo[key]


def _value(problem: OcpProblem, z) -> float:
    sol = solve_ocp(problem, z)
    return sol.value if sol.ok else float("nan")


def verify_lemma_gap(problem: OcpProblem, y, z, N: int, N_inf: int,
                     proxy: Optional[VinfProxy] = None) -> PerformanceReport:
    """``[V_N(y) - V_N(z)] - [V_inf(y) - V_inf(z)]`` for one pair."""
    prob = problem if problem.horizon == N else problem.with_horizon(N)
    proxy = proxy or VinfProxy(problem, N_inf)
    y = np.asarray(y, float).ravel()
    z = np.asarray(z, float).ravel()
    vy, vz = _value(prob, y), _value(prob, z)
    py, pz = proxy(y), proxy(z)
    if not np.all(np.isfinite([vy, vz, py, pz])):
        return _failed(N, None, "lemma_gap", "infeasible", y=y.tolist(), z=z.tolist())
    return _report(vy - vz, py - pz, N, None, "lemma_gap",
                   details={"y": y.tolist(), "z": z.tolist()})


def lemma_gap_curve(problem_for: Callable[[int], OcpProblem], points, N_list, N_inf: int,
                    proxy: Optional[VinfProxy] = None) -> list:
    """``delta1(N)`` as the max gap over all ordered pairs of ``points``.

    Each entry is the witness report (largest gap) for that N.
    """
    out = []
    for N in N_list:
        prob = problem_for(N)
        proxy = proxy or VinfProxy(prob, N_inf)
        vals = [_value(prob, p) for p in points]
        best = None
        for i, y in enumerate(points):
            for j, z in enumerate(points):
                py, pz = proxy(y), proxy(z)
                if not np.all(np.isfinite([vals[i], vals[j], py, pz])):
                    continue
                rep = PerformanceReport(vals[i] - vals[j], py - pz,
                                        (vals[i] - vals[j]) - (py - pz), N, None, "lemma_gap",
                                        details={"y": np.ravel(y).tolist(), "z": np.ravel(z).tolist()})
                if best is None or rep.measured_gap > best.measured_gap:
                    best = rep
        out.append(best if best is not None else _failed(N, None, "lemma_gap", "infeasible"))
    return out


def verify_nap(log_: ClosedLoopLog, problem: OcpProblem, N_inf: int,
               proxy: Optional[VinfProxy] = None, T: Optional[int] = None) -> PerformanceReport:
    """Non-averaged performance: ``J^cl_T`` against ``V_inf(z0*(0)) - V_inf(z0*(T))``.

    The verdict on monotonicity in N is taken over several reports; a
    single report passes when its inputs are finite.
    """
    T = log_.T if T is None else T
    proxy = proxy or VinfProxy(problem, N_inf)
    lhs = jcl_nominal(log_, T)
    p0, pT = proxy(log_.z0[0]), proxy(log_.z0[T])
    ctx = f"nap_{problem.mode}"
    if not (np.isfinite(p0) and np.isfinite(pT)):
        return _failed(problem.horizon, T, ctx, "proxy_infeasible")
    rep = _report(lhs, p0 - pT, problem.horizon, T, ctx, seed=log_.meta.get("seed"))
    rep.details["gap_per_step"] = rep.measured_gap / T if T else 0.0
    if problem.mode == "uc" and T:
        res = lemma3_residuals(log_, T)
        rep.details["lemma3_max"] = float(np.max(res))
    return rep


def lemma3_residuals(log_: ClosedLoopLog, T: Optional[int] = None) -> np.ndarray:
    """``ell(z0*(t), v*(t)) - [V_N(z0*(t)) - V_N(z0*(t+1))]`` for ``t < T``."""
    T = log_.T if T is None else T
    return log_.stage_nominal[:T] - (log_.value[:T] - log_.value[1:T + 1])


def verify_transient(log_: ClosedLoopLog, problem: OcpProblem, T: int, N_inf: int = 0,
                     inflate: float = 1.0, floor: float = -1e-6) -> PerformanceReport:
    """Transient performance against the cheapest ``T``-step path into the realized ball.

    ``kappa = |z0*(T) - zs|_inf`` (times ``inflate``); the baseline is
    ``solve_reach_ball(z0*(0), T, kappa)``. ``N_inf`` is accepted for
    interface symmetry and unused.
    """
    ross = problem.ross
    kappa = float(np.max(np.abs(log_.z0[T] - ross.zs))) * inflate
    ctx = f"transient_{problem.mode}"
    base = solve_reach_ball(problem, log_.z0[0], T, kappa)
    if not base.ok:
        return _failed(problem.horizon, T, ctx, "baseline_infeasible", log_.meta.get("seed"),
                       kappa=kappa)
    lhs = jcl_nominal(log_, T)
    rep = _report(lhs, base.value, problem.horizon, T, ctx, seed=log_.meta.get("seed"))
    rep.passed = rep.measured_gap >= floor
    rep.details["kappa"] = kappa
    return rep


def verify_corollaries(log_: ClosedLoopLog, problem: OcpProblem, T: int, N_inf: int = 0,
                       tol: float = 1e-9) -> PerformanceReport:
    """Real-state cost against the nominal one.

    worst_case: ``L_pi(x(t), v) <= ell(z0*(t), v)`` at every step.
    nominal: ``J_real <= J_nominal + T kappa_ell max_Omega |e|``.
    integral: no comparison applies; reported as ``not_applicable``.
    """
    cost = problem.cost
    lhs = jcl_real(log_, T)
    jn = jcl_nominal(log_, T)
    seed = log_.meta.get("seed")
    if cost.variant == "worst_case":
        excess = float(np.max(log_.stage_real[:T] - log_.stage_nominal[:T], initial=-np.inf))
        rep = _report(lhs, jn, problem.horizon, T, "corollary", seed=seed)
        rep.passed = bool(excess <= tol)
        rep.details["pathwise_max_excess"] = excess
        return rep
    if cost.variant == "nominal":
        if cost.kappa_ell is None:
            raise ValueError("kappa_ell not computed; call lipschitz_const first")
        slack = T * cost.kappa_ell * problem.omega.max_norm(2)
        rep = _report(lhs, jn + slack, problem.horizon, T, "corollary", seed=seed)
        rep.passed = rep.measured_gap <= tol
        rep.details.update(slack=slack, kappa_ell=cost.kappa_ell)
        return rep
    rep = _report(lhs, jn, problem.horizon, T, "corollary", seed=seed, status="not_applicable")
    return rep


def telescoping_check(log_: ClosedLoopLog, N: int, T: Optional[int] = None,
                      tol: float = 1e-9) -> PerformanceReport:
    """``sum_{t<T} [V_N(t) - V_N(t+1)]`` against ``V_N(0) - V_N(T)``."""
    T = log_.T if T is None else T
    diffs = log_.value[:T] - log_.value[1:T + 1]
    rep = _report(float(np.sum(diffs)), log_.value[0] - log_.value[T], N, T, "telescoping",
                  seed=log_.meta.get("seed"))
    rep.passed = abs(rep.measured_gap) <= tol
    return rep


def decrease_check(log_: ClosedLoopLog, N: int, T: Optional[int] = None,
                   tol: float = 1e-6) -> PerformanceReport:
    """Worst per-step ``ell(t) - [V_N(t) - V_N(t+1)]`` (must be <= tol for tc)."""
    T = log_.T if T is None else T
    res = lemma3_residuals(log_, T)
    worst = float(np.max(res)) if T else 0.0
    rep = _report(worst, 0.0, N, T, "decrease", seed=log_.meta.get("seed"))
    rep.passed = worst <= tol
    rep.details["step"] = int(np.argmax(res)) if T else None
    return rep


def value_modulus(problem_for: Callable[[int], OcpProblem], grid, N_list, ross) -> dict:
    """Envelope of ``|V_N(z) - V_N(zs)|`` versus ``|z - zs|`` for several N.

    Returns per-N envelopes on a common distance grid and the relative
    spread across N (max minus min over the largest envelope value).
    """
    grid = [np.asarray(g, float).ravel() for g in grid]
    dist = np.array([np.max(np.abs(g - ross.zs)) for g in grid])
    order = np.argsort(dist)
    envelopes = {}
    for N in N_list:
        prob = problem_for(N)
        v0 = _value(prob, ross.zs)
        vals = np.array([abs(_value(prob, g) - v0) for g in grid])[order]
        envelopes[N] = np.maximum.accumulate(np.nan_to_num(vals, nan=np.inf))
    E = np.array([envelopes[N] for N in N_list])
    finite = np.all(np.isfinite(E), axis=0)
    scale = float(np.max(E[:, finite])) if np.any(finite) else float("nan")
    spread = float(np.max(np.ptp(E[:, finite], axis=0)) / scale) if np.any(finite) and scale > 0 else 0.0
    return {"distance": dist[order].tolist(), "envelopes": {N: e.tolist() for N, e in envelopes.items()},
            "spread": spread}


# -- sweep ------------------------------------------------------------------

def _closed_loop_selectors(selectors):
    tc = {"nap_tc", "transient_tc", "corollary", "telescoping", "decrease"} & set(selectors)
    uc = {"nap_uc", "transient_uc", "lemma3"} & set(selectors)
    return tc, uc


def _run_rows(system, N: int, seed: int, T_list, selectors, proxy_cache: dict) -> dict:
    """All closed-loop rows for one (N, seed); one run per mode at max(T_list)."""
    scn = system.scenario
    th = scn.thresholds
    tc_sel, uc_sel = _closed_loop_selectors(selectors)
    rows = {s: [] for s in tc_sel | uc_sel}
    T_max = max(T_list)
    for mode, sel in (("tc", tc_sel), ("uc", uc_sel)):
        if not sel:
            continue
        prob = system.problem(N, mode)
        key = (mode, scn.variant)
        if key not in proxy_cache:
            proxy_cache[key] = VinfProxy(system.problem(N, "tc"), scn.N_inf)
        proxy = proxy_cache[key]
        dist = DisturbanceSource(scn.disturbance.kind, seed, scn.disturbance.sequence)
        try:
            lg = run(prob, system.x0(), T_max, dist, scn.W)
        except InitialInfeasibleError:
            for s in sel:
                rows[s] += [_failed(N, T, s, "initial_infeasible", seed) for T in T_list]
            continue
        except MidRunInfeasibleError as exc:
            for s in sel:
                rows[s] += [_failed(N, T, s, f"midrun_infeasible@{exc.step}", seed) for T in T_list]
            continue
        for T in T_list:
            sub = lg.truncated(T)
            if f"nap_{mode}" in sel:
                rows[f"nap_{mode}"].append(verify_nap(sub, prob, scn.N_inf, proxy))
            if f"transient_{mode}" in sel:
                rows[f"transient_{mode}"].append(
                    verify_transient(sub, prob, T, floor=th["transient_floor"]))
            if mode == "tc" and "corollary" in sel:
                rows["corollary"].append(verify_corollaries(sub, prob, T, tol=th["corollary"]))
            if mode == "tc" and "telescoping" in sel:
                rows["telescoping"].append(telescoping_check(sub, N, T, th["telescoping"]))
            if mode == "tc" and "decrease" in sel:
                rows["decrease"].append(decrease_check(sub, N, T, th["decrease"]))
            if mode == "uc" and "lemma3" in sel:
                res = lemma3_residuals(sub, T)
                rep = _report(float(np.max(res)) if T else 0.0, 0.0, N, T, "lemma3", seed=seed)
                rows["lemma3"].append(rep)
    return rows


_WORKER = {}


def _worker_init(doc):
    from .scenario import Scenario, build_system
    _WORKER["system"] = build_system(Scenario.from_dict(doc))
    _WORKER["proxy"] = {}


def _worker_task(args):
    N, seed, T_list, selectors = args
    return _run_rows(_WORKER["system"], N, seed, T_list, selectors, _WORKER["proxy"])


@dataclass
class SweepBundle:
    rows: dict
    verdicts: dict

    @property
    def passed(self) -> bool:
        return all(v["passed"] for v in self.verdicts.values())


def _curve(reports, T=None, per_step=False):
    """``N -> max gap`` over seeds (finite rows only) for one T."""
    out = {}
    for r in reports:
        if T is not None and r.T != T:
            continue
        g = r.measured_gap / r.T if per_step and r.T else r.measured_gap
        if np.isfinite(g):
            out[r.N] = max(out.get(r.N, -np.inf), g)
    return dict(sorted(out.items()))


def judge(selector: str, reports: list, thresholds: dict) -> dict:
    """Pass/fail verdict of one selector over all its rows."""
    slack = thresholds["monotone_slack"]
    final_tol = thresholds["final_gap"]
    midrun = any(r.status.startswith("midrun") for r in reports)
    if not reports:
        return {"passed": True, "note": "no rows"}
    if selector in ("telescoping", "decrease", "corollary"):
        ok = all(r.passed for r in reports if r.status == "ok" or r.status == "not_applicable")
        return {"passed": bool(ok and not midrun),
                "worst_gap": float(np.nanmax([r.measured_gap for r in reports]))}
    if selector in ("turnpike", "lemma_gap"):
        groups = {}
        for r in reports:
            groups.setdefault(r.details.get("eps"), []).append(r)
        verdict = {"passed": True, "curves": {}}
        for key, reps in groups.items():
            curve = {r.N: r.measured_gap if selector == "lemma_gap" else r.lhs for r in reps}
            curve = dict(sorted(curve.items()))
            vals = list(curve.values())
            ok = is_nonincreasing(vals, slack if selector == "lemma_gap" else 0.0)
            if selector == "lemma_gap" and vals:
                ok = ok and vals[-1] <= final_tol
            verdict["curves"][str(key)] = curve
            verdict["passed"] = bool(verdict["passed"] and ok)
        return verdict
    Ts = sorted({r.T for r in reports})
    verdict = {"passed": not midrun, "curves": {}}
    for T in Ts:
        curve = _curve(reports, T, per_step=(selector == "nap_uc"))
        vals = list(curve.values())
        ok = is_nonincreasing(vals, slack)
        if selector == "nap_tc" and vals:
            ok = ok and vals[-1] <= final_tol
        if selector.startswith("transient"):
            ok = ok and all(r.passed for r in reports if r.T == T and r.status == "ok")
        verdict["curves"][str(T)] = curve
        verdict["passed"] = bool(verdict["passed"] and ok)
    return verdict


def sweep(system, N_list: Iterable[int], T_list: Iterable[int], seeds: Iterable[int],
          selectors: Sequence[str] = SELECTORS, jobs: int = 1) -> SweepBundle:
    """Cartesian sweep over horizons, lengths and seeds.

    One closed-loop run per (N, seed, mode) at the longest T; shorter T
    are prefixes of it. Failures are recorded per row and never abort.
    """
    N_list, T_list, seeds = list(N_list), sorted(T_list), list(seeds)
    selectors = list(selectors)
    unknown = [s for s in selectors if s not in SELECTORS]
    if unknown:
        raise SelectorError(f"unknown selector(s): {', '.join(unknown)}")
    rows = {s: [] for s in selectors}
    if not N_list:
        return SweepBundle(rows, {s: judge(s, [], system.scenario.thresholds) for s in selectors})
    scn = system.scenario
    if "turnpike" in selectors:
        for eps in scn.sweep.get("eps_grid", [0.02, 0.05, 0.1, 0.2]):
            prev = None
            for N in N_list:
                sol = solve_ocp(system.problem(N, "tc"), system.x0())
                if not sol.ok:
                    rows["turnpike"].append(_failed(N, None, "turnpike", "infeasible", eps=eps))
                    continue
                _, card = turnpike_profile(sol, system.ross(), eps)
                ref = card if prev is None else prev
                rows["turnpike"].append(PerformanceReport(card, ref, card - ref, N, None, "turnpike",
                                                          details={"eps": eps}))
                prev = card
    if "lemma_gap" in selectors:
        proxy = VinfProxy(system.problem(N_list[0], "tc"), scn.N_inf)
        rows["lemma_gap"] = lemma_gap_curve(lambda N: system.problem(N, "tc"), system.points(),
                                            N_list, scn.N_inf, proxy)
    tc_sel, uc_sel = _closed_loop_selectors(selectors)
    if (tc_sel or uc_sel) and T_list and seeds:
        tasks = [(N, seed, T_list, selectors) for N in N_list for seed in seeds]
        if jobs > 1:
            with ProcessPoolExecutor(jobs, initializer=_worker_init,
                                     initargs=(scn.to_dict(),)) as ex:
                results = list(ex.map(_worker_task, tasks))
        else:
            cache = {}
            results = [_run_rows(system, N, seed, T_list, selectors, cache)
                       for N, seed, _, _ in tasks]
        for res in results:
            for s, reps in res.items():
                rows[s].extend(reps)
        for s in rows:
            rows[s].sort(key=lambda r: (r.N, r.seed if r.seed is not None else -1,
                                        r.T if r.T is not None else -1))
    verdicts = {s: judge(s, rows[s], scn.thresholds) for s in selectors}
    return SweepBundle(rows, verdicts)
