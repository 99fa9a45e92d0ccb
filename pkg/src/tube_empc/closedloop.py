"""Receding-horizon tube controller applied to the disturbed plant.

At each step the tube OCP is solved for the measured state, the first
nominal input ``v*`` is applied through ``u = K x + v*`` and a disturbance
is drawn. Solves are recorded for ``t = 0..T`` (so ``z0*(T)`` and
``V_N(T)`` are available for telescoping checks); transitions for
``t < T``.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .cost import eval_real, eval_stage
from .errors import (DisturbanceError, InitialInfeasibleError, MidRunInfeasibleError,
                     ScenarioError)
from .geometry import Polytope
from .ocp import OcpProblem, OcpSolution, solve_ocp, solve_tube_ocp

DIST_KINDS = ("zero", "uniform_seeded", "vertex_extreme", "explicit_sequence")
MEMBERSHIP_TOL = 1e-9


def fmt(x: float) -> str:
    """Round-trip float formatting used by every CSV writer."""
    return format(float(x), ".17g")


@dataclass
class DisturbanceSource:
    """Disturbance generator; sample ``t`` depends only on ``(seed, t)``."""

    kind: str = "zero"
    seed: int = 0
    sequence: Optional[Sequence] = None

    def __post_init__(self):
        if self.kind not in DIST_KINDS:
            raise ScenarioError(f"unknown disturbance kind {self.kind!r}")
        if self.kind == "explicit_sequence":
            if self.sequence is None:
                raise ScenarioError("explicit_sequence needs a sequence")
            self.sequence = np.atleast_2d(np.asarray(self.sequence, dtype=float))

    def draw(self, t: int, W: Polytope) -> np.ndarray:
        n = W.dim
        if self.kind == "zero":
            w = np.zeros(n)
        elif self.kind == "uniform_seeded":
            rng = np.random.default_rng([int(self.seed), int(t)])
            w = W.sample(rng, 1)[0]
        elif self.kind == "vertex_extreme":
            V = W.vertices()
            w = V[(t + int(self.seed)) % len(V)]
        else:
            seq = self.sequence
            if t >= len(seq):
                raise DisturbanceError(f"disturbance sequence has no entry for step {t}")
            w = seq[t].reshape(-1)
            if w.size != n:
                raise DisturbanceError(f"disturbance at step {t} has size {w.size}, expected {n}")
        if not W.contains(w, MEMBERSHIP_TOL):
            raise DisturbanceError(f"disturbance at step {t} lies outside W: {w.tolist()}")
        return np.asarray(w, dtype=float)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "seed": int(self.seed)}
        if self.sequence is not None:
            out["sequence"] = np.asarray(self.sequence).tolist()
        return out


@dataclass
class ClosedLoopLog:
    """Arrays indexed by step; solve quantities have ``T+1`` rows, ``w`` has ``T``."""

    x: np.ndarray
    z0: np.ndarray
    v: np.ndarray
    u: np.ndarray
    w: np.ndarray
    value: np.ndarray
    stage_nominal: np.ndarray
    stage_real: np.ndarray
    status: list
    meta: dict = field(default_factory=dict)
    solve_times: list = field(default_factory=list)

    @property
    def T(self) -> int:
        return len(self.w)

    def truncated(self, T: int) -> "ClosedLoopLog":
        """Prefix covering transitions ``0..T-1`` and solves ``0..T``."""
        if T > self.T:
            raise ValueError(f"log has only {self.T} steps")
        meta = dict(self.meta, T=int(T))
        return ClosedLoopLog(self.x[:T + 1], self.z0[:T + 1], self.v[:T + 1], self.u[:T + 1],
                             self.w[:T], self.value[:T + 1], self.stage_nominal[:T + 1],
                             self.stage_real[:T + 1], list(self.status[:T + 1]), meta,
                             list(self.solve_times[:T + 1]))

    def header(self) -> list:
        n, m = self.x.shape[1], self.v.shape[1]
        cols = ["t"]
        cols += [f"x{i}" for i in range(n)] + [f"z{i}" for i in range(n)]
        cols += [f"v{i}" for i in range(m)] + [f"u{i}" for i in range(m)]
        cols += [f"w{i}" for i in range(n)]
        return cols + ["value", "stage_nominal", "stage_real", "status"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(self.header())
        n = self.x.shape[1]
        for t in range(len(self.x)):
            w = self.w[t] if t < self.T else [None] * n
            row = [t] + [fmt(a) for a in self.x[t]] + [fmt(a) for a in self.z0[t]]
            row += [fmt(a) for a in self.v[t]] + [fmt(a) for a in self.u[t]]
            row += ["" if a is None else fmt(a) for a in w]
            row += [fmt(self.value[t]), fmt(self.stage_nominal[t]), fmt(self.stage_real[t]),
                    self.status[t]]
            writer.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, meta: Optional[dict] = None) -> "ClosedLoopLog":
        rows = list(csv.reader(io.StringIO(text)))
        head, body = rows[0], rows[1:]
        n = sum(1 for c in head if c.startswith("x"))
        m = sum(1 for c in head if c.startswith("v") and c != "value")
        col = {c: i for i, c in enumerate(head)}

        def block(prefix, k, rows_):
            return np.array([[float(r[col[f"{prefix}{i}"]]) for i in range(k)] for r in rows_]).reshape(len(rows_), k)

        def scalar(name):
            return np.array([float(r[col[name]]) for r in body])

        return cls(x=block("x", n, body), z0=block("z", n, body), v=block("v", m, body),
                   u=block("u", m, body), w=block("w", n, body[:-1]), value=scalar("value"),
                   stage_nominal=scalar("stage_nominal"), stage_real=scalar("stage_real"),
                   status=[r[col["status"]] for r in body], meta=dict(meta or {}))

    def summary(self) -> dict:
        """Deterministic run summary (no timings)."""
        T = self.T
        return {
            "meta": self.meta,
            "steps": T,
            "jcl_nominal": float(np.sum(self.stage_nominal[:T])),
            "jcl_real": float(np.sum(self.stage_real[:T])),
            "value_initial": float(self.value[0]),
            "value_final": float(self.value[T]),
            "final_nominal_state": self.z0[T].tolist(),
            "all_optimal": all(s == "optimal" for s in self.status),
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)

    def timing(self) -> dict:
        t = np.asarray(self.solve_times, float)
        if not len(t):
            return {"solves": 0}
        return {"solves": int(len(t)), "total_s": float(t.sum()), "max_s": float(t.max()),
                "mean_s": float(t.mean())}


def _shifted(sol: OcpSolution, problem: OcpProblem) -> OcpSolution:
    """Previous solution shifted by one step, padded at the steady state."""
    Z = np.vstack([sol.z_traj[1:], problem.ross.zs[None, :]])
    V = np.vstack([sol.v_traj[1:], problem.ross.vs[None, :]])
    return OcpSolution(Z, V, sol.value, sol.status)


def run(problem: OcpProblem, x0, T: int, dist: DisturbanceSource, W: Polytope,
        warm_start: bool = True) -> ClosedLoopLog:
    """Simulate ``T`` closed-loop steps from the measured state ``x0``.

    Raises:
        InitialInfeasibleError: no admissible nominal state at ``x0``.
        MidRunInfeasibleError: the tube OCP failed at a later step; the
            exception carries the log prefix.
        DisturbanceError: a disturbance sample is outside ``W``.
    """
    model, cost, omega = problem.model, problem.cost, problem.omega
    n, m = model.n, model.m
    T = int(T)
    X = np.zeros((T + 1, n))
    Z0 = np.zeros((T + 1, n))
    V = np.zeros((T + 1, m))
    U = np.zeros((T + 1, m))
    Wd = np.zeros((T, n))
    val = np.zeros(T + 1)
    ln = np.zeros(T + 1)
    lr = np.zeros(T + 1)
    status, times = [], []
    meta = {"N": problem.horizon, "T": T, "mode": problem.mode, "variant": cost.variant,
            "dist": dist.kind, "seed": int(dist.seed)}

    def prefix(t):
        return ClosedLoopLog(X[:t], Z0[:t], V[:t], U[:t], Wd[:max(t - 1, 0)], val[:t], ln[:t],
                             lr[:t], list(status), dict(meta, T=max(t - 1, 0)), list(times))

    x = np.asarray(x0, float).ravel()
    hint = None
    for t in range(T + 1):
        start = time.perf_counter()
        z0, sol = solve_tube_ocp(problem, x, hint=hint if warm_start else None)
        times.append(time.perf_counter() - start)
        if not sol.ok:
            if t == 0:
                raise InitialInfeasibleError(f"tube OCP {sol.status} at the initial state {x.tolist()}")
            raise MidRunInfeasibleError(f"tube OCP {sol.status} at step {t}", t, prefix(t))
        v = sol.v_traj[0]
        X[t], Z0[t], V[t] = x, z0, v
        U[t] = model.feedback(x, v)
        val[t] = sol.value
        ln[t] = eval_stage(cost, model, omega, z0, v)
        lr[t] = eval_real(cost, model, x, v)
        status.append(sol.status)
        if t == T:
            break
        w = dist.draw(t, W)
        Wd[t] = w
        x = model.step_real(x, v, w)
        hint = _shifted(sol, problem)
    return ClosedLoopLog(X, Z0, V, U, Wd, val, ln, lr, status, meta, times)


def tube_containment(log: ClosedLoopLog, omega: Polytope, tol: float = 1e-7) -> float:
    """Worst margin of ``x(t) - z0*(t)`` in ``Omega`` over the log (>= -tol passes)."""
    E = log.x - log.z0
    return float(np.min(omega.b[None, :] - E @ omega.A.T))


def check_feasible_region(problem: OcpProblem, z_grid) -> list:
    """Feasibility of the fixed-start OCP at each grid point."""
    return [bool(solve_ocp(problem, np.atleast_1d(np.asarray(z, float))).ok) for z in z_grid]
