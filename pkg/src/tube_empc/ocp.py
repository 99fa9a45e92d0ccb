"""Finite-horizon optimal control problems for the nominal tube dynamics.

Direct transcription with decision vector
``[z_0, z_1, ..., z_N, v_0, ..., v_{N-1}, (t_0, ..., t_{N-1})]``, the ``t``
block being epigraph variables for the worst-case stage cost. ``z_0`` is
always a variable: fixed-start problems pin it with an equality, the tube
problem leaves it free subject to ``x - z_0 in Omega``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_discrete_are

from .cost import Ross, StageCost, eval_stage
from .errors import ScenarioError
from .geometry import Polytope, TOL
from .model import LinearTubeModel
from .solver import (INFEASIBLE, OPTIMAL, ConvexProgram, QuadBlocks, solve_convex)

DEFAULT_EPS_GRID = (0.02, 0.05, 0.1, 0.2)


@dataclass
class EqualityTerminal:
    """``X_f = {zs}``, ``V_f = 0``."""

    kind: str = "equality_at_ross"


@dataclass
class QuadraticTerminal:
    """``V_f(z) = 1/2 d'Pd - nu'd`` on ``X_f = {1/2 d'Pd <= level}``, ``d = z - zs``.

    ``K_f`` is the local controller ``kappa_f(z) = vs + K_f d``.
    """

    P: np.ndarray
    level: float
    K_f: Optional[np.ndarray] = None
    kind: str = "quadratic"

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        if self.K_f is not None:
            self.K_f = np.atleast_2d(np.asarray(self.K_f, dtype=float))


@dataclass(eq=False)
class OcpProblem:
    model: LinearTubeModel
    cost: StageCost
    omega: Polytope
    z_bar: Polytope
    ross: Ross
    horizon: int
    mode: str = "tc"
    terminal: object = None
    tol: float = 1e-9
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if self.mode not in ("tc", "uc"):
            raise ScenarioError(f"mode must be 'tc' or 'uc', got {self.mode!r}")
        if self.horizon < 1:
            raise ScenarioError("horizon must be positive")
        if self.mode == "tc" and self.terminal is None:
            self.terminal = EqualityTerminal()
        if self.mode == "uc":
            self.terminal = None

    def with_horizon(self, N: int) -> "OcpProblem":
        return replace(self, horizon=int(N))

    def with_mode(self, mode: str, terminal=None) -> "OcpProblem":
        return replace(self, mode=mode, terminal=terminal)

    def terminal_cost(self, z) -> float:
        if not isinstance(self.terminal, QuadraticTerminal):
            return 0.0
        d = np.ravel(z) - self.ross.zs
        return float(0.5 * d @ self.terminal.P @ d - self.ross.nu @ d)

    def stage(self, z, v) -> float:
        return eval_stage(self.cost, self.model, self.omega, z, v)


@dataclass
class OcpSolution:
    z_traj: np.ndarray
    v_traj: np.ndarray
    value: float
    status: str
    kkt_residual: float = float("nan")
    iterations: int = 0

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    @property
    def horizon(self) -> int:
        return len(self.v_traj)


def _infeasible(N, n, m, residual=float("nan")) -> OcpSolution:
    return OcpSolution(np.full((N + 1, n), np.nan), np.full((N, m), np.nan), np.nan,
                       INFEASIBLE, residual)


class _Transcription:
    """Static matrices of one OCP shape; right-hand sides filled per solve."""

    def __init__(self, problem: OcpProblem, start: str, ball: Optional[float] = None):
        self.problem = problem
        self.start = start
        model, N = problem.model, problem.horizon
        n, m = model.n, model.m
        self.n, self.m, self.N = n, m, N
        pieces = problem.cost.pieces(model, problem.omega)
        self.pieces = pieces
        self.epi = pieces.pieces > 1
        nz = (N + 1) * n
        nvar = nz + N * m + (N if self.epi else 0)
        self.nvar = nvar
        self.iz = lambda k: k * n + np.arange(n)
        self.iv = lambda k: nz + k * m + np.arange(m)
        self.it = lambda k: nz + N * m + k
        offset = problem.cost.offset

        # objective
        P = sp.lil_matrix((nvar, nvar))
        q = np.zeros(nvar)
        const = 0.0
        quad = []
        for k in range(N):
            idx = np.concatenate([self.iz(k), self.iv(k)])
            if not self.epi:
                P[np.ix_(idx, idx)] = pieces.H
                q[idx] += pieces.g[0]
                const += pieces.c[0] - offset
            else:
                q[self.it(k)] = 1.0
                const -= offset
        if self.epi:
            r = pieces.pieces
            idx = np.array([np.concatenate([self.iz(k), self.iv(k)]) for k in range(N)])
            C = sp.lil_matrix((N * r, nvar))
            for k in range(N):
                for j in range(r):
                    C[k * r + j, idx[k]] = pieces.g[j]
                    C[k * r + j, self.it(k)] = -1.0
            quad.append(QuadBlocks(idx=idx, Q=pieces.H, C=C.tocsr(), d=np.tile(pieces.c, N), r=r))

        # dynamics
        Aeq_rows, beq = [], []
        dyn = sp.lil_matrix((N * n, nvar))
        for k in range(N):
            rows = k * n + np.arange(n)
            dyn[np.ix_(rows, self.iz(k + 1))] = np.eye(n)
            dyn[np.ix_(rows, self.iz(k))] = -model.A_K
            dyn[np.ix_(rows, self.iv(k))] = -model.B
        Aeq_rows.append(dyn.tocsr())
        beq.append(np.zeros(N * n))
        self.start_eq = None
        if start == "fixed":
            E = sp.lil_matrix((n, nvar))
            E[np.arange(n), self.iz(0)] = 1.0
            self.start_eq = len(np.concatenate(beq)) if beq else 0
            Aeq_rows.append(E.tocsr())
            beq.append(np.zeros(n))

        ross = problem.ross
        term = problem.terminal
        if problem.mode == "tc" and isinstance(term, EqualityTerminal) and ball is None:
            E = sp.lil_matrix((n, nvar))
            E[np.arange(n), self.iz(N)] = 1.0
            Aeq_rows.append(E.tocsr())
            beq.append(ross.zs.copy())
        if ball is not None and ball <= 1e-12:
            E = sp.lil_matrix((n, nvar))
            E[np.arange(n), self.iz(N)] = 1.0
            Aeq_rows.append(E.tocsr())
            beq.append(ross.zs.copy())

        # path constraints
        Zb = problem.z_bar
        Ax, Av = Zb.A[:, :n], Zb.A[:, n:]
        state_only = ~np.any(Av != 0, axis=1)
        G_rows, h = [], []
        self.state_rows0 = None
        for k in range(N):
            Gk = sp.lil_matrix((len(Zb.b), nvar))
            Gk[:, self.iz(k)] = Ax
            Gk[:, self.iv(k)] = Av
            Gk = Gk.tocsr()
            hk = Zb.b.copy()
            if k == 0 and start == "fixed":
                # state-only rows at t=0 are checked directly, not optimized
                self.state_rows0 = (Ax[state_only], Zb.b[state_only])
                Gk = Gk[~state_only]
                hk = hk[~state_only]
            G_rows.append(Gk)
            h.append(hk)
        self.tube_rows = None
        if start == "tube":
            Om = problem.omega
            Gt = sp.lil_matrix((len(Om.b), nvar))
            Gt[:, self.iz(0)] = -Om.A
            self.tube_rows = (sum(len(x) for x in h), Om)
            G_rows.append(Gt.tocsr())
            h.append(np.zeros(len(Om.b)))
        if ball is not None and ball > 1e-12:
            Gb = sp.lil_matrix((2 * n, nvar))
            Gb[np.arange(n), self.iz(N)] = 1.0
            Gb[n + np.arange(n), self.iz(N)] = -1.0
            G_rows.append(Gb.tocsr())
            h.append(np.concatenate([ross.zs + ball, -ross.zs + ball]))

        if isinstance(term, QuadraticTerminal) and problem.mode == "tc" and ball is None:
            idxN = self.iz(N)
            P[np.ix_(idxN, idxN)] = P[np.ix_(idxN, idxN)].toarray() + term.P
            q[idxN] += -term.P @ ross.zs - ross.nu
            const += 0.5 * ross.zs @ term.P @ ross.zs + ross.nu @ ross.zs
            # 1/2 (z - zs)'P(z - zs) <= level
            C = sp.lil_matrix((1, nvar))
            C[0, idxN] = -term.P @ ross.zs
            quad.append(QuadBlocks(idx=idxN[None, :], Q=term.P, C=C.tocsr(),
                                   d=[0.5 * ross.zs @ term.P @ ross.zs - term.level], r=1))

        self.P = P.tocsr()
        self.q = q
        self.const = const
        self.A = sp.vstack(Aeq_rows, format="csr")
        self.b = np.concatenate(beq)
        self.G = sp.vstack(G_rows, format="csr")
        self.h = np.concatenate(h)
        self.quad = quad
        dense = nvar <= 250
        if dense:
            self.P = self.P.toarray()
            self.A = self.A.toarray()
            self.G = self.G.toarray()
            self.quad = [QuadBlocks(qb.idx, qb.Q, qb.C.toarray(), qb.d, qb.r) for qb in quad]

    def program(self, z0=None, x=None) -> ConvexProgram:
        b = self.b
        h = self.h
        if self.start == "fixed":
            b = b.copy()
            b[self.start_eq:self.start_eq + self.n] = z0
        if self.start == "tube":
            h = h.copy()
            off, Om = self.tube_rows
            h[off:off + len(Om.b)] = Om.b - Om.A @ x
        return ConvexProgram(P=self.P, q=self.q, A=self.A, b=b, G=self.G, h=h,
                             quad=self.quad, const=self.const)

    def unpack(self, xsol, res) -> OcpSolution:
        n, m, N = self.n, self.m, self.N
        Z = np.array([xsol[self.iz(k)] for k in range(N + 1)])
        V = np.array([xsol[self.iv(k)] for k in range(N)])
        return OcpSolution(Z, V, float(res.value), res.status, res.kkt_residual, res.iterations)

    def initial_guess(self, z0):
        x = np.zeros(self.nvar)
        zs, vs = self.problem.ross.zs, self.problem.ross.vs
        for k in range(self.N + 1):
            x[self.iz(k)] = zs
        for k in range(self.N):
            x[self.iv(k)] = vs
        if z0 is not None:
            x[self.iz(0)] = z0
        if self.epi:
            for k in range(self.N):
                y = np.concatenate([x[self.iz(k)], x[self.iv(k)]])
                x[self.it(k)] = self.pieces(y)
        return x


def _transcription(problem: OcpProblem, start: str, ball=None) -> _Transcription:
    key = (start, None if ball is None else float(ball))
    tr = problem._cache.get(key)
    if tr is None:
        tr = _Transcription(problem, start, ball)
        problem._cache[key] = tr
    return tr


def _stack_hint(tr: _Transcription, hint: Optional[OcpSolution]):
    if hint is None or not hint.ok:
        return None
    x = np.zeros(tr.nvar)
    N = tr.N
    Zh, Vh = hint.z_traj, hint.v_traj
    for k in range(N + 1):
        x[tr.iz(k)] = Zh[min(k, len(Zh) - 1)]
    for k in range(N):
        x[tr.iv(k)] = Vh[min(k, len(Vh) - 1)]
    if tr.epi:
        for k in range(N):
            x[tr.it(k)] = tr.pieces(np.concatenate([x[tr.iz(k)], x[tr.iv(k)]]))
    return x


def solve_ocp(problem: OcpProblem, z0, hint: Optional[OcpSolution] = None) -> OcpSolution:
    """Solve the OCP from a fixed nominal initial state ``z0``.

    Status ``infeasible`` means ``z0`` is outside the feasible set of the
    horizon-N problem (to solver tolerance).
    """
    z0 = np.asarray(z0, float).ravel()
    tr = _transcription(problem, "fixed")
    A0, b0 = tr.state_rows0
    if len(b0) and np.any(A0 @ z0 > b0 + TOL):
        return _infeasible(tr.N, tr.n, tr.m)
    x0 = _stack_hint(tr, hint)
    if x0 is None:
        x0 = tr.initial_guess(z0)
    res = solve_convex(tr.program(z0=z0), x0_hint=x0, tol=problem.tol)
    if not res.ok:
        return _infeasible(tr.N, tr.n, tr.m, res.kkt_residual) if res.status == INFEASIBLE else \
            replace(tr.unpack(res.x, res), status=res.status)
    return tr.unpack(res.x, res)


def solve_tube_ocp(problem: OcpProblem, x, hint: Optional[OcpSolution] = None):
    """Tube OCP: optimize the nominal start ``z0`` subject to ``x - z0 in Omega``.

    Returns:
        ``(z0_star, solution)``; ``z0_star`` is NaN when infeasible.
    """
    x = np.asarray(x, float).ravel()
    tr = _transcription(problem, "tube")
    x0 = _stack_hint(tr, hint)
    if x0 is None:
        x0 = tr.initial_guess(x)
    res = solve_convex(tr.program(x=x), x0_hint=x0, tol=problem.tol)
    if res.status == INFEASIBLE:
        sol = _infeasible(tr.N, tr.n, tr.m, res.kkt_residual)
    else:
        sol = tr.unpack(res.x, res)
    return sol.z_traj[0].copy(), sol


def value_inf_proxy(problem: OcpProblem, z0, n_inf: int) -> float:
    """Long-horizon stand-in for the infinite-horizon optimal value.

    Terminal equality at the steady state with horizon ``n_inf``; exact up to
    the tail cost, which vanishes at the steady state after normalization.
    Returns NaN when ``z0`` cannot reach the steady state in ``n_inf`` steps.
    """
    long = _inf_problem(problem, n_inf)
    sol = solve_ocp(long, z0)
    return sol.value if sol.ok else float("nan")


def inf_proxy_tail(problem: OcpProblem, z0, n_inf: int) -> float:
    """``|V_{2 n_inf}(z0) - V_{n_inf}(z0)|`` convergence diagnostic."""
    return abs(value_inf_proxy(problem, z0, 2 * n_inf) - value_inf_proxy(problem, z0, n_inf))


def _inf_problem(problem: OcpProblem, n_inf: int) -> OcpProblem:
    key = ("inf", int(n_inf))
    cached = problem._cache.get(key)
    if cached is None:
        cached = replace(problem, horizon=int(n_inf), mode="tc", terminal=EqualityTerminal())
        problem._cache[key] = cached
    return cached


def solve_reach_ball(problem: OcpProblem, z0, T: int, kappa: float) -> OcpSolution:
    """Cheapest admissible ``T``-step trajectory ending in the inf-norm ball.

    Minimizes ``J_T`` subject to the tightened path constraints and
    ``|z(T) - zs|_inf <= kappa``; no terminal cost.
    """
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    key = ("ball", int(T))
    base = problem._cache.get(key)
    if base is None:
        base = replace(problem, horizon=int(T), mode="uc", terminal=None)
        problem._cache[key] = base
    tr = _transcription(base, "fixed", ball=float(kappa))
    z0 = np.asarray(z0, float).ravel()
    A0, b0 = tr.state_rows0
    if len(b0) and np.any(A0 @ z0 > b0 + TOL):
        return _infeasible(tr.N, tr.n, tr.m)
    res = solve_convex(tr.program(z0=z0), x0_hint=tr.initial_guess(z0), tol=problem.tol)
    if res.status == INFEASIBLE:
        return _infeasible(tr.N, tr.n, tr.m, res.kkt_residual)
    return tr.unpack(res.x, res)


def trajectory_cost(problem: OcpProblem, sol: OcpSolution) -> float:
    """Recompute ``sum ell(z_k, v_k) + V_f(z_N)`` from a solution."""
    total = sum(problem.stage(z, v) for z, v in zip(sol.z_traj[:-1], sol.v_traj))
    if problem.mode == "tc":
        total += problem.terminal_cost(sol.z_traj[-1])
    return float(total)


def solution_residuals(problem: OcpProblem, sol: OcpSolution) -> dict:
    """Dynamics, constraint and terminal residuals plus value mismatch."""
    model = problem.model
    dyn = max((np.max(np.abs(sol.z_traj[k + 1] - model.step_nominal(sol.z_traj[k], sol.v_traj[k])))
               for k in range(sol.horizon)), default=0.0)
    Y = np.hstack([sol.z_traj[:-1], sol.v_traj])
    viol = float(np.max(Y @ problem.z_bar.A.T - problem.z_bar.b, initial=-np.inf))
    term = 0.0
    if problem.mode == "tc" and isinstance(problem.terminal, EqualityTerminal):
        term = float(np.max(np.abs(sol.z_traj[-1] - problem.ross.zs)))
    elif problem.mode == "tc":
        d = sol.z_traj[-1] - problem.ross.zs
        term = max(0.0, float(0.5 * d @ problem.terminal.P @ d - problem.terminal.level))
    return {"dynamics": float(dyn), "constraint": max(viol, 0.0), "terminal": term,
            "value_mismatch": abs(trajectory_cost(problem, sol) - sol.value)}


def riccati_terminal(problem: OcpProblem, level: float) -> QuadraticTerminal:
    """Quadratic terminal ingredients from the DARE on ``(A_K, B)``.

    Weights are the Hessian of the rotated stage cost (exact for the
    nominal and integral variants), so ``V_f`` decreases by exactly the
    rotated cost under ``kappa_f``.
    """
    model = problem.model
    pieces = problem.cost.pieces(model, problem.omega)
    n = model.n
    H = pieces.H
    Q, R, S = H[:n, :n], H[n:, n:], H[:n, n:]
    P = solve_discrete_are(model.A_K, model.B, Q, R, s=S)
    K_f = -np.linalg.solve(R + model.B.T @ P @ model.B, model.B.T @ P @ model.A_K + S.T)
    return QuadraticTerminal(P=P, level=float(level), K_f=K_f)


@dataclass
class TerminalReport:
    admissible_margin: float
    invariance_margin: float
    decrease_margin: float
    n_samples: int

    @property
    def holds(self) -> bool:
        return min(self.admissible_margin, self.invariance_margin, self.decrease_margin) >= -1e-9

    def to_dict(self) -> dict:
        return {"admissible_margin": self.admissible_margin,
                "invariance_margin": self.invariance_margin,
                "decrease_margin": self.decrease_margin,
                "n_samples": self.n_samples, "holds": self.holds}


def terminal_decrease_check(problem: OcpProblem, terminal=None, samples: int = 500,
                            seed: int = 0) -> TerminalReport:
    """Sampled check of the terminal-set conditions.

    Checks (i) ``(z, kappa_f(z)) in Z_bar``, (ii) ``f(z, kappa_f(z)) in X_f``
    and (iii) ``V_f(z+) - V_f(z) <= -ell(z, kappa_f(z))`` on samples of the
    terminal set (boundary and interior). Margins are nonnegative when the
    condition holds.
    """
    terminal = problem.terminal if terminal is None else terminal
    ross, model = problem.ross, problem.model
    if terminal is None or isinstance(terminal, EqualityTerminal):
        z, v = ross.zs, ross.vs
        adm = problem.z_bar.margin(np.concatenate([z, v]))
        inv = -float(np.max(np.abs(model.step_nominal(z, v) - z)))
        dec = -problem.stage(z, v)
        return TerminalReport(adm, inv, dec, 1)
    rng = np.random.default_rng(seed)
    n = model.n
    L = np.linalg.cholesky(np.linalg.inv(terminal.P / (2.0 * terminal.level)))
    U = rng.standard_normal((samples, n))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    radii = np.concatenate([np.ones(samples // 2), rng.random(samples - samples // 2) ** (1.0 / n)])
    D = (U * radii[:, None]) @ L.T
    adm = inv = dec = np.inf

    def vf(d):
        return 0.5 * d @ terminal.P @ d - ross.nu @ d

    for d in D:
        z = ross.zs + d
        v = ross.vs + terminal.K_f @ d
        adm = min(adm, problem.z_bar.margin(np.concatenate([z, v])))
        dn = model.step_nominal(z, v) - ross.zs
        inv = min(inv, terminal.level - 0.5 * dn @ terminal.P @ dn)
        dec = min(dec, -problem.stage(z, v) - (vf(dn) - vf(d)))
    return TerminalReport(float(adm), float(inv), float(dec), len(D))
