"""Primal-dual log-barrier interior-point method for small convex programs.

Problem form::

    minimize    1/2 x'Px + q'x + const
    subject to  A x = b
                G x <= h
                1/2 x[idx_k]' Q x[idx_k] + C_k x + d_k <= 0   (quadratic blocks)

Newton steps on the perturbed KKT system with Mehrotra predictor-corrector
centering. Iterates need not be feasible; a phase-1 LP over the affine rows
runs only when the barrier iteration fails, to tell infeasibility apart from
stalling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lu_factor, lu_solve
from scipy.optimize import linprog

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"

SPARSE_THRESHOLD = 250


@dataclass
class QuadBlocks:
    """``G`` groups of ``r`` rows sharing one Hessian ``Q``.

    Row ``g*r + j`` reads ``1/2 x[idx[g]]' Q x[idx[g]] + C[g*r+j] x + d[g*r+j]``.
    """

    idx: np.ndarray
    Q: np.ndarray
    C: object
    d: np.ndarray
    r: int = 1

    def __post_init__(self):
        self.idx = np.atleast_2d(np.asarray(self.idx, dtype=int))
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.d = np.asarray(self.d, dtype=float).ravel()

    @property
    def rows(self) -> int:
        return self.d.size


@dataclass
class ConvexProgram:
    P: object
    q: np.ndarray
    A: object = None
    b: np.ndarray = None
    G: object = None
    h: np.ndarray = None
    quad: Sequence[QuadBlocks] = ()
    const: float = 0.0

    @property
    def n(self) -> int:
        return len(self.q)

    def objective(self, x) -> float:
        return float(0.5 * x @ (self.P @ x) + self.q @ x + self.const)


@dataclass
class ConvexResult:
    x: np.ndarray
    value: float
    status: str
    y: np.ndarray = field(default_factory=lambda: np.zeros(0))
    z: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations: int = 0
    kkt_residual: float = float("nan")

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def _empty(n, sparse):
    return sp.csr_matrix((0, n)) if sparse else np.zeros((0, n))


def _convert(M, n, sparse):
    if M is None:
        return _empty(n, sparse)
    if sparse:
        return sp.csr_matrix(M)
    return M.toarray() if sp.issparse(M) else np.atleast_2d(np.asarray(M, dtype=float)).reshape(-1, n)


class _Stacked:
    """Inequality rows (affine then quadratic) evaluated together."""

    def __init__(self, G, h, quad, n, sparse):
        self.n = n
        self.sparse = sparse
        self.G = _convert(G, n, sparse)
        self.h = np.zeros(0) if h is None else np.asarray(h, float).ravel()
        self.quad = list(quad)
        self.C = [_convert(qb.C, n, sparse) for qb in self.quad]
        self.m_aff = self.G.shape[0]
        self.m = self.m_aff + sum(qb.rows for qb in self.quad)

    def values(self, x):
        parts = [self.G @ x - self.h]
        for qb, C in zip(self.quad, self.C):
            Y = x[qb.idx]
            quad = 0.5 * np.sum((Y @ qb.Q) * Y, axis=1)
            parts.append(np.repeat(quad, qb.r) + C @ x + qb.d)
        return np.concatenate(parts)

    def jacobian(self, x):
        if not self.quad:
            return self.G
        blocks = [self.G]
        for qb, C in zip(self.quad, self.C):
            Y = x[qb.idx]
            grads = np.repeat(Y @ qb.Q, qb.r, axis=0)
            cols = np.repeat(qb.idx, qb.r, axis=0)
            rows = np.repeat(np.arange(qb.rows), qb.idx.shape[1])
            if self.sparse:
                D = sp.csr_matrix((grads.ravel(), (rows, cols.ravel())), shape=(qb.rows, self.n))
                blocks.append(C + D)
            else:
                D = np.array(C, copy=True)
                np.add.at(D, (rows, cols.ravel()), grads.ravel())
                blocks.append(D)
        return sp.vstack(blocks, format="csr") if self.sparse else np.vstack(blocks)

    def hessian(self, lam):
        """``sum_i lam_i * Hess g_i`` (only quadratic rows contribute)."""
        if not self.quad:
            return None
        off = self.m_aff
        rows, cols, vals = [], [], []
        for qb in self.quad:
            weights = lam[off:off + qb.rows].reshape(-1, qb.r).sum(axis=1)
            off += qb.rows
            p = qb.idx.shape[1]
            rows.append(np.repeat(qb.idx, p, axis=1).ravel())
            cols.append(np.tile(qb.idx, (1, p)).ravel())
            vals.append((weights[:, None] * qb.Q.ravel()[None, :]).ravel())
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        if self.sparse:
            return sp.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))
        H = np.zeros((self.n, self.n))
        np.add.at(H, (rows, cols), vals)
        return H


def phase1(prog: ConvexProgram, tol: float = 1e-7):
    """Max-violation LP over the affine rows: ``min t s.t. Gx - h <= t, Ax = b``.

    Returns ``(feasible, x)``.
    """
    n = prog.n
    G = prog.G
    m = 0 if G is None else np.shape(G)[0]
    c = np.zeros(n + 1)
    c[-1] = 1.0
    A_ub = b_ub = None
    if m:
        Gd = G.toarray() if sp.issparse(G) else np.atleast_2d(np.asarray(G, float))
        A_ub = np.hstack([Gd, -np.ones((m, 1))])
        b_ub = np.asarray(prog.h, float)
    A_eq = b_eq = None
    if prog.A is not None and np.shape(prog.A)[0]:
        Ad = prog.A.toarray() if sp.issparse(prog.A) else np.atleast_2d(np.asarray(prog.A, float))
        A_eq = np.hstack([Ad, np.zeros((Ad.shape[0], 1))])
        b_eq = np.asarray(prog.b, float)
    bounds = [(None, None)] * n + [(-1.0, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                  method="highs")
    if res.status != 0:
        return False, None
    return bool(res.x[-1] <= tol), res.x[:n]


def solve_convex(prog: ConvexProgram, x0_hint: Optional[np.ndarray] = None,
                 tol: float = 1e-9, max_iter: int = 60,
                 acceptable: Optional[float] = None) -> ConvexResult:
    """Solve a convex QP/QCQP with a primal-dual interior-point method.

    Args:
        prog: the program; ``P`` and every block ``Q`` must be PSD.
        x0_hint: optional starting primal point.
        tol: target for the duality gap ``s'lambda`` and the residual norms.
        max_iter: Newton iteration cap.
        acceptable: looser target accepted when the iteration stalls
            (default ``max(100 * tol, 1e-8)``).

    Returns:
        ConvexResult with status ``optimal``, ``infeasible`` or ``max_iter``.
    """
    n = prog.n
    sparse = n > SPARSE_THRESHOLD
    P = sp.csr_matrix(prog.P) if sparse else (prog.P.toarray() if sp.issparse(prog.P) else np.asarray(prog.P, float))
    q = np.asarray(prog.q, float)
    A = _convert(prog.A, n, sparse)
    b = np.zeros(0) if prog.b is None else np.asarray(prog.b, float).ravel()
    p = A.shape[0]
    ineq = _Stacked(prog.G, prog.h, prog.quad, n, sparse)
    m = ineq.m

    if acceptable is None:
        acceptable = max(100.0 * tol, 1e-8)
    x = np.zeros(n) if x0_hint is None else np.array(x0_hint, dtype=float)
    y = np.zeros(p)
    g = ineq.values(x)
    s = np.maximum(-g, 1.0)
    lam = np.ones(m)
    reg = 1e-11
    scale_d = 1.0 + np.max(np.abs(q), initial=0.0)
    scale_p = 1.0 + np.max(np.abs(b), initial=0.0)

    prog_parts = (P, q, A, b, ineq)
    status = MAX_ITER
    it = 0
    res_norm = np.inf
    best = (np.inf, x.copy(), y.copy(), lam.copy(), np.inf)
    stall = 0
    for it in range(1, max_iter + 1):
        g = ineq.values(x)
        J = ineq.jacobian(x)
        Hq = ineq.hessian(lam)
        HL = P if Hq is None else P + Hq
        r_d = P @ x + q + (A.T @ y if p else 0.0) + (J.T @ lam if m else 0.0)
        r_p = A @ x - b if p else np.zeros(0)
        r_i = g + s
        gap = float(s @ lam) if m else 0.0
        mu = gap / m if m else 0.0
        res_norm = max(np.max(np.abs(r_d), initial=0.0) / scale_d,
                       np.max(np.abs(r_p), initial=0.0) / scale_p,
                       np.max(np.abs(r_i), initial=0.0))
        if not np.isfinite(res_norm) or (m and np.max(lam) > 1e14):
            break
        merit = max(res_norm, gap)
        if merit < best[0]:
            best = (merit, x.copy(), y.copy(), lam.copy(), res_norm)
            stall = 0
        else:
            stall += 1
        if res_norm <= tol and gap <= tol:
            status = OPTIMAL
            break
        if stall >= 5:
            break

        Wd = lam / s
        if sparse:
            M = HL + J.T @ sp.diags(Wd) @ J if m else HL
            K = sp.bmat([[M + reg * sp.eye(n), A.T if p else None],
                         [A if p else None, -reg * sp.eye(p) if p else None]], format="csc")
            lu = spla.splu(K)
            solve = lu.solve
        else:
            M = HL + (J.T * Wd) @ J if m else np.array(HL, copy=True)
            K = np.zeros((n + p, n + p))
            K[:n, :n] = M + reg * np.eye(n)
            if p:
                K[:n, n:] = A.T
                K[n:, :n] = A
                K[n:, n:] = -reg * np.eye(p)
            try:
                lu_piv = lu_factor(K, check_finite=False)
            except np.linalg.LinAlgError:
                break
            solve = lambda rhs: lu_solve(lu_piv, rhs, check_finite=False)  # noqa: E731

        def direction(r_c):
            rhs1 = -r_d - (J.T @ (Wd * r_i - r_c / s) if m else 0.0)
            sol = solve(np.concatenate([rhs1, -r_p]))
            dx, dy = sol[:n], sol[n:]
            dlam = Wd * (J @ dx + r_i) - r_c / s if m else np.zeros(0)
            ds = -(r_c + s * dlam) / lam if m else np.zeros(0)
            return dx, dy, dlam, ds

        if m:
            dx, dy, dlam, ds = direction(s * lam)
            a_aff = min(1.0, _max_step(s, ds), _max_step(lam, dlam))
            mu_aff = float((s + a_aff * ds) @ (lam + a_aff * dlam)) / m
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            r_c = s * lam + ds * dlam - sigma * mu
            dx, dy, dlam, ds = direction(r_c)
            alpha = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(lam, dlam)))
        else:
            dx, dy, dlam, ds = direction(np.zeros(0))
            alpha = 1.0
        if ineq.quad:
            # curved rows: linearized residuals can mislead, so refuse steps
            # that blow up the KKT merit
            merit = max(res_norm, gap)
            for _ in range(30):
                trial = _merit(prog_parts, x + alpha * dx, y + alpha * dy, s + alpha * ds,
                               lam + alpha * dlam, scale_d, scale_p)
                if trial <= 2.0 * merit:
                    break
                alpha *= 0.5
        x = x + alpha * dx
        y = y + alpha * dy
        if m:
            s = s + alpha * ds
            lam = lam + alpha * dlam

    if status != OPTIMAL and best[0] <= acceptable:
        # degenerate problems can stall just short of ``tol``; keep the best iterate
        status = OPTIMAL
    if status != OPTIMAL or not np.isfinite(res_norm):
        _, x, y, lam, res_norm = best
    value = prog.objective(x)
    if status != OPTIMAL:
        feasible, x1 = phase1(prog)
        if not feasible:
            status = INFEASIBLE
    return ConvexResult(x=x, value=value, status=status, y=y, z=lam,
                        iterations=it, kkt_residual=float(res_norm))


def _merit(parts, x, y, s, lam, scale_d, scale_p) -> float:
    P, q, A, b, ineq = parts
    J = ineq.jacobian(x)
    r_d = P @ x + q + (A.T @ y if len(b) else 0.0) + J.T @ lam
    r_p = A @ x - b if len(b) else np.zeros(0)
    r_i = ineq.values(x) + s
    res = max(np.max(np.abs(r_d), initial=0.0) / scale_d, np.max(np.abs(r_p), initial=0.0) / scale_p,
              np.max(np.abs(r_i), initial=0.0))
    return float(max(res, s @ lam))


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))

