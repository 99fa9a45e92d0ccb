"""Economic stage costs, robust optimal steady state and dissipativity checks.

A stage cost is a convex quadratic ``L(x, u) = 1/2 y'Hy + g'y + c0`` with
``y = (x, u)``. Substituting the tube feedback gives ``L_pi(x, v)``. Three
variants are exposed to the optimizer:

* ``nominal``    ``L_pi(z, v)``
* ``integral``   ``int over Omega of L_pi(z + e, v) de``
* ``worst_case`` ``max over e in Omega of L_pi(z + e, v)``

All three are represented as a pointwise maximum of quadratics sharing one
Hessian (a single piece for the first two, one piece per vertex of Omega
for the last), which is what the OCP transcription consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import AssumptionViolation, ScenarioError
from .geometry import Polytope
from .model import LinearTubeModel
from .solver import ConvexProgram, QuadBlocks, solve_convex

VARIANTS = ("nominal", "integral", "worst_case")


@dataclass
class StagePieces:
    """``ell(y) = max_j 1/2 y'Hy + g_j'y + c_j`` over ``y = (z, v)``."""

    H: np.ndarray
    g: np.ndarray
    c: np.ndarray

    def __call__(self, y) -> float:
        y = np.asarray(y, float).ravel()
        return float(0.5 * y @ self.H @ y + np.max(self.g @ y + self.c))

    def evaluate_many(self, Y) -> np.ndarray:
        Y = np.atleast_2d(Y)
        quad = 0.5 * np.sum((Y @ self.H) * Y, axis=1)
        return quad + np.max(Y @ self.g.T + self.c[None, :], axis=1)

    @property
    def pieces(self) -> int:
        return len(self.c)


@dataclass
class StageCost:
    """Quadratic economic cost with a variant selector.

    ``offset`` is subtracted from every evaluation; ``compute_ross`` sets it
    to the steady-state value so that ``ell(zs, vs) = 0``.
    """

    H: np.ndarray
    g: np.ndarray
    c0: float = 0.0
    variant: str = "nominal"
    normalize_integral: bool = False
    offset: float = 0.0
    kappa_ell: Optional[float] = None
    _pieces: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.g = np.asarray(self.g, dtype=float).ravel()
        if self.H.shape != (self.g.size, self.g.size):
            raise ScenarioError("cost H and g have inconsistent sizes")
        if np.max(np.abs(self.H - self.H.T), initial=0.0) > 1e-12:
            raise ScenarioError("cost H must be symmetric")
        if self.variant not in VARIANTS:
            raise ScenarioError(f"unknown cost variant {self.variant!r}")

    def with_variant(self, variant: str) -> "StageCost":
        return StageCost(self.H, self.g, self.c0, variant, self.normalize_integral)

    def L(self, x, u) -> float:
        y = np.concatenate([np.ravel(x), np.ravel(u)])
        return float(0.5 * y @ self.H @ y + self.g @ y + self.c0)

    def pi_quadratic(self, model: LinearTubeModel):
        """``(H_pi, g_pi, c)`` of ``L_pi(x, v) = L(x, K x + v)``."""
        n, m = model.n, model.m
        T = np.block([[np.eye(n), np.zeros((n, m))], [model.K, np.eye(m)]])
        return T.T @ self.H @ T, T.T @ self.g, float(self.c0)

    def L_pi(self, model: LinearTubeModel, x, v) -> float:
        Hp, gp, c = self.pi_quadratic(model)
        y = np.concatenate([np.ravel(x), np.ravel(v)])
        return float(0.5 * y @ Hp @ y + gp @ y + c)

    def pieces(self, model: LinearTubeModel, omega: Polytope) -> StagePieces:
        """Quadratic pieces of ``ell`` before the offset is applied."""
        key = (id(model), id(omega))
        if key in self._pieces:
            return self._pieces[key]
        Hp, gp, c = self.pi_quadratic(model)
        n = model.n
        if self.variant == "nominal":
            out = StagePieces(Hp, gp[None, :], np.array([c]))
        elif self.variant == "integral":
            vol, m1, M2 = omega.moments()
            H = vol * Hp
            g = vol * gp + Hp[:, :n] @ m1
            c_int = vol * c + gp[:n] @ m1 + 0.5 * np.sum(Hp[:n, :n] * M2)
            if self.normalize_integral:
                H, g, c_int = H / vol, g / vol, c_int / vol
            out = StagePieces(H, g[None, :], np.array([c_int]))
        else:
            E = omega.vertices()
            shift = np.hstack([E, np.zeros((len(E), model.m))])
            # L_pi(y + s) = 1/2 y'Hy + (g + H s)'y + (1/2 s'Hs + g's + c)
            g = gp[None, :] + shift @ Hp
            cs = 0.5 * np.sum((shift @ Hp) * shift, axis=1) + shift @ gp + c
            out = StagePieces(Hp, g, cs)
        self._pieces[key] = out
        return out

    def to_dict(self) -> dict:
        return {"H": self.H.tolist(), "g": self.g.tolist(), "c0": self.c0,
                "variant": self.variant, "normalize_integral": self.normalize_integral}

    @classmethod
    def from_dict(cls, data: dict) -> "StageCost":
        try:
            return cls(data["H"], data["g"], float(data.get("c0", 0.0)),
                       data.get("variant", "nominal"),
                       bool(data.get("normalize_integral", False)))
        except KeyError as exc:
            raise ScenarioError(f"cost JSON missing key {exc}") from None


def eval_stage(cost: StageCost, model: LinearTubeModel, omega: Polytope, z, v) -> float:
    """Offset-normalized stage cost ``ell(z, v)`` of the selected variant."""
    y = np.concatenate([np.ravel(z), np.ravel(v)])
    return cost.pieces(model, omega)(y) - cost.offset


def eval_real(cost: StageCost, model: LinearTubeModel, x, v) -> float:
    """``L_pi(x, v)`` shifted by the same offset as ``eval_stage``."""
    return cost.L_pi(model, x, v) - cost.offset


def lipschitz_const(cost: StageCost, model: LinearTubeModel, region: Polytope,
                    omega: Optional[Polytope] = None) -> float:
    """Lipschitz constant (Euclidean) of ``ell`` over ``region``.

    The gradient of each quadratic piece is affine, so its norm peaks at a
    vertex. For the worst-case variant the pieces are the shifted costs
    ``L_pi(z + e, v)``, evaluated on the vertices of ``region + Omega x {0}``.
    """
    n = model.n
    if cost.variant == "nominal" or omega is None:
        Hp, gp, _ = cost.pi_quadratic(model)
        V = region.vertices()
        grads = V @ Hp + gp
    else:
        pieces = cost.pieces(model, omega)
        V = region.vertices()
        grads = (V @ pieces.H)[:, None, :] + pieces.g[None, :, :]
        grads = grads.reshape(-1, V.shape[1])
    kappa = float(np.max(np.linalg.norm(grads, axis=1)))
    cost.kappa_ell = kappa
    return kappa


@dataclass
class Ross:
    zs: np.ndarray
    vs: np.ndarray
    nu: np.ndarray
    value: float

    def storage(self, z) -> float:
        return float(self.nu @ np.ravel(z))

    def to_dict(self) -> dict:
        return {"zs": self.zs.tolist(), "vs": self.vs.tolist(), "nu": self.nu.tolist(),
                "value": self.value}


def compute_ross(cost: StageCost, model: LinearTubeModel, Z_bar: Polytope,
                 omega: Polytope, interior_tol: float = 1e-6) -> Ross:
    """Robust optimal steady state of the selected variant.

    Solves ``min ell(z, v)`` s.t. ``(I - A_K) z - B v = 0`` and
    ``(z, v) in Z_bar``, stores the equality multiplier as the linear storage
    ``lambda(z) = nu'z`` and sets ``cost.offset`` to the optimal value.

    Raises:
        AssumptionViolation: infeasible, or the minimizer touches the
            boundary of ``Z_bar``.
    """
    n, m = model.n, model.m
    pieces = cost.pieces(model, omega)
    nv = n + m
    Aeq = np.hstack([np.eye(n) - model.A_K, -model.B])
    if pieces.pieces == 1:
        prog = ConvexProgram(P=pieces.H, q=pieces.g[0], A=Aeq, b=np.zeros(n),
                             G=Z_bar.A, h=Z_bar.b, const=float(pieces.c[0]))
    else:
        r = pieces.pieces
        P = np.zeros((nv + 1, nv + 1))
        q = np.zeros(nv + 1)
        q[-1] = 1.0
        C = np.hstack([pieces.g, -np.ones((r, 1))])
        qb = QuadBlocks(idx=np.arange(nv)[None, :], Q=pieces.H, C=C, d=pieces.c, r=r)
        prog = ConvexProgram(P=P, q=q, A=np.hstack([Aeq, np.zeros((n, 1))]), b=np.zeros(n),
                             G=np.hstack([Z_bar.A, np.zeros((len(Z_bar.b), 1))]), h=Z_bar.b,
                             quad=[qb])
    res = solve_convex(prog, tol=1e-11, max_iter=100)
    if not res.ok:
        raise AssumptionViolation(f"steady-state problem not solved: {res.status}")
    y = res.x[:nv]
    zs, vs = y[:n], y[n:]
    margin = Z_bar.margin(y)
    if margin <= interior_tol:
        raise AssumptionViolation(
            f"optimal steady state lies on the boundary of the tightened set (margin {margin:.3g})")
    value = pieces(y)
    cost.offset = value
    return Ross(zs=zs, vs=vs, nu=np.asarray(res.y[:n], float), value=value)


@dataclass
class DissipationReport:
    a: float
    holds: bool
    worst_point: np.ndarray
    worst_value: float
    n_points: int
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"a": self.a, "holds": self.holds,
                "worst_point": np.asarray(self.worst_point).tolist(),
                "worst_value": self.worst_value, "n_points": self.n_points}


def rotated_cost(cost: StageCost, model: LinearTubeModel, omega: Polytope, ross: Ross, Y) -> np.ndarray:
    """``s(z,v) + lambda(z) - lambda(f_pi(z,v,0))`` for each row of ``Y``."""
    Y = np.atleast_2d(Y)
    n = model.n
    ell = cost.pieces(model, omega).evaluate_many(Y) - cost.offset
    Z, V = Y[:, :n], Y[:, n:]
    nxt = Z @ model.A_K.T + V @ model.B.T
    return ell + Z @ ross.nu - nxt @ ross.nu


def _grid(region: Polytope, density: int) -> np.ndarray:
    lo, hi = region.bounding_box()
    axes = [np.linspace(l, h, density) for l, h in zip(lo, hi)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, region.dim)
    inside = np.all(mesh @ region.A.T <= region.b + 1e-12, axis=1)
    return np.vstack([mesh[inside], region.vertices()])


def check_dissipativity(cost: StageCost, model: LinearTubeModel, omega: Polytope, ross: Ross,
                        Z_bar: Polytope, grid_density: int = 21) -> DissipationReport:
    """Fit the largest ``a`` with ``r(z,v) >= a |(z,v) - (zs,vs)|^2`` on a grid.

    ``r`` is the rotated cost; ``a <= 0`` means the strict dissipativity
    assumption failed on the sampled set.
    """
    Y = _grid(Z_bar, grid_density)
    center = np.concatenate([ross.zs, ross.vs])
    r = rotated_cost(cost, model, omega, ross, Y)
    d2 = np.sum((Y - center) ** 2, axis=1)
    mask = d2 > 1e-12
    ratios = r[mask] / d2[mask]
    k = int(np.argmin(ratios))
    a = float(ratios[k])
    worst = Y[mask][k]
    return DissipationReport(a=a, holds=a > 0, worst_point=worst, worst_value=float(r[mask][k]),
                             n_points=len(Y), details={"min_r": float(np.min(r))})


def check_strong_dissipativity(cost: StageCost, model: LinearTubeModel, ross: Ross, problem,
                               a: float, sample_count: int = 200, seed: int = 0,
                               grid_density: int = 11) -> DissipationReport:
    """Sampled check of the closed-loop dissipation inequality.

    For nominal states ``z`` on a grid over the projection of the tightened
    set, the first optimal input ``v*`` is computed, successor measurements
    ``x+`` are sampled from ``{f_pi(z, v*, 0)} + Omega`` (vertices and
    uniform points), and ``z_cl = z0*(x+)`` is recovered from the tube OCP.
    The reported margin is
    ``s(z, v*) - a |(z, v*) - (zs, vs)|^2 - (lambda(z_cl) - lambda(z))``.
    """
    from .ocp import solve_ocp, solve_tube_ocp

    rng = np.random.default_rng(seed)
    n = model.n
    omega = problem.omega
    Zb = problem.z_bar
    lo, hi = Zb.bounding_box()
    axes = [np.linspace(l, h, grid_density) for l, h in zip(lo[:n], hi[:n])]
    Zs = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    Zs = np.vstack([ross.zs[None, :], Zs])
    center = np.concatenate([ross.zs, ross.vs])
    per_z = max(1, sample_count // len(Zs))
    worst, worst_pt, checked = np.inf, None, 0
    failures = []
    for z in Zs:
        sol = solve_ocp(problem, z)
        if not sol.ok:
            continue
        v = sol.v_traj[0]
        znext = model.step_nominal(z, v)
        E = omega.vertices()
        if per_z > len(E):
            E = np.vstack([E, omega.sample(rng, per_z - len(E))])
        ell = eval_stage(cost, model, omega, z, v)
        dev = np.sum((np.concatenate([z, v]) - center) ** 2)
        for e in E:
            z_cl, tube = solve_tube_ocp(problem, znext + e)
            if not tube.ok:
                failures.append((z.tolist(), (znext + e).tolist()))
                continue
            margin = ell - a * dev - (ross.storage(z_cl) - ross.storage(z))
            checked += 1
            if margin < worst:
                worst, worst_pt = margin, np.concatenate([z, v, z_cl])
    return DissipationReport(a=a, holds=bool(worst >= -1e-7 and not failures),
                             worst_point=worst_pt if worst_pt is not None else np.zeros(0),
                             worst_value=float(worst), n_points=checked,
                             details={"infeasible": failures})


def exponential_reachability_certificate(model: LinearTubeModel, ross: Ross, Z_bar: Polytope) -> dict:
    """Constructive stand-in for the reachability/controllability assumptions.

    For linear nominal dynamics, stabilizability of ``(A_K, B)`` plus an
    interior steady state is recorded as the certificate.
    """
    margin = Z_bar.margin(np.concatenate([ross.zs, ross.vs]))
    return {"stabilizable": model.is_stabilizable(), "interior_margin": margin,
            "holds": bool(model.is_stabilizable() and margin > 0)}

