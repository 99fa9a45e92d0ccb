"""Linear plant with tube feedback ``u = K x + v``.

Real dynamics ``x+ = A x + B u + w``, nominal dynamics
``z+ = (A + B K) z + B v`` and error dynamics ``e+ = (A + B K) e + w``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError, NonContractiveError, ScenarioError
from .geometry import Polytope


def _as_matrix(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise DimensionError(f"{name} must be a matrix")
    return M


@dataclass(frozen=True, eq=False)
class LinearTubeModel:
    """Matrices ``(A, B)`` and the tube gain ``K``.

    ``plant`` is an optional simulation-only hook ``plant(x, u, w) -> x+``
    used in place of the linear map when stepping the real system; no
    optimization problem ever looks at it.
    """

    A: np.ndarray
    B: np.ndarray
    K: np.ndarray
    m_steps: Optional[int] = None
    plant: Optional[Callable] = None

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        K = _as_matrix(self.K, "K")
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError("A must be square")
        if B.shape[0] != n:
            raise DimensionError("B must have as many rows as A")
        m = B.shape[1]
        if K.shape != (m, n):
            raise DimensionError(f"K must be {m}x{n}, got {K.shape}")
        for name, M in (("A", A), ("B", B), ("K", K)):
            M.flags.writeable = False
            object.__setattr__(self, name, M)
        A_K = A + B @ K
        A_K.flags.writeable = False
        object.__setattr__(self, "A_K", A_K)
        rho = float(np.max(np.abs(np.linalg.eigvals(A_K))))
        if rho >= 1.0:
            raise NonContractiveError(f"spectral radius of A+BK is {rho:.6g} >= 1")
        object.__setattr__(self, "spectral_radius", rho)
        if self.m_steps is None:
            object.__setattr__(self, "m_steps", n)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def feedback(self, x, v) -> np.ndarray:
        """``pi(x, v) = K x + v``."""
        return self.K @ np.asarray(x, float).ravel() + np.asarray(v, float).ravel()

    def step_real(self, x, v, w) -> np.ndarray:
        x = np.asarray(x, float).ravel()
        u = self.feedback(x, v)
        w = np.asarray(w, float).ravel()
        if self.plant is not None:
            return np.asarray(self.plant(x, u, w), float).ravel()
        return self.A @ x + self.B @ u + w

    def step_nominal(self, z, v) -> np.ndarray:
        return self.A_K @ np.asarray(z, float).ravel() + self.B @ np.asarray(v, float).ravel()

    def error_next(self, e, w) -> np.ndarray:
        return self.A_K @ np.asarray(e, float).ravel() + np.asarray(w, float).ravel()

    def is_stabilizable(self) -> bool:
        """PBH test on ``(A+BK, B)`` for eigenvalues on or outside the unit circle."""
        n = self.n
        for lam in np.linalg.eigvals(self.A_K):
            if abs(lam) >= 1.0:
                M = np.hstack([lam * np.eye(n) - self.A_K, self.B])
                if np.linalg.matrix_rank(M) < n:
                    return False
        return True

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "B": self.B.tolist(), "K": self.K.tolist(),
                "m_steps": int(self.m_steps)}

    @classmethod
    def from_dict(cls, data: dict) -> "LinearTubeModel":
        try:
            return cls(data["A"], data["B"], data["K"], data.get("m_steps"))
        except KeyError as exc:
            raise ScenarioError(f"model JSON missing key {exc}") from None


def build_z_pi(Z: Polytope, model: LinearTubeModel) -> Polytope:
    """Preimage of ``Z`` under ``(x, v) -> (x, K x + v)``.

    Each row ``a_x x + a_u u <= b`` becomes ``(a_x + a_u K) x + a_u v <= b``.
    """
    n = model.n
    if Z.dim != n + model.m:
        raise DimensionError(f"Z has dim {Z.dim}, expected {n + model.m}")
    a_x = Z.A[:, :n]
    a_u = Z.A[:, n:]
    A = np.hstack([a_x + a_u @ model.K, a_u])
    return Polytope(A, Z.b.copy())


@dataclass
class ConstraintData:
    """Constraint sets over ``(x, u)`` and ``w`` plus the derived sets."""

    Z: Polytope
    W: Polytope
    Z_pi: Optional[Polytope] = None
    Z_bar: Optional[Polytope] = None

    def validate(self, model: LinearTubeModel):
        if self.Z.dim != model.n + model.m:
            raise ScenarioError("Z dimension does not match (n + m)")
        if self.W.dim != model.n:
            raise ScenarioError("W dimension does not match n")
        if not np.all(self.W.b > 0):
            raise ScenarioError("W must contain the origin in its interior")
        _, r = self.Z.chebyshev()
        if r <= 0:
            raise ScenarioError("Z must have a nonempty interior")

    @classmethod
    def from_model(cls, Z: Polytope, W: Polytope, model: LinearTubeModel) -> "ConstraintData":
        data = cls(Z, W)
        data.validate(model)
        data.Z_pi = build_z_pi(Z, model)
        return data
