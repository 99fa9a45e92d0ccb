"""Robust positively invariant sets for the linear error dynamics.

``min_rpi`` builds an outer approximation of the minimal RPI set of
``e+ = A_K e + w`` from the truncated Minkowski series
``F_s = W + A_K W + ... + A_K^{s-1} W`` scaled by ``1 / (1 - alpha)``, where
``A_K^s W`` is contained in ``alpha W``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConstraintQualificationError, NonContractiveError, ScenarioError
from .geometry import MAX_DIM_GENERAL, TOL, Polytope, minkowski_sum
from .model import ConstraintData, LinearTubeModel

log = logging.getLogger(__name__)

MAX_ITER = 10_000


def _alpha(Ms: np.ndarray, W: Polytope) -> float:
    # smallest alpha with M^s W inside alpha W: max_j h_W(M^sT f_j) / g_j
    return float(np.max(W.support_many(W.A @ Ms) / W.b))


def min_rpi(A_K, W: Polytope, tol: float = 1e-6) -> Polytope:
    """Outer approximation of the minimal RPI set.

    Args:
        A_K: Schur-stable error matrix ``A + B K``.
        W: disturbance polytope containing the origin in its interior.
        tol: bound on the Hausdorff distance to the minimal RPI set.

    Returns:
        Polytope ``Omega`` with ``A_K Omega + W`` contained in ``Omega``.
    """
    A_K = np.atleast_2d(np.asarray(A_K, dtype=float))
    n = A_K.shape[0]
    if W.dim != n:
        raise ScenarioError("W dimension does not match A_K")
    rho = float(np.max(np.abs(np.linalg.eigvals(A_K)))) if n else 0.0
    if rho >= 1.0:
        raise NonContractiveError(f"spectral radius {rho:.6g} >= 1")
    if not np.all(W.b > 0):
        raise ScenarioError("W must contain the origin in its interior")
    if n > MAX_DIM_GENERAL and not W.is_box:
        raise ScenarioError("min_rpi above dimension 3 needs a box W")

    use_box_outer = n > MAX_DIM_GENERAL
    F = W
    if use_box_outer:
        hi = W.support_many(np.eye(n))
        lo = -W.support_many(-np.eye(n))
    Ms = np.eye(n)
    for s in range(1, MAX_ITER + 1):
        Ms = A_K @ Ms
        alpha = _alpha(Ms, W)
        if use_box_outer:
            radius = float(np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi))))
        else:
            radius = F.max_norm()
        if alpha < 1.0 and alpha / (1.0 - alpha) * radius <= tol:
            log.debug("min_rpi converged at s=%d alpha=%.3g", s, alpha)
            if use_box_outer:
                return Polytope.box(lo / (1 - alpha), hi / (1 - alpha))
            return F.scale(1.0 / (1.0 - alpha))
        term = W.linear_map(Ms) if not use_box_outer else None
        if use_box_outer:
            eye = np.eye(n)
            hi = hi + W.support_many(eye @ Ms)
            lo = lo - W.support_many(-eye @ Ms)
        else:
            F = minkowski_sum(F, term)
    raise NonContractiveError(f"min_rpi did not converge in {MAX_ITER} iterations")


def rpi_certificate(A_K, Omega: Polytope, W: Polytope) -> np.ndarray:
    """Per-facet slack ``h_Omega(a_i) - h_{A_K Omega + W}(a_i)``.

    All entries nonnegative (to ``TOL``) certifies robust positive invariance.
    """
    A_K = np.atleast_2d(np.asarray(A_K, dtype=float))
    lhs = Omega.support_many(Omega.A @ A_K) + W.support_many(Omega.A)
    return Omega.support_many(Omega.A) - lhs


@dataclass
class VerificationReport:
    worst_margin: float
    holds: bool
    n_checked: int
    worst_pair: tuple = ()
    certificate_margin: float = float("nan")
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "worst_margin": self.worst_margin,
            "holds": self.holds,
            "n_checked": self.n_checked,
            "worst_pair": [np.asarray(p).tolist() for p in self.worst_pair],
            "certificate_margin": self.certificate_margin,
        }


def verify_rci(model: LinearTubeModel, Omega: Polytope, constraints: ConstraintData,
               n_samples: int = 10_000, seed: int = 0) -> VerificationReport:
    """Sampled check of ``A_K e + w in Omega`` for ``e in Omega``, ``w in W``.

    Samples are all vertex pairs plus uniform pairs up to ``n_samples``.
    Violations are reported through a negative ``worst_margin``.
    """
    W = constraints.W
    rng = np.random.default_rng(seed)
    VE, VW = Omega.vertices(), W.vertices()
    E = [np.repeat(VE, len(VW), axis=0)]
    Wd = [np.tile(VW, (len(VE), 1))]
    n_rand = max(0, n_samples - len(VE) * len(VW))
    if n_rand:
        E.append(Omega.sample(rng, n_rand))
        Wd.append(W.sample(rng, n_rand))
    E = np.vstack(E)
    Wd = np.vstack(Wd)
    nxt = E @ model.A_K.T + Wd
    margins = np.min(Omega.b[None, :] - nxt @ Omega.A.T, axis=1)
    k = int(np.argmin(margins))
    worst = float(margins[k])
    cert = float(np.min(rpi_certificate(model.A_K, Omega, W)))
    return VerificationReport(
        worst_margin=worst,
        holds=worst >= -TOL,
        n_checked=len(E),
        worst_pair=(E[k], Wd[k]),
        certificate_margin=cert,
    )


def tighten(Z_pi: Polytope, Omega: Polytope) -> Polytope:
    """Erode ``Z_pi`` (over ``(x, v)``) by ``Omega x {0}``.

    Raises:
        ConstraintQualificationError: the result is empty or has no interior.
    """
    n = Omega.dim
    a_x = Z_pi.A[:, :n]
    shrink = np.where(np.any(a_x != 0, axis=1), Omega.support_many(a_x), 0.0)
    b = Z_pi.b - shrink
    try:
        Z_bar = Polytope(Z_pi.A, b)
    except Exception as exc:
        raise ConstraintQualificationError(f"tightened set is empty: {exc}") from None
    _, r = Z_bar.chebyshev()
    if not r > TOL:
        raise ConstraintQualificationError("tightened set has an empty interior")
    return Z_bar
