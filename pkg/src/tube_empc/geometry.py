"""Exact polytope arithmetic in low dimension.

Polytopes are stored in H-representation ``{x : normals @ x <= offsets}``.
Axis-aligned boxes are flagged and take closed-form fast paths. Vertex
enumeration works by intersecting facet tuples and is capped at dimension 3
for general polytopes and 8 for boxes.
"""

from __future__ import annotations

import itertools
import math
from typing import Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, Delaunay, QhullError

from .errors import DimensionError, EmptySetError, VertexCapError

TOL = 1e-9
MAX_DIM_GENERAL = 3
MAX_DIM_BOX = 8


def _lexsort_dedup(points: np.ndarray, tol: float = TOL) -> np.ndarray:
    if len(points) == 0:
        return points
    order = np.lexsort(points.T[::-1])
    points = points[order]
    kept = []
    for p in points:
        if not any(np.max(np.abs(p - q)) <= tol for q in kept):
            kept.append(p)
    return np.array(kept)


class Polytope:
    """Bounded convex polytope in H-representation.

    Args:
        normals: (k, d) array of facet normals.
        offsets: (k,) array of right-hand sides.
        vertices: optional known vertex set (skips enumeration).
        check: verify nonemptiness and boundedness by LP.

    Instances are treated as immutable; the vertex cache is filled lazily.
    """

    def __init__(self, normals, offsets, vertices=None, check: bool = True):
        A = np.atleast_2d(np.asarray(normals, dtype=float))
        b = np.atleast_1d(np.asarray(offsets, dtype=float)).ravel()
        if A.shape[0] != b.shape[0]:
            raise DimensionError(f"{A.shape[0]} normals but {b.shape[0]} offsets")
        if A.shape[1] == 0:
            raise DimensionError("polytope dimension must be positive")
        self.A = A
        self.b = b
        self.A.flags.writeable = False
        self.b.flags.writeable = False
        self.dim = A.shape[1]
        self.lo, self.hi = self._box_bounds()
        self.is_box = self.lo is not None
        self._vertices = None
        if vertices is not None:
            self._vertices = _lexsort_dedup(np.atleast_2d(np.asarray(vertices, float)))
        if self.is_box:
            if np.any(self.lo > self.hi + TOL):
                raise EmptySetError("box with lo > hi")
        elif check:
            self._check_bounded_nonempty()

    # -- construction -----------------------------------------------------

    @classmethod
    def box(cls, lo, hi) -> "Polytope":
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if lo.shape != hi.shape:
            raise DimensionError("lo and hi must have the same shape")
        d = lo.size
        eye = np.eye(d)
        return cls(np.vstack([eye, -eye]), np.concatenate([hi, -lo]))

    @classmethod
    def point(cls, x) -> "Polytope":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls.box(x, x)

    @classmethod
    def from_vertices(cls, points) -> "Polytope":
        """Convex hull of a finite point set (dimension <= 3)."""
        V = np.atleast_2d(np.asarray(points, dtype=float))
        d = V.shape[1]
        if d == 1:
            return cls.box([V.min()], [V.max()])
        if d > MAX_DIM_GENERAL:
            raise VertexCapError(f"hull in dimension {d} not supported")
        V = _lexsort_dedup(V)
        center = V.mean(axis=0)
        _, sv, Vt = np.linalg.svd(V - center)
        rank = int(np.sum(sv > 1e-10 * max(1.0, sv[0] if sv.size else 1.0)))
        if rank == d:
            try:
                hull = ConvexHull(V)
            except QhullError:
                rank = d - 1
            else:
                A = hull.equations[:, :-1]
                b = -hull.equations[:, -1]
                A, b = _merge_parallel_rows(A, b)
                return cls(A, b, vertices=V[hull.vertices], check=False)
        # lower-dimensional: equalities on the orthogonal complement plus a
        # hull inside the affine span
        basis = Vt[:rank]
        perp = Vt[rank:]
        rows = [perp, -perp]
        offs = [perp @ center, -(perp @ center)]
        if rank == 1:
            coords = (V - center) @ basis[0]
            rows += [basis[:1], -basis[:1]]
            offs += [np.array([coords.max()]) + basis[0] @ center,
                     np.array([-coords.min()]) - basis[0] @ center]
            verts = center + np.outer([coords.min(), coords.max()], basis[0])
        elif rank >= 2:
            coords = (V - center) @ basis.T
            hull = ConvexHull(coords)
            Ar = hull.equations[:, :-1] @ basis
            br = -hull.equations[:, -1] + Ar @ center
            rows.append(Ar)
            offs.append(br)
            verts = V[hull.vertices]
        else:
            verts = center[None, :]
        A = np.vstack(rows)
        b = np.concatenate(offs)
        return cls(A, b, vertices=verts, check=False)

    def _box_bounds(self):
        A = self.A
        nz = np.abs(A) > 0
        if not np.all(nz.sum(axis=1) == 1):
            return None, None
        d = self.dim
        lo = np.full(d, -np.inf)
        hi = np.full(d, np.inf)
        for a, b in zip(A, self.b):
            i = int(np.flatnonzero(a)[0])
            if a[i] > 0:
                hi[i] = min(hi[i], b / a[i])
            else:
                lo[i] = max(lo[i], b / a[i])
        if np.any(~np.isfinite(lo)) or np.any(~np.isfinite(hi)):
            return None, None
        return lo, hi

    def _check_bounded_nonempty(self):
        d = self.dim
        res = linprog(np.zeros(d), A_ub=self.A, b_ub=self.b + TOL,
                      bounds=[(None, None)] * d, method="highs")
        if res.status == 2:
            raise EmptySetError("polytope is empty")
        for i in range(d):
            for sgn in (1.0, -1.0):
                c = np.zeros(d)
                c[i] = -sgn
                r = linprog(c, A_ub=self.A, b_ub=self.b + TOL,
                            bounds=[(None, None)] * d, method="highs")
                if r.status == 3:
                    raise EmptySetError("polytope is unbounded")

    # -- queries ----------------------------------------------------------

    @property
    def normals(self) -> np.ndarray:
        return self.A

    @property
    def offsets(self) -> np.ndarray:
        return self.b

    def support(self, d) -> float:
        """max over the set of ``d @ x``."""
        d = np.asarray(d, dtype=float).ravel()
        if d.size != self.dim:
            raise DimensionError(f"direction of size {d.size} for dim {self.dim}")
        if self.is_box:
            return float(np.sum(np.where(d >= 0, d * self.hi, d * self.lo)))
        if self._vertices is not None:
            return float(np.max(self._vertices @ d))
        res = linprog(-d, A_ub=self.A, b_ub=self.b, bounds=[(None, None)] * self.dim,
                      method="highs")
        if res.status == 3:
            raise EmptySetError("unbounded support LP")
        if res.status != 0:
            raise EmptySetError(f"support LP failed: {res.message}")
        return float(-res.fun)

    def support_many(self, D) -> np.ndarray:
        """Support values for each row of ``D``."""
        D = np.atleast_2d(np.asarray(D, dtype=float))
        if self.is_box:
            return np.sum(np.where(D >= 0, D * self.hi, D * self.lo), axis=1)
        V = self.vertices() if self.dim <= MAX_DIM_GENERAL else None
        if V is not None:
            return np.max(D @ V.T, axis=1)
        return np.array([self.support(d) for d in D])

    def contains(self, x, tol: float = TOL) -> bool:
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.dim:
            raise DimensionError(f"point of size {x.size} for dim {self.dim}")
        return bool(np.all(self.A @ x <= self.b + tol))

    def margin(self, x) -> float:
        """Smallest slack ``b - A x`` (negative means outside)."""
        x = np.asarray(x, dtype=float).ravel()
        return float(np.min(self.b - self.A @ x))

    def vertices(self) -> np.ndarray:
        if self._vertices is None:
            self._vertices = self._enumerate_vertices()
        return self._vertices

    def _enumerate_vertices(self) -> np.ndarray:
        d = self.dim
        if self.is_box:
            if d > MAX_DIM_BOX:
                raise VertexCapError(f"box vertex enumeration capped at dim {MAX_DIM_BOX}")
            corners = itertools.product(*zip(self.lo, self.hi))
            return _lexsort_dedup(np.array(list(corners), dtype=float))
        if d > MAX_DIM_GENERAL:
            raise VertexCapError(f"vertex enumeration capped at dim {MAX_DIM_GENERAL}")
        A, b = self.A, self.b
        combos = np.array(list(itertools.combinations(range(len(b)), d)))
        M = A[combos]
        rhs = b[combos]
        dets = np.linalg.det(M)
        ok = np.abs(dets) > 1e-12
        pts = np.linalg.solve(M[ok], rhs[ok][..., None])[..., 0]
        feas = np.all(pts @ A.T <= b + TOL, axis=1)
        pts = pts[feas]
        if len(pts) == 0:
            raise EmptySetError("no vertices found")
        return _lexsort_dedup(pts)

    def chebyshev(self):
        """Center and radius of the largest inscribed Euclidean ball."""
        d = self.dim
        norms = np.linalg.norm(self.A, axis=1)
        c = np.zeros(d + 1)
        c[-1] = -1.0
        A_ub = np.hstack([self.A, norms[:, None]])
        res = linprog(c, A_ub=A_ub, b_ub=self.b,
                      bounds=[(None, None)] * d + [(0, None)], method="highs")
        if res.status != 0:
            return np.zeros(d), -np.inf
        return res.x[:d], float(res.x[-1])

    def bounding_box(self):
        eye = np.eye(self.dim)
        hi = self.support_many(eye)
        lo = -self.support_many(-eye)
        return lo, hi

    def max_norm(self, ord=2) -> float:
        """Largest norm of a point in the set (attained at a vertex)."""
        if self.dim <= MAX_DIM_GENERAL or self.is_box:
            return float(np.max(np.linalg.norm(self.vertices(), ord=ord, axis=1)))
        lo, hi = self.bounding_box()
        return float(np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi)), ord=ord))

    # -- transforms -------------------------------------------------------

    def linear_map(self, M) -> "Polytope":
        """Image ``{M x : x in P}`` for a square matrix ``M``."""
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if M.shape != (self.dim, self.dim):
            raise DimensionError("linear_map expects a square matrix of the set dimension")
        if self.is_box and np.count_nonzero(M - np.diag(np.diag(M))) == 0:
            a = self.lo * np.diag(M)
            c = self.hi * np.diag(M)
            return Polytope.box(np.minimum(a, c), np.maximum(a, c))
        return Polytope.from_vertices(self.vertices() @ M.T)

    def scale(self, c: float) -> "Polytope":
        if c < 0:
            raise ValueError("scale factor must be nonnegative")
        if c == 0:
            return Polytope.point(np.zeros(self.dim))
        verts = None if self._vertices is None else self._vertices * c
        return Polytope(self.A, self.b * c, vertices=verts, check=False)

    def translate(self, t) -> "Polytope":
        t = np.asarray(t, dtype=float).ravel()
        verts = None if self._vertices is None else self._vertices + t
        return Polytope(self.A, self.b + self.A @ t, vertices=verts, check=False)

    # -- sampling ---------------------------------------------------------

    def sample(self, rng: np.random.Generator, n: int, burn: int = 20) -> np.ndarray:
        """``n`` approximately uniform points (exact for boxes).

        General polytopes use hit-and-run started at the Chebyshev center.
        """
        if self.is_box:
            return self.lo + (self.hi - self.lo) * rng.random((n, self.dim))
        x, r = self.chebyshev()
        if r <= 0:
            V = self.vertices()
            return V[rng.integers(len(V), size=n)]
        out = np.empty((n, self.dim))
        total = burn + n
        for k in range(total):
            d = rng.standard_normal(self.dim)
            d /= np.linalg.norm(d)
            Ad = self.A @ d
            slack = self.b - self.A @ x
            with np.errstate(divide="ignore"):
                ratios = slack / Ad
            tmax = np.min(ratios[Ad > 1e-14]) if np.any(Ad > 1e-14) else 0.0
            tmin = np.max(ratios[Ad < -1e-14]) if np.any(Ad < -1e-14) else 0.0
            x = x + (tmin + (tmax - tmin) * rng.random()) * d
            if k >= burn:
                out[k - burn] = x
        return out

    # -- moments ----------------------------------------------------------

    def moments(self):
        """Volume, first moment and second-moment matrix of the set.

        Returns ``(vol, m1, M2)`` with ``m1 = int x dx`` and
        ``M2 = int x x^T dx``.
        """
        d = self.dim
        if self.is_box:
            w = self.hi - self.lo
            vol = float(np.prod(w))
            mean = 0.5 * (self.lo + self.hi)
            sq = (self.hi ** 3 - self.lo ** 3) / (3.0 * np.where(w > 0, w, 1.0))
            sq = np.where(w > 0, sq, self.lo ** 2)
            E2 = np.outer(mean, mean)
            E2[np.diag_indices(d)] = sq
            return vol, vol * mean, vol * E2
        V = self.vertices()
        tri = Delaunay(V)
        vol = 0.0
        m1 = np.zeros(d)
        M2 = np.zeros((d, d))
        for simplex in tri.simplices:
            P = V[simplex]
            vs = abs(np.linalg.det(P[1:] - P[0])) / math.factorial(d)
            s = P.sum(axis=0)
            vol += vs
            m1 += vs * s / (d + 1)
            M2 += vs / ((d + 1) * (d + 2)) * (P.T @ P + np.outer(s, s))
        return vol, m1, M2

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        if self.is_box and len(self.b) == 2 * self.dim:
            return {"box": {"lo": self.lo.tolist(), "hi": self.hi.tolist()}}
        return {"normals": self.A.tolist(), "offsets": self.b.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Polytope":
        if "box" in data:
            return cls.box(data["box"]["lo"], data["box"]["hi"])
        return cls(data["normals"], data["offsets"])

    def __repr__(self):
        if self.is_box:
            return f"Polytope.box(lo={self.lo.tolist()}, hi={self.hi.tolist()})"
        return f"Polytope(dim={self.dim}, facets={len(self.b)})"


def _merge_parallel_rows(A, b, tol=TOL):
    """Drop duplicate facets (qhull splits coplanar facets in 3-D)."""
    keep_A, keep_b = [], []
    for a, c in zip(A, b):
        dup = False
        for i, (ka, kc) in enumerate(zip(keep_A, keep_b)):
            if np.max(np.abs(a - ka)) <= 1e-9 and abs(c - kc) <= 1e-7:
                dup = True
                break
        if not dup:
            keep_A.append(a)
            keep_b.append(c)
    return np.array(keep_A), np.array(keep_b)


def _check_dims(P: Polytope, Q: Polytope):
    if P.dim != Q.dim:
        raise DimensionError(f"dimension mismatch: {P.dim} vs {Q.dim}")


def minkowski_sum(P: Polytope, Q: Polytope) -> Polytope:
    """Exact Minkowski sum ``P + Q``."""
    _check_dims(P, Q)
    if P.is_box and Q.is_box:
        return Polytope.box(P.lo + Q.lo, P.hi + Q.hi)
    if P.dim > MAX_DIM_GENERAL:
        raise VertexCapError("Minkowski sum of non-box polytopes capped at dim 3")
    VP, VQ = P.vertices(), Q.vertices()
    sums = (VP[:, None, :] + VQ[None, :, :]).reshape(-1, P.dim)
    return Polytope.from_vertices(sums)


def pontryagin_diff(P: Polytope, Q: Polytope) -> Polytope:
    """Pontryagin difference ``{x : x + Q subset of P}`` (erosion)."""
    _check_dims(P, Q)
    b = P.b - Q.support_many(P.A)
    if P.is_box and Q.is_box:
        lo = P.lo - Q.lo
        hi = P.hi - Q.hi
        if np.any(lo > hi + TOL):
            raise EmptySetError("Pontryagin difference is empty")
        return Polytope.box(lo, np.maximum(hi, lo))
    return Polytope(P.A, b)


def support(P: Polytope, d) -> float:
    return P.support(d)


def contains(P: Polytope, x, tol: float = TOL) -> bool:
    return P.contains(x, tol)


def vertices(P: Polytope) -> np.ndarray:
    return P.vertices()


def hausdorff_by_support(P: Polytope, Q: Polytope, directions: Sequence | None = None,
                         n_dirs: int = 360) -> float:
    """Hausdorff distance estimate ``max_d |h_P(d) - h_Q(d)|`` over unit directions.

    Exact in 1-D; in 2-D the default uses ``n_dirs`` evenly spaced angles
    plus every facet normal of both sets.
    """
    _check_dims(P, Q)
    if directions is None:
        if P.dim == 1:
            directions = np.array([[1.0], [-1.0]])
        elif P.dim == 2:
            th = np.linspace(0, 2 * np.pi, n_dirs, endpoint=False)
            directions = np.column_stack([np.cos(th), np.sin(th)])
        else:
            rng = np.random.default_rng(0)
            directions = rng.standard_normal((n_dirs, P.dim))
        normals = np.vstack([P.A, Q.A])
        directions = np.vstack([directions, normals])
    D = np.atleast_2d(np.asarray(directions, float))
    D = D / np.linalg.norm(D, axis=1, keepdims=True)
    return float(np.max(np.abs(P.support_many(D) - Q.support_many(D))))
