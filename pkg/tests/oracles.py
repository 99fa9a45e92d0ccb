"""Independent reference computations used by the tests."""

import itertools

import numpy as np


def active_set_qp(P, q, G, h):
    """Exhaustive active-set enumeration for ``min 1/2 x'Px + q'x, Gx <= h``.

    Solves the KKT system for every subset of rows of size <= n and keeps
    the best primal-dual feasible point.
    """
    n = len(q)
    best_x, best_val = None, np.inf
    for k in range(0, n + 1):
        for S in itertools.combinations(range(len(h)), k):
            S = list(S)
            GS = G[S]
            K = np.block([[P, GS.T], [GS, np.zeros((k, k))]])
            rhs = np.concatenate([-q, h[S]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            x, lam = sol[:n], sol[n:]
            if np.any(lam < -1e-10) or np.any(G @ x > h + 1e-10):
                continue
            val = 0.5 * x @ P @ x + q @ x
            if val < best_val:
                best_x, best_val = x, val
    return best_x, best_val


def dp_two_step_scalar(z0, grid, stage, feasible, zs, vs_of):
    """Tabular DP for a scalar two-step problem ending at ``zs``.

    ``stage(z, v)`` is the stage cost, ``feasible(z, v)`` the path
    constraint, and ``vs_of(z)`` the unique input steering ``z`` to ``zs``.
    The first-step successor ranges over ``grid`` (the tabulated states).
    """
    V1 = np.array([stage(z1, vs_of(z1)) if feasible(z1, vs_of(z1)) else np.inf for z1 in grid])
    best = np.inf
    for z1, cost_to_go in zip(grid, V1):
        v0 = z1 - 0.5 * z0
        if not feasible(z0, v0):
            continue
        best = min(best, stage(z0, v0) + cost_to_go)
    return best


def brute_force_cardinality(z_traj, v_traj, zs, vs, eps):
    count = 0
    for z, v in zip(z_traj[:-1], v_traj):
        d = max(np.max(np.abs(np.asarray(z) - zs)), np.max(np.abs(np.asarray(v) - vs)))
        if d >= eps:
            count += 1
    return count
