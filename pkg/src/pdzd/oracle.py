"""White-box reference solvers used to locate optima of test plants.

``solve_qp`` verifies an SLSQP-guessed active set of a small convex QP exactly and
falls back to enumerating active sets; ``solve_linear_constrained``
handles smooth convex objectives over linear constraints (SLSQP start, then an
active-set Newton polish so KKT residuals reach round-off level).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.optimize import minimize

from .sets import Box, CappedOrthant, Halfspaces, NonnegativeOrthant, Product, ProjectableSet

__all__ = ["Optimum", "InfeasibleError", "polyhedron_rows", "solve_qp", "solve_linear_constrained"]


class InfeasibleError(ValueError):
    pass


@dataclass
class Optimum:
    x: np.ndarray
    lam: np.ndarray
    cost: float


def polyhedron_rows(s: ProjectableSet) -> tuple[np.ndarray, np.ndarray]:
    """Write a polyhedral set as ``G x <= h`` (finite rows only)."""
    n = s.dim
    if isinstance(s, Box):
        rows, rhs = [], []
        for i in range(n):
            if np.isfinite(s.lower[i]):
                e = np.zeros(n)
                e[i] = -1.0
                rows.append(e)
                rhs.append(-s.lower[i])
            if np.isfinite(s.upper[i]):
                e = np.zeros(n)
                e[i] = 1.0
                rows.append(e)
                rhs.append(s.upper[i])
        return np.array(rows).reshape(-1, n), np.array(rhs, dtype=float)
    if isinstance(s, NonnegativeOrthant):
        return -np.eye(n), np.zeros(n)
    if isinstance(s, CappedOrthant):
        return np.vstack([-np.eye(n), np.eye(n)]), np.concatenate([np.zeros(n), np.full(n, s.cap)])
    if isinstance(s, Halfspaces):
        return s.rows.copy(), s.offsets.copy()
    if isinstance(s, Product):
        blocks = [polyhedron_rows(f) for f in s.factors]
        G = np.zeros((sum(b[0].shape[0] for b in blocks), n))
        r = 0
        for (Gi, _), sl in zip(blocks, s.slices):
            G[r : r + Gi.shape[0], sl] = Gi
            r += Gi.shape[0]
        return G, np.concatenate([b[1] for b in blocks]) if blocks else np.zeros(0)
    raise TypeError(f"{type(s).__name__} is not polyhedral")


def _opposite(G: np.ndarray, i: int, j: int) -> bool:
    return np.allclose(G[i], -G[j])


def _kkt_solve(Q, c, Gs, hs):
    n, k = Q.shape[0], Gs.shape[0]
    K = np.zeros((n + k, n + k))
    K[:n, :n] = Q
    K[:n, n:] = Gs.T
    K[n:, :n] = Gs
    rhs = np.concatenate([-c, hs])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    if np.linalg.norm(K @ sol - rhs) > 1e-9 * (1 + np.linalg.norm(rhs)):
        return None
    return sol[:n], sol[n:]


def solve_qp(Q, c, A, b, primal_set: ProjectableSet | None = None, tol: float = 1e-9) -> Optimum:
    """Minimize ``0.5 x'Qx + c'x`` s.t. ``A x <= b`` and ``x`` in a polyhedral set.

    An active set guessed from an SLSQP solve is tried first; if its KKT point
    fails the exact feasibility checks, active sets are enumerated in order of
    increasing size. The first set whose equality-constrained KKT point is
    primal and dual feasible is returned; for a convex QP that point is
    optimal. ``lam`` holds the multipliers of the ``A x <= b`` rows.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    n = Q.shape[0]
    c = np.asarray(c, dtype=float).reshape(n)
    A = np.asarray(A, dtype=float).reshape(-1, n)
    b = np.asarray(b, dtype=float).reshape(-1)
    m = A.shape[0]
    if primal_set is not None:
        Gs, hs = polyhedron_rows(primal_set)
        G = np.vstack([A, Gs])
        h = np.concatenate([b, hs])
    else:
        G, h = A, b
    rows = G.shape[0]
    scale = 1.0 + np.abs(h)

    def attempt(S):
        sol = _kkt_solve(Q, c, G[list(S)], h[list(S)])
        if sol is None:
            return None
        x, nu = sol
        if np.any(nu < -tol) or np.any(G @ x - h > tol * scale):
            return None
        lam_all = np.zeros(rows)
        lam_all[list(S)] = np.maximum(nu, 0.0)
        return Optimum(x, lam_all[:m], float(0.5 * x @ Q @ x + c @ x))

    guess = _guess_active(Q, c, G, h)
    if guess is not None and len(guess) <= n:
        opt = attempt(guess)
        if opt is not None:
            return opt
    for size in range(0, min(n, rows) + 1):
        for S in combinations(range(rows), size):
            if any(_opposite(G, i, j) for i, j in combinations(S, 2)):
                continue
            opt = attempt(S)
            if opt is not None:
                return opt
    raise InfeasibleError("no KKT point found: QP infeasible or unbounded")


def _guess_active(Q, c, G, h) -> tuple | None:
    if G.shape[0] == 0:
        return ()
    x0 = np.zeros(Q.shape[0])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = minimize(lambda x: 0.5 * x @ Q @ x + c @ x, x0, jac=lambda x: Q @ x + c, method="SLSQP",
                       constraints=[{"type": "ineq", "fun": lambda x: h - G @ x, "jac": lambda x: -G}],
                       options={"ftol": 1e-12, "maxiter": 200})
    if not np.all(np.isfinite(res.x)):
        return None
    return tuple(int(i) for i in np.flatnonzero(G @ res.x - h > -1e-6 * (1 + np.abs(h))))


def solve_linear_constrained(f, grad, hess, A, b, primal_set: ProjectableSet, x0=None, max_polish: int = 50) -> Optimum:
    """Minimize a smooth convex ``f`` s.t. ``A x <= b`` over a polyhedral set."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    n = primal_set.dim
    A = A.reshape(-1, n)
    m = A.shape[0]
    Gs, hs = polyhedron_rows(primal_set)
    G = np.vstack([A, Gs])
    h = np.concatenate([b, hs])
    if x0 is None:
        x0 = primal_set.project(np.zeros(n))
    cons = [{"type": "ineq", "fun": lambda x: h - G @ x, "jac": lambda x: -G}]
    res = minimize(f, x0, jac=grad, constraints=cons, method="SLSQP", options={"ftol": 1e-15, "maxiter": 1000})
    x = res.x
    if np.max(G @ x - h, initial=-np.inf) > 1e-6:
        raise InfeasibleError("no feasible point found")
    active = list(np.flatnonzero(G @ x - h > -1e-7 * (1 + np.abs(h))))
    nu = np.zeros(0)
    for _ in range(max_polish):
        Ga, ha = G[active], h[active]
        for _newton in range(30):
            K = np.zeros((n + len(active), n + len(active)))
            K[:n, :n] = hess(x)
            K[:n, n:] = Ga.T
            K[n:, :n] = Ga
            rhs = np.concatenate([-grad(x) - Ga.T @ np.zeros(len(active)), ha - Ga @ x])
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
            dx, nu = sol[:n], sol[n:]
            x = x + dx
            if np.linalg.norm(dx) < 1e-14 * (1 + np.linalg.norm(x)):
                break
        viol = G @ x - h
        if nu.size and np.min(nu) < -1e-10:
            active.pop(int(np.argmin(nu)))
            continue
        worst = int(np.argmax(viol))
        if viol[worst] > 1e-12 * (1 + abs(h[worst])) and worst not in active:
            active.append(worst)
            continue
        break
    lam_all = np.zeros(G.shape[0])
    lam_all[active] = np.maximum(nu, 0.0)
    return Optimum(x, lam_all[:m], float(f(x)))
