"""Convex feasible regions with point projection, tangent-cone projection and shrinking.

Every dynamic in the package touches its feasible region through three
operations: Euclidean projection of a point, projection of a direction onto
the tangent cone at a point of the set, and inward shrinking so that a probed
input ``x + eps_a * d`` never leaves the original region.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

__all__ = [
    "Box",
    "Ball",
    "Halfspaces",
    "NonnegativeOrthant",
    "CappedOrthant",
    "Product",
    "ProjectableSet",
    "ProjectionError",
    "NotInSetError",
    "EmptySetError",
    "TAU_MEM",
    "ACTIVE_TOL",
    "project_point",
    "project_tangent_cone",
    "shrink",
    "contains",
]

TAU_MEM = 1e-9
ACTIVE_TOL = 1e-9

DYKSTRA_MAX_SWEEPS = 10_000
DYKSTRA_TOL = 1e-10
EXACT_ROWS = 3


class ProjectionError(RuntimeError):
    """Iterative projection did not converge."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class NotInSetError(ValueError):
    pass


class EmptySetError(ValueError):
    pass


def _vec(p) -> np.ndarray:
    return np.asarray(p, dtype=float).reshape(-1)


class ProjectableSet:
    """Base class; subclasses are immutable dataclasses."""

    dim: int

    def project(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def tangent_project(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def shrink(self, eps_a: float) -> "ProjectableSet":
        raise NotImplementedError

    def distance(self, p) -> float:
        p = self._check(p)
        return float(np.linalg.norm(p - self.project(p)))

    def contains(self, p, tol: float = 0.0) -> bool:
        return self.distance(p) <= tol

    def _check(self, p) -> np.ndarray:
        p = _vec(p)
        if p.shape[0] != self.dim:
            raise ValueError(f"dimension mismatch: point has {p.shape[0]} entries, set has {self.dim}")
        return p

    def _check_member(self, x, v) -> tuple[np.ndarray, np.ndarray]:
        x = self._check(x)
        v = self._check(v)
        d = self.distance(x)
        if d > TAU_MEM:
            raise NotInSetError(f"point lies {d:.3e} outside the set (tolerance {TAU_MEM:g})")
        return x, v


@dataclass(frozen=True, eq=False)
class Box(ProjectableSet):
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _vec(self.lower)
        hi = _vec(self.upper)
        if lo.shape != hi.shape:
            raise ValueError("box bounds must have equal length")
        if np.any(lo > hi):
            raise EmptySetError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def uniform(cls, n: int, lower: float, upper: float) -> "Box":
        return cls(np.full(n, float(lower)), np.full(n, float(upper)))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def project(self, p):
        return np.minimum(np.maximum(p, self.lower), self.upper)

    def tangent_project(self, x, v):
        x, v = self._check_member(x, v)
        out = v.copy()
        at_lo = x <= self.lower + ACTIVE_TOL
        at_hi = x >= self.upper - ACTIVE_TOL
        out[at_lo & (out < 0)] = 0.0
        out[at_hi & (out > 0)] = 0.0
        return out

    def shrink(self, eps_a):
        if eps_a == 0:
            return self
        lo = self.lower + eps_a
        hi = self.upper - eps_a
        if np.any(lo > hi):
            raise EmptySetError(f"shrinking the box by {eps_a} leaves it empty")
        return Box(lo, hi)


@dataclass(frozen=True, eq=False)
class Ball(ProjectableSet):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center))
        if self.radius < 0:
            raise EmptySetError("ball radius must be nonnegative")

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def project(self, p):
        d = p - self.center
        r = np.linalg.norm(d)
        if r <= self.radius:
            return np.array(p, dtype=float)
        return self.center + d * (self.radius / r)

    def tangent_project(self, x, v):
        x, v = self._check_member(x, v)
        if self.radius == 0:
            return np.zeros_like(v)
        d = x - self.center
        r = np.linalg.norm(d)
        if r < self.radius - ACTIVE_TOL:
            return v.copy()
        u = d / r
        radial = float(u @ v)
        if radial <= 0:
            return v.copy()
        return v - radial * u

    def shrink(self, eps_a):
        if eps_a == 0:
            return self
        r = self.radius - eps_a
        if r < 0:
            raise EmptySetError(f"shrinking the ball by {eps_a} leaves it empty")
        return Ball(self.center, r)


def _project_polyhedron(A: np.ndarray, b: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Project ``p`` onto ``{x : A x <= b}``."""
    if A.shape[0] == 0 or np.all(A @ p <= b):
        return np.array(p, dtype=float)
    if A.shape[0] <= EXACT_ROWS:
        return _project_polyhedron_exact(A, b, p)
    return _project_polyhedron_dykstra(A, b, p)


def _project_polyhedron_exact(A, b, p):
    # Enumerate active sets by size; the first KKT point found is the projection.
    k = A.shape[0]
    for size in range(1, k + 1):
        for rows in combinations(range(k), size):
            As = A[list(rows)]
            bs = b[list(rows)]
            nu = np.linalg.pinv(As @ As.T) @ (As @ p - bs)
            if np.any(nu < -1e-12):
                continue
            x = p - As.T @ nu
            if np.all(A @ x <= b + 1e-11 * (1 + np.abs(b))):
                return x
    raise ProjectionError("active-set enumeration found no KKT point", float("nan"))


def _project_polyhedron_dykstra(A, b, p):
    k = A.shape[0]
    norms2 = np.einsum("ij,ij->i", A, A)
    x = np.array(p, dtype=float)
    incr = np.zeros((k, x.shape[0]))
    for _ in range(DYKSTRA_MAX_SWEEPS):
        x_prev = x.copy()
        for i in range(k):
            y = x + incr[i]
            s = A[i] @ y - b[i]
            x = y - (s / norms2[i]) * A[i] if s > 0 else y
            incr[i] = y - x
        if np.linalg.norm(x - x_prev) <= DYKSTRA_TOL and np.max(A @ x - b) <= DYKSTRA_TOL:
            return x
    raise ProjectionError("Dykstra projection did not converge", float(np.max(A @ x - b)))


@dataclass(frozen=True, eq=False)
class Halfspaces(ProjectableSet):
    """Intersection ``{x : a_k . x <= b_k}``."""

    rows: np.ndarray
    offsets: np.ndarray
    check_feasible: bool = field(default=True, repr=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.rows, dtype=float))
        b = _vec(self.offsets)
        if A.shape[0] != b.shape[0]:
            raise ValueError("one offset per halfspace row is required")
        if np.any(np.linalg.norm(A, axis=1) == 0):
            raise ValueError("halfspace rows must be nonzero")
        object.__setattr__(self, "rows", A)
        object.__setattr__(self, "offsets", b)
        if self.check_feasible and not _polyhedron_nonempty(A, b):
            raise EmptySetError("halfspace intersection is empty")

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def project(self, p):
        return _project_polyhedron(self.rows, self.offsets, p)

    def tangent_project(self, x, v):
        x, v = self._check_member(x, v)
        active = self.rows @ x >= self.offsets - ACTIVE_TOL * (1 + np.abs(self.offsets))
        if not np.any(active):
            return v.copy()
        A = self.rows[active]
        return _project_polyhedron(A, np.zeros(A.shape[0]), v)

    def shrink(self, eps_a):
        if eps_a == 0:
            return self
        b = self.offsets - eps_a * np.linalg.norm(self.rows, axis=1)
        if not _polyhedron_nonempty(self.rows, b):
            raise EmptySetError(f"shrinking the halfspaces by {eps_a} leaves them empty")
        return Halfspaces(self.rows, b, check_feasible=False)


def _polyhedron_nonempty(A: np.ndarray, b: np.ndarray) -> bool:
    res = linprog(np.zeros(A.shape[1]), A_ub=A, b_ub=b, bounds=[(None, None)] * A.shape[1], method="highs")
    return res.status == 0


@dataclass(frozen=True, eq=False)
class NonnegativeOrthant(ProjectableSet):
    n: int

    @property
    def dim(self) -> int:
        return self.n

    def project(self, p):
        return np.maximum(p, 0.0)

    def tangent_project(self, x, v):
        x, v = self._check_member(x, v)
        out = v.copy()
        out[(x <= ACTIVE_TOL) & (out < 0)] = 0.0
        return out

    def shrink(self, eps_a):
        return self


@dataclass(frozen=True, eq=False)
class CappedOrthant(ProjectableSet):
    """The box ``[0, cap]^n``, used as a compact dual domain."""

    n: int
    cap: float = 1e3

    def __post_init__(self):
        if not self.cap > 0:
            raise ValueError("cap must be positive")

    @property
    def dim(self) -> int:
        return self.n

    def project(self, p):
        return np.minimum(np.maximum(p, 0.0), self.cap)

    def tangent_project(self, x, v):
        x, v = self._check_member(x, v)
        out = v.copy()
        out[(x <= ACTIVE_TOL) & (out < 0)] = 0.0
        out[(x >= self.cap - ACTIVE_TOL) & (out > 0)] = 0.0
        return out

    def shrink(self, eps_a):
        return self


@dataclass(frozen=True, eq=False)
class Product(ProjectableSet):
    factors: tuple

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        bounds = np.cumsum([0] + [f.dim for f in self.factors])
        object.__setattr__(self, "_slices", [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])])

    @property
    def dim(self) -> int:
        return sum(f.dim for f in self.factors)

    @property
    def slices(self) -> list[slice]:
        return self._slices

    def project(self, p):
        return np.concatenate([f.project(p[s]) for f, s in zip(self.factors, self._slices)])

    def tangent_project(self, x, v):
        x, v = self._check_member(x, v)
        return np.concatenate([f.tangent_project(x[s], v[s]) for f, s in zip(self.factors, self._slices)])

    def shrink(self, eps_a):
        if eps_a == 0:
            return self
        return Product(tuple(f.shrink(eps_a) for f in self.factors))


def project_point(s: ProjectableSet, p: Sequence[float]) -> np.ndarray:
    """Euclidean projection of ``p`` onto ``s``."""
    return s.project(s._check(p))


def project_tangent_cone(s: ProjectableSet, x: Sequence[float], v: Sequence[float]) -> np.ndarray:
    """Projection of direction ``v`` onto the tangent cone of ``s`` at ``x``.

    Equals ``lim_{t->0+} (project_point(s, x + t v) - x) / t``. Raises
    :class:`NotInSetError` when ``x`` is farther than ``TAU_MEM`` from ``s``.
    """
    return s.tangent_project(x, v)


def shrink(s: ProjectableSet, eps_a: float) -> ProjectableSet:
    """Inner set whose ``eps_a``-neighbourhood stays inside ``s``.

    Dual domains (orthants) are returned unchanged since they are never probed.
    """
    if eps_a < 0:
        raise ValueError("eps_a must be nonnegative")
    return s.shrink(eps_a)


def contains(s: ProjectableSet, p: Sequence[float], tol: float = 0.0) -> bool:
    return s.contains(p, tol)
