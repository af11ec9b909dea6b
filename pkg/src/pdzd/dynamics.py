"""Right-hand sides of the projected primal-dual dynamics family.

Four vector fields are provided, selected by name:

``ppdgd``
    continuous projected primal-dual gradient flow (white-box gradients),
``ppdzd``
    the same flow driven by zeroth-order feedback through the filters ``xi``
    (gradient estimate) and ``mu`` (constraint estimate),
``dppdgd`` / ``dppdzd``
    discontinuous counterparts projecting the flow onto tangent cones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .probing import ProbingPlan, periodic_average, probe_vector, wave
from .sets import NonnegativeOrthant, ProjectableSet, shrink

__all__ = [
    "SolverParams",
    "SolverState",
    "Feedback",
    "GradientSample",
    "KKTResidual",
    "ClosedLoop",
    "DYNAMICS",
    "lagrangian",
    "ppdgd_rhs",
    "ppdzd_rhs",
    "dppdgd_rhs",
    "dppdzd_rhs",
    "kkt_residual",
    "gradient_estimate_oracle",
    "make_dynamics",
]

DYNAMICS = ("ppdgd", "ppdzd", "dppdgd", "dppdzd")


@dataclass(frozen=True)
class SolverParams:
    k_x: float = 50.0
    k_lambda: float = 10.0
    alpha_x: float = 0.001
    alpha_lambda: float = 0.001
    eps_g: float = 0.025
    delta_reg: float = 0.0
    dual_set: Optional[ProjectableSet] = None

    def __post_init__(self):
        for name in ("k_x", "k_lambda", "alpha_x", "alpha_lambda", "eps_g"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.delta_reg < 0:
            raise ValueError("delta_reg must be nonnegative")

    def dual(self, m: int) -> ProjectableSet:
        if self.dual_set is None:
            return NonnegativeOrthant(m)
        if self.dual_set.dim != m:
            raise ValueError(f"dual set has dimension {self.dual_set.dim}, expected {m}")
        return self.dual_set


@dataclass
class SolverState:
    x: np.ndarray
    lam: np.ndarray
    xi: np.ndarray = None
    mu: np.ndarray = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(-1)
        self.lam = np.asarray(self.lam, dtype=float).reshape(-1)
        self.xi = np.zeros_like(self.x) if self.xi is None else np.asarray(self.xi, dtype=float).reshape(-1)
        self.mu = np.zeros_like(self.lam) if self.mu is None else np.asarray(self.mu, dtype=float).reshape(-1)
        if self.xi.shape != self.x.shape or self.mu.shape != self.lam.shape:
            raise ValueError("filter states must match primal/dual dimensions")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def m(self) -> int:
        return self.lam.shape[0]

    def vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.lam, self.xi, self.mu])

    @classmethod
    def from_vector(cls, v: np.ndarray, n: int, m: int) -> "SolverState":
        return cls(v[:n], v[n : n + m], v[n + m : 2 * n + m], v[2 * n + m :])

    def copy(self) -> "SolverState":
        return SolverState(self.x.copy(), self.lam.copy(), self.xi.copy(), self.mu.copy())


@dataclass(frozen=True)
class Feedback:
    f_val: float
    g_vals: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "g_vals", np.asarray(self.g_vals, dtype=float).reshape(-1))


@dataclass(frozen=True)
class GradientSample:
    """White-box evaluation: values plus gradient of f and Jacobian of g (m x n)."""

    f_val: float
    g_vals: np.ndarray
    grad_f: np.ndarray
    jac_g: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "g_vals", np.asarray(self.g_vals, dtype=float).reshape(-1))
        object.__setattr__(self, "grad_f", np.asarray(self.grad_f, dtype=float).reshape(-1))
        jac = np.asarray(self.jac_g, dtype=float).reshape(self.g_vals.shape[0], self.grad_f.shape[0])
        object.__setattr__(self, "jac_g", jac)

    def grad_lagrangian(self, lam: np.ndarray) -> np.ndarray:
        return self.grad_f + self.jac_g.T @ lam


def lagrangian(f_val: float, g_vals, lam, delta_reg: float = 0.0) -> float:
    """``f + lam.g - (delta/2) |lam|^2``."""
    g_vals = np.asarray(g_vals, dtype=float).reshape(-1)
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if g_vals.size == 0:
        return float(f_val) - 0.5 * delta_reg * float(lam @ lam)
    if g_vals.shape != lam.shape:
        raise ValueError("g_vals and lam must have the same length")
    return float(f_val) + float(lam @ g_vals) - 0.5 * delta_reg * float(lam @ lam)


def _dual_project(params: SolverParams, v: np.ndarray) -> np.ndarray:
    if params.dual_set is None:
        return np.maximum(v, 0.0)
    return params.dual_set.project(v)


def _check_dims(state: SolverState, n: int, m: int):
    if state.n != n or state.m != m:
        raise ValueError(f"state has dims (n={state.n}, m={state.m}), feedback implies (n={n}, m={m})")


def _gd_rates(x, lam, grads: GradientSample, params: SolverParams, X: ProjectableSet, tangent: bool):
    gl = grads.grad_lagrangian(lam) if lam.size else grads.grad_f
    g = grads.g_vals
    if tangent:
        dx = params.k_x * X.tangent_project(x, -gl)
        dl = params.k_lambda * params.dual(lam.shape[0]).tangent_project(lam, g - params.delta_reg * lam)
    else:
        dx = params.k_x * (X.project(x - params.alpha_x * gl) - x)
        dl = params.k_lambda * (_dual_project(params, lam + params.alpha_lambda * (g - params.delta_reg * lam)) - lam)
    return dx, dl


def _zd_rates(x, lam, xi, mu, f_val, g_vals, d, params: SolverParams, plan: ProbingPlan, X: ProjectableSet, tangent: bool):
    if tangent:
        dx = params.k_x * X.tangent_project(x, -xi)
        dl = params.k_lambda * params.dual(lam.shape[0]).tangent_project(lam, mu - params.delta_reg * lam)
    else:
        dx = params.k_x * (X.project(x - params.alpha_x * xi) - x)
        dl = params.k_lambda * (_dual_project(params, lam + params.alpha_lambda * (mu - params.delta_reg * lam)) - lam)
    s = f_val + float(lam @ g_vals) if lam.size else float(f_val)
    if not math.isfinite(s):
        raise FloatingPointError("nonfinite plant feedback")
    dxi = (s / (plan.eps_a * plan.eta_d) * d - xi) / params.eps_g
    dmu = (g_vals - mu) / params.eps_g
    return dx, dl, dxi, dmu


def ppdgd_rhs(state: SolverState, grads: GradientSample, params: SolverParams, primal_set: ProjectableSet) -> SolverState:
    """Continuous projected primal-dual gradient flow; filter derivatives are zero."""
    _check_dims(state, grads.grad_f.shape[0], grads.g_vals.shape[0])
    dx, dl = _gd_rates(state.x, state.lam, grads, params, primal_set, tangent=False)
    return SolverState(dx, dl, np.zeros_like(dx), np.zeros_like(dl))


def ppdzd_rhs(
    state: SolverState,
    feedback: Feedback,
    t: float,
    params: SolverParams,
    plan: ProbingPlan,
    shrunken_set: ProjectableSet,
    probe: np.ndarray | None = None,
) -> SolverState:
    """Zeroth-order projected primal-dual dynamics.

    ``feedback`` must be the plant output at ``x + eps_a * probe_vector(plan, t)``.
    ``probe`` lets a caller pass that probe vector instead of recomputing it.
    """
    _check_dims(state, plan.n, feedback.g_vals.shape[0])
    d = probe_vector(plan, t) if probe is None else probe
    rates = _zd_rates(state.x, state.lam, state.xi, state.mu, feedback.f_val, feedback.g_vals, d, params, plan, shrunken_set, False)
    return SolverState(*rates)


def dppdgd_rhs(state: SolverState, grads: GradientSample, params: SolverParams, primal_set: ProjectableSet) -> SolverState:
    """Tangent-cone projected primal-dual gradient flow."""
    _check_dims(state, grads.grad_f.shape[0], grads.g_vals.shape[0])
    dx, dl = _gd_rates(state.x, state.lam, grads, params, primal_set, tangent=True)
    return SolverState(dx, dl, np.zeros_like(dx), np.zeros_like(dl))


def dppdzd_rhs(
    state: SolverState,
    feedback: Feedback,
    t: float,
    params: SolverParams,
    plan: ProbingPlan,
    shrunken_set: ProjectableSet,
    probe: np.ndarray | None = None,
) -> SolverState:
    _check_dims(state, plan.n, feedback.g_vals.shape[0])
    d = probe_vector(plan, t) if probe is None else probe
    rates = _zd_rates(state.x, state.lam, state.xi, state.mu, feedback.f_val, feedback.g_vals, d, params, plan, shrunken_set, True)
    return SolverState(*rates)


@dataclass
class KKTResidual:
    stationarity: float
    primal_feas: float
    dual_feas: float
    complementarity: float

    def max(self) -> float:
        return max(self.stationarity, self.primal_feas, self.dual_feas, self.complementarity)


def kkt_residual(problem, x, lam, t: float = 0.0, primal_set: ProjectableSet | None = None) -> KKTResidual:
    """Natural-map KKT residuals of a white-box problem at ``(x, lam)``.

    ``problem`` must provide ``first_order(x, t)`` and, unless ``primal_set`` is
    passed, a ``primal_set`` attribute.
    """
    X = problem.primal_set if primal_set is None else primal_set
    x = np.asarray(x, dtype=float).reshape(-1)
    lam = np.asarray(lam, dtype=float).reshape(-1)
    s = problem.first_order(x, t)
    gl = s.grad_lagrangian(lam) if lam.size else s.grad_f
    g = s.g_vals
    return KKTResidual(
        stationarity=float(np.linalg.norm(x - X.project(x - gl))),
        primal_feas=float(np.linalg.norm(np.maximum(g, 0.0)) + X.distance(x)),
        dual_feas=float(np.linalg.norm(np.maximum(-lam, 0.0))),
        complementarity=float(abs(lam @ g)) if lam.size else 0.0,
    )


def gradient_estimate_oracle(plant, x, lam, plan: ProbingPlan, t: float = 0.0) -> np.ndarray:
    """Period average of the demodulated feedback with ``(x, lam)`` frozen.

    Returns ``avg[(f(x_hat) + lam.g(x_hat)) d_i] / (eps_a eta_d)`` over the
    common period of all probe components, which approximates the gradient of
    the Lagrangian in ``x`` up to ``O(eps_a)``.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    lam = np.asarray(lam, dtype=float).reshape(-1)
    kap = plan.kappa_float

    def integrand(s):
        d = wave(plan.kind, np.outer(s, kap))
        out = np.empty_like(d)
        for r in range(d.shape[0]):
            fb = plant.evaluate(x + plan.eps_a * d[r], t)
            val = fb.f_val + (float(lam @ fb.g_vals) if lam.size else 0.0)
            if not math.isfinite(val):
                raise FloatingPointError("nonfinite plant output during quadrature")
            out[r] = val * d[r]
        return out

    return periodic_average(plan.kind, plan.kappa, integrand) / (plan.eps_a * plan.eta_d)


@dataclass
class ClosedLoop:
    """A named vector field bound to its parameters and feasible sets.

    Calling it as ``loop(state, sample, t, probe=None)`` returns the state
    derivative, where ``sample`` is a :class:`Feedback` for zeroth-order
    dynamics and a :class:`GradientSample` for white-box ones.
    """

    name: str
    params: SolverParams
    primal_set: ProjectableSet
    plan: Optional[ProbingPlan] = None
    iterate_set: ProjectableSet = field(init=False)
    _rhs: Callable = field(init=False, repr=False)

    def __post_init__(self):
        if self.name not in DYNAMICS:
            raise ValueError(f"unknown dynamics {self.name!r}; choose from {DYNAMICS}")
        if self.zeroth_order:
            if self.plan is None:
                raise ValueError(f"{self.name} needs a probing plan")
            if self.plan.n != self.primal_set.dim:
                raise ValueError(f"probing plan has {self.plan.n} components, primal set has dimension {self.primal_set.dim}")
            self.iterate_set = shrink(self.primal_set, self.plan.eps_a)
        else:
            self.iterate_set = self.primal_set
        self._rhs = {"ppdgd": ppdgd_rhs, "ppdzd": ppdzd_rhs, "dppdgd": dppdgd_rhs, "dppdzd": dppdzd_rhs}[self.name]

    @property
    def zeroth_order(self) -> bool:
        return self.name.endswith("zd")

    @property
    def discontinuous(self) -> bool:
        return self.name.startswith("d")

    def __call__(self, state: SolverState, sample, t: float, probe=None) -> SolverState:
        if self.zeroth_order:
            return self._rhs(state, sample, t, self.params, self.plan, self.iterate_set, probe)
        return self._rhs(state, sample, self.params, self.iterate_set)

    def rates(self, x, lam, xi, mu, sample, d=None):
        """Derivative blocks ``(dx, dlam[, dxi, dmu])`` from raw arrays (no state objects)."""
        if self.zeroth_order:
            return _zd_rates(x, lam, xi, mu, sample.f_val, sample.g_vals, d, self.params, self.plan, self.iterate_set, self.discontinuous)
        return _gd_rates(x, lam, sample, self.params, self.iterate_set, self.discontinuous)

    def with_params(self, **changes) -> "ClosedLoop":
        return ClosedLoop(self.name, replace(self.params, **changes), self.primal_set, self.plan)


def make_dynamics(name: str, params: SolverParams, primal_set: ProjectableSet, plan: ProbingPlan | None = None) -> ClosedLoop:
    return ClosedLoop(name, params, primal_set, plan)
