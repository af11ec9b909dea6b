"""Black-box plants: application models, white-box test problems, noise and schedules.

A plant maps an implemented input ``x_hat`` and time ``t`` to a
:class:`~pdzd.dynamics.Feedback` (cost value and constraint values, with the
convention ``g <= 0``). Plants that know their own derivatives also provide
``first_order`` and ``optimum`` so that controllers can be checked against
exact answers.
"""

from __future__ import annotations

import copy
import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .dynamics import Feedback, GradientSample
from .oracle import Optimum, solve_linear_constrained, solve_qp
from .sets import Box, ProjectableSet

__all__ = [
    "Plant",
    "QPPlant",
    "OVCPlant",
    "TCPPlant",
    "ThermalPlant",
    "Utility",
    "LocalFeedback",
    "NoiseModel",
    "MultiplicativeDeviation",
    "AdditiveState",
    "NoisyPlant",
    "PiecewiseLinear",
    "qp_plant",
    "ovc_plant",
    "tcp_plant",
    "thermal_plant",
    "with_noise",
    "with_schedule",
    "load_matrix_csv",
]


@dataclass(frozen=True)
class LocalFeedback:
    """Per-agent cost parts ``f_i`` plus the full constraint vector."""

    f_parts: np.ndarray
    g_vals: np.ndarray

    def total(self) -> Feedback:
        return Feedback(float(np.sum(self.f_parts)), self.g_vals)


class PiecewiseLinear:
    """Vector signal interpolated linearly between knots."""

    def __init__(self, times: Sequence[float], values):
        self.times = np.asarray(times, dtype=float)
        vals = np.asarray(values, dtype=float)
        self.values = vals.reshape(len(self.times), -1)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("schedule knot times must be strictly increasing")

    @classmethod
    def from_csv(cls, path) -> "PiecewiseLinear":
        """Read ``t,v_1,...,v_k`` rows after a header line."""
        data = load_matrix_csv(path)
        return cls(data[:, 0], data[:, 1:])

    @classmethod
    def step(cls, t0: float, t1: float, before, after, width: float = 1e-9) -> "PiecewiseLinear":
        before, after = np.atleast_1d(before), np.atleast_1d(after)
        return cls([t0 - 2 * width, t0 - width, t0, t1], [before, before, after, after])

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def __call__(self, t: float) -> np.ndarray:
        if t < self.times[0] - 1e-12 or t > self.times[-1] + 1e-12:
            raise ValueError(f"t={t} outside schedule domain {self.domain}")
        return np.array([np.interp(t, self.times, col) for col in self.values.T])


def load_matrix_csv(path) -> np.ndarray:
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)


class Plant:
    """Base plant. Subclasses implement ``_evaluate(x, exo)``.

    ``exo`` is the exogenous input (offsets, base voltage, ambient temperature,
    link capacities) after any schedule is applied.
    """

    white_box = False
    primal_set: ProjectableSet
    n: int
    m: int
    exogenous: np.ndarray
    schedule: Optional[Callable] = None

    def exo(self, t: float) -> np.ndarray:
        if self.schedule is None:
            return self.exogenous
        return self.exogenous + self.schedule(t)

    def evaluate(self, x_hat, t: float = 0.0) -> Feedback:
        f, g = self._evaluate(np.asarray(x_hat, dtype=float), self.exo(t))
        return Feedback(f, g)

    def first_order(self, x, t: float = 0.0) -> GradientSample:
        raise NotImplementedError(f"{type(self).__name__} exposes no gradients")

    def optimum(self, t: float = 0.0, primal_set: ProjectableSet | None = None) -> Optimum:
        raise NotImplementedError(f"{type(self).__name__} has no reference optimum")

    def _evaluate(self, x, exo):
        raise NotImplementedError

    def copy(self) -> "Plant":
        return copy.copy(self)


class QPPlant(Plant):
    """``f = 0.5 x'Qx + c'x``, ``g = A x - b``; ``b`` is the exogenous term.

    ``agent_slices`` (optional) splits ``x`` into agent blocks for which the cost
    is separable; ``evaluate_local`` then reports each agent's cost part.
    """

    white_box = True

    def __init__(self, Q, c, A, b, primal_set: ProjectableSet, agent_slices=None, max_constraints: int | None = 10,
                 solve: bool = True):
        self.Q = np.atleast_2d(np.asarray(Q, dtype=float))
        self.n = self.Q.shape[0]
        self.c = np.asarray(c, dtype=float).reshape(self.n)
        self.A = np.asarray(A, dtype=float).reshape(-1, self.n)
        self.exogenous = np.asarray(b, dtype=float).reshape(-1)
        self.m = self.A.shape[0]
        if self.exogenous.shape[0] != self.m:
            raise ValueError("b must have one entry per row of A")
        if not np.allclose(self.Q, self.Q.T):
            raise ValueError("Q must be symmetric")
        if np.min(np.linalg.eigvalsh(self.Q)) < -1e-10:
            raise ValueError("Q must be positive semidefinite")
        if max_constraints is not None and self.m > max_constraints:
            raise ValueError(f"at most {max_constraints} constraints supported, got {self.m}")
        if primal_set.dim != self.n:
            raise ValueError("primal set dimension does not match Q")
        self.primal_set = primal_set
        self.agent_slices = agent_slices
        if agent_slices is not None:
            for i, si in enumerate(agent_slices):
                for j, sj in enumerate(agent_slices):
                    if i != j and np.any(self.Q[si, sj] != 0):
                        raise ValueError("cost is not separable over the agent blocks")
        self.schedule = None
        self._opt_cache: dict = {}
        self.solution = self.optimum() if solve else None

    def _evaluate(self, x, exo):
        return float(0.5 * x @ self.Q @ x + self.c @ x), self.A @ x - exo

    def evaluate_local(self, x_hat, t: float = 0.0) -> LocalFeedback:
        x = np.asarray(x_hat, dtype=float)
        parts = np.array([0.5 * x[s] @ self.Q[s, s] @ x[s] + self.c[s] @ x[s] for s in self.agent_slices])
        return LocalFeedback(parts, self.A @ x - self.exo(t))

    def first_order(self, x, t: float = 0.0) -> GradientSample:
        x = np.asarray(x, dtype=float)
        f, g = self._evaluate(x, self.exo(t))
        return GradientSample(f, g, self.Q @ x + self.c, self.A)

    def optimum(self, t: float = 0.0, primal_set: ProjectableSet | None = None) -> Optimum:
        X = self.primal_set if primal_set is None else primal_set
        key = (float(t) if self.schedule is not None else 0.0, id(X))
        if key not in self._opt_cache:
            self._opt_cache[key] = solve_qp(self.Q, self.c, self.A, self.exo(t), X)
        return self._opt_cache[key]


def qp_plant(Q, c, A, b, primal_set: ProjectableSet, agent_slices=None) -> QPPlant:
    return QPPlant(Q, c, A, b, primal_set, agent_slices)


class OVCPlant(QPPlant):
    """Voltage regulation with a linear sensitivity model.

    Voltages are ``v = v0(t) + R x``; the constraint vector stacks
    ``v_low - v`` (one per node) then ``v - v_high``. The cost is
    ``cost_coeff * |x|^2``. The exogenous term is ``v0``.
    """

    def __init__(self, R, v0, v_low=0.95, v_high=1.05, cost_coeff: float = 0.1, device_sets: ProjectableSet | None = None):
        R = np.atleast_2d(np.asarray(R, dtype=float))
        M, C = R.shape
        v0 = np.asarray(v0, dtype=float).reshape(-1)
        if v0.shape[0] != M:
            raise ValueError(f"v0 has {v0.shape[0]} entries, R has {M} rows")
        self.R = R
        self.v_low = np.broadcast_to(np.asarray(v_low, dtype=float), (M,)).copy()
        self.v_high = np.broadcast_to(np.asarray(v_high, dtype=float), (M,)).copy()
        self.cost_coeff = float(cost_coeff)
        X = Box.uniform(C, -2.0, 2.5) if device_sets is None else device_sets
        A = np.vstack([-R, R])
        super().__init__(2 * cost_coeff * np.eye(C), np.zeros(C), A, np.zeros(2 * M), X,
                         agent_slices=[slice(i, i + 1) for i in range(C)], max_constraints=None, solve=False)
        self.exogenous = v0
        self.solution = self.optimum()

    @property
    def nodes(self) -> int:
        return self.R.shape[0]

    def voltages(self, x_hat, t: float = 0.0) -> np.ndarray:
        return self.exo(t) + self.R @ np.asarray(x_hat, dtype=float)

    def _evaluate(self, x, exo):
        v = exo + self.R @ x
        return float(self.cost_coeff * x @ x), np.concatenate([self.v_low - v, v - self.v_high])

    def evaluate_local(self, x_hat, t: float = 0.0) -> LocalFeedback:
        x = np.asarray(x_hat, dtype=float)
        f, g = self._evaluate(x, self.exo(t))
        return LocalFeedback(self.cost_coeff * x**2, g)

    def optimum(self, t: float = 0.0, primal_set: ProjectableSet | None = None) -> Optimum:
        X = self.primal_set if primal_set is None else primal_set
        key = (float(t) if self.schedule is not None else 0.0, id(X))
        if key not in self._opt_cache:
            v0 = self.exo(t)
            b = np.concatenate([v0 - self.v_low, self.v_high - v0])
            self._opt_cache[key] = solve_qp(self.Q, self.c, self.A, b, X)
        return self._opt_cache[key]

    def first_order(self, x, t: float = 0.0) -> GradientSample:
        x = np.asarray(x, dtype=float)
        f, g = self._evaluate(x, self.exo(t))
        return GradientSample(f, g, 2 * self.cost_coeff * x, self.A)

    def noise_baseline(self) -> np.ndarray:
        """Constraint values at the nominal voltage of 1 p.u."""
        return np.concatenate([self.v_low - 1.0, 1.0 - self.v_high])

    def noise_groups(self) -> np.ndarray:
        """Both limit channels of a node share that node's measurement noise."""
        idx = np.arange(self.nodes)
        return np.concatenate([idx, idx])


def ovc_plant(R, v0, v_low=0.95, v_high=1.05, cost_coeff=0.1, device_sets=None) -> OVCPlant:
    return OVCPlant(R, v0, v_low, v_high, cost_coeff, device_sets)


@dataclass(frozen=True)
class Utility:
    """Concave source utility: ``log`` (w log r) or ``alpha`` (alpha-fair, alpha != 1)."""

    kind: str = "log"
    weight: float = 1.0
    alpha: float = 2.0

    def value(self, r):
        if self.kind == "log":
            return self.weight * np.log(r)
        return self.weight * r ** (1 - self.alpha) / (1 - self.alpha)

    def grad(self, r):
        if self.kind == "log":
            return self.weight / r
        return self.weight * r ** (-self.alpha)

    def curvature(self, r):
        if self.kind == "log":
            return -self.weight / r**2
        return -self.alpha * self.weight * r ** (-self.alpha - 1)


class TCPPlant(Plant):
    """Network utility maximization as ``min -sum U_s(r_s)`` s.t. link loads below capacity.

    ``incidence[l, s]`` is true when source ``s`` routes through link ``l``;
    ``g_l = sum_{s on l} r_s - cap_l``. The exogenous term is ``-cap``.
    """

    white_box = True

    def __init__(self, incidence, capacities, utilities, rate_bounds):
        caps = np.asarray(capacities, dtype=float).reshape(-1)
        inc = np.asarray(incidence, dtype=bool).reshape(caps.shape[0], -1) if caps.size else np.zeros((0, 0), bool)
        if np.any(caps <= 0):
            raise ValueError("link capacities must be positive")
        S = inc.shape[1]
        if S and np.any(~inc.any(axis=0)):
            raise ValueError("every source needs a nonempty path")
        self.incidence = inc.astype(float)
        self.n, self.m = S, caps.shape[0]
        if isinstance(utilities, Utility):
            utilities = [utilities] * S
        self.utilities = list(utilities)
        lo, hi = rate_bounds
        self.primal_set = Box(np.broadcast_to(lo, (S,)).astype(float), np.broadcast_to(hi, (S,)).astype(float))
        if S and np.any(self.primal_set.lower <= 0) and any(u.kind == "log" for u in self.utilities):
            raise ValueError("log utilities need positive lower rate bounds")
        self.exogenous = caps
        self.schedule = None
        self._opt_cache: dict = {}

    def _evaluate(self, x, exo):
        f = -float(sum(u.value(r) for u, r in zip(self.utilities, x)))
        return f, self.incidence @ x - exo

    def first_order(self, x, t: float = 0.0) -> GradientSample:
        x = np.asarray(x, dtype=float)
        f, g = self._evaluate(x, self.exo(t))
        grad = -np.array([u.grad(r) for u, r in zip(self.utilities, x)])
        return GradientSample(f, g, grad, self.incidence)

    def optimum(self, t: float = 0.0, primal_set: ProjectableSet | None = None) -> Optimum:
        X = self.primal_set if primal_set is None else primal_set
        key = (float(t) if self.schedule is not None else 0.0, id(X))
        if key not in self._opt_cache:
            def f(x):
                return -float(sum(u.value(r) for u, r in zip(self.utilities, x)))

            def grad(x):
                return -np.array([u.grad(r) for u, r in zip(self.utilities, x)])

            def hess(x):
                return -np.diag([u.curvature(r) for u, r in zip(self.utilities, x)])

            x0 = X.project(0.5 * (X.lower + X.upper)) if isinstance(X, Box) else None
            self._opt_cache[key] = solve_linear_constrained(f, grad, hess, self.incidence, self.exo(t), X, x0)
        return self._opt_cache[key]


def tcp_plant(incidence, capacities, utility, rate_bounds) -> TCPPlant:
    return TCPPlant(incidence, capacities, utility, rate_bounds)


class ThermalPlant(Plant):
    """Steady-state building cooling: ``T = ambient - C^{-1} diag(eff) p``.

    Cost ``sum p``; constraints stack ``T_low - T`` then ``T - T_high``; inputs in
    ``[0, power_caps]``. The exogenous term is the (per-zone) ambient temperature.
    """

    white_box = True

    def __init__(self, ambient, coupling, efficiency, comfort, power_caps):
        C = np.atleast_2d(np.asarray(coupling, dtype=float))
        n = C.shape[0]
        diag = np.abs(np.diag(C))
        off = np.sum(np.abs(C), axis=1) - diag
        if np.any(diag < off):
            raise ValueError("coupling matrix must be row diagonally dominant")
        try:
            Cinv = np.linalg.inv(C)
        except np.linalg.LinAlgError as exc:
            raise ValueError("coupling matrix is singular") from exc
        eff = np.broadcast_to(np.asarray(efficiency, dtype=float), (n,))
        self.gain = Cinv @ np.diag(eff)
        self.n, self.m = n, 2 * n
        self.T_low, self.T_high = map(float, comfort)
        self.primal_set = Box(np.zeros(n), np.broadcast_to(np.asarray(power_caps, dtype=float), (n,)).copy())
        self.exogenous = np.broadcast_to(np.asarray(ambient, dtype=float), (n,)).copy()
        self.schedule = None
        self._opt_cache: dict = {}

    def temperatures(self, p, t: float = 0.0) -> np.ndarray:
        return self.exo(t) - self.gain @ np.asarray(p, dtype=float)

    def _evaluate(self, x, exo):
        T = exo - self.gain @ x
        return float(np.sum(x)), np.concatenate([self.T_low - T, T - self.T_high])

    def _jac(self):
        return np.vstack([self.gain, -self.gain])

    def first_order(self, x, t: float = 0.0) -> GradientSample:
        x = np.asarray(x, dtype=float)
        f, g = self._evaluate(x, self.exo(t))
        return GradientSample(f, g, np.ones(self.n), self._jac())

    def optimum(self, t: float = 0.0, primal_set: ProjectableSet | None = None) -> Optimum:
        X = self.primal_set if primal_set is None else primal_set
        key = (float(t) if self.schedule is not None else 0.0, id(X))
        if key not in self._opt_cache:
            amb = self.exo(t)
            b = np.concatenate([amb - self.T_low, self.T_high - amb])
            self._opt_cache[key] = solve_linear_constrained(
                lambda x: float(np.sum(x)), lambda x: np.ones(self.n), lambda x: np.zeros((self.n, self.n)),
                self._jac(), b, X, X.project(np.zeros(self.n)) if isinstance(X, Box) else None,
            )
        return self._opt_cache[key]


def thermal_plant(ambient, coupling, efficiency, comfort, power_caps) -> ThermalPlant:
    return ThermalPlant(ambient, coupling, efficiency, comfort, power_caps)


def with_schedule(plant: Plant, disturbance: Callable[[float], np.ndarray]) -> Plant:
    """Copy of ``plant`` whose exogenous term is shifted by ``disturbance(t)``."""
    out = plant.copy()
    previous = plant.schedule
    out.schedule = disturbance if previous is None else (lambda t: previous(t) + disturbance(t))
    if hasattr(out, "_opt_cache"):
        out._opt_cache = {}
    return out


# --- noise -----------------------------------------------------------------

@dataclass(frozen=True)
class MultiplicativeDeviation:
    """``g~ = base + (g - base)(1 + delta)``, ``delta ~ N(0, sigma^2)`` per group and evaluation.

    ``groups[j]`` names the noise source of constraint channel ``j`` (default:
    one source per channel). ``sigma_f`` adds Gaussian noise to the cost.
    """

    sigma: float
    baseline: Optional[np.ndarray] = None
    groups: Optional[np.ndarray] = None
    sigma_f: float = 0.0

    def __post_init__(self):
        if self.sigma < 0 or self.sigma_f < 0:
            raise ValueError("noise levels must be nonnegative")


@dataclass(frozen=True)
class AdditiveState:
    """Bounded additive perturbation of the primal state, ``|e| <= bound``."""

    bound: float

    def __post_init__(self):
        if self.bound < 0:
            raise ValueError("bound must be nonnegative")


@dataclass(frozen=True)
class NoiseModel:
    kind: object
    seed: int = 0


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox4x64 generator; portable across platforms."""
    return np.random.Generator(np.random.Philox(seed))


class NoisyPlant(Plant):
    """Wraps a plant and perturbs its feedback (or the state) with seeded noise."""

    def __init__(self, inner: Plant, model: NoiseModel):
        self.inner = inner
        self.model = model
        self.rng = make_rng(model.seed)
        kind = model.kind
        if isinstance(kind, MultiplicativeDeviation):
            base = kind.baseline
            if base is None:
                base = inner.noise_baseline() if hasattr(inner, "noise_baseline") else np.zeros(inner.m)
            groups = kind.groups
            if groups is None:
                groups = inner.noise_groups() if hasattr(inner, "noise_groups") else np.arange(inner.m)
            self._base = np.broadcast_to(np.asarray(base, dtype=float), (inner.m,)).copy()
            self._groups = np.asarray(groups, dtype=int)
            self._n_groups = int(self._groups.max()) + 1 if self._groups.size else 0

    def __getattr__(self, name):
        return getattr(self.inner, name)

    @property
    def white_box(self):
        return self.inner.white_box

    def reset(self):
        self.rng = make_rng(self.model.seed)

    def copy(self) -> "NoisyPlant":
        return NoisyPlant(self.inner.copy(), self.model)

    def evaluate(self, x_hat, t: float = 0.0) -> Feedback:
        fb = self.inner.evaluate(x_hat, t)
        kind = self.model.kind
        if not isinstance(kind, MultiplicativeDeviation):
            return fb
        delta = kind.sigma * self.rng.standard_normal(self._n_groups)
        g = self._base + (fb.g_vals - self._base) * (1.0 + delta[self._groups])
        f = fb.f_val
        if kind.sigma_f > 0:
            f = f + kind.sigma_f * float(self.rng.standard_normal())
        return Feedback(f, g)

    def evaluate_local(self, x_hat, t: float = 0.0) -> LocalFeedback:
        loc = self.inner.evaluate_local(x_hat, t)
        noisy = self.evaluate(x_hat, t) if isinstance(self.model.kind, MultiplicativeDeviation) else None
        return loc if noisy is None else LocalFeedback(loc.f_parts, noisy.g_vals)

    def state_noise(self, n: int) -> np.ndarray | None:
        """Clipped Gaussian perturbation with norm at most the configured bound."""
        kind = self.model.kind
        if not isinstance(kind, AdditiveState) or kind.bound == 0:
            return None
        e = self.rng.standard_normal(n) * (kind.bound / np.sqrt(n))
        norm = np.linalg.norm(e)
        return e if norm <= kind.bound else e * (kind.bound / norm)


def with_noise(plant: Plant, model: NoiseModel) -> NoisyPlant:
    return NoisyPlant(plant, model)
