"""Fixed-step integration of a closed loop, trajectory recording and run metrics."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .dynamics import ClosedLoop, Feedback, SolverState
from .probing import aligned_step, probe_vector, sampled_mean_bias

__all__ = [
    "IntegrationConfig",
    "Trajectory",
    "IntegrationAborted",
    "Summary",
    "integrate",
    "summarize",
    "default_step",
    "MAX_RECORDS",
]

MAX_RECORDS = 100_000
MIN_STEPS_PER_PERIOD = 40
DEFAULT_STEPS_PER_PERIOD = 64


@dataclass(frozen=True)
class IntegrationConfig:
    """``h=None`` picks :func:`default_step`; ``record_every=None`` caps stored records at ``MAX_RECORDS``."""

    method: str = "rk4"
    h: Optional[float] = None
    t0: float = 0.0
    t_end: float = 1.0
    record_every: Optional[int] = None
    reproject: bool = True

    def __post_init__(self):
        if self.method not in ("rk4", "euler"):
            raise ValueError(f"method must be 'rk4' or 'euler', got {self.method!r}")
        if self.h is not None and not self.h > 0:
            raise ValueError("step h must be positive")
        if not self.t_end > self.t0:
            raise ValueError("t_end must exceed t0")
        if self.record_every is not None and self.record_every < 1:
            raise ValueError("record_every must be at least 1")


def default_step(loop) -> float:
    """At least 64 steps per fastest probe period on a grid that keeps sampled probes zero-mean;
    ``0.1 / max(k_x, k_lambda)`` for white-box flows."""
    if loop.plan is not None and loop.zeroth_order:
        return aligned_step(loop.plan, DEFAULT_STEPS_PER_PERIOD)
    return 0.1 / max(loop.params.k_x, loop.params.k_lambda)


@dataclass
class Trajectory:
    """Recorded samples at step start times; ``final`` is the state at ``t_end``."""

    times: np.ndarray
    x: np.ndarray
    xhat: np.ndarray
    lam: np.ndarray
    xi: np.ndarray
    mu: np.ndarray
    f: np.ndarray
    g: np.ndarray
    cost: np.ndarray
    max_violation: np.ndarray
    dist_to_ref: Optional[np.ndarray]
    final: SolverState
    t_final: float
    h: float
    record_every: int
    method: str
    config_hash: Optional[str] = None
    aux: Optional[np.ndarray] = None
    final_aux: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.times.shape[0]

    @property
    def record_dt(self) -> float:
        return self.h * self.record_every

    @property
    def states(self) -> list[SolverState]:
        return [SolverState(*row) for row in zip(self.x, self.lam, self.xi, self.mu)]

    @property
    def feedback(self) -> list[Feedback]:
        return [Feedback(f, g) for f, g in zip(self.f, self.g)]

    def header(self) -> list[str]:
        n, m = self.x.shape[1], self.lam.shape[1]
        return (
            ["t"]
            + [f"x_{i + 1}" for i in range(n)]
            + [f"xhat_{i + 1}" for i in range(n)]
            + [f"lambda_{j + 1}" for j in range(m)]
            + ["f"]
            + [f"g_{j + 1}" for j in range(m)]
            + ["max_violation", "cost"]
        )

    def rows(self):
        for k in range(len(self)):
            vals = [self.times[k], *self.x[k], *self.xhat[k], *self.lam[k], self.f[k], *self.g[k],
                    self.max_violation[k], self.cost[k]]
            yield [repr(float(v)) for v in vals]

    def to_csv(self, path) -> None:
        """Write the trajectory with round-trip (shortest repr) float formatting."""
        with open(path, "w", newline="") as fh:
            if self.config_hash is not None:
                fh.write(f"# config_hash: {self.config_hash}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            w.writerows(self.rows())


class IntegrationAborted(RuntimeError):
    """Raised on a nonfinite state; ``trajectory`` holds the records taken so far."""

    def __init__(self, message: str, trajectory: Trajectory, t: float):
        super().__init__(f"{message} at t={t:.6g}")
        self.trajectory = trajectory
        self.t = t


def _reference_fn(reference) -> Optional[Callable[[float], np.ndarray]]:
    if reference is None:
        return None
    if callable(reference):
        return reference
    ref = np.asarray(reference, dtype=float)
    return lambda t: ref


def integrate(loop, initial: SolverState, plant, config: IntegrationConfig, reference=None, aux=None) -> Trajectory:
    """Integrate ``loop`` driven by ``plant`` over ``[t0, t_end]`` with a fixed step.

    Zeroth-order loops measure the plant once per step at
    ``x + eps_a * probe(t)`` and hold that sample over the RK4 stages.
    White-box loops read exact gradients at every stage. Discontinuous loops
    always use explicit Euler with reprojection. ``reference`` (a vector or a
    function of ``t``) enables the ``dist_to_ref`` metric. ``aux`` is the
    initial auxiliary state of loops that carry one (consensus integrators).
    """
    plan = loop.plan if loop.zeroth_order else None
    X = loop.iterate_set
    dual = loop.params.dual(initial.m)
    n, m = initial.n, initial.m
    if X.dim != n:
        raise ValueError(f"initial state has {n} primal entries, set has dimension {X.dim}")
    if plant.n != n or plant.m != m:
        raise ValueError(f"plant has (n={plant.n}, m={plant.m}), state has (n={n}, m={m})")
    if X.distance(initial.x) > 1e-9:
        raise ValueError("initial x lies outside the (shrunken) feasible set")
    if dual.distance(initial.lam) > 1e-12:
        raise ValueError("initial lambda lies outside the dual set")
    aux_size = getattr(loop, "aux_size", 0)
    if aux_size:
        aux = loop.initial_aux(aux)

    h = default_step(loop) if config.h is None else float(config.h)
    if plan is not None and h > plan.max_step(MIN_STEPS_PER_PERIOD) * (1 + 1e-12):
        raise ValueError(
            f"step {h:g} exceeds the bound {plan.max_step(MIN_STEPS_PER_PERIOD):g} "
            f"({MIN_STEPS_PER_PERIOD} steps per fastest probe period)"
        )
    if plan is not None and sampled_mean_bias(plan, h) > 0:
        warnings.warn(
            f"step {h:g} samples a square probe at an odd number of phases per cycle "
            f"(sampled mean {sampled_mean_bias(plan, h):.3g}); the gradient estimate will be biased",
            stacklevel=2,
        )
    method, reproject = config.method, config.reproject
    if loop.discontinuous:
        method, reproject = "euler", True
    steps = max(1, math.ceil((config.t_end - config.t0) / h - 1e-9))
    every = config.record_every or max(1, math.ceil(steps / MAX_RECORDS))
    n_rec = (steps - 1) // every + 1

    ref_fn = _reference_fn(reference)
    noise = getattr(plant, "state_noise", None)
    truth = getattr(plant, "inner", plant)
    noisy = truth is not plant
    measure = getattr(loop, "measure", None) or (lambda p, xh, t: p.evaluate(xh, t))

    rec = {
        "times": np.empty(n_rec), "x": np.empty((n_rec, n)), "xhat": np.empty((n_rec, n)),
        "lam": np.empty((n_rec, m)), "xi": np.empty((n_rec, n)), "mu": np.empty((n_rec, m)),
        "f": np.empty(n_rec), "g": np.empty((n_rec, m)), "cost": np.empty(n_rec),
        "max_violation": np.empty(n_rec), "dist_to_ref": np.empty(n_rec) if ref_fn else None,
        "aux": np.empty((n_rec, aux_size)) if aux_size else None,
    }
    state = [initial.x.copy(), initial.lam.copy(), initial.xi.copy(), initial.mu.copy()]
    if aux_size:
        state.append(np.array(aux, dtype=float))
    count = 0

    def build(t_last: float) -> Trajectory:
        cut = {k: (v[:count] if v is not None else None) for k, v in rec.items()}
        final = SolverState(*(b.copy() for b in state[:4]))
        return Trajectory(**cut, final=final, t_final=t_last, h=h, record_every=every, method=method,
                          final_aux=state[4].copy() if aux_size else None)

    def deriv(blocks, sample, d, t):
        if plan is None:
            dx, dl = loop.rates(blocks[0], blocks[1], None, None, plant.first_order(blocks[0], t))
            return dx, dl, 0.0, 0.0
        return loop.rates(*blocks[:4], sample, d, *blocks[4:])

    for k in range(steps):
        t = config.t0 + k * h
        x = state[0]
        if plan is not None:
            d = probe_vector(plan, t)
            xhat = x + plan.eps_a * d
            sample = measure(plant, xhat, t)
        else:
            d, xhat, sample = None, x, None
        if k % every == 0:
            if sample is None:
                fb = plant.evaluate(x, t)
            else:
                fb = sample.total() if hasattr(sample, "total") else sample
            true_fb = truth.evaluate(xhat, t) if noisy else fb
            rec["times"][count] = t
            rec["x"][count], rec["xhat"][count] = x, xhat
            rec["lam"][count], rec["xi"][count], rec["mu"][count] = state[1], state[2], state[3]
            rec["f"][count], rec["g"][count] = fb.f_val, fb.g_vals
            rec["cost"][count] = true_fb.f_val
            rec["max_violation"][count] = max(0.0, float(np.max(true_fb.g_vals, initial=0.0)))
            if ref_fn is not None:
                rec["dist_to_ref"][count] = float(np.linalg.norm(x - ref_fn(t)))
            if aux_size:
                rec["aux"][count] = state[4]
            count += 1
        try:
            with np.errstate(over="raise", invalid="raise"):
                k1 = deriv(state, sample, d, t)
                if method == "euler":
                    new = [b + h * r for b, r in zip(state, k1)]
                else:
                    half = 0.5 * h
                    k2 = deriv([b + half * r for b, r in zip(state, k1)], sample, d, t + half)
                    k3 = deriv([b + half * r for b, r in zip(state, k2)], sample, d, t + half)
                    k4 = deriv([b + h * r for b, r in zip(state, k3)], sample, d, t + h)
                    new = [b + (h / 6.0) * (a + 2 * p + 2 * q + r) for b, a, p, q, r in zip(state, k1, k2, k3, k4)]
        except (FloatingPointError, OverflowError) as exc:
            raise IntegrationAborted(f"numerical failure: {exc}", build(t), t) from exc
        if not all(np.all(np.isfinite(b)) for b in new):
            raise IntegrationAborted("nonfinite state", build(t), t)
        if noise is not None:
            e = noise(n)
            if e is not None:
                new[0] = X.project(new[0] + e)
        if reproject:
            new[0] = X.project(new[0])
            new[1] = dual.project(new[1])
        state = [np.asarray(b, dtype=float) for b in new]

    return build(config.t0 + steps * h)


@dataclass
class Summary:
    final_cost: float
    final_violation: float
    settling_time: float
    time_in_violation: float
    time_in_violation_after_settling: float
    mean_abs_tracking_error: Optional[float]
    tail_sup: Optional[float]
    nu: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def summarize(traj: Trajectory, reference=None, nu: float = 0.01, violation_tol: float = 0.0,
              tail_fraction: float = 0.2) -> Summary:
    """Run metrics.

    ``settling_time`` is the first record time after which ``dist_to_ref``
    stays at or below ``nu`` (``inf`` if never). ``time_in_violation`` counts
    records whose ``max_violation`` exceeds ``violation_tol`` times the record
    spacing. ``tail_sup`` is the largest ``dist_to_ref`` over the last
    ``tail_fraction`` of the records.
    """
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    dist = traj.dist_to_ref
    if reference is not None:
        ref_fn = _reference_fn(reference)
        dist = np.array([np.linalg.norm(x - ref_fn(t)) for t, x in zip(traj.times, traj.x)])
    viol = traj.max_violation > violation_tol
    dt = traj.record_dt
    settle, after, track, tail = math.inf, float(np.sum(viol)) * dt, None, None
    if dist is not None:
        bad = np.flatnonzero(dist > nu)
        if bad.size == 0:
            settle = float(traj.times[0])
            after = float(np.sum(viol)) * dt
        elif bad[-1] + 1 < len(traj):
            settle = float(traj.times[bad[-1] + 1])
            after = float(np.sum(viol[bad[-1] + 1 :])) * dt
        else:
            after = math.nan
        track = float(np.mean(dist))
        start = min(len(dist) - 1, int(math.floor((1 - tail_fraction) * len(dist))))
        tail = float(np.max(dist[start:]))
    return Summary(
        final_cost=float(traj.cost[-1]),
        final_violation=float(traj.max_violation[-1]),
        settling_time=settle,
        time_in_violation=float(np.sum(viol)) * dt,
        time_in_violation_after_settling=after,
        mean_abs_tracking_error=track,
        tail_sup=tail,
        nu=nu,
    )
