"""Experiment configuration: YAML schema, validation and construction of run objects.

Schema (tagged unions use ``type:``; relative file paths resolve against the
config file's directory)::

    seed: 0
    plant:
      type: qp | ovc | tcp | thermal
      # qp:      Q, c, A, b, set: {type: box, lower, upper}
      # ovc:     R | R_file, v0, v_low, v_high, cost_coeff, device_bounds: [lo, hi]
      # tcp:     incidence, capacities, utility: {type: log | alpha, weight, alpha}, rate_bounds: [lo, hi]
      # thermal: ambient, coupling, efficiency, comfort: [lo, hi], power_caps
    dynamics: ppdgd | ppdzd | dppdgd | dppdzd
    params: {k_x, k_lambda, alpha_x, alpha_lambda, eps_g, delta_reg, dual_cap}
    probing: {signal: sinusoid | square | triangle, eps_a, eps_omega, kappa: ["p/q", ...]}
    integration: {method: rk4 | euler, h, t0, t_end, record_every, reproject}
    initial: {x: [...], lam: [...]}
    noise: {type: multiplicative, sigma, sigma_f, seed} | {type: additive_state, bound, seed}
    schedule: {type: file, path} | {type: step, at, until, before, after} | {type: piecewise_linear, times, values}
    multiagent: {mode: decentralized | consensus, agents: [n_1, ...], owner: [...],
                 graph: {type: complete | ring | file, path, eps_p}}
    metrics: {nu, violation_tol}
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .dynamics import ClosedLoop, SolverParams, SolverState, make_dynamics
from .integrator import IntegrationConfig, MIN_STEPS_PER_PERIOD, default_step
from .multiagent import AgentLayout, CommGraph, ConsensusLoop, DecentralizedLoop, check_graph, complete_graph, load_edge_list, ring_graph
from .plants import (
    AdditiveState,
    MultiplicativeDeviation,
    NoiseModel,
    PiecewiseLinear,
    Plant,
    Utility,
    load_matrix_csv,
    ovc_plant,
    qp_plant,
    tcp_plant,
    thermal_plant,
    with_noise,
    with_schedule,
)
from .probing import ProbingPlan, sampled_mean_bias, validate_orthogonality
from .sets import Ball, Box, CappedOrthant, ProjectableSet

__all__ = ["ConfigError", "Experiment", "load_config", "config_hash", "build_experiment", "set_path", "PUBLISHED_DEFAULTS"]

PUBLISHED_DEFAULTS = {
    "params": {"k_x": 50.0, "k_lambda": 10.0, "alpha_x": 0.001, "alpha_lambda": 0.001, "eps_g": 0.025},
    "probing": {"signal": "square", "eps_a": 0.025, "eps_omega": 0.025},
}


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    path = Path(path)
    with open(path) as fh:
        cfg = yaml.safe_load(fh) or {}
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    cfg.setdefault("_base_dir", str(path.resolve().parent))
    return cfg


def _canonical(cfg: dict) -> str:
    clean = {k: v for k, v in cfg.items() if not k.startswith("_")}
    return json.dumps(clean, sort_keys=True, separators=(",", ":"), default=str)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(_canonical(cfg).encode()).hexdigest()[:16]


def set_path(cfg: dict, dotted: str, value) -> dict:
    """Copy of ``cfg`` with the entry at ``a.b.c`` replaced (intermediate mappings created)."""
    out = copy.deepcopy(cfg)
    node = out
    keys = dotted.split(".")
    for k in keys[:-1]:
        nxt = node.get(k)
        if nxt is None:
            nxt = node[k] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(f"cannot descend into {k!r} of {dotted!r}")
        node = nxt
    node[keys[-1]] = value
    return out


def _path(cfg: dict, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else Path(cfg.get("_base_dir", ".")) / q


def _arr(v, name: str) -> np.ndarray:
    try:
        return np.asarray(v, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: expected numbers") from exc


def _set(spec: dict, n: int) -> ProjectableSet:
    kind = spec.get("type", "box")
    if kind == "box":
        lo = np.broadcast_to(_arr(spec["lower"], "set.lower"), (n,)).copy()
        hi = np.broadcast_to(_arr(spec["upper"], "set.upper"), (n,)).copy()
        return Box(lo, hi)
    if kind == "ball":
        return Ball(_arr(spec.get("center", np.zeros(n)), "set.center"), float(spec["radius"]))
    # primal orthants become boxes so that shrinking keeps the dithered input nonnegative
    if kind == "orthant":
        return Box(np.zeros(n), np.full(n, np.inf))
    if kind == "capped_orthant":
        return Box(np.zeros(n), np.full(n, float(spec.get("cap", 1e3))))
    raise ConfigError(f"unknown set type {kind!r}")


def _plant(cfg: dict, agent_sizes=None) -> Plant:
    spec = cfg.get("plant")
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError("plant.type is required")
    kind = spec["type"]
    if kind == "qp":
        Q = np.atleast_2d(_arr(spec["Q"], "plant.Q"))
        n = Q.shape[0]
        A = _arr(spec.get("A", np.zeros((0, n))), "plant.A").reshape(-1, n)
        b = _arr(spec.get("b", np.zeros(A.shape[0])), "plant.b")
        X = _set(spec.get("set", {"type": "box", "lower": -1e3, "upper": 1e3}), n)
        slices = None
        if agent_sizes is not None:
            edges = np.cumsum([0] + list(agent_sizes))
            slices = [slice(int(a), int(c)) for a, c in zip(edges[:-1], edges[1:])]
        return qp_plant(Q, _arr(spec.get("c", np.zeros(n)), "plant.c"), A, b, X, slices)
    if kind == "ovc":
        R = load_matrix_csv(_path(cfg, spec["R_file"])) if "R_file" in spec else _arr(spec["R"], "plant.R")
        R = np.atleast_2d(R)
        lo, hi = spec.get("device_bounds", [-2.0, 2.5])
        return ovc_plant(R, _arr(spec["v0"], "plant.v0"), spec.get("v_low", 0.95), spec.get("v_high", 1.05),
                         float(spec.get("cost_coeff", 0.1)), Box.uniform(R.shape[1], lo, hi))
    if kind == "tcp":
        u = spec.get("utility", {"type": "log"})
        util = Utility(u.get("type", "log"), float(u.get("weight", 1.0)), float(u.get("alpha", 2.0)))
        lo, hi = spec["rate_bounds"]
        return tcp_plant(np.asarray(spec["incidence"], dtype=bool), _arr(spec["capacities"], "plant.capacities"), util, (lo, hi))
    if kind == "thermal":
        return thermal_plant(_arr(spec["ambient"], "plant.ambient"), _arr(spec["coupling"], "plant.coupling"),
                             _arr(spec["efficiency"], "plant.efficiency"), spec["comfort"], _arr(spec["power_caps"], "plant.power_caps"))
    raise ConfigError(f"unknown plant type {kind!r}")


def _schedule(cfg: dict) -> Optional[PiecewiseLinear]:
    spec = cfg.get("schedule")
    if not spec:
        return None
    kind = spec.get("type", "file")
    if kind == "file":
        return PiecewiseLinear.from_csv(_path(cfg, spec["path"]))
    if kind == "step":
        return PiecewiseLinear.step(float(spec["at"]), float(spec["until"]), spec["before"], spec["after"])
    if kind == "piecewise_linear":
        return PiecewiseLinear(spec["times"], spec["values"])
    raise ConfigError(f"unknown schedule type {kind!r}")


def _noise(cfg: dict, seed: int) -> Optional[NoiseModel]:
    spec = cfg.get("noise")
    if not spec:
        return None
    kind = spec.get("type")
    s = int(spec.get("seed", seed))
    if kind == "multiplicative":
        base = spec.get("baseline")
        return NoiseModel(MultiplicativeDeviation(float(spec.get("sigma", 0.0)),
                                                  None if base is None else _arr(base, "noise.baseline"),
                                                  None, float(spec.get("sigma_f", 0.0))), s)
    if kind == "additive_state":
        return NoiseModel(AdditiveState(float(spec["bound"])), s)
    raise ConfigError(f"unknown noise type {kind!r}")


def _graph(cfg: dict, N: int) -> CommGraph:
    g = cfg.get("multiagent", {}).get("graph", {"type": "complete"})
    eps_p = float(g.get("eps_p", 0.01))
    kind = g.get("type", "complete")
    if kind == "complete":
        return complete_graph(N, eps_p)
    if kind == "ring":
        return ring_graph(N, eps_p)
    if kind == "file":
        return load_edge_list(_path(cfg, g["path"]), N, eps_p)
    raise ConfigError(f"unknown graph type {kind!r}")


@dataclass
class Experiment:
    cfg: dict
    plant: Plant
    loop: Any
    initial: SolverState
    integration: IntegrationConfig
    seed: int
    validation: list = field(default_factory=list)
    refused: bool = False
    reference: Any = None
    nu: float = 0.05
    violation_tol: float = 0.0

    @property
    def hash(self) -> str:
        return config_hash(self.cfg)


def _reference(plant: Plant, schedule: Optional[PiecewiseLinear], X: ProjectableSet):
    if not plant.white_box:
        return None
    if schedule is None:
        x = plant.optimum(0.0, X).x
        return lambda t: x
    knots = schedule.times
    xs = np.array([plant.optimum(float(t), X).x for t in knots])
    path = PiecewiseLinear(knots, xs)
    lo, hi = path.domain
    return lambda t: path(min(max(t, lo), hi))


def build_experiment(cfg: dict, allow_unorthogonal: bool = False) -> Experiment:
    """Construct plant, loop and initial state; collect validation lines.

    Structural errors raise :class:`ConfigError`. Failed cross-field checks
    (orthogonality, step bound, graph) set ``refused``.
    """
    seed = int(cfg.get("seed", 0))
    name = cfg.get("dynamics", "ppdzd")
    ma = cfg.get("multiagent")
    sizes = None if not ma else list(ma["agents"])
    try:
        plant = _plant(cfg, sizes)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"plant: missing or malformed field {exc}") from exc
    sched = _schedule(cfg)
    if sched is not None:
        if sched.values.shape[1] not in (1, plant.exogenous.shape[0]):
            raise ConfigError("schedule width does not match the plant's exogenous input")
        plant = with_schedule(plant, sched)
    pd = {**PUBLISHED_DEFAULTS["params"], **(cfg.get("params") or {})}
    cap = pd.pop("dual_cap", None)
    params = SolverParams(**{k: float(v) for k, v in pd.items()},
                          dual_set=CappedOrthant(plant.m, float(cap)) if cap is not None else None)
    lines: list[str] = [f"config_hash: {config_hash(cfg)}"]
    refused = False
    plan = None
    if name.endswith("zd"):
        ps = {**PUBLISHED_DEFAULTS["probing"], **(cfg.get("probing") or {})}
        if "kappa" not in ps:
            raise ConfigError("probing.kappa is required for zeroth-order dynamics")
        plan = ProbingPlan(ps["signal"], float(ps["eps_a"]), float(ps["eps_omega"]), tuple(ps["kappa"]))
        if plan.n != plant.n:
            raise ConfigError(f"probing plan has {plan.n} components, plant has {plant.n} inputs")
        rep = validate_orthogonality(plan)
        lines += rep.lines()
        if not rep.ok:
            if allow_unorthogonal:
                lines.append("  proceeding: --allow-unorthogonal given")
            else:
                refused = True
                lines.append("  refused: orthogonality violated (use --allow-unorthogonal to override)")
    if ma:
        X = plant.primal_set
        if not isinstance(X, Box) or getattr(plant, "agent_slices", None) is None:
            raise ConfigError("multi-agent runs need a separable plant (qp or ovc) with a box feasible set")
        if sum(sizes) != plant.n:
            raise ConfigError(f"agent sizes sum to {sum(sizes)}, plant has {plant.n} inputs")
        sets = [Box(X.lower[s], X.upper[s]) for s in plant.agent_slices]
        layout = AgentLayout.from_jacobian(sets, plant.A, ma.get("owner"))
        if plan is None:
            raise ConfigError("multi-agent runs need zeroth-order dynamics")
        mode = ma.get("mode", "decentralized")
        disc = name.startswith("d")
        if mode == "decentralized":
            loop = DecentralizedLoop(layout, params, plan, disc)
        elif mode == "consensus":
            graph = _graph(cfg, layout.N)
            grep = check_graph(graph)
            lines += grep.lines()
            if not grep.ok:
                refused = True
                lines.append("  refused: graph must be weight-balanced and strongly connected")
                loop = None
            else:
                loop = ConsensusLoop(layout, graph, params, plan, disc)
        else:
            raise ConfigError(f"unknown multiagent mode {mode!r}")
    else:
        loop = make_dynamics(name, params, plant.primal_set, plan)
    ic = {k: v for k, v in (cfg.get("integration") or {}).items()}
    integ = IntegrationConfig(**ic)
    if loop is not None and plan is not None:
        h = integ.h if integ.h is not None else default_step(loop)
        bound = plan.max_step(MIN_STEPS_PER_PERIOD)
        lines.append(f"step: h={h!r} bound={bound!r}")
        if h > bound * (1 + 1e-12):
            refused = True
            lines.append(f"  refused: fewer than {MIN_STEPS_PER_PERIOD} steps per fastest probe period")
        bias = sampled_mean_bias(plan, h)
        if bias > 0:
            lines.append(f"  warning: sampled square probe has mean {bias:.3g}; prefer the default step")
    noise = _noise(cfg, seed)
    if noise is not None:
        plant = with_noise(plant, noise)
    X_it = loop.iterate_set if loop is not None else plant.primal_set
    init = cfg.get("initial") or {}
    x0 = _arr(init["x"], "initial.x") if "x" in init else X_it.project(np.zeros(plant.n))
    lam0 = _arr(init["lam"], "initial.lam") if "lam" in init else np.zeros(plant.m)
    metrics = cfg.get("metrics") or {}
    ref = _reference(getattr(plant, "inner", plant), sched, X_it) if not refused else None
    return Experiment(cfg, plant, loop, SolverState(x0, lam0), integ, seed, lines, refused, ref,
                      float(metrics.get("nu", 0.05)), float(metrics.get("violation_tol", 0.0)))
