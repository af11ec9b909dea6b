"""Multi-agent zeroth-order primal-dual dynamics.

Two settings share one stacked state (``x``, ``lam``, ``xi``, ``mu`` as in the
single-agent loop, with agent blocks addressed by slices):

* decentralized: the cost is a sum of per-agent parts ``f_i(x_i)``; constraint
  ``j`` is coupled to the agents in its member set and its dual ``lam_j`` is
  broadcast to them. Agent ``i`` demodulates only ``f_i + sum_{j in J_i} lam_j g_j``.
* consensus: each agent owns a block of constraints and its own duals; agents
  track the network average of ``f_i + lam_i.g_i`` by dynamic average
  consensus over a weight-balanced, strongly connected digraph.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .dynamics import SolverParams, SolverState, _dual_project
from .plants import LocalFeedback
from .probing import ProbingPlan, probe_vector
from .sets import Product, ProjectableSet, shrink

__all__ = [
    "AgentLayout",
    "CommGraph",
    "GraphReport",
    "ConsensusState",
    "DecentralizedLoop",
    "ConsensusLoop",
    "check_graph",
    "decentralized_step",
    "consensus_step",
    "load_edge_list",
    "complete_graph",
    "ring_graph",
]

BALANCE_TOL = 1e-12


@dataclass
class AgentLayout:
    """Agent blocks of the decision vector and the constraint-to-agent coupling.

    ``members[j]`` is the set of agents whose actions enter constraint ``j``
    (decentralized setting). ``owner[j]`` is the agent that holds the dual of
    constraint ``j`` in the consensus setting (defaults to round-robin).
    """

    sets: Sequence[ProjectableSet]
    members: Sequence[frozenset] = ()
    owner: Optional[Sequence[int]] = None

    def __post_init__(self):
        self.sets = tuple(self.sets)
        if not self.sets:
            raise ValueError("at least one agent is required")
        self.members = tuple(frozenset(int(i) for i in s) for s in self.members)
        for j, s in enumerate(self.members):
            if not s:
                raise ValueError(f"constraint {j} has no member agents")
            if min(s) < 0 or max(s) >= self.N:
                raise ValueError(f"constraint {j} names an agent outside 0..{self.N - 1}")
        if self.owner is None:
            self.owner = tuple(j % self.N for j in range(self.m))
        self.owner = tuple(int(o) for o in self.owner)
        if len(self.owner) != self.m or any(o < 0 or o >= self.N for o in self.owner):
            raise ValueError("owner must name one agent per constraint")
        bounds = np.cumsum([0] + [s.dim for s in self.sets])
        self.slices = [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]
        self.J = [tuple(j for j, s in enumerate(self.members) if i in s) for i in range(self.N)]
        self.owned = [np.array([j for j in range(self.m) if self.owner[j] == i], dtype=int) for i in range(self.N)]

    @property
    def N(self) -> int:
        return len(self.sets)

    @property
    def m(self) -> int:
        return len(self.members)

    @property
    def sizes(self) -> list[int]:
        return [s.dim for s in self.sets]

    @property
    def n(self) -> int:
        return sum(self.sizes)

    @property
    def primal_set(self) -> Product:
        return Product(self.sets)

    @classmethod
    def from_jacobian(cls, sets: Sequence[ProjectableSet], jac: np.ndarray, owner=None) -> "AgentLayout":
        """Member sets read off the sparsity of a constraint Jacobian (rows = constraints)."""
        jac = np.atleast_2d(np.asarray(jac, dtype=float))
        bounds = np.cumsum([0] + [s.dim for s in sets])
        members = []
        for row in jac:
            members.append(frozenset(i for i in range(len(sets)) if np.any(row[bounds[i] : bounds[i + 1]] != 0)))
        return cls(sets, members, owner)

    def check_plan(self, plan: ProbingPlan) -> None:
        if plan.n != self.n:
            raise ValueError(f"probing plan has {plan.n} components, layout has {self.n} actions")

    def mask(self) -> np.ndarray:
        """``mask[k, j]`` is 1 when action ``k`` belongs to an agent in ``members[j]``."""
        out = np.zeros((self.n, self.m))
        for i, sl in enumerate(self.slices):
            out[sl, list(self.J[i])] = 1.0
        return out

    def agent_of(self) -> np.ndarray:
        out = np.empty(self.n, dtype=int)
        for i, sl in enumerate(self.slices):
            out[sl] = i
        return out


@dataclass
class CommGraph:
    """Weighted digraph; ``adjacency[i, j] > 0`` means agent ``i`` hears agent ``j``."""

    adjacency: np.ndarray
    eps_p: float = 0.01

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.adjacency, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ValueError("adjacency must be square")
        if np.any(A < 0):
            raise ValueError("edge weights must be nonnegative")
        if not self.eps_p > 0:
            raise ValueError("eps_p must be positive")
        self.adjacency = A

    @property
    def N(self) -> int:
        return self.adjacency.shape[0]

    def laplacian(self) -> np.ndarray:
        return np.diag(self.adjacency.sum(axis=1)) - self.adjacency


def complete_graph(N: int, eps_p: float = 0.01, weight: float = 1.0) -> CommGraph:
    return CommGraph(weight * (np.ones((N, N)) - np.eye(N)), eps_p)


def ring_graph(N: int, eps_p: float = 0.01, weight: float = 1.0) -> CommGraph:
    """Directed cycle ``i -> i+1``; for ``N = 2`` this is the two-way edge."""
    A = np.zeros((N, N))
    for i in range(N):
        A[(i + 1) % N, i] = weight
    return CommGraph(A, eps_p)


def load_edge_list(path, N: int | None = None, eps_p: float = 0.01) -> CommGraph:
    """Read ``i,j,weight`` rows (1-based agents, header row) into a graph."""
    with open(Path(path), newline="") as fh:
        rows = [r for r in csv.reader(fh)][1:]
    edges = [(int(r[0]) - 1, int(r[1]) - 1, float(r[2])) for r in rows if r]
    size = N or (max(max(i, j) for i, j, _ in edges) + 1 if edges else 0)
    A = np.zeros((size, size))
    for i, j, w in edges:
        if i < 0 or j < 0:
            raise ValueError("agent indices in edge lists are 1-based")
        A[i, j] = w
    return CommGraph(A, eps_p)


@dataclass
class GraphReport:
    balance_residual: float
    strongly_connected: bool
    components: int

    @property
    def ok(self) -> bool:
        return self.strongly_connected and self.balance_residual <= BALANCE_TOL

    def lines(self) -> list[str]:
        return [
            f"graph: {'ok' if self.ok else 'VIOLATED'}",
            f"  weight-balance residual: {self.balance_residual:.3e} (tolerance {BALANCE_TOL:g})",
            f"  strongly connected: {self.strongly_connected} ({self.components} strong components)",
        ]


def check_graph(graph: CommGraph) -> GraphReport:
    A = graph.adjacency
    resid = float(np.max(np.abs(A.sum(axis=1) - A.sum(axis=0)), initial=0.0))
    if graph.N == 0:
        return GraphReport(resid, False, 0)
    k, _ = connected_components(A > 0, directed=True, connection="strong")
    return GraphReport(resid, k == 1, int(k))


@dataclass
class ConsensusState:
    """Consensus integrators ``p_i``; ``y_i = f_i + lam_i.g_i - p_i`` is derived."""

    p: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(-1)
        if abs(float(np.sum(self.p))) > 1e-12:
            raise ValueError("consensus integrators must start with zero sum")

    @classmethod
    def zeros(cls, N: int) -> "ConsensusState":
        return cls(np.zeros(N))

    def y(self, local_values) -> np.ndarray:
        return np.asarray(local_values, dtype=float) - self.p


def _primal_dual(x, lam, xi, mu, params, X, tangent):
    if tangent:
        dx = params.k_x * X.tangent_project(x, -xi)
        dl = params.k_lambda * params.dual(lam.shape[0]).tangent_project(lam, mu - params.delta_reg * lam)
    else:
        dx = params.k_x * (X.project(x - params.alpha_x * xi) - x)
        dl = params.k_lambda * (_dual_project(params, lam + params.alpha_lambda * (mu - params.delta_reg * lam)) - lam)
    return dx, dl


def _local_feedback(sample) -> LocalFeedback:
    if not isinstance(sample, LocalFeedback):
        raise TypeError("multi-agent loops need per-agent feedback (plant.evaluate_local)")
    return sample


@dataclass
class DecentralizedLoop:
    """Decentralized zeroth-order loop; plugs into :func:`pdzd.integrator.integrate`."""

    layout: AgentLayout
    params: SolverParams
    plan: ProbingPlan
    discontinuous: bool = False
    zeroth_order: bool = field(default=True, init=False)
    iterate_set: ProjectableSet = field(init=False)

    def __post_init__(self):
        self.layout.check_plan(self.plan)
        self.iterate_set = shrink(self.layout.primal_set, self.plan.eps_a)
        self._agent = self.layout.agent_of()
        self._mask = self.layout.mask()

    @property
    def name(self) -> str:
        return "dppdzd" if self.discontinuous else "ppdzd"

    def measure(self, plant, x_hat, t):
        return plant.evaluate_local(x_hat, t)

    def rates(self, x, lam, xi, mu, sample, d):
        fb = _local_feedback(sample)
        lay = self.layout
        if fb.f_parts.shape[0] != lay.N or fb.g_vals.shape[0] != lay.m:
            raise ValueError("feedback does not match the agent layout")
        dx, dl = _primal_dual(x, lam, xi, mu, self.params, self.iterate_set, self.discontinuous)
        # per-action scalar: own cost part plus the broadcast duals of coupled constraints
        weighted = lam * fb.g_vals
        s = fb.f_parts[self._agent] + self._mask @ weighted
        if not np.all(np.isfinite(s)):
            raise FloatingPointError("nonfinite plant feedback")
        dxi = (s * d / (self.plan.eps_a * self.plan.eta_d) - xi) / self.params.eps_g
        dmu = (fb.g_vals - mu) / self.params.eps_g
        return dx, dl, dxi, dmu


def decentralized_step(layout: AgentLayout, state: SolverState, feedback: LocalFeedback, t: float,
                       params: SolverParams, plan: ProbingPlan, discontinuous: bool = False) -> SolverState:
    """Stacked derivative of the decentralized loop.

    Agent ``i`` uses only ``f_i`` and the pairs ``(g_j, lam_j)`` with ``j`` in
    ``J_i``; each ``lam_j``/``mu_j`` derivative is computed once.
    """
    if state.n != layout.n or state.m != layout.m:
        raise ValueError("state does not match the agent layout")
    loop = DecentralizedLoop(layout, params, plan, discontinuous)
    return SolverState(*loop.rates(state.x, state.lam, state.xi, state.mu, feedback, probe_vector(plan, t)))


@dataclass
class ConsensusLoop:
    """Consensus-based distributed loop; the auxiliary state is ``p`` (one entry per agent)."""

    layout: AgentLayout
    graph: CommGraph
    params: SolverParams
    plan: ProbingPlan
    discontinuous: bool = False
    zeroth_order: bool = field(default=True, init=False)
    iterate_set: ProjectableSet = field(init=False)

    def __post_init__(self):
        self.layout.check_plan(self.plan)
        if self.graph.N != self.layout.N:
            raise ValueError(f"graph has {self.graph.N} nodes, layout has {self.layout.N} agents")
        rep = check_graph(self.graph)
        if not rep.ok:
            raise ValueError("communication graph must be weight-balanced and strongly connected: " + "; ".join(rep.lines()[1:]))
        self.iterate_set = shrink(self.layout.primal_set, self.plan.eps_a)
        self._agent = self.layout.agent_of()
        self._owner = np.array(self.layout.owner, dtype=int)
        self._L = self.graph.laplacian()

    @property
    def name(self) -> str:
        return "dppdzd" if self.discontinuous else "ppdzd"

    @property
    def aux_size(self) -> int:
        return self.layout.N

    def initial_aux(self, aux=None) -> np.ndarray:
        if aux is None:
            return np.zeros(self.layout.N)
        p = aux.p if isinstance(aux, ConsensusState) else aux
        return ConsensusState(p).p.copy()

    def measure(self, plant, x_hat, t):
        return plant.evaluate_local(x_hat, t)

    def local_values(self, lam, fb: LocalFeedback) -> np.ndarray:
        """``f_i + lam_i.g_i`` with ``lam_i`` the duals of the constraints agent ``i`` owns."""
        return fb.f_parts + np.bincount(self._owner, weights=lam * fb.g_vals, minlength=self.layout.N)

    def rates(self, x, lam, xi, mu, sample, d, p):
        fb = _local_feedback(sample)
        N = self.layout.N
        dx, dl = _primal_dual(x, lam, xi, mu, self.params, self.iterate_set, self.discontinuous)
        y = self.local_values(lam, fb) - p
        if not np.all(np.isfinite(y)):
            raise FloatingPointError("nonfinite plant feedback")
        dp = (self._L @ y) / self.graph.eps_p
        dxi = (N * y[self._agent] * d / (self.plan.eps_a * self.plan.eta_d) - xi) / self.params.eps_g
        dmu = (fb.g_vals - mu) / self.params.eps_g
        return dx, dl, dxi, dmu, dp


def consensus_step(graph: CommGraph, layout: AgentLayout, state: SolverState, cstate: ConsensusState,
                   feedback: LocalFeedback, t: float, params: SolverParams, plan: ProbingPlan,
                   discontinuous: bool = False) -> tuple[SolverState, np.ndarray]:
    """Derivative of the consensus loop: ``(state derivative, p derivative)``."""
    loop = ConsensusLoop(layout, graph, params, plan, discontinuous)
    dx, dl, dxi, dmu, dp = loop.rates(state.x, state.lam, state.xi, state.mu, feedback, probe_vector(plan, t), cstate.p)
    return SolverState(dx, dl, dxi, dmu), dp
