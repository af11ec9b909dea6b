"""Projected primal-dual zeroth-order dynamics for black-box constrained optimization."""

from .dynamics import (
    ClosedLoop,
    Feedback,
    GradientSample,
    KKTResidual,
    SolverParams,
    SolverState,
    dppdgd_rhs,
    dppdzd_rhs,
    gradient_estimate_oracle,
    kkt_residual,
    lagrangian,
    make_dynamics,
    ppdgd_rhs,
    ppdzd_rhs,
)
from .integrator import IntegrationAborted, IntegrationConfig, Trajectory, integrate, summarize
from .probing import ProbingPlan, SignalKind, common_period, probe_vector, signal_value, validate_orthogonality
from .sets import Ball, Box, CappedOrthant, Halfspaces, NonnegativeOrthant, Product, contains, project_point, project_tangent_cone, shrink

__version__ = "0.1.0"
