"""Globally optimal linear precoding for MISO broadcast and interference channels.

Branch-and-bound over interference levels (:mod:`misobb.bb`), a convex
barrier engine (:mod:`misobb.convexcore`), an interference pricing iteration
(:mod:`misobb.pricing`) and reference oracles (:mod:`misobb.oracle`).
"""

from ._core import BACKEND
from .bb import BBResult, Rectangle, branch, bound, run_bb, select
from .convexcore import ConvexSubproblem, SolveResult, Status, maximize_linear, phase1, solve
from .model import (
    ConstraintSet,
    CovariancePoint,
    InstanceError,
    InterferenceMap,
    NetworkInstance,
    PowerConstraint,
    UtilitySpec,
    cost,
    cost_gradient_i,
    interference_box,
    interference_map,
    make_bc,
    make_ic,
    objective,
    rates,
)
from .oracle import GridSpec, dpc_sum_capacity, grid_search, waterfilling_decoupled
from .pricing import PricingState, kkt_residual, run_pricing

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BBResult", "ConstraintSet", "ConvexSubproblem", "CovariancePoint", "GridSpec",
    "InstanceError", "InterferenceMap", "NetworkInstance", "PowerConstraint", "PricingState",
    "Rectangle", "SolveResult", "Status", "UtilitySpec", "bound", "branch", "cost",
    "cost_gradient_i", "dpc_sum_capacity", "grid_search", "interference_box",
    "interference_map", "kkt_residual", "make_bc", "make_ic", "maximize_linear", "objective",
    "phase1", "rates", "run_bb", "run_pricing", "select", "solve", "waterfilling_decoupled",
]
