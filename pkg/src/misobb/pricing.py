"""Interference pricing: a fast stationary-point iteration.

The coupled problem is split as ``min f(Q, i)`` subject to ``i = f_i(Q)``.
Prices ``lam`` stand in for the multiplier of that constraint:

* inner loop: with ``lam`` fixed, solve ``min f(Q, i_hat) + lam @ f_i(Q)``
  and set ``i_hat = f_i(Q)`` until the posited interference is reproduced;
* outer loop: set ``lam = df/di`` at the inner fixed point until the prices
  reproduce themselves.

Convergence is not guaranteed; the returned ``converged`` flag says whether
both fixed points were reached.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import convexcore as cc
from .model import (
    ConstraintSet,
    CovariancePoint,
    InterferenceMap,
    NetworkInstance,
    UtilitySpec,
    cost_gradient_i,
    interference_box,
    interference_map,
    objective,
    pin_zero_budgets,
)

log = logging.getLogger(__name__)

EPS_LAMBDA = 1e-6
EPS_I = 1e-6
MAX_INNER = 200
MAX_OUTER = 100


@dataclass
class PricingState:
    lam: np.ndarray
    i_hat: np.ndarray
    Q: Optional[CovariancePoint] = None
    outer: int = 0
    inner: int = 0


@dataclass
class PricingResult:
    Q: CovariancePoint
    cost: float
    converged: bool
    iterations: int
    inner_iterations: int
    state: PricingState
    trace: list = field(default_factory=list, repr=False)
    kkt: float = np.nan

    @property
    def sum_rate(self) -> float:
        return -self.cost


def _step3(inst, util, cons, i_hat, lam, tol_kkt):
    sub = cc.ConvexSubproblem(inst, util, cons, i_fix=i_hat, lam=lam)
    res = cc.solve(sub, tol_kkt=tol_kkt)
    if res.Q is None:
        raise RuntimeError("pricing subproblem has no feasible point")
    return sub, res


def run_pricing(inst: NetworkInstance, util: UtilitySpec, cons: ConstraintSet,
                lam0=1.0, i0=None, eps_lambda: float = EPS_LAMBDA, eps_i: float = EPS_I,
                max_outer: int = MAX_OUTER, max_inner: int = MAX_INNER, theta: float = 1.0,
                box: Optional[InterferenceMap] = None, tol_kkt: float = cc.TOL_KKT,
                trace: Optional[Callable[[dict], None]] = None,
                with_kkt: bool = True) -> PricingResult:
    """Run the nested price / interference iteration.

    Parameters
    ----------
    lam0, i0 : scalar or array of length ``inst.L``
        Initial prices and posited interference.  ``i0=None`` uses the
        noise powers.
    theta : float
        Damping in ``(0, 1]``; ``new = (1 - theta) * old + theta * target``.
        The default 1 is the undamped iteration.
    box : InterferenceMap, optional
        Root interference box used to clamp ``i_hat``; computed if omitted.
    trace : callable, optional
        Receives one dict per inner step.
    with_kkt : bool
        Compute :func:`kkt_residual` at the final iterate (one extra solve).
    """
    if eps_lambda <= 0 or eps_i <= 0:
        raise ValueError("tolerances must be positive")
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    red, rcons, fixed = pin_zero_budgets(inst, cons)
    if fixed:
        res = run_pricing(red, util, rcons, lam0, i0, eps_lambda, eps_i, max_outer, max_inner,
                          theta, box, tol_kkt, trace, with_kkt)
        res.Q = res.Q.with_zero_blocks(fixed)
        return res
    L = inst.L
    lam = np.broadcast_to(np.asarray(lam0, float), (L,)).copy()
    if np.any(lam < 0):
        raise ValueError("initial prices must be nonnegative")
    i_hat = inst.noise.reshape(-1).copy() if i0 is None else \
        np.broadcast_to(np.asarray(i0, float), (L,)).copy()
    if box is None:
        box = interference_box(inst, cons)
    if not box.contains(i_hat):
        log.info("initial interference clamped to the root box")
        i_hat = box.clamp(i_hat)

    state = PricingState(lam, i_hat)
    records = []
    best_Q, best_cost = None, np.inf
    converged = False
    total_inner = 0
    Q = None
    for outer in range(max_outer):
        state.outer = outer
        inner_ok = False
        for inner in range(max_inner):
            _, res = _step3(inst, util, cons, i_hat, lam, tol_kkt)
            Q = res.Q
            i_new = interference_map(inst, Q)
            res_i = float(np.linalg.norm(i_hat - i_new))
            true_cost = objective(inst, util, Q)
            if true_cost < best_cost:
                best_Q, best_cost = Q, true_cost
            total_inner += 1
            rec = {"outer": outer, "inner": inner, "cost": true_cost, "res_i": res_i,
                   "res_lambda": None}
            if res_i <= eps_i:
                inner_ok = True
                records.append(rec)
                if trace is not None:
                    trace(rec)
                break
            records.append(rec)
            if trace is not None:
                trace(rec)
            i_hat = box.clamp((1.0 - theta) * i_hat + theta * i_new)
        state.inner = total_inner
        grad = cost_gradient_i(inst, util, Q, i_hat)
        res_l = float(np.linalg.norm(lam - grad))
        records[-1]["res_lambda"] = res_l
        if inner_ok and res_l <= eps_lambda:
            converged = True
            break
        lam = (1.0 - theta) * lam + theta * grad
        state.lam = lam
    state.lam, state.i_hat, state.Q = lam, i_hat, Q

    if converged:
        out_Q, out_cost = Q, objective(inst, util, Q)
    else:
        log.info("pricing did not converge in %d outer iterations", max_outer)
        out_Q, out_cost = best_Q, best_cost
    kkt = kkt_residual(inst, util, cons, Q, i_hat, lam, tol_kkt=tol_kkt) if with_kkt else np.nan
    return PricingResult(out_Q, out_cost, converged, state.outer + 1, total_inner, state,
                         records, kkt)


def kkt_blocks(inst: NetworkInstance, util: UtilitySpec, cons: ConstraintSet,
               Q: CovariancePoint, i_hat, lam, tol_kkt: float = cc.TOL_KKT) -> np.ndarray:
    """The three residual blocks ``(a, b, c)`` of :func:`kkt_residual`."""
    i_hat = np.asarray(i_hat, float)
    lam = np.asarray(lam, float)
    sub = cc.ConvexSubproblem(inst, util, cons, i_fix=i_hat, lam=lam)
    res = cc.solve(sub, tol_kkt=tol_kkt)
    a = max(cc.subproblem_objective(sub, Q) - res.lower_bound, 0.0)
    b = float(np.linalg.norm(i_hat - interference_map(inst, Q)))
    c = float(np.linalg.norm(lam - cost_gradient_i(inst, util, Q, i_hat)))
    return np.array([a, b, c])


def kkt_residual(inst: NetworkInstance, util: UtilitySpec, cons: ConstraintSet,
                 Q: CovariancePoint, i_hat, lam, tol_kkt: float = cc.TOL_KKT) -> float:
    """Stacked stationarity residual of a pricing fixed point.

    Blocks: (a) suboptimality of ``Q`` for ``min f(Q, i_hat) + lam @ f_i(Q)``,
    certified against the solver's lower bound; (b) ``||i_hat - f_i(Q)||``;
    (c) ``||lam - df/di(Q, i_hat)||``.  Returns the Euclidean norm of the three.
    """
    return float(np.linalg.norm(kkt_blocks(inst, util, cons, Q, i_hat, lam, tol_kkt)))
