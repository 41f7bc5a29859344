"""Branch-and-bound over interference space.

Rectangles ``[i_min, i_max]`` of interference levels are bounded by a convex
problem: the cost with interference frozen at ``i_min`` over covariances
whose interference stays inside the rectangle.  The minimizer, evaluated with
its true interference, gives the upper bound.
"""

from __future__ import annotations

import heapq
import itertools
import json
import logging
import time
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

DEFAULT_EPS = 1e-3
DEFAULT_MAX_NODES = 50_000
DEGENERATE_EDGE = 1e-12


@dataclass
class Rectangle:
    lo: np.ndarray
    hi: np.ndarray
    depth: int = 0
    node_id: int = 0
    parent: int = -1
    L_B: float = -np.inf
    U_B: float = np.inf
    Q: Optional[CovariancePoint] = field(default=None, repr=False)
    parent_L: float = -np.inf
    status: str = "unbounded"
    iterations: int = 0

    def edges(self, scale: np.ndarray) -> np.ndarray:
        """Edge lengths normalized by the root rectangle's edges."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(scale > 0, (self.hi - self.lo) / scale, 0.0)

    def longest_edge(self, scale) -> float:
        e = self.edges(scale)
        return float(e.max()) if e.size else 0.0

    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def contains(self, i, atol=0.0) -> bool:
        i = np.asarray(i)
        return bool(np.all(i >= self.lo - atol) and np.all(i <= self.hi + atol))


class Partition:
    """Live rectangles in a heap keyed by (L_B, -longest edge, FIFO)."""

    def __init__(self, scale: np.ndarray):
        self.scale = scale
        self._heap = []
        self._count = itertools.count()
        self.incumbent_U = np.inf
        self.incumbent_Q: Optional[CovariancePoint] = None
        self.incumbent_node = -1
        self.closed_L = np.inf  # min L_B over pruned or converged leaves
        self.nodes_bounded = 0
        self.nodes_pruned = 0
        self.solver_iterations = 0
        self.polished = 0

    def __len__(self):
        return len(self._heap)

    def push(self, rect: Rectangle) -> None:
        key = (rect.L_B, -rect.longest_edge(self.scale), next(self._count))
        heapq.heappush(self._heap, (key, rect))

    def peek(self) -> Rectangle:
        return self._heap[0][1]

    def pop(self) -> Rectangle:
        return heapq.heappop(self._heap)[1]

    def rectangles(self):
        return [r for _, r in self._heap]

    def lower(self) -> float:
        live = self._heap[0][1].L_B if self._heap else np.inf
        return min(live, self.closed_L)

    def offer(self, rect: Rectangle) -> bool:
        if rect.U_B < self.incumbent_U:
            self.incumbent_U = rect.U_B
            self.incumbent_Q = rect.Q
            self.incumbent_node = rect.node_id
            return True
        return False

    def close(self, rect: Rectangle) -> None:
        if np.isfinite(rect.L_B):
            self.closed_L = min(self.closed_L, rect.L_B)

    def prune(self, eps: float) -> None:
        keep = []
        for key, r in self._heap:
            if r.L_B >= self.incumbent_U - eps:
                self.nodes_pruned += 1
                self.close(r)
            else:
                keep.append((key, r))
        if len(keep) != len(self._heap):
            heapq.heapify(keep)
            self._heap = keep


def select(partition: Partition) -> Rectangle:
    """Live rectangle with least lower bound (ties: longer edge, then FIFO)."""
    if not len(partition):
        raise IndexError("partition is empty; the search has terminated")
    return partition.pop()


def branch(rect: Rectangle, scale: np.ndarray) -> tuple[Rectangle, Rectangle]:
    """Bisect the longest normalized edge (lowest index on ties)."""
    e = rect.edges(scale)
    if e.size == 0 or e.max() < DEGENERATE_EDGE:
        raise ValueError("degenerate rectangle")
    d = int(np.argmax(e))
    mid = 0.5 * (rect.lo[d] + rect.hi[d])
    hi1 = rect.hi.copy()
    hi1[d] = mid
    lo2 = rect.lo.copy()
    lo2[d] = mid
    kids = (
        Rectangle(rect.lo.copy(), hi1, rect.depth + 1, parent=rect.node_id, parent_L=rect.L_B),
        Rectangle(lo2, rect.hi.copy(), rect.depth + 1, parent=rect.node_id, parent_L=rect.L_B),
    )
    return kids


def bound(rect: Rectangle, inst: NetworkInstance, util: UtilitySpec, cons: ConstraintSet,
          tol_kkt: float = cc.TOL_KKT, warm: Optional[CovariancePoint] = None) -> Rectangle:
    """Fill in ``L_B``, ``U_B`` and the candidate covariance of ``rect``."""
    sub = cc.ConvexSubproblem(inst, util, cons, i_fix=rect.lo, box_lo=rect.lo,
                              box_hi=rect.hi, Q0=warm)
    res = cc.solve(sub, tol_kkt=tol_kkt)
    rect.iterations = res.iterations
    if res.status == cc.Status.INFEASIBLE:
        rect.L_B = rect.U_B = np.inf
        rect.Q = None
        rect.status = "infeasible"
        return rect
    rect.Q = res.Q
    rect.U_B = objective(inst, util, res.Q)
    if res.status == cc.Status.MAX_ITER:
        log.warning("bounding node %d hit the iteration cap; inheriting parent bound",
                    rect.node_id)
        rect.L_B = rect.parent_L
        rect.status = "max_iter"
    else:
        rect.L_B = res.lower_bound
        rect.status = "optimal"
    return rect


def refine(inst: NetworkInstance, util: UtilitySpec, cons: ConstraintSet, Q: CovariancePoint,
           max_rounds: int = 20, tol: float = 1e-9,
           tol_kkt: float = cc.TOL_KKT) -> tuple[CovariancePoint, float]:
    """Monotone local improvement of a feasible point.

    With ``i* = f_i(Q)``, any ``Q'`` with ``f_i(Q') <= i*`` satisfies
    ``f(Q', f_i(Q')) <= f(Q', i*)``, so minimizing ``f(., i*)`` over that set
    never increases the true cost.  Repeats until the gain drops below ``tol``.
    """
    best = objective(inst, util, Q)
    for _ in range(max_rounds):
        i_star = interference_map(inst, Q)
        sub = cc.ConvexSubproblem(inst, util, cons, i_fix=i_star,
                                  box_lo=np.zeros_like(i_star), box_hi=i_star)
        res = cc.solve(sub, tol_kkt=tol_kkt)
        if res.Q is None:
            break
        val = objective(inst, util, res.Q)
        if val >= best - tol:
            if val < best:
                Q, best = res.Q, val
            break
        Q, best = res.Q, val
    return Q, best


POLISH_MODES = ("none", "refine", "local")
POLISH_OUTER = 20


def polish_point(inst, util, cons, Q, box, mode="local", tol_kkt=cc.TOL_KKT):
    """Improve a feasible point for use as incumbent; never returns a worse one.

    ``"refine"`` runs :func:`refine`; ``"local"`` follows it with a short
    pricing run started from the point's own interference and prices.
    """
    from .pricing import run_pricing

    best_Q, best = Q, objective(inst, util, Q)
    if mode == "none":
        return best_Q, best
    Qr, val = refine(inst, util, cons, Q, tol_kkt=tol_kkt)
    if val < best:
        best_Q, best = Qr, val
    if mode == "local":
        i0 = box.clamp(interference_map(inst, best_Q))
        lam0 = cost_gradient_i(inst, util, best_Q, i0)
        try:
            pr = run_pricing(inst, util, cons, lam0=lam0, i0=i0, box=box,
                             max_outer=POLISH_OUTER, tol_kkt=tol_kkt, with_kkt=False)
        except RuntimeError:
            pr = None
        if pr is not None and pr.Q is not None and pr.cost < best:
            best_Q, best = pr.Q, pr.cost
    return best_Q, best


@dataclass
class BBResult:
    Q: Optional[CovariancePoint]
    cost: float
    L_final: float
    U_final: float
    gap: float
    converged: bool
    nodes: int
    stats: dict
    history: list = field(default_factory=list, repr=False)

    @property
    def sum_rate(self) -> float:
        return -self.cost


def run_bb(inst: NetworkInstance, util: UtilitySpec, cons: ConstraintSet,
           eps: float = DEFAULT_EPS, max_nodes: int = DEFAULT_MAX_NODES,
           box: Optional[InterferenceMap] = None, tol_kkt: float = cc.TOL_KKT,
           trace: Optional[Callable[[dict], None]] = None,
           keep_history: bool = False, polish: str = "local") -> BBResult:
    """Search until ``U - L <= eps`` or ``max_nodes`` rectangles have been bounded.

    ``trace`` receives one record per bounded rectangle.  With
    ``keep_history`` the per-iteration ``(L_t, U_t)`` pairs are returned.
    Every new incumbent is passed through :func:`polish_point` with mode
    ``polish`` before being stored; rectangle labels are not affected.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if polish not in POLISH_MODES:
        raise ValueError(f"polish must be one of {POLISH_MODES}")
    red, rcons, fixed = pin_zero_budgets(inst, cons)
    if fixed:
        res = run_bb(red, util, rcons, eps, max_nodes, box, tol_kkt, trace, keep_history, polish)
        if res.Q is not None:
            res.Q = res.Q.with_zero_blocks(fixed)
        return res
    t_start = time.perf_counter()
    if box is None:
        box = interference_box(inst, cons)
    scale = box.i_max - box.i_min
    part = Partition(scale)
    ids = itertools.count()
    history = []

    def evaluate(rect, warm=None):
        rect.node_id = next(ids)
        t0 = time.perf_counter()
        bound(rect, inst, util, cons, tol_kkt, warm)
        part.nodes_bounded += 1
        part.solver_iterations += rect.iterations
        if trace is not None:
            trace({
                "node": rect.node_id, "parent": rect.parent, "depth": rect.depth,
                "lo": rect.lo.tolist(), "hi": rect.hi.tolist(),
                "L_B": _num(rect.L_B), "U_B": _num(rect.U_B), "parent_L": _num(rect.parent_L),
                "status": rect.status, "wall": time.perf_counter() - t0,
            })
        if rect.Q is not None and part.offer(rect) and polish != "none":
            Qp, val = polish_point(inst, util, cons, rect.Q, box, polish, tol_kkt)
            if val < part.incumbent_U:
                part.incumbent_U, part.incumbent_Q = val, Qp
                part.polished += 1
        return rect

    root = evaluate(Rectangle(box.i_min.copy(), box.i_max.copy()))
    if np.isfinite(root.L_B):
        part.push(root)
    converged = False
    while True:
        part.prune(eps)
        L_t, U_t = part.lower(), part.incumbent_U
        if keep_history:
            history.append((L_t, U_t))
        if U_t - L_t <= eps or not len(part):
            converged = U_t - L_t <= eps
            break
        if part.nodes_bounded >= max_nodes:
            break
        rect = select(part)
        if rect.longest_edge(scale) < DEGENERATE_EDGE:
            part.close(rect)
            continue
        for kid in branch(rect, scale):
            evaluate(kid, warm=rect.Q)
            if np.isfinite(kid.L_B):
                if kid.L_B >= part.incumbent_U - eps:
                    part.nodes_pruned += 1
                    part.close(kid)
                else:
                    part.push(kid)

    L_final = min(part.lower(), part.incumbent_U)
    U_final = part.incumbent_U
    stats = {
        "nodes_bounded": part.nodes_bounded,
        "nodes_pruned": part.nodes_pruned,
        "live": len(part),
        "solver_iterations": part.solver_iterations,
        "incumbent_node": part.incumbent_node,
        "polished": part.polished,
        "wall_time": time.perf_counter() - t_start,
        "i_max": box.i_max.tolist(),
    }
    return BBResult(part.incumbent_Q, U_final, L_final, U_final, U_final - L_final,
                    converged, part.nodes_bounded, stats, history)


def rank_one_findings(Q: CovariancePoint, rtol: float = 1e-4) -> list:
    """Blocks whose second eigenvalue exceeds ``rtol * trace``."""
    out = []
    for k, b in enumerate(Q.blocks):
        for l, q in enumerate(b):
            ev = np.linalg.eigvalsh(q)
            tr = max(ev.sum(), 0.0)
            if q.shape[0] > 1 and tr > 0 and ev[-2] > rtol * tr:
                out.append((k, l, float(ev[-2] / tr)))
    return out


def _num(x):
    x = float(x)
    return x if np.isfinite(x) else None


def jsonl_writer(fh):
    def write(rec):
        fh.write(json.dumps(rec) + "\n")
    return write
