"""Log-barrier interior point solver for the convex inner problems.

Every inner problem here has the form::

    minimize    cost(Q, i_fix) + lam @ f_i(Q)
    subject to  Q_kl PSD,  sum Tr(A Q) <= P,  b_lo <= f_i(Q) <= b_hi

Hermitian blocks are parametrized by real vectors and enforced through
``-log det`` of their real symmetric embedding; scalar constraints through
``-log(slack)``.  The barrier weight grows tenfold per outer step until the
duality gap bound ``m / t`` drops below the tolerance.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import _core
from . import _hermitian as herm
from ._core._fallback import newton_direction
from .model import (
    ConstraintSet,
    CovariancePoint,
    NetworkInstance,
    UtilitySpec,
    cost,
    interference_map,
)

log = logging.getLogger(__name__)

TOL_KKT = 1e-8
TOL_FEAS = 1e-9
MU0 = 1.0
MU_FACTOR = 10.0
NEWTON_TOL = 1e-10
MAX_NEWTON_PER_CENTER = 100
MAX_ITER = 2000
LS_ALPHA, LS_BETA, MAX_BACKTRACK = 0.3, 0.5, 60
START_FRACTION = 1e-3
PHASE1_MARGIN = 1e-10
EQ_WIDTH = 1e-12


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITER = "max_iter"


@dataclass
class BarrierOutcome:
    y: np.ndarray
    status: Status
    gap: float
    iterations: int
    stationarity: float
    t: float


@dataclass
class SolveResult:
    """Outcome of :func:`solve`.

    ``lower_bound`` is ``objective - gap``: a certified lower bound on the
    optimal value of the subproblem, up to centering error.
    """

    Q: CovariancePoint | None
    objective: float
    status: Status
    kkt_residual: float
    iterations: int
    lower_bound: float = np.inf
    gap: float = np.inf
    infeasibility: float = 0.0
    x: np.ndarray | None = field(default=None, repr=False)


@dataclass
class ConvexSubproblem:
    inst: NetworkInstance
    util: UtilitySpec
    cons: ConstraintSet
    i_fix: np.ndarray
    lam: np.ndarray | None = None
    box_lo: np.ndarray | None = None
    box_hi: np.ndarray | None = None
    Q0: CovariancePoint | None = None

    def __post_init__(self):
        L = self.inst.L
        self.i_fix = np.asarray(self.i_fix, float).reshape(L)
        if self.lam is not None:
            self.lam = np.asarray(self.lam, float).reshape(L)
        if self.box_lo is not None:
            self.box_lo = np.asarray(self.box_lo, float).reshape(L)
        if self.box_hi is not None:
            self.box_hi = np.asarray(self.box_hi, float).reshape(L)
        if self.box_lo is not None and self.box_hi is not None:
            if np.any(self.box_lo > self.box_hi):
                raise ValueError("box lower corner exceeds upper corner")


# --------------------------------------------------------------------------
# variable layout and linear functionals


class Layout:
    """Offsets of each ``(k, l)`` Hermitian block in the real vector ``x``."""

    def __init__(self, inst: NetworkInstance):
        self.inst = inst
        self.offsets = {}
        off = 0
        for k in range(inst.K):
            for l in range(inst.L_C):
                self.offsets[k, l] = off
                off += inst.N[k] ** 2
        self.n = off

    def span(self, k, l):
        o = self.offsets[k, l]
        return slice(o, o + self.inst.N[k] ** 2)

    def to_Q(self, x) -> CovariancePoint:
        inst = self.inst
        blocks = []
        for k in range(inst.K):
            b = np.empty((inst.L_C, inst.N[k], inst.N[k]), complex)
            for l in range(inst.L_C):
                b[l] = herm.to_matrix(x[self.span(k, l)], inst.N[k])
            blocks.append(b)
        return CovariancePoint(tuple(blocks))

    def to_x(self, Q: CovariancePoint) -> np.ndarray:
        x = np.zeros(self.n)
        for (k, l), o in self.offsets.items():
            x[self.span(k, l)] = herm.from_matrix(Q.blocks[k][l])
        return x

    def signal_rows(self) -> np.ndarray:
        inst = self.inst
        T = np.zeros((inst.L, self.n))
        for k in range(inst.K):
            for l in range(inst.L_C):
                h = inst.channels[k][k, l]
                T[inst.component(k, l), self.span(k, l)] = herm.coeffs(np.outer(h.conj(), h))
        return T

    def interference_rows(self) -> np.ndarray:
        inst = self.inst
        Gi = np.zeros((inst.L, self.n))
        for k in range(inst.K):
            for l in range(inst.L_C):
                row = Gi[inst.component(k, l)]
                for j in range(inst.K):
                    if j != k:
                        h = inst.channels[j][k, l]
                        row[self.span(j, l)] += herm.coeffs(np.outer(h.conj(), h))
        return Gi

    def budget_rows(self, cons: ConstraintSet) -> tuple[np.ndarray, np.ndarray]:
        G = np.zeros((len(cons), self.n))
        P = np.zeros(len(cons))
        for d, con in enumerate(cons):
            for k in range(self.inst.K):
                for l in range(self.inst.L_C):
                    G[d, self.span(k, l)] = herm.coeffs(con.A[k][l])
            P[d] = con.P
        return G, P

    def psd_blocks(self):
        out = []
        for k in range(self.inst.K):
            N = self.inst.N[k]
            F = herm.realified_basis(N)
            for l in range(self.inst.L_C):
                o = self.offsets[k, l]
                out.append((np.arange(o, o + N * N), F, np.zeros((2 * N, 2 * N)), 0.5, 0, N))
        return out

    def start_point(self, cons: ConstraintSet, fraction: float = START_FRACTION) -> np.ndarray:
        """``delta * I`` per block with every budget loaded to ``fraction``."""
        G, P = self.budget_rows(cons)
        eye = np.zeros(self.n)
        for (k, l), o in self.offsets.items():
            eye[o : o + self.inst.N[k]] = 1.0
        load = G @ eye
        with np.errstate(divide="ignore"):
            delta = np.min(np.where(load > 0, P / load, np.inf))
        if not np.isfinite(delta):
            delta = 1.0
        return fraction * delta * eye


# --------------------------------------------------------------------------
# generic barrier machinery


def _normalize_rows(G, h):
    norms = np.linalg.norm(G, axis=1)
    norms[norms == 0] = 1.0
    return G / norms[:, None], h / norms


def _block_min_eig(prob, y):
    if prob.idx.shape[0] == 0:
        return np.inf
    ye = np.append(y, 0.0)
    R = prob.R0 + np.einsum("bp,bpij->bij", ye[prob.idx], prob.F)
    ev = np.inf
    for b in range(R.shape[0]):
        if prob.bobj[b] == 0:
            db = prob.bdim[b]
            ev = min(ev, np.linalg.eigvalsh(R[b, :db, :db]).min())
    return ev


def stationarity(prob, y, t) -> float:
    """Lagrangian gradient norm in the local (Hessian-dual) metric.

    Equals ``newton_decrement / sqrt(t)``.  The Euclidean norm hits a
    roundoff floor near 1e-8 in the nearly singular directions of rank
    deficient optima, so it is not used.
    """
    g, H = _core.derivatives(prob, y, t)
    dy = newton_direction(g, H)
    return float(np.sqrt(max(-g @ dy, 0.0) / t))


def barrier_minimize(prob, y0, tol=TOL_KKT, max_iter=MAX_ITER, mu0=MU0, stop=None) -> BarrierOutcome:
    """Path-following from ``y0`` (strictly feasible) until ``m / t <= tol``.

    ``stop(y, t)`` may end the run early after any centering step.
    """
    y = np.array(y0, float)
    t = 1.0 / mu0
    m = prob.m
    total = 0
    status = Status.OPTIMAL
    while True:
        y, it, lam2, st = _core.center(
            prob, y, t, NEWTON_TOL, MAX_NEWTON_PER_CENTER, LS_ALPHA, LS_BETA, MAX_BACKTRACK
        )
        total += it
        if st == _core.STALL and lam2 > 1e-6:
            log.debug("line search stalled at t=%g with decrement %g", t, lam2)
        if stop is not None and stop(y, t):
            break
        if m / t <= tol or m == 0:
            break
        if total >= max_iter:
            status = Status.MAX_ITER
            break
        t *= MU_FACTOR
    return BarrierOutcome(y, status, m / t, total, stationarity(prob, y, t), t)


def find_interior(prob, y_guess, max_iter=MAX_ITER):
    """Strictly feasible point for ``prob``, or ``None`` with a certificate.

    Returns ``(y, value)`` where ``value`` is the auxiliary slack variable:
    negative when a point was found, otherwise a lower bound (positive)
    or estimate (non-negative, empty interior) of the auxiliary optimum.
    """
    y_guess = np.asarray(y_guess, float)
    if np.isfinite(_core.evaluate(prob, y_guess, 1.0)):
        return y_guess, -np.inf
    aux = phase1_of(prob)
    viol = 0.0
    if prob.G.shape[0]:
        viol = max(viol, float((prob.G @ y_guess - prob.h).max()))
    viol = max(viol, -_block_min_eig(prob, y_guess))
    y1 = np.append(y_guess, max(viol, 0.0) + 1.0)
    m1 = aux.m
    state = {}

    def stop(y, t):
        s = y[-1]
        if s < -PHASE1_MARGIN and np.isfinite(_core.evaluate(prob, y[:-1], 1.0)):
            state["found"] = True
            return True
        if s - m1 / t > 0 or m1 / t < 1e-13:
            return True
        return False

    out = barrier_minimize(aux, y1, tol=1e-13, max_iter=max_iter, stop=stop)
    if state.get("found"):
        return out.y[:-1], float(out.y[-1])
    s = float(out.y[-1])
    return None, max(s - aux.m / out.t, s) if s > 0 else max(s, 0.0)


def phase1_of(prob):
    return _core.phase1_problem(prob)


def eliminate_equalities(prob, E, e):
    """Restrict to ``E x = e``; returns ``(reduced, x0, Z)`` or ``None`` if inconsistent."""
    x0, *_ = np.linalg.lstsq(E, e, rcond=None)
    if np.linalg.norm(E @ x0 - e) > 1e-9 * (1.0 + np.linalg.norm(e)):
        return None
    Z = scipy.linalg.null_space(E)
    return _core.affine_substitute(prob, x0, Z), x0, Z


# --------------------------------------------------------------------------
# assembly


@dataclass
class _Assembled:
    prob: object
    layout: Layout
    x0: np.ndarray | None = None
    Z: np.ndarray | None = None
    infeasible: bool = False

    def to_x(self, y):
        if self.Z is None:
            return np.asarray(y, float)
        return self.x0 + self.Z @ y

    def to_y(self, x):
        if self.Z is None:
            return np.asarray(x, float)
        return self.Z.T @ (x - self.x0)


def assemble(sub: ConvexSubproblem) -> _Assembled:
    inst = sub.inst
    lay = Layout(inst)
    T = lay.signal_rows()
    Gi = lay.interference_rows()
    Gb, Pb = lay.budget_rows(sub.cons)
    rows, rhs, eq_rows, eq_rhs = [Gb], [Pb], [], []
    lo = sub.box_lo if sub.box_lo is not None else np.zeros(inst.L)
    hi = sub.box_hi if sub.box_hi is not None else np.full(inst.L, np.inf)
    infeasible = False
    for comp in range(inst.L):
        g = Gi[comp]
        if not np.any(g):
            # identically zero interference
            if lo[comp] > 0 or hi[comp] < 0:
                infeasible = True
            continue
        if np.isfinite(hi[comp]) and hi[comp] - lo[comp] <= EQ_WIDTH * max(1.0, abs(hi[comp])):
            eq_rows.append(g)
            eq_rhs.append(0.5 * (lo[comp] + hi[comp]))
            continue
        if np.isfinite(hi[comp]):
            rows.append(g[None])
            rhs.append([hi[comp]])
        if lo[comp] > 0:
            rows.append(-g[None])
            rhs.append([-lo[comp]])
    G, h = _normalize_rows(np.vstack(rows), np.concatenate([np.ravel(r) for r in rhs]))
    c = np.zeros(lay.n) if sub.lam is None else Gi.T @ sub.lam
    w = sub.util.w(inst.K)
    prob = _core.BarrierProblem(
        n=lay.n, c=c, T=T, t0=np.zeros(inst.L),
        denom=(inst.noise.reshape(-1) + sub.i_fix),
        user=np.repeat(np.arange(inst.K), inst.L_C), weights=w, alpha=sub.util.alpha,
        G=G, h=h, **_core.pack_blocks(lay.n, lay.psd_blocks()),
    )
    if infeasible:
        return _Assembled(prob, lay, infeasible=True)
    if eq_rows:
        red = eliminate_equalities(prob, np.array(eq_rows), np.array(eq_rhs))
        if red is None:
            return _Assembled(prob, lay, infeasible=True)
        rprob, x0, Z = red
        return _Assembled(rprob, lay, x0, Z)
    return _Assembled(prob, lay)


def _start_candidates(sub, asm):
    lay = asm.layout
    cands = []
    if sub.Q0 is not None:
        cands.append(asm.to_y(lay.to_x(sub.Q0)))
    x = lay.start_point(sub.cons)
    # shrink so upper interference rows stay slack
    if sub.box_hi is not None:
        Gi = lay.interference_rows()
        load = Gi @ x
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(load > 0, 0.5 * sub.box_hi / load, np.inf)
        r = float(np.min(ratio))
        if r < 1.0:
            x = x * max(r, 0.0)
    cands.append(asm.to_y(x))
    return cands


def phase1(sub: ConvexSubproblem):
    """Strictly feasible covariance point for ``sub`` or an infeasibility value.

    Returns ``(Q, value)``; ``Q`` is ``None`` when infeasible and ``value``
    is then the (non-negative) auxiliary optimum estimate.
    """
    asm = assemble(sub)
    if asm.infeasible:
        return None, np.inf
    y, val = _find_start(sub, asm)
    if y is None:
        return None, val
    return asm.layout.to_Q(asm.to_x(y)), val


def _find_start(sub, asm):
    cands = _start_candidates(sub, asm)
    for y in cands:
        if np.isfinite(_core.evaluate(asm.prob, y, 1.0)):
            return y, -np.inf
    return find_interior(asm.prob, cands[-1])


def solve(sub: ConvexSubproblem, tol_kkt: float = TOL_KKT, max_iter: int = MAX_ITER) -> SolveResult:
    """Minimize ``cost(Q, i_fix) + lam @ f_i(Q)`` over the constraint set and box."""
    asm = assemble(sub)
    if asm.infeasible:
        return SolveResult(None, np.inf, Status.INFEASIBLE, np.inf, 0, np.inf, np.inf, np.inf)
    y0, val = _find_start(sub, asm)
    if y0 is None:
        return SolveResult(None, np.inf, Status.INFEASIBLE, np.inf, 0, np.inf, np.inf, val)
    out = barrier_minimize(asm.prob, y0, tol=tol_kkt, max_iter=max_iter)
    x = asm.to_x(out.y)
    Q = asm.layout.to_Q(x)
    obj = cost(sub.inst, sub.util, Q, sub.i_fix)
    if sub.lam is not None:
        obj += float(sub.lam @ interference_map(sub.inst, Q))
    kkt = max(out.stationarity, out.gap)
    status = out.status
    if status == Status.OPTIMAL and kkt > tol_kkt:
        log.debug("stationarity %.3g above tolerance %.3g", out.stationarity, tol_kkt)
    return SolveResult(Q, obj, status, kkt, out.iterations, obj - out.gap, out.gap, 0.0, x)


def subproblem_objective(sub: ConvexSubproblem, Q: CovariancePoint) -> float:
    val = cost(sub.inst, sub.util, Q, sub.i_fix)
    if sub.lam is not None:
        val += float(sub.lam @ interference_map(sub.inst, Q))
    return val


def maximize_linear(inst: NetworkInstance, cons: ConstraintSet, comp: int,
                    tol: float = TOL_KKT) -> float:
    """Certified upper estimate of ``max f_i(Q)[comp]`` over the constraint set.

    The objective is normalized by a crude scale so ``tol`` acts relatively;
    the returned value is the achieved maximum plus the duality gap bound.
    """
    lay = Layout(inst)
    g = lay.interference_rows()[comp]
    if not np.any(g):
        return 0.0
    Gb, Pb = lay.budget_rows(cons)
    x_start = lay.start_point(cons)
    scale = max(float(g @ x_start) / START_FRACTION, 1e-300)
    G, h = _normalize_rows(Gb, Pb)
    prob = _core.BarrierProblem(
        n=lay.n, c=-g / scale, T=np.zeros((0, lay.n)), t0=[], denom=[], user=[],
        weights=[], alpha=0.0, G=G, h=h, **_core.pack_blocks(lay.n, lay.psd_blocks()),
    )
    y0, _ = find_interior(prob, x_start)
    if y0 is None:
        raise ValueError("constraint set has no interior")
    out = barrier_minimize(prob, y0, tol=tol)
    return float(g @ out.y + out.gap * scale)
