"""Reference solutions used to check the global search.

* :func:`grid_search` -- exhaustive rank-one beamformer / power grid for
  tiny instances (at most two users, four antennas in total, one carrier),
  followed by local zooming around the best grid point.
* :func:`waterfilling_decoupled` -- closed form when no cross channel exists.
* :func:`dpc_sum_capacity` -- broadcast sum capacity through the dual
  multiple-access channel.  Dirty paper coding is a nonlinear scheme, so the
  value is a reference ceiling for linear precoding, not a solution of the
  linear-precoding problem.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import _core
from . import _hermitian as herm
from . import convexcore as cc
from .model import (
    ConstraintSet,
    CovariancePoint,
    InstanceError,
    NetworkInstance,
    UtilitySpec,
    objective,
)

MAX_USERS = 2
MAX_ANTENNAS = 4
MAX_POINTS = 10 ** 8
MIN_RESOLUTION = 8
# |<v, v'>| below which two unit beams count as different zoom starts (about 18 degrees)
SEPARATION = 0.95


class OracleError(ValueError):
    """Instance outside the oracle's stated scope."""


@dataclass(frozen=True)
class GridSpec:
    """Resolution of :func:`grid_search`.

    Parameters
    ----------
    n_angle : int
        Phase samples on ``[0, 2 pi)`` per complex dimension; magnitude
        angles on ``[0, pi/2]`` use the same step (``n_angle / 4``
        intervals).  Must be a multiple of 4.
    n_pow : int
        Intervals of each user's power fraction on ``[0, 1]``.
    refine_levels, refine_points : int
        Zoom passes after the exhaustive stage; each pass lays
        ``refine_points`` samples per coordinate across one current step on
        either side of the incumbent, then halves the step.
        ``refine_levels = 0`` keeps the pure grid.
    starts : int
        Exhaustive-stage points the zoom starts from: the best one, then the
        next best whose beams differ from every point already taken
        (``|<v, v'>| < SEPARATION`` for at least one user).  Several starts
        keep the zoom from settling in a near-tied wrong basin.
    """

    n_angle: int = 32
    n_pow: int = 32
    refine_levels: int = 8
    refine_points: int = 5
    starts: int = 8

    def __post_init__(self):
        if self.n_angle < MIN_RESOLUTION or self.n_pow < MIN_RESOLUTION:
            raise ValueError(f"resolutions must be >= {MIN_RESOLUTION}")
        if self.n_angle % 4:
            raise ValueError("n_angle must be a multiple of 4")
        if self.refine_levels < 0 or (self.refine_levels and self.refine_points < 3):
            raise ValueError("refinement needs at least 3 points per coordinate")
        if self.starts < 1:
            raise ValueError("starts must be at least 1")

    @property
    def angle_step(self) -> float:
        return 2.0 * np.pi / self.n_angle

    def n_directions(self, N: int) -> int:
        return (self.n_angle // 4 + 1) ** (N - 1) * self.n_angle ** (N - 1)

    def n_points(self, N: tuple) -> int:
        """Size of the exhaustive stage."""
        dirs = int(np.prod([self.n_directions(n) for n in N]))
        return dirs * (self.n_pow + 1) ** len(N)


@dataclass
class GridResult:
    Q: CovariancePoint
    cost: float
    resolution_bound: float
    beams: tuple
    powers: np.ndarray
    n_evaluated: int

    @property
    def utility(self) -> float:
        return -self.cost


# --------------------------------------------------------------------------
# rank-one grid


def unit_vectors(theta: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Unit vectors from magnitude angles and relative phases.

    ``theta`` and ``psi`` have shape ``(M, N - 1)``; the first entry is real
    and nonnegative.  Returns ``(M, N)`` complex.
    """
    theta = np.atleast_2d(theta)
    psi = np.atleast_2d(psi)
    M, n1 = theta.shape
    v = np.ones((M, n1 + 1), complex)
    s = np.ones(M)
    for d in range(n1):
        v[:, d] = s * np.cos(theta[:, d])
        s = s * np.sin(theta[:, d])
    v[:, n1] = s
    v[:, 1:] *= np.exp(1j * psi)
    return v


def _direction_grid(N: int, spec: GridSpec):
    n_mag = spec.n_angle // 4
    mags = np.arange(n_mag + 1) * (0.5 * np.pi / n_mag)
    phases = np.arange(spec.n_angle) * spec.angle_step
    if N == 1:
        return np.zeros((1, 0)), np.zeros((1, 0))
    th = np.array(list(itertools.product(mags, repeat=N - 1)))
    ps = np.array(list(itertools.product(phases, repeat=N - 1)))
    T = np.repeat(th, len(ps), axis=0)
    P = np.tile(ps, (len(th), 1))
    return T, P


class _Evaluator:
    """Vectorized rank-one cost over (directions, power fractions)."""

    def __init__(self, inst: NetworkInstance, util: UtilitySpec, cons: ConstraintSet):
        self.inst, self.util = inst, util
        self.K = inst.K
        self.w = util.w(inst.K)
        self.noise = inst.noise[:, 0]
        self.h = [[inst.channels[j][k, 0] for k in range(inst.K)] for j in range(inst.K)]
        self.A = [[c.A[k][0] for k in range(inst.K)] for c in cons]
        self.P = np.array([c.P for c in cons])
        self.N = inst.N
        self.dims = [2 * (n - 1) for n in inst.N]

    def gains(self, j, v):
        """``|h_jk v|^2`` for every receiver ``k``: shape ``(K, M)``."""
        return np.stack([np.abs(v @ self.h[j][k]) ** 2 for k in range(self.K)])

    def loads(self, j, v):
        """``v^H A_cj v`` per constraint row: shape ``(C, M)``."""
        return np.stack([np.einsum("mi,ij,mj->m", v.conj(), a[j], v).real for a in self.A])

    def split(self, x):
        """Parameter rows ``x`` -> per-user (theta, psi) and power fractions."""
        out, o = [], 0
        for n in self.N:
            d = n - 1
            out.append((x[:, o:o + d], x[:, o + d:o + 2 * d]))
            o += 2 * d
        return out, x[:, o:o + self.K]

    def powers(self, loads, rho):
        """Sequential caps: user 1 alone, user 2 against what user 1 used."""
        p = np.zeros_like(rho)
        used = np.zeros((len(self.P), rho.shape[0]))
        for j in range(self.K):
            a = loads[j]
            with np.errstate(divide="ignore", invalid="ignore"):
                cap = np.where(a > 0, (self.P[:, None] - used) / a, np.inf).min(axis=0)
            p[:, j] = rho[:, j] * np.maximum(cap, 0.0)
            used = used + a * p[:, j]
        return p

    def cost(self, x):
        (dirs, rho) = self.split(x)
        vs = [unit_vectors(t, s) for t, s in dirs]
        g = [self.gains(j, vs[j]) for j in range(self.K)]
        loads = [self.loads(j, vs[j]) for j in range(self.K)]
        p = self.powers(loads, rho)
        f = np.zeros(x.shape[0])
        for k in range(self.K):
            interf = sum(p[:, j] * g[j][k] for j in range(self.K) if j != k)
            r = np.log1p(p[:, k] * g[k][k] / (self.noise[k] + interf))
            f -= self.w[k] * self.util.f(r)
        return f

    def point(self, x):
        (dirs, rho) = self.split(x[None])
        vs = [unit_vectors(t, s) for t, s in dirs]
        loads = [self.loads(j, vs[j]) for j in range(self.K)]
        p = self.powers(loads, rho)[0]
        beams = tuple((np.sqrt(p[j]) * vs[j][0])[None] for j in range(self.K))
        return CovariancePoint.from_beams(beams), beams, p


def _bounds(ev):
    lo, hi = [], []
    for n in ev.N:
        lo += [0.0] * (n - 1) + [-np.inf] * (n - 1)
        hi += [0.5 * np.pi] * (n - 1) + [np.inf] * (n - 1)
    lo += [0.0] * ev.K
    hi += [1.0] * ev.K
    return np.array(lo), np.array(hi)


def _distinct(order, vs, idx, limit, scan=4096):
    """First ``limit`` entries of ``order`` whose beams are mutually separated."""
    picked = []
    for n in order[:scan]:
        if all(any(abs(np.vdot(v[i[n]], v[i[m]])) < SEPARATION for v, i in zip(vs, idx))
               for m in picked):
            picked.append(n)
            if len(picked) == limit:
                break
    return picked


def _exhaustive(ev: _Evaluator, spec: GridSpec):
    """Exhaustive grid stage; returns start points ``[(x, f), ...]``, best first."""
    grids = [_direction_grid(n, spec) for n in ev.N]
    rho = np.arange(spec.n_pow + 1) / spec.n_pow
    if ev.K == 1:
        T, P = grids[0]
        x = np.array([np.concatenate([t, p, [r]])
                      for t, p in zip(T, P) for r in rho])
        f = ev.cost(x)
        k = int(np.argmin(f))
        return [(x[k], float(f[k]))]
    v1 = unit_vectors(*grids[0]) if ev.N[0] > 1 else np.ones((1, 1), complex)
    v2 = unit_vectors(*grids[1]) if ev.N[1] > 1 else np.ones((1, 1), complex)
    g1, g2 = ev.gains(0, v1), ev.gains(1, v2)
    a1, a2 = ev.loads(0, v1), ev.loads(1, v2)
    with np.errstate(divide="ignore", invalid="ignore"):
        p1max = np.where(a1 > 0, ev.P[:, None] / a1, np.inf).min(axis=0)
        p2cap = np.where(a2 > 0, ev.P[:, None] / a2, np.inf)
        p2coef = np.where(a2[:, None, :] > 0, a1[:, :, None] / a2[:, None, :], 0.0)
    alpha = float(ev.util.alpha)
    cost, i1, i2 = _core.grid_pairs(
        np.ascontiguousarray(g1[0]), np.ascontiguousarray(g1[1]),
        np.ascontiguousarray(g2[0]), np.ascontiguousarray(g2[1]),
        np.ascontiguousarray(p1max), np.ascontiguousarray(p2cap),
        np.ascontiguousarray(p2coef), float(ev.noise[0]), float(ev.noise[1]),
        float(ev.w[0]), float(ev.w[1]), alpha, spec.n_pow, float(_rate_floor()))
    B = cost.shape[1]
    order = np.argsort(cost, axis=None, kind="stable")
    ia, ib = np.divmod(np.arange(cost.size), B)
    T1, P1 = grids[0]
    T2, P2 = grids[1]
    starts = []
    for n in _distinct(order, (v1, v2), (ia, ib), spec.starts):
        a, b = ia[n], ib[n]
        x = np.concatenate([T1[a], P1[a], T2[b], P2[b], [rho[i1[a, b]], rho[i2[a, b]]]])
        starts.append((x, float(ev.cost(x[None])[0])))
    return starts


def _rate_floor():
    from .model import RATE_FLOOR
    return RATE_FLOOR


def _neighbors(x, step, lo, hi):
    rows = []
    for d in range(x.size):
        for s in (-1.0, 1.0):
            y = x.copy()
            y[d] = np.clip(x[d] + s * step[d], lo[d], hi[d])
            rows.append(y)
    return np.array(rows)


def _resolution(ev, x, f0, step, lo, hi):
    """Sum over coordinates of the worse neighbor's cost increase.

    For a locally quadratic cost with the grid minimum inside a cell this is
    at least four times the true loss to the continuous minimum.
    """
    if x.size == 0:
        return 0.0
    fn = ev.cost(_neighbors(x, step, lo, hi)).reshape(x.size, 2)
    return float(np.maximum(fn.max(axis=1) - f0, 0.0).sum())


def grid_search(inst: NetworkInstance, util: UtilitySpec, cons: ConstraintSet,
                spec: GridSpec | None = None) -> GridResult:
    """Best rank-one strategy on a grid of beam directions and power fractions.

    Directions are unit vectors with the first entry real (quadratic forms do
    not see a global phase), power fractions are taken of the largest power
    the constraints leave after the previous user.  After the exhaustive
    stage the grid is zoomed ``refine_levels`` times around each of
    ``spec.starts`` separated start points and the best result is kept.
    ``resolution_bound`` estimates the cost granularity at the final step.
    """
    spec = spec or GridSpec()
    if inst.K > MAX_USERS or sum(inst.N) > MAX_ANTENNAS or inst.L_C != 1:
        raise OracleError(
            f"grid oracle is limited to K <= {MAX_USERS}, sum(N) <= {MAX_ANTENNAS} and "
            f"L_C = 1 (got K={inst.K}, N={inst.N}, L_C={inst.L_C})"
        )
    if spec.n_points(inst.N) > MAX_POINTS:
        raise OracleError(f"grid has {spec.n_points(inst.N)} points, cap is {MAX_POINTS}")
    cons.validate(inst)
    ev = _Evaluator(inst, util, cons)
    lo, hi = _bounds(ev)
    n_eval = spec.n_points(inst.N)
    step0 = np.concatenate(
        [np.full(2 * (n - 1), spec.angle_step) for n in inst.N] + [np.full(inst.K, 1.0 / spec.n_pow)]
    )
    offsets = np.linspace(-1.0, 1.0, spec.refine_points)
    best = None
    for x, f0 in _exhaustive(ev, spec):
        step = step0
        if spec.refine_levels:
            mesh = np.array(list(itertools.product(offsets, repeat=x.size)))
        for _ in range(spec.refine_levels):
            cand = np.clip(x + mesh * step, lo, hi)
            f = ev.cost(cand)
            n_eval += len(cand)
            k = int(np.argmin(f))
            if f[k] < f0:
                x, f0 = cand[k], float(f[k])
            step = step * 0.5
        if best is None or f0 < best[1]:
            best = (x, f0, step)
    x, f0, step = best
    rb = _resolution(ev, x, f0, step, lo, hi)
    Q, beams, p = ev.point(x)
    return GridResult(Q, objective(inst, util, Q), rb, beams, p, n_eval)


# --------------------------------------------------------------------------
# decoupled closed form


def _identity_weight(M):
    """Scalar ``a`` with ``M == a I`` or ``None``."""
    a = M[0, 0].real
    if np.allclose(M, a * np.eye(M.shape[0]), atol=1e-12, rtol=0) and a >= 0:
        return float(a)
    return None


def waterfilling(gains, weights, budget):
    """Maximize ``sum_i w_i log(1 + g_i p_i)`` subject to ``sum_i p_i <= budget``.

    ``gains`` are effective SNR per unit power.  Returns the powers.
    """
    g = np.asarray(gains, float)
    w = np.asarray(weights, float)
    p = np.zeros_like(g)
    act = g > 0
    if budget <= 0 or not act.any():
        return p

    def used(mu):
        return np.maximum(w[act] / mu - 1.0 / g[act], 0.0).sum() - budget

    # just above the largest marginal, so no channel is on even after rounding
    hi_mu = float((w[act] * g[act]).max()) * (1.0 + 1e-12)
    lo_mu = hi_mu
    while used(lo_mu) <= 0:
        lo_mu *= 0.5
    mu = brentq(used, lo_mu, hi_mu, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    p[act] = np.maximum(w[act] / mu - 1.0 / g[act], 0.0)
    short = budget - p.sum()
    if short > 0:
        # below the water level's resolution the best channel takes the rest
        p[int(np.argmax(np.where(act, w * g, -np.inf)))] += short
    p *= budget / max(p.sum(), budget)  # absorb root-finding residue
    return p


def waterfilling_decoupled(inst: NetworkInstance, util: UtilitySpec, cons: ConstraintSet):
    """Sum-rate optimum without cross channels: MRT plus weighted waterfilling.

    Every power constraint must weight each ``(k, l)`` block by a multiple of
    the identity and every block must appear in exactly one constraint
    (per-user or sum-power budgets).  Returns ``(Q, cost)``.
    """
    if util.alpha != 0:
        raise OracleError("closed form needs the weighted sum-rate utility (alpha = 0)")
    for j in range(inst.K):
        for k in range(inst.K):
            if j != k and np.any(inst.channels[j][k] != 0):
                raise OracleError("closed form needs all cross channels to be zero")
    cons.validate(inst)
    owner = {}
    weight = {}
    for d, c in enumerate(cons):
        for k in range(inst.K):
            for l in range(inst.L_C):
                a = _identity_weight(c.A[k][l])
                if a is None:
                    raise OracleError("closed form needs identity-weighted budgets")
                if a > 0:
                    if (k, l) in owner:
                        raise OracleError("each block must be covered by exactly one budget")
                    owner[k, l] = d
                    weight[k, l] = a
    w = util.w(inst.K)
    beams = [np.zeros((inst.L_C, n), complex) for n in inst.N]
    for d, c in enumerate(cons):
        keys = [kl for kl, o in owner.items() if o == d]
        if not keys:
            continue
        # substitute p' = a p so the budget is a plain sum
        g = np.array([np.linalg.norm(inst.channels[k][k, l]) ** 2
                      / (inst.noise[k, l] * weight[k, l]) for k, l in keys])
        pw = waterfilling(g, [w[k] for k, _ in keys], c.P)
        for (k, l), pp in zip(keys, pw):
            h = inst.channels[k][k, l]
            nh = np.linalg.norm(h)
            if nh > 0:
                beams[k][l] = np.sqrt(pp / weight[k, l]) * h.conj() / nh
    Q = CovariancePoint.from_beams(beams)
    return Q, objective(inst, util, Q)


# --------------------------------------------------------------------------
# dirty paper coding reference


def dpc_sum_capacity(inst: NetworkInstance, P_tot: float, tol: float = cc.TOL_KKT) -> float:
    """Broadcast sum capacity (nats) through the dual multiple-access channel.

    Maximizes ``log det(I + sum_k q_k h_k^H h_k / sigma_k^2)`` over
    ``q >= 0`` with ``sum q <= P_tot`` using the barrier solver.  The value
    returned is attained at the final iterate, so it is a lower estimate
    that is within the duality gap (at most ``tol``) of the capacity.
    """
    if inst.topology != "BC" or inst.L_C != 1:
        raise OracleError("DPC reference needs a single-carrier BC instance")
    if P_tot < 0:
        raise InstanceError("P_tot must be nonnegative")
    K, N = inst.K, inst.N[0]
    if P_tot == 0:
        return 0.0
    H = [np.outer(inst.channels[0][k, 0].conj(), inst.channels[0][k, 0]) / inst.noise[k, 0]
         for k in range(K)]
    F = np.stack([herm.realify(Hk) for Hk in H])
    block = (np.arange(K), F, np.eye(2 * N), 0.5, 1, N)
    G = np.vstack([-np.eye(K), np.ones((1, K)) / np.sqrt(K)])
    h = np.append(np.zeros(K), P_tot / np.sqrt(K))
    prob = _core.BarrierProblem(
        n=K, c=np.zeros(K), T=np.zeros((0, K)), t0=[], denom=[], user=[], weights=[],
        alpha=0.0, G=G, h=h, **_core.pack_blocks(K, [block]),
    )
    out = cc.barrier_minimize(prob, np.full(K, 0.5 * P_tot / K), tol=tol)
    q = np.maximum(out.y, 0.0)
    M = np.eye(N) + sum(qk * Hk for qk, Hk in zip(q, H))
    return float(np.linalg.slogdet(M)[1])
