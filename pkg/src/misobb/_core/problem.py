"""Packed barrier problem consumed by the centering kernels.

The centering objective at barrier weight ``t`` is::

    t * (c @ y + rate_cost(T @ y + t0) + sum_{obj blocks} -w_b log det R_b(y))
      + sum_{barrier blocks} -w_b log det R_b(y) - sum_j log(h_j - G_j @ y)

with ``R_b(y) = R0_b + sum_p y[idx_b[p]] F_b[p]`` real symmetric.  Block
index arrays are padded with ``n`` (a dummy coordinate held at zero) and the
matching ``F`` slices are zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import RATE_FLOOR


@dataclass
class BarrierProblem:
    n: int
    c: np.ndarray
    T: np.ndarray
    t0: np.ndarray
    denom: np.ndarray
    user: np.ndarray
    weights: np.ndarray
    alpha: float
    G: np.ndarray
    h: np.ndarray
    idx: np.ndarray
    F: np.ndarray
    R0: np.ndarray
    bw: np.ndarray
    bobj: np.ndarray
    deg: np.ndarray
    bdim: np.ndarray
    rate_floor: float = RATE_FLOOR

    def __post_init__(self):
        f8 = lambda a: np.ascontiguousarray(a, dtype=np.float64)
        self.c = f8(self.c)
        self.T = f8(self.T).reshape(-1, self.n)
        self.t0 = f8(self.t0)
        self.denom = f8(self.denom)
        self.user = np.ascontiguousarray(self.user, dtype=np.int64)
        self.weights = f8(self.weights)
        self.G = f8(self.G).reshape(-1, self.n)
        self.h = f8(self.h)
        self.idx = np.ascontiguousarray(self.idx, dtype=np.int64)
        self.F = f8(self.F)
        self.R0 = f8(self.R0)
        self.bw = f8(self.bw)
        self.bobj = np.ascontiguousarray(self.bobj, dtype=np.int64)
        self.deg = f8(self.deg)
        self.bdim = np.ascontiguousarray(self.bdim, dtype=np.int64)
        self.alpha = float(self.alpha)

    @property
    def m(self) -> float:
        """Barrier degree (duality gap at weight t is ``m / t``)."""
        return float(self.G.shape[0] + self.deg[self.bobj == 0].sum())

    @property
    def n_users(self) -> int:
        return int(self.weights.shape[0])


def pack_blocks(n, blocks):
    """Pack ``(idx, F, R0, weight, is_objective, degree)`` tuples.

    Blocks are padded to a common matrix size with identity (which leaves
    ``log det`` unchanged) and to a common coordinate count with the dummy
    index ``n``.
    """
    if not blocks:
        return dict(idx=np.zeros((0, 1), np.int64), F=np.zeros((0, 1, 1, 1)),
                    R0=np.zeros((0, 1, 1)), bw=np.zeros(0), bobj=np.zeros(0, np.int64),
                    deg=np.zeros(0), bdim=np.zeros(0, np.int64))
    d = max(b[2].shape[0] for b in blocks)
    pmax = max(len(b[0]) for b in blocks)
    nb = len(blocks)
    idx = np.full((nb, pmax), n, np.int64)
    F = np.zeros((nb, pmax, d, d))
    R0 = np.zeros((nb, d, d))
    bw = np.zeros(nb)
    bobj = np.zeros(nb, np.int64)
    deg = np.zeros(nb)
    bdim = np.zeros(nb, np.int64)
    for b, (ix, Fb, R0b, w, obj, dg) in enumerate(blocks):
        db = R0b.shape[0]
        idx[b, : len(ix)] = ix
        F[b, : len(ix), :db, :db] = Fb
        R0[b, :db, :db] = R0b
        R0[b, db:, db:] = np.eye(d - db)
        bw[b], bobj[b], deg[b], bdim[b] = w, int(obj), dg, db
    return dict(idx=idx, F=F, R0=R0, bw=bw, bobj=bobj, deg=deg, bdim=bdim)


def affine_substitute(prob: BarrierProblem, x0: np.ndarray, Z: np.ndarray) -> BarrierProblem:
    """Problem in ``y`` with ``x = x0 + Z @ y`` (constant cost terms dropped)."""
    n, ny = Z.shape
    x0e = np.append(x0, 0.0)
    Ze = np.vstack([Z, np.zeros((1, ny))])
    blocks = []
    for b in range(prob.idx.shape[0]):
        ix = prob.idx[b]
        Fb = prob.F[b]
        db = prob.bdim[b]
        R0 = (prob.R0[b] + np.tensordot(x0e[ix], Fb, axes=1))[:db, :db]
        Fy = np.tensordot(Ze[ix].T, Fb, axes=1)[:, :db, :db]
        blocks.append((np.arange(ny), Fy, R0, prob.bw[b], prob.bobj[b], prob.deg[b]))
    return BarrierProblem(
        n=ny, c=Z.T @ prob.c, T=prob.T @ Z, t0=prob.t0 + prob.T @ x0,
        denom=prob.denom, user=prob.user, weights=prob.weights, alpha=prob.alpha,
        G=prob.G @ Z, h=prob.h - prob.G @ x0,
        rate_floor=prob.rate_floor, **pack_blocks(ny, blocks),
    )


def phase1_problem(prob: BarrierProblem, s_floor: float = 1.0) -> BarrierProblem:
    """Minimize ``s`` over ``(y, s)`` with every inequality relaxed by ``s``.

    Barrier blocks become ``R_b(y) + s I`` and linear rows ``G y - s <= h``;
    objective blocks and rate terms are dropped.  ``-s <= s_floor`` keeps the
    auxiliary problem bounded below.
    """
    n = prob.n
    keep = np.flatnonzero(prob.bobj == 0)
    blocks = []
    for b in keep:
        ix = prob.idx[b]
        real = ix < n
        db = prob.bdim[b]
        ixb = np.append(ix[real], n)
        Fb = np.concatenate([prob.F[b][real][:, :db, :db], np.eye(db)[None]], axis=0)
        blocks.append((ixb, Fb, prob.R0[b][:db, :db], prob.bw[b], 0, prob.deg[b]))
    m = prob.G.shape[0]
    G = np.zeros((m + 1, n + 1))
    G[:m, :n] = prob.G
    G[:m, n] = -1.0
    G[m, n] = -1.0
    h = np.append(prob.h, s_floor)
    c = np.zeros(n + 1)
    c[n] = 1.0
    return BarrierProblem(
        n=n + 1, c=c, T=np.zeros((0, n + 1)), t0=np.zeros(0), denom=np.zeros(0),
        user=np.zeros(0, np.int64), weights=np.zeros(0), alpha=0.0, G=G, h=h,
        **pack_blocks(n + 1, blocks),
    )
