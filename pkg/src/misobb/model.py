"""Channel instances, covariance points, constraint sets and the utility.

Interference components are indexed ``l + L_C * k`` (receiver ``k``,
carrier ``l``, both zero based).  Rates are in nats throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

TOL_HERM = 1e-10
TOL_PSD = 1e-9
RATE_FLOOR = 1e-12
IMAG_RTOL = 1e-9
IMAG_ATOL = 1e-12
IMAX_INFLATION = 1e-6


class InstanceError(ValueError):
    """Raised when an instance violates a structural assumption."""


def _real_quadratic(value: complex, what: str = "quadratic form") -> float:
    # h Q h^H is real for Hermitian Q; anything else is a bug upstream.
    value = complex(value)
    if abs(value.imag) > IMAG_RTOL * abs(value.real) + IMAG_ATOL:
        raise ValueError(f"{what} has non-negligible imaginary part {value.imag:g}")
    return value.real


@dataclass(frozen=True)
class NetworkInstance:
    """K transmitter/receiver pairs over ``L_C`` parallel carriers.

    ``channels[j]`` has shape ``(K, L_C, N[j])``: row ``channels[j][k, l]``
    is the channel from transmitter ``j`` to receiver ``k`` on carrier ``l``.
    ``noise`` has shape ``(K, L_C)``.
    """

    K: int
    N: tuple[int, ...]
    L_C: int
    channels: tuple[np.ndarray, ...]
    noise: np.ndarray
    topology: str = "IC"

    def __post_init__(self):
        object.__setattr__(self, "N", tuple(int(n) for n in self.N))
        chans = tuple(np.array(c, dtype=complex) for c in self.channels)
        for c in chans:
            c.setflags(write=False)
        object.__setattr__(self, "channels", chans)
        noise = np.array(self.noise, dtype=float).reshape(self.K, self.L_C)
        noise.setflags(write=False)
        object.__setattr__(self, "noise", noise)
        self.validate()

    def validate(self) -> None:
        if self.K < 1 or self.L_C < 1:
            raise InstanceError("K and L_C must be positive")
        if len(self.N) != self.K or any(n < 1 for n in self.N):
            raise InstanceError("N must list one positive antenna count per user")
        if self.topology not in ("IC", "BC"):
            raise InstanceError(f"unknown topology {self.topology!r}")
        if len(self.channels) != self.K:
            raise InstanceError("need one channel array per transmitter")
        for j, c in enumerate(self.channels):
            if c.shape != (self.K, self.L_C, self.N[j]):
                raise InstanceError(
                    f"channels[{j}] has shape {c.shape}, expected "
                    f"{(self.K, self.L_C, self.N[j])}"
                )
        if not np.all(np.isfinite(self.noise)) or np.any(self.noise <= 0):
            raise InstanceError("noise powers must be finite and strictly positive")
        if self.topology == "BC":
            if len(set(self.N)) != 1:
                raise InstanceError("BC requires equal antenna counts")
            for j in range(1, self.K):
                if not np.array_equal(self.channels[j], self.channels[0]):
                    raise InstanceError("BC requires h_jkl identical for all j")

    @property
    def L(self) -> int:
        return self.K * self.L_C

    def h(self, j: int, k: int, l: int) -> np.ndarray:
        return self.channels[j][k, l]

    def component(self, k: int, l: int) -> int:
        return l + self.L_C * k


@dataclass(frozen=True)
class CovariancePoint:
    """Transmit covariances; ``blocks[k]`` has shape ``(L_C, N_k, N_k)``."""

    blocks: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "blocks", tuple(np.array(b, dtype=complex) for b in self.blocks)
        )

    def __getitem__(self, kl: tuple[int, int]) -> np.ndarray:
        k, l = kl
        return self.blocks[k][l]

    @classmethod
    def zeros(cls, inst: NetworkInstance) -> "CovariancePoint":
        return cls(tuple(np.zeros((inst.L_C, n, n), complex) for n in inst.N))

    @classmethod
    def from_beams(cls, beams: Sequence[np.ndarray]) -> "CovariancePoint":
        """Rank-one covariances from beamformers of shape ``(L_C, N_k)``."""
        blocks = []
        for v in beams:
            v = np.atleast_2d(np.asarray(v, complex))
            blocks.append(np.einsum("li,lj->lij", v, v.conj()))
        return cls(tuple(blocks))

    def check_shape(self, inst: NetworkInstance) -> None:
        if len(self.blocks) != inst.K:
            raise ValueError(f"expected {inst.K} users, got {len(self.blocks)}")
        for k, b in enumerate(self.blocks):
            want = (inst.L_C, inst.N[k], inst.N[k])
            if b.shape != want:
                raise ValueError(f"Q[{k}] has shape {b.shape}, expected {want}")

    def validate(self) -> None:
        for k, b in enumerate(self.blocks):
            for l, q in enumerate(b):
                scale = max(np.abs(q).max(), 1.0)
                if np.abs(q - q.conj().T).max() > TOL_HERM * scale:
                    raise ValueError(f"Q[{k},{l}] is not Hermitian")
                ev = np.linalg.eigvalsh(0.5 * (q + q.conj().T))
                if ev.min() < -TOL_PSD * max(np.trace(q).real, 0.0) - 1e-300:
                    raise ValueError(f"Q[{k},{l}] is not PSD (min eig {ev.min():g})")

    def scaled(self, a: float) -> "CovariancePoint":
        return CovariancePoint(tuple(a * b for b in self.blocks))

    def combine(self, other: "CovariancePoint", t: float) -> "CovariancePoint":
        """``t * self + (1 - t) * other``."""
        return CovariancePoint(
            tuple(t * a + (1.0 - t) * b for a, b in zip(self.blocks, other.blocks))
        )

    def with_zero_blocks(self, fixed) -> "CovariancePoint":
        """Copy with the ``(k, l)`` blocks in ``fixed`` set to zero."""
        blocks = [b.copy() for b in self.blocks]
        for k, l in fixed:
            blocks[k][l] = 0.0
        return CovariancePoint(tuple(blocks))

    def trace(self) -> float:
        return float(sum(np.trace(b, axis1=1, axis2=2).real.sum() for b in self.blocks))


@dataclass(frozen=True)
class PowerConstraint:
    """``sum_{k,l} Tr(A[k][l] Q_kl) <= P``; ``A[k]`` has shape (L_C, N_k, N_k)."""

    A: tuple[np.ndarray, ...]
    P: float

    def __post_init__(self):
        object.__setattr__(self, "A", tuple(np.array(a, complex) for a in self.A))
        object.__setattr__(self, "P", float(self.P))

    def weight(self, k: int, l: int) -> np.ndarray:
        return self.A[k][l]

    def load(self, Q: CovariancePoint) -> float:
        tot = 0.0
        for a, q in zip(self.A, Q.blocks):
            tot += np.einsum("lij,lji->", a, q).real
        return float(tot)


@dataclass(frozen=True)
class ConstraintSet:
    constraints: tuple[PowerConstraint, ...]

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))

    def __len__(self):
        return len(self.constraints)

    def __iter__(self):
        return iter(self.constraints)

    def validate(self, inst: NetworkInstance) -> None:
        """Shape, PSD-ness, nonnegative budgets and structural boundedness."""
        if not self.constraints:
            raise InstanceError("at least one power constraint is required")
        cover = [np.zeros((inst.L_C, n, n), complex) for n in inst.N]
        for d, con in enumerate(self.constraints):
            if not np.isfinite(con.P) or con.P < 0:
                raise InstanceError(f"constraint {d}: budget must be >= 0")
            if len(con.A) != inst.K:
                raise InstanceError(f"constraint {d}: need one weight block per user")
            for k, a in enumerate(con.A):
                if a.shape != (inst.L_C, inst.N[k], inst.N[k]):
                    raise InstanceError(f"constraint {d}: A[{k}] has wrong shape")
                for l in range(inst.L_C):
                    m = a[l]
                    if np.abs(m - m.conj().T).max() > TOL_HERM * max(1.0, np.abs(m).max()):
                        raise InstanceError(f"constraint {d}: A[{k},{l}] not Hermitian")
                    if np.linalg.eigvalsh(m).min() < -TOL_PSD * max(1.0, np.trace(m).real):
                        raise InstanceError(f"constraint {d}: A[{k},{l}] not PSD")
                cover[k] += a
        for k in range(inst.K):
            for l in range(inst.L_C):
                if np.linalg.eigvalsh(cover[k][l]).min() <= 1e-12:
                    raise InstanceError(
                        f"feasible set unbounded: user {k} carrier {l} has antenna "
                        "directions no power constraint covers"
                    )

    def is_feasible(self, Q: CovariancePoint, rtol: float = 1e-9) -> bool:
        return all(c.load(Q) <= c.P * (1 + rtol) + rtol for c in self.constraints)

    def rescaled(self, P_max: float) -> "ConstraintSet":
        """Budgets scaled so the largest equals ``P_max``."""
        top = max(c.P for c in self.constraints)
        if top <= 0:
            raise InstanceError("cannot rescale all-zero budgets")
        return ConstraintSet(
            tuple(PowerConstraint(c.A, c.P * P_max / top) for c in self.constraints)
        )


def pin_zero_budgets(inst: NetworkInstance, cons: ConstraintSet):
    """Blocks forced to zero by zero budgets, and an equivalent reduced problem.

    With PSD weights, ``Tr(A Q) <= 0`` and ``Q >= 0`` force ``A Q = 0``, so a
    positive definite weight under a zero budget pins its block to zero.  The
    reduced instance drops those blocks' transmit channels and sets the zero
    budgets to 1; they then only bound blocks that no longer affect any rate
    or interference, and zeroing those blocks maps solutions back.

    Returns ``(inst, cons, fixed)`` with ``fixed`` a set of ``(k, l)``; the
    inputs come back unchanged when nothing is pinned.
    """
    fixed = set()
    for d, c in enumerate(cons):
        if c.P > 0:
            continue
        for k in range(inst.K):
            for l in range(inst.L_C):
                a = c.A[k][l]
                if not np.any(a):
                    continue
                ev = np.linalg.eigvalsh(a)
                if ev[0] <= 1e-12 * max(1.0, ev[-1]):
                    raise InstanceError(
                        f"constraint {d}: zero budget on a singular weight (user {k}, "
                        f"carrier {l}) is not supported"
                    )
                fixed.add((k, l))
    if not fixed:
        return inst, cons, fixed
    chans = [h.copy() for h in inst.channels]
    for k, l in fixed:
        chans[k][:, l] = 0.0
    red = NetworkInstance(inst.K, inst.N, inst.L_C, tuple(chans), inst.noise, "IC")
    cset = ConstraintSet(tuple(c if c.P > 0 else PowerConstraint(c.A, 1.0) for c in cons))
    return red, cset, fixed


@dataclass(frozen=True)
class UtilitySpec:
    """alpha-fairness utility with positive per-user weights."""

    alpha: float = 0.0
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.alpha < 0 or not np.isfinite(self.alpha):
            raise InstanceError("alpha must be a finite nonnegative number")
        if self.weights is not None:
            w = tuple(float(x) for x in self.weights)
            if any(x <= 0 for x in w):
                raise InstanceError("weights must be strictly positive")
            object.__setattr__(self, "weights", w)

    def w(self, K: int) -> np.ndarray:
        if self.weights is None:
            return np.ones(K)
        if len(self.weights) != K:
            raise InstanceError(f"expected {K} weights, got {len(self.weights)}")
        return np.asarray(self.weights, float)

    def f(self, r):
        r = np.maximum(np.asarray(r, float), RATE_FLOOR) if self.alpha >= 1 else np.asarray(r, float)
        if self.alpha == 0:
            return r
        if self.alpha == 1:
            return np.log(r)
        return r ** (1.0 - self.alpha) / (1.0 - self.alpha)

    def df(self, r):
        """Derivative of ``f`` (zero below the rate floor when alpha >= 1)."""
        r = np.asarray(r, float)
        if self.alpha == 0:
            return np.ones_like(r)
        out = np.maximum(r, RATE_FLOOR) ** (-self.alpha)
        return np.where(r < RATE_FLOOR, 0.0, out)


@dataclass(frozen=True)
class InterferenceMap:
    """Linear map Q -> per-(receiver, carrier) interference with its box."""

    inst: NetworkInstance
    i_max: np.ndarray
    i_min: np.ndarray = field(default=None)

    def __post_init__(self):
        i_max = np.asarray(self.i_max, float)
        object.__setattr__(self, "i_max", i_max)
        if self.i_min is None:
            object.__setattr__(self, "i_min", np.zeros_like(i_max))

    def __call__(self, Q: CovariancePoint) -> np.ndarray:
        return interference_map(self.inst, Q)

    def index(self, comp: int) -> tuple[int, int]:
        return divmod(comp, self.inst.L_C)

    def contains(self, i, atol: float = 0.0) -> bool:
        i = np.asarray(i, float)
        return bool(np.all(i >= self.i_min - atol) and np.all(i <= self.i_max + atol))

    def clamp(self, i) -> np.ndarray:
        return np.clip(np.asarray(i, float), self.i_min, self.i_max)


def interference_map(inst: NetworkInstance, Q: CovariancePoint) -> np.ndarray:
    Q.check_shape(inst)
    out = np.zeros(inst.L)
    for k in range(inst.K):
        for l in range(inst.L_C):
            tot = 0.0
            for j in range(inst.K):
                if j == k:
                    continue
                h = inst.channels[j][k, l]
                tot += h @ Q.blocks[j][l] @ h.conj()
            out[inst.component(k, l)] = _real_quadratic(tot, "interference")
    return out


def signal_powers(inst: NetworkInstance, Q: CovariancePoint) -> np.ndarray:
    """``S[k, l] = h_kkl Q_kl h_kkl^H``."""
    Q.check_shape(inst)
    S = np.zeros((inst.K, inst.L_C))
    for k in range(inst.K):
        h = inst.channels[k][k]
        vals = np.einsum("li,lij,lj->l", h, Q.blocks[k], h.conj())
        S[k] = [_real_quadratic(v, "signal power") for v in vals]
    return S


def _rates_from(inst, S, i):
    denom = inst.noise + np.asarray(i, float).reshape(inst.K, inst.L_C)
    return np.log1p(S / denom).sum(axis=1)


def rates(inst: NetworkInstance, Q: CovariancePoint) -> np.ndarray:
    """Per-user rate in nats, interference treated as noise."""
    return _rates_from(inst, signal_powers(inst, Q), interference_map(inst, Q))


def cost(inst: NetworkInstance, util: UtilitySpec, Q: CovariancePoint, i) -> float:
    """Decoupled cost: the supplied ``i`` replaces ``f_i(Q)`` in the SINRs."""
    i = np.asarray(i, float)
    if i.shape != (inst.L,):
        raise ValueError(f"interference vector must have length {inst.L}")
    r = _rates_from(inst, signal_powers(inst, Q), i)
    return float(-(util.w(inst.K) * util.f(r)).sum())


def objective(inst: NetworkInstance, util: UtilitySpec, Q: CovariancePoint) -> float:
    """The coupled cost ``f(Q, f_i(Q))``."""
    return cost(inst, util, Q, interference_map(inst, Q))


def cost_gradient_i(inst: NetworkInstance, util: UtilitySpec, Q: CovariancePoint, i) -> np.ndarray:
    i = np.asarray(i, float)
    S = signal_powers(inst, Q)
    c = inst.noise + i.reshape(inst.K, inst.L_C)
    r = np.log1p(S / c).sum(axis=1)
    scale = util.w(inst.K) * util.df(r)
    g = scale[:, None] * S / (c * (c + S))
    return g.reshape(-1)


def interference_box(inst: NetworkInstance, cons: ConstraintSet) -> InterferenceMap:
    """Root rectangle ``[0, i_max]`` of interference space."""
    from .convexcore import maximize_linear

    cons.validate(inst)
    i_max = np.zeros(inst.L)
    for comp in range(inst.L):
        i_max[comp] = maximize_linear(inst, cons, comp) * (1.0 + IMAX_INFLATION)
    return InterferenceMap(inst, i_max)


def per_user_power(inst: NetworkInstance, P) -> ConstraintSet:
    """One ``Tr(sum_l Q_kl) <= P_k`` constraint per user."""
    P = np.broadcast_to(np.asarray(P, float), (inst.K,))
    out = []
    for k in range(inst.K):
        A = [np.zeros((inst.L_C, n, n), complex) for n in inst.N]
        A[k][:] = np.eye(inst.N[k])
        out.append(PowerConstraint(tuple(A), P[k]))
    return ConstraintSet(tuple(out))


def sum_power(inst: NetworkInstance, P_tot: float) -> ConstraintSet:
    A = tuple(np.broadcast_to(np.eye(n), (inst.L_C, n, n)).astype(complex) for n in inst.N)
    return ConstraintSet((PowerConstraint(A, P_tot),))


def make_ic(channels, noise, P) -> tuple[NetworkInstance, ConstraintSet]:
    """IC with per-user sum-over-carriers power budgets."""
    channels = tuple(np.asarray(c, complex) for c in channels)
    K, L_C = channels[0].shape[:2]
    inst = NetworkInstance(K, tuple(c.shape[2] for c in channels), L_C, channels, noise, "IC")
    return inst, per_user_power(inst, P)


def make_bc(K: int, N: int, L_C: int, h, noise, P_tot: float) -> tuple[NetworkInstance, ConstraintSet]:
    """BC: ``h`` has shape ``(K, L_C, N)``, replicated for every transmitter."""
    h = np.asarray(h, complex).reshape(K, L_C, N)
    inst = NetworkInstance(
        K, (N,) * K, L_C, tuple(h.copy() for _ in range(K)),
        np.broadcast_to(np.asarray(noise, float), (K, L_C)), "BC",
    )
    return inst, sum_power(inst, P_tot)
