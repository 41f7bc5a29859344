"""JSON instance files and the seeded channel generator.

Layout (all indices zero based)::

    {"K": 2, "N": [2, 2], "L_C": 1, "topology": "IC",
     "channels": [{"j": 0, "k": 1, "l": 0, "re": [...], "im": [...]}, ...],
     "noise": [{"k": 0, "l": 0, "sigma2": 1.0}, ...],
     "constraints": [{"A": [{"k": 0, "l": 0, "re": [...], "im": [...]}], "P": 1.0}],
     "utility": {"alpha": 0.0, "weights": [1.0, 1.0]}}

Matrices are dense row major, split into real and imaginary arrays.
Channel entries not listed are zero; so are constraint blocks not listed.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import (
    ConstraintSet,
    InstanceError,
    NetworkInstance,
    PowerConstraint,
    UtilitySpec,
    make_bc,
    make_ic,
)

DEFAULT_SIGMA2 = 1.0
DEFAULT_POWER = 1.0


def _cplx(entry, shape, where):
    try:
        re = np.asarray(entry["re"], float)
        im = np.asarray(entry.get("im", np.zeros_like(re)), float)
    except (KeyError, TypeError, ValueError) as exc:
        raise InstanceError(f"{where}: expected numeric 're'/'im' arrays ({exc})") from None
    if re.size != int(np.prod(shape)) or im.size != re.size:
        raise InstanceError(f"{where}: expected {int(np.prod(shape))} entries, got {re.size}")
    return (re + 1j * im).reshape(shape)


def _index(entry, key, bound, where):
    try:
        v = int(entry[key])
    except (KeyError, TypeError, ValueError):
        raise InstanceError(f"{where}: missing or non-integer '{key}'") from None
    if not 0 <= v < bound:
        raise InstanceError(f"{where}: '{key}'={v} out of range [0, {bound})")
    return v


def from_dict(d: dict) -> tuple[NetworkInstance, ConstraintSet, UtilitySpec]:
    """Parse and validate an instance dictionary."""
    try:
        K, L_C = int(d["K"]), int(d["L_C"])
        N = [int(n) for n in d["N"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise InstanceError(f"header: need integer K, L_C and list N ({exc})") from None
    if len(N) != K:
        raise InstanceError(f"header: N lists {len(N)} users, K={K}")
    topology = d.get("topology", "IC")
    channels = [np.zeros((K, L_C, n), complex) for n in N]
    for e, entry in enumerate(d.get("channels", [])):
        where = f"channels[{e}]"
        j = _index(entry, "j", K, where)
        k = _index(entry, "k", K, where)
        l = _index(entry, "l", L_C, where)
        channels[j][k, l] = _cplx(entry, (N[j],), where)
    noise = np.full((K, L_C), np.nan)
    for e, entry in enumerate(d.get("noise", [])):
        where = f"noise[{e}]"
        k = _index(entry, "k", K, where)
        l = _index(entry, "l", L_C, where)
        noise[k, l] = float(entry["sigma2"])
    if np.isnan(noise).any():
        raise InstanceError("noise: every (k, l) needs a sigma2 entry")
    inst = NetworkInstance(K, tuple(N), L_C, tuple(channels), noise, topology)
    cons = []
    for c, con in enumerate(d.get("constraints", [])):
        A = [np.zeros((L_C, n, n), complex) for n in N]
        for e, entry in enumerate(con.get("A", [])):
            where = f"constraints[{c}].A[{e}]"
            k = _index(entry, "k", K, where)
            l = _index(entry, "l", L_C, where)
            A[k][l] = _cplx(entry, (N[k], N[k]), where)
        cons.append(PowerConstraint(tuple(A), float(con["P"])))
    cset = ConstraintSet(tuple(cons))
    cset.validate(inst)
    u = d.get("utility", {})
    util = UtilitySpec(float(u.get("alpha", 0.0)), u.get("weights"))
    util.w(K)
    return inst, cset, util


def _mat(M):
    M = np.asarray(M, complex)
    return {"re": M.real.ravel().tolist(), "im": M.imag.ravel().tolist()}


def to_dict(inst: NetworkInstance, cons: ConstraintSet, util: UtilitySpec | None = None) -> dict:
    util = util or UtilitySpec()
    chans = []
    for j in range(inst.K):
        for k in range(inst.K):
            for l in range(inst.L_C):
                h = inst.channels[j][k, l]
                if np.any(h != 0):
                    chans.append({"j": j, "k": k, "l": l, **_mat(h)})
    noise = [{"k": k, "l": l, "sigma2": float(inst.noise[k, l])}
             for k in range(inst.K) for l in range(inst.L_C)]
    constraints = []
    for c in cons:
        blocks = [{"k": k, "l": l, **_mat(c.A[k][l])}
                  for k in range(inst.K) for l in range(inst.L_C) if np.any(c.A[k][l] != 0)]
        constraints.append({"A": blocks, "P": c.P})
    return {
        "K": inst.K, "N": list(inst.N), "L_C": inst.L_C, "topology": inst.topology,
        "channels": chans, "noise": noise, "constraints": constraints,
        "utility": {"alpha": util.alpha, "weights": list(util.w(inst.K))},
    }


def dumps(inst, cons, util=None) -> str:
    return json.dumps(to_dict(inst, cons, util), indent=1, sort_keys=True) + "\n"


def load(path) -> tuple[NetworkInstance, ConstraintSet, UtilitySpec]:
    text = Path(path).read_text(encoding="utf-8")
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return from_dict(d)


def save(path, inst, cons, util=None) -> None:
    Path(path).write_text(dumps(inst, cons, util), encoding="utf-8")


def complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    """Unit-variance circularly symmetric complex Gaussian samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def generate(seed: int, K: int, N: int, L_C: int = 1, topology: str = "BC",
             P: float = DEFAULT_POWER, sigma2: float = DEFAULT_SIGMA2):
    """Seeded i.i.d. Rayleigh instance.

    BC: one base station with ``N`` antennas and a sum-power budget ``P``.
    IC: ``K`` transmitters with ``N`` antennas each and per-user budgets ``P``.
    """
    if K < 1 or N < 1 or L_C < 1:
        raise InstanceError("K, N and L_C must be positive")
    rng = np.random.default_rng(seed)
    if topology == "BC":
        h = complex_gaussian(rng, (K, L_C, N))
        return make_bc(K, N, L_C, h, sigma2, P)
    if topology == "IC":
        chans = [complex_gaussian(rng, (K, L_C, N)) for _ in range(K)]
        return make_ic(chans, np.full((K, L_C), sigma2), P)
    raise InstanceError(f"unknown topology {topology!r}")
