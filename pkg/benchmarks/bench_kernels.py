"""Compiled versus pure-Python kernels.

Times the barrier kernels (evaluate, derivatives, centering), the grid
oracle's pair scan and a fixed-size branch-and-bound run under each backend,
and checks that both backends return the same numbers.

    python benchmarks/bench_kernels.py [--repeat 5] [--nodes 60]
"""

import argparse
import time

import numpy as np

from misobb import _core, bb, instance_io, model
from misobb import convexcore as cc
from misobb.model import UtilitySpec


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def barrier_case():
    inst, cons = instance_io.generate(7, 4, 4, 1, "BC", P=10.0)
    box = model.interference_box(inst, cons)
    lo = 0.1 * box.i_max
    sub = cc.ConvexSubproblem(inst, UtilitySpec(), cons, i_fix=lo, box_lo=lo, box_hi=0.6 * box.i_max)
    asm = cc.assemble(sub)
    y, _ = cc._find_start(sub, asm)
    return asm.prob, y


def grid_case(rng, A=400, B=400, C=2):
    g = [rng.uniform(0.1, 2.0, n) for n in (A, A, B, B)]
    p1max = np.ones(A)
    p2cap = np.ones((C, B))
    p2coef = rng.uniform(0, 1, (C, A, B))
    return (*g, p1max, p2cap, p2coef, 1.0, 1.0, 1.0, 1.0, 0.0, 16, 1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--nodes", type=int, default=60, help="BB node budget for the full run")
    args = ap.parse_args(argv)

    backends = ["python"] + (["cython"] if _core._ext is not None else [])
    prob, y = barrier_case()
    grid_args = grid_case(np.random.default_rng(0))
    inst, cons = instance_io.generate(0, 2, 2, 1, "IC")

    cases = {
        "evaluate": lambda: _core.evaluate(prob, y, 1e3),
        "derivatives": lambda: _core.derivatives(prob, y, 1e3)[0],
        "center": lambda: _core.center(prob, y, 1e3)[0],
        "grid_pairs": lambda: _core.grid_pairs(*grid_args)[0],
        "bb_run": lambda: bb.run_bb(inst, UtilitySpec(), cons, max_nodes=args.nodes,
                                    polish="none").cost,
    }
    start = _core.BACKEND
    table, values = {}, {}
    try:
        for b in backends:
            _core.use_backend(b)
            for name, fn in cases.items():
                rep = 1 if name == "bb_run" else args.repeat
                table[b, name], values[b, name] = best_of(fn, rep)
    finally:
        _core.use_backend(start)

    print(f"barrier problem: n={prob.n} variables, barrier degree m={prob.m:g}")
    head = f"{'kernel':<12}" + "".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        head += f"{'speedup':>10}{'max diff':>12}"
    print(head)
    for name in cases:
        row = f"{name:<12}" + "".join(f"{table[b, name] * 1e3:>10.2f}ms" for b in backends)
        if len(backends) == 2:
            a, c = values["python", name], values["cython", name]
            diff = float(np.max(np.abs(np.asarray(a) - np.asarray(c))))
            row += f"{table['python', name] / table['cython', name]:>9.1f}x{diff:>12.1e}"
        print(row)
    if len(backends) == 1:
        print("compiled extension not available; only the fallback was timed")


if __name__ == "__main__":
    main()
