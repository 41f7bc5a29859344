"""Command line interface.

Subcommands: ``generate``, ``solve``, ``sweep``, ``oracle``, ``compare``.
Rates are printed in bits per channel use; costs stay in nats.

Exit codes: 0 success, 2 validation error, 3 branch-and-bound node budget
exhausted, 4 pricing did not converge (results are still written).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import bb, instance_io, oracle, pricing
from .model import InstanceError, interference_box, rates

log = logging.getLogger("misobb")

EXIT_OK, EXIT_INVALID, EXIT_BUDGET, EXIT_NOCONV = 0, 2, 3, 4
LN2 = np.log(2.0)
DEFAULT_LAMBDA0 = (1e-5, 1.0)
DEFAULT_DB = tuple(range(0, 40, 5))


def bits(nats: float) -> float:
    return float(nats) / LN2


def _open_out(path):
    if path is None or path == "-":
        return nullcontext(sys.stdout)
    return open(path, "w", encoding="utf-8", newline="")


def _sum_rate(inst, Q):
    return float(rates(inst, Q).sum()) if Q is not None else float("nan")


# --------------------------------------------------------------------------
# single runs


def run_algorithm(algo, inst, cons, util, args, trace=None, box=None, lam0=None):
    """One algorithm on one instance; returns a JSON-ready record."""
    t0 = time.perf_counter()
    rec = {"algorithm": algo}
    if algo == "bb":
        res = bb.run_bb(inst, util, cons, eps=args.eps, max_nodes=args.max_nodes, box=box,
                        trace=trace, polish=args.polish)
        rec.update(cost=res.cost, lower_bound=res.L_final, gap=res.gap,
                   relative_gap=res.gap / max(abs(res.cost), 1e-300),
                   sum_rate_bits=bits(_sum_rate(inst, res.Q)),
                   bound_bits=bits(-res.L_final), converged=res.converged,
                   stats={k: v for k, v in res.stats.items() if k != "wall_time"})
    elif algo == "pricing":
        lam0 = args.lambda0[0] if lam0 is None else lam0
        res = pricing.run_pricing(inst, util, cons, lam0=lam0, i0=args.i0, box=box,
                                  theta=args.theta, max_outer=args.max_outer, trace=trace)
        rec.update(lambda0=lam0, i0=args.i0, cost=res.cost,
                   sum_rate_bits=bits(_sum_rate(inst, res.Q)), converged=res.converged,
                   kkt_residual=res.kkt,
                   stats={"outer_iterations": res.iterations,
                          "inner_iterations": res.inner_iterations})
    elif algo == "dpc":
        P = max(c.P for c in cons)
        val = oracle.dpc_sum_capacity(inst, P)
        rec.update(sum_rate_bits=bits(val), cost=-val)
    elif algo == "grid":
        spec = oracle.GridSpec(n_angle=args.n_angle, n_pow=args.n_pow)
        res = oracle.grid_search(inst, util, cons, spec)
        rec.update(cost=res.cost, sum_rate_bits=bits(_sum_rate(inst, res.Q)),
                   resolution_bound=res.resolution_bound, points=res.n_evaluated)
    elif algo == "waterfilling":
        Q, c = oracle.waterfilling_decoupled(inst, util, cons)
        rec.update(cost=c, sum_rate_bits=bits(_sum_rate(inst, Q)))
    else:
        raise ValueError(f"unknown algorithm {algo!r}")
    if not args.deterministic:
        rec["wall_time"] = time.perf_counter() - t0
    return rec


def _exit_code(records):
    code = EXIT_OK
    for r in records:
        if r["algorithm"] == "bb" and not r.get("converged", True):
            code = max(code, EXIT_BUDGET)
        if r["algorithm"] == "pricing" and not r.get("converged", True):
            code = EXIT_NOCONV if code == EXIT_OK else code
    return code


def _tracer(path):
    if path is None:
        return nullcontext(None)
    fh = open(path, "w", encoding="utf-8")

    class _Ctx:
        def __enter__(self):
            return bb.jsonl_writer(fh)

        def __exit__(self, *exc):
            fh.close()

    return _Ctx()


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _clean(x):
    if isinstance(x, float) and not np.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_clean(v) for v in x]
    return x


def _write_json(path, obj):
    with _open_out(path) as fh:
        json.dump(_clean(obj), fh, indent=1, default=_json_default)
        fh.write("\n")


def cmd_generate(args):
    inst, cons = instance_io.generate(args.seed, args.K, args.N, args.L_C, args.topology,
                                      P=args.power)
    text = instance_io.dumps(inst, cons)
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.out).write_bytes(text.encode("utf-8"))
    return EXIT_OK


def cmd_solve(args):
    inst, cons, util = instance_io.load(args.instance)
    box = interference_box(inst, cons) if args.algo in ("bb", "pricing") else None
    records = []
    with _tracer(args.trace) as trace:
        if args.algo == "pricing":
            for lam0 in args.lambda0:
                records.append(run_algorithm("pricing", inst, cons, util, args, trace, box, lam0))
        else:
            records.append(run_algorithm(args.algo, inst, cons, util, args, trace, box))
    _write_json(args.out, records[0] if len(records) == 1 else records)
    return _exit_code(records)


def cmd_oracle(args):
    inst, cons, util = instance_io.load(args.instance)
    rec = run_algorithm(args.kind, inst, cons, util, args)
    _write_json(args.out, rec)
    return EXIT_OK


def cmd_compare(args):
    """BB, pricing for every initial price, and whichever oracles apply."""
    inst, cons, util = instance_io.load(args.instance)
    box = interference_box(inst, cons)
    records = [run_algorithm("bb", inst, cons, util, args, box=box)]
    for lam0 in args.lambda0:
        records.append(run_algorithm("pricing", inst, cons, util, args, box=box, lam0=lam0))
    if inst.topology == "BC" and inst.L_C == 1:
        records.append(run_algorithm("dpc", inst, cons, util, args))
    if inst.K <= oracle.MAX_USERS and sum(inst.N) <= oracle.MAX_ANTENNAS and inst.L_C == 1:
        records.append(run_algorithm("grid", inst, cons, util, args))
    _write_json(args.out, records)
    return _exit_code(records)


# --------------------------------------------------------------------------
# sweep


def sweep_columns(algos, lambda0):
    cols = ["P_dB", "P_tot"]
    for a in algos:
        if a == "bb":
            cols += ["bb_bits", "bb_bound_bits", "bb_gap"]
        elif a == "pricing":
            for lam in lambda0:
                cols += [f"pricing_lam{lam:g}_bits", f"pricing_lam{lam:g}_converged"]
        else:
            cols.append(f"{a}_bits")
    return cols


def sweep_point(inst, cons, util, db, args):
    """One row of the sweep: every selected algorithm at ``P_tot = 10^(dB/10)``."""
    P = 10.0 ** (db / 10.0)
    cset = cons.rescaled(P)
    row = {"P_dB": db, "P_tot": P}
    codes = []
    try:
        box = interference_box(inst, cset)
    except Exception as exc:  # recorded as NaN cells
        log.error("P=%g dB: interference box failed: %s", db, exc)
        box = None
    for a in args.algos:
        try:
            if a == "bb":
                rec = run_algorithm("bb", inst, cset, util, args, box=box)
                row.update(bb_bits=bits(-rec["cost"]), bb_bound_bits=rec["bound_bits"],
                           bb_gap=rec["gap"])
                codes.append(rec)
            elif a == "pricing":
                for lam in args.lambda0:
                    rec = run_algorithm("pricing", inst, cset, util, args, box=box, lam0=lam)
                    row[f"pricing_lam{lam:g}_bits"] = bits(-rec["cost"])
                    row[f"pricing_lam{lam:g}_converged"] = int(rec["converged"])
                    codes.append(rec)
            else:
                rec = run_algorithm(a, inst, cset, util, args)
                row[f"{a}_bits"] = bits(-rec["cost"])
        except Exception as exc:  # noqa: BLE001 -- a failed point must not stop the sweep
            log.error("P=%g dB, %s failed: %s", db, a, exc)
    return row, _exit_code(codes)


def _fmt(v):
    if v is None or (isinstance(v, float) and not np.isfinite(v)):
        return "nan"
    if isinstance(v, float):
        return repr(round(float(v), 12))
    return str(v)


def sweep_csv(inst, cons, util, args) -> tuple[str, int]:
    dbs = list(args.db)
    if any(b <= a for a, b in zip(dbs, dbs[1:])):
        raise InstanceError("dB grid must be strictly increasing")
    if not args.algos:
        raise InstanceError("select at least one algorithm")
    workers = 1 if args.deterministic else max(1, args.workers)
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            futs = [ex.submit(sweep_point, inst, cons, util, db, args) for db in dbs]
            results = [f.result() for f in futs]
    else:
        results = [sweep_point(inst, cons, util, db, args) for db in dbs]
    cols = sweep_columns(args.algos, args.lambda0)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row, _ in results:  # already in dB order
        w.writerow([_fmt(row.get(c)) for c in cols])
    return buf.getvalue(), max((c for _, c in results), default=EXIT_OK)


def cmd_sweep(args):
    if args.instance:
        inst, cons, util = instance_io.load(args.instance)
    else:
        inst, cons = instance_io.generate(args.seed, args.K, args.N, args.L_C, args.topology)
        from .model import UtilitySpec
        util = UtilitySpec()
    text, code = sweep_csv(inst, cons, util, args)
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.out).write_bytes(text.encode("utf-8"))
    return code


# --------------------------------------------------------------------------
# argument parsing


def _common(p, algo_flags=True):
    p.add_argument("--out", help="output file (default stdout)")
    p.add_argument("--deterministic", action="store_true",
                   help="single worker, no wall-clock fields in the output")
    p.add_argument("-v", "--verbose", action="count", default=0)
    if algo_flags:
        p.add_argument("--eps", type=float, default=bb.DEFAULT_EPS, help="BB absolute gap (nats)")
        p.add_argument("--max-nodes", type=int, default=bb.DEFAULT_MAX_NODES)
        p.add_argument("--polish", choices=bb.POLISH_MODES, default="local",
                       help="incumbent improvement in BB")
        p.add_argument("--lambda0", type=float, nargs="+", default=list(DEFAULT_LAMBDA0),
                       help="initial interference price(s)")
        p.add_argument("--i0", type=float, default=1.0, help="initial posited interference")
        p.add_argument("--theta", type=float, default=1.0, help="pricing damping in (0, 1]")
        p.add_argument("--max-outer", type=int, default=pricing.MAX_OUTER,
                       help="pricing outer iteration cap")
        p.add_argument("--n-angle", type=int, default=32)
        p.add_argument("--n-pow", type=int, default=32)


def build_parser():
    ap = argparse.ArgumentParser(prog="misobb", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a seeded random instance")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--K", type=int, default=4)
    g.add_argument("--N", type=int, default=4)
    g.add_argument("--L_C", "--LC", dest="L_C", type=int, default=1)
    g.add_argument("--topology", choices=("BC", "IC"), default="BC")
    g.add_argument("--power", type=float, default=1.0, help="budget (linear)")
    _common(g, algo_flags=False)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="run one algorithm on an instance file")
    s.add_argument("--instance", required=True)
    s.add_argument("--algo", choices=("bb", "pricing", "dpc", "grid"), default="bb")
    s.add_argument("--trace", help="JSON-lines trace file")
    _common(s)
    s.set_defaults(func=cmd_solve)

    w = sub.add_parser("sweep", help="sum rate versus transmit power (CSV)")
    w.add_argument("--instance", help="instance file (otherwise generated from --seed)")
    w.add_argument("--seed", type=int, default=1)
    w.add_argument("--K", type=int, default=4)
    w.add_argument("--N", type=int, default=4)
    w.add_argument("--L_C", "--LC", dest="L_C", type=int, default=1)
    w.add_argument("--topology", choices=("BC", "IC"), default="BC")
    w.add_argument("--db", type=float, nargs="+", default=list(DEFAULT_DB),
                   help="power levels in dB (strictly increasing)")
    w.add_argument("--algos", nargs="+", default=["bb", "pricing", "dpc"],
                   choices=("bb", "pricing", "dpc", "grid"))
    w.add_argument("--workers", type=int, default=1)
    _common(w)
    w.set_defaults(func=cmd_sweep)

    o = sub.add_parser("oracle", help="reference solution for an instance")
    o.add_argument("--instance", required=True)
    o.add_argument("--kind", choices=("grid", "dpc", "waterfilling"), default="grid")
    _common(o)
    o.set_defaults(func=cmd_oracle)

    c = sub.add_parser("compare", help="BB, pricing and the applicable oracles")
    c.add_argument("--instance", required=True)
    _common(c)
    c.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InstanceError, oracle.OracleError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
