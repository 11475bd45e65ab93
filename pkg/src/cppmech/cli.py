"""Command-line front end.

Exit codes: 0 ok, 1 failed audit check, 2 bad input, 3 over a size cap,
4 numerical or contract failure.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
import time

import numpy as np

from .exceptions import CPPError, InputError
from .instance import Instance, dumps, load_instance
from .lottery import (
    ExactDistribution,
    FractionalSolution,
    empirical_distribution,
    exact_distribution,
    exact_distribution_plus,
    sample_masks,
    sample_masks_plus,
)
from .mechanism import _seed_record, build_program, compute_payments, run_midr
from .solver import ROUNDINGS, solve
from .verify import BF_CAP, brute_force_opt, random_instance, run_suite, smoke_suite

log = logging.getLogger("cppmech")


def _positive_float(text: str) -> float:
    val = float(text)
    if not val > 0 or not math.isfinite(val):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return val


def _seed(text: str) -> int:
    val = int(text)
    if val < 0:
        raise argparse.ArgumentTypeError("seed must be >= 0")
    return val


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--instance", help="instance JSON file")
    common.add_argument("--k", type=int, help="override the instance's cardinality bound")
    common.add_argument("--tol", type=_positive_float, default=1e-6)
    common.add_argument("--max-iters", type=int, default=5000)
    common.add_argument("--seed", type=_seed, help="master seed (fresh entropy is logged if absent)")
    common.add_argument("--rounding", choices=ROUNDINGS, default="rk")
    common.add_argument("--format", choices=("json", "table"), default="json")
    common.add_argument("--out", help="write the artifact here instead of stdout")
    common.add_argument("--enum-cap", type=int, default=20)
    common.add_argument("--bf-cap", type=int, default=BF_CAP)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="cppmech", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve the convex program")
    sub.add_parser("allocate", parents=[common], help="run the mechanism once")
    sub.add_parser("payments", parents=[common], help="exact and sampled VCG payments")
    audit = sub.add_parser("audit", parents=[common], help="run the verification suite")
    audit.add_argument("--suite", choices=("smoke", "random"), default="smoke")
    audit.add_argument("--count", type=int, default=10)
    audit.add_argument("--misreports", type=int, default=10)
    dist = sub.add_parser("distribution", parents=[common], help="exact rounding distribution")
    dist.add_argument("--x", help="comma-separated fractional point; solved from --instance if absent")
    dist.add_argument("--n", type=int, default=1, help="player count for rkplus with --x")
    dist.add_argument("--mc", type=int, default=0, help="add a Monte Carlo column with this many samples")
    bench = sub.add_parser("bench", parents=[common], help="time solves on random instances")
    bench.add_argument("--count", type=int, default=10)
    return parser


# ---------------------------------------------------------------- helpers


def _master_seed(args) -> int:
    if args.seed is None:
        args.seed = int(np.random.SeedSequence().entropy % (1 << 63))
        log.warning("no --seed given; using %d", args.seed)
    return args.seed


def _instance(args) -> Instance:
    if not args.instance:
        raise InputError("--instance is required for this command")
    inst = load_instance(args.instance)
    return inst.with_k(args.k) if args.k is not None else inst


def _emit(args, payload: dict, table: str) -> None:
    text = dumps(payload) if args.format == "json" else table + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _labels(S) -> str:
    return "{" + ", ".join(str(j + 1) for j in sorted(S)) + "}"


def _vector(values) -> str:
    return "[" + ", ".join(f"{v:.6g}" for v in values) + "]"


# ---------------------------------------------------------------- commands


def cmd_solve(args) -> int:
    inst = _instance(args)
    program = build_program(inst, args.rounding, cap=args.enum_cap)
    report = solve(program, args.tol, args.max_iters)
    payload = report.to_json()
    table = "\n".join([
        f"status      {report.status}",
        f"objective   {report.objective_value:.10g}",
        f"gap         {report.duality_gap:.3e}",
        f"iterations  {report.iterations}",
        f"x*          {_vector(report.x_star.x)}",
    ])
    _emit(args, payload, table)
    return 0


def cmd_allocate(args) -> int:
    inst = _instance(args)
    seed = _master_seed(args)
    outcome = run_midr(inst, args.rounding, args.tol, seed, max_iters=args.max_iters,
                       cap=args.enum_cap)
    payload = outcome.to_json()
    ratio = None
    if inst.m <= args.bf_cap:
        S_opt, opt = brute_force_opt(inst, args.bf_cap)
        ratio = outcome.expected_welfare / opt if opt > 0 else 1.0
        payload["brute_force"] = {"set": sorted(j + 1 for j in S_opt), "welfare": opt, "ratio": ratio}
    table = "\n".join([
        f"chosen             {_labels(outcome.chosen)}",
        f"expected welfare   {outcome.expected_welfare:.10g}",
        f"ratio vs OPT       {'n/a' if ratio is None else f'{ratio:.6f}'}",
        f"expected payments  {_vector(outcome.expected_payments)}",
        f"realized payments  {_vector(outcome.payments)}",
        f"seed               {seed}",
    ])
    _emit(args, payload, table)
    return 0


def cmd_payments(args) -> int:
    inst = _instance(args)
    seed = _master_seed(args)
    ss = np.random.SeedSequence(seed)
    pay = compute_payments(inst, args.tol, ss, args.rounding, max_iters=args.max_iters,
                           cap=args.enum_cap)
    payload = {
        "expected": [float(p) for p in pay.expected],
        "realized": [float(p) for p in pay.realized],
        "pivot_welfare": [float(p) for p in pay.pivot_welfare],
        "seed": _seed_record(ss),
    }
    rows = ["player  expected      realized"]
    rows += [f"{i + 1:>6}  {e:<12.6g}  {r:.6g}" for i, (e, r) in enumerate(zip(pay.expected, pay.realized))]
    _emit(args, payload, "\n".join(rows))
    return 0


def cmd_audit(args) -> int:
    instances = [_instance(args)] if args.instance else None
    seed = _master_seed(args)
    if instances is None and args.suite == "smoke":
        instances = smoke_suite()
    elif instances is None:
        rng = np.random.default_rng(seed)
        instances = [random_instance(rng) for _ in range(args.count)]
    reports = run_suite(instances, seed, tol=min(args.tol, 1e-8), misreports=args.misreports,
                        rounding=args.rounding)
    passed = all(r.passed for r in reports)
    payload = {"passed": passed, "seed": seed, "reports": [r.to_json() for r in reports]}
    failed = sum(not r.passed for r in reports)
    table = "\n".join([r.format_table() for r in reports]
                      + [f"{len(reports) - failed}/{len(reports)} reports passed"])
    _emit(args, payload, table)
    return 0 if passed else 1


def _parse_x(text: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in text.split(",")])
    except ValueError as exc:
        raise InputError(f"--x: expected comma-separated numbers, got {text!r}") from exc


def cmd_distribution(args) -> int:
    if args.x is not None:
        if args.k is None:
            raise InputError("--k is required together with --x")
        x = FractionalSolution(_parse_x(args.x), args.k)
        n = args.n
    else:
        inst = _instance(args)
        report = solve(build_program(inst, args.rounding, cap=args.enum_cap), args.tol, args.max_iters)
        x, n = report.x_star, inst.n
    if args.rounding == "rkplus":
        dist = exact_distribution_plus(x, n, cap=args.enum_cap)
    else:
        dist = exact_distribution(x, cap=args.enum_cap)
    payload = {"x": [float(v) for v in x.x], "k": x.k, "rounding": args.rounding,
               "distribution": dist.to_json(), "total": float(math.fsum(dist.probs))}
    mc: ExactDistribution | None = None
    if args.mc:
        seed = _master_seed(args)
        if args.rounding == "rkplus":
            masks = sample_masks_plus(x, n, args.mc, seed)
        else:
            masks = sample_masks(x, args.mc, seed)
        mc = empirical_distribution(masks, x.m)
        payload["monte_carlo"] = {"samples": args.mc, "seed": seed, "tv_distance": dist.tv_distance(mc)}
    rows = ["set          probability" + ("    monte carlo" if mc else "")]
    for key, p in dist.to_json().items():
        S = [int(t) - 1 for t in key.split(",")] if key else []
        label = _labels(S) if S else "{}"
        rows.append(f"{label:<12} {p:.9f}" + (f"    {mc[S]:.6f}" if mc else ""))
    rows.append(f"{'sum':<12} {payload['total']:.9f}")
    _emit(args, payload, "\n".join(rows))
    return 0


def cmd_bench(args) -> int:
    seed = _master_seed(args)
    rng = np.random.default_rng(seed)
    rows, out = ["  n  m  k  iters  gap         seconds"], []
    for _ in range(args.count):
        inst = random_instance(rng)
        start = time.perf_counter()
        rep = solve(build_program(inst, args.rounding, cap=args.enum_cap), args.tol, args.max_iters)
        elapsed = time.perf_counter() - start
        out.append({"n": inst.n, "m": inst.m, "k": inst.k, "iterations": rep.iterations,
                    "duality_gap": rep.duality_gap, "seconds": elapsed})
        rows.append(f"{inst.n:>3}{inst.m:>3}{inst.k:>3}  {rep.iterations:>5}  {rep.duality_gap:.3e}   {elapsed:.4f}")
    _emit(args, {"seed": seed, "runs": out}, "\n".join(rows))
    return 0


COMMANDS = {
    "solve": cmd_solve,
    "allocate": cmd_allocate,
    "payments": cmd_payments,
    "audit": cmd_audit,
    "distribution": cmd_distribution,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CPPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
