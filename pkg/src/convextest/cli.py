"""``convextest`` command-line interface.

Exit codes: 0 success, 1 malformed input, 2 overlapping hypotheses or a
degenerate pair, 3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import math
import sys

from . import discrete as ds
from . import gaussian as gs
from . import harness
from .errors import (
    DegeneratePair,
    NonConvergence,
    OverlappingHypotheses,
)
from .io import (
    ProblemFormatError,
    dumps,
    load_json,
    parse_discrete_scheme,
    parse_gaussian_problem,
    parse_pair,
    write_atomic,
    csv_text,
)

EXIT_OK, EXIT_INPUT, EXIT_DEGENERATE, EXIT_NONCONVERGENCE = 0, 1, 2, 3


def _emit(text, out):
    if out:
        write_atomic(out, text)
    else:
        sys.stdout.write(text)


def _fail(code, message):
    print(f"convextest: {message}", file=sys.stderr)
    return code


def solution_report(scheme, sol) -> dict:
    cert = sol.certificate
    b = gs.degraded_bounds(sol.rho, sol.rho, cert.delta_raw, cert.delta_norm)
    return {
        "theta0_star": sol.theta0_star,
        "theta1_star": sol.theta1_star,
        "rho": sol.rho,
        "epsilon_star": sol.epsilon_star,
        "delta_raw": cert.delta_raw,
        "delta_norm": cert.delta_norm,
        "iterations": sol.iterations,
        "detector": {"w": sol.detector.w, "c": sol.detector.c},
        "bounds": b["bounds"],
        "flags": dict(converged=True, **b["flags"]),
    }


def _solve(scheme, args):
    return gs.solve_closest_pair(scheme, tol_delta=args.tol, max_iters=args.max_iters)


def cmd_solve(args):
    scheme = parse_gaussian_problem(load_json(args.problem))
    sol = _solve(scheme, args)
    _emit(dumps(solution_report(scheme, sol)), args.out)
    return EXIT_OK


def cmd_certify(args):
    scheme = parse_gaussian_problem(load_json(args.problem))
    pair = parse_pair(load_json(args.pair), scheme.dim)
    try:
        cert = gs.certificate(scheme, pair)
    except ValueError as err:
        raise ProblemFormatError("pair", str(err)) from None
    exact = _solve(scheme, args)
    rep = gs.sandwich_check(scheme, exact, pair)
    b = gs.degraded_bounds(cert.gap, exact.rho, cert.delta_raw, cert.delta_norm)
    det = gs.AffineDetector.from_pair(scheme, *pair)
    out = {
        "delta_raw": cert.delta_raw,
        "delta_norm": cert.delta_norm,
        "gap": cert.gap,
        "rho_star": exact.rho,
        "epsilon_star": exact.epsilon_star,
        "worst_case_risk": gs.worst_case_risk(scheme, det),
        "bounds": b["bounds"],
        "flags": b["flags"],
        "sandwich": {"raw_lower": rep.raw_lower, "raw_upper": rep.raw_upper,
                     "norm_lower": rep.norm_lower, "norm_upper": rep.norm_upper},
    }
    _emit(dumps(out), args.out)
    return EXIT_OK


def cmd_simulate(args):
    if args.samples < 1:
        raise ProblemFormatError("--samples", "must be >= 1")
    scheme = parse_gaussian_problem(load_json(args.problem))
    sol = _solve(scheme, args)
    res = {}
    for name, theta, label, stream in (("h0", sol.theta0_star, -1, 0), ("h1", sol.theta1_star, 1, 1)):
        est = gs.mc_error(sol.detector, theta, scheme.sigma, label, args.samples, args.seed,
                          chunk_size=args.chunk_size, stream=stream, workers=None)
        res[name] = {"theta": theta, "label": label, "estimate": est.estimate, "stderr": est.stderr,
                     "within_3se": abs(est.estimate - sol.epsilon_star) <= 3 * est.stderr}
    out = {"samples": args.samples, "seed": args.seed, "chunk_size": args.chunk_size,
           "rho": sol.rho, "epsilon_star": sol.epsilon_star, **res}
    _emit(dumps(out), args.out)
    return EXIT_OK


def _detector_dict(h):
    return {"values": h.values, "capped": list(h.capped)}


def cmd_discrete(args):
    scheme = parse_discrete_scheme(load_json(args.scheme))
    if args.mode == "surrogates":
        losses = [ds.SurrogateLoss(x) for x in (args.loss or [l.value for l in ds.SurrogateLoss])]
        rows = ds.compare_surrogates(scheme, losses)
        recs = [{"loss": r.loss.value, "value": r.value, "worst_case_error": r.worst_case_error,
                 "converged": r.converged} for r in rows]
        _emit(csv_text(["loss", "value", "worst_case_error", "converged"], recs), args.out)
        return EXIT_OK
    sol = ds.saddle_solve_product(scheme)
    wce = ds.worst_case_error(scheme, sol.detector.decide())
    out = {"mode": args.mode}
    if args.mode == "product":
        out.update(detector=_detector_dict(sol.detector), value=sol.value, lower_bound=sol.lower_bound,
                   pair=list(sol.pair), iterations=sol.iterations, worst_case_error=wce,
                   exp_moment_bound=math.exp(sol.value / 2))
    elif args.mode == "direct":
        h, v = ds.direct_solve(scheme, seed=args.seed, warm_start=sol.detector)
        out.update(detector=_detector_dict(h), value=v,
                   worst_case_error=ds.worst_case_error(scheme, h.decide()),
                   product_value=sol.value, product_worst_case_error=wce)
    else:
        i0, i1, aff = ds.hellinger_closest_pair(scheme)
        h_pair, v_pair = ds.optimal_detector_for_pair(scheme.pmfs[i0], scheme.pmfs[i1], cap=ds.H_CAP)
        out.update(closest_pair=[i0, i1], affinity=aff, pair_value=v_pair,
                   hull_closest=ds.closest_pair_is_saddle(scheme, i0, i1),
                   pair_detector=_detector_dict(h_pair), product_detector=_detector_dict(sol.detector),
                   product_value=sol.value, product_pair=list(sol.pair),
                   equivalence_residual=ds.reduction_residual(sol.detector, h_pair),
                   worst_case_error=ds.worst_case_error(scheme, h_pair.decide()))
    _emit(dumps(out), args.out)
    return EXIT_OK


def cmd_campaign(args):
    try:
        c = harness.Campaign(kind=args.kind, n_instances=args.n, seed=args.seed,
                             dims=tuple(args.dims), mc_samples=args.mc_samples,
                             condition_regime=args.condition_regime)
    except ValueError as err:
        raise ProblemFormatError("--kind" if "kind" in str(err) else "campaign", str(err)) from None
    rows = harness.run_campaign(c, workers=None)
    summary = harness.summarize(c, rows)
    _emit(harness.rows_csv(c, rows), args.out)
    text = dumps(summary)
    if args.out:
        write_atomic(args.summary or f"{args.out}.summary.json", text)
    elif args.summary:
        write_atomic(args.summary, text)
    sys.stderr.write(text)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors (exit 1); exit 2 is reserved for degenerate problems
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="convextest", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def solver_flags(sp):
        sp.add_argument("--tol", type=float, default=gs.TOL_DELTA, help="normalized certificate tolerance")
        sp.add_argument("--max-iters", type=int, default=gs.MAX_ITERS)

    sp = sub.add_parser("solve", help="closest pair, optimal affine test and its error")
    sp.add_argument("--problem", required=True)
    sp.add_argument("--out")
    solver_flags(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("certify", help="optimality certificate and bounds for a candidate pair")
    sp.add_argument("--problem", required=True)
    sp.add_argument("--pair", required=True)
    sp.add_argument("--out")
    solver_flags(sp)
    sp.set_defaults(func=cmd_certify)

    sp = sub.add_parser("simulate", help="Monte Carlo error of the optimal test at the closest pair")
    sp.add_argument("--problem", required=True)
    sp.add_argument("--samples", type=int, default=200_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--chunk-size", type=int, default=gs.MC_CHUNK)
    sp.add_argument("--out")
    solver_flags(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("discrete", help="finite observation schemes")
    sp.add_argument("--scheme", required=True)
    sp.add_argument("--mode", choices=["product", "direct", "reduction", "surrogates"], default="product")
    sp.add_argument("--loss", action="append", choices=[l.value for l in ds.SurrogateLoss],
                    help="restrict --mode surrogates to these losses (repeatable)")
    sp.add_argument("--seed", type=int, default=0, help="restart seed for --mode direct")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_discrete)

    sp = sub.add_parser("campaign", help="randomized evidence campaign (CSV + summary)")
    sp.add_argument("--kind", required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--dims", type=int, nargs=2, default=(2, 20), metavar=("LO", "HI"))
    sp.add_argument("--mc-samples", type=int, default=20_000)
    sp.add_argument("--condition-regime", action="store_true",
                    help="reduction_equiv: redraw schemes until the closest pair is unique and hull-closest")
    sp.add_argument("--out")
    sp.add_argument("--summary", help="summary path (default: OUT.summary.json)")
    sp.set_defaults(func=cmd_campaign)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as err:
        return err.code
    try:
        return args.func(args)
    except ProblemFormatError as err:
        return _fail(EXIT_INPUT, str(err))
    except (OverlappingHypotheses, DegeneratePair) as err:
        return _fail(EXIT_DEGENERATE, str(err))
    except NonConvergence as err:
        return _fail(EXIT_NONCONVERGENCE, str(err))


if __name__ == "__main__":
    sys.exit(main())
