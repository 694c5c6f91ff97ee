"""Command-line front end.

Exit codes: 0 ok, 1 tolerance breach, 2 input validation, 3 numerical breakdown.
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from . import jsonio, parallel, sequential
from .bench import run_bench, write_csv
from .elbo import ElboConfig, GaussianDecoder, RewardHead, elbo
from .model import ValidationError, random_spec, sample_trajectory, validate_spec
from .scan import CHUNKED, ScanBreakdown, ScanPlan, default_workers
from .verify import corrupted_combine_filter, verify

EXIT_OK, EXIT_TOLERANCE, EXIT_INPUT, EXIT_BREAKDOWN = 0, 1, 2, 3


def _load_spec(path):
    return validate_spec(jsonio.spec_from_dict(jsonio.read_json(path)))


def _load_inputs(args):
    spec = _load_spec(args.spec)
    if getattr(args, "traj", None):
        traj = jsonio.trajectory_from_dict(jsonio.read_json(args.traj))
        spec = spec.with_observations(traj.observations)
    return spec


def _plan(args) -> ScanPlan:
    return ScanPlan(strategy=CHUNKED, chunk_size=args.chunk, workers=args.workers)


def cmd_generate(args) -> int:
    spec = _load_spec(args.spec)
    traj = sample_trajectory(spec, args.seed)
    jsonio.write_json(args.out, jsonio.trajectory_to_dict(traj, spec))
    return EXIT_OK


def cmd_infer(args) -> int:
    spec = _load_inputs(args)
    seq = args.backend == "seq"
    if args.beliefs:
        partial = jsonio.beliefs_from_dict(jsonio.read_json(args.beliefs)).filter_only()
    elif seq:
        partial = sequential.filter(spec)
    else:
        partial = parallel.parallel_filter(spec, plan=_plan(args))
    out = partial
    if args.mode == "smooth":
        out = sequential.rts_smooth(spec, partial) if seq else parallel.parallel_smooth(
            spec, partial, _plan(args))
    jsonio.write_json(args.out, jsonio.beliefs_to_dict(out))
    return EXIT_OK


def _read_rows(path, key):
    obj = jsonio.read_json(path)
    if isinstance(obj, dict):
        obj = obj[key]
    return obj


def cmd_elbo(args) -> int:
    spec = _load_inputs(args)
    if args.beliefs:
        beliefs = jsonio.beliefs_from_dict(jsonio.read_json(args.beliefs))
        if not beliefs.is_smoothed:
            raise ValidationError("belief file has no smoothed beliefs; run infer --mode smooth")
    else:
        beliefs = sequential.smooth(spec)

    if args.decoder == "identity":
        decoder = GaussianDecoder.matched(spec)
    else:
        dec = jsonio.read_json(args.decoder)
        decoder = GaussianDecoder(np.asarray(dec.get("cmat", 1.0), dtype=float),
                                  np.asarray(dec.get("dvec", 0.0), dtype=float),
                                  np.asarray(dec["sigma_o"], dtype=float))

    m_seq = None
    if args.m_file:
        m_seq = np.asarray(_read_rows(args.m_file, "m"), dtype=float)
    elif args.regularizer and args.alpha > 0:
        raise ValidationError("--regularizer with alpha > 0 needs --m-file")

    head, rewards = None, None
    if args.reward_file:
        obj = jsonio.read_json(args.reward_file)
        head = RewardHead(obj["cvec"], float(obj.get("d0", 0.0)), float(obj["sigma_r"]))
        rewards = obj["rewards"]

    cfg = ElboConfig(free_nats=args.free_nats, kl_balance=args.kl_balance, alpha=args.alpha,
                     include_t0_term=not args.no_t0_term)
    report = elbo(spec, None, beliefs, decoder, head, rewards, cfg, m_seq=m_seq)
    out = report.to_dict()
    out["log_marginal"] = float(beliefs.log_marginal)
    jsonio.write_json(args.out, out)
    return EXIT_OK


def _print_report(report, header: str) -> None:
    print(header)
    for line in report.lines():
        print("  " + line)


def cmd_verify(args) -> int:
    plan = _plan(args)
    combine = corrupted_combine_filter if args.corrupt_filter_combine else parallel.combine_filter
    if args.random:
        rng = np.random.default_rng(args.seed)
        worst = None
        for i in range(args.random):
            d = int(rng.integers(1, 4))
            T = int(rng.integers(1, 64 // d))  # keeps d*(T+1) <= 64
            spec = random_spec(rng, d, T, p_missing=0.25)
            report = verify(spec, plan=plan, combine_filter=combine)
            if not report.ok:
                _print_report(report, f"instance {i} (d={d}, T={T}): FAIL")
                worst = worst or report.worst()
        if worst is not None:
            print(f"FAIL: {worst.name} breached, worst at {worst.where}")
            return EXIT_TOLERANCE
        print(f"ok: {args.random} random desk-scale instances within tolerance")
        return EXIT_OK

    if not args.spec:
        raise ValidationError("verify needs --spec (or --random N)")
    spec = _load_inputs(args)
    report = verify(spec, plan=plan, combine_filter=combine)
    _print_report(report, f"verify d={spec.d} T={spec.T}")
    if not report.ok:
        worst = report.worst()
        print(f"FAIL: {worst.name} breached, worst at {worst.where}")
        return EXIT_TOLERANCE
    return EXIT_OK


def cmd_bench(args) -> int:
    names = {"seq": "sequential", "par": "parallel", "sequential": "sequential",
             "parallel": "parallel"}
    try:
        backends = [names[b] for b in args.backends.split(",")]
    except KeyError as exc:
        raise ValidationError(f"unknown backend {exc}") from exc
    t_list = [int(t) for t in args.t_list.split(",")]
    records = run_bench(args.d, t_list, backends, args.ops.split(","), workers=args.workers,
                        chunk_size=args.chunk, repeats=args.repeats, seed=args.seed)
    write_csv(records, args.out)
    for r in records:
        print(f"{r.backend:>10} {r.op:>6} T={r.T:<7} d={r.d:<4} "
              f"{r.wall_nanos / 1e6:10.3f} ms")
    return EXIT_OK


def _add_scan_flags(p):
    p.add_argument("--workers", type=int, default=default_workers(),
                   help="scan worker threads (default: $SCAN_KALMAN_WORKERS or core count)")
    p.add_argument("--chunk", type=int, default=1024, help="scan chunk size")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scan-kalman", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a trajectory from a spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("infer", help="filter or smooth a trajectory")
    p.add_argument("--spec", required=True)
    p.add_argument("--traj", help="trajectory file (default: observations in the spec)")
    p.add_argument("--beliefs", help="existing filter result to smooth")
    p.add_argument("--backend", choices=["seq", "par"], default="par")
    p.add_argument("--mode", choices=["filter", "smooth"], default="smooth")
    p.add_argument("--out", required=True)
    _add_scan_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("elbo", help="evaluate the smoothing bound")
    p.add_argument("--spec", required=True)
    p.add_argument("--traj")
    p.add_argument("--beliefs", help="smoothed belief file (default: run the smoother)")
    p.add_argument("--decoder", default="identity",
                   help="'identity' (matched to observation noise) or an affine decoder JSON")
    p.add_argument("--free-nats", type=float, default=3.0)
    p.add_argument("--kl-balance", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--no-t0-term", action="store_true", help="drop KL(q(z_0) || p(z_0))")
    p.add_argument("--m-file", help="JSON list (or {'m': ...}) of backbone outputs m_1..m_T")
    p.add_argument("--regularizer", action="store_true",
                   help="require the Mahalanobis regularizer (needs --m-file when alpha > 0)")
    p.add_argument("--reward-file", help="JSON with cvec, d0, sigma_r and rewards")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_elbo)

    p = sub.add_parser("verify", help="parity and oracle checks")
    p.add_argument("--spec")
    p.add_argument("--traj")
    p.add_argument("--random", type=int, default=0, metavar="N",
                   help="check N random desk-scale instances instead of a file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt-filter-combine", action="store_true", help=argparse.SUPPRESS)
    _add_scan_flags(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="time sequential vs parallel inference")
    p.add_argument("--d", type=int, default=32)
    p.add_argument("--t-list", default="1024,2048,4096")
    p.add_argument("--backends", default="seq,par")
    p.add_argument("--ops", default="filter", help="comma list of filter,smooth,elbo")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV file (appended)")
    _add_scan_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (OSError, KeyError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ScanBreakdown as exc:
        print(f"numerical breakdown: {exc}", file=sys.stderr)
        return EXIT_BREAKDOWN


if __name__ == "__main__":
    sys.exit(main())
