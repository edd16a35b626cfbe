"""Command line entry point: ``eigentube <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys

from . import harness


def _floats(s: str) -> list:
    return [float(v) for v in s.split(",") if v.strip()]


def _ints(s: str) -> list:
    return [int(v) for v in s.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eigentube",
                                description="Eigenfunction concentration experiments.")
    p.add_argument("--config", help="JSON file whose keys mirror the subcommand flags")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sphere-sweep", help="L4 / KN / tube sweep over a sphere family")
    s.add_argument("--family", choices=["zonal", "highest", "random", "single"], default="highest")
    s.add_argument("--l", type=_ints, default=[16, 32, 64, 128, 256])
    s.add_argument("--eps0", type=_floats, default=[0.1])
    s.add_argument("--grid-k", type=int, default=512)
    s.add_argument("--oversample", type=int, default=1)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--out", default="report.json")

    s = sub.add_parser("torus-l4", help="Zygmund L4 ratios on lattice circles")
    s.add_argument("--nmax", type=int, default=100_000)
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--circles", type=int, default=50)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--out", default="zygmund.csv")

    s = sub.add_parser("lattice-arcs", help="max lattice points on short arcs, n <= nmax")
    s.add_argument("--nmax", type=int, default=100_000)
    s.add_argument("--aperture-exp", type=float, default=-0.6)
    s.add_argument("--out", default="arcs.csv")

    s = sub.add_parser("microlocal-check", help="tile partition, norms, leak and MKN vs KN")
    s.add_argument("--lambda", dest="lam", type=float, default=64)
    s.add_argument("--grid", type=int, default=256)
    s.add_argument("--eps0", type=float, default=0.1)
    s.add_argument("--fields", type=int, default=4)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--out", default="mkn.json")

    s = sub.add_parser("osc-norm", help="operator norm scaling of the model oscillatory operator")
    s.add_argument("--lambdas", type=_floats, default=[50, 100, 200, 400])
    s.add_argument("--thetas", type=_floats, default=[0.4, 0.2, 0.1, 0.05])
    s.add_argument("--metric", choices=["euclidean", "radial"], default="euclidean")
    s.add_argument("--eta", type=float, default=0.0)
    s.add_argument("--out", default="osc.json")

    s = sub.add_parser("verify", help="run the acceptance suite")
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--out", default="verify.json")
    return p


def _apply_config(parser, argv):
    first = parser.parse_args(argv)
    if not first.config:
        return first
    with open(first.config) as fh:
        cfg = json.load(fh)
    sub = parser._subparsers._group_actions[0].choices[first.command]
    known = {a.dest for a in sub._actions}
    defaults = {}
    for k, v in cfg.items():
        key = k.lstrip("-").replace("-", "_")
        key = "lam" if key == "lambda" else key
        if key not in known:
            raise SystemExit(f"unknown config key {k!r} for {first.command}")
        defaults[key] = v
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    args = _apply_config(parser, sys.argv[1:] if argv is None else argv)

    if args.command == "sphere-sweep":
        cfg = harness.SweepConfig(args.family, list(args.l), list(args.eps0), args.grid_k,
                                  args.oversample, args.seed, args.out)
        rep = harness.run_sweep(cfg)
        rep["corollary"] = harness.corollary_report([rep])
        harness.write_json(args.out, rep)
        for r in rep["reports"]:
            if "slope" in r:
                print(f"{r['quantity']}: slope {r['slope']:.4f}")
        return 0

    if args.command == "torus-l4":
        rep = harness.run_torus_l4(args.nmax, args.trials, args.seed, args.circles)
        harness.write_csv(args.out, rep["header"], rep["rows"])
        print(f"max ratio {rep['max_ratio']:.6f} (bound {rep['bound']:.6f}), "
              f"oracle gap {rep['max_oracle_gap']:.2e}")
        return 0

    if args.command == "lattice-arcs":
        rep = harness.run_lattice_arcs(args.nmax, args.aperture_exp)
        harness.write_csv(args.out, rep["header"], rep["rows"])
        print(f"running max {rep['max_up_to']} up to {args.nmax} "
              f"({rep['max_up_to_half']} up to {args.nmax // 2})")
        return 0

    if args.command == "microlocal-check":
        rep = harness.run_microlocal_check(args.lam, args.grid, args.eps0, args.fields, args.seed)
        harness.write_json(args.out, rep)
        print(f"partition error {rep['partition_error']:.2e}, leak {rep['leak']['fraction']:.2e}, "
              f"sup tile norm {rep['sup_tile_norm']:.4f}, max MKN/KN {rep['max_ratio']:.4f}")
        return 0

    if args.command == "osc-norm":
        rep = harness.run_osc_norm(args.lambdas, args.thetas, args.metric, args.eta)
        harness.write_json(args.out, rep)
        print(f"lambda slope {rep['lambda']['slope']:.4f}, theta slope {rep['theta']['slope']:.4f}")
        return 0

    if args.command == "verify":
        from .acceptance import run_acceptance, summary_lines
        rep, timings = run_acceptance(args.seed)
        harness.write_json(args.out, rep)
        for line in summary_lines(rep):
            print(line)
        for k, v in timings.items():
            print(f"time {k}: {v:.1f}s", file=sys.stderr)
        return 0 if rep["all_passed"] else 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
