"""Command line: ``kellycache generate | place | compare``.

Exit codes: 0 success, 2 usage or parse error, 3 infeasible or unstable
input, 4 resource cap (W-DNF term cap or enumeration cap).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench
from .costs import total_cost
from .fileformat import FormatError, fmt, format_instance, parse_cost, write_results
from .gradient import EnumerationTooLarge, gain
from .model import ModelError, load
from .wdnf import TermCapExceeded

EXIT_USAGE, EXIT_UNSTABLE, EXIT_CAP = 2, 3, 4
KINDS = ("path-fig3", "erdos-renyi", "hypercube", "star", "geant", "dtelekom", "abilene", "abilene-r2")


class UsageError(Exception):
    pass


def _round(obj):
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(fmt(obj)) if np.isfinite(obj) else None
    return obj


def cmd_generate(args) -> int:
    if args.kind == "path-fig3":
        net = bench.path_fig3(args.delta, args.M)
        cost = parse_cost("delay")
    elif args.kind in ("abilene", "abilene-r2"):
        inst = bench.load_instance(args.kind)
        net, cost = inst.net, inst.costs
    else:
        params = {"erdos-renyi": {"n": args.n, "p": args.p}, "hypercube": {"d": args.d}, "star": {"n": args.n}}.get(args.kind, {})
        if any(v is None for v in params.values()):
            raise UsageError(f"--kind {args.kind} needs " + ", ".join(f"--{k}" for k in params))
        net = bench.gen_topology(args.kind.replace("-", "_"), seed=args.seed, **params)
        net = bench.gen_demands(net, args.catalog, args.requests, args.sources, args.law, args.rate, args.seed, args.exponent, args.capacity)
        net = bench.assign_service_rates(net, args.seed)
        cost = parse_cost(args.cost)
    text = format_instance(net, cost, f"kind {args.kind}, seed {args.seed}")
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    print(f"seed {args.seed}", file=sys.stderr)
    return 0


def cmd_place(args) -> int:
    cost = parse_cost(args.cost) if args.cost else None
    inst = bench.load_instance(args.instance, cost)
    net, costs, x0 = inst.net, inst.costs, inst.x0
    if not np.all(load(net, x0) < 1):
        raise ModelError("no stable starting placement given")
    gamma = args.gamma if args.K is None else None
    x, diag = bench.run_algorithm(inst, args.alg, args.seed, args.L, args.T, gamma, args.K, args.rounding)
    rho = load(net, x)
    names = net.node_names
    report = {
        "instance": args.instance,
        "algorithm": args.alg,
        "seed": args.seed,
        "cost_model": str(costs),
        "placement": {names[v]: np.flatnonzero(x[v] > 0.5).tolist() for v in range(net.n_nodes) if x[v].any()},
        "gain": gain(net, costs, x0, x),
        "cost": total_cost(net, costs, x),
        "cost_x0": total_cost(net, costs, x0),
        "max_load": float(rho.max(initial=0.0)),
        "diagnostics": diag,
    }
    text = json.dumps(_round(report), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_compare(args) -> int:
    try:
        spec = bench.ExperimentSpec.from_json(Path(args.spec).read_text())
    except (OSError, ValueError, TypeError) as exc:
        raise FormatError(f"bad experiment spec: {exc}") from exc
    if args.normalize:
        spec.normalize = True
    rows = bench.run_experiment(spec, jobs=args.jobs)
    dest = args.out or spec.output
    text = write_results(rows, dest, timing=not args.no_timing)
    if not dest:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kellycache", description="Cache placement in Kelly cache networks.")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write an instance file")
    g.add_argument("--kind", required=True, choices=KINDS)
    g.add_argument("--n", type=int)
    g.add_argument("--p", type=float)
    g.add_argument("--d", type=int)
    g.add_argument("--catalog", type=int, default=10)
    g.add_argument("--requests", type=int, default=100)
    g.add_argument("--sources", type=int, default=4)
    g.add_argument("--capacity", type=int, default=2)
    g.add_argument("--law", choices=("powerlaw", "uniform"), default="powerlaw")
    g.add_argument("--exponent", type=float, default=1.2)
    g.add_argument("--rate", type=float, default=1.0)
    g.add_argument("--delta", type=float, default=0.5)
    g.add_argument("--M", type=float, default=200.0)
    g.add_argument("--cost", default="queue_size")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_generate)

    p = sub.add_parser("place", help="compute a placement and report its gain")
    p.add_argument("instance", help="instance file or builtin: path-fig3, abilene, abilene-r2")
    p.add_argument("--alg", required=True, choices=bench.ALGORITHMS)
    p.add_argument("--L", type=int, default=1)
    p.add_argument("--T", type=int, default=100)
    p.add_argument("--K", type=int)
    p.add_argument("--gamma", type=float, default=0.001)
    p.add_argument("--rounding", choices=("swap", "pipage"), default="swap")
    p.add_argument("--cost", help="override the instance cost, e.g. queue_size, delay, md1, mmk_size:2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_place)

    c = sub.add_parser("compare", help="run an experiment spec (JSON) and write CSV")
    c.add_argument("spec")
    c.add_argument("--out")
    c.add_argument("--jobs", type=int, default=1)
    c.add_argument("--normalize", choices=("rnd",))
    c.add_argument("--no-timing", action="store_true", help="leave the wallclock column empty")
    c.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        ap.error(str(exc))
    except (FormatError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except (TermCapExceeded, EnumerationTooLarge) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    return 0


if __name__ == "__main__":
    sys.exit(main())
