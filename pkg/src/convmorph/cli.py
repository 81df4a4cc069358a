"""Command-line front end.

Subcommands: classify, morph, verify, render, fixtures. Machine-readable
JSON goes to stdout, human-readable summaries to stderr. Exit codes:
0 pass, 1 verification failure, 2 invalid input, 3 infeasible morph or
strategy error. All commands are deterministic given --seed.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import fixtures as fixture_lib
from .engine import MorphRequest, Strategy, StrategyError, morph, verify_equation, verify_function
from .graph import GraphError, load_module, save_module
from .reduction import reduce_module
from .solver import InfeasibleError, SolverConfig
from .tensors import MtenError, read_filter, write_mten

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_INVALID = 2
EXIT_INFEASIBLE = 3

_STRATEGIES = {
    "auto": Strategy.AUTO,
    "replay-only": Strategy.REPLAY_ONLY,
    "direct-solve": Strategy.DIRECT_SOLVE,
}


def _emit(doc) -> None:
    json.dump(doc, sys.stdout, indent=2)
    sys.stdout.write("\n")


def _note(message: str) -> None:
    print(message, file=sys.stderr)


def cmd_classify(args) -> int:
    module = load_module(args.module).check()
    result = reduce_module(module)
    doc = {"classification": result.classification.value}
    if args.trace:
        doc["trace"] = [s.to_json() for s in result.steps]
    _emit(doc)
    _note(f"{args.module}: {result.classification.value} ({len(result.steps)} steps recorded)")
    return EXIT_OK


def cmd_morph(args) -> int:
    parent = read_filter(args.parent)
    target = load_module(args.target).check()
    cfg = SolverConfig(seed=args.seed, tol=min(args.tolerance, 1e-8))
    request = MorphRequest(parent, target, cfg, _STRATEGIES[args.strategy])
    result = morph(request)

    os.makedirs(args.out, exist_ok=True)
    module_path = os.path.join(args.out, "module.json")
    refs = save_module(result.assigned, module_path)
    doc = result.to_json()
    doc["strategy"] = args.strategy
    doc["seed"] = args.seed
    doc["tolerance"] = args.tolerance
    doc["module"] = "module.json"
    doc["filters"] = refs
    doc["pass"] = bool(result.equation_residual <= args.tolerance)
    with open(os.path.join(args.out, "morph_result.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    _emit(doc)
    _note(
        f"equation residual {result.equation_residual:.3e}, "
        f"function residual {result.function_residual:.3e} "
        f"({'pass' if doc['pass'] else 'FAIL'} at {args.tolerance:g})"
    )
    return EXIT_OK if doc["pass"] else EXIT_FAIL


def cmd_verify(args) -> int:
    parent = read_filter(args.parent)
    module = load_module(args.module).check()
    unassigned = [e.id for e in module.edges if e.filter is None]
    if unassigned:
        raise GraphError(f"edges without filters: {', '.join(unassigned)}")
    try:
        h, w = (int(part) for part in args.blob.lower().split("x"))
    except ValueError:
        raise ValueError(f"--blob expects HxW, got {args.blob!r}") from None
    eq = verify_equation(module, parent)
    fn = verify_function(
        module,
        parent,
        trials=args.trials,
        blob_size=(h, w),
        rng=np.random.default_rng(args.seed),
    )
    ok = eq <= args.tolerance and fn <= args.tolerance
    _emit(
        {
            "equation_residual": eq,
            "function_residual": fn,
            "tolerance": args.tolerance,
            "trials": args.trials,
            "pass": ok,
        }
    )
    _note(f"equation {eq:.3e}, function {fn:.3e}: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_render(args) -> int:
    module = load_module(args.module).check()
    sys.stdout.write(module.to_dot())
    return EXIT_OK


def cmd_fixtures(args) -> int:
    if args.action == "list":
        _emit(fixture_lib.list_fixtures())
        return EXIT_OK
    names = fixture_lib.list_fixtures() if args.name == "all" else [args.name]
    os.makedirs(args.out, exist_ok=True)
    written = []
    for name in names:
        graph = fixture_lib.fixture(name, channels=args.channels)
        path = os.path.join(args.out, f"{name}.json")
        save_module(graph, path)
        written.append(f"{name}.json")
    _emit({"written": written, "directory": args.out})
    _note(f"wrote {len(written)} fixture file(s) to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convmorph",
        description="Morph a convolutional layer into an equivalent DAG module.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", help="classify a module as simple morphable or complex")
    p.add_argument("module", help="module JSON file")
    p.add_argument("--trace", action="store_true", help="include the recorded morph steps")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("morph", help="morph a parent filter into a target module")
    p.add_argument("parent", help="parent filter (MTEN file)")
    p.add_argument("target", help="target module JSON (kernels and channels declared)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strategy", choices=sorted(_STRATEGIES), default="auto")
    p.add_argument("--tolerance", type=float, default=1e-6, help="pass/fail residual bound")
    p.set_defaults(func=cmd_morph)

    p = sub.add_parser("verify", help="check an assigned module against a parent filter")
    p.add_argument("parent", help="parent filter (MTEN file)")
    p.add_argument("module", help="assigned module JSON file")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--blob", default="16x16", help="functional-check blob size, HxW")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("render", help="emit DOT text for a module")
    p.add_argument("module", help="module JSON file")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("fixtures", help="list or emit the built-in module library")
    p.add_argument("action", choices=["list", "emit"])
    p.add_argument("name", nargs="?", default="all", help="fixture name or 'all'")
    p.add_argument("--out", default="fixtures", help="output directory for emit")
    p.add_argument("--channels", type=int, default=16)
    p.set_defaults(func=cmd_fixtures)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "tolerance", 1.0) <= 0:
        _note("error: tolerance must be > 0")
        return EXIT_INVALID
    try:
        return args.func(args)
    except (StrategyError, InfeasibleError) as exc:
        _note(f"error: {exc}")
        return EXIT_INFEASIBLE
    except (GraphError, MtenError, KeyError, ValueError, OSError, json.JSONDecodeError) as exc:
        _note(f"error: {exc}")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
