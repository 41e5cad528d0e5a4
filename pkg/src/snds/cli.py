"""Command-line entry point: ``snds run | bound | inspect-checkpoint``.

Exit codes: 0 success, 1 configuration error, 2 runtime error.  Failures
print one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from snds.bound import bound_diagnostic, optimal_dvc
from snds.checkpoint import read_checkpoint
from snds.config import load_config, parse_overrides
from snds.errors import ConfigError
from snds.experiment import resolve_output_dir, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
SHORTCUTS = ("dataset", "mode", "strategy", "seed", "output_dir", "cycles", "epochs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="snds", description="Depth search inside an active-learning loop.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a config file and/or flags")
    run.add_argument("--config", help="INI file; flags override it")
    run.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                     help="override any config key (repeatable)")
    for key in SHORTCUTS:
        run.add_argument("--" + key.replace("_", "-"), dest=key)
    run.add_argument("--quiet", action="store_true", help="do not print the summary")

    bound = sub.add_parser("bound", help="generalisation-gap term for N samples and capacity d_vc")
    bound.add_argument("--n", type=float, required=True, help="number of labeled samples N_t")
    bound.add_argument("--dvc", type=float, nargs="*", default=[], help="capacities to evaluate")
    bound.add_argument("--delta", type=float, default=0.05)

    inspect = sub.add_parser("inspect-checkpoint", help="print checkpoint metadata and tensor shapes")
    inspect.add_argument("path")
    return parser


def _fail(code: int, exc: Exception) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError) and exc.key:
        payload["key"] = exc.key
    print(json.dumps(payload), file=sys.stderr)
    return code


def _run(args) -> int:
    overrides = parse_overrides(args.set)
    for key in SHORTCUTS:
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    cfg = load_config(args.config, overrides)
    summary = run_experiment(cfg, resolve_output_dir(cfg))
    if not args.quiet:
        print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def _bound(args) -> int:
    out = {"n": args.n, "delta": args.delta, "optimal_dvc": optimal_dvc(args.n), "values": []}
    for d in args.dvc or [out["optimal_dvc"]]:
        value = bound_diagnostic(args.n, d, args.delta)
        out["values"].append({"d_vc": d, "gap_term": value.gap_term, "bound": value.bound})
    print(json.dumps(out, indent=2))
    return EXIT_OK


def _inspect(args) -> int:
    meta, arrays = read_checkpoint(args.path)
    tensors = {name: list(arr.shape) for name, arr in sorted(arrays.items())}
    meta["parameters"] = int(sum(np.size(a) for a in arrays.values()))
    meta["tensors"] = tensors
    print(json.dumps(meta, indent=2, sort_keys=True))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors are configuration errors
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    handler = {"run": _run, "bound": _bound, "inspect-checkpoint": _inspect}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except Exception as exc:  # noqa: BLE001 - every failure maps to a structured exit
        return _fail(EXIT_RUNTIME, exc)


if __name__ == "__main__":
    sys.exit(main())
