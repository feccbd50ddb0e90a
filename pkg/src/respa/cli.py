"""Command-line entry point.

One subcommand per experiment kind, e.g.::

    respa gain-sweep --config scenarios/reference_20db.ini --out out/

Exit code 0 on success; on failure a machine-readable error JSON is printed
to stdout and the exit code is nonzero (2 for configuration problems, 3 for
solver non-convergence, 4 for anything else).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from respa.experiments import (
    EXPERIMENT_KINDS,
    ConfigError,
    OperatingPointError,
    parse_config,
    run,
)
from respa.geometry import GeometryError, ModeOverlapError, ModeSearchError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="respa",
        description="Kinetic-inductance resonator parametric amplifier simulator",
    )
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in EXPERIMENT_KINDS:
        p = sub.add_parser(kind, help=f"run a {kind} experiment")
        p.add_argument("--config", required=True, help="experiment INI file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument(
            "--comb-order", type=int, default=None, help="override solver comb order"
        )
        p.add_argument(
            "--tol", type=float, default=None, help="override solver tolerance"
        )
        p.add_argument("--quiet", action="store_true", help="suppress summary output")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = parse_config(args.config)
        if config.kind != args.kind:
            raise ConfigError(
                f"config declares kind {config.kind!r}, subcommand is {args.kind!r}"
            )
        overrides = {}
        if args.comb_order is not None:
            overrides["comb_order"] = args.comb_order
        if args.tol is not None:
            overrides["tol"] = args.tol
        if overrides:
            config = dataclasses.replace(
                config, solver=dataclasses.replace(config.solver, **overrides)
            )
        summary = run(config, args.out)
    except (ConfigError, FileNotFoundError) as exc:
        print(json.dumps({"error": {"type": "config", "message": str(exc)}}))
        return 2
    except (OperatingPointError, ModeSearchError, ModeOverlapError, GeometryError) as exc:
        print(json.dumps({"error": {"type": "operating-point", "message": str(exc)}}))
        return 3
    except Exception as exc:  # noqa: BLE001 - surfaced as machine-readable JSON
        print(json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}))
        return 4

    if summary.get("converged") is False:
        if not args.quiet:
            print(json.dumps(summary, sort_keys=True))
        print(
            json.dumps(
                {
                    "error": {
                        "type": "non-convergence",
                        "message": "pump solve did not converge; see summary.json",
                    }
                }
            )
        )
        return 3
    if not args.quiet:
        print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
