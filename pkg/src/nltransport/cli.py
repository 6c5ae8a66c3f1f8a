"""Command-line front end.

Subcommands select the experiment; a JSON scenario config supplies the model
and run parameters, and the flags --out, --seed, --dt, --T override the
corresponding config fields.  Exit codes: 0 all checks passed, 1 schema
violation, 2 assertion failure, 3 numeric error.
"""

from __future__ import annotations

import argparse
import sys

from .experiments import run_scenario

SUBCOMMANDS = ("equilibrium", "simulate-pde", "simulate-dde", "linear-stability",
               "volterra-demo", "control-verify", "suite")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nltransport",
        description="Simulation and verification workbench for a nonlocal "
                    "transport model of coarsening.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        cmd = sub.add_parser(name, help=f"run the {name} experiment")
        cmd.add_argument("--config", required=True, help="scenario JSON file")
        cmd.add_argument("--out", default=None, help="output directory override")
        cmd.add_argument("--seed", type=int, default=None, help="seed override")
        cmd.add_argument("--dt", type=float, default=None, help="time step override")
        cmd.add_argument("--T", type=float, default=None, help="horizon override")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"out": args.out, "seed": args.seed, "dt": args.dt, "T": args.T,
                 "experiment": args.command}
    code = run_scenario(args.config, overrides)
    return code


if __name__ == "__main__":
    sys.exit(main())
