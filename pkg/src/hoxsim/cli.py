"""``simulate`` command line entry point.

Exit status: 0 on success, 1 on a configuration error, 2 when a replication
breaks a safety or accounting invariant (the recent event trace is printed).
Log verbosity comes from the ``HOXSIM_LOG_LEVEL`` environment variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

from .experiment import POLICY_NAMES, ExperimentSpec, build_spec, format_config, parse_config, run_campaign, write_csv
from .model import ConfigError
from .protocol import InvariantViolation

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simulate",
        description="Replicated simulation of the two-cell handover exchange scheme.",
    )
    parser.add_argument("--config", help="flat key = value configuration file")
    parser.add_argument("--output", help="CSV output path (overrides output_path)")
    parser.add_argument("--seed", type=int, help="base seed")
    parser.add_argument("--replications", type=int)
    parser.add_argument("--policy", action="append", choices=POLICY_NAMES, dest="policies",
                        help="policy to run; repeat for several (default: all three)")
    parser.add_argument("--sweep", choices=("lambda", "queue"))
    parser.add_argument("--oracle", action="store_true", help="add Erlang-B / CTMC columns")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes")
    parser.add_argument("--print-config", action="store_true",
                        help="print the canonical configuration and exit")
    return parser


def _resolve(args) -> ExperimentSpec:
    text = ""
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config!r}: {exc}") from None
    spec = parse_config(text)
    values = {f.name: getattr(spec, f.name) for f in dataclasses.fields(spec)}
    traffic = values.pop("traffic")
    values.update(dataclasses.asdict(traffic))
    if args.sweep:
        axis = {"lambda": "lambda_nc", "queue": "queue_capacity"}[args.sweep]
        if axis != spec.sweep:
            values["sweep"] = axis
            for key in ("sweep_start", "sweep_stop", "sweep_step"):
                values.pop(key)
    if args.seed is not None:
        values["base_seed"] = args.seed
    if args.replications is not None:
        values["replications"] = args.replications
    if args.policies:
        values["policies"] = tuple(dict.fromkeys(args.policies))
    if args.oracle:
        values["oracle"] = True
    if args.output:
        values["output_path"] = args.output
    return build_spec(values)


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("HOXSIM_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        spec = _resolve(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.print_config:
        sys.stdout.write(format_config(spec))
        return EXIT_OK
    try:
        rows = run_campaign(spec, jobs=args.jobs)
    except InvariantViolation as exc:
        print(exc.dump(), file=sys.stderr)
        return EXIT_INVARIANT
    try:
        write_csv(spec.output_path, rows, spec)
    except OSError as exc:
        print(f"cannot write {spec.output_path!r}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.getLogger(__name__).info("wrote %d rows to %s", len(rows), spec.output_path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
