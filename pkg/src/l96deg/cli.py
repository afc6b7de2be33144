"""Command-line interface.

One subcommand per experiment kind plus ``rerun`` (replay a manifest's spec
echo).  Exit codes: 0 success, 2 acceptance-threshold failure or empty result
set, 3 blow-up abort, 4 configuration error.
"""

from __future__ import annotations

import argparse
import sys
import time

from .experiments import build_manifest, emit_report, run_experiment, spec_from_manifest
from .model import BlowUpError
from .specfile import (
    ConfigError,
    ExperimentSpec,
    KINDS,
    apply_overrides,
    default_spec,
    parse_file,
)


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="experiment spec file")
    parser.add_argument("--seed", type=int, help="override the system seed")
    parser.add_argument("--out", help="output directory (default: spec out)")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker processes for independent tasks")
    parser.add_argument("--no-plots", action="store_true",
                        help="skip figure rendering")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="override a spec value (section.key=value; bare keys "
                             "target the experiment's own section)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="l96deg",
        description="Degenerately forced Lorenz-96: simulation, transverse "
                    "exponents, and exact bracket-closure verification.")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        _add_common(p)
        if kind == "cap-verify":
            p.add_argument("--N", type=int, help="system size (multiple of 3)")
            p.add_argument("--depth-cap", type=int, help="bracket depth cap")
            p.add_argument("--generators", choices=("all", "local"),
                           help="use all K coupling matrices or the local three")
            p.add_argument("--emit-basis", help="write the exact span basis as CSV")
    p = sub.add_parser("rerun", help="re-run an experiment from its manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--no-plots", action="store_true")
    return parser


def _load_spec(args) -> ExperimentSpec:
    spec = parse_file(args.config) if args.config else default_spec(args.command)
    if spec.kind != args.command:
        raise ConfigError(f"config kind {spec.kind!r} does not match "
                          f"subcommand {args.command!r}")
    overrides = list(args.overrides)
    if args.command == "cap-verify":
        if args.N is not None:
            overrides.append(f"system.n={args.N}")
        if args.depth_cap is not None:
            overrides.append(f"depth_cap={args.depth_cap}")
        if args.generators is not None:
            overrides.append(f"generators={args.generators}")
        if args.emit_basis is not None:
            overrides.append(f"emit_basis={args.emit_basis}")
    if args.seed is not None:
        overrides.append(f"system.seed={args.seed}")
    if overrides:
        spec = apply_overrides(spec, overrides)
    if args.out:
        spec.out = args.out
    return spec


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    plots = not args.no_plots
    try:
        if args.command == "rerun":
            spec = spec_from_manifest(args.manifest)
            spec.out = args.out
        else:
            spec = _load_spec(args)
        t0 = time.perf_counter()
        report = run_experiment(spec, threads=args.threads)
        manifest = build_manifest(report, threads=args.threads,
                                  wall_clock=time.perf_counter() - t0, plots=plots)
        code = emit_report(report, spec.out, manifest, plots=plots)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 4
    except BlowUpError as exc:
        print(f"blow-up abort: {exc} (t={exc.time})", file=sys.stderr)
        return 3
    for c in report.checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"check {c.name}: {c.value!r} {c.op} {c.threshold!r} [{status}]")
    if report.aborted:
        print(f"aborted: {report.aborted}", file=sys.stderr)
    print(f"wrote {spec.out} (exit {code})")
    return code


if __name__ == "__main__":
    sys.exit(main())
