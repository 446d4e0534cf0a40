"""Batch command line front end.

Each command reads a JSON problem specification (validated against
``spec_schema.json`` before any computation), calls the library and writes
a CSV table plus a JSON run report into the output directory.

Exit status: 0 on success, 2 for an invalid specification, 3 when the
library reports a numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import jsonschema

from ..errors import QTSError
from .commands import COMMANDS, Run
from .families import SpecError

log = logging.getLogger(__name__)

EXIT_OK, EXIT_SPEC, EXIT_NUMERIC = 0, 2, 3


def load_schema() -> dict:
    with resources.files(__package__).joinpath("spec_schema.json").open("r") as fh:
        return json.load(fh)


def _field(path) -> str:
    parts = []
    for p in path:
        parts.append(f"[{p}]" if isinstance(p, int) else (f".{p}" if parts else str(p)))
    return "".join(parts) or "<root>"


def read_spec(path: Path) -> dict:
    """Parse and schema-validate a spec file; raise :class:`SpecError` on any problem."""
    try:
        text = path.read_text()
    except OSError as exc:
        raise SpecError(f"{path}: cannot read spec file ({exc.strerror})") from exc
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(spec), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = [f"{path}: field {_field(e.absolute_path)}: {e.message}" for e in errors]
        raise SpecError("\n".join(msgs))
    return spec


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qtscale", description="Calculus and dynamic equation solvers on q^Z with zero")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--spec", required=True, type=Path, help="JSON problem specification")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--tol", type=float, default=None, help="override tolerances.tol")
        if name == "transform":
            p.add_argument("--inverse", action="store_true", help="also write the round trip")
            p.add_argument("--coeff", action="store_true",
                           help="transform the coefficient B(t) into A(n)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = read_spec(args.spec)
        if args.tol is not None and not args.tol > 0:
            raise SpecError("--tol must be positive")
        run = Run(args.command, spec, args)
        COMMANDS[args.command][0](run)
    except SpecError as exc:
        print(f"error: invalid spec: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except (QTSError, ArithmeticError, ValueError, LookupError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK
