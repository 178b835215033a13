"""Command-line front end.

Exit codes: 0 success / no findings, 1 findings (lint diagnostics,
divergent rows, no trap found), 2 usage or parse error, 3 internal
invariant violation.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from condtrap.analysis import TrapSpec, difftest, lint, synthesize_trap
from condtrap.condast import (
    IfBlock,
    block_variables,
    depth,
    format_cond,
    node_count,
    parse,
    wrap_condition,
    variables as cond_variables,
)
from condtrap.errors import (
    CondTrapError,
    DomainTooLarge,
    MachineError,
    NotFound,
    ParseError,
    SearchSpaceExceeded,
    ToolchainMismatch,
    UnboundOperand,
    UnsupportedConstruct,
)
from condtrap.lowering import lower, normalize_labels
from condtrap.machine import execute
from condtrap.semantics import BOOL_DOMAIN, CORRECT, MODES, WIDE_DOMAIN, TruthTable, truth_table

EXIT_OK = 0
EXIT_FINDINGS = 1
EXIT_USAGE = 2
EXIT_INTERNAL = 3


class UsageError(Exception):
    pass


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _ArgumentParser(add_help=False)
    common.add_argument("file", nargs="?", help="UTF-8 .masmlike source with one .if block")
    common.add_argument("--cond", help="inline condition, wrapped in .if/.else/.endif")
    common.add_argument("--format", choices=("text", "json"), default="text")

    parser = _ArgumentParser(
        prog="condtrap",
        description="Lower, run, lint and difftest MASM-style .if conditions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lower", parents=[common], help="print the lowered IR")
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--normalize", action="store_true", help="rename labels to L0, L1, ...")

    p = sub.add_parser("run", parents=[common], help="execute the lowered IR")
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--env", default="", help="operand values, e.g. eax=1,ebx=0")
    p.add_argument("--trace", action="store_true")

    sub.add_parser("lint", parents=[common], help="report A2154 patterns")

    for name, help_text in (
        ("difftest", "compare source semantics with both compilations"),
        ("truthtable", "print the truth table of the .if condition"),
    ):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--vars", help="comma-separated variable order")
        p.add_argument("--wide", action="store_true", help="use the domain {0,1,2,0xFFFFFFFF}")
        if name == "truthtable":
            p.add_argument("--mode", choices=MODES, default=CORRECT)

    p = sub.add_parser("synth", help="synthesize a trapped condition from two truth tables")
    p.add_argument("--official", required=True, help="JSON truth table the source must mean")
    p.add_argument("--effective", required=True, help="JSON truth table the miscompiled code must follow")
    p.add_argument("--depth", type=int, default=5)
    p.add_argument("--immediates", default="0,1")
    p.add_argument("--format", choices=("text", "json"), default="text")
    return parser


def _load_block(args) -> tuple[IfBlock, str]:
    if args.cond is not None and args.file is not None:
        raise UsageError("give either FILE or --cond, not both")
    if args.cond is not None:
        return wrap_condition(args.cond), "<cond>"
    if args.file is None:
        raise UsageError("an input FILE or --cond is required")
    try:
        text = Path(args.file).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {args.file}: {exc.strerror}") from None
    return parse(text), args.file


def _parse_int(text: str) -> int:
    try:
        return int(text, 0)
    except ValueError:
        raise UsageError(f"invalid integer {text!r}") from None


def _parse_env(text: str) -> dict[str, int]:
    env = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        name, sep, value = item.partition("=")
        if not sep or not name.strip():
            raise UsageError(f"invalid --env entry {item!r}; expected NAME=VALUE")
        env[name.strip()] = _parse_int(value.strip())
    return env


def _variables(args, names: list[str]) -> list[str]:
    if args.vars:
        return [v.strip() for v in args.vars.split(",") if v.strip()]
    return names


def _emit(out, payload) -> None:
    out.write(json.dumps(payload, indent=2) + "\n")


def _cmd_lower(args, out) -> int:
    block, _ = _load_block(args)
    program = lower(block, args.mode)
    if args.normalize:
        program = normalize_labels(program)
    if args.format == "json":
        _emit(out, program.to_json_obj())
    else:
        out.write(program.to_text())
    return EXIT_OK


def _cmd_run(args, out) -> int:
    block, _ = _load_block(args)
    result = execute(lower(block, args.mode), _parse_env(args.env), trace=args.trace)
    if args.format == "json":
        payload = {"marks": list(result.marks), "esp": result.state.esp, "entry_esp": result.entry_esp}
        if args.trace:
            payload["trace"] = list(result.trace)
        _emit(out, payload)
    else:
        for line in result.trace:
            out.write(line + "\n")
        out.write("marks: " + " ".join(result.marks) + "\n")
    return EXIT_OK


def _cmd_lint(args, out) -> int:
    block, filename = _load_block(args)
    diagnostics = lint(block)
    if args.format == "json":
        _emit(out, [d.to_dict() for d in diagnostics])
    else:
        for diag in diagnostics:
            out.write(diag.format(filename) + "\n")
    return EXIT_FINDINGS if diagnostics else EXIT_OK


def _cmd_difftest(args, out) -> int:
    block, _ = _load_block(args)
    variables = _variables(args, block_variables(block))
    report = difftest(block, variables, WIDE_DOMAIN if args.wide else BOOL_DOMAIN)
    if args.format == "json":
        _emit(out, report.to_dict())
    else:
        out.write(report.format() + "\n")
    return EXIT_FINDINGS if report.divergent else EXIT_OK


def _cmd_truthtable(args, out) -> int:
    block, _ = _load_block(args)
    variables = _variables(args, cond_variables(block.cond))
    table = truth_table(block.cond, variables, WIDE_DOMAIN if args.wide else BOOL_DOMAIN, args.mode)
    if args.format == "json":
        _emit(out, table.to_dict())
    else:
        out.write(table.format() + "\n")
    return EXIT_OK


def _load_table(path: str) -> TruthTable:
    try:
        return TruthTable.from_json(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"invalid truth table in {path}: {exc}") from None


def _cmd_synth(args, out) -> int:
    immediates = tuple(_parse_int(v) for v in args.immediates.split(",") if v.strip())
    try:
        spec = TrapSpec(
            _load_table(args.official),
            _load_table(args.effective),
            depth_limit=args.depth,
            immediates=immediates,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        expr = synthesize_trap(spec)
    except (NotFound, SearchSpaceExceeded) as exc:
        if args.format == "json":
            _emit(out, {"condition": None, "reason": str(exc)})
        else:
            out.write(f"no condition found: {exc}\n")
        return EXIT_FINDINGS
    if args.format == "json":
        _emit(out, {"condition": format_cond(expr), "node_count": node_count(expr), "depth": depth(expr)})
    else:
        out.write(format_cond(expr) + "\n")
    return EXIT_OK


COMMANDS = {
    "lower": _cmd_lower,
    "run": _cmd_run,
    "lint": _cmd_lint,
    "difftest": _cmd_difftest,
    "truthtable": _cmd_truthtable,
    "synth": _cmd_synth,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args, sys.stdout)
    except SystemExit as exc:  # --help
        return EXIT_USAGE if exc.code else EXIT_OK
    except (UsageError, ParseError, UnboundOperand, DomainTooLarge, UnsupportedConstruct) as exc:
        print(f"condtrap: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ToolchainMismatch, MachineError) as exc:
        print(f"condtrap: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except CondTrapError as exc:
        print(f"condtrap: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
