"""Condition toolchain for studying the MASM ``.if`` negation miscompilation."""
from condtrap.analysis import (
    Diagnostic,
    DivergenceReport,
    TrapSpec,
    difftest,
    lint,
    synthesize_trap,
)
from condtrap.condast import (
    And,
    BareTest,
    CondExpr,
    IfBlock,
    Not,
    NotOperand,
    Operand,
    Or,
    Paren,
    Rel,
    RelOp,
    format_cond,
    parse,
    parse_condition,
    pretty_print,
    wrap_condition,
)
from condtrap.lowering import Instruction, LoweredProgram, lower, normalize_labels
from condtrap.machine import MachineState, execute, step
from condtrap.semantics import (
    BUGGY,
    CORRECT,
    TruthTable,
    eval_buggy,
    eval_correct,
    truth_table,
)

__all__ = [
    "And",
    "BUGGY",
    "BareTest",
    "CORRECT",
    "CondExpr",
    "Diagnostic",
    "DivergenceReport",
    "IfBlock",
    "Instruction",
    "LoweredProgram",
    "MachineState",
    "Not",
    "NotOperand",
    "Operand",
    "Or",
    "Paren",
    "Rel",
    "RelOp",
    "TrapSpec",
    "TruthTable",
    "difftest",
    "eval_buggy",
    "eval_correct",
    "execute",
    "format_cond",
    "lint",
    "lower",
    "normalize_labels",
    "parse",
    "parse_condition",
    "pretty_print",
    "step",
    "synthesize_trap",
    "truth_table",
    "wrap_condition",
]
