"""Lowering of ``.if`` blocks to a small x86-flavoured instruction IR.

Two modes are supported.  ``correct`` computes every ``!`` written on a
relation side into a stack temporary and compares against that, releasing
the temporaries on both exits of the comparison.  ``buggy`` reproduces the
old assembler: it compares the raw operands, so ``!eax == ebx`` produces
exactly the same code as ``eax == ebx``.

Control flow uses short-circuit threading: every test jumps away on one
outcome and falls through on the other.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Union

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
    format_immediate,
)
from condtrap.errors import UndefinedLabel, UnsupportedConstruct
from condtrap.semantics import BUGGY, CORRECT, MODES


@dataclass(frozen=True)
class StackSlot:
    """Dword at ``[esp+offset]``."""

    offset: int

    def __str__(self) -> str:
        return f"[esp+{self.offset}]"


IROperand = Union[Operand, StackSlot]

JUMPS = ("je", "jne", "jb", "jbe", "ja", "jae")
JUMP_OPS = JUMPS + ("jmp",)
OPCODES = ("mov", "cmp", "or", "test", "push", "pop", "add", "label", "mark", "halt") + JUMP_OPS

# jump taken when the relation holds (unsigned)
_TRUE_JUMP = {
    RelOp.EQ: "je",
    RelOp.NE: "jne",
    RelOp.LT: "jb",
    RelOp.LE: "jbe",
    RelOp.GT: "ja",
    RelOp.GE: "jae",
}
INVERSE_JUMP = {"je": "jne", "jne": "je", "jb": "jae", "jae": "jb", "jbe": "ja", "ja": "jbe"}

ESP = Operand.reg("esp")
ZERO = Operand.imm(0)
ONE = Operand.imm(1)


@dataclass(frozen=True)
class Instruction:
    op: str
    args: tuple = ()
    target: str | None = None

    def __post_init__(self) -> None:
        if self.op not in OPCODES:
            raise ValueError(f"unknown opcode {self.op!r}")

    @property
    def is_jump(self) -> bool:
        return self.op in JUMP_OPS

    def __str__(self) -> str:
        if self.op == "label":
            return f"{self.args[0]}:"
        if self.is_jump:
            return f"    {self.op} {self.target}"
        if not self.args:
            return f"    {self.op}"
        return f"    {self.op} " + ", ".join(_fmt_arg(a) for a in self.args)

    def to_dict(self) -> dict:
        out: dict = {"op": self.op, "args": [_fmt_arg(a) for a in self.args]}
        if self.target is not None:
            out["target"] = self.target
        return out


def _fmt_arg(arg) -> str:
    if isinstance(arg, Operand) and arg.is_immediate:
        return format_immediate(arg.value)
    return str(arg)


def label(name: str) -> Instruction:
    return Instruction("label", (name,))


def mark(block_id: str) -> Instruction:
    return Instruction("mark", (block_id,))


def jump(op: str, target: str) -> Instruction:
    return Instruction(op, (), target)


@dataclass(frozen=True)
class LoweredProgram:
    instructions: tuple[Instruction, ...]
    mode: str
    markers: Mapping[str, int] = field(default_factory=dict)

    @property
    def entry(self) -> int:
        return 0

    def labels(self) -> dict[str, int]:
        """Label name to defining index; raises on duplicate or dangling labels."""
        defs: dict[str, int] = {}
        for i, ins in enumerate(self.instructions):
            if ins.op == "label":
                name = ins.args[0]
                if name in defs:
                    raise UndefinedLabel(f"{name} (defined twice)")
                defs[name] = i
        for ins in self.instructions:
            if ins.is_jump and ins.target not in defs:
                raise UndefinedLabel(ins.target)
        return defs

    def to_text(self) -> str:
        lines = [f"; mode: {self.mode}"]
        lines.extend(str(ins) for ins in self.instructions)
        return "\n".join(lines) + "\n"

    def to_json_obj(self) -> list[dict]:
        return [ins.to_dict() for ins in self.instructions]

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj())


class _Lowerer:
    def __init__(self, mode: str) -> None:
        self.mode = mode
        self.code: list[Instruction] = []
        self.markers: dict[str, int] = {}
        self._counter = 0

    def new_label(self) -> str:
        self._counter += 1
        return f"@C{self._counter:04d}"

    def emit(self, op: str, *args, target: str | None = None) -> None:
        self.code.append(Instruction(op, args, target))

    def mark(self, block_id: str) -> None:
        self.markers[block_id] = len(self.code)
        self.code.append(mark(block_id))

    def block(self, block: IfBlock) -> None:
        end = self.new_label()
        for cond, body in block.arms():
            next_arm = self.new_label()
            self.branch(cond, next_arm, when=False)
            self.mark(body.id)
            self.code.append(jump("jmp", end))
            self.code.append(label(next_arm))
        self.mark(block.fallthrough_id)
        self.code.append(label(end))
        self.emit("halt")

    def branch(self, expr: CondExpr, target: str, when: bool) -> None:
        """Jump to ``target`` iff ``expr`` evaluates to ``when``; fall through otherwise."""
        if isinstance(expr, Paren):
            self.branch(expr.inner, target, when)
        elif isinstance(expr, Not):
            self.branch(expr.inner, target, not when)
        elif isinstance(expr, And):
            if not when:
                self.branch(expr.lhs, target, False)
                self.branch(expr.rhs, target, False)
            else:
                skip = self.new_label()
                self.branch(expr.lhs, skip, False)
                self.branch(expr.rhs, target, True)
                self.code.append(label(skip))
        elif isinstance(expr, Or):
            if when:
                self.branch(expr.lhs, target, True)
                self.branch(expr.rhs, target, True)
            else:
                local_true = self.new_label()
                self.branch(expr.lhs, local_true, True)
                self.branch(expr.rhs, target, False)
                self.code.append(label(local_true))
        elif isinstance(expr, BareTest):
            self.bare_test(expr.arg, target, when)
        elif isinstance(expr, Rel):
            if self.mode == BUGGY:
                self.emit("cmp", expr.lhs.operand, expr.rhs.operand)
                cc = _TRUE_JUMP[expr.op]
                self.code.append(jump(cc if when else INVERSE_JUMP[cc], target))
            else:
                self.relation(expr, target, when)
        else:
            raise UnsupportedConstruct(f"cannot lower {type(expr).__name__}")

    def bare_test(self, side: NotOperand, target: str, when: bool) -> None:
        operand = side.operand
        if operand.kind == "register":
            self.emit("or", operand, operand)
        else:
            self.emit("cmp", operand, ZERO)
        # ZF=0 means the raw operand is nonzero; each '!' flips the sense
        jump_on_nonzero = when == (side.negations % 2 == 0)
        self.code.append(jump("jne" if jump_on_nonzero else "je", target))

    def relation(self, rel: Rel, target: str, when: bool) -> None:
        lhs_n, rhs_n = rel.lhs.negations, rel.rhs.negations
        slots = lhs_n + rhs_n
        if slots and ESP in (rel.lhs.operand, rel.rhs.operand):
            raise UnsupportedConstruct(
                "esp cannot be compared in a relation that needs stack temporaries"
            )
        self.materialize(rel.lhs)
        self.materialize(rel.rhs)
        lhs = StackSlot(4 * rhs_n) if lhs_n else rel.lhs.operand
        rhs = StackSlot(0) if rhs_n else rel.rhs.operand
        self.emit("cmp", lhs, rhs)
        cc = _TRUE_JUMP[rel.op]
        if not when:
            cc = INVERSE_JUMP[cc]
        if not slots:
            self.code.append(jump(cc, target))
            return
        # release the temporaries on both the taken and the fall-through edge
        taken = self.new_label()
        cont = self.new_label()
        release = Operand.imm(4 * slots)
        self.code.append(jump(cc, taken))
        self.emit("add", ESP, release)
        self.code.append(jump("jmp", cont))
        self.code.append(label(taken))
        self.emit("add", ESP, release)
        self.code.append(jump("jmp", target))
        self.code.append(label(cont))

    def materialize(self, side: NotOperand) -> None:
        """Push (x == 0) once per '!', each reading the previous result."""
        for i in range(side.negations):
            source = side.operand if i == 0 else StackSlot(4)
            skip = self.new_label()
            self.emit("push", ZERO)
            self.emit("cmp", source, ZERO)
            self.code.append(jump("jne", skip))
            self.emit("mov", StackSlot(0), ONE)
            self.code.append(label(skip))


def lower(block: IfBlock, mode: str = CORRECT) -> LoweredProgram:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    lowerer = _Lowerer(mode)
    lowerer.block(block)
    return LoweredProgram(tuple(lowerer.code), mode, dict(lowerer.markers))


def normalize_labels(program: LoweredProgram) -> LoweredProgram:
    """Rename labels to L0, L1, ... in order of definition."""
    defs = program.labels()
    renamed = {name: f"L{i}" for i, name in enumerate(sorted(defs, key=defs.__getitem__))}
    out = []
    for ins in program.instructions:
        if ins.op == "label":
            out.append(label(renamed[ins.args[0]]))
        elif ins.is_jump:
            out.append(jump(ins.op, renamed[ins.target]))
        else:
            out.append(ins)
    return LoweredProgram(tuple(out), program.mode, dict(program.markers))


def _stack_delta(ins: Instruction) -> int:
    if ins.op == "push":
        return 4
    if ins.op == "pop":
        return -4
    if ins.op == "add" and ins.args[0] == ESP:
        return -ins.args[1].value
    return 0


def stack_violations(program: LoweredProgram) -> list[str]:
    """Walk every control path and report stack-discipline violations.

    Checks that the pushed depth never goes negative, is zero at every
    ``mark`` and ``halt``, agrees wherever paths join, and that stack-slot
    accesses stay within pushed temporaries.
    """
    code = program.instructions
    labels = program.labels()
    problems: list[str] = []
    depth_at: dict[int, int] = {}
    work = [(0, 0)]
    while work:
        ip, depth = work.pop()
        while True:
            if ip >= len(code):
                problems.append(f"path falls off the end with depth {depth}")
                break
            seen = depth_at.get(ip)
            if seen is not None:
                if seen != depth:
                    problems.append(f"depth mismatch at {ip}: {seen} vs {depth}")
                break
            depth_at[ip] = depth
            ins = code[ip]
            for arg in ins.args:
                if isinstance(arg, StackSlot) and arg.offset + 4 > depth:
                    problems.append(f"slot {arg} outside pushed temporaries at {ip}")
            if ins.op in ("mark", "halt") and depth != 0:
                problems.append(f"{ins.op} at {ip} reached with {depth} bytes pushed")
            if ins.op == "halt":
                break
            depth += _stack_delta(ins)
            if depth < 0:
                problems.append(f"stack released below entry at {ip}")
                break
            if ins.op == "jmp":
                ip = labels[ins.target]
                continue
            if ins.is_jump:
                work.append((labels[ins.target], depth))
            ip += 1
    return problems
