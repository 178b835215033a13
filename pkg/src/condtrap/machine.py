"""Interpreter for lowered programs.

Only ZF and CF are modelled; that is all the unsigned jump family needs.
The stack is a private 4 KiB region whose top is the entry value of esp.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

from condtrap.condast import MASK32, REGISTERS, Operand
from condtrap.errors import (
    MachineError,
    StackOverflow,
    StackUnderflow,
    StepLimitExceeded,
    UnboundOperand,
    UndefinedLabel,
)
from condtrap.lowering import Instruction, LoweredProgram, StackSlot

DEFAULT_STEP_LIMIT = 10_000
DEFAULT_STACK_SIZE = 4096
DEFAULT_STACK_TOP = 0x0010_0000


def step_limit_from_env() -> int:
    raw = os.environ.get("CONDTRAP_STEP_LIMIT")
    if not raw:
        return DEFAULT_STEP_LIMIT
    limit = int(raw)
    if limit <= 0:
        raise ValueError("CONDTRAP_STEP_LIMIT must be positive")
    return limit


@dataclass
class MachineState:
    registers: dict[str, int]
    memory: dict[str, int]
    stack: dict[int, int] = field(default_factory=dict)
    zf: bool = False
    cf: bool = False
    ip: int = 0
    steps: int = 0
    halted: bool = False
    marks: list[str] = field(default_factory=list)
    mark_esp: list[int] = field(default_factory=list)
    stack_top: int = DEFAULT_STACK_TOP
    stack_size: int = DEFAULT_STACK_SIZE
    labels: Mapping[str, int] = field(default_factory=dict, repr=False)

    @classmethod
    def initial(
        cls,
        env: Mapping[str, int],
        labels: Mapping[str, int] | None = None,
        stack_size: int = DEFAULT_STACK_SIZE,
    ) -> MachineState:
        registers = {}
        memory = {}
        for name, value in env.items():
            if name.lower() in REGISTERS:
                registers[name.lower()] = value & MASK32
            else:
                memory[name] = value & MASK32
        registers.setdefault("esp", DEFAULT_STACK_TOP)
        return cls(
            registers=registers,
            memory=memory,
            stack_top=registers["esp"],
            stack_size=stack_size,
            labels=dict(labels or {}),
        )

    @property
    def esp(self) -> int:
        return self.registers["esp"]

    def copy(self) -> MachineState:
        return replace(
            self,
            registers=dict(self.registers),
            memory=dict(self.memory),
            stack=dict(self.stack),
            marks=list(self.marks),
            mark_esp=list(self.mark_esp),
        )


@dataclass(frozen=True)
class ExecutionResult:
    marks: tuple[str, ...]
    state: MachineState
    entry_esp: int
    trace: tuple[str, ...] = ()


def _depth(state: MachineState, esp: int) -> int:
    return (state.stack_top - esp) & MASK32


def _set_esp(state: MachineState, new: int, growing: bool) -> None:
    new &= MASK32
    if _depth(state, new) > state.stack_size:
        if growing:
            raise StackOverflow(f"esp {new:#x} below the {state.stack_size}-byte stack")
        raise StackUnderflow(f"esp {new:#x} above the stack top {state.stack_top:#x}")
    state.registers["esp"] = new


def _slot_address(state: MachineState, slot: StackSlot) -> int:
    address = (state.esp + slot.offset) & MASK32
    if _depth(state, address) > state.stack_size or _depth(state, address) < 4:
        raise StackUnderflow(f"[esp+{slot.offset}] lies outside the stack")
    return address


def read(state: MachineState, operand) -> int:
    if isinstance(operand, StackSlot):
        return state.stack.get(_slot_address(state, operand), 0)
    if operand.kind == "immediate":
        return operand.value
    store = state.registers if operand.kind == "register" else state.memory
    try:
        return store[operand.name]
    except KeyError:
        raise UnboundOperand(operand.name) from None


def write(state: MachineState, operand, value: int) -> None:
    value &= MASK32
    if isinstance(operand, StackSlot):
        state.stack[_slot_address(state, operand)] = value
    elif operand.kind == "register":
        if operand.name == "esp":
            _set_esp(state, value, growing=value < state.esp)
        else:
            state.registers[operand.name] = value
    elif operand.kind == "memory":
        state.memory[operand.name] = value
    else:
        raise MachineError(f"cannot write to immediate {operand}")


def _jump_taken(op: str, zf: bool, cf: bool) -> bool:
    if op == "je":
        return zf
    if op == "jne":
        return not zf
    if op == "jb":
        return cf
    if op == "jae":
        return not cf
    if op == "jbe":
        return cf or zf
    if op == "ja":
        return not cf and not zf
    return True  # jmp


def _apply(state: MachineState, ins: Instruction) -> None:
    """Execute one instruction in place."""
    op = ins.op
    next_ip = state.ip + 1
    if op == "cmp":
        a, b = read(state, ins.args[0]), read(state, ins.args[1])
        state.zf = a == b
        state.cf = a < b
    elif op in ("or", "test"):
        a, b = read(state, ins.args[0]), read(state, ins.args[1])
        result = a | b if op == "or" else a & b
        state.zf = result == 0
        state.cf = False
        if op == "or":
            write(state, ins.args[0], result)
    elif op == "add":
        dst = ins.args[0]
        total = read(state, dst) + read(state, ins.args[1])
        result = total & MASK32
        if isinstance(dst, Operand) and dst.kind == "register" and dst.name == "esp":
            # release moves esp up toward the stack top
            _set_esp(state, result, growing=False)
        else:
            write(state, dst, result)
        state.zf = result == 0
        state.cf = total > MASK32
    elif op == "mov":
        write(state, ins.args[0], read(state, ins.args[1]))
    elif op == "push":
        value = read(state, ins.args[0])
        _set_esp(state, state.esp - 4, growing=True)
        state.stack[state.esp] = value
    elif op == "pop":
        value = state.stack.get(state.esp, 0)
        _set_esp(state, state.esp + 4, growing=False)
        write(state, ins.args[0], value)
    elif op == "mark":
        state.marks.append(ins.args[0])
        state.mark_esp.append(state.esp)
    elif op == "halt":
        state.halted = True
        next_ip = state.ip
    elif ins.is_jump:
        if _jump_taken(op, state.zf, state.cf):
            try:
                next_ip = state.labels[ins.target]
            except KeyError:
                raise UndefinedLabel(ins.target) from None
    elif op != "label":
        raise MachineError(f"unknown opcode {op!r}")
    state.ip = next_ip
    state.steps += 1


def step(state: MachineState, ins: Instruction) -> MachineState:
    """Return the state after executing ``ins``; ``state`` is left untouched."""
    new = state.copy()
    _apply(new, ins)
    return new


def execute(
    program: LoweredProgram,
    env: Mapping[str, int],
    step_limit: int | None = None,
    trace: bool = False,
    on_step: Callable[[MachineState, Instruction], None] | None = None,
) -> ExecutionResult:
    """Run ``program`` from its entry to ``halt``.

    ``step_limit`` defaults to ``CONDTRAP_STEP_LIMIT`` from the environment,
    or 10,000.  The trace, when requested, records the state *after* each
    instruction.
    """
    limit = step_limit_from_env() if step_limit is None else step_limit
    state = MachineState.initial(env, program.labels())
    entry_esp = state.esp
    code = program.instructions
    lines = []
    while not state.halted:
        if state.steps >= limit:
            raise StepLimitExceeded(f"no halt after {limit} steps")
        if not 0 <= state.ip < len(code):
            raise MachineError(f"instruction pointer {state.ip} left the program")
        ins = code[state.ip]
        ip = state.ip
        _apply(state, ins)
        if on_step is not None:
            on_step(state, ins)
        if trace:
            lines.append(
                f"{ip:4d} | {str(ins).strip():<24} | {int(state.zf)} {int(state.cf)} | {state.esp:#010x}"
            )
    return ExecutionResult(tuple(state.marks), state, entry_esp, tuple(lines))
