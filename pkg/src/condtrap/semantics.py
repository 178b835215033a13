"""Reference and bug-faithful evaluation of conditions, plus truth tables.

Both evaluators work over an environment mapping operand names to 32-bit
unsigned values.  They differ in exactly one place: inside a relation, the
buggy evaluator ignores every ``!`` written on either side, which is what
the old assembler's code generator did.  Bare tests and ``!(...)`` on whole
conditions are honoured by both.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from condtrap.condast import (
    MASK32,
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
)
from condtrap.errors import DomainTooLarge, UnboundOperand

CORRECT = "correct"
BUGGY = "buggy"
MODES = (CORRECT, BUGGY)

BOOL_DOMAIN = (0, 1)
WIDE_DOMAIN = (0, 1, 2, 0xFFFFFFFF)

DEFAULT_ROW_CAP = 2**20

DONT_CARE = None

Environment = Mapping[str, int]


def operand_value(operand: Operand, env: Environment) -> int:
    if operand.is_immediate:
        return operand.value
    try:
        return env[operand.name] & MASK32
    except KeyError:
        raise UnboundOperand(operand.name) from None


def side_value(side: NotOperand, env: Environment, negations: int | None = None) -> int:
    """Value of ``!``*n operand, where each ``!`` maps x to (x == 0)."""
    value = operand_value(side.operand, env)
    for _ in range(side.negations if negations is None else negations):
        value = 1 if value == 0 else 0
    return value


def _evaluate(expr: CondExpr, env: Environment, buggy: bool) -> bool:
    if isinstance(expr, Rel):
        if buggy:
            lhs = side_value(expr.lhs, env, 0)
            rhs = side_value(expr.rhs, env, 0)
        else:
            lhs = side_value(expr.lhs, env)
            rhs = side_value(expr.rhs, env)
        return expr.op.compare(lhs, rhs)
    if isinstance(expr, BareTest):
        return side_value(expr.arg, env) != 0
    if isinstance(expr, Not):
        return not _evaluate(expr.inner, env, buggy)
    if isinstance(expr, Paren):
        return _evaluate(expr.inner, env, buggy)
    # total evaluation: operands have no side effects
    lhs = _evaluate(expr.lhs, env, buggy)
    rhs = _evaluate(expr.rhs, env, buggy)
    if isinstance(expr, And):
        return lhs and rhs
    if isinstance(expr, Or):
        return lhs or rhs
    raise TypeError(f"not a condition: {expr!r}")


def eval_correct(expr: CondExpr, env: Environment) -> bool:
    return _evaluate(expr, env, buggy=False)


def eval_buggy(expr: CondExpr, env: Environment) -> bool:
    return _evaluate(expr, env, buggy=True)


def evaluate(expr: CondExpr, env: Environment, mode: str) -> bool:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    return _evaluate(expr, env, buggy=mode == BUGGY)


def select_block(block: IfBlock, env: Environment, mode: str) -> str:
    """Id of the block an ``.if/.elseif/.else`` chain enters under ``mode``."""
    for cond, body in block.arms():
        if evaluate(cond, env, mode):
            return body.id
    return block.fallthrough_id


@dataclass(frozen=True)
class TruthTable:
    """Outcome per assignment; ``DONT_CARE`` (None) marks unconstrained rows.

    ``rows`` is keyed by value tuples aligned with ``variables`` and iterates
    in row-major order over ``domain``.
    """

    variables: tuple[str, ...]
    domain: tuple[int, ...]
    rows: Mapping[tuple[int, ...], int | None]

    def __post_init__(self) -> None:
        expected = set(assignments(self.variables, self.domain))
        if set(self.rows) != expected or len(self.rows) != len(expected):
            raise ValueError("truth table rows must cover the full cartesian product")
        for out in self.rows.values():
            if out not in (0, 1, DONT_CARE):
                raise ValueError(f"invalid outcome {out!r}")

    @classmethod
    def from_outputs(
        cls,
        variables: Sequence[str],
        outputs: Iterable[int | None],
        domain: Sequence[int] = BOOL_DOMAIN,
    ) -> TruthTable:
        """Build a table from outcomes listed in row-major order."""
        keys = list(assignments(variables, domain))
        outputs = list(outputs)
        if len(outputs) != len(keys):
            raise ValueError(f"expected {len(keys)} outcomes, got {len(outputs)}")
        return cls(tuple(variables), tuple(domain), dict(zip(keys, outputs)))

    def outputs(self) -> list[int | None]:
        return [self.rows[key] for key in assignments(self.variables, self.domain)]

    def matches(self, other: TruthTable) -> bool:
        """True if the tables agree on every row where both are defined."""
        if self.variables != other.variables or self.domain != other.domain:
            return False
        return all(
            a is DONT_CARE or b is DONT_CARE or a == b
            for a, b in zip(self.outputs(), other.outputs())
        )

    def reorder(self, variables: Sequence[str]) -> TruthTable:
        """Same function over a permuted variable order."""
        variables = tuple(variables)
        if sorted(variables) != sorted(self.variables):
            raise ValueError("reorder needs a permutation of the table's variables")
        index = [self.variables.index(v) for v in variables]
        rows = {}
        for key, out in self.rows.items():
            rows[tuple(key[i] for i in index)] = out
        ordered = {k: rows[k] for k in assignments(variables, self.domain)}
        return TruthTable(variables, self.domain, ordered)

    def to_dict(self) -> dict:
        return {
            "variables": list(self.variables),
            "domain": list(self.domain),
            "rows": [
                {"assign": list(key), "out": "dc" if out is DONT_CARE else out}
                for key, out in zip(assignments(self.variables, self.domain), self.outputs())
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: Mapping) -> TruthTable:
        variables = tuple(data["variables"])
        domain = tuple(int(v) for v in data.get("domain", BOOL_DOMAIN))
        rows = {}
        for row in data["rows"]:
            out = row["out"]
            rows[tuple(int(v) for v in row["assign"])] = DONT_CARE if out == "dc" else int(out)
        ordered = {}
        for key in assignments(variables, domain):
            if key not in rows:
                raise ValueError(f"truth table is missing row {list(key)}")
            ordered[key] = rows[key]
        if len(rows) != len(ordered):
            raise ValueError("truth table has rows outside its domain")
        return cls(variables, domain, ordered)

    @classmethod
    def from_json(cls, text: str) -> TruthTable:
        return cls.from_dict(json.loads(text))

    def format(self) -> str:
        width = max([len(v) for v in self.variables] + [3])
        header = " ".join(v.rjust(width) for v in self.variables) + " | out"
        lines = [header, "-" * len(header)]
        for key, out in zip(assignments(self.variables, self.domain), self.outputs()):
            cells = " ".join(str(v).rjust(width) for v in key)
            lines.append(f"{cells} | {'?' if out is DONT_CARE else out}")
        return "\n".join(lines)


def assignments(variables: Sequence[str], domain: Sequence[int]) -> Iterable[tuple[int, ...]]:
    """Row-major cartesian product: the last variable varies fastest."""
    return itertools.product(domain, repeat=len(variables))


def check_row_count(n_vars: int, domain: Sequence[int], cap: int = DEFAULT_ROW_CAP) -> int:
    if not domain:
        raise ValueError("domain must not be empty")
    rows = len(domain) ** n_vars
    if rows > cap:
        raise DomainTooLarge(f"{len(domain)}^{n_vars} = {rows} rows exceeds the cap of {cap}")
    return rows


def truth_table(
    expr: CondExpr,
    variables: Sequence[str],
    domain: Sequence[int] = BOOL_DOMAIN,
    mode: str = CORRECT,
    cap: int = DEFAULT_ROW_CAP,
) -> TruthTable:
    check_row_count(len(variables), domain, cap)
    rows = {}
    for key in assignments(variables, domain):
        env = dict(zip(variables, key))
        rows[key] = int(evaluate(expr, env, mode))
    return TruthTable(tuple(variables), tuple(domain), rows)
