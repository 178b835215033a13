"""Security analyses over ``.if`` blocks.

* ``lint`` flags the construct the fixed assembler rejects with A2154: a
  ``!`` written on a side of a relation.
* ``difftest`` runs a block through the reference evaluator and through
  both compiled forms, assignment by assignment.
* ``synthesize_trap`` searches for a condition whose source meaning follows
  one truth table while its miscompiled form follows another.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Sequence

from condtrap.condast import (
    BareTest,
    CondExpr,
    IfBlock,
    NotOperand,
    Operand,
    Rel,
    RelOp,
    Span,
    block_variables,
    conj,
    disj,
    format_cond,
    negate,
    walk,
)
from condtrap.errors import NotFound, SearchSpaceExceeded, ToolchainMismatch
from condtrap.lowering import lower
from condtrap.machine import execute
from condtrap.semantics import (
    BOOL_DOMAIN,
    BUGGY,
    CORRECT,
    DEFAULT_ROW_CAP,
    DONT_CARE,
    TruthTable,
    assignments,
    check_row_count,
    eval_buggy,
    eval_correct,
    select_block,
)

A2154 = "A2154"
A2154_MESSAGE = "syntax error in control-flow directive"


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    span: Span | None
    severity: str = "error"

    def format(self, filename: str = "<input>") -> str:
        if self.span is None:
            where = filename
        else:
            where = f"{filename}:{self.span.line}:{self.span.col}"
        return f"{where}: {self.severity} {self.code}: {self.message}"

    def to_dict(self) -> dict:
        span = self.span
        return {
            "code": self.code,
            "severity": self.severity,
            "message": self.message,
            "line": span.line if span else None,
            "col": span.col if span else None,
            "start": span.start if span else None,
            "end": span.end if span else None,
        }


def _negated_relation_sides(expr: CondExpr) -> Iterator[NotOperand]:
    for node in walk(expr):
        if isinstance(node, Rel):
            for side in (node.lhs, node.rhs):
                if side.negations:
                    yield side


def lint(block: IfBlock) -> list[Diagnostic]:
    """One A2154 per relation side carrying a ``!``, spanning the ``!`` tokens."""
    found = []
    for cond, _ in block.arms():
        for side in _negated_relation_sides(cond):
            found.append(Diagnostic(A2154, A2154_MESSAGE, side.bang_span or side.span))
    return found


# ---------------------------------------------------------------------------
# Differential testing


@dataclass(frozen=True)
class DivergenceRow:
    assign: tuple[int, ...]
    ref: str
    correct: str
    buggy: str


@dataclass(frozen=True)
class DivergenceReport:
    """Outcomes are the ids of the blocks entered (``then_0``, ``else_1``...)."""

    block: IfBlock
    variables: tuple[str, ...]
    domain: tuple[int, ...]
    rows: tuple[DivergenceRow, ...]

    @property
    def condition(self) -> CondExpr:
        return self.block.cond

    @property
    def divergent(self) -> list[DivergenceRow]:
        return [row for row in self.rows if row.buggy != row.ref]

    def table(self, column: str) -> TruthTable:
        """Truth table of 'the first arm was entered' for one column."""
        then_id = self.block.then_body.id
        outputs = [int(getattr(row, column) == then_id) for row in self.rows]
        return TruthTable.from_outputs(self.variables, outputs, self.domain)

    def to_dict(self) -> dict:
        return {
            "condition": format_cond(self.block.cond),
            "variables": list(self.variables),
            "domain": list(self.domain),
            "rows": [
                {"assign": list(r.assign), "ref": r.ref, "correct": r.correct, "buggy": r.buggy}
                for r in self.rows
            ],
            "divergent_count": len(self.divergent),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def format(self) -> str:
        width = max([len(v) for v in self.variables] + [3])
        header = " ".join(v.rjust(width) for v in self.variables) + " | ref | correct | buggy"
        lines = [f"condition: {format_cond(self.block.cond)}", header, "-" * len(header)]
        for r in self.rows:
            cells = " ".join(str(v).rjust(width) for v in r.assign)
            flag = "  <-- divergent" if r.buggy != r.ref else ""
            lines.append(f"{cells} | {r.ref} | {r.correct} | {r.buggy}{flag}")
        lines.append(f"divergent rows: {len(self.divergent)} of {len(self.rows)}")
        return "\n".join(lines)


def _run(program, env) -> str:
    result = execute(program, env)
    if len(result.marks) != 1:
        raise ToolchainMismatch(f"expected one block entered, got {list(result.marks)}")
    if any(esp != result.entry_esp for esp in result.state.mark_esp) or (
        result.state.esp != result.entry_esp
    ):
        raise ToolchainMismatch(f"unbalanced stack under {dict(env)}")
    return result.marks[0]


def difftest(
    block: IfBlock,
    variables: Sequence[str] | None = None,
    domain: Sequence[int] = BOOL_DOMAIN,
    cap: int = DEFAULT_ROW_CAP,
) -> DivergenceReport:
    """Compare source meaning against both compilations on every assignment.

    Raises ``ToolchainMismatch`` if the correct compilation ever disagrees
    with the reference evaluator, or the buggy compilation with the buggy
    evaluator.
    """
    if variables is None:
        variables = block_variables(block)
    variables = tuple(variables)
    check_row_count(len(variables), domain, cap)
    correct_prog = lower(block, CORRECT)
    buggy_prog = lower(block, BUGGY)
    rows = []
    for key in assignments(variables, domain):
        env = dict(zip(variables, key))
        ref = select_block(block, env, CORRECT)
        correct = _run(correct_prog, env)
        if correct != ref:
            raise ToolchainMismatch(f"correct lowering entered {correct}, reference {ref}, env {env}")
        buggy = _run(buggy_prog, env)
        expected = select_block(block, env, BUGGY)
        if buggy != expected:
            raise ToolchainMismatch(f"buggy lowering entered {buggy}, buggy evaluator {expected}, env {env}")
        rows.append(DivergenceRow(key, ref, correct, buggy))
    return DivergenceReport(block, variables, tuple(domain), tuple(rows))


# ---------------------------------------------------------------------------
# Trap synthesis


@dataclass(frozen=True)
class TrapSpec:
    """Target behaviour for a trapped condition.

    ``official`` is what the source must mean; ``effective`` is what the
    miscompiled code must do.  Don't-care rows in either are unconstrained.
    """

    official: TruthTable
    effective: TruthTable
    depth_limit: int = 5
    immediates: tuple[int, ...] = (0, 1)
    max_negations: int = 1
    budget: int = 10**7

    def __post_init__(self) -> None:
        if (self.official.variables, self.official.domain) != (
            self.effective.variables,
            self.effective.domain,
        ):
            raise ValueError("official and effective tables must share variables and domain")
        if self.depth_limit < 1:
            raise ValueError("depth limit must be at least 1")

    @property
    def variables(self) -> tuple[str, ...]:
        return self.official.variables

    def operand_pool(self) -> list[Operand]:
        return [Operand.named(v) for v in self.variables] + [
            Operand.imm(v) for v in self.immediates
        ]


def _mask(table: TruthTable) -> tuple[int, int]:
    care = value = 0
    for i, out in enumerate(table.outputs()):
        if out is not DONT_CARE:
            care |= 1 << i
            if out:
                value |= 1 << i
    return care, value


@dataclass
class _Entry:
    # node: leaf CondExpr, or ("not", e) / ("and", l, r) / ("or", l, r)
    node: object
    depth: int
    csig: int
    bsig: int
    _expr: CondExpr | None = field(default=None, repr=False)

    def expr(self) -> CondExpr:
        if self._expr is None:
            self._expr = _build(self.node)
        return self._expr


def _build(node) -> CondExpr:
    if not isinstance(node, tuple):
        return node
    kind = node[0]
    if kind == "not":
        return negate(node[1].expr())
    lhs, rhs = node[1].expr(), node[2].expr()
    return conj(lhs, rhs) if kind == "and" else disj(lhs, rhs)


def _leaves(spec: TrapSpec) -> dict[int, list[CondExpr]]:
    """Bare tests and relations over the operand pool, grouped by node count."""
    sides = [
        NotOperand(n, op) for op in spec.operand_pool() for n in range(spec.max_negations + 1)
    ]
    by_size: dict[int, list[CondExpr]] = {}
    for side in sides:
        by_size.setdefault(1 + side.negations, []).append(BareTest(side))
    for op in RelOp:
        for lhs in sides:
            for rhs in sides:
                if lhs.operand.is_immediate and rhs.operand.is_immediate:
                    continue
                size = 3 + lhs.negations + rhs.negations
                by_size.setdefault(size, []).append(Rel(op, lhs, rhs))
    return by_size


def synthesize_trap(spec: TrapSpec) -> CondExpr:
    """Smallest condition meeting both tables within the depth limit.

    Enumerates by node count with observational-equivalence pruning: two
    sub-conditions that agree on every row under both semantics are
    interchangeable, so only the smallest (then shallowest, then
    lexicographically first) one of each behaviour is kept and combined.
    The returned condition is minimal in node count; among equally small
    matches the one with the smallest canonical text is returned.
    """
    variables = spec.variables
    rows = [dict(zip(variables, key)) for key in assignments(variables, spec.official.domain)]
    full = (1 << len(rows)) - 1
    care_o, want_o = _mask(spec.official)
    care_e, want_e = _mask(spec.effective)

    def signature(expr: CondExpr) -> tuple[int, int]:
        c = b = 0
        for i, env in enumerate(rows):
            if eval_correct(expr, env):
                c |= 1 << i
            if eval_buggy(expr, env):
                b |= 1 << i
        return c, b

    leaves = _leaves(spec)
    max_leaf = max(leaves)
    levels: dict[int, list[_Entry]] = {}
    best_depth: dict[tuple[int, int], int] = {}
    limit = spec.depth_limit
    examined = 0
    size = 0
    last_nonempty = 0

    while True:
        size += 1
        if size > max_leaf and size > 2 * last_nonempty + 1:
            raise NotFound(
                f"no condition of depth <= {limit} meets both tables"
            )
        level_best: dict[tuple[int, int], tuple[int, str | None, _Entry]] = {}
        matches: list[str] = []
        match_exprs: dict[str, CondExpr] = {}

        def consider(entry: _Entry) -> None:
            key = (entry.csig, entry.bsig)
            if (entry.csig & care_o) == want_o and (entry.bsig & care_e) == want_e:
                text = format_cond(entry.expr())
                matches.append(text)
                match_exprs[text] = entry.expr()
            if best_depth.get(key, limit + 1) <= entry.depth:
                return
            held = level_best.get(key)
            if held is None or entry.depth < held[0]:
                level_best[key] = (entry.depth, None, entry)
            elif entry.depth == held[0]:
                held_text = held[1] or format_cond(held[2].expr())
                text = format_cond(entry.expr())
                if text < held_text:
                    level_best[key] = (entry.depth, text, entry)
                else:
                    level_best[key] = (held[0], held_text, held[2])

        for leaf in leaves.get(size, ()):
            examined += 1
            c, b = signature(leaf)
            consider(_Entry(leaf, 1, c, b))

        if limit > 1 and size >= 2:
            for inner in levels.get(size - 1, ()):
                if inner.depth + 1 > limit:
                    continue
                examined += 1
                consider(_Entry(("not", inner), inner.depth + 1, full ^ inner.csig, full ^ inner.bsig))
            for left_size in range(1, size - 1):
                lefts = levels.get(left_size, ())
                rights = levels.get(size - 1 - left_size, ())
                if not lefts or not rights:
                    continue
                examined += 2 * len(lefts) * len(rights)
                if examined > spec.budget:
                    raise SearchSpaceExceeded(f"more than {spec.budget} candidates examined")
                for left in lefts:
                    if left.depth + 1 > limit:
                        continue
                    lc, lb, ld = left.csig, left.bsig, left.depth
                    for right in rights:
                        d = 1 + (ld if ld > right.depth else right.depth)
                        if d > limit:
                            continue
                        rc, rb = right.csig, right.bsig
                        ac, ab = lc & rc, lb & rb
                        if (ac & care_o) == want_o and (ab & care_e) == want_e or best_depth.get((ac, ab), limit + 1) > d:
                            consider(_Entry(("and", left, right), d, ac, ab))
                        oc, ob = lc | rc, lb | rb
                        if (oc & care_o) == want_o and (ob & care_e) == want_e or best_depth.get((oc, ob), limit + 1) > d:
                            consider(_Entry(("or", left, right), d, oc, ob))
        if examined > spec.budget:
            raise SearchSpaceExceeded(f"more than {spec.budget} candidates examined")

        if matches:
            return match_exprs[min(matches)]

        kept = []
        for key, (d, _, entry) in level_best.items():
            best_depth[key] = d
            kept.append(entry)
        if kept:
            levels[size] = kept
            last_nonempty = size
