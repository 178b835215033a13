"""AST, parser and pretty-printer for the ``.if`` block language.

The grammar is a small MASM-like subset::

    block    := ".if" cond NL body (".elseif" cond NL body)* (".else" NL body)? ".endif"
    cond     := or ; or := and ("||" and)* ; and := term ("&&" term)*
    term     := "!" term | atom
    atom     := "(" cond ")" | relexpr
    relexpr  := notop (relop notop)?
    notop    := "!"* operand

A ``!`` written directly before an operand is folded into that operand's
negation count (``NotOperand``).  A ``!`` before a parenthesis becomes a
``Not`` node.  A parenthesised single operand used as a relation side,
as in ``(!eax) == ebx``, is unwrapped to the bare side: the two spellings
compile to the same thing, so they parse to the same tree.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterator, Union

from condtrap.errors import ParseError

MASK32 = 0xFFFFFFFF

REGISTERS = ("eax", "ebx", "ecx", "edx", "esi", "edi", "ebp", "esp")

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


@dataclass(frozen=True)
class Span:
    """Half-open character range ``[start, end)`` into the parsed source.

    ``line`` and ``col`` are 1-based and locate ``start``.
    """

    start: int
    end: int
    line: int
    col: int


class RelOp(enum.Enum):
    EQ = "=="
    NE = "!="
    LT = "<"
    LE = "<="
    GT = ">"
    GE = ">="

    @property
    def symbol(self) -> str:
        return self.value

    def compare(self, a: int, b: int) -> bool:
        """Unsigned comparison of two 32-bit values."""
        a &= MASK32
        b &= MASK32
        if self is RelOp.EQ:
            return a == b
        if self is RelOp.NE:
            return a != b
        if self is RelOp.LT:
            return a < b
        if self is RelOp.LE:
            return a <= b
        if self is RelOp.GT:
            return a > b
        return a >= b


_RELOPS = {op.value: op for op in RelOp}


@dataclass(frozen=True)
class Operand:
    kind: str  # "register" | "memory" | "immediate"
    name: str | None = None
    value: int | None = None

    def __post_init__(self) -> None:
        if self.kind == "register":
            if self.name not in REGISTERS:
                raise ValueError(f"unknown register {self.name!r}")
        elif self.kind == "memory":
            if not self.name or not _IDENT_RE.match(self.name):
                raise ValueError(f"invalid memory symbol {self.name!r}")
            if self.name.lower() in REGISTERS:
                raise ValueError(f"memory symbol {self.name!r} clashes with a register")
        elif self.kind == "immediate":
            if self.value is None or not 0 <= self.value <= MASK32:
                raise ValueError(f"immediate {self.value!r} does not fit in 32 bits")
        else:
            raise ValueError(f"unknown operand kind {self.kind!r}")

    @classmethod
    def reg(cls, name: str) -> Operand:
        return cls("register", name=name)

    @classmethod
    def mem(cls, name: str) -> Operand:
        return cls("memory", name=name)

    @classmethod
    def imm(cls, value: int) -> Operand:
        return cls("immediate", value=value)

    @classmethod
    def named(cls, name: str) -> Operand:
        """Register if ``name`` is one, memory symbol otherwise."""
        if name.lower() in REGISTERS:
            return cls.reg(name.lower())
        return cls.mem(name)

    @property
    def is_immediate(self) -> bool:
        return self.kind == "immediate"

    def __str__(self) -> str:
        if self.kind == "immediate":
            return format_immediate(self.value)
        return self.name


def format_immediate(value: int) -> str:
    return str(value) if value < 0x10000 else f"0x{value:X}"


@dataclass(frozen=True)
class NotOperand:
    """One side of a relation (or a bare test): ``!``*negations operand."""

    negations: int
    operand: Operand
    span: Span | None = field(default=None, compare=False, repr=False)
    bang_span: Span | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.negations < 0:
            raise ValueError("negation count must be non-negative")

    def __str__(self) -> str:
        return "!" * self.negations + str(self.operand)


@dataclass(frozen=True)
class BareTest:
    arg: NotOperand
    span: Span | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Rel:
    op: RelOp
    lhs: NotOperand
    rhs: NotOperand
    span: Span | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Not:
    inner: CondExpr
    span: Span | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class And:
    lhs: CondExpr
    rhs: CondExpr
    span: Span | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Or:
    lhs: CondExpr
    rhs: CondExpr
    span: Span | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Paren:
    inner: CondExpr
    span: Span | None = field(default=None, compare=False, repr=False)


CondExpr = Union[BareTest, Rel, Not, And, Or, Paren]


@dataclass(frozen=True)
class BodyStmt:
    op: str  # "nop" | "mov" | "add"
    reg: str | None = None
    imm: int | None = None

    def __str__(self) -> str:
        if self.op == "nop":
            return "nop"
        return f"{self.op} {self.reg}, {format_immediate(self.imm)}"


@dataclass(frozen=True)
class Body:
    id: str
    stmts: tuple[BodyStmt, ...] = ()


@dataclass(frozen=True)
class IfBlock:
    cond: CondExpr
    then_body: Body
    elseifs: tuple[tuple[CondExpr, Body], ...] = ()
    else_body: Body | None = None
    source: str | None = field(default=None, compare=False, repr=False)

    def arms(self) -> Iterator[tuple[CondExpr, Body]]:
        """Yield every guarded arm in source order."""
        yield self.cond, self.then_body
        yield from self.elseifs

    @property
    def fallthrough_id(self) -> str:
        """Block reached when no condition holds."""
        return self.else_body.id if self.else_body is not None else ENDIF_ID

    def block_ids(self) -> list[str]:
        ids = [body.id for _, body in self.arms()]
        ids.append(self.fallthrough_id)
        return ids


ENDIF_ID = "endif"


def wrap_condition(cond: CondExpr | str) -> IfBlock:
    """Build ``.if <cond> / nop / .else / nop / .endif`` around a condition."""
    text = cond if isinstance(cond, str) else format_cond(cond)
    return parse(f".if {text}\n    nop\n.else\n    nop\n.endif\n")


# ---------------------------------------------------------------------------
# Builders producing parse-shaped trees (parentheses only where needed)


def conj(lhs: CondExpr, rhs: CondExpr) -> And:
    if isinstance(lhs, Or):
        lhs = Paren(lhs)
    if isinstance(rhs, (And, Or)):
        rhs = Paren(rhs)
    return And(lhs, rhs)


def disj(lhs: CondExpr, rhs: CondExpr) -> Or:
    if isinstance(rhs, Or):
        rhs = Paren(rhs)
    return Or(lhs, rhs)


def negate(expr: CondExpr) -> Not:
    return Not(expr) if isinstance(expr, (Not, Paren)) else Not(Paren(expr))


# ---------------------------------------------------------------------------
# Tree utilities


def children(expr: CondExpr) -> tuple[CondExpr, ...]:
    if isinstance(expr, (And, Or)):
        return (expr.lhs, expr.rhs)
    if isinstance(expr, (Not, Paren)):
        return (expr.inner,)
    return ()


def walk(expr: CondExpr) -> Iterator[CondExpr]:
    """Pre-order traversal."""
    stack = [expr]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(children(node)))


def sides(expr: CondExpr) -> Iterator[NotOperand]:
    for node in walk(expr):
        if isinstance(node, BareTest):
            yield node.arg
        elif isinstance(node, Rel):
            yield node.lhs
            yield node.rhs


def variables(expr: CondExpr) -> list[str]:
    """Names of non-immediate operands in first-appearance order."""
    seen: dict[str, None] = {}
    for side in sides(expr):
        if not side.operand.is_immediate:
            seen.setdefault(side.operand.name, None)
    return list(seen)


def block_variables(block: IfBlock) -> list[str]:
    seen: dict[str, None] = {}
    for cond, _ in block.arms():
        for name in variables(cond):
            seen.setdefault(name, None)
    return list(seen)


def has_negation(expr: CondExpr) -> bool:
    return any(isinstance(n, Not) for n in walk(expr)) or any(
        s.negations for s in sides(expr)
    )


def node_count(expr: CondExpr) -> int:
    """Operands plus operators; parentheses are free.

    Each ``!`` counts once, whether it negates an operand or a condition.
    """
    if isinstance(expr, BareTest):
        return 1 + expr.arg.negations
    if isinstance(expr, Rel):
        return 3 + expr.lhs.negations + expr.rhs.negations
    if isinstance(expr, Not):
        return 1 + node_count(expr.inner)
    if isinstance(expr, Paren):
        return node_count(expr.inner)
    return 1 + node_count(expr.lhs) + node_count(expr.rhs)


def depth(expr: CondExpr) -> int:
    """Nesting depth of logical structure; leaves (tests, relations) are 1."""
    if isinstance(expr, (BareTest, Rel)):
        return 1
    if isinstance(expr, Paren):
        return depth(expr.inner)
    if isinstance(expr, Not):
        return 1 + depth(expr.inner)
    return 1 + max(depth(expr.lhs), depth(expr.rhs))


# ---------------------------------------------------------------------------
# Pretty-printing


def format_cond(expr: CondExpr) -> str:
    if isinstance(expr, BareTest):
        return str(expr.arg)
    if isinstance(expr, Rel):
        return f"{expr.lhs} {expr.op.symbol} {expr.rhs}"
    if isinstance(expr, Not):
        return "!" + format_cond(expr.inner)
    if isinstance(expr, Paren):
        return "(" + format_cond(expr.inner) + ")"
    if isinstance(expr, And):
        return f"{format_cond(expr.lhs)} && {format_cond(expr.rhs)}"
    if isinstance(expr, Or):
        return f"{format_cond(expr.lhs)} || {format_cond(expr.rhs)}"
    raise TypeError(f"not a condition: {expr!r}")


def pretty_print(block: IfBlock) -> str:
    out = []

    def emit_body(body: Body) -> None:
        out.extend(f"    {stmt}" for stmt in body.stmts)

    out.append(f".if {format_cond(block.cond)}")
    emit_body(block.then_body)
    for cond, body in block.elseifs:
        out.append(f".elseif {format_cond(cond)}")
        emit_body(body)
    if block.else_body is not None:
        out.append(".else")
        emit_body(block.else_body)
    out.append(".endif")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Parsing

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t]+)
  | (?P<op>==|!=|<=|>=|&&|\|\||[<>!()])
  | (?P<num>(?:0[xX][0-9A-Fa-f]+|[0-9]+)(?![A-Za-z0-9_]))
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    start: int
    end: int


class _CondParser:
    def __init__(self, text: str, offset: int, line: int, col: int) -> None:
        # offset/col locate text[0] within the whole source
        self.text = text
        self.offset = offset
        self.line = line
        self.col0 = col
        self.tokens = self._tokenize()
        self.pos = 0

    def _tokenize(self) -> list[_Token]:
        tokens = []
        i = 0
        while i < len(self.text):
            m = _TOKEN_RE.match(self.text, i)
            if m is None:
                raise self._error(f"unexpected character {self.text[i]!r}", i)
            if m.lastgroup != "ws":
                tokens.append(_Token(m.lastgroup, m.group(), m.start(), m.end()))
            i = m.end()
        return tokens

    def _error(self, message: str, index: int | None = None) -> ParseError:
        if index is None:
            index = self.tokens[self.pos].start if self.pos < len(self.tokens) else len(self.text)
        return ParseError(message, self.line, self.col0 + index)

    def _span(self, start: int, end: int) -> Span:
        return Span(self.offset + start, self.offset + end, self.line, self.col0 + start)

    def _peek(self) -> _Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def _at(self, text: str) -> bool:
        tok = self._peek()
        return tok is not None and tok.kind == "op" and tok.text == text

    def _at_relop(self) -> bool:
        tok = self._peek()
        return tok is not None and tok.kind == "op" and tok.text in _RELOPS

    def _next(self) -> _Token:
        tok = self._peek()
        if tok is None:
            raise self._error("unexpected end of condition")
        self.pos += 1
        return tok

    def parse(self) -> CondExpr:
        if not self.tokens:
            raise self._error("empty condition", 0)
        expr = self._or()
        if self._peek() is not None:
            tok = self._peek()
            if tok.text == ")":
                raise self._error("unbalanced ')'")
            raise self._error(f"unexpected token {tok.text!r}")
        return expr

    def _or(self) -> CondExpr:
        lhs = self._and()
        while self._at("||"):
            self._next()
            rhs = self._and()
            lhs = Or(lhs, rhs, self._join(lhs, rhs))
        return lhs

    def _and(self) -> CondExpr:
        lhs = self._term()
        while self._at("&&"):
            self._next()
            rhs = self._term()
            lhs = And(lhs, rhs, self._join(lhs, rhs))
        return lhs

    def _join(self, a: CondExpr, b: CondExpr) -> Span:
        return Span(a.span.start, b.span.end, a.span.line, a.span.col)

    def _bangs(self) -> list[_Token]:
        bangs = []
        while self._at("!"):
            bangs.append(self._next())
        return bangs

    def _term(self) -> CondExpr:
        bangs = self._bangs()
        if self._at("("):
            paren = self._paren()
            if self._at_relop():
                if bangs:
                    raise self._error(
                        "'!' cannot be applied across parentheses to a relation operand",
                        bangs[0].start,
                    )
                return self._finish_rel(self._paren_side(paren))
            node: CondExpr = paren
            for bang in reversed(bangs):
                node = Not(node, Span(self.offset + bang.start, node.span.end, self.line, self.col0 + bang.start))
            return node
        side = self._side_from(bangs, self._operand())
        if self._at_relop():
            return self._finish_rel(side)
        return BareTest(side, side.span)

    def _paren(self) -> Paren:
        open_tok = self._next()
        if self._peek() is None:
            raise self._error("unbalanced '('", open_tok.start)
        inner = self._or()
        if not self._at(")"):
            raise self._error("unbalanced '('", open_tok.start)
        close_tok = self._next()
        return Paren(inner, self._span(open_tok.start, close_tok.end))

    def _paren_side(self, paren: Paren) -> NotOperand:
        inner: CondExpr = paren
        while isinstance(inner, Paren):
            inner = inner.inner
        if not isinstance(inner, BareTest):
            raise self._error(
                "relation operand in parentheses must be a single operand",
                paren.span.start - self.offset,
            )
        return inner.arg

    def _side_from(self, bangs: list[_Token], operand: tuple[Operand, _Token]) -> NotOperand:
        op, tok = operand
        start = bangs[0].start if bangs else tok.start
        bang_span = self._span(bangs[0].start, bangs[-1].end) if bangs else None
        return NotOperand(len(bangs), op, self._span(start, tok.end), bang_span)

    def _side(self) -> NotOperand:
        bangs = self._bangs()
        if self._at("("):
            if bangs:
                raise self._error(
                    "'!' cannot be applied across parentheses to a relation operand",
                    bangs[0].start,
                )
            return self._paren_side(self._paren())
        return self._side_from(bangs, self._operand())

    def _finish_rel(self, lhs: NotOperand) -> Rel:
        op = _RELOPS[self._next().text]
        rhs = self._side()
        if self._at_relop():
            raise self._error("relational operators cannot be chained")
        return Rel(op, lhs, rhs, Span(lhs.span.start, rhs.span.end, lhs.span.line, lhs.span.col))

    def _operand(self) -> tuple[Operand, _Token]:
        tok = self._peek()
        if tok is None:
            raise self._error("expected an operand")
        if tok.kind == "num":
            value = int(tok.text, 0) if tok.text[:2].lower() == "0x" else int(tok.text, 10)
            if value > MASK32:
                raise self._error(f"immediate {tok.text} does not fit in 32 bits")
            self.pos += 1
            return Operand.imm(value), tok
        if tok.kind == "ident":
            self.pos += 1
            return Operand.named(tok.text), tok
        if tok.text == ")":
            raise self._error("unbalanced ')'")
        raise self._error(f"expected an operand, got {tok.text!r}")


def parse_condition(text: str) -> CondExpr:
    """Parse a bare condition expression (no ``.if`` wrapper)."""
    return _CondParser(text, 0, 1, 1).parse()


_DIRECTIVE_RE = re.compile(r"\s*(\.[A-Za-z]+)(?![A-Za-z0-9_])(.*)\Z", re.DOTALL)
_STMT_RE = re.compile(r"(mov|add)\s+([A-Za-z]+)\s*,\s*(\S+)\Z", re.IGNORECASE)


def _parse_stmt(text: str, line: int, col: int) -> BodyStmt:
    if text.lower() == "nop":
        return BodyStmt("nop")
    m = _STMT_RE.match(text)
    if m is None:
        raise ParseError(f"unsupported body statement {text!r}", line, col)
    reg = m.group(2).lower()
    if reg not in REGISTERS:
        raise ParseError(f"unknown register {m.group(2)!r}", line, col)
    raw = m.group(3)
    try:
        imm = int(raw, 0) if raw[:2].lower() == "0x" else int(raw, 10)
    except ValueError:
        raise ParseError(f"invalid immediate {raw!r}", line, col) from None
    if not 0 <= imm <= MASK32:
        raise ParseError(f"immediate {raw} does not fit in 32 bits", line, col)
    return BodyStmt(m.group(1).lower(), reg, imm)


def parse(source: str) -> IfBlock:
    """Parse one ``.if ... .endif`` block.

    Raises ``ParseError`` with the offending line and column on any
    malformed input.
    """
    cond: CondExpr | None = None
    elseifs: list[tuple[CondExpr, Body]] = []
    then_body: Body | None = None
    else_body: Body | None = None
    # arm currently collecting statements: (kind, cond)
    current: tuple[str, CondExpr | None] | None = None
    stmts: list[BodyStmt] = []
    arm_index = 0
    done = False
    seen_else = False

    def close_arm() -> None:
        nonlocal then_body, else_body, arm_index, stmts
        kind, arm_cond = current
        if kind == "if":
            then_body = Body(f"then_{arm_index}", tuple(stmts))
        elif kind == "elseif":
            elseifs.append((arm_cond, Body(f"elseif_{arm_index}", tuple(stmts))))
        else:
            else_body = Body(f"else_{arm_index}", tuple(stmts))
        arm_index += 1
        stmts = []

    offset = 0
    lineno = 0
    for lineno, raw in enumerate(source.splitlines(keepends=True), start=1):
        line_offset = offset
        offset += len(raw)
        code = raw.rstrip("\r\n").split(";", 1)[0]
        stripped = code.strip()
        if not stripped:
            continue
        col = len(code) - len(code.lstrip()) + 1
        if done:
            raise ParseError("unexpected text after '.endif'", lineno, col)
        m = _DIRECTIVE_RE.match(code)
        if m is None:
            if current is None:
                raise ParseError("expected '.if'", lineno, col)
            stmts.append(_parse_stmt(stripped, lineno, col))
            continue
        directive = m.group(1).lower()
        rest = m.group(2)
        cond_start = m.start(2)
        if directive in (".if", ".elseif"):
            if directive == ".if" and current is not None:
                raise ParseError("nested '.if' blocks are not supported", lineno, col)
            if directive == ".elseif" and (current is None or seen_else):
                raise ParseError("'.elseif' without a matching '.if'", lineno, col)
            lead = len(rest) - len(rest.lstrip())
            text = rest.strip()
            if not text:
                raise ParseError(f"missing condition after '{directive}'", lineno, col)
            parsed = _CondParser(text, line_offset + cond_start + lead, lineno, cond_start + lead + 1).parse()
            if current is not None:
                close_arm()
            if directive == ".if":
                cond = parsed
                current = ("if", parsed)
            else:
                current = ("elseif", parsed)
        elif directive == ".else":
            if current is None or seen_else:
                raise ParseError("'.else' without a matching '.if'", lineno, col)
            if rest.strip():
                raise ParseError("unexpected text after '.else'", lineno, col + len(m.group(1)))
            close_arm()
            current = ("else", None)
            seen_else = True
        elif directive == ".endif":
            if current is None:
                raise ParseError("'.endif' without a matching '.if'", lineno, col)
            if rest.strip():
                raise ParseError("unexpected text after '.endif'", lineno, col + len(m.group(1)))
            close_arm()
            current = None
            done = True
        else:
            raise ParseError(f"unsupported directive {m.group(1)!r}", lineno, col)
    if not done:
        if cond is None:
            raise ParseError("expected '.if'", max(lineno, 1), 1)
        raise ParseError("missing '.endif'", lineno + 1, 1)
    return IfBlock(cond, then_body, tuple(elseifs), else_body, source)
