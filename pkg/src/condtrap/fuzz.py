"""Seeded random conditions for property and oracle-equivalence testing."""
from __future__ import annotations

import random
from typing import Sequence

from condtrap.condast import (
    BareTest,
    CondExpr,
    NotOperand,
    Operand,
    Rel,
    RelOp,
    conj,
    disj,
    negate,
)

DEFAULT_VARIABLES = ("eax", "ebx", "ecx")
DEFAULT_IMMEDIATES = (0, 1, 2)


def random_side(
    rng: random.Random,
    variables: Sequence[str],
    immediates: Sequence[int],
    max_negations: int,
) -> NotOperand:
    if immediates and rng.random() < 0.2:
        operand = Operand.imm(rng.choice(immediates))
    else:
        operand = Operand.named(rng.choice(variables))
    # weighted toward 0 and 1 negations, which is where the bug lives
    negations = min(rng.choice((0, 0, 1, 1, 1, 2)), max_negations)
    return NotOperand(negations, operand)


def random_leaf(
    rng: random.Random,
    variables: Sequence[str],
    immediates: Sequence[int],
    max_negations: int,
) -> CondExpr:
    lhs = random_side(rng, variables, immediates, max_negations)
    if rng.random() < 0.25:
        return BareTest(lhs)
    rhs = random_side(rng, variables, immediates, max_negations)
    return Rel(rng.choice(list(RelOp)), lhs, rhs)


def random_condition(
    rng: random.Random,
    max_depth: int = 4,
    variables: Sequence[str] = DEFAULT_VARIABLES,
    immediates: Sequence[int] = DEFAULT_IMMEDIATES,
    max_negations: int = 2,
) -> CondExpr:
    """A parse-shaped condition of depth at most ``max_depth``."""
    if max_depth <= 1 or rng.random() < 0.3:
        return random_leaf(rng, variables, immediates, max_negations)
    kind = rng.choice(("and", "or", "and", "or", "not"))
    if kind == "not":
        return negate(random_condition(rng, max_depth - 1, variables, immediates, max_negations))
    lhs = random_condition(rng, max_depth - 1, variables, immediates, max_negations)
    rhs = random_condition(rng, max_depth - 1, variables, immediates, max_negations)
    return conj(lhs, rhs) if kind == "and" else disj(lhs, rhs)


def corpus(
    n: int = 1000,
    seed: int = 8232,
    max_depth: int = 4,
    variables: Sequence[str] = DEFAULT_VARIABLES,
) -> list[CondExpr]:
    rng = random.Random(seed)
    return [random_condition(rng, max_depth, variables) for _ in range(n)]
