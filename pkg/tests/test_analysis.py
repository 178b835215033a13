import itertools

import pytest
from hypothesis import given, settings

from condtrap.analysis import A2154, A2154_MESSAGE, TrapSpec, difftest, lint, synthesize_trap
from condtrap.condast import (
    BareTest,
    NotOperand,
    Operand,
    Rel,
    RelOp,
    conj,
    depth,
    disj,
    format_cond,
    negate,
    node_count,
    parse,
    parse_condition,
    wrap_condition,
)
from condtrap.errors import NotFound, SearchSpaceExceeded, ToolchainMismatch
from condtrap.semantics import WIDE_DOMAIN, TruthTable, eval_buggy, eval_correct

from conftest import conditions

RUNAS_VARS = ("admin", "user", "pw")


def runas_tables():
    # first table: columns (admin, user, password), last two rows undefined
    official = TruthTable.from_outputs(RUNAS_VARS, [0, 0, 0, 0, 0, 1, None, None])
    # second table is printed with columns (password, user, admin)
    compiled = TruthTable.from_outputs(("pw", "user", "admin"), [0, 0, 0, 0, 0, 1, 1, 1])
    return official, compiled.reorder(RUNAS_VARS)


# ---------------------------------------------------------------------------
# lint


def test_lint_flags_negated_relation_side():
    diags = lint(parse(".if !eax == ebx\n    nop\n.endif\n"))
    assert len(diags) == 1
    assert diags[0].code == A2154 and diags[0].message == A2154_MESSAGE
    assert (diags[0].span.line, diags[0].span.col) == (1, 5)
    assert diags[0].format("t.asm") == "t.asm:1:5: error A2154: syntax error in control-flow directive"


@pytest.mark.parametrize("text", ["!eax", "!(eax == ebx)", "!!eax && !(ebx)", "eax == ebx"])
def test_lint_ignores_bare_and_condition_negation(text):
    assert lint(wrap_condition(text)) == []


def test_lint_counts_each_negated_side():
    block = parse(".if !eax == !ebx && ecx\n.endif\n")
    diags = lint(block)
    assert len(diags) == 2
    assert [d.span.col for d in diags] == [5, 13]
    # Negating both sides is a bijection on {0,1}, so the miscompilation is
    # invisible on booleans; it shows up once a value outside {0,1} occurs.
    names = ("eax", "ebx", "ecx")

    def diverging(domain):
        return [
            env
            for env in (dict(zip(names, v)) for v in itertools.product(domain, repeat=3))
            if eval_buggy(block.cond, env) != eval_correct(block.cond, env)
        ]

    assert diverging((0, 1)) == []
    assert {"eax": 1, "ebx": 2, "ecx": 1} in diverging(WIDE_DOMAIN)


def test_lint_span_covers_bang_run_only():
    src = ".if ebx != !!eax\n.endif\n"
    (diag,) = lint(parse(src))
    assert src[diag.span.start:diag.span.end] == "!!"


def test_lint_covers_elseif_arms():
    block = parse(".if eax\n.elseif !ebx < ecx\n.endif\n")
    (diag,) = lint(block)
    assert diag.span.line == 2


# ---------------------------------------------------------------------------
# difftest


def test_difftest_negated_equality_diverges_everywhere():
    def oracle(a, b):  # C reading vs. negation dropped
        return int((a == 0) == b), int(a == b)

    report = difftest(wrap_condition("!eax == ebx"))
    assert report.variables == ("eax", "ebx")
    assert all(oracle(*k)[0] != oracle(*k)[1] for k in itertools.product((0, 1), repeat=2))
    assert len(report.divergent) == 4


def test_difftest_not_free_condition_has_no_divergence():
    report = difftest(wrap_condition("eax == ebx && ecx"))
    assert len(report.rows) == 8 and report.divergent == []


def test_difftest_double_negation():
    report = difftest(wrap_condition("!(!a == b)"), ["a", "b"])
    assert report.table("ref").outputs() == [1, 0, 0, 1]
    assert report.table("buggy").outputs() == [0, 1, 1, 0]
    assert len(report.divergent) == 4
    data = report.to_dict()
    assert data["divergent_count"] == 4 and data["condition"] == "!(!a == b)"
    assert data["rows"][0] == {"assign": [0, 0], "ref": "then_0", "correct": "then_0", "buggy": "else_1"}


def test_difftest_wide_domain_reveals_non_boolean_divergence():
    block = wrap_condition("!!eax == eax")
    assert difftest(block).divergent == []
    assert difftest(block, domain=WIDE_DOMAIN).divergent


def test_difftest_reports_broken_toolchain(monkeypatch):
    import condtrap.analysis as analysis

    monkeypatch.setattr(analysis, "select_block", lambda block, env, mode: "nonsense")
    with pytest.raises(ToolchainMismatch):
        difftest(wrap_condition("eax"))


@settings(max_examples=200, deadline=None)
@given(conditions(max_leaves=5))
def test_report_integrity_and_lint_soundness(expr):
    block = wrap_condition(expr)
    report = difftest(block, ["eax", "ebx", "ecx"])
    assert all(r.correct == r.ref for r in report.rows)
    if report.divergent:
        assert lint(block)


# ---------------------------------------------------------------------------
# synthesis, checked against an unpruned enumerator


def brute_force(pool, max_negations, max_depth):
    """Every parse-shaped condition over ``pool`` up to ``max_depth``."""
    sides = [NotOperand(n, op) for op in pool for n in range(max_negations + 1)]
    leaves = [BareTest(s) for s in sides]
    leaves += [
        Rel(op, l, r)
        for op in RelOp
        for l in sides
        for r in sides
        if not (l.operand.is_immediate and r.operand.is_immediate)
    ]
    levels = [leaves]
    for _ in range(max_depth - 1):
        below = [e for level in levels for e in level]
        new = [negate(e) for e in below]
        for l, r in itertools.product(below, repeat=2):
            if max(depth(l), depth(r)) == len(levels):
                new.append(conj(l, r))
                new.append(disj(l, r))
        new = [e for e in new if depth(e) == len(levels) + 1]
        levels.append(new)
    return [e for level in levels for e in level]


def behaviour(expr, variables, domain=(0, 1)):
    rows = [dict(zip(variables, k)) for k in itertools.product(domain, repeat=len(variables))]
    return (
        tuple(int(eval_correct(expr, env)) for env in rows),
        tuple(int(eval_buggy(expr, env)) for env in rows),
    )


def satisfies(beh, official, effective):
    c, b = beh
    return all(o is None or o == x for o, x in zip(official, c)) and all(
        e is None or e == x for e, x in zip(effective, b)
    )


@pytest.fixture(scope="module")
def one_var_space():
    space = brute_force([Operand.mem("a"), Operand.imm(0), Operand.imm(1)], 1, 2)
    return [(e, behaviour(e, ("a",)), node_count(e)) for e in space]


def test_const_false_official_const_true_effective_is_reachable(one_var_space):
    official, effective = [0, 0], [1, 1]
    sols = [(n, format_cond(e)) for e, beh, n in one_var_space if satisfies(beh, official, effective)]
    assert sols, "enumeration finds a trap for this pair"
    assert "!a == a" in {t for _, t in sols}
    spec = TrapSpec(
        TruthTable.from_outputs(("a",), official),
        TruthTable.from_outputs(("a",), effective),
        depth_limit=2,
    )
    found = synthesize_trap(spec)
    assert node_count(found) == min(sols)[0]
    assert behaviour(found, ("a",)) == ((0, 0), (1, 1))


def test_not_found_when_no_relation_can_split_the_tables():
    # depth 1, no immediates: a relation's buggy form over one variable is
    # constant, and a bare test is not affected by the bug at all
    space = brute_force([Operand.mem("a")], 1, 1)
    official, effective = [1, 1], [0, 1]
    assert not any(satisfies(behaviour(e, ("a",)), official, effective) for e in space)
    spec = TrapSpec(
        TruthTable.from_outputs(("a",), official),
        TruthTable.from_outputs(("a",), effective),
        depth_limit=1,
        immediates=(),
    )
    with pytest.raises(NotFound):
        synthesize_trap(spec)


@pytest.mark.parametrize("official", list(itertools.product((0, 1), repeat=2)))
@pytest.mark.parametrize("effective", list(itertools.product((0, 1), repeat=2)))
def test_synthesis_is_size_minimal_over_one_variable(one_var_space, official, effective):
    sols = sorted((n, format_cond(e)) for e, beh, n in one_var_space if satisfies(beh, official, effective))
    spec = TrapSpec(
        TruthTable.from_outputs(("a",), official),
        TruthTable.from_outputs(("a",), effective),
        depth_limit=2,
    )
    if not sols:
        with pytest.raises(NotFound):
            synthesize_trap(spec)
        return
    found = synthesize_trap(spec)
    assert satisfies(behaviour(found, ("a",)), official, effective)
    assert depth(found) <= 2
    assert node_count(found) == sols[0][0]
    assert format_cond(found) == sols[0][1]


def test_synthesis_is_size_minimal_over_two_variables():
    variables = ("a", "b")
    space = [(e, behaviour(e, variables), node_count(e)) for e in brute_force([Operand.mem(v) for v in variables], 1, 2)]
    targets = [
        ([0, 1, 1, 0], [1, 0, 0, 1]),
        ([1, 0, 0, 1], [0, 1, 1, 0]),
        ([0, 0, 0, 1], [0, 1, 1, 1]),
        ([None, 0, 1, 1], [1, 1, 0, None]),
        ([1, 1, 1, 1], [0, 0, 0, 0]),
    ]
    for official, effective in targets:
        sols = [n for e, beh, n in space if satisfies(beh, official, effective)]
        spec = TrapSpec(
            TruthTable.from_outputs(variables, official),
            TruthTable.from_outputs(variables, effective),
            depth_limit=2,
            immediates=(),
        )
        if not sols:
            with pytest.raises(NotFound):
                synthesize_trap(spec)
            continue
        found = synthesize_trap(spec)
        assert node_count(found) == min(sols), (official, effective)
        assert satisfies(behaviour(found, variables), official, effective)


def test_identity_search_returns_negation_free_condition():
    table = TruthTable.from_outputs(("a", "b"), [1, 0, 0, 1])
    found = synthesize_trap(TrapSpec(table, table, depth_limit=3))
    assert format_cond(found) == "a == b"
    assert lint(wrap_condition(found)) == []


def test_runas_trap():
    official, effective = runas_tables()
    assert effective.outputs() == [0, 0, 0, 1, 0, 1, 0, 1]
    found = synthesize_trap(TrapSpec(official, effective, depth_limit=5))
    assert depth(found) <= 5
    block = wrap_condition(found)
    report = difftest(block, RUNAS_VARS)
    assert official.matches(report.table("ref"))
    assert effective.matches(report.table("buggy"))
    assert lint(block)


def test_tables_must_agree_on_variables():
    with pytest.raises(ValueError):
        TrapSpec(TruthTable.from_outputs(("a",), [0, 1]), TruthTable.from_outputs(("b",), [0, 1]))
    with pytest.raises(ValueError):
        t = TruthTable.from_outputs(("a",), [0, 1])
        TrapSpec(t, t, depth_limit=0)


def test_search_budget():
    official, effective = runas_tables()
    with pytest.raises(SearchSpaceExceeded):
        synthesize_trap(TrapSpec(official, effective, budget=1000))


def test_synthesized_result_parses_back():
    official, effective = runas_tables()
    found = synthesize_trap(TrapSpec(official, effective))
    assert parse_condition(format_cond(found)) == found
