import json
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condtrap.condast import NotOperand, Rel, RelOp, parse, walk, wrap_condition
from condtrap.errors import UndefinedLabel, UnsupportedConstruct
from condtrap.lowering import (
    Instruction,
    LoweredProgram,
    jump,
    label,
    lower,
    mark,
    normalize_labels,
    stack_violations,
)
from condtrap.machine import execute
from condtrap.semantics import BUGGY, CORRECT, select_block

from conftest import conditions, envs


def text_of(cond, mode):
    return normalize_labels(lower(wrap_condition(cond), mode)).to_text().splitlines()[1:]


def test_equality_golden_correct_mode():
    block = parse(".if eax == ebx\n    nop\n.endif\n")
    program = normalize_labels(lower(block, CORRECT))
    assert [str(i).strip() for i in program.instructions] == [
        "cmp eax, ebx",
        "jne L0",
        "mark then_0",
        "jmp L1",
        "L0:",
        "mark endif",
        "L1:",
        "halt",
    ]
    assert program.markers == {"then_0": 2, "endif": 5}


@pytest.mark.parametrize("form", ["!eax == ebx", "eax == !ebx", "!eax == !ebx", "(!eax) == ebx"])
def test_buggy_negated_forms_compile_identically(form):
    plain = normalize_labels(lower(wrap_condition("eax == ebx"), BUGGY))
    assert normalize_labels(lower(wrap_condition(form), BUGGY)) == plain


def test_bare_negation_inverts_jump():
    assert text_of("!eax", BUGGY)[:2] == ["    or eax, eax", "    jne L0"]
    assert text_of("eax", BUGGY)[:2] == ["    or eax, eax", "    je L0"]
    assert text_of("!!eax", CORRECT)[:2] == ["    or eax, eax", "    je L0"]


def test_memory_bare_test_uses_cmp():
    assert text_of("isAdmin", CORRECT)[:2] == ["    cmp isAdmin, 0", "    je L0"]


@pytest.mark.parametrize(
    "op, jcc",
    [("==", "jne"), ("!=", "je"), ("<", "jae"), ("<=", "ja"), (">", "jbe"), (">=", "jb")],
)
def test_relop_jump_to_false_map(op, jcc):
    assert text_of(f"eax {op} ebx", BUGGY)[:2] == ["    cmp eax, ebx", f"    {jcc} L0"]


def test_not_on_condition_swaps_targets():
    assert text_of("!(eax == ebx)", BUGGY)[:2] == ["    cmp eax, ebx", "    je L0"]


def test_or_uses_local_true_label():
    assert text_of("eax || ebx", BUGGY)[:6] == [
        "    or eax, eax",
        "    jne L0",
        "    or ebx, ebx",
        "    je L1",
        "L0:",
        "    mark then_0",
    ]


def test_correct_mode_materializes_negation_on_stack():
    program = lower(wrap_condition("!eax == ebx"), CORRECT)
    ops = [i.op for i in program.instructions]
    assert ops.count("push") == 1
    releases = [i for i in program.instructions if i.op == "add"]
    assert len(releases) == 2 and all(str(i).strip() == "add esp, 4" for i in releases)
    assert "    cmp [esp+0], ebx" in program.to_text().splitlines()
    assert stack_violations(program) == []


def test_correct_mode_double_negation_iterates():
    lines = text_of("!!eax == !ebx", CORRECT)
    assert lines.count("    push 0") == 3
    assert "    cmp [esp+4], 0" in lines
    assert "    cmp [esp+4], [esp+0]" in lines
    assert lines.count("    add esp, 12") == 2


def test_esp_in_materialized_relation_is_rejected():
    with pytest.raises(UnsupportedConstruct):
        lower(wrap_condition("!eax == esp"), CORRECT)
    lower(wrap_condition("!eax == esp"), BUGGY)
    lower(wrap_condition("esp == eax"), CORRECT)


def test_normalize_labels_renames_in_definition_order():
    program = LoweredProgram(
        (jump("jne", "Lelse_7"), mark("then_0"), jump("jmp", "Lend_9"), label("Lelse_7"), label("Lend_9"), Instruction("halt")),
        CORRECT,
        {"then_0": 1},
    )
    normalized = normalize_labels(program)
    assert [str(i).strip() for i in normalized.instructions] == ["jne L0", "mark then_0", "jmp L1", "L0:", "L1:", "halt"]
    assert normalize_labels(normalized) == normalized


def test_normalize_labels_rejects_dangling_target():
    program = LoweredProgram((jump("je", "nowhere"), Instruction("halt")), CORRECT)
    with pytest.raises(UndefinedLabel):
        normalize_labels(program)


def test_json_form():
    data = json.loads(lower(wrap_condition("!eax == ebx"), CORRECT).to_json())
    assert data[0] == {"op": "push", "args": ["0"]}
    assert data[2]["op"] == "jne" and "target" in data[2]


@settings(max_examples=200)
@given(conditions(), st.sampled_from([CORRECT, BUGGY]))
def test_normalize_is_idempotent_and_preserves_order(expr, mode):
    program = lower(wrap_condition(expr), mode)
    once = normalize_labels(program)
    assert normalize_labels(once) == once
    assert [i.op for i in once.instructions] == [i.op for i in program.instructions]


@settings(max_examples=200)
@given(conditions(), st.data())
def test_buggy_lowering_ignores_relation_negations(expr, data):
    rels = [n for n in walk(expr) if isinstance(n, Rel)]
    if not rels:
        return
    target = data.draw(st.sampled_from(rels))
    extra = data.draw(st.integers(1, 2))
    bumped = Rel(target.op, NotOperand(target.lhs.negations + extra, target.lhs.operand), target.rhs)
    block = wrap_condition(expr)
    changed = replace(block, cond=_substitute(block.cond, target, bumped))
    assert normalize_labels(lower(changed, BUGGY)) == normalize_labels(lower(block, BUGGY))


def _substitute(expr, old, new):
    if expr is old or expr == old:
        return new
    fields = {}
    for name in ("inner", "lhs", "rhs"):
        child = getattr(expr, name, None)
        if child is not None and not isinstance(child, NotOperand):
            fields[name] = _substitute(child, old, new)
    return replace(expr, **fields) if fields else expr


@settings(max_examples=300)
@given(conditions(), st.sampled_from([CORRECT, BUGGY]))
def test_static_stack_walk_finds_no_violations(expr, mode):
    assert stack_violations(lower(wrap_condition(expr), mode)) == []


def test_static_stack_walk_detects_leak():
    program = LoweredProgram(
        (Instruction("push", (parse(".if 0\n.endif").cond.arg.operand,)), mark("then_0"), Instruction("halt")),
        CORRECT,
    )
    assert stack_violations(program)


@settings(max_examples=200)
@given(conditions(), envs(), st.sampled_from([CORRECT, BUGGY]))
def test_execution_matches_evaluator(expr, env, mode):
    block = wrap_condition(expr)
    result = execute(lower(block, mode), env)
    assert result.marks == (select_block(block, env, mode),)
    assert set(result.state.mark_esp) == {result.entry_esp}


def test_elseif_chain_lowering():
    block = parse(".if !eax == ebx\n.elseif ecx\n.else\n.endif\n")
    for mode in (CORRECT, BUGGY):
        program = lower(block, mode)
        assert set(program.markers) == {"then_0", "elseif_1", "else_2"}
        for env in ({"eax": 1, "ebx": 0, "ecx": 0}, {"eax": 0, "ebx": 0, "ecx": 1}, {"eax": 0, "ebx": 0, "ecx": 0}):
            assert execute(program, env).marks == (select_block(block, env, mode),)
