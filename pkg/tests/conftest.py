from __future__ import annotations

from hypothesis import strategies as st

from condtrap.condast import BareTest, NotOperand, Operand, Rel, RelOp, conj, disj, negate

VARS = ("eax", "ebx", "ecx")


def operands(variables=VARS, immediates=(0, 1, 2, 0xFFFFFFFF)):
    return st.one_of(
        st.sampled_from(variables).map(Operand.named),
        st.sampled_from(immediates).map(Operand.imm),
    )


def sides(variables=VARS, max_negations=2):
    return st.builds(NotOperand, st.integers(0, max_negations), operands(variables))


def leaves(variables=VARS, max_negations=2):
    s = sides(variables, max_negations)
    return st.one_of(
        s.map(BareTest),
        st.builds(Rel, st.sampled_from(list(RelOp)), s, s),
    )


def conditions(variables=VARS, max_negations=2, max_leaves=8):
    return st.recursive(
        leaves(variables, max_negations),
        lambda kids: st.one_of(
            st.builds(conj, kids, kids),
            st.builds(disj, kids, kids),
            kids.map(negate),
        ),
        max_leaves=max_leaves,
    )


def envs(variables=VARS, values=(0, 1, 2, 0xFFFFFFFF)):
    return st.fixed_dictionaries({v: st.sampled_from(values) for v in variables})
