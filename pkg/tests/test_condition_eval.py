import itertools
from decimal import Decimal

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polyjur.condition_eval import Evaluator, compare, evaluate, mark, resolve_parameter
from polyjur.errors import EvaluationError
from polyjur.fact_store import Store, materialize_containment
from polyjur.metamodel import (
    Comparison,
    ComplianceAssertion,
    Composite,
    Conditional,
    ContainsLabel,
    Environment,
    HasLabel,
    ParameterSource,
    PureImplication,
    RelationKind,
    Rule,
)


def _store(labels=(), scope="g", containers=("d",), contains=(), framework="F"):
    env = Environment(list(containers), list(contains), scopes={scope: list(containers)})
    store = Store(env)
    for d, l in labels:
        store.insert(ComplianceAssertion(d, l, scope, framework, True))
    return store


@pytest.mark.parametrize("n", [1, 2, 3, 4])
@pytest.mark.parametrize("op", ["AND", "OR"])
def test_composite_truth_tables(n, op):
    atoms = tuple(HasLabel(RelationKind.ID, f"L{i}", f"a{i}") for i in range(n))
    cond = Composite(op, atoms, "root")
    for bits in itertools.product([False, True], repeat=n):
        store = _store([("d", f"L{i}") for i, b in enumerate(bits) if b])
        ok = evaluate(cond, "d", "g", store)
        assert ok == (all(bits) if op == "AND" else any(bits))
        ev = store.evaluation("root", "d", "g")
        assert (ev.result, ev.satisfied_count, ev.total_count) == (ok, sum(bits), n)
        for i, b in enumerate(bits):
            # no short-circuit: every child is evaluated and recorded
            assert store.evaluation(f"a{i}", "d", "g").result == b


@st.composite
def trees(draw, depth=0):
    if depth < 3 and draw(st.booleans()):
        children = tuple(draw(st.lists(trees(depth + 1), min_size=1, max_size=4)))
        return ("op", draw(st.sampled_from(["AND", "OR"])), children)
    return ("atom", draw(st.integers(0, 3)))


def _build(tree, ids):
    cid = f"c{next(ids)}"
    if tree[0] == "atom":
        return HasLabel(RelationKind.ID, f"L{tree[1]}", cid)
    return Composite(tree[1], tuple(_build(t, ids) for t in tree[2]), cid)


def _truth(tree, present):
    if tree[0] == "atom":
        return tree[1] in present
    results = [_truth(t, present) for t in tree[2]]
    return all(results) if tree[1] == "AND" else any(results)


@settings(max_examples=150, deadline=None)
@given(trees(), st.sets(st.integers(0, 3)))
def test_nested_conditions_match_recursive_truth(tree, present):
    store = _store([("d", f"L{i}") for i in present])
    cond = _build(tree, itertools.count())
    assert evaluate(cond, "d", "g", store) == _truth(tree, present)


def test_has_label_over_relations():
    store = _store(
        [("kid", "K"), ("sib", "S"), ("top", "T"), ("grandkid", "G")],
        containers=("top", "me", "kid", "sib", "grandkid"),
        contains=[("top", "me"), ("top", "sib"), ("me", "kid"), ("kid", "grandkid")],
    )
    cases = [
        (RelationKind.CHILD, "K", True), (RelationKind.CHILD, "G", False),
        (RelationKind.DESC, "G", True), (RelationKind.PARENT, "T", True),
        (RelationKind.SIB, "S", True), (RelationKind.ID, "K", False),
    ]
    for rel, label, want in cases:
        assert evaluate(HasLabel(rel, label, f"{rel.value}-{label}"), "me", "g", store) == want


def test_contains_label_needs_materialized_facts():
    store = _store([("col", "X")], containers=("t", "col"), contains=[("t", "col")])
    cond = ContainsLabel("X", "c")
    assert not evaluate(cond, "t", "g", store, record=False)
    materialize_containment(store)
    assert evaluate(cond, "t", "g", store)
    assert not evaluate(cond, "col", "g", store)


def test_framework_scoped_evaluation():
    store = _store([("d", "L")], framework="Other")
    cond = HasLabel(RelationKind.ID, "L", "c")
    assert Evaluator(store)(cond, "d", "g")[0]
    assert not Evaluator(store, "Mine")(cond, "d", "g")[0]
    assert store.evaluation("c", "d", "g", "Mine").result is False


OPS = {
    "lessThan": lambda a, b: a < b,
    "lessOrEqual": lambda a, b: a <= b,
    "greaterThan": lambda a, b: a > b,
    "greaterOrEqual": lambda a, b: a >= b,
    "equal": lambda a, b: a == b,
}


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(sorted(OPS)), st.integers(-5, 5), st.decimals(-5, 5, places=1, allow_nan=False))
def test_numeric_comparisons_mix_integers_and_decimals(op, a, b):
    assert compare(a, op, b) == OPS[op](Decimal(a), b)
    assert compare(b, op, a) == OPS[op](b, Decimal(a))


def test_comparison_type_rules():
    assert compare("abc", "lessThan", "abd")
    assert compare(True, "equal", True)
    assert not compare("3", "equal", 3)
    with pytest.raises(EvaluationError):
        compare("3", "lessThan", 3)
    with pytest.raises(EvaluationError):
        compare(True, "greaterThan", False)
    with pytest.raises(EvaluationError):
        compare(1, "near", 2)


def test_parameter_lookup_order():
    env = Environment(["d", "e", "g#config"], scopes={"g": ["d", "e", "g#config"]})
    store = Store(env)
    store.insert(ComplianceAssertion("d", "K", "g", "F", True, (("size", 4),)))
    store.insert(ComplianceAssertion("g#config", "K", "g", "F", True, (("size", 9),)))
    src = ParameterSource("K", "size", 1)
    assert resolve_parameter(src, "d", "g", store) == 4
    assert resolve_parameter(src, "e", "g", store) == 9
    bare = Store(Environment(["d"], scopes={"g": ["d"]}))
    assert resolve_parameter(src, "d", "g", bare) == 1
    with pytest.raises(EvaluationError, match="no value"):
        resolve_parameter(ParameterSource("K", "size"), "d", "g", bare)
    assert resolve_parameter(ParameterSource(default="x"), "d", "g", bare) == "x"


def test_comparison_support_names_its_witness():
    store = _store()
    store.insert(ComplianceAssertion("d", "K", "g", "F", True, (("size", 2),)))
    cond = Comparison(ParameterSource("K", "size"), ParameterSource(default=3), "lessThan", "cmp")
    ok, support = Evaluator(store)(cond, "d", "g")
    assert ok and support.premises == [("d", "K", "g", "F")]
    assert "K.size=2 lessThan 3=3" in support.notes[0]


def test_mark_selects_only_open_instances():
    store = _store([("a", "T"), ("b", "T"), ("b", "H")], containers=("a", "b", "c"))
    cond = HasLabel(RelationKind.ID, "Z", "z")
    conditional = Rule("H", Conditional("T", cond), "F", "r1")
    pure = Rule("H", PureImplication(cond), "F", "r2")
    marks = mark(store, [conditional], "F")
    # b already holds H under F
    assert [(d, g) for _, d, g in marks.roots] == [("a", "g")]
    assert ("z", "a", "g") in marks
    marks = mark(store, [pure], "F")
    assert [(d, g) for _, d, g in marks.roots] == [("a", "g"), ("c", "g")]
    assert len(mark(store, [conditional], "Other", strict=True).roots) == 0
