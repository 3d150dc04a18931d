import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import descendants_by_closure
from polyjur.errors import EnvironmentValidationError, InputError
from polyjur.metamodel import (
    Composite,
    Environment,
    HasLabel,
    Label,
    ParameterSource,
    RelationKind,
    canonical_relation,
    condition_atoms,
    condition_nodes,
    make_parameters,
    validate_containment,
)


@st.composite
def forests(draw):
    n = draw(st.integers(1, 9))
    nodes = [f"n{i}" for i in range(n)]
    edges = []
    for i in range(1, n):
        if draw(st.booleans()):
            edges.append((nodes[draw(st.integers(0, i - 1))], nodes[i]))
    joins = [p for p in draw(st.lists(st.tuples(st.sampled_from(nodes), st.sampled_from(nodes)), max_size=4)) if p[0] != p[1]]
    return nodes, edges, joins


@settings(max_examples=80, deadline=None)
@given(forests())
def test_relations_match_brute_force(forest):
    nodes, edges, joins = forest
    env = Environment(nodes, edges, joins)
    closure = descendants_by_closure(edges)
    parent = {c: p for p, c in edges}
    for d in nodes:
        assert set(env.descendants(d)) == {c for a, c in closure if a == d}
        assert set(env.ancestors(d)) == {a for a, c in closure if c == d}
        assert set(env.related(RelationKind.CHILD, d)) == {c for p, c in edges if p == d}
        sibs = {x for x in nodes if x != d and d in parent and parent.get(x) == parent[d]}
        assert set(env.siblings(d)) == sibs
        for x in nodes:
            for kind in RelationKind:
                # related(kind, d) lists exactly the x with kind(x, d)
                assert (x in env.related(kind, d)) == canonical_relation(kind, x, d, env)


@settings(max_examples=40, deadline=None)
@given(forests())
def test_ancestor_order_is_nearest_first(forest):
    nodes, edges, joins = forest
    env = Environment(nodes, edges)
    for d in nodes:
        chain = env.ancestors(d)
        node = d
        for a in chain:
            assert env.parent[node] == a
            node = a


def test_joinable_is_symmetric():
    env = Environment(["a", "b"], joinable=[("a", "b")])
    assert canonical_relation("joinable", "b", "a", env)
    assert env.related(RelationKind.JOINABLE, "a") == ("b",)


@pytest.mark.parametrize(
    "edges, fragment",
    [
        ([("a", "a")], "contains itself"),
        ([("a", "b"), ("c", "b")], "has 2 parents"),
        ([("a", "b"), ("b", "c"), ("c", "a")], "cycle"),
    ],
)
def test_invalid_containment(edges, fragment):
    with pytest.raises(EnvironmentValidationError) as info:
        Environment([], edges)
    assert any(fragment in d.message for d in info.value.diagnostics)


def test_validate_containment_unknown_container():
    diags = validate_containment(["a"], [("a", "ghost")])
    assert [d.severity for d in diags] == ["error"]
    assert "ghost" in diags[0].message


def test_scopes_visibility_and_growth():
    env = Environment(["t", "c"], [("t", "c")], scopes={"g": ["t"]}, configurations={"g": "cfg"})
    assert env.visible("t", "g") and not env.visible("c", "g")
    assert env.scopes["g"].configuration_id == "cfg"
    assert env.grant_visibility("c", "g")
    assert not env.grant_visibility("c", "g")
    assert env.visible_in("g") == ("c", "t")
    env.add_scope("h")
    assert env.scopes["h"].configuration_id == "h#config"
    with pytest.raises(InputError):
        env.add_scope("h")
    with pytest.raises(InputError):
        env.grant_visibility("nope", "g")


def test_environment_round_trips_through_dict():
    env = Environment(["a", "b", "c"], [("a", "b")], [("b", "c")], {"g": ["a", "c"]}, {"g": "a"})
    again = Environment.from_dict(env.to_dict())
    assert again.to_dict() == env.to_dict()


def test_visible_matrix_and_parent_array():
    env = Environment(["a", "b"], [("a", "b")], scopes={"g": ["b"], "h": ["a", "b"]})
    assert env.parent_array.tolist() == [-1, 0]
    assert env.visible_matrix.tolist() == [[False, True], [True, True]]


def test_value_objects_validate():
    with pytest.raises(InputError):
        Label("l", "f", "fw", (("x", "integer"), ("x", "string")))
    with pytest.raises(InputError):
        Label("l", "f", "fw", (("x", "float"),))
    with pytest.raises(InputError):
        ParameterSource("label-only")
    with pytest.raises(InputError):
        ParameterSource()
    with pytest.raises(InputError):
        Composite("AND", ())
    with pytest.raises(InputError):
        Composite("XOR", (HasLabel(RelationKind.ID, "l"),))
    assert ParameterSource(default=3).describe() == "3"
    assert ParameterSource("L", "p", 2).describe() == "L.p (default 2)"


def test_condition_walks():
    a, b, c = (HasLabel(RelationKind.ID, x, x) for x in "abc")
    tree = Composite("AND", (a, Composite("OR", (b, c), "or")), "and")
    assert [x.id for x in condition_atoms(tree)] == ["a", "b", "c"]
    assert [x.id for x in condition_nodes(tree)] == ["and", "a", "or", "b", "c"]


def test_parameters_are_sorted():
    assert make_parameters({"b": 1, "a": 2}) == (("a", 2), ("b", 1))
    assert make_parameters(None) == ()
