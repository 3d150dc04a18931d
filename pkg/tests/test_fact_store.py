import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import descendants_by_closure
from polyjur.doc_parser import parse_document
from polyjur.errors import CacheError, ScopeVisibilityError, SkolemizationError, StaleCacheError
from polyjur.fact_store import (
    CACHE_MAGIC,
    Derivation,
    Store,
    hash_inputs,
    load_cache,
    materialize_containment,
    save_cache,
    skolem_ids,
    skolemize,
)
from polyjur.metamodel import ComplianceAssertion, ConditionEvaluation, ContainmentAssertion, Environment
from polyjur.pipeline import run, scenario_path
from polyjur.terms import BNode
from polyjur.vocab import SKOLEM_PREFIX

# -- skolemization


def _decl(subject, body):
    return f"@prefix : <urn:x#> .\n{subject} :has {body} .\n"


def test_same_structure_same_id_across_orderings_and_documents():
    forms = [
        "[ :a 1 ; :b [ :c \"x\" ; :d ( :p :q ) ] ]",
        "[ :b [ :d ( :p :q ) ; :c \"x\" ] ; :a 1 ]",
        "[ :b [ :c \"x\" ; :d ( :p :q ) ] ; :a 1 ]",
    ]
    ids = set()
    for i, body in enumerate(forms):
        g = skolemize(parse_document(_decl(":s", body), base=f"urn:doc{i}"))
        ids.add(g.value("urn:x#s", "urn:x#has"))
    assert len(ids) == 1
    (sid,) = ids
    assert sid.startswith(SKOLEM_PREFIX)


@pytest.mark.parametrize(
    "left, right",
    [
        ('[ :a 1 ]', '[ :a "1" ]'),
        ('[ :a 1 ]', '[ :a 1.0 ]'),
        ('[ :a ( :p :q ) ]', '[ :a ( :q :p ) ]'),
        ('[ :a [ :b 1 ] ]', '[ :a [ :b 2 ] ]'),
        ('[ :a :p ]', '[ :b :p ]'),
        ('[ :a 1 ; :a 2 ]', '[ :a 1 ]'),
    ],
)
def test_distinct_structures_distinct_ids(left, right):
    a = skolemize(parse_document(_decl(":s", left))).value("urn:x#s", "urn:x#has")
    b = skolemize(parse_document(_decl(":s", right))).value("urn:x#s", "urn:x#has")
    assert a != b


def test_labelled_blank_nodes_hash_by_content():
    g = parse_document("@prefix : <urn:x#> .\n:s :has _:n .\n_:n :a 1 .\n:t :has [ :a 1 ] .")
    sk = skolemize(g)
    assert sk.value("urn:x#s", "urn:x#has") == sk.value("urn:x#t", "urn:x#has")


def test_cycles_are_rejected():
    g = parse_document("_:a <urn:p> _:b .\n_:b <urn:p> _:a .")
    with pytest.raises(SkolemizationError) as info:
        skolem_ids(g)
    assert len(info.value.handles) == 2


def test_skolemized_graph_has_no_blank_nodes():
    g = skolemize(parse_document(_decl(":s", "[ :a ( [ :b 1 ] ) ]")))

    def blank(t):
        return isinstance(t, BNode) or (isinstance(t, tuple) and any(blank(x) for x in t))

    assert not any(blank(s) or blank(o) for s, _, o in g)


# -- store


def _env():
    return Environment(["db", "t1", "t2", "c1", "c2"], [("db", "t1"), ("db", "t2"), ("t1", "c1"), ("t1", "c2")],
                       scopes={"g": ["db", "t1", "t2", "c1", "c2"], "h": ["t1", "c1"]})


def test_insert_rejects_invisible_containers():
    store = Store(_env())
    with pytest.raises(ScopeVisibilityError):
        store.insert(ComplianceAssertion("c2", "L", "h", "F"))


def test_duplicate_keys_merge_parameters_first_value_wins():
    store = Store(_env())
    assert store.insert(ComplianceAssertion("c1", "L", "g", "F", False, (("k", 3),)))
    assert not store.insert(ComplianceAssertion("c1", "L", "g", "F", True, (("k", 4), ("m", "x"))))
    a = store.get(("c1", "L", "g", "F"))
    assert a.ground and a.params == {"k": 3, "m": "x"}
    assert len(store.warnings) == 1 and "keeping 3" in store.warnings[0]
    assert len(store) == 1 and store.log_position == 1


def test_log_positions_and_since():
    store = Store(_env())
    store.insert(ComplianceAssertion("c1", "A", "g", "F"))
    mark = store.log_position
    store.insert(ComplianceAssertion("c2", "B", "g", "F"))
    store.insert(ComplianceAssertion("c1", "A", "g", "F"))
    assert [a.key for a in store.since(mark)] == [("c2", "B", "g", "F")]


keys = st.tuples(
    st.sampled_from(["db", "t1", "t2", "c1", "c2"]),
    st.sampled_from(["A", "B", "C"]),
    st.sampled_from(["g", "h"]),
    st.sampled_from(["F", "G"]),
)


@settings(max_examples=60, deadline=None)
@given(st.lists(keys, max_size=30), st.lists(st.tuples(
    st.one_of(st.none(), st.sampled_from(["db", "t1", "c1"])),
    st.one_of(st.none(), st.sampled_from(["A", "B"])),
    st.one_of(st.none(), st.sampled_from(["g", "h"])),
    st.one_of(st.none(), st.sampled_from(["F", "G"])),
    st.booleans(),
), max_size=5))
def test_indexed_queries_match_linear_scan(inserted, queries):
    env = _env()
    store = Store(env)
    for d, l, g, f in inserted:
        if env.visible(d, g):
            store.insert(ComplianceAssertion(d, l, g, f, ground=(l == "A")))
    every = list(store)
    for d, l, g, f, ground_only in queries:
        want = sorted(
            (a for a in every
             if (d is None or a.container == d) and (l is None or a.label == l)
             and (g is None or a.scope == g) and (f is None or a.framework == f)
             and (not ground_only or a.ground)),
            key=lambda a: a.key,
        )
        assert store.query(d, l, g, f, ground_only) == want
    for a in every:
        assert store.has_label(a.container, a.label, a.scope)
        assert store.has_label(a.container, a.label, a.scope, a.framework)
        assert a in store.find(a.container, a.label, a.scope)


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_containment_matches_brute_force(data):
    n = data.draw(st.integers(1, 8))
    nodes = [f"n{i}" for i in range(n)]
    edges = [(nodes[data.draw(st.integers(0, i - 1))], nodes[i]) for i in range(1, n) if data.draw(st.booleans())]
    vis = data.draw(st.lists(st.sampled_from(nodes), min_size=1, unique=True))
    env = Environment(nodes, edges, scopes={"g": vis})
    store = Store(env)
    facts = data.draw(st.lists(st.tuples(st.sampled_from(vis), st.sampled_from(["A", "B"]), st.sampled_from(["F", "G"])), max_size=12))
    half = len(facts) // 2
    for d, l, f in facts[:half]:
        store.insert(ComplianceAssertion(d, l, "g", f))
    materialize_containment(store)
    for d, l, f in facts[half:]:
        store.insert(ComplianceAssertion(d, l, "g", f))
    materialize_containment(store)  # incremental second pass
    closure = descendants_by_closure(edges)
    want = {(a, l, "g") for d, l, f in facts for a, c in closure if c == d and a in vis}
    assert set(store.containments) == want
    for d, l, f in facts:
        for a, c in closure:
            if c == d and a in vis:
                assert store.contains(a, l, "g", f)
                assert store.containment_witness(a, l, "g", f)[3] == f


def test_evaluations_only_move_from_false_to_true():
    store = Store(_env())
    store.record_evaluation(ConditionEvaluation("c", "t1", "g", False))
    store.record_evaluation(ConditionEvaluation("c", "t1", "g", True, None, 1, 2))
    store.record_evaluation(ConditionEvaluation("c", "t1", "g", False))
    assert store.evaluation("c", "t1", "g").result
    store.record_evaluation(ConditionEvaluation("c", "t1", "g", True, None, 2, 2))
    assert store.evaluation("c", "t1", "g").satisfied_count == 2


# -- cache


@pytest.fixture(scope="module")
def healthcare_store():
    return run([scenario_path("healthcare", "environment.ttl")]).store


def _snapshot(store):
    return (
        {a.key: (a.ground, a.parameters) for a in store},
        dict(store.containments),
        dict(store.evaluations),
        dict(store.derivations),
        store.env.to_dict(),
    )


def test_cache_round_trip(tmp_path, healthcare_store):
    path = tmp_path / "c.bin"
    digest = bytes(range(32))
    save_cache(healthcare_store, path, digest, {"note": "ü"})
    store, meta = load_cache(path, digest)
    assert meta == {"note": "ü"}
    assert _snapshot(store) == _snapshot(healthcare_store)
    for (d, l, g), c in store.containments.items():
        src = healthcare_store.containment_sources[(d, l, g)]
        assert store.contains(d, l, g, src[3])


def test_cache_keeps_parameter_types(tmp_path):
    from decimal import Decimal

    env = Environment(["a"], scopes={"g": ["a"]})
    store = Store(env)
    params = (("b", True), ("d", Decimal("0.25")), ("i", 7), ("s", "seven"))
    store.insert(ComplianceAssertion("a", "L", "g", "F", True, params))
    store.insert(ComplianceAssertion("a", "M", "g", "F"), Derivation("simple", "F", "F", "r", (("a", "L", "g", "F"),)))
    save_cache(store, tmp_path / "c", bytes(32))
    loaded, _ = load_cache(tmp_path / "c")
    got = loaded.get(("a", "L", "g", "F")).parameters
    assert got == params and [type(v) for _, v in got] == [bool, Decimal, int, str]
    assert loaded.derivations[("a", "M", "g", "F")].premises == (("a", "L", "g", "F"),)


def test_stale_and_corrupt_caches(tmp_path, healthcare_store):
    path = tmp_path / "c.bin"
    save_cache(healthcare_store, path, bytes(32))
    with pytest.raises(StaleCacheError):
        load_cache(path, b"\x01" * 32)
    raw = bytearray(path.read_bytes())
    flipped = bytearray(raw)
    flipped[len(raw) // 2] ^= 0xFF
    (tmp_path / "flip").write_bytes(bytes(flipped))
    with pytest.raises(CacheError):
        load_cache(tmp_path / "flip")
    (tmp_path / "short").write_bytes(bytes(raw[: len(raw) - 10]))
    with pytest.raises(CacheError):
        load_cache(tmp_path / "short")
    (tmp_path / "magic").write_bytes(b"NOTCACHE" + bytes(raw[8:]))
    with pytest.raises(CacheError, match="not a cache"):
        load_cache(tmp_path / "magic")
    version = bytearray(raw)
    version[len(CACHE_MAGIC) + 1] = 9
    (tmp_path / "version").write_bytes(bytes(version))
    with pytest.raises(CacheError, match="version"):
        load_cache(tmp_path / "version")
    with pytest.raises(CacheError):
        save_cache(healthcare_store, path, b"short")


def test_input_hash_depends_on_content_not_order(tmp_path):
    a, b = tmp_path / "a.ttl", tmp_path / "b.ttl"
    a.write_text("x")
    b.write_text("y")
    assert hash_inputs([a, b]) == hash_inputs([b, a])
    before = hash_inputs([a, b])
    b.write_text("z")
    assert hash_inputs([a, b]) != before
    assert hash_inputs([a], b"flag") != hash_inputs([a])


def test_random_fact_sets_survive_cache(tmp_path):
    rng = random.Random(3)
    env = _env()
    store = Store(env)
    for _ in range(40):
        g = rng.choice(["g", "h"])
        d = rng.choice(sorted(env.scopes[g].visible_containers))
        store.insert(ComplianceAssertion(d, rng.choice("ABC"), g, rng.choice("FG"), rng.random() < 0.5))
    store.insert_containment(ContainmentAssertion("db", "Z", "g", True))
    materialize_containment(store)
    save_cache(store, tmp_path / "c", bytes(32))
    loaded, _ = load_cache(tmp_path / "c")
    assert _snapshot(loaded) == _snapshot(store)
