import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_fixed_point, random_instance
from polyjur.bundled_frameworks import bundle_model
from polyjur.errors import InputError, NotFoundError
from polyjur.inference_engine import (
    Engine,
    explain,
    release,
    render_explanation,
    run_to_fixed_point,
    saturate,
    seed_store,
    step,
)
from polyjur.metamodel import ComplianceAssertion, Environment
from polyjur.pipeline import load_environment, scenario_path

seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=120, deadline=None)
@given(seeds, st.booleans(), st.booleans())
def test_matches_naive_saturation(seed, strict, semi_naive):
    inst = random_instance(random.Random(seed), max_universe=600)
    store, report = run_to_fixed_point(inst.env(), inst.model(), inst.ground, strict_premises=strict, semi_naive=semi_naive)
    want, naive_rounds = naive_fixed_point(inst, strict)
    assert set(store.keys()) == want
    # committing each framework's results immediately never needs more rounds
    assert report.rounds <= naive_rounds
    assert report.new_assertions_per_round[-1] == 0
    assert sum(report.new_assertions_per_round) == len(store) - len({a.key for a in inst.ground})


@settings(max_examples=80, deadline=None)
@given(seeds)
def test_monotone_in_the_ground_facts(seed):
    inst = random_instance(random.Random(seed), max_universe=600)
    model = inst.model()
    small, _ = run_to_fixed_point(inst.env(), model, inst.ground)
    large, _ = run_to_fixed_point(inst.env(), model, inst.ground + inst.extra_ground)
    assert set(small.keys()) <= set(large.keys())


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_saturation_is_idempotent_and_deterministic(seed):
    inst = random_instance(random.Random(seed), max_universe=600)
    model = inst.model()
    a, _ = run_to_fixed_point(inst.env(), model, inst.ground)
    b, _ = run_to_fixed_point(inst.env(), model, list(reversed(inst.ground)))
    assert set(a.keys()) == set(b.keys())
    c, _ = run_to_fixed_point(inst.env(), model, inst.ground)
    assert [x.key for x in a] == [x.key for x in c]
    assert a.derivations == c.derivations
    before = set(a.keys())
    again = saturate(a, model)
    assert set(a.keys()) == before and again.rounds == 1


def test_single_step_applies_each_rule_once():
    inst = random_instance(random.Random(11))
    model = inst.model()
    store = seed_store(inst.env(), inst.ground)
    first = step(store, model)
    assert first == len(store) - len({a.key for a in inst.ground})


def test_round_limit_is_enforced():
    inst = next(i for i in (random_instance(random.Random(s)) for s in range(200))
                if run_to_fixed_point(i.env(), i.model(), i.ground)[1].rounds > 2)
    engine = Engine(seed_store(inst.env(), inst.ground), inst.model())
    with pytest.raises(RuntimeError, match="no fixed point"):
        engine.run(max_rounds=1)


def test_report_fields():
    store, report = run_to_fixed_point(*_healthcare())
    d = report.to_dict()
    assert d["total_assertions"] == len(store)
    assert d["ground_assertions"] == sum(1 for a in store if a.ground)
    assert d["universe_bound"] >= len(store)
    assert d["rounds"] == len(d["new_assertions_per_round"])
    assert report.productive_rounds == d["rounds"] - 1
    assert set(d["phase_seconds"]) == {"index", "expand", "materialize", "mark", "evaluate", "derive"}


def _healthcare():
    model = bundle_model()
    envl = load_environment([scenario_path("healthcare", "environment.ttl")], model)
    return envl.env, model, envl.ground


HC = "urn:polyjur:scenario:healthcare#"


def test_explanations_reach_ground_facts():
    env, model, ground = _healthcare()
    store, _ = run_to_fixed_point(env, model, ground)
    key = (HC + "ProvidersInfo", "urn:polyjur:hipaa#ProtectedHealthInformation", HC + "ResearchScope",
           "urn:polyjur:hipaa#HIPAAFramework")
    tree = explain(store, key)
    assert tree.kind == "derived" and tree.derivation.family == "propagation"

    def leaves(node):
        if not node.children:
            yield node
        for c in node.children:
            yield from leaves(c)

    assert all(leaf.kind == "ground" for leaf in leaves(tree))
    text = render_explanation(tree, {"": HC, "hipaa": "urn:polyjur:hipaa#"})
    assert text.splitlines()[0].startswith(":ProvidersInfo hipaa:ProtectedHealthInformation in :ResearchScope")
    assert "[ground]" in text
    assert tree.to_dict()["rule"]["family"] == "propagation"
    with pytest.raises(NotFoundError):
        explain(store, (HC + "ProvidersInfo", "nope", HC + "HRScope", "x"))


def test_release_moves_ground_facts_only():
    env, model, ground = _healthcare()
    store, _ = run_to_fixed_point(env, model, ground)
    env.add_scope("urn:new")
    n = release(store, HC + "PatientTreatments", HC + "MedicalScope", "urn:new", with_descendants=True)
    moved = store.by_scope("urn:new")
    assert n == len(moved) > 0 and all(a.ground for a in moved)
    saturate(store, model)
    derived = [a for a in store.by_scope("urn:new") if not a.ground]
    assert derived and all(store.env.visible(a.container, "urn:new") for a in derived)


def test_release_errors():
    env = Environment(["a", "b"], scopes={"g": ["a"], "h": []})
    store = seed_store(env, [ComplianceAssertion("a", "L", "g", "F", True)])
    with pytest.raises(InputError, match="not visible"):
        release(store, "b", "g", "h")
    with pytest.raises(InputError, match="unknown scope"):
        release(store, "a", "g", "nowhere")
    with pytest.raises(InputError, match="unknown container"):
        release(store, "zz", "g", "h")
    assert release(store, "a", "g", "h") == 1
    assert release(store, "a", "g", "h") == 0
