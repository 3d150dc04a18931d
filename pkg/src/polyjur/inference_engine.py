"""Fixed-point forward chaining over compliance assertions."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .condition_eval import Evaluator, mark
from .errors import InputError, NotFoundError
from .fact_store import Derivation, Store, materialize_containment
from .framework_resolver import Model
from .metamodel import (
    ComplianceAssertion,
    Conditional,
    Environment,
    Propagation,
    PureImplication,
    Rule,
    Simple,
)
from .vocab import compact

PHASES = ("index", "expand", "materialize", "mark", "evaluate", "derive")


@dataclass
class RunReport:
    rounds: int = 0
    new_assertions_per_round: list[int] = field(default_factory=list)
    total_assertions: int = 0
    ground_assertions: int = 0
    universe_bound: int = 0
    wall_time: float = 0.0
    phase_seconds: dict = field(default_factory=lambda: {p: 0.0 for p in PHASES})
    evaluations: int = 0
    cache_hit: bool = False
    phase_log: list[str] = field(default_factory=list)

    @property
    def productive_rounds(self) -> int:
        return sum(1 for n in self.new_assertions_per_round if n)

    def to_dict(self) -> dict:
        return {
            "rounds": self.rounds,
            "new_assertions_per_round": list(self.new_assertions_per_round),
            "total_assertions": self.total_assertions,
            "ground_assertions": self.ground_assertions,
            "universe_bound": self.universe_bound,
            "wall_time": round(self.wall_time, 6),
            "phase_seconds": {k: round(v, 6) for k, v in self.phase_seconds.items()},
            "evaluations": self.evaluations,
            "cache_hit": self.cache_hit,
            "phase_log": list(self.phase_log),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


class _Rules:
    """One framework's effective rules, bucketed for matching."""

    def __init__(self, rules: Iterable[Rule]):
        self.simple: dict[str, list[Rule]] = {}
        self.propagation: dict[str, list[Rule]] = {}
        self.conditioned: list[Rule] = []
        for r in rules:
            v = r.variant
            if isinstance(v, Simple):
                self.simple.setdefault(v.from_label, []).append(r)
            elif isinstance(v, Propagation):
                self.propagation.setdefault(v.subject, []).append(r)
            elif isinstance(v, (Conditional, PureImplication)):
                self.conditioned.append(r)


class Engine:
    """Runs rounds over a store until nothing new appears.

    Each round refreshes containment facts, then visits frameworks in
    dependency order; a framework's derivations are committed before the
    next framework runs.
    """

    def __init__(self, store: Store, model: Model, *, strict_premises: bool = False, semi_naive: bool = False):
        self.store = store
        self.model = model
        self.strict = strict_premises
        self.semi_naive = semi_naive
        self._rules = {f: _Rules(model.effective.get(f, ())) for f in model.order}
        self._watermark = {f: 0 for f in model.order}
        self.report = RunReport()

    def _tick(self, phase: str, start: float) -> float:
        now = time.perf_counter()
        self.report.phase_seconds[phase] += now - start
        return now

    def _add(self, d: str, l: str, g: str, f: str, derivation: Derivation) -> int:
        return int(self.store.insert(ComplianceAssertion(d, l, g, f), derivation))

    def step(self, round_no: int = 1) -> int:
        store, env = self.store, self.store.env
        t = time.perf_counter()
        t = self._tick("index", t)  # indexes are maintained on insert
        t = self._tick("expand", t)  # facet expansion happened at resolve time
        materialize_containment(store)
        t = self._tick("materialize", t)
        new = 0
        for f in self.model.order:
            rules = self._rules[f]
            start = self._watermark[f] if self.semi_naive else 0
            delta = store.since(start)
            self._watermark[f] = store.log_position

            for a in delta:
                if self.strict and a.framework != f:
                    continue
                for r in rules.simple.get(a.label, ()):
                    new += self._add(
                        a.container, r.head, a.scope, f,
                        Derivation("simple", f, r.declared_by, r.node, (a.key,), round=round_no),
                    )
                if a.framework == f:
                    for r in rules.propagation.get(a.label, ()):
                        for target in env.related(r.variant.relation, a.container):
                            if env.visible(target, a.scope):
                                new += self._add(
                                    target, r.head, a.scope, f,
                                    Derivation(
                                        "propagation", f, r.declared_by, r.node, (a.key,),
                                        notes=(f"{r.variant.relation.value}",), round=round_no,
                                    ),
                                )
            t = self._tick("derive", t)

            if not rules.conditioned:
                continue
            marks = mark(store, rules.conditioned, f, self.strict)
            t = self._tick("mark", t)
            evaluator = Evaluator(store, f if self.strict else None)
            outcomes = []
            for rule, d, g in marks.roots:
                cond = rule.variant.condition
                ok, support = evaluator(cond, d, g)
                self.report.evaluations += 1
                if ok:
                    outcomes.append((rule, d, g, cond, support))
            t = self._tick("evaluate", t)
            for rule, d, g, cond, support in outcomes:
                premises = list(support.premises)
                if isinstance(rule.variant, Conditional):
                    trig = store.find(d, rule.variant.from_label, g, f if self.strict else None)[0].key
                    premises.insert(0, trig)
                premises = list(dict.fromkeys(premises))
                new += self._add(
                    d, rule.head, g, f,
                    Derivation(
                        rule.family, f, rule.declared_by, rule.node, tuple(premises),
                        tuple(support.containments), tuple(support.notes), round_no, cond.id,
                    ),
                )
            t = self._tick("derive", t)
        return new

    def run(self, max_rounds: Optional[int] = None) -> RunReport:
        began = time.perf_counter()
        report = self.report
        report.universe_bound = self.model.universe_size(len(self.store.env.container_ids), len(self.store.env.scopes))
        limit = max_rounds if max_rounds is not None else report.universe_bound + 1
        while True:
            report.rounds += 1
            n = self.step(report.rounds)
            report.new_assertions_per_round.append(n)
            if n == 0:
                break
            if report.rounds >= limit:
                raise RuntimeError(f"no fixed point after {report.rounds} rounds (bound {limit})")
        materialize_containment(self.store)
        report.total_assertions = len(self.store)
        report.ground_assertions = sum(1 for a in self.store if a.ground)
        report.wall_time += time.perf_counter() - began
        return report


def step(store: Store, model: Model, *, strict_premises: bool = False) -> int:
    """Apply every rule instance once; returns the number of new assertions."""
    return Engine(store, model, strict_premises=strict_premises).step()


def seed_store(env: Environment, ground: Iterable[ComplianceAssertion], containments=()) -> Store:
    store = Store(env)
    for a in ground:
        if not a.ground:
            a = ComplianceAssertion(a.container, a.label, a.scope, a.framework, True, a.parameters)
        store.insert(a)
    for c in containments:
        store.insert_containment(c)
    return store


def run_to_fixed_point(
    env: Environment,
    model: Model,
    ground: Iterable[ComplianceAssertion] = (),
    *,
    containments=(),
    strict_premises: bool = False,
    semi_naive: bool = False,
) -> tuple[Store, RunReport]:
    store = seed_store(env, ground, containments)
    report = saturate(store, model, strict_premises=strict_premises, semi_naive=semi_naive)
    return store, report


def saturate(store: Store, model: Model, *, strict_premises: bool = False, semi_naive: bool = False) -> RunReport:
    """Continue inference on an existing store (e.g. after a release)."""
    return Engine(store, model, strict_premises=strict_premises, semi_naive=semi_naive).run()


# ---------------------------------------------------------------------------
# Release


def release(store: Store, container: str, from_scope: str, to_scope: str, *, with_descendants: bool = False) -> int:
    """Make ``container`` visible in ``to_scope`` and copy its ground assertions there.

    Derived assertions stay behind; re-run inference to derive consequences in
    the target scope.  ``with_descendants`` also releases everything below.
    """
    env = store.env
    env.require(container)
    env.require_scope(from_scope)
    env.require_scope(to_scope)
    if not env.visible(container, from_scope):
        raise InputError(f"container {container} is not visible in scope {from_scope}")
    moving = [container]
    if with_descendants:
        moving += [d for d in env.descendants(container) if env.visible(d, from_scope)]
    transferred = 0
    for d in moving:
        env.grant_visibility(d, to_scope)
        for a in store.query(container=d, scope=from_scope, ground_only=True):
            copy = ComplianceAssertion(d, a.label, to_scope, a.framework, True, a.parameters)
            transferred += int(store.insert(copy))
    # new visibility may expose older facts to ancestors in the target scope
    store._materialized_upto = 0
    return transferred


# ---------------------------------------------------------------------------
# Explanations


@dataclass
class ExplanationNode:
    kind: str  # "ground", "derived", "containment", "seen"
    key: tuple
    derivation: Optional[Derivation] = None
    children: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "key": list(self.key)}
        if self.derivation is not None:
            out["rule"] = {
                "family": self.derivation.family,
                "framework": self.derivation.framework,
                "declared_by": self.derivation.declared_by,
                "node": self.derivation.node,
                "condition": self.derivation.condition,
                "notes": list(self.derivation.notes),
                "round": self.derivation.round,
            }
        out["children"] = [c.to_dict() for c in self.children]
        return out


def explain(store: Store, key) -> ExplanationNode:
    key = tuple(key.key if isinstance(key, ComplianceAssertion) else key)
    if key not in store:
        raise NotFoundError(f"no assertion {key}")
    return _explain(store, key, set())


def _explain(store: Store, key: tuple, path: set) -> ExplanationNode:
    a = store.get(key)
    if a is None:
        return ExplanationNode("seen", key)
    if a.ground:
        return ExplanationNode("ground", key)
    der = store.derivations.get(key)
    node = ExplanationNode("derived", key, der)
    if der is None or key in path:
        return node
    inner = path | {key}
    for p in der.premises:
        node.children.append(_explain(store, tuple(p), inner))
    for c in der.containments:
        c = tuple(c)
        cnode = ExplanationNode("containment", c)
        src = store.containment_sources.get(c)
        if src is not None:
            cnode.children.append(_explain(store, tuple(src), inner))
        node.children.append(cnode)
    return node


def render_explanation(node: ExplanationNode, prefixes=None, indent: int = 0) -> str:
    c = lambda x: compact(x, prefixes) if isinstance(x, str) else str(x)
    pad = "  " * indent
    if node.kind == "containment":
        d, l, g = node.key
        head = f"{pad}{c(d)} contains {c(l)} in {c(g)}"
    else:
        d, l, g, f = node.key
        head = f"{pad}{c(d)} {c(l)} in {c(g)} under {c(f)}"
        if node.kind == "ground":
            head += "  [ground]"
        elif node.derivation is not None:
            der = node.derivation
            via = f"{der.family} rule {c(der.node)}"
            if der.declared_by != der.framework:
                via += f" inherited from {c(der.declared_by)}"
            if der.notes:
                via += " (" + "; ".join(c(n) if n.startswith("urn:") else n for n in der.notes) + ")"
            head += f"  <- {via}"
    lines = [head]
    for child in node.children:
        lines.append(render_explanation(child, prefixes, indent + 1))
    return "\n".join(lines)
