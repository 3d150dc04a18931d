"""Marking and evaluation of rule conditions against a store."""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from typing import Iterable, Optional

from .errors import EvaluationError
from .fact_store import Store
from .metamodel import (
    Comparison,
    Composite,
    Condition,
    ConditionEvaluation,
    Conditional,
    ContainsLabel,
    HasLabel,
    ParameterSource,
    PureImplication,
    Rule,
    condition_nodes,
)


@dataclass
class Support:
    """Facts that made a condition true, for explanations."""

    premises: list = field(default_factory=list)
    containments: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def extend(self, other: "Support") -> None:
        self.premises.extend(k for k in other.premises if k not in self.premises)
        self.containments.extend(k for k in other.containments if k not in self.containments)
        self.notes.extend(n for n in other.notes if n not in self.notes)


@dataclass
class MarkSet:
    """Condition instances that need evaluation: ``(condition id, container, scope)``."""

    pending: set = field(default_factory=set)
    conditions: dict = field(default_factory=dict)  # id -> Condition
    roots: list = field(default_factory=list)  # (rule, container, scope), sorted

    def __len__(self) -> int:
        return len(self.pending)

    def __contains__(self, item) -> bool:
        return tuple(item) in self.pending

    def add(self, rule: Rule, cond: Condition, d: str, g: str) -> None:
        self.roots.append((rule, d, g))
        for node in condition_nodes(cond):
            self.conditions[node.id] = node
            self.pending.add((node.id, d, g))


def mark(store: Store, rules: Iterable[Rule], framework: str, strict: bool = False) -> MarkSet:
    """Instances of ``framework``'s conditional and pure rules whose head is still missing."""
    marks = MarkSet()
    env = store.env
    scopes = list(env.scopes)
    rules = list(rules)
    for rule in rules:
        v = rule.variant
        if isinstance(v, Conditional):
            trig_fw = framework if strict else None
            seen = set()
            for a in store.by_label(v.from_label):
                if trig_fw is not None and a.framework != trig_fw:
                    continue
                if (a.container, a.scope) in seen:
                    continue
                seen.add((a.container, a.scope))
                if not store.has_label(a.container, rule.head, a.scope, framework):
                    marks.add(rule, v.condition, a.container, a.scope)
        elif isinstance(v, PureImplication):
            for g in scopes:
                for d in env.visible_in(g):
                    if not store.has_label(d, rule.head, g, framework):
                        marks.add(rule, v.condition, d, g)
    marks.roots.sort(key=lambda t: (t[1], t[2], t[0].head, t[0].node))
    return marks


# ---------------------------------------------------------------------------
# Parameters


def _find_parameter(store: Store, label: str, parameter: str, d: str, g: str):
    for a in store.find(d, label, g):
        params = a.params
        if parameter in params:
            return params[parameter], a.key
    return None


def resolve_parameter_with_witness(source: ParameterSource, d: str, g: str, store: Store):
    """``(value, assertion key or None)``; the key names the assertion the value came from."""
    if source.source_label is not None:
        hit = _find_parameter(store, source.source_label, source.source_parameter, d, g)
        if hit is None and g in store.env.scopes:
            config = store.env.scopes[g].configuration_id
            if config != d and config in store.env.index:
                hit = _find_parameter(store, source.source_label, source.source_parameter, config, g)
        if hit is not None:
            return hit
    if source.default is not None:
        return source.default, None
    raise EvaluationError(
        f"no value for {source.describe()} on {d} in scope {g} and no default given"
    )


def resolve_parameter(source: ParameterSource, d: str, g: str, store: Store):
    return resolve_parameter_with_witness(source, d, g, store)[0]


def _numeric(v) -> bool:
    return isinstance(v, (int, Decimal)) and not isinstance(v, bool)


def compare(left, op: str, right) -> bool:
    if _numeric(left) and _numeric(right):
        left, right = Decimal(left), Decimal(right)
    elif type(left) is not type(right):
        if op == "equal":
            return False
        raise EvaluationError(f"cannot order {left!r} against {right!r}")
    elif isinstance(left, bool) and op != "equal":
        raise EvaluationError("booleans only support 'equal'")
    if op == "lessThan":
        return left < right
    if op == "lessOrEqual":
        return left <= right
    if op == "greaterThan":
        return left > right
    if op == "greaterOrEqual":
        return left >= right
    if op == "equal":
        return left == right
    raise EvaluationError(f"unknown comparison operator {op!r}")


# ---------------------------------------------------------------------------
# Evaluation


class Evaluator:
    """Evaluates conditions with a per-pass memo and records every outcome.

    ``framework`` set means framework-scoped premises (the strict variant).
    """

    def __init__(self, store: Store, framework: Optional[str] = None, record: bool = True):
        self.store = store
        self.framework = framework
        self.record = record
        self._memo: dict = {}

    def __call__(self, cond: Condition, d: str, g: str) -> tuple[bool, Support]:
        key = (cond.id, d, g) if cond.id else None
        if key is not None and key in self._memo:
            return self._memo[key]
        result = self._eval(cond, d, g)
        if key is not None:
            self._memo[key] = result
        return result

    def _store_eval(self, cond: Condition, d: str, g: str, ok: bool, sat=None, total=None) -> None:
        if self.record and cond.id:
            self.store.record_evaluation(ConditionEvaluation(cond.id, d, g, ok, self.framework, sat, total))

    def _eval(self, cond: Condition, d: str, g: str) -> tuple[bool, Support]:
        store, env, fw = self.store, self.store.env, self.framework
        support = Support()
        if isinstance(cond, HasLabel):
            ok = False
            for x in env.related(cond.relation, d):
                if store.has_label(x, cond.label, g, fw):
                    ok = True
                    witness = store.find(x, cond.label, g, fw)[0]
                    support.premises.append(witness.key)
                    break
            self._store_eval(cond, d, g, ok)
            return ok, support
        if isinstance(cond, ContainsLabel):
            ok = store.contains(d, cond.label, g, fw)
            if ok:
                support.containments.append((d, cond.label, g))
            self._store_eval(cond, d, g, ok)
            return ok, support
        if isinstance(cond, Comparison):
            lv, lk = resolve_parameter_with_witness(cond.left, d, g, store)
            rv, rk = resolve_parameter_with_witness(cond.right, d, g, store)
            ok = compare(lv, cond.operator, rv)
            for k in (lk, rk):
                if k is not None and k not in support.premises:
                    support.premises.append(k)
            support.notes.append(f"{cond.left.describe()}={lv} {cond.operator} {cond.right.describe()}={rv}")
            self._store_eval(cond, d, g, ok)
            return ok, support
        if isinstance(cond, Composite):
            results = [self(child, d, g) for child in cond.children]
            satisfied = sum(1 for ok, _ in results if ok)
            total = len(results)
            ok = satisfied == total if cond.operator == "AND" else satisfied >= 1
            if ok:
                for child_ok, child_support in results:
                    if child_ok:
                        support.extend(child_support)
                        if cond.operator == "OR":
                            break
            self._store_eval(cond, d, g, ok, satisfied, total)
            return ok, support
        raise EvaluationError(f"unknown condition type {type(cond).__name__}")


def evaluate(cond: Condition, d: str, g: str, store: Store, framework: Optional[str] = None, record: bool = True) -> bool:
    return Evaluator(store, framework, record)(cond, d, g)[0]
