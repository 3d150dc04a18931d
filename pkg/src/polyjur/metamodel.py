"""Domain types of the compliance metamodel and the container environment.

Metamodel: facets, labels, frameworks (with an acyclic ``extends`` relation)
and rules.  Environment: containers under single-parent containment,
symmetric joinability, governance scopes and ground assertions.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal
from enum import Enum
from typing import Iterable, Mapping, Optional, Union

import numpy as np

from .errors import EnvironmentValidationError, InputError


class RelationKind(str, Enum):
    ID = "id"
    CHILD = "child"
    PARENT = "parent"
    DESC = "desc"
    SIB = "sib"
    JOINABLE = "joinable"


PROPAGATION_RELATIONS = frozenset({RelationKind.CHILD, RelationKind.PARENT, RelationKind.SIB, RelationKind.JOINABLE})
CONDITION_RELATIONS = frozenset({RelationKind.ID, RelationKind.CHILD, RelationKind.PARENT, RelationKind.DESC, RelationKind.SIB})

PARAMETER_KINDS = ("integer", "decimal", "string", "boolean")
FRAMEWORK_KINDS = ("internal", "core", "privacy", "custom")

Scalar = Union[int, Decimal, str, bool]


# ---------------------------------------------------------------------------
# Vocabulary-level types


@dataclass(frozen=True)
class Facet:
    id: str
    name: str
    parent_framework: str
    parent_facet: Optional[str] = None


@dataclass(frozen=True)
class Label:
    id: str
    facet: str
    declaring_framework: str
    parameter_schema: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        names = [n for n, _ in self.parameter_schema]
        if len(names) != len(set(names)):
            raise InputError(f"label {self.id} declares a parameter name twice")
        for _, kind in self.parameter_schema:
            if kind not in PARAMETER_KINDS:
                raise InputError(f"label {self.id}: unknown parameter kind {kind!r}")


@dataclass(frozen=True)
class ParameterSource:
    source_label: Optional[str] = None
    source_parameter: Optional[str] = None
    default: Optional[Scalar] = None

    def __post_init__(self):
        has_ref = self.source_label is not None and self.source_parameter is not None
        if (self.source_label is None) != (self.source_parameter is None):
            raise InputError("parameter source needs both a source label and a parameter name")
        if not has_ref and self.default is None:
            raise InputError("parameter source needs a label parameter or a default value")

    def describe(self) -> str:
        if self.source_label:
            text = f"{self.source_label}.{self.source_parameter}"
            return text if self.default is None else f"{text} (default {self.default})"
        return str(self.default)


# Conditions carry the id of the declaration node they came from; two
# structurally equal conditions from different nodes stay distinct.


@dataclass(frozen=True)
class HasLabel:
    relation: RelationKind
    label: str
    id: str = ""


@dataclass(frozen=True)
class ContainsLabel:
    label: str
    id: str = ""


@dataclass(frozen=True)
class Comparison:
    left: ParameterSource
    right: ParameterSource
    operator: str
    id: str = ""

    OPERATORS = ("lessThan", "lessOrEqual", "greaterThan", "greaterOrEqual", "equal")


@dataclass(frozen=True)
class Composite:
    operator: str  # "AND" | "OR"
    children: tuple
    id: str = ""

    def __post_init__(self):
        if self.operator not in ("AND", "OR"):
            raise InputError(f"unknown logical operator {self.operator!r}")
        if not self.children:
            raise InputError(f"composite condition {self.id or '(anonymous)'} has no sub-conditions")


Condition = Union[HasLabel, ContainsLabel, Comparison, Composite]


def condition_atoms(cond: Condition) -> Iterable[Condition]:
    if isinstance(cond, Composite):
        for child in cond.children:
            yield from condition_atoms(child)
    else:
        yield cond


def condition_nodes(cond: Condition) -> Iterable[Condition]:
    """Every node of the condition tree, parents before children."""
    yield cond
    if isinstance(cond, Composite):
        for child in cond.children:
            yield from condition_nodes(child)


@dataclass(frozen=True)
class Simple:
    from_label: str


@dataclass(frozen=True)
class Conditional:
    from_label: str
    condition: Condition


@dataclass(frozen=True)
class PureImplication:
    condition: Condition


@dataclass(frozen=True)
class Propagation:
    relation: RelationKind
    subject: str
    over_facet: bool = False


RuleVariant = Union[Simple, Conditional, PureImplication, Propagation]


@dataclass(frozen=True)
class Rule:
    """One rule with its single head label and provenance.

    A facet-level propagation has ``head=None`` until the resolver expands it.
    """

    head: Optional[str]
    variant: RuleVariant
    declared_by: str = ""
    node: str = ""

    @property
    def family(self) -> str:
        return {
            Simple: "simple",
            Conditional: "conditional",
            PureImplication: "implication",
            Propagation: "propagation",
        }[type(self.variant)]

    def dedup_key(self) -> tuple:
        return (self.family, self.variant, self.head, self.node)


@dataclass(frozen=True)
class Framework:
    id: str
    name: str
    kind: str
    parents: tuple[str, ...] = ()
    declared_rules: tuple[Rule, ...] = ()
    declared_labels: tuple[str, ...] = ()
    declared_facets: tuple[str, ...] = ()
    release_blockers: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in FRAMEWORK_KINDS:
            raise InputError(f"framework {self.id}: unknown kind {self.kind!r}")


# ---------------------------------------------------------------------------
# Assertions


@dataclass(frozen=True)
class ComplianceAssertion:
    container: str
    label: str
    scope: str
    framework: str
    ground: bool = False
    parameters: tuple[tuple[str, Scalar], ...] = ()

    @property
    def key(self) -> tuple[str, str, str, str]:
        return (self.container, self.label, self.scope, self.framework)

    @property
    def params(self) -> dict[str, Scalar]:
        return dict(self.parameters)


@dataclass(frozen=True)
class ContainmentAssertion:
    container: str
    label: str
    scope: str
    ground: bool = False

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.container, self.label, self.scope)


@dataclass(frozen=True)
class ConditionEvaluation:
    condition: str
    container: str
    scope: str
    result: bool
    framework: Optional[str] = None  # set only under framework-scoped premises
    satisfied_count: Optional[int] = None
    total_count: Optional[int] = None

    @property
    def key(self) -> tuple:
        return (self.condition, self.container, self.scope, self.framework)


def make_parameters(params: Mapping[str, Scalar] | None) -> tuple[tuple[str, Scalar], ...]:
    return tuple(sorted((params or {}).items()))


# ---------------------------------------------------------------------------
# Environment


@dataclass(frozen=True)
class Container:
    id: str
    parent: Optional[str] = None
    joinable_with: frozenset = frozenset()


@dataclass(frozen=True)
class Scope:
    id: str
    visible_containers: frozenset = frozenset()
    config_container: Optional[str] = None

    @property
    def configuration_id(self) -> str:
        return self.config_container or f"{self.id}#config"


@dataclass(frozen=True)
class Diagnostic:
    severity: str
    message: str
    source: str = ""
    line: int = 0
    column: int = 0

    def __str__(self) -> str:
        where = f"{self.source}:{self.line}:{self.column}: " if self.source else ""
        return f"{where}{self.severity}: {self.message}"

    def as_dict(self) -> dict:
        return {
            "severity": self.severity,
            "message": self.message,
            "source": self.source,
            "line": self.line,
            "column": self.column,
        }


def validate_containment(containers: Iterable[str], edges: Iterable[tuple[str, str]], where=None) -> list[Diagnostic]:
    """Check ``(parent, child)`` edges form a forest.  Returns diagnostics, never raises."""
    where = where or (lambda edge: ("", 0, 0))
    known = set(containers)
    diags: list[Diagnostic] = []
    parents: dict[str, list[str]] = {}
    for parent, child in edges:
        if parent == child:
            diags.append(Diagnostic("error", f"container {child} contains itself", *where((parent, child))))
            continue
        parents.setdefault(child, [])
        if parent not in parents[child]:
            parents[child].append(parent)
        for node in (parent, child):
            if node not in known:
                diags.append(Diagnostic("error", f"unknown container {node}", *where((parent, child))))
    for child in sorted(parents):
        ps = parents[child]
        if len(ps) > 1:
            shown = ", ".join(f"({p} contains {child})" for p in ps)
            diags.append(Diagnostic("error", f"container {child} has {len(ps)} parents: {shown}", *where((ps[1], child))))
    # cycle search over the first-parent map
    first = {c: ps[0] for c, ps in parents.items() if ps}
    reported: set[frozenset] = set()
    for start in sorted(first):
        seen = [start]
        node = first.get(start)
        while node is not None:
            if node in seen:
                cycle = seen[seen.index(node):]
                key = frozenset(cycle)
                if key not in reported:
                    reported.add(key)
                    diags.append(Diagnostic(
                        "error", "containment cycle: " + " <- ".join(cycle + [node]), *where((first[cycle[0]], cycle[0]))
                    ))
                break
            seen.append(node)
            node = first.get(node)
    return diags


class Environment:
    """Containers, containment forest, joinability and scopes.

    Read-only after construction apart from :meth:`grant_visibility`, which
    release operations use to widen a scope.
    """

    def __init__(
        self,
        containers: Iterable[str] = (),
        contains: Iterable[tuple[str, str]] = (),
        joinable: Iterable[tuple[str, str]] = (),
        scopes: Mapping[str, Iterable[str]] | None = None,
        configurations: Mapping[str, str] | None = None,
        where=None,
    ):
        contains = list(contains)
        joinable = list(joinable)
        scopes = {g: list(ds) for g, ds in (scopes or {}).items()}
        names = set(containers)
        for a, b in contains + joinable:
            names.add(a)
            names.add(b)
        for ds in scopes.values():
            names.update(ds)
        configurations = dict(configurations or {})
        diags = validate_containment(names, contains, where)
        if diags:
            raise EnvironmentValidationError(diags)

        self.container_ids: tuple[str, ...] = tuple(sorted(names))
        self.index: dict[str, int] = {d: i for i, d in enumerate(self.container_ids)}
        self.parent: dict[str, str] = {child: parent for parent, child in contains}
        children: dict[str, list[str]] = {}
        for parent, child in contains:
            children.setdefault(parent, [])
            if child not in children[parent]:
                children[parent].append(child)
        self.children: dict[str, tuple[str, ...]] = {p: tuple(sorted(cs)) for p, cs in children.items()}
        join: dict[str, set[str]] = {}
        for a, b in joinable:
            join.setdefault(a, set()).add(b)
            join.setdefault(b, set()).add(a)
        self.joinable: dict[str, frozenset] = {d: frozenset(s) for d, s in join.items()}
        self.scopes: dict[str, Scope] = {
            g: Scope(g, frozenset(ds), configurations.get(g)) for g, ds in sorted(scopes.items())
        }
        self._ancestors: dict[str, tuple[str, ...]] = {}
        self._descendants: dict[str, tuple[str, ...]] = {}
        self._parent_array: np.ndarray | None = None
        self._visible_matrix: np.ndarray | None = None

    # -- basic queries
    @property
    def containers(self) -> dict[str, Container]:
        return {
            d: Container(d, self.parent.get(d), self.joinable.get(d, frozenset()))
            for d in self.container_ids
        }

    @property
    def scope_ids(self) -> tuple[str, ...]:
        return tuple(self.scopes)

    def require(self, d: str) -> None:
        if d not in self.index:
            raise InputError(f"unknown container {d}")

    def require_scope(self, g: str) -> None:
        if g not in self.scopes:
            raise InputError(f"unknown scope {g}")

    def visible(self, d: str, g: str) -> bool:
        scope = self.scopes.get(g)
        return scope is not None and d in scope.visible_containers

    def visible_in(self, g: str) -> tuple[str, ...]:
        return tuple(sorted(self.scopes[g].visible_containers))

    def ancestors(self, d: str) -> tuple[str, ...]:
        """Strict ancestors, nearest first."""
        if d not in self._ancestors:
            out = []
            node = self.parent.get(d)
            while node is not None:
                out.append(node)
                node = self.parent.get(node)
            self._ancestors[d] = tuple(out)
        return self._ancestors[d]

    def descendants(self, d: str) -> tuple[str, ...]:
        if d not in self._descendants:
            out: list[str] = []
            stack = list(reversed(self.children.get(d, ())))
            while stack:
                node = stack.pop()
                out.append(node)
                stack.extend(reversed(self.children.get(node, ())))
            self._descendants[d] = tuple(out)
        return self._descendants[d]

    def siblings(self, d: str) -> tuple[str, ...]:
        p = self.parent.get(d)
        if p is None:
            return ()
        return tuple(c for c in self.children.get(p, ()) if c != d)

    def related(self, kind: RelationKind, d: str) -> tuple[str, ...]:
        """All ``x`` with ``kind(x, d)``; e.g. ``related(CHILD, d)`` are d's children."""
        kind = RelationKind(kind)
        if kind is RelationKind.ID:
            return (d,)
        if kind is RelationKind.CHILD:
            return self.children.get(d, ())
        if kind is RelationKind.PARENT:
            p = self.parent.get(d)
            return (p,) if p is not None else ()
        if kind is RelationKind.DESC:
            return self.descendants(d)
        if kind is RelationKind.SIB:
            return self.siblings(d)
        return tuple(sorted(self.joinable.get(d, ())))

    # -- release support
    def grant_visibility(self, d: str, g: str) -> bool:
        self.require(d)
        self.require_scope(g)
        scope = self.scopes[g]
        if d in scope.visible_containers:
            return False
        self.scopes[g] = Scope(g, scope.visible_containers | {d}, scope.config_container)
        self._visible_matrix = None
        return True

    def add_scope(self, g: str, containers: Iterable[str] = ()) -> None:
        if g in self.scopes:
            raise InputError(f"scope {g} already exists")
        for d in containers:
            self.require(d)
        self.scopes[g] = Scope(g, frozenset(containers))
        self.scopes = dict(sorted(self.scopes.items()))
        self._visible_matrix = None

    # -- array views for the numeric kernels
    @property
    def parent_array(self) -> np.ndarray:
        if self._parent_array is None:
            arr = np.full(len(self.container_ids), -1, dtype=np.int64)
            for child, parent in self.parent.items():
                arr[self.index[child]] = self.index[parent]
            self._parent_array = arr
        return self._parent_array

    @property
    def scope_index(self) -> dict[str, int]:
        return {g: i for i, g in enumerate(self.scopes)}

    @property
    def visible_matrix(self) -> np.ndarray:
        if self._visible_matrix is None:
            mat = np.zeros((len(self.scopes), len(self.container_ids)), dtype=np.bool_)
            for gi, scope in enumerate(self.scopes.values()):
                for d in scope.visible_containers:
                    mat[gi, self.index[d]] = True
            self._visible_matrix = mat
        return self._visible_matrix

    def to_dict(self) -> dict:
        return {
            "containers": list(self.container_ids),
            "contains": sorted([p, c] for c, p in self.parent.items()),
            "joinable": sorted(sorted([a, b]) for a, bs in self.joinable.items() for b in bs if a <= b),
            "scopes": {g: sorted(s.visible_containers) for g, s in self.scopes.items()},
            "configurations": {g: s.config_container for g, s in self.scopes.items() if s.config_container},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Environment":
        return cls(
            containers=data["containers"],
            contains=[tuple(e) for e in data["contains"]],
            joinable=[tuple(e) for e in data["joinable"]],
            scopes=data["scopes"],
            configurations=data.get("configurations", {}),
        )


def canonical_relation(kind: RelationKind | str, d1: str, d2: str, env: Environment) -> bool:
    """Truth of ``kind(d1, d2)``: child(x,y) means x is an immediate child of y,
    desc(x,y) means x lies strictly below y, sib needs a shared parent and x != y."""
    env.require(d1)
    env.require(d2)
    kind = RelationKind(kind)
    if kind is RelationKind.ID:
        return d1 == d2
    if kind is RelationKind.CHILD:
        return env.parent.get(d1) == d2
    if kind is RelationKind.PARENT:
        return env.parent.get(d2) == d1
    if kind is RelationKind.DESC:
        return d2 in env.ancestors(d1)
    if kind is RelationKind.SIB:
        p = env.parent.get(d1)
        return d1 != d2 and p is not None and env.parent.get(d2) == p
    return d2 in env.joinable.get(d1, ())
