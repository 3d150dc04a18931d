"""From skolemized declaration graphs to frameworks and their effective rule sets."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

from .doc_parser import DeclarationGraph, Manifest
from .errors import DependencyError, ResolutionError
from .metamodel import (
    Comparison,
    Composite,
    Condition,
    ContainsLabel,
    Conditional,
    Facet,
    Framework,
    HasLabel,
    Label,
    ParameterSource,
    Propagation,
    PureImplication,
    RelationKind,
    Rule,
    Simple,
    condition_atoms,
)
from .terms import Literal
from .vocab import CM, COMPARISON_OPERATORS, CONDITION_RELATIONS, DIRECTIONS, LOGICAL_OPERATORS, RDF_TYPE


class _Ctx:
    """Location-aware error reporting for one framework's declarations."""

    def __init__(self, graph: DeclarationGraph, framework: str):
        self.graph = graph
        self.framework = framework

    def fail(self, message: str, node=None, predicate=None) -> ResolutionError:
        where = ""
        if node is not None:
            for (s, p, o) in self.graph:
                if (s == node and (predicate is None or p == predicate)) or o == node:
                    loc = self.graph.location((s, p, o))
                    if loc:
                        where = f"{loc[0]}:{loc[1]}:{loc[2]}: "
                        break
        return ResolutionError(f"{where}{self.framework}: {message}")

    def one(self, node, predicate, required=True):
        values = self.graph.objects(node, predicate)
        if not values:
            if required:
                raise self.fail(f"declaration {node} lacks {predicate}", node)
            return None
        if len(values) > 1:
            raise self.fail(f"declaration {node} has several values for {predicate}", node, predicate)
        return values[0]

    def iri(self, node, predicate, required=True) -> Optional[str]:
        v = self.one(node, predicate, required)
        if v is not None and not isinstance(v, str):
            raise self.fail(f"{predicate} of {node} must name a label", node, predicate)
        return v

    def iri_list(self, node, predicate) -> list[str]:
        """Values given either as repeated objects or as one ordered collection."""
        out: list[str] = []
        for v in self.graph.objects(node, predicate):
            items = v if isinstance(v, tuple) else (v,)
            for x in items:
                if not isinstance(x, str):
                    raise self.fail(f"{predicate} of {node} must list labels", node, predicate)
                if x not in out:
                    out.append(x)
        return out


# ---------------------------------------------------------------------------
# Conditions


def _source(ctx: _Ctx, node) -> ParameterSource:
    if not isinstance(node, str):
        raise ctx.fail("parameter source must be a node", node)
    label = ctx.iri(node, CM.sourceLabel, required=False)
    param = ctx.one(node, CM.sourceParameter, required=False)
    default = ctx.one(node, CM.defaultValue, required=False)
    if param is not None:
        if not isinstance(param, Literal) or param.kind != "string":
            raise ctx.fail(f"sourceParameter of {node} must be a string", node, CM.sourceParameter)
        param = param.value
    if default is not None:
        if not isinstance(default, Literal):
            raise ctx.fail(f"defaultValue of {node} must be a literal", node, CM.defaultValue)
        default = default.value
    kind = ctx.one(node, CM.sourceType, required=False)
    if kind is not None and kind not in (CM.LabelParameter, CM.LiteralValue):
        raise ctx.fail(f"unknown sourceType {kind}", node, CM.sourceType)
    try:
        return ParameterSource(label, param, default)
    except Exception as exc:
        raise ctx.fail(f"malformed parameter source {node}: {exc}", node) from exc


def parse_condition(ctx: _Ctx, node) -> Condition:
    if not isinstance(node, str):
        raise ctx.fail("condition must be a node", node)
    g = ctx.graph
    types = set(g.objects(node, RDF_TYPE))
    props = g.properties(node)

    if CM.CompositeCondition in types or CM.logicalOperator in props:
        op = ctx.iri(node, CM.logicalOperator)
        if op not in LOGICAL_OPERATORS:
            raise ctx.fail(f"unknown logical operator {op}", node, CM.logicalOperator)
        child_nodes = []
        for v in g.objects(node, CM.hasCondition):
            child_nodes.extend(v if isinstance(v, tuple) else (v,))
        if not child_nodes:
            raise ctx.fail(f"composite condition {node} has no sub-conditions", node)
        children = sorted((parse_condition(ctx, c) for c in dict.fromkeys(child_nodes)), key=lambda c: c.id)
        return Composite(LOGICAL_OPERATORS[op], tuple(children), node)

    if CM.ComparisonCondition in types or CM.ParameterCheckCondition in types or CM.comparisonOperator in props:
        op = ctx.iri(node, CM.comparisonOperator)
        if op not in COMPARISON_OPERATORS:
            raise ctx.fail(f"unknown comparison operator {op}", node, CM.comparisonOperator)
        left = _source(ctx, ctx.one(node, CM.leftSource))
        right = _source(ctx, ctx.one(node, CM.rightSource))
        return Comparison(left, right, COMPARISON_OPERATORS[op], node)

    if CM.ContainsLabelCondition in types or CM.requiresContains in props:
        return ContainsLabel(ctx.iri(node, CM.requiresContains), node)

    if CM.RelationLabelCondition in types or CM.HasLabelCondition in types or CM.requiresLabel in props:
        rel = ctx.iri(node, CM.onRelation, required=CM.RelationLabelCondition in types) or CM.Self
        if rel not in CONDITION_RELATIONS:
            raise ctx.fail(f"unsupported condition relation {rel}", node, CM.onRelation)
        return HasLabel(RelationKind(CONDITION_RELATIONS[rel]), ctx.iri(node, CM.requiresLabel), node)

    raise ctx.fail(f"malformed condition {node}: no recognised condition type", node)


# ---------------------------------------------------------------------------
# Rules


def extract_rules(graph: DeclarationGraph, framework: str) -> list[Rule]:
    """Rules declared directly by ``framework`` (facet propagation left unexpanded)."""
    ctx = _Ctx(graph, framework)
    rules: list[Rule] = []

    for node in graph.objects(framework, CM.declaresSubclassOf):
        target = ctx.iri(node, CM.isSubclassOf, required=False) or ctx.iri(node, CM.toLabel, required=False)
        if target is None:
            raise ctx.fail(f"subclass declaration {node} names no target label", node)
        sources = ctx.iri_list(node, CM.fromLabel) + ctx.iri_list(node, CM.fromAnyLabel)
        if not sources:
            raise ctx.fail(f"subclass declaration {node} names no source label", node)
        rules.extend(Rule(target, Simple(src), framework, node) for src in sources)

    for node in graph.objects(framework, CM.declaresImplication):
        head = ctx.iri(node, CM.toLabel)
        cond = parse_condition(ctx, ctx.one(node, CM.hasCondition))
        trigger = ctx.iri(node, CM.fromLabel, required=False)
        variant = Conditional(trigger, cond) if trigger else PureImplication(cond)
        rules.append(Rule(head, variant, framework, node))

    for node in graph.objects(framework, CM.declaresEquivalent):
        head = ctx.iri(node, CM.toLabel)
        parts = ctx.iri_list(node, CM.fromAllLabels) + ctx.iri_list(node, CM.fromLabel)
        if not parts:
            raise ctx.fail(f"equivalence {node} names no labels", node)
        atoms = tuple(HasLabel(RelationKind.ID, l, f"{node}#{i}") for i, l in enumerate(parts))
        cond = atoms[0] if len(atoms) == 1 else Composite("AND", atoms, f"{node}#all")
        rules.append(Rule(head, PureImplication(cond), framework, node))
        rules.extend(Rule(l, Simple(head), framework, node) for l in parts)

    for node in graph.objects(framework, CM.declaresPropagation):
        direction = ctx.iri(node, CM.propagationDirection)
        if direction not in DIRECTIONS:
            raise ctx.fail(f"propagation direction {direction} is not Inward, Outward, Peer or Joinable", node)
        relation = RelationKind(DIRECTIONS[direction])
        label = ctx.iri(node, CM.propagatesLabel, required=False)
        facet = ctx.iri(node, CM.propagatesFacet, required=False)
        if (label is None) == (facet is None):
            raise ctx.fail(f"propagation {node} needs exactly one of propagatesLabel / propagatesFacet", node)
        if label is not None:
            rules.append(Rule(label, Propagation(relation, label), framework, node))
        else:
            rules.append(Rule(None, Propagation(relation, facet, over_facet=True), framework, node))

    return sorted(rules, key=rule_sort_key)


def rule_sort_key(rule: Rule) -> tuple:
    return (rule.head or "", rule.family, rule.node, repr(rule.variant))


def rule_labels(rule: Rule) -> set[str]:
    """Every label a rule mentions (head, triggers, condition atoms, parameter sources)."""
    out = {rule.head} if rule.head else set()
    v = rule.variant
    if isinstance(v, (Simple, Conditional)):
        out.add(v.from_label)
    if isinstance(v, Propagation) and not v.over_facet:
        out.add(v.subject)
    cond = getattr(v, "condition", None)
    if cond is not None:
        for atom in condition_atoms(cond):
            if isinstance(atom, (HasLabel, ContainsLabel)):
                out.add(atom.label)
            elif isinstance(atom, Comparison):
                out.update(s.source_label for s in (atom.left, atom.right) if s.source_label)
    return out


def expand_rules(rules: Iterable[Rule], facet_labels) -> list[Rule]:
    """Replace facet-level propagation with one rule per label of the facet."""
    out = []
    for r in rules:
        v = r.variant
        if isinstance(v, Propagation) and v.over_facet:
            for label in facet_labels(v.subject):
                out.append(Rule(label, Propagation(v.relation, label), r.declared_by, r.node))
        else:
            out.append(r)
    return out


def ancestor_closure(parents: Mapping[str, Iterable[str]], f: str) -> list[str]:
    """Strict ancestors of ``f``, breadth first, each once."""
    seen: list[str] = []
    queue = list(parents.get(f, ()))
    while queue:
        a = queue.pop(0)
        if a == f:
            raise DependencyError(f"framework {f} inherits from itself", [f])
        if a not in seen:
            seen.append(a)
            queue.extend(parents.get(a, ()))
    return seen


def check_acyclic(parents: Mapping[str, Iterable[str]]) -> None:
    state: dict[str, int] = {}
    path: list[str] = []

    def visit(n: str) -> None:
        state[n] = 1
        path.append(n)
        for p in sorted(parents.get(n, ())):
            if state.get(p) == 1:
                cycle = path[path.index(p):]
                raise DependencyError("inheritance cycle: " + " -> ".join(cycle + [p]), cycle)
            if p not in state:
                visit(p)
        path.pop()
        state[n] = 2

    for n in sorted(parents):
        if n not in state:
            visit(n)


def resolve_effective_rules(frameworks: Iterable[Framework] | Mapping[str, Framework], facet_labels=None) -> dict[str, tuple[Rule, ...]]:
    """Declared rules plus every ancestor rule whose head the framework does not itself declare."""
    fws = dict(frameworks) if isinstance(frameworks, Mapping) else {f.id: f for f in frameworks}
    parents = {f.id: f.parents for f in fws.values()}
    for f in fws.values():
        for p in f.parents:
            if p not in fws:
                raise ResolutionError(f"framework {f.id} extends unknown framework {p}")
    check_acyclic(parents)
    facet_labels = facet_labels or (lambda facet: ())
    declared = {fid: expand_rules(f.declared_rules, facet_labels) for fid, f in fws.items()}

    effective: dict[str, tuple[Rule, ...]] = {}
    for fid in fws:
        own = declared[fid]
        own_heads = {r.head for r in own}
        chosen: dict[tuple, Rule] = {}
        for r in own:
            chosen.setdefault(r.dedup_key(), r)
        for a in ancestor_closure(parents, fid):
            for r in declared[a]:
                if r.head not in own_heads:
                    chosen.setdefault(r.dedup_key(), r)
        effective[fid] = tuple(sorted(chosen.values(), key=rule_sort_key))
    return effective


# ---------------------------------------------------------------------------
# Model


@dataclass
class Model:
    facets: dict[str, Facet] = field(default_factory=dict)
    labels: dict[str, Label] = field(default_factory=dict)
    frameworks: dict[str, Framework] = field(default_factory=dict)
    order: list[str] = field(default_factory=list)
    names: dict[str, str] = field(default_factory=dict)  # framework iri -> manifest name
    effective: dict[str, tuple[Rule, ...]] = field(default_factory=dict)

    def facet_labels(self, facet: str) -> list[str]:
        """Labels of ``facet`` and of all its sub-facets, sorted."""
        wanted = {facet}
        grew = True
        while grew:
            grew = False
            for x in self.facets.values():
                if x.parent_facet in wanted and x.id not in wanted:
                    wanted.add(x.id)
                    grew = True
        return sorted(l.id for l in self.labels.values() if l.facet in wanted)

    def resolve(self) -> None:
        self.effective = resolve_effective_rules(self.frameworks, self.facet_labels)

    def ancestors(self, f: str) -> list[str]:
        return ancestor_closure({x.id: x.parents for x in self.frameworks.values()}, f)

    def release_blockers(self, f: str) -> frozenset:
        out = set(self.frameworks[f].release_blockers)
        for a in self.ancestors(f):
            out.update(self.frameworks[a].release_blockers)
        return frozenset(out)

    def framework_id(self, name: str) -> str:
        """Accept a manifest name, a full framework IRI, or an IRI's local name."""
        if name in self.frameworks:
            return name
        for iri, n in self.names.items():
            if n == name:
                return iri
        for iri in self.frameworks:
            local = iri.rsplit("#", 1)[-1]
            if name in (local, local.removesuffix("Framework")):
                return iri
        raise ResolutionError(f"unknown framework {name}")

    def display_name(self, f: str) -> str:
        return self.names.get(f, f)

    def label_parameter_kind(self, label: str, parameter: str) -> Optional[str]:
        spec = self.labels.get(label)
        if spec is None:
            return None
        return dict(spec.parameter_schema).get(parameter)

    def universe_size(self, n_containers: int, n_scopes: int) -> int:
        return n_containers * len(self.labels) * n_scopes * len(self.frameworks)


def _bundle_framework(graph: DeclarationGraph, manifest: Optional[Manifest]) -> Optional[str]:
    declared = sorted(s for s in graph.typed(CM.Framework) if isinstance(s, str))
    if manifest is not None and manifest.iri:
        return manifest.iri
    if len(declared) == 1:
        return declared[0]
    return None


def build_model(bundles: Iterable[tuple[Optional[Manifest], DeclarationGraph]]) -> Model:
    """Assemble and resolve the model from per-bundle skolemized graphs.

    Labels and facets belong to their bundle's framework unless they carry an
    explicit ``cm:declaredBy``.
    """
    model = Model()
    bundles = list(bundles)
    merged = DeclarationGraph()
    kinds: dict[str, str] = {}
    for manifest, graph in bundles:
        merged = merged.merge(graph)
        owner = _bundle_framework(graph, manifest)
        if manifest is not None:
            if owner is None:
                raise ResolutionError(f"bundle {manifest.name}: cannot tell which framework it declares")
            model.names[owner] = manifest.name
            kinds[owner] = manifest.kind
        for facet in graph.typed(CM.Facet):
            fw = graph.value(facet, CM.declaredBy, owner)
            if fw is None:
                raise ResolutionError(f"facet {facet} has no declaring framework")
            if facet in model.facets:
                raise ResolutionError(f"facet {facet} declared twice")
            model.facets[facet] = Facet(facet, facet.rsplit("#", 1)[-1], fw, graph.value(facet, CM.subFacetOf))
        for label in graph.typed(CM.ComplianceLabel):
            fw = graph.value(label, CM.declaredBy, owner)
            facet = graph.value(label, CM.inFacet)
            if fw is None or facet is None:
                raise ResolutionError(f"label {label} needs a facet and a declaring framework")
            if label in model.labels:
                raise ResolutionError(f"label {label} declared twice")
            schema = []
            for spec in graph.objects(label, CM.hasParameterSpec):
                name = graph.value(spec, CM.parameterName)
                kind = graph.value(spec, CM.parameterKind)
                if not isinstance(name, Literal) or not isinstance(kind, Literal):
                    raise ResolutionError(f"label {label}: parameter spec needs parameterName and parameterKind")
                schema.append((name.value, kind.value))
            try:
                model.labels[label] = Label(label, facet, fw, tuple(sorted(schema)))
            except Exception as exc:
                raise ResolutionError(str(exc)) from exc

    for label in model.labels.values():
        if label.facet not in model.facets:
            raise ResolutionError(f"label {label.id} is in unknown facet {label.facet}")
    for facet in model.facets.values():
        if facet.parent_facet is not None and facet.parent_facet not in model.facets:
            raise ResolutionError(f"facet {facet.id} refines unknown facet {facet.parent_facet}")

    for fw in sorted(s for s in merged.typed(CM.Framework) if isinstance(s, str)):
        rules = extract_rules(merged, fw)
        ctx = _Ctx(merged, fw)
        for r in rules:
            if isinstance(r.variant, Propagation) and r.variant.over_facet and r.variant.subject not in model.facets:
                raise ctx.fail(f"propagation over unknown facet {r.variant.subject}", r.node)
            for l in rule_labels(r):
                if l not in model.labels:
                    raise ctx.fail(f"rule refers to unknown label {l}", r.node)
        blockers = tuple(sorted(merged.objects(fw, CM.blocksRelease)))
        for l in blockers:
            if l not in model.labels:
                raise ctx.fail(f"blocksRelease names unknown label {l}", fw, CM.blocksRelease)
        model.frameworks[fw] = Framework(
            id=fw,
            name=model.names.get(fw, fw.rsplit("#", 1)[-1]),
            kind=kinds.get(fw, str(merged.value(fw, CM.kind, Literal("custom", "string")))),
            parents=tuple(sorted(merged.objects(fw, CM.extends))),
            declared_rules=tuple(rules),
            declared_labels=tuple(sorted(l.id for l in model.labels.values() if l.declaring_framework == fw)),
            declared_facets=tuple(sorted(x.id for x in model.facets.values() if x.parent_framework == fw)),
            release_blockers=blockers,
        )
    for l in model.labels.values():
        if l.declaring_framework not in model.frameworks:
            raise ResolutionError(f"label {l.id} is declared by unknown framework {l.declaring_framework}")

    model.order = framework_order(model.frameworks)
    model.resolve()
    return model


def framework_order(frameworks: Mapping[str, Framework]) -> list[str]:
    """Parents before children; ties by kind then id."""
    from .metamodel import FRAMEWORK_KINDS

    parents = {f: fw.parents for f, fw in frameworks.items()}
    for f, ps in parents.items():
        for p in ps:
            if p not in frameworks:
                raise ResolutionError(f"framework {f} extends unknown framework {p}")
    check_acyclic(parents)
    done: list[str] = []
    pending = set(frameworks)
    while pending:
        ready = [f for f in pending if all(p in done for p in parents[f])]
        nxt = min(ready, key=lambda f: (FRAMEWORK_KINDS.index(frameworks[f].kind), f))
        done.append(nxt)
        pending.remove(nxt)
    return done
