"""Init / Load / Iterate / Query: from files on disk to a saturated store."""

from __future__ import annotations

import hashlib
import re
import logging
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .doc_parser import DeclarationGraph, Manifest, discover_manifests, parse_file, topo_order
from .errors import (
    DependencyError,
    EnvironmentValidationError,
    InputError,
    StaleCacheError,
)
from .fact_store import Store, hash_inputs, load_cache, save_cache, skolemize
from .framework_resolver import Model, build_model
from .inference_engine import RunReport, run_to_fixed_point
from .metamodel import ComplianceAssertion, ContainmentAssertion, Diagnostic, Environment, make_parameters
from .stats_kanon import RecordTable, emit_analysis, read_csv
from .terms import Literal
from .vocab import CM, DEFAULT_PREFIXES, RDF_TYPE, compact, expand

log = logging.getLogger(__name__)

PACKAGE_DIR = Path(__file__).resolve().parent
BUNDLE_DIR = PACKAGE_DIR / "frameworks"
SCENARIO_DIR = PACKAGE_DIR / "scenarios"


def scenario_path(name: str, *parts: str) -> Path:
    return SCENARIO_DIR.joinpath(name, *parts)


# ---------------------------------------------------------------------------
# Frameworks


def _norm(name: str) -> str:
    return re.sub(r"[^0-9a-z]", "", name.lower())


def manifest_key(available: dict[str, Manifest], name: str) -> str:
    """Bundle key for ``name``; case, dashes and a trailing "framework" are ignored."""
    if name in available:
        return name
    want = _norm(name).removesuffix("framework")
    hits = [k for k in available if _norm(k) == want]
    if len(hits) != 1:
        raise DependencyError(f"unknown framework '{name}' (available: {', '.join(sorted(available))})")
    return hits[0]


def select_manifests(available: dict[str, Manifest], names: Optional[Iterable[str]]) -> dict[str, Manifest]:
    """``names`` plus their dependency closure; ``None`` selects everything."""
    if names is None:
        return dict(available)
    chosen: dict[str, Manifest] = {}
    queue = [manifest_key(available, n) for n in names]
    while queue:
        name = queue.pop()
        if name in chosen:
            continue
        if name not in available:
            raise DependencyError(f"unknown framework '{name}' (available: {', '.join(sorted(available))})")
        chosen[name] = available[name]
        queue.extend(available[name].dependencies)
    return chosen


@dataclass
class LoadedFrameworks:
    manifests: dict[str, Manifest]
    order: list[str]
    model: Model
    files: list[Path]
    warnings: list[str] = field(default_factory=list)


def framework_files(manifests: dict[str, Manifest]) -> list[Path]:
    files = []
    for m in manifests.values():
        files.append(Path(m.root) / "framework.toml")
        files.extend(m.model_paths())
    return sorted(files)


def load_frameworks(names: Optional[Iterable[str]] = None, directories: Sequence[str | Path] = ()) -> LoadedFrameworks:
    available = discover_manifests([*directories, BUNDLE_DIR])
    manifests = select_manifests(available, None if names is None else list(names))
    order = topo_order(manifests.values())
    warnings = []
    bundles = []
    for name in order:
        m = manifests[name]
        if m.construct_files:
            warnings.append(
                f"framework '{name}': construct files are not supported and were ignored ({', '.join(m.construct_files)})"
            )
        graph = DeclarationGraph()
        for path in m.model_paths():
            graph = graph.merge(parse_file(path))
        bundles.append((m, skolemize(graph)))
    model = build_model(bundles)
    for fw in model.frameworks.values():
        for parent in fw.parents:
            pname = model.names.get(parent)
            own = manifests.get(model.names.get(fw.id, ""))
            if own is not None and pname is not None and pname not in own.dependencies:
                warnings.append(f"framework '{own.name}' extends '{pname}' without listing it as a dependency")
    for w in warnings:
        log.warning(w)
    return LoadedFrameworks(manifests, order, model, framework_files(manifests), warnings)


# ---------------------------------------------------------------------------
# Environments


@dataclass
class LoadedEnvironment:
    env: Environment
    ground: list[ComplianceAssertion]
    containments: list[ContainmentAssertion]
    tables: list[tuple[RecordTable, list[str]]]
    prefixes: dict[str, str]
    aux_files: list[Path]
    warnings: list[str] = field(default_factory=list)


def _where(graph: DeclarationGraph, s, p, o=None):
    for triple in graph:
        if triple[0] == s and triple[1] == p and (o is None or triple[2] == o):
            loc = graph.location(triple)
            if loc:
                return loc
    return ("", 0, 0)


def _scalar(value):
    return value.value if isinstance(value, Literal) else value


def _coerce_parameter(model: Model, label: str, name: str, value, where) -> object:
    kind = model.label_parameter_kind(label, name)
    if kind is None:
        raise InputError(f"{where}: label {label} has no parameter {name!r}")
    ok = {
        "integer": isinstance(value, int) and not isinstance(value, bool),
        "decimal": isinstance(value, (int, Decimal)) and not isinstance(value, bool),
        "boolean": isinstance(value, bool),
        "string": isinstance(value, str),
    }[kind]
    if not ok:
        raise InputError(f"{where}: parameter {name!r} of {label} must be {kind}, got {value!r}")
    return Decimal(value) if kind == "decimal" else value


def load_environment(paths: Sequence[str | Path], model: Model) -> LoadedEnvironment:
    docs = [(Path(p), parse_file(p)) for p in paths]
    merged = DeclarationGraph()
    prefixes = dict(DEFAULT_PREFIXES)
    for _, g in docs:
        merged = merged.merge(g)
        for k, v in g.prefixes.items():
            prefixes.setdefault(k, v)
    graph = skolemize(merged)

    def loc(s, p, o=None) -> str:
        src, line, col = _where(graph, s, p, o)
        return f"{src}:{line}:{col}" if src else str(s)

    containers = set(s for s in graph.typed(CM.DataContainer) if isinstance(s, str))
    contains = [(s, o) for s, p, o in graph if p == CM.contains]
    joinable = [(s, o) for s, p, o in graph if p == CM.joinableWith]
    for a, b in contains + joinable:
        for x in (a, b):
            if not isinstance(x, str):
                raise InputError(f"{loc(a, CM.contains)}: containers must be named")
    contains_locs = {(s, o): _where(graph, s, CM.contains, o) for s, o in contains}

    scopes: dict[str, set[str]] = {}
    configs: dict[str, str] = {}
    subtree_roots: dict[str, list[str]] = {}
    for g in graph.typed(CM.GovernanceScope):
        scopes[g] = set(graph.objects(g, CM.includesContainer))
        subtree_roots[g] = list(graph.objects(g, CM.includesSubtree))
        cfg = graph.value(g, CM.hasConfiguration)
        if cfg is None and f"{g}#config" in containers:
            cfg = f"{g}#config"
        if cfg is not None:
            configs[g] = cfg
            scopes[g].add(cfg)
            containers.add(cfg)

    # validate the forest before expanding subtrees
    names = set(containers)
    for a, b in contains + joinable:
        names.update((a, b))
    for vis in scopes.values():
        names.update(vis)
    for roots in subtree_roots.values():
        names.update(roots)
    env = Environment(names, contains, joinable, {}, {}, where=lambda e: contains_locs.get(e, ("", 0, 0)))
    for g in scopes:
        for root in subtree_roots[g]:
            scopes[g].add(root)
            scopes[g].update(env.descendants(root))
    env = Environment(names, contains, joinable, scopes, configs)

    warnings: list[str] = []
    ground: list[ComplianceAssertion] = []

    def require_label(l, where) -> None:
        if l not in model.labels:
            raise InputError(f"{where}: unknown label {l}")

    for d, p, l in graph:
        if p != CM.hasGroundLabel:
            continue
        where = loc(d, p, l)
        require_label(l, where)
        vis = [g for g in env.scopes if env.visible(d, g)]
        if not vis:
            warnings.append(f"{where}: {d} is visible in no scope; its ground label {l} has no effect")
        fw = model.labels[l].declaring_framework
        ground.extend(ComplianceAssertion(d, l, g, fw, True) for g in vis)

    for node in graph.typed(CM.ComplianceAssertion):
        where = loc(node, RDF_TYPE)
        d = graph.value(node, CM.assertedOn)
        l = graph.value(node, CM.assertsLabel)
        if d is None or l is None:
            raise InputError(f"{where}: compliance assertion needs assertedOn and assertsLabel")
        require_label(l, where)
        env.require(d)
        fw = graph.value(node, CM.byFramework, model.labels[l].declaring_framework)
        if fw not in model.frameworks:
            raise InputError(f"{where}: unknown framework {fw}")
        params = {}
        for pnode in graph.objects(node, CM.hasParameter):
            name = _scalar(graph.value(pnode, CM.parameterName))
            value = _scalar(graph.value(pnode, CM.parameterValue))
            if not isinstance(name, str) or value is None:
                raise InputError(f"{where}: parameter needs parameterName and parameterValue")
            params[name] = _coerce_parameter(model, l, name, value, where)
        in_scopes = graph.objects(node, CM.assertedInScope) or [g for g in env.scopes if env.visible(d, g)]
        for g in in_scopes:
            env.require_scope(g)
            ground.append(ComplianceAssertion(d, l, g, fw, True, make_parameters(params)))

    containments: list[ContainmentAssertion] = []
    for node in graph.typed(CM.ContainmentAssertion):
        where = loc(node, RDF_TYPE)
        d = graph.value(node, CM.assertedOn)
        l = graph.value(node, CM.assertsLabel)
        if d is None or l is None:
            raise InputError(f"{where}: containment assertion needs assertedOn and assertsLabel")
        require_label(l, where)
        env.require(d)
        for g in graph.objects(node, CM.assertedInScope) or [g for g in env.scopes if env.visible(d, g)]:
            env.require_scope(g)
            containments.append(ContainmentAssertion(d, l, g, True))

    tables: list[tuple[RecordTable, list[str]]] = []
    aux: list[Path] = []
    for path, doc in docs:
        sk = skolemize(doc)
        for d, p, spec in sk:
            if p != CM.hasRecordData:
                continue
            where = loc(d, p)
            csv_name = _scalar(sk.value(spec, CM.csvFile))
            if not isinstance(csv_name, str):
                raise InputError(f"{where}: record data needs a csvFile")
            qis = []
            for q in sk.objects(spec, CM.quasiIdentifiers):
                qis.extend(_scalar(x) for x in (q if isinstance(q, tuple) else (q,)))
            csv_path = (path.parent / csv_name).resolve()
            if not csv_path.exists():
                raise InputError(f"{where}: record file {csv_path} not found")
            aux.append(csv_path)
            table = read_csv(csv_path, d, qis)
            vis = [g for g in env.scopes if env.visible(d, g)]
            tables.append((table, vis))
            ground.extend(emit_analysis(table, g) for g in vis)

    for w in warnings:
        log.warning(w)
    return LoadedEnvironment(env, ground, containments, tables, prefixes, aux, warnings)


# ---------------------------------------------------------------------------
# Full runs


@dataclass
class Outcome:
    """A saturated store plus what the query side needs to know about the model."""

    store: Store
    report: RunReport
    framework_names: dict[str, str]
    framework_order: list[str]
    blockers: dict[str, list[str]]
    control_labels: list[str]
    prefixes: dict[str, str]
    warnings: list[str] = field(default_factory=list)

    def to_meta(self) -> dict:
        return {
            "framework_names": self.framework_names,
            "framework_order": self.framework_order,
            "blockers": self.blockers,
            "control_labels": self.control_labels,
            "prefixes": self.prefixes,
            "report": self.report.to_dict(),
        }

    def framework_id(self, name: str) -> str:
        if name in self.framework_names:
            return name
        for iri, n in self.framework_names.items():
            if n == name:
                return iri
        full = expand(name, self.prefixes)
        if full in self.framework_names:
            return full
        for iri in self.framework_names:
            local = iri.rsplit("#", 1)[-1]
            if _norm(name) in (_norm(local), _norm(local.removesuffix("Framework")), _norm(self.framework_names[iri])):
                return iri
        raise InputError(f"unknown framework {name}")

    def show(self, iri: str) -> str:
        return compact(iri, self.prefixes) if isinstance(iri, str) else str(iri)


def outcome_from_model(store: Store, report: RunReport, model: Model, prefixes: dict, warnings=()) -> Outcome:
    control = sorted(l for l in model.facet_labels("urn:polyjur:base#Control"))
    return Outcome(
        store=store,
        report=report,
        framework_names={f: model.display_name(f) for f in model.order},
        framework_order=list(model.order),
        blockers={f: sorted(model.release_blockers(f)) for f in model.order},
        control_labels=control,
        prefixes=prefixes,
        warnings=list(warnings),
    )


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(
    env_paths: Sequence[str | Path],
    frameworks: Optional[Iterable[str]] = None,
    *,
    framework_dirs: Sequence[str | Path] = (),
    cache: Optional[str | Path] = None,
    strict_premises: bool = False,
    semi_naive: bool = False,
) -> Outcome:
    """Run the whole pipeline, reusing ``cache`` when it matches the inputs."""
    phase_log = ["init"]
    available = discover_manifests([*framework_dirs, BUNDLE_DIR])
    selected = select_manifests(available, None if frameworks is None else list(frameworks))
    files = framework_files(selected) + [Path(p) for p in env_paths]
    flags = f"strict={int(strict_premises)};frameworks={','.join(sorted(selected))}".encode()
    digest = hash_inputs(files, flags)

    if cache is not None and Path(cache).exists():
        try:
            store, meta = load_cache(cache, digest)
            for path, expected in meta.get("aux_inputs", {}).items():
                if not Path(path).exists() or _digest(Path(path)) != expected:
                    raise StaleCacheError(f"{cache}: record file {path} changed since the cache was written")
        except StaleCacheError as exc:
            log.info("ignoring stale cache: %s", exc)
        else:
            phase_log += ["cache", "query"]
            report = RunReport(cache_hit=True, phase_log=phase_log)
            cached = meta.get("report", {})
            report.rounds = cached.get("rounds", 0)
            report.new_assertions_per_round = cached.get("new_assertions_per_round", [])
            report.universe_bound = cached.get("universe_bound", 0)
            report.total_assertions = len(store)
            report.ground_assertions = sum(1 for a in store if a.ground)
            return Outcome(
                store, report, meta["framework_names"], meta["framework_order"], meta["blockers"],
                meta["control_labels"], meta["prefixes"],
            )

    phase_log.append("load")
    loaded = load_frameworks(list(selected), framework_dirs)
    envl = load_environment(env_paths, loaded.model)
    phase_log.append("iterate")
    store, report = run_to_fixed_point(
        envl.env, loaded.model, envl.ground,
        containments=envl.containments, strict_premises=strict_premises, semi_naive=semi_naive,
    )
    phase_log.append("query")
    report.phase_log = phase_log
    outcome = outcome_from_model(store, report, loaded.model, envl.prefixes, loaded.warnings + envl.warnings)
    if cache is not None:
        meta = outcome.to_meta()
        meta["aux_inputs"] = {str(p): _digest(p) for p in envl.aux_files}
        save_cache(store, cache, digest, meta)
    return outcome


def validate(env_paths: Sequence[str | Path], frameworks: Optional[Iterable[str]] = None, framework_dirs=()) -> list[Diagnostic]:
    """Every problem found while loading, as diagnostics (empty means valid)."""
    from .errors import ParseError, PolyjurError

    diags: list[Diagnostic] = []
    try:
        loaded = load_frameworks(frameworks, framework_dirs)
    except ParseError as exc:
        return [Diagnostic("error", exc.message, exc.source, exc.line, exc.column)]
    except PolyjurError as exc:
        return [Diagnostic("error", str(exc))]
    diags += [Diagnostic("warning", w) for w in loaded.warnings]
    if not env_paths:
        return diags
    try:
        envl = load_environment(env_paths, loaded.model)
    except EnvironmentValidationError as exc:
        return diags + list(exc.diagnostics)
    except ParseError as exc:
        return diags + [Diagnostic("error", exc.message, exc.source, exc.line, exc.column)]
    except PolyjurError as exc:
        return diags + [Diagnostic("error", str(exc))]
    diags += [Diagnostic("warning", w) for w in envl.warnings]
    for a in envl.ground:
        if not envl.env.visible(a.container, a.scope):
            diags.append(Diagnostic("error", f"{a.container} is not visible in scope {a.scope}"))
    return diags
