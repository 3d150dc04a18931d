"""Command-line entry point: ``polyjur <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from decimal import Decimal
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import NotFoundError, PolyjurError
from .fact_store import CACHE_MAGIC, _HEADER, load_cache
from .inference_engine import explain, release, render_explanation, saturate
from .metamodel import ComplianceAssertion
from .pipeline import Outcome, load_environment, load_frameworks, run, validate
from .terms import lexical_form, scalar_kind
from .vocab import compact, expand

log = logging.getLogger("polyjur")

TICK, CROSS, HIDDEN = "✓", "✗", "-"


# ---------------------------------------------------------------------------
# formatting


def _param_text(params) -> str:
    return ";".join(f"{n}={lexical_form(v, scalar_kind(v))}" for n, v in params)


def _param_json(params) -> dict:
    out = {}
    for n, v in params:
        out[n] = str(v) if isinstance(v, Decimal) else v
    return out


def assertion_record(a: ComplianceAssertion, show) -> dict:
    return {
        "container": show(a.container),
        "label": show(a.label),
        "scope": show(a.scope),
        "framework": show(a.framework),
        "origin": "ground" if a.ground else "derived",
        "parameters": _param_json(a.parameters),
    }


DUMP_COLUMNS = ("container", "label", "scope", "framework", "origin", "parameters")


def write_assertions(out, assertions: Iterable[ComplianceAssertion], show, fmt: str) -> None:
    rows = sorted(assertions, key=lambda a: a.key)
    if fmt == "json":
        for a in rows:
            out.write(json.dumps(assertion_record(a, show), sort_keys=True, ensure_ascii=False) + "\n")
        return
    out.write("\t".join(DUMP_COLUMNS) + "\n")
    for a in rows:
        rec = assertion_record(a, show)
        rec["parameters"] = _param_text(a.parameters)
        out.write("\t".join(rec[c] for c in DUMP_COLUMNS) + "\n")


def resolve_term(name: str, candidates: Iterable[str], prefixes: dict, what: str, required: bool = True) -> str:
    """Full IRI for ``name``: as given, prefix-expanded, or a unique local-name match."""
    candidates = list(candidates)
    if name in candidates:
        return name
    full = expand(name, prefixes)
    if full in candidates:
        return full
    local = [c for c in candidates if c.rsplit("#", 1)[-1] == name]
    if len(local) == 1:
        return local[0]
    if len(local) > 1:
        raise PolyjurError(f"ambiguous {what} {name!r}: {', '.join(sorted(local))}")
    if required:
        raise NotFoundError(f"unknown {what} {name!r}")
    return full


def _labels_known(outcome: Outcome) -> set[str]:
    return {a.label for a in outcome.store} | set(outcome.control_labels) | {
        l for ls in outcome.blockers.values() for l in ls
    }


# ---------------------------------------------------------------------------
# commands


def _frameworks_arg(args) -> Optional[list[str]]:
    if not args.frameworks:
        return None
    out: list[str] = []
    for item in args.frameworks:
        out.extend(x for x in item.split(",") if x)
    return out


def _run(args) -> Outcome:
    outcome = run(
        args.env,
        _frameworks_arg(args),
        framework_dirs=args.frameworks_dir or (),
        cache=getattr(args, "cache", None),
        strict_premises=args.strict_premises,
        semi_naive=args.semi_naive,
    )
    for w in outcome.warnings:
        print(f"warning: {w}", file=sys.stderr)
    _emit_report(args, outcome.report.to_json())
    return outcome


def _emit_report(args, text: str) -> None:
    if getattr(args, "report", None):
        Path(args.report).write_text(text + "\n", encoding="utf-8")
    elif not getattr(args, "quiet", False):
        print(f"report: {text}", file=sys.stderr)


def cmd_validate(args, out) -> int:
    diags = validate(args.env or [], _frameworks_arg(args), args.frameworks_dir or ())
    errors = [d for d in diags if d.severity == "error"]
    if args.format == "json":
        for d in diags:
            out.write(json.dumps(d.as_dict(), sort_keys=True) + "\n")
    else:
        for d in diags:
            out.write(str(d) + "\n")
        out.write("ok\n" if not errors else f"{len(errors)} error(s)\n")
    return 1 if errors else 0


def cmd_infer(args, out) -> int:
    outcome = _run(args)
    assertions = list(outcome.store)
    if args.scope:
        scope = resolve_term(args.scope, outcome.store.env.scopes, outcome.prefixes, "scope")
        assertions = [a for a in assertions if a.scope == scope]
    write_assertions(out, assertions, outcome.show, args.format)
    return 0


def cmd_query(args, out) -> int:
    if not any((args.container, args.label, args.scope, args.framework, args.ground_only)):
        raise _UsageError("query needs at least one of --container, --label, --scope, --framework, --ground-only")
    outcome = _run(args)
    env, p = outcome.store.env, outcome.prefixes
    container = args.container and resolve_term(args.container, env.container_ids, p, "container")
    scope = args.scope and resolve_term(args.scope, env.scopes, p, "scope")
    label = args.label and resolve_term(args.label, _labels_known(outcome), p, "label", required=False)
    framework = None
    if args.framework:
        try:
            framework = outcome.framework_id(args.framework)
        except PolyjurError:
            framework = expand(args.framework, p)
    rows = outcome.store.query(container or None, label or None, scope or None, framework, args.ground_only)
    write_assertions(out, rows, outcome.show, args.format)
    return 0


def _assertion_key(args, outcome: Outcome) -> tuple:
    env, p = outcome.store.env, outcome.prefixes
    return (
        resolve_term(args.container, env.container_ids, p, "container"),
        resolve_term(args.label, _labels_known(outcome), p, "label"),
        resolve_term(args.scope, env.scopes, p, "scope"),
        outcome.framework_id(args.framework),
    )


def cmd_explain(args, out) -> int:
    outcome = _run(args)
    tree = explain(outcome.store, _assertion_key(args, outcome))
    if args.format == "json":
        out.write(json.dumps(tree.to_dict(), sort_keys=True) + "\n")
    else:
        out.write(render_explanation(tree, outcome.prefixes) + "\n")
    return 0


def compare_matrix(outcome: Outcome, containers: Sequence[str], scopes: Sequence[str], frameworks: Sequence[str]) -> list[dict]:
    """One record per (container, scope, framework): release verdict and controlled labels."""
    store = outcome.store
    control = set(outcome.control_labels)
    records = []
    for d in containers:
        for g in scopes:
            for f in frameworks:
                blocking = [l for l in outcome.blockers.get(f, []) if store.has_label(d, l, g, f)]
                controlled = sorted(l for l in store.labels(d, g, f) if l in control)
                records.append({
                    "container": d,
                    "scope": g,
                    "framework": f,
                    "visible": store.env.visible(d, g),
                    "suitable": not blocking,
                    "blocking": blocking,
                    "controlled": controlled,
                })
    return records


def cmd_compare(args, out) -> int:
    outcome = _run(args)
    env, p = outcome.store.env, outcome.prefixes
    containers = [resolve_term(c, env.container_ids, p, "container") for c in args.container]
    scopes = [resolve_term(s, env.scopes, p, "scope") for s in (args.scope or list(env.scopes))]
    requested = _frameworks_arg(args)
    if requested:
        frameworks = [outcome.framework_id(f) for f in requested]
    else:
        frameworks = [f for f in outcome.framework_order if outcome.blockers.get(f)]
    records = compare_matrix(outcome, containers, scopes, frameworks)
    if args.format == "json":
        for r in records:
            shown = {k: (outcome.show(v) if isinstance(v, str) else [outcome.show(x) for x in v] if isinstance(v, list) else v)
                     for k, v in r.items()}
            out.write(json.dumps(shown, sort_keys=True, ensure_ascii=False) + "\n")
        return 0
    header = ["container", "scope"] + [outcome.framework_names.get(f, outcome.show(f)) for f in frameworks]
    out.write("\t".join(header) + "\n")
    by_row: dict = {}
    for r in records:
        by_row.setdefault((r["container"], r["scope"]), []).append(r)
    for (d, g), cells in by_row.items():
        texts = []
        for r in cells:
            if not r["visible"]:
                texts.append(HIDDEN)
                continue
            text = TICK if r["suitable"] else CROSS
            if r["controlled"]:
                text += " " + ",".join(outcome.show(l) for l in r["controlled"])
            texts.append(text)
        out.write("\t".join([outcome.show(d), outcome.show(g)] + texts) + "\n")
    return 0


def cmd_release(args, out) -> int:
    loaded = load_frameworks(_frameworks_arg(args), args.frameworks_dir or ())
    envl = load_environment(args.env, loaded.model)
    from .inference_engine import run_to_fixed_point

    store, _ = run_to_fixed_point(
        envl.env, loaded.model, envl.ground, containments=envl.containments,
        strict_premises=args.strict_premises, semi_naive=args.semi_naive,
    )
    env, p = store.env, envl.prefixes
    d = resolve_term(args.container, env.container_ids, p, "container")
    src = resolve_term(args.from_scope, env.scopes, p, "scope")
    dst = expand(args.to_scope, p)
    if dst not in env.scopes:
        local = resolve_term(args.to_scope, env.scopes, p, "scope", required=False)
        if local in env.scopes:
            dst = local
        else:
            if ":" not in args.to_scope:
                dst = src.rsplit("#", 1)[0] + "#" + args.to_scope
            env.add_scope(dst)
    moved = release(store, d, src, dst, with_descendants=args.with_descendants)
    report = saturate(store, loaded.model, strict_premises=args.strict_premises, semi_naive=args.semi_naive)
    _emit_report(args, json.dumps({"transferred": moved, **report.to_dict()}, sort_keys=True))
    show = lambda x: compact(x, p)
    write_assertions(out, store.by_scope(dst), show, args.format)
    return 0


def cmd_cache(args, out) -> int:
    path = Path(args.path)
    if args.action == "clear":
        if path.exists():
            raw = path.read_bytes()[: len(CACHE_MAGIC)]
            if raw != CACHE_MAGIC:
                raise PolyjurError(f"{path} is not a cache file; refusing to delete it")
            path.unlink()
            out.write(f"removed {path}\n")
        else:
            out.write(f"no cache at {path}\n")
        return 0
    raw = path.read_bytes() if path.exists() else b""
    if len(raw) < _HEADER.size:
        raise PolyjurError(f"{path}: not a cache file")
    magic, version, digest = _HEADER.unpack_from(raw)
    store, meta = load_cache(path)
    info = {
        "path": str(path),
        "version": version,
        "input_sha256": digest.hex(),
        "assertions": len(store),
        "containments": len(store.containments),
        "evaluations": len(store.evaluations),
        "frameworks": [meta["framework_names"][f] for f in meta.get("framework_order", [])],
    }
    out.write(json.dumps(info, sort_keys=True) + "\n")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


class _UsageError(PolyjurError):
    pass


def _common(p: argparse.ArgumentParser, env_required: bool = True) -> None:
    p.add_argument("--env", nargs="+", required=env_required, metavar="TTL", help="environment documents")
    p.add_argument("--frameworks", nargs="+", metavar="NAME", help="framework names (dependencies are added)")
    p.add_argument("--frameworks-dir", action="append", metavar="DIR", help="extra directory of framework bundles")
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.add_argument("--strict-premises", action="store_true", help="match every label premise under the rule's own framework")
    p.add_argument("--semi-naive", action="store_true", help="match simple and propagation premises against new facts only")
    p.add_argument("--report", metavar="PATH", help="write the run report here instead of stderr")
    p.add_argument("--quiet", action="store_true", help="do not print the run report")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polyjur", description="Compliance classification of data containers under several frameworks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse and check frameworks and environments")
    _common(p, env_required=False)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("infer", help="run inference and dump every assertion")
    _common(p)
    p.add_argument("--cache", metavar="PATH")
    p.add_argument("--scope", help="only dump this scope")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("query", help="filter assertions")
    _common(p)
    p.add_argument("--cache", metavar="PATH")
    p.add_argument("--container")
    p.add_argument("--label")
    p.add_argument("--scope")
    p.add_argument("--framework")
    p.add_argument("--ground-only", action="store_true")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("explain", help="show how an assertion was derived")
    _common(p)
    p.add_argument("--cache", metavar="PATH")
    p.add_argument("--container", required=True)
    p.add_argument("--label", required=True)
    p.add_argument("--scope", required=True)
    p.add_argument("--framework", required=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("compare", help="release verdicts per framework")
    _common(p)
    p.add_argument("--cache", metavar="PATH")
    p.add_argument("--container", nargs="+", required=True)
    p.add_argument("--scope", nargs="+")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("release", help="release a container into another scope and re-infer")
    _common(p)
    p.add_argument("--container", required=True)
    p.add_argument("--from", dest="from_scope", required=True)
    p.add_argument("--to", dest="to_scope", required=True, help="target scope; created when missing")
    p.add_argument("--with-descendants", action="store_true")
    p.set_defaults(func=cmd_release)

    p = sub.add_parser("cache", help="inspect or delete a cache file")
    p.add_argument("action", choices=("info", "clear"))
    p.add_argument("path")
    p.set_defaults(func=cmd_cache)
    return parser


def main(argv: Optional[Sequence[str]] = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s: %(message)s")
    try:
        return args.func(args, out)
    except _UsageError as exc:
        print(f"polyjur: {exc}", file=sys.stderr)
        return 2
    except PolyjurError as exc:
        print(f"polyjur: error: {exc}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        if out is sys.stdout:
            # keep the interpreter's final flush from failing again
            os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except OSError as exc:
        print(f"polyjur: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
