"""Turtle-subset reader/writer, framework manifests and dependency ordering.

The accepted grammar is a deliberate subset of Turtle: ``@prefix``/``PREFIX``,
``@base``/``BASE``, prefixed names, ``<iri>`` references, ``a``, anonymous
``[ ... ]`` nodes, ``_:label`` nodes (document-local), ``( ... )`` collections,
string / integer / decimal / boolean literals, ``,`` object lists and ``;``
predicate lists.  Datatype tags and language tags are rejected.
"""

from __future__ import annotations

import heapq
import itertools
import re
import sys
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Iterable, Iterator
from urllib.parse import urljoin

from .errors import DependencyError, ManifestError, ParseError
from .terms import BNode, Literal
from .vocab import RDF_TYPE

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

Triple = tuple  # (subject, predicate, object)
Location = tuple  # (source, line, column)


@dataclass
class DeclarationGraph:
    """Set of triples from one document (or a merge of several).

    Triple order is first-insertion order; duplicates collapse.
    """

    base: str = ""
    prefixes: dict[str, str] = field(default_factory=dict)
    _triples: dict = field(default_factory=dict, repr=False)
    _index: dict | None = field(default=None, repr=False)

    def add(self, s, p, o, location: Location | None = None) -> None:
        key = (s, p, o)
        if key not in self._triples:
            self._triples[key] = location
            self._index = None

    @property
    def triples(self) -> list[Triple]:
        return list(self._triples)

    def __len__(self) -> int:
        return len(self._triples)

    def __iter__(self) -> Iterator[Triple]:
        return iter(list(self._triples))

    def __contains__(self, triple) -> bool:
        return tuple(triple) in self._triples

    def location(self, triple) -> Location | None:
        return self._triples.get(tuple(triple))

    @property
    def nodes(self) -> set:
        out: set = set()
        for s, _, o in self._triples:
            out.add(s)
            _collect_nodes(o, out)
        return out

    def _by_subject(self) -> dict:
        if self._index is None:
            idx: dict = {}
            for s, p, o in self._triples:
                idx.setdefault(s, {}).setdefault(p, []).append(o)
            self._index = idx
        return self._index

    def properties(self, s) -> dict:
        return self._by_subject().get(s, {})

    def objects(self, s, p) -> list:
        return list(self._by_subject().get(s, {}).get(p, ()))

    def value(self, s, p, default=None):
        objs = self.objects(s, p)
        return objs[0] if objs else default

    def subjects(self, p, o=None) -> list:
        out = []
        for s, props in self._by_subject().items():
            objs = props.get(p)
            if objs and (o is None or o in objs):
                out.append(s)
        return out

    def typed(self, rdf_class: str) -> list:
        return self.subjects(RDF_TYPE, rdf_class)

    def has_type(self, s, rdf_class: str) -> bool:
        return rdf_class in self.objects(s, RDF_TYPE)

    def copy(self) -> "DeclarationGraph":
        g = DeclarationGraph(self.base, dict(self.prefixes))
        g._triples = dict(self._triples)
        return g

    def merge(self, other: "DeclarationGraph") -> "DeclarationGraph":
        g = self.copy()
        for prefix, ns in other.prefixes.items():
            g.prefixes.setdefault(prefix, ns)
        for t, loc in other._triples.items():
            if t not in g._triples:
                g._triples[t] = loc
        g._index = None
        return g


def _collect_nodes(o, out: set) -> None:
    if isinstance(o, tuple):
        for item in o:
            _collect_nodes(item, out)
    elif isinstance(o, (str, BNode)):
        out.add(o)


# --------------------------------------------------------------------------
# Lexer

_LOCAL = r"[A-Za-z0-9_:%\-]+(?:\.[A-Za-z0-9_:%\-]+)*"
_TOKEN_RES = [
    ("IRI", re.compile(r"<([^<>\"{}|^`\\\s]*)>")),
    ("LONGSTRING", re.compile(r'"""((?:[^"\\]|\\.|"(?!""))*)"""', re.S)),
    ("LONGSTRING", re.compile(r"'''((?:[^'\\]|\\.|'(?!''))*)'''", re.S)),
    ("STRING", re.compile(r'"((?:[^"\\\n]|\\.)*)"')),
    ("STRING", re.compile(r"'((?:[^'\\\n]|\\.)*)'")),
    ("BLANK", re.compile(r"_:([A-Za-z0-9_][A-Za-z0-9_\-]*(?:\.[A-Za-z0-9_\-]+)*)")),
    ("NUMBER", re.compile(r"[+-]?(?:\d*\.\d+(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+|\d+)")),
    ("PNAME", re.compile(r"([A-Za-z][A-Za-z0-9_\-]*)?:(" + _LOCAL + r")?")),
    ("DIRECTIVE", re.compile(r"@(prefix|base)\b")),
    ("LANGTAG", re.compile(r"@[A-Za-z]+")),
    ("WORD", re.compile(r"[A-Za-z][A-Za-z0-9_]*")),
    ("DTYPE", re.compile(r"\^\^")),
    ("PUNCT", re.compile(r"[.;,\[\]()]")),
]
_ESCAPES = {"t": "\t", "n": "\n", "r": "\r", "b": "\b", "f": "\f", '"': '"', "'": "'", "\\": "\\"}


@dataclass
class _Token:
    kind: str
    text: str
    groups: tuple
    line: int
    col: int


def _unescape(raw: str, source: str, line: int, col: int) -> str:
    out = []
    i = 0
    while i < len(raw):
        ch = raw[i]
        if ch != "\\":
            out.append(ch)
            i += 1
            continue
        nxt = raw[i + 1] if i + 1 < len(raw) else ""
        if nxt in _ESCAPES:
            out.append(_ESCAPES[nxt])
            i += 2
        elif nxt in ("u", "U"):
            width = 4 if nxt == "u" else 8
            hexpart = raw[i + 2:i + 2 + width]
            if len(hexpart) != width or not re.fullmatch(r"[0-9A-Fa-f]+", hexpart):
                raise ParseError("malformed literal: bad unicode escape", source, line, col)
            out.append(chr(int(hexpart, 16)))
            i += 2 + width
        else:
            raise ParseError(f"malformed literal: unknown escape \\{nxt}", source, line, col)
    return "".join(out)


def tokenize(text: str, source: str = "<string>") -> list[_Token]:
    tokens: list[_Token] = []
    pos, line, line_start = 0, 1, 0
    n = len(text)
    while pos < n:
        ch = text[pos]
        if ch == "\n":
            pos += 1
            line += 1
            line_start = pos
            continue
        if ch in " \t\r\ufeff":
            pos += 1
            continue
        if ch == "#":
            end = text.find("\n", pos)
            pos = n if end < 0 else end
            continue
        col = pos - line_start + 1
        for kind, rx in _TOKEN_RES:
            m = rx.match(text, pos)
            if m and m.end() > pos:
                break
        else:
            raise ParseError(f"unexpected character {ch!r}", source, line, col)
        tok_text = m.group(0)
        tokens.append(_Token(kind, tok_text, m.groups(), line, col))
        newlines = tok_text.count("\n")
        if newlines:
            line += newlines
            line_start = pos + tok_text.rfind("\n") + 1
        pos = m.end()
    tokens.append(_Token("EOF", "", (), line, pos - line_start + 1))
    return tokens


# --------------------------------------------------------------------------
# Parser


_DOCUMENT_IDS = itertools.count(1)


class _Parser:
    def __init__(self, text: str, base: str, source: str | None = None):
        self.source = source or base
        self.base = base
        self.tokens = tokenize(text, self.source)
        self.i = 0
        self.graph = DeclarationGraph(base=base)
        self.prefixes: dict[str, str] = {}
        self.labels: dict[str, BNode] = {}
        self.anon = 0
        # handles must not clash when two documents share a base
        self.doc = next(_DOCUMENT_IDS)

    # -- helpers
    def peek(self) -> _Token:
        return self.tokens[self.i]

    def next(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, msg: str, tok: _Token | None = None) -> ParseError:
        tok = tok or self.peek()
        return ParseError(msg, self.source, tok.line, tok.col)

    def expect_punct(self, ch: str) -> _Token:
        tok = self.next()
        if tok.kind != "PUNCT" or tok.text != ch:
            got = tok.text or "end of input"
            raise self.error(f"expected '{ch}' but found {got!r}", tok)
        return tok

    def at_punct(self, ch: str) -> bool:
        tok = self.peek()
        return tok.kind == "PUNCT" and tok.text == ch

    def fresh(self) -> BNode:
        self.anon += 1
        return BNode(f"{self.base}#{self.doc}.anon{self.anon}")

    # -- grammar
    def parse(self) -> DeclarationGraph:
        while self.peek().kind != "EOF":
            self.statement()
        self.graph.prefixes = dict(self.prefixes)
        return self.graph

    def statement(self) -> None:
        tok = self.peek()
        if tok.kind == "DIRECTIVE":
            self.next()
            if tok.groups[0] == "prefix":
                self.prefix_decl()
            else:
                self.base_decl()
            self.expect_punct(".")
            return
        if tok.kind == "WORD" and tok.text.upper() in ("PREFIX", "BASE"):
            self.next()
            if tok.text.upper() == "PREFIX":
                self.prefix_decl()
            else:
                self.base_decl()
            return
        self.triples()
        self.expect_punct(".")

    def prefix_decl(self) -> None:
        tok = self.next()
        if tok.kind != "PNAME" or tok.groups[1]:
            raise self.error("expected a prefix name like 'ex:'", tok)
        iri_tok = self.next()
        if iri_tok.kind != "IRI":
            raise self.error("expected <iri> after prefix name", iri_tok)
        self.prefixes[tok.groups[0] or ""] = self.resolve(iri_tok.groups[0])

    def base_decl(self) -> None:
        tok = self.next()
        if tok.kind != "IRI":
            raise self.error("expected <iri> after base directive", tok)
        self.base = self.resolve(tok.groups[0])

    def resolve(self, iri: str) -> str:
        if re.match(r"^[A-Za-z][A-Za-z0-9+.\-]*:", iri):
            return iri
        return urljoin(self.base, iri)

    def triples(self) -> None:
        tok = self.peek()
        if tok.kind == "PUNCT" and tok.text == "[":
            subject = self.blank_property_list()
            if not self.at_punct("."):
                self.predicate_object_list(subject)
            return
        if tok.kind == "PUNCT" and tok.text == "(":
            raise self.error("collections are not supported in subject position")
        subject = self.subject()
        self.predicate_object_list(subject)

    def subject(self):
        tok = self.next()
        if tok.kind == "IRI":
            return self.resolve(tok.groups[0])
        if tok.kind == "PNAME":
            return self.pname(tok)
        if tok.kind == "BLANK":
            return self.blank_label(tok)
        raise self.error(f"expected a subject but found {tok.text or 'end of input'!r}", tok)

    def pname(self, tok: _Token) -> str:
        prefix, local = tok.groups[0] or "", tok.groups[1] or ""
        if prefix not in self.prefixes:
            raise self.error(f"undefined prefix '{prefix}:'", tok)
        return self.prefixes[prefix] + local

    def blank_label(self, tok: _Token) -> BNode:
        name = tok.groups[0]
        if name not in self.labels:
            self.labels[name] = BNode(f"{self.base}#{self.doc}.{name}")
        return self.labels[name]

    def predicate_object_list(self, subject) -> None:
        while True:
            pred_tok = self.peek()
            predicate = self.verb()
            self.object_list(subject, predicate, pred_tok)
            if not self.at_punct(";"):
                return
            while self.at_punct(";"):
                self.next()
            tok = self.peek()
            if tok.kind == "PUNCT" and tok.text in ".]":
                return

    def verb(self) -> str:
        tok = self.next()
        if tok.kind == "WORD" and tok.text == "a":
            return RDF_TYPE
        if tok.kind == "IRI":
            return self.resolve(tok.groups[0])
        if tok.kind == "PNAME":
            return self.pname(tok)
        raise self.error(f"expected a predicate but found {tok.text or 'end of input'!r}", tok)

    def object_list(self, subject, predicate, pred_tok: _Token) -> None:
        while True:
            obj = self.object()
            self.graph.add(subject, predicate, obj, (self.source, pred_tok.line, pred_tok.col))
            if not self.at_punct(","):
                return
            self.next()

    def object(self):
        tok = self.peek()
        if tok.kind == "PUNCT" and tok.text == "[":
            return self.blank_property_list()
        if tok.kind == "PUNCT" and tok.text == "(":
            return self.collection()
        self.next()
        if tok.kind == "IRI":
            return self.resolve(tok.groups[0])
        if tok.kind == "PNAME":
            return self.pname(tok)
        if tok.kind == "BLANK":
            return self.blank_label(tok)
        if tok.kind in ("STRING", "LONGSTRING"):
            value = _unescape(tok.groups[0], self.source, tok.line, tok.col)
            nxt = self.peek()
            if nxt.kind == "DTYPE":
                raise self.error("datatype tags (^^) are not supported", nxt)
            if nxt.kind in ("LANGTAG", "DIRECTIVE"):
                raise self.error("language tags are not supported", nxt)
            return Literal(value, "string")
        if tok.kind == "NUMBER":
            text = tok.text
            if re.fullmatch(r"[+-]?\d+", text):
                return Literal(int(text), "integer")
            try:
                return Literal(Decimal(text), "decimal")
            except Exception as exc:  # pragma: no cover - regex guards this
                raise self.error(f"malformed literal {text!r}", tok) from exc
        if tok.kind == "WORD" and tok.text in ("true", "false"):
            return Literal(tok.text == "true", "boolean")
        raise self.error(f"expected an object but found {tok.text or 'end of input'!r}", tok)

    def blank_property_list(self) -> BNode:
        self.expect_punct("[")
        node = self.fresh()
        if self.at_punct("]"):
            self.next()
            return node
        self.predicate_object_list(node)
        self.expect_punct("]")
        return node

    def collection(self) -> tuple:
        open_tok = self.expect_punct("(")
        items = []
        while not self.at_punct(")"):
            if self.peek().kind == "EOF":
                raise self.error("unterminated collection", open_tok)
            items.append(self.object())
        self.next()
        return tuple(items)


def parse_document(text: str, base: str = "urn:polyjur:doc", source: str | None = None) -> DeclarationGraph:
    """Parse one document.  Error locations name ``source``, defaulting to ``base``."""
    return _Parser(text, base, source).parse()


def parse_file(path: str | Path) -> DeclarationGraph:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"not UTF-8: {exc}", str(p), 1, 1) from exc
    return parse_document(text, base=p.resolve().as_uri(), source=str(p))


# --------------------------------------------------------------------------
# Serializer (used for round-trips and for dumping skolemized stores)

_LOCAL_OK = re.compile(r"^" + _LOCAL + r"$")


def _term_text(t, prefixes: dict[str, str], bnames: dict) -> str:
    if isinstance(t, BNode):
        if t not in bnames:
            bnames[t] = f"b{len(bnames)}"
        return f"_:{bnames[t]}"
    if isinstance(t, Literal):
        if t.kind == "string":
            esc = t.value.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\r", "\\r")
            return f'"{esc}"'
        if t.kind == "decimal":
            lex = t.lexical
            return lex if "." in lex else lex + ".0"
        return t.lexical
    if isinstance(t, tuple):
        return "( " + " ".join(_term_text(x, prefixes, bnames) for x in t) + " )"
    for prefix, ns in sorted(prefixes.items(), key=lambda kv: -len(kv[1])):
        if ns and t.startswith(ns) and _LOCAL_OK.match(t[len(ns):]):
            return f"{prefix}:{t[len(ns):]}"
    return f"<{t}>"


def serialize_document(graph: DeclarationGraph | Iterable[Triple], prefixes: dict[str, str] | None = None) -> str:
    if prefixes is None:
        prefixes = dict(graph.prefixes) if isinstance(graph, DeclarationGraph) else {}
    lines = [f"@prefix {p}: <{ns}> ." for p, ns in sorted(prefixes.items())]
    bnames: dict = {}
    for s, p, o in graph:
        lines.append(
            f"{_term_text(s, prefixes, bnames)} {_term_text(p, prefixes, bnames)} {_term_text(o, prefixes, bnames)} ."
        )
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Manifests

FRAMEWORK_KINDS = ("internal", "core", "privacy", "custom")


@dataclass(frozen=True)
class Manifest:
    name: str
    kind: str
    dependencies: tuple[str, ...] = ()
    model_files: tuple[str, ...] = ()
    construct_files: tuple[str, ...] = ()
    iri: str | None = None
    description: str = ""
    root: str | None = None  # directory holding framework.toml, if loaded from disk

    def model_paths(self) -> list[Path]:
        root = Path(self.root) if self.root else Path(".")
        if self.model_files:
            return [root / f for f in self.model_files]
        return sorted((root / "model").glob("*.ttl"))


def parse_manifest(text: str, source: str = "framework.toml", root: str | None = None) -> Manifest:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ManifestError(f"{source}: {exc}") from exc
    # Accept either a flat layout or everything under a [framework] table.
    if isinstance(data.get("framework"), dict):
        data = {**data, **data["framework"]}
    name = data.get("name")
    if not isinstance(name, str) or not name:
        raise ManifestError(f"{source}: missing framework name")
    kind = data.get("kind", data.get("type"))
    if kind not in FRAMEWORK_KINDS:
        raise ManifestError(f"{source}: unknown framework kind {kind!r} (expected one of {', '.join(FRAMEWORK_KINDS)})")

    def str_list(key: str) -> tuple[str, ...]:
        value = data.get(key, [])
        if isinstance(value, str):
            value = [value]
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ManifestError(f"{source}: '{key}' must be a list of strings")
        return tuple(value)

    iri = data.get("iri")
    if iri is not None and not isinstance(iri, str):
        raise ManifestError(f"{source}: 'iri' must be a string")
    return Manifest(
        name=name,
        kind=kind,
        dependencies=str_list("dependencies"),
        model_files=str_list("models"),
        construct_files=str_list("constructs"),
        iri=iri,
        description=str(data.get("description", "")),
        root=root,
    )


def read_manifest(path: str | Path) -> Manifest:
    p = Path(path)
    return parse_manifest(p.read_text(encoding="utf-8"), source=str(p), root=str(p.parent))


def discover_manifests(directories: Iterable[str | Path]) -> dict[str, Manifest]:
    """Find ``<dir>/<name>/framework.toml``; earlier directories win on name clashes."""
    found: dict[str, Manifest] = {}
    for directory in directories:
        for path in sorted(Path(directory).glob("*/framework.toml")):
            m = read_manifest(path)
            found.setdefault(m.name, m)
    return found


def topo_order(manifests: Iterable[Manifest]) -> list[str]:
    """Dependencies first; ties broken by kind (internal < core < privacy < custom) then name."""
    by_name = {m.name: m for m in manifests}
    for m in by_name.values():
        for dep in m.dependencies:
            if dep not in by_name:
                raise DependencyError(f"framework '{m.name}' depends on unknown framework '{dep}'")
    indegree = {name: len(set(m.dependencies)) for name, m in by_name.items()}
    dependents: dict[str, list[str]] = {name: [] for name in by_name}
    for m in by_name.values():
        for dep in set(m.dependencies):
            dependents[dep].append(m.name)

    def key(name: str):
        return (FRAMEWORK_KINDS.index(by_name[name].kind), name)

    heap = [key(n) for n, deg in indegree.items() if deg == 0]
    heapq.heapify(heap)
    order: list[str] = []
    while heap:
        _, name = heapq.heappop(heap)
        order.append(name)
        for child in dependents[name]:
            indegree[child] -= 1
            if indegree[child] == 0:
                heapq.heappush(heap, key(child))
    if len(order) != len(by_name):
        remaining = {n for n in by_name if n not in order}
        cycle = _find_cycle({n: [d for d in by_name[n].dependencies if d in remaining] for n in remaining})
        raise DependencyError(f"dependency cycle: {' -> '.join(cycle + cycle[:1])}", cycle)
    return order


def _find_cycle(edges: dict[str, list[str]]) -> list[str]:
    """Return one cycle (as a node list) from a graph known to contain one."""
    state: dict[str, int] = {}
    stack: list[str] = []

    def visit(node: str) -> list[str] | None:
        state[node] = 1
        stack.append(node)
        for nxt in sorted(edges.get(node, ())):
            if state.get(nxt) == 1:
                return stack[stack.index(nxt):]
            if nxt not in state:
                found = visit(nxt)
                if found:
                    return found
        stack.pop()
        state[node] = 2
        return None

    for start in sorted(edges):
        if start not in state:
            found = visit(start)
            if found:
                return found
    return sorted(edges)
