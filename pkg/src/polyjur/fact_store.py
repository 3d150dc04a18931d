"""Assertion store, content-hash skolemization and the on-disk cache."""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np

from . import _kernels
from .doc_parser import DeclarationGraph
from .errors import CacheError, ScopeVisibilityError, SkolemizationError, StaleCacheError
from .metamodel import (
    ComplianceAssertion,
    ConditionEvaluation,
    ContainmentAssertion,
    Environment,
)
from .terms import BNode, Literal, literal_from_lexical, scalar_kind, lexical_form
from .vocab import SKOLEM_PREFIX

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Skolemization


def canonical_signature(props: Iterable[tuple], nested) -> list:
    """Sorted ``[predicate, canonical-object]`` pairs; ``nested`` maps a BNode to its hash."""

    def canon(o):
        if isinstance(o, BNode):
            return ["b", nested(o)]
        if isinstance(o, Literal):
            return ["l", o.kind, o.lexical]
        if isinstance(o, tuple):
            return ["L", [canon(x) for x in o]]
        return ["i", o]

    pairs = {json.dumps([p, canon(o)], ensure_ascii=False, separators=(",", ":")) for p, o in props}
    return [json.loads(s) for s in sorted(pairs)]


def signature_hash(signature: list) -> str:
    payload = json.dumps(signature, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _bnodes_in(o, out: list) -> None:
    if isinstance(o, BNode):
        out.append(o)
    elif isinstance(o, tuple):
        for x in o:
            _bnodes_in(x, out)


def skolem_ids(graph: DeclarationGraph) -> dict[BNode, str]:
    """Map every anonymous handle in ``graph`` to its content-derived id."""
    outgoing: dict[BNode, list] = {}
    every: list[BNode] = []
    for s, p, o in graph:
        if isinstance(s, BNode):
            outgoing.setdefault(s, []).append((p, o))
            every.append(s)
        _bnodes_in(o, every)

    hashes: dict[BNode, str] = {}
    active: list[BNode] = []

    def visit(b: BNode) -> str:
        if b in hashes:
            return hashes[b]
        if b in active:
            cycle = active[active.index(b):]
            names = [str(x) for x in cycle]
            raise SkolemizationError("cycle among anonymous nodes: " + " -> ".join(names + names[:1]), names)
        active.append(b)
        sig = canonical_signature(outgoing.get(b, ()), visit)
        active.pop()
        hashes[b] = signature_hash(sig)
        return hashes[b]

    for b in every:
        visit(b)
    return {b: SKOLEM_PREFIX + h for b, h in hashes.items()}


def skolemize(graph: DeclarationGraph) -> DeclarationGraph:
    ids = skolem_ids(graph)

    def sub(t):
        if isinstance(t, BNode):
            return ids[t]
        if isinstance(t, tuple):
            return tuple(sub(x) for x in t)
        return t

    out = DeclarationGraph(graph.base, dict(graph.prefixes))
    for s, p, o in graph:
        out.add(sub(s), p, sub(o), graph.location((s, p, o)))
    return out


# ---------------------------------------------------------------------------
# Store


@dataclass(frozen=True)
class Derivation:
    """First recorded way an assertion was produced."""

    family: str
    framework: str
    declared_by: str
    node: str
    premises: tuple = ()  # compliance assertion keys
    containments: tuple = ()  # containment assertion keys
    notes: tuple = ()  # comparison witnesses and similar
    round: int = 0
    condition: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "family": self.family,
            "framework": self.framework,
            "declared_by": self.declared_by,
            "node": self.node,
            "premises": [list(k) for k in self.premises],
            "containments": [list(k) for k in self.containments],
            "notes": list(self.notes),
            "round": self.round,
            "condition": self.condition,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Derivation":
        return cls(
            family=data["family"],
            framework=data["framework"],
            declared_by=data["declared_by"],
            node=data["node"],
            premises=tuple(tuple(k) for k in data["premises"]),
            containments=tuple(tuple(k) for k in data["containments"]),
            notes=tuple(data["notes"]),
            round=data["round"],
            condition=data.get("condition"),
        )


class Store:
    """Assertions, containment facts and condition evaluations over one environment.

    The assertion log is append-only; ``log_position`` lets the engine read
    only what arrived since a watermark.
    """

    def __init__(self, env: Environment, declarations: DeclarationGraph | None = None):
        self.env = env
        self.declarations = declarations if declarations is not None else DeclarationGraph()
        self._assertions: dict[tuple, ComplianceAssertion] = {}
        self._log: list[tuple] = []
        self.containments: dict[tuple, ContainmentAssertion] = {}
        self.containment_sources: dict[tuple, tuple] = {}
        self.evaluations: dict[tuple, ConditionEvaluation] = {}
        self.derivations: dict[tuple, Derivation] = {}
        self.warnings: list[str] = []
        self._labels_any: dict[tuple, set] = {}
        self._labels_fw: dict[tuple, set] = {}
        self._contains: dict[tuple, set] = {}
        self._contains_fw: dict[tuple, set] = {}
        self._by_label: dict[str, set] = {}
        self._by_scope: dict[str, set] = {}
        self._by_framework: dict[str, set] = {}
        self._by_container: dict[str, set] = {}
        self._materialized_upto = 0

    # -- assertions
    def __len__(self) -> int:
        return len(self._assertions)

    def __iter__(self) -> Iterator[ComplianceAssertion]:
        return iter(list(self._assertions.values()))

    def __contains__(self, key) -> bool:
        if isinstance(key, ComplianceAssertion):
            key = key.key
        return tuple(key) in self._assertions

    def get(self, key) -> ComplianceAssertion | None:
        return self._assertions.get(tuple(key))

    @property
    def assertions(self) -> frozenset:
        return frozenset(self._assertions.values())

    def keys(self) -> frozenset:
        return frozenset(self._assertions)

    @property
    def log_position(self) -> int:
        return len(self._log)

    def since(self, position: int) -> list[ComplianceAssertion]:
        return [self._assertions[k] for k in self._log[position:]]

    def insert(self, a: ComplianceAssertion, derivation: Derivation | None = None) -> bool:
        """Add ``a``; True iff its key was new.  See :func:`insert_assertion`."""
        if not self.env.visible(a.container, a.scope):
            raise ScopeVisibilityError(f"container {a.container} is not visible in scope {a.scope}")
        key = a.key
        old = self._assertions.get(key)
        if old is not None:
            merged = self._merge(old, a)
            if merged is not old:
                self._assertions[key] = merged
            return False
        self._assertions[key] = a
        self._log.append(key)
        d, l, g, f = key
        self._labels_any.setdefault((d, g), set()).add(l)
        self._labels_fw.setdefault((d, g, f), set()).add(l)
        self._by_label.setdefault(l, set()).add(key)
        self._by_scope.setdefault(g, set()).add(key)
        self._by_framework.setdefault(f, set()).add(key)
        self._by_container.setdefault(d, set()).add(key)
        if derivation is not None and not a.ground:
            self.derivations.setdefault(key, derivation)
        return True

    def _merge(self, old: ComplianceAssertion, new: ComplianceAssertion) -> ComplianceAssertion:
        params = dict(old.parameters)
        changed = False
        for name, value in new.parameters:
            if name not in params:
                params[name] = value
                changed = True
            elif params[name] != value or scalar_kind(params[name]) != scalar_kind(value):
                msg = (
                    f"conflicting value for parameter {name!r} on {old.key}: "
                    f"keeping {params[name]!r}, ignoring {value!r}"
                )
                log.warning(msg)
                self.warnings.append(msg)
        ground = old.ground or new.ground
        if not changed and ground == old.ground:
            return old
        return ComplianceAssertion(
            old.container, old.label, old.scope, old.framework, ground, tuple(sorted(params.items()))
        )

    # -- lookups
    def labels(self, d: str, g: str, framework: str | None = None) -> frozenset:
        if framework is None:
            return frozenset(self._labels_any.get((d, g), ()))
        return frozenset(self._labels_fw.get((d, g, framework), ()))

    def has_label(self, d: str, l: str, g: str, framework: str | None = None) -> bool:
        if framework is None:
            return l in self._labels_any.get((d, g), ())
        return l in self._labels_fw.get((d, g, framework), ())

    def find(self, d: str, l: str, g: str, framework: str | None = None) -> list[ComplianceAssertion]:
        """Assertions of ``l`` on ``d`` in ``g``, in framework-name order."""
        keys = self._by_container.get(d, set()) & self._by_label.get(l, set())
        out = [self._assertions[k] for k in keys if k[2] == g and (framework is None or k[3] == framework)]
        return sorted(out, key=lambda a: a.key)

    def by_label(self, l: str) -> list[ComplianceAssertion]:
        return [self._assertions[k] for k in sorted(self._by_label.get(l, ()))]

    def by_scope(self, g: str) -> list[ComplianceAssertion]:
        return [self._assertions[k] for k in sorted(self._by_scope.get(g, ()))]

    def by_framework(self, f: str) -> list[ComplianceAssertion]:
        return [self._assertions[k] for k in sorted(self._by_framework.get(f, ()))]

    def by_container(self, d: str) -> list[ComplianceAssertion]:
        return [self._assertions[k] for k in sorted(self._by_container.get(d, ()))]

    def query(self, container=None, label=None, scope=None, framework=None, ground_only=False) -> list[ComplianceAssertion]:
        candidates: set | None = None
        for value, index in (
            (container, self._by_container),
            (label, self._by_label),
            (scope, self._by_scope),
            (framework, self._by_framework),
        ):
            if value is not None:
                keys = index.get(value, set())
                candidates = set(keys) if candidates is None else candidates & keys
        if candidates is None:
            candidates = set(self._assertions)
        out = [self._assertions[k] for k in candidates]
        if ground_only:
            out = [a for a in out if a.ground]
        return sorted(out, key=lambda a: a.key)

    def ground(self) -> list[ComplianceAssertion]:
        return sorted((a for a in self._assertions.values() if a.ground), key=lambda a: a.key)

    def snapshot(self) -> frozenset:
        """Immutable view of the current assertion set."""
        return frozenset(self._assertions.values())

    # -- containment facts
    def insert_containment(self, c: ContainmentAssertion, source: tuple | None = None) -> bool:
        key = c.key
        if key in self.containments:
            if c.ground and not self.containments[key].ground:
                self.containments[key] = c
            return False
        self.containments[key] = c
        d, l, g = key
        self._contains.setdefault((d, g), set()).add(l)
        if source is not None:
            self.containment_sources[key] = tuple(source)
            self._contains_fw.setdefault((d, g, source[3]), set()).add(l)
        return True

    def contains(self, d: str, l: str, g: str, framework: str | None = None) -> bool:
        if framework is None:
            return l in self._contains.get((d, g), ())
        if l in self._contains_fw.get((d, g, framework), ()):
            return True
        c = self.containments.get((d, l, g))
        return c is not None and c.ground

    def containment_witness(self, d: str, l: str, g: str, framework: str | None = None) -> tuple | None:
        """An assertion on a strict descendant that accounts for ``contains(d, l, g)``."""
        src = self.containment_sources.get((d, l, g))
        if framework is None or src is None or src[3] == framework:
            return src
        for x in self.env.descendants(d):
            if self.has_label(x, l, g, framework):
                return (x, l, g, framework)
        return None

    # -- condition evaluations
    def record_evaluation(self, ev: ConditionEvaluation) -> None:
        old = self.evaluations.get(ev.key)
        if old is None or (ev.result and not old.result):
            self.evaluations[ev.key] = ev
        elif old.result and ev.result and ev.satisfied_count is not None:
            # true stays true; refresh the count if it grew
            if (old.satisfied_count or 0) < ev.satisfied_count:
                self.evaluations[ev.key] = ev

    def evaluation(self, condition: str, d: str, g: str, framework: str | None = None) -> ConditionEvaluation | None:
        return self.evaluations.get((condition, d, g, framework))


def insert_assertion(store: Store, a: ComplianceAssertion) -> bool:
    """True iff ``a`` was new.  A duplicate key merges parameters, first value wins."""
    return store.insert(a)


def materialize_containment(store: Store) -> int:
    """Add containment facts for assertions logged since the last call."""
    env = store.env
    fresh = store.since(store._materialized_upto)
    store._materialized_upto = store.log_position
    if not fresh:
        return 0
    nodes = np.fromiter((env.index[a.container] for a in fresh), dtype=np.int64, count=len(fresh))
    rows, ancestors = _kernels.ancestor_pairs(env.parent_array, nodes)
    added = 0
    ids = env.container_ids
    for r, anc in zip(rows.tolist(), ancestors.tolist()):
        a = fresh[r]
        d = ids[anc]
        if env.visible(d, a.scope):
            if store.insert_containment(ContainmentAssertion(d, a.label, a.scope), source=a.key):
                added += 1
            store._contains_fw.setdefault((d, a.scope, a.framework), set()).add(a.label)
    return added


# ---------------------------------------------------------------------------
# Cache

CACHE_MAGIC = b"PLYJCACH"
CACHE_VERSION = 1
_HEADER = struct.Struct(">8sH32s")
_RECORD = struct.Struct(">cI")


def hash_inputs(paths: Iterable[str | Path], extra: bytes = b"") -> bytes:
    """SHA-256 over every input document (path-sorted, name and bytes)."""
    h = hashlib.sha256()
    for p in sorted(Path(x) for x in paths):
        h.update(p.name.encode("utf-8") + b"\0")
        data = p.read_bytes()
        h.update(struct.pack(">Q", len(data)))
        h.update(data)
    h.update(extra)
    return h.digest()


def _encode_params(params) -> list:
    return [[n, scalar_kind(v), lexical_form(v, scalar_kind(v))] for n, v in params]


def _decode_params(data) -> tuple:
    return tuple((n, literal_from_lexical(k, lex).value) for n, k, lex in data)


def save_cache(store: Store, path: str | Path, input_hash: bytes, meta: dict | None = None) -> None:
    if len(input_hash) != 32:
        raise CacheError("input hash must be a 32-byte SHA-256 digest")
    records: list[tuple[bytes, object]] = [(b"E", store.env.to_dict())]
    for a in store._assertions.values():
        records.append((b"A", [a.container, a.label, a.scope, a.framework, a.ground, _encode_params(a.parameters)]))
    for key, c in store.containments.items():
        records.append((b"C", [c.container, c.label, c.scope, c.ground, store.containment_sources.get(key)]))
    for ev in store.evaluations.values():
        records.append((b"V", [ev.condition, ev.container, ev.scope, ev.result, ev.framework, ev.satisfied_count, ev.total_count]))
    for key, der in store.derivations.items():
        records.append((b"D", [list(key), der.to_json()]))
    records.append((b"M", meta or {}))
    body = bytearray()
    for tag, payload in records:
        blob = json.dumps(payload, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
        body += _RECORD.pack(tag, len(blob)) + blob
    checksum = hashlib.sha256(bytes(body)).hexdigest().encode("ascii")
    body += _RECORD.pack(b"Z", len(checksum)) + checksum
    Path(path).write_bytes(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, input_hash) + bytes(body))


def load_cache(path: str | Path, input_hash: bytes | None = None) -> tuple[Store, dict]:
    """Read a cache written by :func:`save_cache`; returns ``(store, meta)``."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CacheError(f"cannot read cache {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise CacheError(f"{path}: truncated cache header")
    magic, version, stored_hash = _HEADER.unpack_from(raw)
    if magic != CACHE_MAGIC:
        raise CacheError(f"{path}: not a cache file")
    if version != CACHE_VERSION:
        raise CacheError(f"{path}: cache format version {version}, expected {CACHE_VERSION}")
    if input_hash is not None and stored_hash != input_hash:
        raise StaleCacheError(f"{path}: inputs changed since the cache was written")

    pos = _HEADER.size
    records: list[tuple[bytes, object]] = []
    checksum_ok = False
    while pos < len(raw):
        if pos + _RECORD.size > len(raw):
            raise CacheError(f"{path}: truncated record header at byte {pos}")
        tag, length = _RECORD.unpack_from(raw, pos)
        start = pos + _RECORD.size
        blob = raw[start:start + length]
        if len(blob) != length:
            raise CacheError(f"{path}: truncated record at byte {pos}")
        if tag == b"Z":
            expected = hashlib.sha256(raw[_HEADER.size:pos]).hexdigest().encode("ascii")
            if blob != expected:
                raise CacheError(f"{path}: checksum mismatch")
            checksum_ok = start + length == len(raw)
            pos = start + length
            break
        try:
            records.append((tag, json.loads(blob.decode("utf-8"))))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CacheError(f"{path}: corrupt record at byte {pos}") from exc
        pos = start + length
    if not checksum_ok:
        raise CacheError(f"{path}: missing or misplaced checksum")

    try:
        env_data = next(p for t, p in records if t == b"E")
        store = Store(Environment.from_dict(env_data))
        meta: dict = {}
        for tag, p in records:
            if tag == b"A":
                d, l, g, f, ground, params = p
                store.insert(ComplianceAssertion(d, l, g, f, ground, _decode_params(params)))
            elif tag == b"C":
                d, l, g, ground, source = p
                store.insert_containment(ContainmentAssertion(d, l, g, ground), source=source)
            elif tag == b"V":
                store.record_evaluation(ConditionEvaluation(*p))
            elif tag == b"D":
                store.derivations[tuple(p[0])] = Derivation.from_json(p[1])
            elif tag == b"M":
                meta = p
            elif tag != b"E":
                raise CacheError(f"{path}: unknown record type {tag!r}")
    except CacheError:
        raise
    except (StopIteration, KeyError, TypeError, ValueError) as exc:
        raise CacheError(f"{path}: malformed cache content ({exc})") from exc
    # only the first source per containment fact is stored; rebuild the
    # per-framework containment index from the assertions themselves
    materialize_containment(store)
    return store, meta
