"""Namespaces and the declarative vocabulary understood by the resolver."""

from __future__ import annotations


class Namespace(str):
    """IRI prefix; attribute access yields the expanded term."""

    def __getattr__(self, name: str) -> str:
        if name.startswith("__"):
            raise AttributeError(name)
        return str(self) + name

    def term(self, name: str) -> str:
        return str(self) + name


RDF = Namespace("http://www.w3.org/1999/02/22-rdf-syntax-ns#")
RDF_TYPE = RDF.type

CM = Namespace("urn:polyjur:core#")
BASE = Namespace("urn:polyjur:base#")
HIPAA = Namespace("urn:polyjur:hipaa#")
GDPR = Namespace("urn:polyjur:gdpr#")
EMA = Namespace("urn:polyjur:ema#")
ITDPA = Namespace("urn:polyjur:italian-dpa#")

SKOLEM_PREFIX = "urn:polyjur:skolem:"

# Used for display when documents declare nothing better.
DEFAULT_PREFIXES: dict[str, str] = {
    "cm": str(CM),
    "b": str(BASE),
    "hipaa": str(HIPAA),
    "gdpr": str(GDPR),
    "ema": str(EMA),
    "itdpa": str(ITDPA),
    "sk": SKOLEM_PREFIX,
    "rdf": str(RDF),
}

BASE_FRAMEWORK = BASE.BaseFramework
KANONYMITY_LABEL = BASE.KAnonymityAnalysis
KANONYMITY_PARAMETER = "minimumCohortSize"

DIRECTIONS = {
    CM.Inward: "child",
    CM.Outward: "parent",
    CM.Peer: "sib",
    CM.Joinable: "joinable",
}

CONDITION_RELATIONS = {
    CM.Self: "id",
    CM.Child: "child",
    CM.Parent: "parent",
    CM.Descendant: "desc",
    CM.Sibling: "sib",
}

COMPARISON_OPERATORS = {
    CM.lessThan: "lessThan",
    CM.lessOrEqual: "lessOrEqual",
    CM.greaterThan: "greaterThan",
    CM.greaterOrEqual: "greaterOrEqual",
    CM.equal: "equal",
}

LOGICAL_OPERATORS = {CM.AND: "AND", CM.OR: "OR"}


def compact(iri: str, prefixes: dict[str, str] | None = None) -> str:
    """Shorten ``iri`` with the longest matching namespace in ``prefixes``."""
    table = prefixes if prefixes is not None else DEFAULT_PREFIXES
    best = None
    for prefix, ns in table.items():
        if ns and iri.startswith(ns) and len(iri) > len(ns):
            if best is None or len(ns) > len(table[best]):
                best = prefix
    if best is None:
        return iri
    return f"{best}:{iri[len(table[best]):]}"


def expand(name: str, prefixes: dict[str, str] | None = None) -> str:
    """Inverse of :func:`compact` for command-line arguments.

    Full IRIs (``<...>`` or anything whose prefix is unknown) pass through.
    """
    if name.startswith("<") and name.endswith(">"):
        return name[1:-1]
    table = prefixes if prefixes is not None else DEFAULT_PREFIXES
    head, sep, tail = name.partition(":")
    if sep and head in table:
        return table[head] + tail
    return name
