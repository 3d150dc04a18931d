"""RDF-ish terms: IRIs are plain ``str``; anonymous nodes, literals and lists are below."""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from typing import Union

LITERAL_KINDS = ("string", "integer", "decimal", "boolean")


@dataclass(frozen=True, order=True)
class BNode:
    """Document-local anonymous node handle (``[...]`` or ``_:label``)."""

    id: str

    def __str__(self) -> str:
        return f"_:{self.id}"


@dataclass(frozen=True)
class Literal:
    value: Union[str, int, Decimal, bool]
    kind: str

    def __post_init__(self):
        if self.kind not in LITERAL_KINDS:
            raise ValueError(f"unknown literal kind {self.kind!r}")

    @property
    def lexical(self) -> str:
        return lexical_form(self.value, self.kind)

    def __str__(self) -> str:
        return self.lexical


# A list object is a plain tuple of terms, order preserved.
Term = Union[str, BNode, Literal, tuple]


def lexical_form(value, kind: str) -> str:
    if kind == "boolean":
        return "true" if value else "false"
    if kind == "integer":
        return str(int(value))
    if kind == "decimal":
        d = Decimal(value).normalize()
        text = format(d, "f")
        return text
    return str(value)


def literal_from_lexical(kind: str, lexical: str) -> Literal:
    if kind == "boolean":
        return Literal(lexical == "true", kind)
    if kind == "integer":
        return Literal(int(lexical), kind)
    if kind == "decimal":
        return Literal(Decimal(lexical), kind)
    return Literal(lexical, kind)


def scalar_kind(value) -> str:
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, int):
        return "integer"
    if isinstance(value, (Decimal, float)):
        return "decimal"
    return "string"


def to_literal(value) -> Literal:
    """Wrap a python scalar; floats become decimals via their repr."""
    if isinstance(value, Literal):
        return value
    kind = scalar_kind(value)
    if isinstance(value, float):
        try:
            value = Decimal(repr(value))
        except InvalidOperation as exc:  # nan/inf
            raise ValueError(f"cannot represent {value!r} as a decimal literal") from exc
    return Literal(value, kind)
