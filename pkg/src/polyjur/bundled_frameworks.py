"""The shipped framework bundles, addressable by short names."""

from __future__ import annotations

from functools import lru_cache

from .errors import InputError
from .framework_resolver import Model
from .metamodel import Framework, Rule
from .pipeline import BUNDLE_DIR, load_frameworks

BUNDLES = {
    "Base": "base",
    "HIPAA": "hipaa",
    "HIPAASafeHarbor": "hipaa-safe-harbor",
    "HIPAAExpertDetermination": "hipaa-expert-determination",
    "GDPR": "gdpr",
    "EMA": "ema",
    "ItalianDPA": "italian-dpa",
}


def bundle_name(name: str) -> str:
    if name in BUNDLES.values() or name == "metamodel":
        return name
    if name in BUNDLES:
        return BUNDLES[name]
    raise InputError(f"unknown bundle {name!r}; choose from {', '.join(BUNDLES)}")


@lru_cache(maxsize=None)
def bundle_model(*names: str) -> Model:
    """Resolved model over the named bundles and their dependencies (all bundles if none named)."""
    selected = [bundle_name(n) for n in names] or None
    return load_frameworks(selected).model


def load_bundle(name: str) -> Framework:
    key = bundle_name(name)
    model = bundle_model(key)
    for iri, n in model.names.items():
        if n == key:
            return model.frameworks[iri]
    raise InputError(f"bundle {name!r} declares no framework")


def effective_rules(name: str) -> tuple[Rule, ...]:
    key = bundle_name(name)
    model = bundle_model(key)
    return model.effective[load_bundle(name).id]


def bundle_directory(name: str):
    return BUNDLE_DIR / bundle_name(name)
