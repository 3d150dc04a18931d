"""Multi-framework compliance classification of data containers."""

from .errors import PolyjurError
from .inference_engine import explain, release, run_to_fixed_point, saturate
from .metamodel import ComplianceAssertion, ContainmentAssertion, Environment
from .pipeline import Outcome, load_environment, load_frameworks, run, validate

__version__ = "0.1.0"

__all__ = [
    "ComplianceAssertion",
    "ContainmentAssertion",
    "Environment",
    "Outcome",
    "PolyjurError",
    "explain",
    "load_environment",
    "load_frameworks",
    "release",
    "run",
    "run_to_fixed_point",
    "saturate",
    "validate",
]
