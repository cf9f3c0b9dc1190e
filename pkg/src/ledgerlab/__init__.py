"""Replicated append-only ledger simulation and offline consistency checking."""

from .ledger import (
    ACK,
    NACK,
    DuplicateRecordError,
    Ledger,
    Record,
    ValidatedLedger,
    ValidityPredicate,
    account_balance,
    evaluate_predicate,
    filter_valid,
    make_record,
)
from .sim import ConfigError, RunArtifact, Scenario, run, run_consensus, scenario_from_dict
from .verdicts import Verdict

__version__ = "0.1.0"

__all__ = [
    "ACK", "NACK", "DuplicateRecordError", "Ledger", "Record", "ValidatedLedger",
    "ValidityPredicate", "account_balance", "evaluate_predicate", "filter_valid",
    "make_record", "ConfigError", "RunArtifact", "Scenario", "run", "run_consensus",
    "scenario_from_dict", "Verdict", "__version__",
]
