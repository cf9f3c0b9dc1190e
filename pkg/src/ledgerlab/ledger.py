"""Sequential ledger objects.

The plain ledger is an append-only sequence of records read in full by
``get``.  The validated ledger additionally filters every append through a
pluggable validity predicate and answers ``nack`` when the extended sequence
would violate it.  These objects are the reference behaviour that the offline
checkers replay, and each simulated server holds one as its replica state.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping

log = logging.getLogger("ledgerlab.ledger")

ACK = "ack"
NACK = "nack"

PREDICATE_KINDS = ("always_true", "unique_tau", "account_balance")


class DuplicateRecordError(Exception):
    """Appending a record whose id is already present in the sequence.

    This is a programming-contract violation, not a validity failure: the
    replication protocols deduplicate by construction, so a duplicate id
    reaching a ledger means the caller is broken.
    """


@dataclass(frozen=True, eq=False)
class Record:
    """One ledger entry: globally unique id, creating process, payload.

    Identity is the id alone; two records with the same ``rid`` are the same
    record regardless of the other fields.
    """

    rid: str
    creator: int
    payload: str

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Record):
            return NotImplemented
        return self.rid == other.rid

    def __hash__(self) -> int:
        return hash(self.rid)


def make_rid(creator: int, counter: int) -> str:
    """Record ids are (creator, per-creator counter), rendered `creator.counter`."""
    return f"{creator}.{counter}"


def make_record(creator: int, counter: int, payload: str) -> Record:
    return Record(make_rid(creator, counter), creator, payload)


@dataclass(frozen=True)
class ValidityPredicate:
    """Deterministic boolean test over a candidate record sequence.

    ``account_balance`` replays ``deposit:<acct>:<amount>`` /
    ``withdraw:<acct>:<amount>`` payloads against the configured starting
    balances and rejects any sequence that drives an account negative.
    Predicates are re-evaluated on each candidate extension; no prefix
    monotonicity is assumed.
    """

    kind: str
    balances: Mapping[str, int] = field(default_factory=dict)

    def __call__(self, seq: Iterable[Record]) -> bool:
        return evaluate_predicate(self, seq)


ALWAYS_TRUE = ValidityPredicate("always_true")
UNIQUE_RID = ValidityPredicate("unique_tau")


def account_balance(balances: Mapping[str, int]) -> ValidityPredicate:
    return ValidityPredicate("account_balance", dict(balances))


def predicate_from_config(obj: Mapping) -> ValidityPredicate:
    """Build a predicate from its JSON configuration (fail-closed)."""
    if not isinstance(obj, Mapping) or "kind" not in obj:
        raise ValueError("predicate config must be an object with a 'kind'")
    kind = obj["kind"]
    if kind not in PREDICATE_KINDS:
        raise ValueError(f"unknown predicate kind {kind!r}")
    extra = set(obj) - {"kind", "balances"}
    if extra:
        raise ValueError(f"unknown predicate fields: {sorted(extra)}")
    balances = obj.get("balances", {})
    if kind != "account_balance" and balances:
        raise ValueError(f"predicate {kind!r} takes no balances")
    if not all(isinstance(k, str) and isinstance(v, int) and not isinstance(v, bool) and v >= 0
               for k, v in balances.items()):
        raise ValueError("balances must map account names to non-negative integers")
    return ValidityPredicate(kind, dict(balances))


def predicate_to_config(pred: ValidityPredicate) -> dict:
    cfg: dict = {"kind": pred.kind}
    if pred.kind == "account_balance":
        cfg["balances"] = dict(pred.balances)
    return cfg


def _parse_transfer(payload: str):
    """Parse an account-balance payload, or None if it does not fit the grammar."""
    parts = payload.split(":")
    if len(parts) != 3:
        return None
    action, acct, amount = parts
    if action not in ("deposit", "withdraw") or not acct:
        return None
    if not amount.isdigit():  # non-negative integers only
        return None
    return action, acct, int(amount)


def evaluate_predicate(pred: ValidityPredicate, seq: Iterable[Record]) -> bool:
    if pred.kind == "always_true":
        return True
    if pred.kind == "unique_tau":
        seen: set[str] = set()
        for r in seq:
            if r.rid in seen:
                return False
            seen.add(r.rid)
        return True
    if pred.kind == "account_balance":
        balances = dict(pred.balances)
        for r in seq:
            parsed = _parse_transfer(r.payload)
            if parsed is None:
                log.debug("account_balance: unparseable payload %r (record %s)", r.payload, r.rid)
                return False
            action, acct, amount = parsed
            current = balances.get(acct, 0)
            balances[acct] = current + amount if action == "deposit" else current - amount
            if balances[acct] < 0:
                return False
        return True
    raise ValueError(f"unknown predicate kind {pred.kind!r}")


def filter_valid(seq: Iterable[Record], pred: ValidityPredicate) -> tuple[Record, ...]:
    """Keep records left to right, dropping any whose addition would be invalid.

    This is the read-side repair used when invalid records were allowed into
    the underlying sequence: record ``r`` survives iff the predicate accepts
    ``kept-so-far + [r]``.
    """
    kept: list[Record] = []
    for r in seq:
        kept.append(r)
        if not evaluate_predicate(pred, kept):
            kept.pop()
    return tuple(kept)


class Ledger:
    """Append-only record sequence with whole-sequence reads."""

    def __init__(self) -> None:
        self._items: list[Record] = []
        self._rids: set[str] = set()

    def __len__(self) -> int:
        return len(self._items)

    def __contains__(self, r: Record) -> bool:
        return r.rid in self._rids

    def get(self) -> tuple[Record, ...]:
        return tuple(self._items)

    def append(self, r: Record) -> str:
        if r.rid in self._rids:
            raise DuplicateRecordError(f"record id {r.rid} already in ledger")
        self._items.append(r)
        self._rids.add(r.rid)
        return ACK


class ValidatedLedger:
    """Ledger whose appends are admitted only if the extended sequence is valid."""

    def __init__(self, pred: ValidityPredicate) -> None:
        self.pred = pred
        self._items: list[Record] = []
        self._rids: set[str] = set()

    def __len__(self) -> int:
        return len(self._items)

    def get(self) -> tuple[Record, ...]:
        return tuple(self._items)

    def append(self, r: Record) -> str:
        if r.rid in self._rids:
            raise DuplicateRecordError(f"record id {r.rid} already in ledger")
        self._items.append(r)
        if evaluate_predicate(self.pred, self._items):
            self._rids.add(r.rid)
            return ACK
        self._items.pop()
        return NACK
