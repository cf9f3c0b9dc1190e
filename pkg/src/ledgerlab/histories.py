"""Operation histories: the invocation/response log captured by the simulator.

A history is an ordered sequence of events; the order of the list is the
real-time order.  Events serialize to JSONL with a fixed field layout:

    {"op":"<id>","client":<int>,"ev":"invoke"|"response","kind":"get"|"append",
     "c":<int>,"t":<int>,"payload":"<str>"?,"result":"ack"|"nack"?,"seq":["<rid>",...]?}

Appends carry their payload on the invoke and their ack/nack on the response;
gets carry the returned record-id sequence on the response.  The record id of
an append is derived as `<client>.<c>`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .ledger import make_rid

INVOKE = "invoke"
RESPONSE = "response"
GET = "get"
APPEND = "append"


@dataclass(frozen=True)
class HistoryEvent:
    op_id: str
    client: int
    ev: str  # invoke | response
    kind: str  # get | append
    c: int
    t: int
    payload: str | None = None
    result: str | None = None
    seq: tuple[str, ...] | None = None


def event_to_json(e: HistoryEvent) -> str:
    obj: dict = {"op": e.op_id, "client": e.client, "ev": e.ev, "kind": e.kind,
                 "c": e.c, "t": e.t}
    if e.payload is not None:
        obj["payload"] = e.payload
    if e.result is not None:
        obj["result"] = e.result
    if e.seq is not None:
        obj["seq"] = list(e.seq)
    return json.dumps(obj, separators=(",", ":"))


def events_to_jsonl(events: Iterable[HistoryEvent]) -> str:
    lines = [event_to_json(e) for e in events]
    return "\n".join(lines) + ("\n" if lines else "")


def events_from_jsonl(text: str) -> list[HistoryEvent]:
    events = []
    for line in text.splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        seq = obj.get("seq")
        events.append(HistoryEvent(
            op_id=obj["op"], client=obj["client"], ev=obj["ev"], kind=obj["kind"],
            c=obj["c"], t=obj["t"], payload=obj.get("payload"),
            result=obj.get("result"), seq=tuple(seq) if seq is not None else None,
        ))
    return events


class HistoryRecorder:
    """Appends events in execution order; the simulator supplies the clock."""

    def __init__(self, now) -> None:
        self._now = now
        self.events: list[HistoryEvent] = []

    def invoke(self, op_id: str, client: int, kind: str, c: int,
               payload: str | None = None) -> None:
        self.events.append(HistoryEvent(op_id, client, INVOKE, kind, c, self._now(),
                                        payload=payload))

    def respond(self, op_id: str, client: int, kind: str, c: int,
                result: str | None = None, seq: tuple[str, ...] | None = None) -> None:
        self.events.append(HistoryEvent(op_id, client, RESPONSE, kind, c, self._now(),
                                        result=result, seq=seq))


@dataclass(frozen=True)
class Op:
    """One operation reconstructed from its invoke/response event pair.

    ``invoke_i``/``response_i`` are positions in the history's event list and
    define real-time precedence: a precedes b iff a.response_i < b.invoke_i.
    Incomplete operations have ``response_i`` = +inf.
    """

    op_id: str
    client: int
    kind: str
    c: int
    invoke_i: int
    invoke_t: int
    response_i: float = math.inf
    response_t: int | None = None
    payload: str | None = None
    rid: str | None = None  # record id minted by an append
    result: str | None = None
    seq: tuple[str, ...] | None = None

    def precedes(self, other: "Op") -> bool:
        return self.response_i < other.invoke_i


def pair_events(events: Sequence[HistoryEvent]) -> tuple[list[Op], list[Op]]:
    """Match invokes with responses; returns (completed ops, pending ops).

    Raises ValueError on malformed histories (response without invoke,
    duplicate events for one op id, or a client with two operations in
    flight at once).
    """
    open_ops: dict[str, tuple[int, HistoryEvent]] = {}
    client_inflight: dict[int, str] = {}
    completed: list[Op] = []
    for i, e in enumerate(events):
        if e.ev == INVOKE:
            if e.op_id in open_ops:
                raise ValueError(f"duplicate invoke for op {e.op_id}")
            inflight = client_inflight.get(e.client)
            if inflight is not None:
                raise ValueError(f"client {e.client} invoked {e.op_id} while {inflight} pending")
            open_ops[e.op_id] = (i, e)
            client_inflight[e.client] = e.op_id
        elif e.ev == RESPONSE:
            if e.op_id not in open_ops:
                raise ValueError(f"response without invoke for op {e.op_id}")
            inv_i, inv = open_ops.pop(e.op_id)
            del client_inflight[e.client]
            if inv.kind != e.kind or inv.client != e.client or inv.c != e.c:
                raise ValueError(f"response does not match invoke for op {e.op_id}")
            completed.append(Op(
                op_id=e.op_id, client=e.client, kind=e.kind, c=e.c,
                invoke_i=inv_i, invoke_t=inv.t, response_i=i, response_t=e.t,
                payload=inv.payload,
                rid=make_rid(e.client, e.c) if e.kind == APPEND else None,
                result=e.result, seq=e.seq,
            ))
        else:
            raise ValueError(f"unknown event type {e.ev!r}")
    pending = [
        Op(op_id=inv.op_id, client=inv.client, kind=inv.kind, c=inv.c,
           invoke_i=inv_i, invoke_t=inv.t, payload=inv.payload,
           rid=make_rid(inv.client, inv.c) if inv.kind == APPEND else None)
        for inv_i, inv in open_ops.values()
    ]
    pending.sort(key=lambda op: op.invoke_i)
    return completed, pending
