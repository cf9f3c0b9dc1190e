"""Deterministic discrete-event simulation of the crash-prone system.

A run is a pure function of its scenario: logical integer time, a seeded RNG
per concern (network delays, workload expansion, crash generation), and a
single-threaded event loop with a tie-break counter.  Point-to-point channels
are reliable between live processes; messages to a process that has crashed
by delivery time are dropped.  After the workload drains, surviving clients
issue a configurable number of probe gets; these land in the same history and
their start time is recorded so checkers can treat them as the failure-free
extension.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from . import protocols
from .abcast import AbTrace, BroadcastService, trace_from_jsonl
from .histories import HistoryEvent, HistoryRecorder, events_from_jsonl, events_to_jsonl
from .ledger import Record, ValidityPredicate, predicate_from_config, predicate_to_config


class ConfigError(Exception):
    """Scenario or campaign configuration rejected before any event runs."""


class SimulationError(Exception):
    """An internal invariant broke mid-run (a bug, not a user error)."""


_SCENARIO_FIELDS = {"n", "f", "clients", "mode", "seed", "max_delay", "probe_gets",
                    "workload", "crash_schedule", "client_crashes", "predicate"}
_WORKLOAD_SPEC_FIELDS = {"ops_per_client", "append_ratio", "payloads"}
_PAYLOAD_KINDS = ("token", "account")


@dataclass(frozen=True)
class Scenario:
    """Validated, normalized description of one run."""

    n: int
    f: int
    clients: int
    mode: str
    seed: int
    max_delay: int = 10
    probe_gets: int = 2
    workload: object = None  # explicit per-client op lists or a generator spec
    crash_schedule: object = ()  # explicit [(server, t)] or {"random": {...}}
    client_crashes: tuple = ()
    predicate: ValidityPredicate | None = None

    def to_dict(self) -> dict:
        out: dict = {
            "n": self.n, "f": self.f, "clients": self.clients, "mode": self.mode,
            "seed": self.seed, "max_delay": self.max_delay, "probe_gets": self.probe_gets,
            "workload": _workload_to_jsonable(self.workload),
            "crash_schedule": _crashes_to_jsonable(self.crash_schedule),
            "client_crashes": [list(x) for x in self.client_crashes],
        }
        if self.predicate is not None:
            out["predicate"] = predicate_to_config(self.predicate)
        return out

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def with_seed(self, seed: int) -> "Scenario":
        d = self.to_dict()
        d["seed"] = seed
        return scenario_from_dict(d)


def _workload_to_jsonable(workload) -> object:
    if isinstance(workload, dict):
        return dict(workload)
    return [[[kind, payload] for kind, payload in ops] for ops in workload]


def _crashes_to_jsonable(crashes) -> object:
    if isinstance(crashes, dict):
        return dict(crashes)
    return [list(x) for x in crashes]


def _require_uint(obj: Mapping, key: str, *, minimum: int = 0) -> int:
    if key not in obj:
        raise ConfigError(f"scenario missing required field {key!r}")
    v = obj[key]
    if not isinstance(v, int) or isinstance(v, bool) or v < minimum:
        raise ConfigError(f"scenario field {key!r} must be an integer >= {minimum}")
    return v


def scenario_from_dict(obj: Mapping, seed_override: int | None = None) -> Scenario:
    """Parse and validate a scenario object; unknown fields are rejected."""
    if not isinstance(obj, Mapping):
        raise ConfigError("scenario must be a JSON object")
    unknown = set(obj) - _SCENARIO_FIELDS
    if unknown:
        raise ConfigError(f"unknown scenario fields: {sorted(unknown)}")

    n = _require_uint(obj, "n", minimum=1)
    f = _require_uint(obj, "f")
    clients = _require_uint(obj, "clients", minimum=1)
    mode = obj.get("mode")
    if mode not in protocols.MODES:
        raise ConfigError(f"mode must be one of {protocols.MODES}, got {mode!r}")
    if f >= n:
        raise ConfigError(f"need f < n, got f={f} n={n}")
    # Every mode runs over the total-order broadcast service, which needs a
    # majority of servers to survive.
    if 2 * f >= n:
        raise ConfigError(
            f"f={f} with n={n} violates the broadcast service's majority "
            f"requirement (need f < n/2)")

    seed = obj.get("seed", 0)
    if seed_override is not None:
        seed = seed_override
    if not isinstance(seed, int) or isinstance(seed, bool) or not (0 <= seed < 2 ** 64):
        raise ConfigError("seed must be an unsigned 64-bit integer")

    max_delay = obj.get("max_delay", 10)
    if not isinstance(max_delay, int) or isinstance(max_delay, bool) or max_delay < 1:
        raise ConfigError("max_delay must be an integer >= 1")
    probe_gets = obj.get("probe_gets", 2)
    if not isinstance(probe_gets, int) or isinstance(probe_gets, bool) or probe_gets < 0:
        raise ConfigError("probe_gets must be a non-negative integer")

    workload = _validate_workload(obj.get("workload"), clients)
    crash_schedule = _validate_crashes(obj.get("crash_schedule", []), n, f)
    client_crashes = _validate_client_crashes(obj.get("client_crashes", []), clients)

    predicate = None
    if obj.get("predicate") is not None:
        try:
            predicate = predicate_from_config(obj["predicate"])
        except ValueError as e:
            raise ConfigError(str(e)) from e

    return Scenario(n=n, f=f, clients=clients, mode=mode, seed=seed,
                    max_delay=max_delay, probe_gets=probe_gets, workload=workload,
                    crash_schedule=crash_schedule, client_crashes=client_crashes,
                    predicate=predicate)


def _validate_workload(workload, clients: int):
    if workload is None:
        raise ConfigError("scenario missing required field 'workload'")
    if isinstance(workload, Mapping):
        unknown = set(workload) - _WORKLOAD_SPEC_FIELDS
        if unknown:
            raise ConfigError(f"unknown workload fields: {sorted(unknown)}")
        ops = workload.get("ops_per_client")
        if not isinstance(ops, int) or isinstance(ops, bool) or ops < 0:
            raise ConfigError("workload.ops_per_client must be a non-negative integer")
        ratio = workload.get("append_ratio", 0.5)
        if not isinstance(ratio, (int, float)) or isinstance(ratio, bool) or not 0 <= ratio <= 1:
            raise ConfigError("workload.append_ratio must be in [0, 1]")
        payloads = workload.get("payloads", {"kind": "token"})
        if not isinstance(payloads, Mapping) or payloads.get("kind") not in _PAYLOAD_KINDS:
            raise ConfigError(f"workload.payloads.kind must be one of {_PAYLOAD_KINDS}")
        if payloads["kind"] == "account":
            extra = set(payloads) - {"kind", "accounts", "max_amount"}
            if extra:
                raise ConfigError(f"unknown payload fields: {sorted(extra)}")
        elif set(payloads) - {"kind"}:
            raise ConfigError("token payloads take no extra fields")
        return {"ops_per_client": ops, "append_ratio": float(ratio),
                "payloads": dict(payloads)}
    if isinstance(workload, Sequence) and not isinstance(workload, (str, bytes)):
        if len(workload) != clients:
            raise ConfigError(f"explicit workload must list ops for all {clients} clients")
        parsed = []
        for ops in workload:
            client_ops = []
            for op in ops:
                kind, payload = _parse_workload_op(op)
                client_ops.append((kind, payload))
            parsed.append(tuple(client_ops))
        return tuple(parsed)
    raise ConfigError("workload must be a generator spec or per-client op lists")


def _parse_workload_op(op) -> tuple[str, str | None]:
    if isinstance(op, Mapping):
        if set(op) - {"kind", "payload"}:
            raise ConfigError(f"unknown op fields in {op!r}")
        kind, payload = op.get("kind"), op.get("payload")
    elif isinstance(op, Sequence) and not isinstance(op, str) and len(op) == 2:
        kind, payload = op
    else:
        raise ConfigError(f"malformed workload op {op!r}")
    if kind == "get":
        if payload is not None:
            raise ConfigError("get ops take no payload")
        return "get", None
    if kind == "append":
        if not isinstance(payload, str):
            raise ConfigError("append ops need a string payload")
        return "append", payload
    raise ConfigError(f"op kind must be get or append, got {kind!r}")


def _validate_crashes(crashes, n: int, f: int):
    if isinstance(crashes, Mapping):
        if set(crashes) != {"random"}:
            raise ConfigError("crash generator must be {'random': {...}}")
        spec = crashes["random"]
        if not isinstance(spec, Mapping) or set(spec) - {"max_crashes", "until"}:
            raise ConfigError("crash generator takes max_crashes and until")
        max_crashes = spec.get("max_crashes", f)
        until = spec.get("until", 100)
        if not isinstance(max_crashes, int) or isinstance(max_crashes, bool) or max_crashes < 0:
            raise ConfigError("max_crashes must be a non-negative integer")
        if max_crashes > f:
            raise ConfigError(f"max_crashes={max_crashes} exceeds the tolerance bound f={f}")
        if not isinstance(until, int) or isinstance(until, bool) or until < 0:
            raise ConfigError("until must be a non-negative integer")
        return {"random": {"max_crashes": max_crashes, "until": until}}
    entries = []
    seen: set[int] = set()
    for entry in crashes:
        if not (isinstance(entry, Sequence) and len(entry) == 2):
            raise ConfigError(f"malformed crash entry {entry!r}")
        sid, t = entry
        if not isinstance(sid, int) or not 0 <= sid < n:
            raise ConfigError(f"crash server id {sid!r} out of range")
        if not isinstance(t, int) or isinstance(t, bool) or t < 0:
            raise ConfigError(f"crash time {t!r} must be a non-negative integer")
        if sid in seen:
            raise ConfigError(f"server {sid} crashed twice in the schedule")
        seen.add(sid)
        entries.append((sid, t))
    if len(entries) > f:
        raise ConfigError(f"{len(entries)} crashes requested but tolerance bound is f={f}")
    return tuple(entries)


def _validate_client_crashes(crashes, clients: int):
    entries = []
    seen: set[int] = set()
    for entry in crashes:
        if not (isinstance(entry, Sequence) and len(entry) == 2):
            raise ConfigError(f"malformed client crash entry {entry!r}")
        cid, t = entry
        if not isinstance(cid, int) or not 0 <= cid < clients:
            raise ConfigError(f"client crash id {cid!r} out of range")
        if not isinstance(t, int) or isinstance(t, bool) or t < 0:
            raise ConfigError(f"client crash time {t!r} must be a non-negative integer")
        if cid in seen:
            raise ConfigError(f"client {cid} crashed twice in the schedule")
        seen.add(cid)
        entries.append((cid, t))
    return tuple(entries)


def generate_workload(spec: Mapping, clients: int, seed: int) -> list[list[tuple[str, str | None]]]:
    """Expand a generator spec into explicit per-client operation lists."""
    rng = random.Random(f"workload:{seed}")
    ratio = spec["append_ratio"]
    payloads = spec["payloads"]
    out = []
    for cid in range(clients):
        ops: list[tuple[str, str | None]] = []
        for i in range(spec["ops_per_client"]):
            if rng.random() < ratio:
                if payloads["kind"] == "account":
                    accounts = payloads.get("accounts", ["A"])
                    action = rng.choice(("deposit", "withdraw"))
                    acct = rng.choice(accounts)
                    amount = rng.randint(0, payloads.get("max_amount", 10))
                    ops.append(("append", f"{action}:{acct}:{amount}"))
                else:
                    ops.append(("append", f"w{cid}.{i}"))
            else:
                ops.append(("get", None))
        out.append(ops)
    return out


def expand_crashes(schedule, n: int, f: int, seed: int) -> list[tuple[int, int]]:
    """Resolve a crash schedule (explicit list or seeded generator) to entries."""
    if isinstance(schedule, Mapping):
        spec = schedule["random"]
        rng = random.Random(f"crash:{seed}")
        count = rng.randint(0, spec["max_crashes"])
        servers = sorted(rng.sample(range(n), count))
        return [(sid, rng.randint(0, spec["until"])) for sid in servers]
    return list(schedule)


@dataclass
class RunArtifact:
    """Everything a run produces, sufficient for offline checking and replay."""

    history: list[HistoryEvent]
    abtrace: AbTrace
    states: dict[int, list[Record]]
    meta: dict

    def write(self, outdir: str | Path) -> Path:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "history.jsonl").write_text(events_to_jsonl(self.history))
        (out / "abtrace.jsonl").write_text(self.abtrace.to_jsonl())
        states = {str(sid): [{"tau": r.rid, "p": r.creator, "v": r.payload}
                             for r in records]
                  for sid, records in sorted(self.states.items())}
        (out / "states.json").write_text(json.dumps(states, indent=1) + "\n")
        (out / "meta.json").write_text(json.dumps(self.meta, sort_keys=True, indent=1) + "\n")
        return out


def load_artifact(artifact_dir: str | Path) -> RunArtifact:
    d = Path(artifact_dir)
    try:
        meta = json.loads((d / "meta.json").read_text())
        history = events_from_jsonl((d / "history.jsonl").read_text())
        n = meta["scenario"]["n"]
        abtrace = trace_from_jsonl((d / "abtrace.jsonl").read_text(), n)
        raw_states = json.loads((d / "states.json").read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"artifact incomplete: missing {Path(e.filename).name}") from e
    except (json.JSONDecodeError, KeyError) as e:
        raise ConfigError(f"artifact corrupt: {e}") from e
    states = {int(sid): [Record(r["tau"], r["p"], r["v"]) for r in records]
              for sid, records in raw_states.items()}
    return RunArtifact(history, abtrace, states, meta)


class Simulator:
    """Single-threaded event loop over (time, tie-break) ordered events."""

    def __init__(self, scenario: Scenario, client_factory=None) -> None:
        self.scenario = scenario
        self.now = 0
        self._heap: list[tuple[int, int, str, object]] = []
        self._tiebreak = 0
        self._net_rng = random.Random(f"net:{scenario.seed}")
        self.trace = AbTrace(scenario.n)
        self.recorder = HistoryRecorder(lambda: self.now)
        self._server_alive = [True] * scenario.n
        self._client_alive = [True] * scenario.clients
        self.crashes_fired = 0

        self.broadcast_service = BroadcastService(
            scenario.n,
            schedule=self.schedule,
            alive=self.server_alive,
            draw_delay=self._draw_delay,
            deliver=lambda sid, payload: self.servers[sid].handle_adeliver(payload),
            trace=self.trace,
            now=lambda: self.now,
        )
        self.servers = [protocols.make_server(scenario.mode, sid, self)
                        for sid in range(scenario.n)]

        if client_factory is None:
            workload = scenario.workload
            if isinstance(workload, dict):
                workload = generate_workload(workload, scenario.clients, scenario.seed)
            self.clients = [
                protocols.Client(
                    cid, scenario.mode,
                    protocols.server_subset(cid, scenario.n, scenario.f),
                    self, self.recorder, ops=list(workload[cid]),
                    pred=scenario.predicate,
                )
                for cid in range(scenario.clients)
            ]
        else:
            self.clients = [client_factory(cid, self) for cid in range(scenario.clients)]

    # -- facilities used by protocol code (the "network") -------------------

    def server_alive(self, sid: int) -> bool:
        return self._server_alive[sid]

    def _draw_delay(self) -> int:
        return self._net_rng.randint(1, self.scenario.max_delay)

    def schedule(self, delay: int, kind: str, fn) -> None:
        assert delay >= 0, "cannot schedule into the past"
        self._tiebreak += 1
        heapq.heappush(self._heap, (self.now + delay, self._tiebreak, kind, fn))

    def request(self, cid: int, sid: int, msg) -> None:
        delay = self._draw_delay()
        self.schedule(delay, "msg_deliver",
                      lambda: self._server_alive[sid] and self.servers[sid].handle_request(cid, msg))

    def respond(self, sid: int, cid: int, msg) -> None:
        delay = self._draw_delay()
        self.schedule(delay, "msg_deliver",
                      lambda: self._client_alive[cid] and self.clients[cid].on_response(msg))

    def abroadcast(self, sid: int, payload) -> None:
        self.broadcast_service.broadcast(sid, payload)

    # -- run control ---------------------------------------------------------

    def _crash_server(self, sid: int) -> None:
        if self._server_alive[sid]:
            self._server_alive[sid] = False
            self.crashes_fired += 1
            self.trace.add("crash", sid, self.now)

    def _crash_client(self, cid: int) -> None:
        if self._client_alive[cid]:
            self._client_alive[cid] = False
            self.clients[cid].crash()

    def _drain(self) -> None:
        heap = self._heap
        while heap:
            t, _, _, fn = heapq.heappop(heap)
            self.now = t
            fn()

    def run(self) -> RunArtifact:
        sc = self.scenario
        for sid, t in expand_crashes(sc.crash_schedule, sc.n, sc.f, sc.seed):
            self.schedule(t, "crash", lambda s=sid: self._crash_server(s))
        for cid, t in sc.client_crashes:
            self.schedule(t, "crash", lambda c=cid: self._crash_client(c))
        for client in self.clients:
            self.schedule(0, "client_invoke", client.start)
        self._drain()
        self._check_liveness()

        probe_from_t = None
        if sc.probe_gets > 0:
            probe_from_t = self.now + 1
            for client in self.clients:
                if not client.crashed:
                    client.push_ops([("get", None)] * sc.probe_gets)
                    self.schedule(probe_from_t - self.now, "probe", client.start)
            self._drain()
            self._check_liveness()

        meta = {
            "probe_from_t": probe_from_t,
            "scenario": self.scenario.to_dict(),
            "scenario_sha256": self.scenario.sha256(),
            "seed": sc.seed,
        }
        states = {sid: list(s.records) for sid, s in enumerate(self.servers)}
        return RunArtifact(list(self.recorder.events), self.trace, states, meta)

    def _check_liveness(self) -> None:
        for client in self.clients:
            if not client.crashed and not client.done:
                raise SimulationError(
                    f"quiescent with client {client.cid} still pending: "
                    f"liveness violated")


def run(scenario: Scenario) -> RunArtifact:
    return Simulator(scenario).run()


@dataclass
class ConsensusResult:
    proposals: dict[int, str]
    decisions: dict[int, str | None]
    artifact: RunArtifact


def run_consensus(n: int, f: int, proposals: Sequence[str], seed: int,
                  max_delay: int = 10, crash_schedule=None) -> ConsensusResult:
    """Run the propose/decide reduction over an eventual-mode ledger.

    With no explicit schedule, f servers crash at seeded times early in the
    run (the adversarial case for the polling loop).
    """
    if crash_schedule is None:
        rng = random.Random(f"crash:{seed}")
        servers = sorted(rng.sample(range(n), f))
        crash_schedule = tuple((sid, rng.randint(0, 3 * max_delay)) for sid in servers)
    scenario = scenario_from_dict({
        "n": n, "f": f, "clients": len(proposals), "mode": protocols.EVENTUAL,
        "seed": seed, "max_delay": max_delay, "probe_gets": 0,
        "workload": [[] for _ in proposals],
        "crash_schedule": [list(e) for e in crash_schedule],
    })

    proposers: list[protocols.ProposerClient] = []

    def factory(cid: int, sim: Simulator) -> protocols.ProposerClient:
        client = protocols.ProposerClient(
            cid, protocols.server_subset(cid, n, f), sim, sim.recorder,
            value=proposals[cid])
        proposers.append(client)
        return client

    simulator = Simulator(scenario, client_factory=factory)
    artifact = simulator.run()
    return ConsensusResult(
        proposals={p.cid: p.value for p in proposers},
        decisions={p.cid: p.decision for p in proposers},
        artifact=artifact,
    )
