from ledgerlab.histories import pair_events
from ledgerlab.ledger import ACK, account_balance, filter_valid, make_record
from ledgerlab.protocols import (
    AppendReq,
    AppendRes,
    AtomicServer,
    BcastAppend,
    BcastGet,
    BcastRecord,
    BcastSeqAppend,
    EventualServer,
    GetReq,
    GetRes,
    SequentialServer,
    server_subset,
)
from ledgerlab.sim import run, run_consensus

from conftest import scenario


class FakeNet:
    def __init__(self):
        self.responses = []
        self.broadcasts = []

    def respond(self, sid, client, msg):
        self.responses.append((sid, client, msg))

    def abroadcast(self, sid, payload):
        self.broadcasts.append((sid, payload))


def rec(i, payload="x", creator=0):
    return make_record(creator, i, payload)


class TestEventualServer:
    def test_get_answers_from_local_state_immediately(self):
        net = FakeNet()
        s = EventualServer(0, net)
        s.handle_request(3, GetReq(1, None))
        assert net.responses == [(0, 3, GetRes(1, ()))]

    def test_append_acks_before_any_delivery(self):
        net = FakeNet()
        s = EventualServer(0, net)
        r = rec(1)
        s.handle_request(3, AppendReq(1, r))
        assert net.broadcasts == [(0, BcastRecord(r))]
        assert net.responses == [(0, 3, AppendRes(1, ACK, None))]
        assert s.records == []  # nothing applied until delivery

    def test_duplicate_delivery_is_discarded(self):
        s = EventualServer(0, FakeNet())
        r = rec(1)
        s.handle_adeliver(BcastRecord(r))
        s.handle_adeliver(BcastRecord(r))
        assert s.records == [r]


class TestAtomicServer:
    def test_get_is_deferred_until_its_broadcast_returns(self):
        net = FakeNet()
        s = AtomicServer(0, net)
        s.handle_request(3, GetReq(1, None))
        assert net.responses == []
        assert net.broadcasts == [(0, BcastGet(3, 1))]
        s.handle_adeliver(BcastGet(3, 1))
        assert net.responses == [(0, 3, GetRes(1, ()))]

    def test_unstashed_get_delivery_is_ignored(self):
        net = FakeNet()
        s = AtomicServer(0, net)
        s.handle_adeliver(BcastGet(3, 1))
        assert net.responses == []

    def test_append_acks_only_at_delivery(self):
        net = FakeNet()
        s = AtomicServer(0, net)
        r = rec(1, creator=3)
        s.handle_request(3, AppendReq(1, r))
        assert net.responses == []
        s.handle_adeliver(BcastAppend(r))
        assert s.records == [r]
        assert net.responses == [(0, 3, AppendRes(1, ACK, None))]

    def test_stashed_append_is_acked_even_on_a_duplicate_delivery(self):
        # The first copy of a record can land before this server has seen the
        # client's request; the ack must still go out when the second copy
        # arrives, or the client could wait forever.
        net = FakeNet()
        s = AtomicServer(0, net)
        r = rec(1, creator=3)
        s.handle_adeliver(BcastAppend(r))  # other server's copy, nothing stashed
        assert net.responses == []
        s.handle_request(3, AppendReq(1, r))
        s.handle_adeliver(BcastAppend(r))  # own copy, record already present
        assert s.records == [r]
        assert net.responses == [(0, 3, AppendRes(1, ACK, None))]


class TestSequentialServer:
    def test_get_with_zero_floor_answers_immediately(self):
        net = FakeNet()
        s = SequentialServer(0, net)
        s.handle_request(3, GetReq(1, 0))
        assert net.responses == [(0, 3, GetRes(1, ()))]

    def test_get_waits_until_the_replica_is_long_enough(self):
        net = FakeNet()
        s = SequentialServer(0, net)
        r1, r2, r3 = (rec(i, creator=9) for i in (1, 2, 3))
        s.handle_adeliver(BcastSeqAppend(1, r1))
        net.responses.clear()
        s.handle_request(3, GetReq(5, 3))  # replica has 1 record, floor is 3
        assert net.responses == []
        s.handle_adeliver(BcastSeqAppend(2, r2))
        assert net.responses == []
        s.handle_adeliver(BcastSeqAppend(3, r3))  # third delivery releases it
        assert [m for _, cid, m in net.responses if cid == 3] == [
            GetRes(5, (r1, r2, r3))]

    def test_append_ack_reports_the_landing_position(self):
        net = FakeNet()
        s = SequentialServer(0, net)
        s.handle_adeliver(BcastSeqAppend(7, rec(1, creator=8)))
        r = rec(1, creator=3)
        s.handle_request(3, AppendReq(1, r))
        s.handle_adeliver(BcastSeqAppend(1, r))
        assert (0, 3, AppendRes(1, ACK, 2)) in net.responses


class TestClientBehaviour:
    def test_server_subset_has_f_plus_one_rotated_members(self):
        assert server_subset(0, 3, 1) == [0, 1]
        assert server_subset(1, 3, 1) == [1, 2]
        assert server_subset(2, 3, 1) == [2, 0]
        assert server_subset(4, 5, 2) == [4, 0, 1]

    def test_duplicate_responses_are_dropped(self):
        # both targeted servers answer every op; the history must still pair up
        art = run(scenario(seed=5, workload={"ops_per_client": 8, "append_ratio": 0.5}))
        completed, pending = pair_events(art.history)
        assert not pending
        ids = [op.op_id for op in completed]
        assert len(ids) == len(set(ids))

    def test_counters_strictly_increase_per_client(self):
        art = run(scenario(seed=5))
        seen = {}
        for e in art.history:
            if e.ev == "invoke":
                assert e.c > seen.get(e.client, 0)
                seen[e.client] = e.c


class TestModeExamples:
    def test_atomic_append_then_get_sees_the_record(self):
        art = run(scenario(clients=1, seed=0,
                           workload=[[["append", "x"], ["get", None]]]))
        completed, _ = pair_events(art.history)
        get = next(op for op in completed if op.kind == "get")
        assert "0.1" in get.seq

    def test_atomic_sequential_gets_form_prefixes(self):
        for seed in range(10):
            art = run(scenario(seed=seed, workload={"ops_per_client": 8, "append_ratio": 0.5}))
            completed, _ = pair_events(art.history)
            gets = sorted((op for op in completed if op.kind == "get"),
                          key=lambda o: o.invoke_i)
            for g1 in gets:
                for g2 in gets:
                    if g1.precedes(g2):
                        assert g2.seq[:len(g1.seq)] == g1.seq

    def test_eventual_mode_can_return_stale_reads(self):
        # acked append invisible to a later get on some seed: the defining gap
        found = False
        for seed in range(100):
            art = run(scenario(mode="eventual", seed=seed,
                               workload={"ops_per_client": 10, "append_ratio": 0.6}))
            completed, _ = pair_events(art.history)
            appends = [op for op in completed if op.kind == "append"]
            gets = [op for op in completed if op.kind == "get"]
            if any(a.precedes(g) and a.rid not in g.seq for a in appends for g in gets):
                found = True
                break
        assert found

    def test_sequential_mode_own_append_is_always_visible(self):
        for seed in range(20):
            art = run(scenario(mode="sequential", seed=seed,
                               workload={"ops_per_client": 8, "append_ratio": 0.5}))
            completed, _ = pair_events(art.history)
            for a in completed:
                if a.kind != "append":
                    continue
                for g in completed:
                    if g.kind == "get" and g.client == a.client and a.precedes(g):
                        assert a.rid in g.seq

    def test_final_states_agree_on_the_shared_prefix(self):
        art = run(scenario(seed=8, crash_schedule=[[2, 15]],
                           workload={"ops_per_client": 10, "append_ratio": 0.8}))
        seqs = [[r.rid for r in recs] for recs in art.states.values()]
        longest = max(seqs, key=len)
        for s in seqs:
            assert longest[:len(s)] == s


class TestValidatedMode:
    def test_get_views_are_filtered_at_the_client(self):
        pred = {"kind": "account_balance", "balances": {"A": 0}}
        plain = run(scenario(seed=3, workload={
            "ops_per_client": 10, "append_ratio": 0.7,
            "payloads": {"kind": "account", "accounts": ["A"], "max_amount": 6}}))
        validated = run(scenario(seed=3, predicate=pred, workload={
            "ops_per_client": 10, "append_ratio": 0.7,
            "payloads": {"kind": "account", "accounts": ["A"], "max_amount": 6}}))
        raw = {op.op_id: op for op in pair_events(plain.history)[0]}
        filt = {op.op_id: op for op in pair_events(validated.history)[0]}
        assert raw.keys() == filt.keys()
        pred_obj = account_balance({"A": 0})
        checked = 0
        for op_id, op in filt.items():
            if op.kind != "get":
                assert op.result == ACK  # appends always ack on this route
                continue
            raw_records = [make_record(int(r.split(".")[0]), int(r.split(".")[1]), p)
                           for r, p in ((rid, raw_payload(raw, rid)) for rid in raw[op_id].seq)]
            expect = tuple(r.rid for r in filter_valid(raw_records, pred_obj))
            assert op.seq == expect
            checked += 1
        assert checked > 0


def raw_payload(ops_by_id, rid):
    return ops_by_id[rid].payload


class TestConsensus:
    def test_all_propose_same_value_decides_it(self):
        res = run_consensus(3, 1, ["v", "v", "v"], seed=1)
        assert set(res.decisions.values()) == {"v"}

    def test_distinct_proposals_reach_agreement(self):
        for seed in range(30):
            res = run_consensus(3, 1, ["a", "b", "c"], seed=seed)
            decisions = set(res.decisions.values())
            assert len(decisions) == 1
            assert decisions <= {"a", "b", "c"}

    def test_single_proposer_decides_its_own_value(self):
        res = run_consensus(3, 1, ["solo"], seed=2)
        assert res.decisions == {0: "solo"}

    def test_every_proposer_decides_despite_f_crashes(self):
        for seed in range(30):
            res = run_consensus(3, 1, ["a", "b", "c"], seed=seed)
            assert all(d is not None for d in res.decisions.values())
            crashes = [e for e in res.artifact.abtrace.events if e.kind == "crash"]
            assert len(crashes) == 1  # the adversarial default crashes f servers
