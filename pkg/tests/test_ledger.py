import pytest
from hypothesis import given
from hypothesis import strategies as st

from ledgerlab.ledger import (
    ACK,
    NACK,
    ALWAYS_TRUE,
    UNIQUE_RID,
    DuplicateRecordError,
    Ledger,
    Record,
    ValidatedLedger,
    account_balance,
    evaluate_predicate,
    filter_valid,
    make_record,
    predicate_from_config,
    predicate_to_config,
)


def rec(i, payload="x", creator=0):
    return make_record(creator, i, payload)


class TestRecord:
    def test_identity_is_the_record_id(self):
        a = Record("0.1", 0, "x")
        b = Record("0.1", 9, "different payload")
        assert a == b
        assert hash(a) == hash(b)
        assert a != Record("0.2", 0, "x")

    def test_minting_encodes_creator_and_counter(self):
        assert make_record(3, 7, "v").rid == "3.7"


class TestLedger:
    def test_get_initially_empty(self):
        assert Ledger().get() == ()

    def test_get_returns_appended_records_in_order(self):
        led = Ledger()
        r1, r2 = rec(1), rec(2)
        assert led.append(r1) == ACK
        assert led.get() == (r1,)
        assert led.append(r2) == ACK
        assert led.get() == (r1, r2)

    def test_get_returns_a_snapshot(self):
        led = Ledger()
        led.append(rec(1))
        snap = led.get()
        led.append(rec(2))
        assert len(snap) == 1

    def test_duplicate_id_is_an_error_not_a_nack(self):
        led = Ledger()
        led.append(rec(1))
        with pytest.raises(DuplicateRecordError):
            led.append(rec(1, payload="other"))


class TestValidatedLedger:
    def test_valid_append_acks(self):
        vl = ValidatedLedger(account_balance({"A": 0}))
        assert vl.append(rec(1, "deposit:A:5")) == ACK
        assert vl.get() == (rec(1),)

    def test_invalid_append_nacks_and_leaves_state(self):
        vl = ValidatedLedger(account_balance({"A": 0}))
        vl.append(rec(1, "deposit:A:5"))
        assert vl.append(rec(2, "withdraw:A:7")) == NACK
        assert vl.get() == (rec(1),)

    def test_always_true_acks_anything(self):
        vl = ValidatedLedger(ALWAYS_TRUE)
        assert vl.append(rec(1, "whatever")) == ACK

    def test_nacked_record_can_be_retried(self):
        vl = ValidatedLedger(account_balance({"A": 0}))
        assert vl.append(rec(1, "withdraw:A:1")) == NACK
        vl.append(rec(2, "deposit:A:1"))
        assert vl.append(rec(1, "withdraw:A:1")) == ACK

    def test_duplicate_id_is_an_error(self):
        vl = ValidatedLedger(ALWAYS_TRUE)
        vl.append(rec(1))
        with pytest.raises(DuplicateRecordError):
            vl.append(rec(1))


class TestPredicates:
    def test_always_true(self):
        assert evaluate_predicate(ALWAYS_TRUE, [rec(1, "garbage"), rec(2, "")])

    def test_unique_id_rejects_duplicates(self):
        r1 = rec(1)
        assert not evaluate_predicate(UNIQUE_RID, [r1, r1])
        assert evaluate_predicate(UNIQUE_RID, [rec(1), rec(2)])

    def test_account_balance_replay(self):
        pred = account_balance({"A": 0})
        assert evaluate_predicate(pred, [rec(1, "deposit:A:5"), rec(2, "withdraw:A:3")])
        assert not evaluate_predicate(pred, [rec(1, "deposit:A:5"), rec(2, "withdraw:A:6")])

    def test_account_balance_uses_initial_balances(self):
        assert evaluate_predicate(account_balance({"A": 4}), [rec(1, "withdraw:A:4")])
        assert not evaluate_predicate(account_balance({}), [rec(1, "withdraw:A:4")])

    @pytest.mark.parametrize("payload", [
        "junk", "deposit:A", "deposit:A:5:extra", "deposit:A:-5",
        "deposit:A:1.5", "steal:A:5", "deposit::5", "",
    ])
    def test_malformed_payload_is_invalid(self, payload):
        assert not evaluate_predicate(account_balance({"A": 100}), [rec(1, payload)])

    def test_config_round_trip(self):
        pred = predicate_from_config({"kind": "account_balance", "balances": {"A": 3}})
        assert pred == account_balance({"A": 3})
        assert predicate_from_config(predicate_to_config(pred)) == pred

    @pytest.mark.parametrize("cfg", [
        {"kind": "nope"},
        {"kind": "always_true", "balances": {"A": 1}},
        {"kind": "account_balance", "balances": {"A": -1}},
        {"kind": "account_balance", "extra": 1},
        {},
    ])
    def test_bad_config_rejected(self, cfg):
        with pytest.raises(ValueError):
            predicate_from_config(cfg)


class TestFilterValid:
    def test_empty(self):
        assert filter_valid([], account_balance({})) == ()

    def test_skips_records_that_break_validity(self):
        # replaying by hand: +5 kept, -7 would go negative, -3 then fine
        s = [rec(1, "deposit:A:5"), rec(2, "withdraw:A:7"), rec(3, "withdraw:A:3")]
        assert filter_valid(s, account_balance({"A": 0})) == (s[0], s[2])

    def test_always_true_is_identity(self):
        s = [rec(1), rec(2), rec(3)]
        assert filter_valid(s, ALWAYS_TRUE) == tuple(s)

    def test_unique_id_drops_later_duplicates(self):
        r1 = rec(1)
        assert filter_valid([r1, r1, rec(2)], UNIQUE_RID) == (r1, rec(2))


# -- property tests -----------------------------------------------------------

account_payloads = st.builds(
    lambda action, acct, amt: f"{action}:{acct}:{amt}",
    st.sampled_from(["deposit", "withdraw"]),
    st.sampled_from(["A", "B"]),
    st.integers(0, 9),
)
payloads = st.one_of(account_payloads, st.just("junk"))
streams = st.lists(payloads, max_size=30).map(
    lambda ps: [make_record(0, i + 1, p) for i, p in enumerate(ps)])
predicates = st.one_of(
    st.just(ALWAYS_TRUE),
    st.just(UNIQUE_RID),
    st.just(account_balance({"A": 0, "B": 2})),
)


@given(streams, predicates)
def test_validated_appends_equal_filter(stream, pred):
    vl = ValidatedLedger(pred)
    for r in stream:
        vl.append(r)
    assert vl.get() == filter_valid(stream, pred)


@given(streams, predicates)
def test_filter_is_idempotent(stream, pred):
    once = filter_valid(stream, pred)
    assert filter_valid(once, pred) == once


@given(streams, predicates)
def test_acked_records_stay_valid_as_a_sequence(stream, pred):
    vl = ValidatedLedger(pred)
    acked = [r for r in stream if vl.append(r) == ACK]
    assert filter_valid(acked, pred) == tuple(acked)


@given(streams)
def test_sequential_replay_matches_append_order(stream):
    led = Ledger()
    for r in stream:
        assert led.append(r) == ACK
        assert led.get() == tuple(stream[:len(led.get())])
    assert led.get() == tuple(stream)
