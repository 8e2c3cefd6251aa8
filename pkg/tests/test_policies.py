import pytest
from hypothesis import given, settings, strategies as st

from eovsim.core import SeqNum, TxnStatus as S
from eovsim.mvstore import MvStore
from eovsim.policies import (POLICIES, FabricPP, FoccL, FoccS, Sharp, make_policy, snapshot_check,
                             version_check)
from helpers import txn

C, V = S.COMMITTED, S.ABORTED_VALIDATION


def five_txn():
    """Store after block 2 plus the five transactions of the walkthrough."""
    store = MvStore()
    store.apply_block(1, [(1, {"A": 101}), (2, {"B": 102})])
    store.apply_block(2, [(1, {"B": 201, "C": 201})])
    t = {
        1: txn(1, 1, {"B": (1, 2), "C": (2, 1)}, ["C"]),
        2: txn(2, 1, {"A": (1, 1), "B": (1, 2)}, ["C"]),
        3: txn(3, 2, {"B": (2, 1)}, ["C"]),
        4: txn(4, 2, {"C": (2, 1)}, ["B"]),
        5: txn(5, 2, {"C": (2, 1)}, ["A"]),
    }
    return store, t


def run_block(policy, store, arrivals, M=3):
    """Drive one block through a policy; returns id -> final status."""
    out = {}
    pending = []
    for t, cross in arrivals:
        st_ = policy.on_arrival(t, M, cross)
        if st_ is None:
            pending.append(t)
        else:
            out[t.id] = st_
    ordered, aborts = policy.on_block_formation(pending, M)
    out.update({t.id: s for t, s in aborts})
    for t, s in zip(ordered, policy.validate(ordered, M, store)):
        out[t.id] = s
    return out, [t.id for t in ordered]


def test_five_txn_fabric_statuses():
    store, t = five_txn()
    out, order = run_block(make_policy("fabric"), store, [(t[i], False) for i in (2, 3, 4, 5)])
    assert order == [2, 3, 4, 5]
    assert out == {2: V, 3: C, 4: V, 5: V}


def test_five_txn_fabricpp_statuses():
    store, t = five_txn()
    out, order = run_block(FabricPP(), store, [(t[1], True)] + [(t[i], False) for i in (2, 3, 4, 5)])
    assert out[1] is S.ABORTED_EARLY                    # read across blocks
    assert out[2] is S.ABORTED_EARLY                    # read B older than Txn3 did
    assert out[3] is S.ABORTED_UNREORDERABLE            # on the 3 <-> 4 cycle, highest degree
    assert out[4] is C and out[5] is C
    assert order == [4, 5]


def test_fabricpp_breaks_every_cycle():
    # reader-before-writer cycles 1 -> 2 -> 1 and 1 -> 3 -> 2 -> 1; 1 and 2 tie on
    # cycles and degree, so the earlier arrival goes
    ts = [txn(1, 0, {"a": (0, 1), "c": (0, 3)}, ["b"]), txn(2, 0, {"b": (0, 2)}, ["c"]),
          txn(3, 0, {"c": (0, 3)}, ["a"])]
    pol = FabricPP()
    ordered, aborts = pol.on_block_formation(ts, 1)
    assert [t.id for t, _ in aborts] == [1]
    assert [t.id for t in ordered] == [3, 2]
    assert pol.counters()["cycles_enumerated"] >= 2


def test_focc_l_greedy_victim_is_highest_degree_latest():
    a = txn(1, 0, {"x": (0, 1)}, ["y"])
    b = txn(2, 0, {"y": (0, 2)}, ["x"])
    ordered, aborts = FoccL().on_block_formation([a, b], 1)
    assert [t.id for t, _ in aborts] == [2] and [t.id for t in ordered] == [1]
    assert ordered[0].end_ts == SeqNum(1, 1)


def test_focc_l_keeps_arrival_order_without_conflicts():
    ts = [txn(i, 0, {f"r{i}": (0, 1)}, [f"w{i}"]) for i in range(5)]
    ordered, aborts = FoccL().on_block_formation(ts, 1)
    assert aborts == [] and [t.id for t in ordered] == list(range(5))


def test_focc_s_rejects_concurrent_writers():
    p = FoccS()
    assert p.on_arrival(txn(1, 0, {}, ["k"]), 1) is None
    assert p.on_arrival(txn(2, 0, {}, ["k"]), 1) is S.ABORTED_EARLY
    p.on_block_formation([txn(1, 0, {}, ["k"])], 1)
    # still concurrent with the committed writer: snapshot 0 predates block 1
    assert p.on_arrival(txn(3, 0, {}, ["k"]), 2) is S.ABORTED_EARLY
    assert p.on_arrival(txn(4, 1, {}, ["k"]), 2) is None


def test_focc_s_rejects_dangerous_structure():
    p = FoccS()
    assert p.on_arrival(txn(1, 0, {"x": (0, 1)}, ["y"]), 1) is None
    # 2 reads y under pending writer 1 and writes x which 1 read: in and out edges at once
    assert p.on_arrival(txn(2, 0, {"y": (0, 2)}, ["x"]), 1) is S.ABORTED_EARLY
    assert p.on_arrival(txn(3, 0, {"z": (0, 3)}, ["w"]), 1) is None


def test_focc_s_stale_span():
    p = FoccS(max_span=2)
    assert p.on_arrival(txn(1, 3, {}, ["a"]), 5) is S.ABORTED_STALE_SPAN


def test_sharp_statuses_and_order():
    store, t = five_txn()
    sharp = Sharp(max_span=10)
    # the graph needs blocks 1 and 2 first
    for M, block in ((1, [txn(11, 0, writes=["A"]), txn(12, 0, writes=["B"])]),
                     (2, [txn(21, 1, writes=["B", "C"])])):
        for b in block:
            assert sharp.on_arrival(b, M) is None
        sharp.on_block_formation(block, M)
    out, order = run_block(sharp, store, [(t[i], False) for i in (2, 3, 4, 5)])
    assert out == {2: S.ABORTED_UNREORDERABLE, 4: S.ABORTED_UNREORDERABLE, 3: C, 5: C}
    assert order == [5, 3]
    assert sharp.counters()["unreorderable"] == 2


def test_sharp_checks_block_numbers():
    with pytest.raises(ValueError):
        Sharp().on_arrival(txn(1, 0, {}, ["a"]), 5)


def test_version_check_sees_earlier_writes_in_the_block():
    store = MvStore([("k", 0)])
    a = txn(1, 0, {"k": (0, 1)}, ["k"], end=(1, 1))
    b = txn(2, 0, {"k": (0, 1)}, ["j"], end=(1, 2))
    assert version_check([a, b], store) == [C, V]
    assert version_check([b, a], store) == [C, C]


def test_snapshot_check():
    store = MvStore([("k", 0)])
    store.apply_block(1, [(1, {"k": 1})])
    fresh = txn(1, 1, {"k": (1, 1)}, [])
    old = txn(2, 0, {"k": (0, 1)}, [])
    lie = txn(3, 1, {"k": (0, 1)}, [])
    assert snapshot_check([fresh, old, lie], store) == [C, C, V]


def test_make_policy():
    assert [make_policy(n).name for n in POLICIES] == list(POLICIES)
    assert make_policy("fabric").executor == "lock"
    with pytest.raises(ValueError, match="unknown policy"):
        make_policy("raft")


writes = st.sets(st.sampled_from("abcd"), min_size=1, max_size=2)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.sets(st.sampled_from("abcd"), max_size=2), writes), min_size=1, max_size=12))
def test_focc_s_never_admits_two_concurrent_writers_of_a_key(draws):
    p = FoccS()
    admitted = []
    for i, (reads, ws) in enumerate(draws):
        t = txn(i, 0, {k: (0, 1) for k in reads}, ws)
        if p.on_arrival(t, 1) is None:
            admitted.append(t)
    for i, a in enumerate(admitted):
        for b in admitted[i + 1:]:
            assert not set(a.writeset) & set(b.writeset)
