import random
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from eovsim.workload import (INITIAL_BALANCE, ApplicationError, Proposal, Trace, TraceFormatError,
                             WorkloadSpec, ZipfSampler, checking, generate, genesis_state, load_trace,
                             read_count, save_trace, saving, smallbank_contract, submit_tick)


def _frac_hot(trace, field, hot):
    picks = [a for p in trace for a in p.args[field]]
    return sum(a < hot for a in picks) / len(picks)


def test_hot_read_fraction_tracks_ratio():
    spec = WorkloadSpec(read_hot_ratio=50)
    tr = generate(spec, 3, 10_000)
    assert abs(_frac_hot(tr, "reads", spec.hot_count) - 0.50) < 0.01


def test_zero_write_hot_ratio_never_targets_hot_accounts():
    spec = WorkloadSpec(write_hot_ratio=0)
    tr = generate(spec, 3, 5000)
    assert _frac_hot(tr, "writes", spec.hot_count) == 0


def test_draws_four_distinct_reads_and_writes():
    for p in generate(WorkloadSpec(read_hot_ratio=50, write_hot_ratio=50), 1, 500):
        assert len(set(p.args["reads"])) == 4 and len(set(p.args["writes"])) == 4


def test_hot_set_is_prefix_of_id_space():
    assert WorkloadSpec().hot_count == 100
    assert WorkloadSpec(accounts=50, hot_fraction=0.01).hot_count == 1


@pytest.mark.parametrize("kw", [dict(read_hot_ratio=60), dict(write_hot_ratio=-1), dict(kind="tpcc"),
                                dict(accounts=1), dict(hot_fraction=0), dict(zipf_theta=-0.5)])
def test_invalid_specs_rejected(kw):
    with pytest.raises(ValueError):
        WorkloadSpec(**kw)


def test_generation_is_deterministic():
    spec = WorkloadSpec(kind="mixed", zipf_theta=0.8)
    assert generate(spec, 7, 300).proposals == generate(spec, 7, 300).proposals
    assert generate(spec, 7, 300).proposals != generate(spec, 8, 300).proposals


def test_open_loop_schedule():
    assert [submit_tick(i, 700) for i in range(4)] == [0, 1, 2, 4]
    tr = generate(WorkloadSpec(), 1, 1400)
    assert tr.proposals[-1].tick == 1998


def test_mixed_operation_shares():
    tr = generate(WorkloadSpec(kind="mixed"), 2, 20_000)
    c = Counter(p.fn for p in tr)
    n = len(tr)
    assert abs(c["query"] / n - 0.5) < 0.015
    single = c["deposit_checking"] + c["write_check"] + c["transact_saving"]
    assert abs(single / n - 0.3) < 0.015
    assert abs((c["send_payment"] + c["amalgamate"]) / n - 0.2) < 0.015


def test_zipf_top_key_frequency_matches_mass():
    z = ZipfSampler(10_000, 1.0)
    rng = random.Random(5)
    draws = Counter(z.sample(rng) for _ in range(60_000))
    assert abs(draws[1] / 60_000 - z.pmf(1)) < 0.01
    assert draws[1] > draws[2] > draws[10]


def test_zipf_zero_is_uniform():
    z = ZipfSampler(10, 0.0)
    rng = random.Random(1)
    c = Counter(z.sample(rng) for _ in range(20_000))
    assert set(c) == set(range(1, 11))
    assert max(c.values()) / min(c.values()) < 1.15


def _serial(trace, store):
    for p in trace:
        try:
            _, writes = smallbank_contract(p.fn, p.args, store.get)
        except ApplicationError:
            continue
        store.update(writes)


def test_transfers_conserve_money():
    tr = generate(WorkloadSpec(kind="mixed", accounts=50, zipf_theta=1.0), 4, 3000)
    transfers = [p for p in tr if p.fn in ("send_payment", "amalgamate")]
    store = dict(genesis_state(WorkloadSpec(accounts=50)))
    total = sum(store.values())
    _serial(transfers, store)
    assert sum(store.values()) == total


def test_contract_semantics():
    store = {checking(1): 100, saving(1): 50, checking(2): 10}
    reads, writes = smallbank_contract("send_payment", {"a": 1, "b": 2, "amount": 30}, store.get)
    assert reads == [checking(1), checking(2)]
    assert writes == {checking(1): 70, checking(2): 40}
    reads, writes = smallbank_contract("amalgamate", {"a": 1, "b": 2}, store.get)
    assert set(reads) == {saving(1), checking(1), checking(2)}
    assert writes == {saving(1): 0, checking(1): 0, checking(2): 160}
    reads, writes = smallbank_contract("create_account", {"a": 9}, store.get)
    assert reads == [] and writes == {checking(9): INITIAL_BALANCE, saving(9): INITIAL_BALANCE}
    reads, writes = smallbank_contract("query", {"a": 1}, store.get)
    assert len(reads) == 2 and writes == {}
    with pytest.raises(ApplicationError):
        smallbank_contract("send_payment", {"a": 1, "b": 2, "amount": 10_000}, store.get)
    with pytest.raises(ApplicationError):
        smallbank_contract("deposit_checking", {"a": 77, "amount": 1}, store.get)


@pytest.mark.parametrize("fn,args", [("modified", {"reads": [1, 2], "writes": [3]}), ("query", {"a": 1}),
                                     ("write_check", {"a": 1, "amount": 5}), ("amalgamate", {"a": 1, "b": 2}),
                                     ("kv", {"reads": ["x", "y", "z"], "writes": {"q": 1}})])
def test_read_count_matches_contract(fn, args):
    store = {checking(a): 100 for a in range(4)} | {saving(a): 100 for a in range(4)}
    reads, _ = smallbank_contract(fn, args, store.get)
    assert read_count(fn, args) == len(reads)


def test_kv_contract_tolerates_absent_keys():
    reads, writes = smallbank_contract("kv", {"reads": ["nope"], "writes": {"C": 3}}, {}.get)
    assert reads == ["nope"] and writes == {"C": 3}


@settings(max_examples=25)
@given(st.sampled_from(["modified_smallbank", "mixed", "update", "create_account", "noop"]), st.integers(0, 99))
def test_trace_round_trip(tmp_path_factory, kind, seed):
    path = tmp_path_factory.mktemp("tr") / "t.jsonl"
    tr = generate(WorkloadSpec(kind=kind), seed, 40)
    tr.proposals.append(Proposal(40, 99, "kv", {"reads": ["a"], "writes": {"b": 1}}, delay=5, read_interval=3))
    save_trace(tr, path)
    assert load_trace(path).proposals == tr.proposals


def test_malformed_trace_line_reports_line_number(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": 0, "tick": 0, "fn": "noop"}\n\n{"id": 1}\n')
    with pytest.raises(TraceFormatError, match=":3:"):
        load_trace(path)


def test_trace_length_and_iteration():
    tr = Trace([Proposal(0, 0, "noop")])
    assert len(tr) == 1 and [p.id for p in tr] == [0]
