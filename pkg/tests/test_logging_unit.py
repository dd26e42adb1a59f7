import pytest

from cxlsim.config import ClusterConfig
from cxlsim.engine import Engine
from cxlsim.errors import ProtocolViolation
from cxlsim.fabric import Fabric
from cxlsim.logging_unit import DRAM_ENTRY_BYTES, DramEntry, LoggingUnit
from cxlsim.messages import DUMP_DONE, LOG_DUMP, REPL_ACK
from cxlsim.replication import ReplicaMap

from _util import rline


def make_lu(cn=0, num_cns=4, num_mns=2, nr=3, **cfg_over):
    cfg = ClusterConfig(num_cns=num_cns, num_mns=num_mns, cores_per_cn=1,
                        replication_factor=nr, **cfg_over).validate()
    eng = Engine(0)
    fab = Fabric(eng, cfg, num_cns + num_mns)
    rmap = ReplicaMap(num_cns, nr)
    lu = LoggingUnit(cn, cfg, eng, fab, rmap, None)
    inbox = []
    for n in range(num_cns + num_mns):
        fab.register(n, lambda m, n=n: inbox.append((n, m)))
    return lu, eng, fab, inbox


def repl_body(req_cn, line, words, txn):
    return {"req_cn": req_cn, "req_core": 0, "line": line,
            "words": list(words.items()), "txn": txn}


def test_repl_allocates_one_invalid_entry_per_word_and_acks():
    lu, eng, fab, inbox = make_lu()
    line = rline(0)
    lu.on_repl(repl_body(2, line, {0: 10, 3: 11, 5: 12}, txn=901))
    assert len(lu.sram) == 3
    assert all(not e.valid and e.txn == 901 for e in lu.sram)
    eng.drain()
    acks = [m for n, m in inbox if n == 2 and m.kind == REPL_ACK]
    assert len(acks) == 1
    assert acks[0].body["txn"] == 901 and acks[0].body["replica"] == 0


def test_reissued_repl_replaces_stale_invalid_entries():
    lu, eng, fab, inbox = make_lu()
    line = rline(0)
    lu.on_repl(repl_body(2, line, {0: 10, 1: 11}, txn=901))
    lu.on_repl(repl_body(2, line, {0: 20, 1: 21, 2: 22}, txn=901))
    assert len(lu.sram) == 3
    assert sorted(e.value for e in lu.sram) == [20, 21, 22]


def test_val_validates_and_migrates_in_timestamp_order():
    lu, eng, fab, inbox = make_lu()
    a, b = rline(0), rline(1)
    lu.on_repl(repl_body(2, a, {0: 10}, txn=1))
    lu.on_repl(repl_body(2, b, {0: 20}, txn=2))
    # VAL for the younger store arrives first (reordered fabric)
    lu.on_val({"req_cn": 2, "txn": 2, "ts": 2})
    assert lu.dram == []                      # gap: ts=1 still missing
    assert [e.valid for e in lu.sram] == [False, True]
    lu.on_val({"req_cn": 2, "txn": 1, "ts": 1})
    assert [e.line for e in lu.dram] == [a, b]  # migrated 1 then 2
    assert lu.sram == []
    assert lu.ts_inversions == 0
    assert lu.next_expected[2] == 3


def test_gap_rule_holds_until_every_predecessor_arrives():
    lu, eng, fab, inbox = make_lu()
    lu.on_repl(repl_body(2, rline(5), {0: 50}, txn=5))
    lu.on_val({"req_cn": 2, "txn": 5, "ts": 5})
    assert lu.dram == []
    for ts in (1, 2, 3, 4):
        lu.on_repl(repl_body(2, rline(ts), {0: ts}, txn=ts))
        lu.on_val({"req_cn": 2, "txn": ts, "ts": ts})
    assert [e.shadow_ts for e in lu.dram] == [1, 2, 3, 4, 5]


def test_sources_have_independent_timestamp_sequences():
    lu, eng, fab, inbox = make_lu()
    lu.on_repl(repl_body(1, rline(0), {0: 1}, txn=11))
    lu.on_repl(repl_body(2, rline(1), {0: 2}, txn=22))
    lu.on_val({"req_cn": 2, "txn": 22, "ts": 1})
    assert [e.req_cn for e in lu.dram] == [2]
    lu.on_val({"req_cn": 1, "txn": 11, "ts": 1})
    assert [e.req_cn for e in lu.dram] == [2, 1]


def test_unmatched_val_is_a_protocol_violation():
    lu, eng, fab, inbox = make_lu()
    with pytest.raises(ProtocolViolation):
        lu.on_val({"req_cn": 2, "txn": 404, "ts": 1})


def test_sram_overflow_backpressures_and_never_drops():
    lu, eng, fab, inbox = make_lu(sram_log_bytes=64)  # 4 entries
    a, b = rline(0), rline(1)
    lu.on_repl(repl_body(2, a, {0: 1, 1: 2, 2: 3}, txn=1))
    lu.on_repl(repl_body(2, b, {0: 4, 1: 5}, txn=2))   # would overflow
    assert len(lu.sram) == 3 and len(lu._backpressure) == 1
    eng.drain()
    assert len([m for n, m in inbox if m.kind == REPL_ACK]) == 1
    lu.on_val({"req_cn": 2, "txn": 1, "ts": 1})        # frees space
    assert len(lu.sram) == 2 and not lu._backpressure
    eng.drain()
    assert len([m for n, m in inbox if m.kind == REPL_ACK]) == 2


def test_dump_covers_only_lines_this_rank_is_responsible_for():
    # cn0 with Nr=3 over 4 CNs: rank 0 for both lines below, but only the
    # first hashes onto dump-responsibility slot 0
    lu, eng, fab, inbox = make_lu(cn=0)
    keep, skip = rline(4), rline(8)
    for line, val in ((keep, 1), (skip, 2)):
        lu.dram.append(DramEntry(0, 0, line, 0, val, shadow_ts=1))
    lu.start_dump()
    eng.drain()
    segs = [m.body["segment"] for n, m in inbox
            if m.kind == LOG_DUMP and m.body]
    dumped = {e[2] for seg in segs for e in seg}
    assert dumped == {keep}
    assert any(m.kind == DUMP_DONE for n, m in inbox)


def test_dump_compression_and_flit_count():
    # 100 entries x 16 B = 1600 B raw -> ceil(1600/5.8) = 276 B -> 5 flits
    lu, eng, fab, inbox = make_lu(cn=0, num_cns=1, num_mns=1, nr=1)
    line = rline(0)
    for i in range(100):
        lu.dram.append(DramEntry(0, 0, line, i % 8, i, shadow_ts=i + 1))
    lu.start_dump()
    eng.drain()
    dumps = [m for n, m in inbox if m.kind == LOG_DUMP]
    assert len(dumps) == 5
    marked = [m for m in dumps if m.body]
    assert len(marked) == 1
    assert marked[0].body["raw_bytes"] == 1600
    assert marked[0].body["compressed_bytes"] == 276
    assert len(marked[0].body["segment"]) == 100


def test_clear_grant_removes_only_the_dumped_prefix():
    lu, eng, fab, inbox = make_lu(cn=0, num_cns=1, num_mns=1, nr=1)
    lu.dram.append(DramEntry(0, 0, rline(0), 0, 1, shadow_ts=1))
    lu.start_dump()
    # a new entry lands while the dump is in flight
    lu.dram.append(DramEntry(0, 0, rline(1), 0, 2, shadow_ts=2))
    lu.on_clear_grant()
    assert [e.value for e in lu.dram] == [2]
    assert lu.dram_bytes == DRAM_ENTRY_BYTES


def test_traverse_prefers_valid_sram_over_dram_and_skips_invalid():
    lu, eng, fab, inbox = make_lu()
    line = rline(0)
    lu.dram.append(DramEntry(2, 0, line, 0, 100, shadow_ts=1))
    lu.on_repl(repl_body(2, line, {0: 200}, txn=7))
    lu.on_repl(repl_body(2, line, {1: 300}, txn=8))   # stays uncommitted
    lu.on_val({"req_cn": 2, "txn": 7, "ts": 2})       # valid, gapped in SRAM
    res = lu.traverse([line])
    updates = res["lines"][line]
    assert updates[0] == {"word": 0, "value": 200, "from_dram": False}
    assert updates[-1] == {"word": 0, "value": 100, "from_dram": True}
    assert res["skipped_invalid"] == 1


def test_drop_invalid_removes_only_victim_entries():
    lu, eng, fab, inbox = make_lu()
    lu.on_repl(repl_body(1, rline(0), {0: 1}, txn=1))
    lu.on_repl(repl_body(2, rline(1), {0: 2}, txn=2))
    lu.drop_invalid({1})
    assert [e.req_cn for e in lu.sram] == [2]
