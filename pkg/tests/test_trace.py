import pytest
from hypothesis import given, settings, strategies as st

from cxlsim.errors import BarrierMismatch, ParseError, SpecError
from cxlsim.trace import (BAR, LD, LOCK, PRESETS, REMOTE_BIT, ST, UNLOCK,
                          WorkloadSpec, generate_trace, is_remote, load_trace,
                          measure_fractions, save_trace)


def test_remote_bit_partitioning():
    assert is_remote(REMOTE_BIT)
    assert is_remote(REMOTE_BIT + 4096)
    assert not is_remote(0x1000)


def test_save_load_round_trip(tmp_path):
    traces = generate_trace(PRESETS["write-heavy"], 4, seed=11)
    p = tmp_path / "t.trace"
    save_trace(p, traces)
    back = load_trace(p)
    assert len(back) == len(traces)
    for a, b in zip(traces, back):
        assert [(o.kind, o.addr, o.remote, o.sync_id, o.cycles) for o in a] \
            == [(o.kind, o.addr, o.remote, o.sync_id, o.cycles) for o in b]


def test_barrier_count_mismatch_rejected(tmp_path):
    p = tmp_path / "bad.trace"
    p.write_text("c0 BAR 1000\nc1 LD 0x40 L\n")
    with pytest.raises(BarrierMismatch):
        load_trace(p)


@pytest.mark.parametrize("line", [
    "garbage",
    "c0 LD 0x40 X",       # bad remote/local flag
    "c0 FOO 1",           # unknown mnemonic
    "cX LD 0x40 L",       # bad core id
    "c0 LD zz L",         # bad operand
    "c0 BAR",             # missing operand
])
def test_malformed_lines_rejected(tmp_path, line):
    p = tmp_path / "bad.trace"
    p.write_text(line + "\n")
    with pytest.raises(ParseError):
        load_trace(p)


def test_generation_is_deterministic_per_seed():
    a = generate_trace(PRESETS["ycsb-like"], 4, seed=3)
    b = generate_trace(PRESETS["ycsb-like"], 4, seed=3)
    c = generate_trace(PRESETS["ycsb-like"], 4, seed=4)
    assert a == b
    assert a != c


def test_fractions_match_spec_within_one_percent():
    for name in ("ycsb-like", "sparse-sync"):
        spec = PRESETS[name]
        big = WorkloadSpec(**{**spec.__dict__, "ops_per_core": 20000})
        frac = measure_fractions(generate_trace(big, 2, seed=9))
        assert frac["remote_fraction"] == \
            pytest.approx(spec.remote_fraction, abs=0.01)
        assert frac["write_fraction"] == \
            pytest.approx(spec.write_fraction, abs=0.01)


def test_barrier_counts_equal_across_cores():
    traces = generate_trace(PRESETS["sparse-sync"], 8, seed=1)
    counts = []
    for ops in traces:
        c = {}
        for op in ops:
            if op.kind == BAR:
                c[op.sync_id] = c.get(op.sync_id, 0) + 1
        counts.append(c)
    assert all(c == counts[0] for c in counts)
    assert counts[0]  # the preset actually emits barriers


def test_locks_are_balanced_and_nested_depth_one():
    traces = generate_trace(PRESETS["write-heavy"], 8, seed=2)
    for ops in traces:
        held = None
        for op in ops:
            if op.kind == LOCK:
                assert held is None
                held = op.sync_id
            elif op.kind == UNLOCK:
                assert held == op.sync_id
                held = None
        assert held is None


def _audit_drf(traces):
    """Independent happens-before audit: any two same-word accesses from
    different cores with a write in the pair must be separated by a barrier
    (different global phase) or both hold a common lock."""
    by_word = {}
    for core, ops in enumerate(traces):
        phase = 0
        locks = set()
        for op in ops:
            if op.kind == BAR:
                phase += 1
            elif op.kind == LOCK:
                locks.add(op.sync_id)
            elif op.kind == UNLOCK:
                locks.discard(op.sync_id)
            elif op.kind in (LD, ST) and op.remote:
                rec = (core, phase, frozenset(locks), op.kind == ST)
                by_word.setdefault(op.addr, set()).add(rec)
    for addr, recs in by_word.items():
        recs = sorted(recs)
        for i, a in enumerate(recs):
            for b in recs[i + 1:]:
                if a[0] == b[0] or not (a[3] or b[3]):
                    continue
                assert a[1] != b[1] or (a[2] & b[2]), \
                    f"race on {addr:#x}: {a} vs {b}"


def _writers_disjoint(traces):
    writer = {}
    for core, ops in enumerate(traces):
        for op in ops:
            if op.kind == ST and op.remote:
                assert writer.setdefault(op.addr, core) == core, \
                    f"word {op.addr:#x} written by two cores"


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_generated_traces_are_race_free(name):
    traces = generate_trace(PRESETS[name], 8, seed=5)
    _audit_drf(traces)


@pytest.mark.parametrize("name", ["ycsb-like", "write-heavy"])
def test_each_shared_word_has_one_writer(name):
    _writers_disjoint(generate_trace(PRESETS[name], 8, seed=6))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6), cores=st.integers(1, 8),
       wf=st.floats(0.0, 1.0), rf=st.floats(0.0, 1.0))
def test_arbitrary_specs_generate_race_free_traces(seed, cores, wf, rf):
    spec = WorkloadSpec(ops_per_core=120, remote_fraction=rf,
                        write_fraction=wf, sync_density=10.0,
                        footprint_bytes=16 * 1024)
    traces = generate_trace(spec, cores, seed)
    assert len(traces) == cores
    assert all(len([o for o in t if o.kind in (LD, ST)]) == 120
               for t in traces)
    _audit_drf(traces)
    _writers_disjoint(traces)


@pytest.mark.parametrize("bad", [
    {"ops_per_core": 0},
    {"write_fraction": 1.5},
    {"footprint_bytes": 8},
    {"access_distribution": "pareto"},
])
def test_bad_specs_rejected(bad):
    with pytest.raises(SpecError):
        WorkloadSpec(**bad).validate()


def test_zipf_and_stride_distributions_generate():
    for dist in ("zipf", "stride"):
        spec = WorkloadSpec(ops_per_core=200, access_distribution=dist,
                            footprint_bytes=32 * 1024)
        traces = generate_trace(spec, 2, seed=0)
        assert sum(len(t) for t in traces) >= 400
