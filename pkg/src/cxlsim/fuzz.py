"""Randomized crash-recovery trials against the consistency oracle."""

from __future__ import annotations

import dataclasses
import random

from .config import ClusterConfig
from .recovery import CrashPlan
from .sim import Simulation
from .trace import PRESETS, ST, generate_trace


def small_config(protocol: str, p_reorder: float = 0.0, nr: int = 3,
                 **overrides) -> ClusterConfig:
    """Desk-scale cluster that keeps a single trial in the millisecond range."""
    base = dict(
        num_cns=4, num_mns=2, cores_per_cn=2, sb_entries=16,
        l1_size=4096, l1_assoc=4, llc_size=32768, llc_assoc=4,
        dump_period_us=50.0, replication_factor=nr,
        protocol=protocol, p_reorder=p_reorder, detect_timeout_us=10.0,
    )
    base.update(overrides)
    return ClusterConfig(**base).validate()


def fuzz_traces(cfg: ClusterConfig, seed: int, ops_per_core: int = 200):
    spec = dataclasses.replace(
        PRESETS["write-heavy"], ops_per_core=ops_per_core,
        footprint_bytes=16 * 1024)
    return generate_trace(spec, cfg.num_cores, seed,
                          line_bytes=cfg.line_bytes,
                          word_bytes=cfg.word_bytes)


def run_trial(seed: int, protocol: str, p_reorder: float,
              num_victims: int = 1, nr: int = 3,
              ops_per_core: int = 200) -> dict:
    """One randomized crash trial; returns the oracle verdict and counters."""
    cfg = small_config(protocol, p_reorder, nr)
    traces = fuzz_traces(cfg, seed, ops_per_core)
    rng = random.Random(f"{seed}/fuzz")
    remote_stores = sum(1 for ops in traces for op in ops
                        if op.kind == ST and op.remote)
    hi = max(2, int(remote_stores * 0.5))
    plan = CrashPlan(
        victims=tuple(rng.sample(range(cfg.num_cns), num_victims)),
        after_commits=rng.randint(1, hi))
    sim = Simulation(cfg, traces, seed=seed, crash_plan=plan)
    sim.run()
    verify = sim.verify()
    lost = [f for f in verify["failures"] if f["check"] == "committed"]
    return {
        "seed": seed, "protocol": protocol, "p_reorder": p_reorder,
        "victims": plan.victims, "crash_fired": sim.crash_fired,
        "ok": verify["ok"], "failures": verify["failures"],
        "committed_lost": len(lost),
        "gate_violations": sim.gate_violations,
        "ts_inversions": sum(n.lu.ts_inversions for n in sim.nodes),
        "words_checked": verify["words_checked"],
        "commits": sim.n_commits,
    }


def _sole_replica_line(cfg: ClusterConfig, victim: int) -> int:
    """A remote line whose single-member replica group is the victim."""
    from .trace import REMOTE_BIT
    for k in range(cfg.num_cns * 4):
        line = REMOTE_BIT + k * cfg.line_bytes
        if (line // cfg.line_bytes) % cfg.num_cns == victim:
            return line
    raise AssertionError("unreachable")


def run_tightness_demo(nr: int, seed: int = 0) -> dict:
    """Crash the sole holder of a line's log right after its store commits.

    With nr=1 the committed value has exactly one log copy, on the victim
    itself, so recovery must lose it; any nr >= 2 keeps a surviving copy.
    """
    from .trace import TraceOp
    cfg = small_config("PARALLEL", 0.0, nr)
    victim = 1
    line = _sole_replica_line(cfg, victim)
    traces = [[] for _ in range(cfg.num_cores)]
    traces[victim * cfg.cores_per_cn] = [TraceOp(ST, addr=line, remote=True)]
    plan = CrashPlan(victims=(victim,), after_commits=1)
    sim = Simulation(cfg, traces, seed=seed, crash_plan=plan)
    sim.run()
    verify = sim.verify()
    lost = [f for f in verify["failures"] if f["check"] == "committed"]
    return {"nr": nr, "ok": verify["ok"], "committed_lost": len(lost),
            "crash_fired": sim.crash_fired}
