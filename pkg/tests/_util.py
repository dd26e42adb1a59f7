"""Shared helpers for building tiny deterministic simulations in tests."""

from cxlsim.fuzz import small_config
from cxlsim.sim import Simulation
from cxlsim.trace import LD, ST, REMOTE_BIT, TraceOp

LINE = 64


def rline(k: int) -> int:
    """k-th remote (MN-backed) line address."""
    return REMOTE_BIT + k * LINE


def st(addr: int) -> TraceOp:
    return TraceOp(ST, addr=addr, remote=True)


def ld(addr: int) -> TraceOp:
    return TraceOp(LD, addr=addr, remote=True)


def mk_traces(cfg, per_core: dict) -> list:
    """Full per-core op-list array; unnamed cores run empty traces."""
    traces = [[] for _ in range(cfg.num_cores)]
    for gid, ops in per_core.items():
        traces[gid] = list(ops)
    return traces


def run_sim(cfg, per_core: dict, seed: int = 0, crash_plan=None) -> Simulation:
    sim = Simulation(cfg, mk_traces(cfg, per_core), seed=seed,
                     crash_plan=crash_plan)
    sim.run()
    return sim


def value_seq(v: int) -> int:
    """Per-core store sequence number encoded in a stored value."""
    return v & ((1 << 40) - 1)


__all__ = ["small_config", "Simulation", "rline", "st", "ld", "mk_traces",
           "run_sim", "value_seq", "LINE"]
