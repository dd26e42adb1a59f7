"""Trace file format and synthetic workload generation.

Addresses with bit 47 set live in the MN-backed shared range; everything
else is CN-local. Generated traces are data-race-free by construction:
shared-region accesses are guarded by locks and every core executes the
same number of barriers.
"""

from __future__ import annotations

import bisect
import random
from dataclasses import dataclass, field

from .errors import BarrierMismatch, ParseError, SpecError

LD = "LD"
ST = "ST"
LOCK = "LOCK"
UNLOCK = "UNLOCK"
BAR = "BAR"
CMP = "CMP"

REMOTE_BIT = 1 << 47


def is_remote(addr: int) -> bool:
    return bool(addr & REMOTE_BIT)


@dataclass(slots=True)
class TraceOp:
    kind: str
    addr: int = 0
    remote: bool = False
    sync_id: int = 0
    cycles: int = 0


def save_trace(path, per_core: list[list[TraceOp]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# cxlsim trace\n")
        for core, ops in enumerate(per_core):
            for op in ops:
                if op.kind in (LD, ST):
                    rl = "R" if op.remote else "L"
                    fh.write(f"c{core} {op.kind} {op.addr:#x} {rl}\n")
                elif op.kind in (LOCK, UNLOCK):
                    fh.write(f"c{core} {op.kind} {op.sync_id}\n")
                elif op.kind == BAR:
                    fh.write(f"c{core} BAR {op.sync_id}\n")
                elif op.kind == CMP:
                    fh.write(f"c{core} CMP {op.cycles}\n")
                else:
                    raise SpecError(f"unknown op kind {op.kind}")


def load_trace(path) -> list[list[TraceOp]]:
    per_core: dict[int, list[TraceOp]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) < 2 or not parts[0].startswith("c"):
                raise ParseError(f"malformed line {line!r}", ln)
            try:
                core = int(parts[0][1:])
            except ValueError:
                raise ParseError(f"bad core id {parts[0]!r}", ln)
            mnem = parts[1]
            try:
                if mnem in (LD, ST):
                    addr = int(parts[2], 16)
                    remote = parts[3] == "R"
                    if parts[3] not in ("R", "L"):
                        raise ParseError(f"bad R|L flag {parts[3]!r}", ln)
                    op = TraceOp(mnem, addr=addr, remote=remote)
                elif mnem in (LOCK, UNLOCK, BAR):
                    op = TraceOp(mnem, sync_id=int(parts[2]))
                elif mnem == CMP:
                    op = TraceOp(CMP, cycles=int(parts[2]))
                else:
                    raise ParseError(f"unknown op mnemonic {mnem!r}", ln)
            except IndexError:
                raise ParseError(f"missing operand in {line!r}", ln)
            except ValueError:
                raise ParseError(f"bad operand in {line!r}", ln)
            per_core.setdefault(core, []).append(op)
    if not per_core:
        return []
    ncores = max(per_core) + 1
    traces = [per_core.get(c, []) for c in range(ncores)]
    _check_barriers(traces)
    return traces


def _check_barriers(traces: list[list[TraceOp]]) -> None:
    counts = []
    for ops in traces:
        c: dict[int, int] = {}
        for op in ops:
            if op.kind == BAR:
                c[op.sync_id] = c.get(op.sync_id, 0) + 1
        counts.append(c)
    if any(c != counts[0] for c in counts[1:]):
        raise BarrierMismatch(
            f"barrier counts differ across cores: {counts}"
        )


# ---------------------------------------------------------------------------
# Synthetic workloads


@dataclass
class WorkloadSpec:
    name: str = "custom"
    ops_per_core: int = 1000
    remote_fraction: float = 0.5
    write_fraction: float = 0.2
    access_distribution: str = "uniform"   # uniform | zipf | stride
    zipf_theta: float = 0.9
    footprint_bytes: int = 1 * 1024 * 1024
    coalescing_run_length: float = 1.0
    sync_density: float = 2.0              # locks+barriers per kilo-op
    compute_fraction: float = 0.05

    def validate(self) -> "WorkloadSpec":
        for key in ("remote_fraction", "write_fraction", "compute_fraction"):
            v = getattr(self, key)
            if not 0.0 <= v <= 1.0:
                raise SpecError(f"{key}={v} outside [0, 1]")
        if self.ops_per_core <= 0:
            raise SpecError("ops_per_core must be positive")
        if self.footprint_bytes < 64:
            raise SpecError("footprint_bytes too small")
        if self.access_distribution not in ("uniform", "zipf", "stride"):
            raise SpecError(
                f"unknown access_distribution {self.access_distribution!r}"
            )
        return self


PRESETS: dict[str, WorkloadSpec] = {
    # YCSB-like: all accesses reference the shared CXL range, 80% reads.
    "ycsb-like": WorkloadSpec(
        name="ycsb-like", remote_fraction=1.0, write_fraction=0.2,
        access_distribution="uniform", footprint_bytes=512 * 1024,
        coalescing_run_length=1.0, sync_density=1.0, compute_fraction=0.02,
    ),
    # Ocean-like: 40% of all ops are remote writes, streaming strides.
    "write-heavy": WorkloadSpec(
        name="write-heavy", remote_fraction=0.8, write_fraction=0.5,
        access_distribution="stride", footprint_bytes=256 * 1024,
        coalescing_run_length=3.0, sync_density=1.0, compute_fraction=0.05,
    ),
    # Runs of 3-8 same-line stores.
    "coalesce-friendly": WorkloadSpec(
        name="coalesce-friendly", remote_fraction=0.7, write_fraction=0.6,
        access_distribution="uniform", footprint_bytes=128 * 1024,
        coalescing_run_length=5.0, sync_density=1.0, compute_fraction=0.05,
    ),
    # Barrier-dominated.
    "sparse-sync": WorkloadSpec(
        name="sparse-sync", remote_fraction=0.5, write_fraction=0.3,
        access_distribution="uniform", footprint_bytes=128 * 1024,
        coalescing_run_length=1.0, sync_density=20.0, compute_fraction=0.2,
    ),
}


class _Zipf:
    def __init__(self, n: int, theta: float):
        weights = [1.0 / (i + 1) ** theta for i in range(n)]
        total = 0.0
        self.cdf = []
        for w in weights:
            total += w
            self.cdf.append(total)
        self.total = total

    def sample(self, rng: random.Random) -> int:
        return bisect.bisect_left(self.cdf, rng.random() * self.total)


@dataclass
class _CoreGen:
    rng: random.Random
    ops: list[TraceOp] = field(default_factory=list)
    stride_pos: int = 0
    run_left: int = 0
    run_line: int = 0
    run_word: int = 0


def generate_trace(spec: WorkloadSpec, num_cores: int, seed: int,
                   line_bytes: int = 64, word_bytes: int = 8,
                   num_regions: int | None = None) -> list[list[TraceOp]]:
    """Deterministic per-core op sequences for a workload spec.

    Remote lines are split into per-core private pools (no sync needed) and
    lock-guarded shared regions; all accesses to a region happen inside a
    LOCK/UNLOCK pair on the region's id, so the result is race-free.
    """
    spec.validate()
    total_lines = max(num_cores * 2, spec.footprint_bytes // line_bytes)
    if num_regions is None:
        num_regions = max(1, min(16, num_cores))
    shared_lines = max(num_regions * num_cores, total_lines // 4)
    private_lines = max(1, (total_lines - shared_lines) // num_cores)
    words_per_line = line_bytes // word_bytes

    base = REMOTE_BIT
    region_pool = [
        [base + (r + num_regions * k) * line_bytes
         for k in range(shared_lines // num_regions)]
        for r in range(num_regions)
    ]
    priv_base = base + shared_lines * line_bytes

    zipf = None
    if spec.access_distribution == "zipf":
        zipf = _Zipf(private_lines, spec.zipf_theta)

    n_sync = spec.sync_density * spec.ops_per_core / 1000.0
    n_barriers = max(0, int(round(n_sync * 0.25)))
    # Each lock burst contributes a LOCK and an UNLOCK.
    n_bursts = max(0, int(round((n_sync - n_barriers) / 2.0)))
    barrier_at = [
        (i + 1) * spec.ops_per_core // (n_barriers + 1)
        for i in range(n_barriers)
    ]

    cores = []
    for core in range(num_cores):
        g = _CoreGen(rng=random.Random(f"{seed}/trace/{core}"))
        burst_at = sorted(
            g.rng.randrange(spec.ops_per_core) for _ in range(n_bursts)
        )
        emitted = 0
        next_bar = 0
        bi = 0
        in_region = -1
        burst_ops_left = 0
        while emitted < spec.ops_per_core:
            while next_bar < n_barriers and emitted >= barrier_at[next_bar]:
                if in_region >= 0:
                    g.ops.append(TraceOp(UNLOCK, sync_id=in_region))
                    in_region = -1
                    burst_ops_left = 0
                g.ops.append(TraceOp(BAR, sync_id=1000 + next_bar))
                next_bar += 1
            if in_region < 0 and bi < n_bursts and emitted >= burst_at[bi]:
                in_region = g.rng.randrange(num_regions)
                burst_ops_left = g.rng.randint(3, 8)
                g.ops.append(TraceOp(LOCK, sync_id=in_region))
                bi += 1
            if g.rng.random() < spec.compute_fraction:
                g.ops.append(TraceOp(CMP, cycles=g.rng.randint(1, 20)))
            _emit_access(g, spec, core, num_cores, in_region, region_pool,
                         priv_base, private_lines, line_bytes,
                         words_per_line, word_bytes, zipf)
            emitted += 1
            if in_region >= 0:
                burst_ops_left -= 1
                if burst_ops_left <= 0:
                    g.ops.append(TraceOp(UNLOCK, sync_id=in_region))
                    in_region = -1
        if in_region >= 0:
            g.ops.append(TraceOp(UNLOCK, sync_id=in_region))
        while next_bar < n_barriers:
            g.ops.append(TraceOp(BAR, sync_id=1000 + next_bar))
            next_bar += 1
        cores.append(g.ops)
    return cores


def _emit_access(g: _CoreGen, spec: WorkloadSpec, core: int, num_cores: int,
                 in_region: int, region_pool, priv_base: int,
                 private_lines: int, line_bytes: int, words_per_line: int,
                 word_bytes: int, zipf) -> None:
    rng = g.rng
    remote = rng.random() < spec.remote_fraction
    write = rng.random() < spec.write_fraction

    if in_region >= 0:
        g.run_left = 0  # never continue a private-line run inside a region

    if write and g.run_left > 0 and remote:
        # continue a coalescing run of same-line stores
        g.run_word += 1
        if g.run_word < words_per_line:
            g.run_left -= 1
            g.ops.append(TraceOp(ST, addr=g.run_line + g.run_word * word_bytes,
                                 remote=True))
            return
        g.run_left = 0

    if not remote:
        # core-private local address space
        line = (core << 24) | (rng.randrange(private_lines) * line_bytes)
        addr = line + rng.randrange(words_per_line) * word_bytes
        g.ops.append(TraceOp(ST if write else LD, addr=addr, remote=False))
        return

    if in_region >= 0:
        pool = region_pool[in_region]
        if write:
            # writes stay on a per-core slice of the region so the final
            # image is independent of lock-acquisition timing; reads range
            # over the whole region and pull lines away from their writers
            sub = pool[core % len(pool)::num_cores]
            line = sub[rng.randrange(len(sub))]
        else:
            line = pool[rng.randrange(len(pool))]
    else:
        if spec.access_distribution == "stride":
            idx = g.stride_pos % private_lines
            g.stride_pos += 1
        elif zipf is not None:
            idx = zipf.sample(rng)
        else:
            idx = rng.randrange(private_lines)
        line = priv_base + (core * private_lines + idx) * line_bytes
    word = rng.randrange(words_per_line)
    g.ops.append(TraceOp(ST if write else LD,
                         addr=line + word * word_bytes, remote=True))
    if write and in_region < 0 and spec.coalescing_run_length > 1.2:
        run = min(words_per_line - 1,
                  int(rng.expovariate(1.0 / (spec.coalescing_run_length))) )
        if run > 0:
            g.run_left = run
            g.run_line = line
            g.run_word = word


def measure_fractions(traces: list[list[TraceOp]]) -> dict:
    mem = rem = wr = 0
    for ops in traces:
        for op in ops:
            if op.kind in (LD, ST):
                mem += 1
                if op.remote:
                    rem += 1
                if op.kind == ST:
                    wr += 1
    return {
        "mem_ops": mem,
        "remote_fraction": rem / mem if mem else 0.0,
        "write_fraction": wr / mem if mem else 0.0,
    }
