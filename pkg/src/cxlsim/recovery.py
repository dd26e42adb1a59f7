"""Crash injection, recovery coordination, and the golden-state oracle.

The oracle lives outside the modeled system: it records every committed
word update (and, at crash time, the victim's replicated-but-uncommitted
values) and is never read by protocol logic. After recovery it checks that
the cluster-visible memory view contains exactly the committed values, that
no directory residue of a victim remains, and that at most one cache owns
any line.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .engine import ns_to_ps
from .messages import (INIT_RECOV, INTERRUPT, RECOV_END, Message)
from .replication import ACKS_COMPLETE, REPLS_SENT


@dataclass(slots=True)
class CrashPlan:
    victims: tuple            # CN ids, crashed simultaneously
    at_time_ps: int = 0       # absolute crash time; or
    after_commits: int = 0    # crash when the cluster-wide commit count hits N


class GoldenHistory:
    def __init__(self, cfg):
        self.cfg = cfg
        self.committed: dict[int, int] = {}     # word addr -> last value
        self.commit_seq: dict[int, int] = {}    # word addr -> order stamp
        self.in_flight: dict[int, set] = {}     # word addr -> candidate values
        self.n_commits = 0

    def record_commit(self, cn: int, gid: int, line: int, words: dict) -> None:
        wb = self.cfg.word_bytes
        self.n_commits += 1
        for idx, value in words.items():
            addr = line + idx * wb
            self.committed[addr] = value
            self.commit_seq[addr] = self.n_commits

    def freeze_inflight(self, node) -> None:
        """Record the victim's replicated-but-uncommitted values at crash."""
        wb = self.cfg.word_bytes
        for core in node.cores:
            for slot in core.sb:
                if slot.repl_state in (REPLS_SENT, ACKS_COMPLETE):
                    for idx, value in slot.words.items():
                        addr = slot.line + idx * wb
                        self.in_flight.setdefault(addr, set()).add(value)


def cluster_view(sim) -> dict:
    """Word-address -> value as the surviving cluster can reconstruct it:
    MN memory overlaid with live CNs' dirty (M-state) words."""
    view = {}
    for mn in sim.mns:
        view.update(mn.memory)
    wb = sim.cfg.word_bytes
    for node in sim.nodes:
        if node.dead:
            continue
        for line, (state, words) in node.table.items():
            if state == "M":
                for idx, value in words.items():
                    view[line + idx * wb] = value
    return view


def verify_recovery(sim) -> dict:
    """Consistency check of the post-recovery (or post-drain) state."""
    golden = sim.golden
    view = cluster_view(sim)
    failures = []
    for addr, value in golden.committed.items():
        got = view.get(addr)
        if got != value:
            failures.append({"check": "committed", "addr": addr,
                             "expect": value, "got": got})
    for addr, value in view.items():
        if addr in golden.committed:
            continue
        if value in golden.in_flight.get(addr, ()):
            continue
        failures.append({"check": "uncommitted-residue", "addr": addr,
                         "got": value})
    dead = {cn for cn in range(sim.cfg.num_cns) if sim.nodes[cn].dead}
    for mn in sim.mns:
        for line, e in mn.directory.items():
            if e.sharers & dead or e.owner in dead:
                failures.append({"check": "directory-residue", "line": line,
                                 "state": e.state, "owner": e.owner,
                                 "sharers": sorted(e.sharers)})
    holders: dict[int, list] = {}
    for node in sim.nodes:
        if node.dead:
            continue
        for line, (state, _w) in node.table.items():
            if state in ("M", "E"):
                holders.setdefault(line, []).append(node.cn)
    for line, who in holders.items():
        if len(who) > 1:
            failures.append({"check": "single-owner", "line": line,
                             "holders": who})
    return {"ok": not failures, "failures": failures,
            "words_checked": len(golden.committed)}


@dataclass(slots=True)
class RecoveryReport:
    victims: tuple
    t_start_ps: int
    t_interrupt_done_ps: int = 0
    t_init_done_ps: int = 0
    t_end_ps: int = 0
    n_interrupts: int = 0
    n_init_recov: int = 0
    n_recov_end: int = 0
    fetch_rtts: int = 0
    mn_reports: list = field(default_factory=list)


class RecoveryCoordinator:
    """Configuration Manager: drives Interrupt -> InitRecov -> RecovEnd.

    The CM is core 0 of the lowest-numbered live CN; it learns of failures
    via MSI. MSIs arriving within a short window are batched into one round;
    MSIs arriving mid-recovery queue a follow-up round.
    """

    BATCH_PS = ns_to_ps(200)

    def __init__(self, sim):
        self.sim = sim
        self.phase = None
        self.cm_cn = -1
        self.victims: set = set()
        self._incoming: set = set()
        self._pending: set = set()
        self.report: RecoveryReport | None = None
        self.reports: list[RecoveryReport] = []
        self.rounds = 0

    @property
    def busy(self) -> bool:
        return self.phase is not None or bool(self._incoming)

    def handle(self, msg: Message) -> None:
        k = msg.kind
        if k == "MSI":
            self._on_msi(msg.body["failed_cn"])
        elif k == "InterruptResp" and self.phase == "interrupt":
            self._pending.discard(msg.body["cn"])
            if not self._pending:
                self._init_recov()
        elif k == "InitRecovResp" and self.phase == "init":
            self._pending.discard(msg.body["mn"])
            self.report.mn_reports.append(dict(msg.body))
            self.report.fetch_rtts += msg.body["fetch_rtts"]
            if not self._pending:
                self._recov_end()
        elif k == "RecovEndResp" and self.phase == "end":
            self._pending.discard(msg.body["cn"])
            if not self._pending:
                self._finish()

    def _on_msi(self, failed_cn: int) -> None:
        self._incoming.add(failed_cn)
        if self.phase is None and len(self._incoming) == 1:
            self.sim.engine.after(self.BATCH_PS, self._maybe_start)

    def _maybe_start(self) -> None:
        if self.phase is not None or not self._incoming:
            return
        self.victims = set(self._incoming)
        self._incoming.clear()
        self.rounds += 1
        live = self.sim.live_cns()
        self.cm_cn = min(live)
        self.phase = "interrupt"
        self.report = RecoveryReport(victims=tuple(sorted(self.victims)),
                                     t_start_ps=self.sim.engine.now)
        self._pending = set(live)
        for cn in sorted(live):
            self.report.n_interrupts += 1
            self.sim.fabric.send(Message(INTERRUPT, self.cm_cn, cn,
                                         body={"victims":
                                               sorted(self.victims)}))

    def _init_recov(self) -> None:
        self.phase = "init"
        self.report.t_interrupt_done_ps = self.sim.engine.now
        mns = [mn.node_id for mn in self.sim.mns]
        self._pending = set(mns)
        for mn in mns:
            self.report.n_init_recov += 1
            self.sim.fabric.send(Message(INIT_RECOV, self.cm_cn, mn,
                                         body={"victims":
                                               sorted(self.victims)}))

    def _recov_end(self) -> None:
        self.phase = "end"
        self.report.t_init_done_ps = self.sim.engine.now
        live = self.sim.live_cns()
        self._pending = set(live)
        for cn in sorted(live):
            self.report.n_recov_end += 1
            self.sim.fabric.send(Message(RECOV_END, self.cm_cn, cn,
                                         body={"victims":
                                               sorted(self.victims)}))

    def _finish(self) -> None:
        self.report.t_end_ps = self.sim.engine.now
        self.reports.append(self.report)
        done = self.victims
        self.phase = None
        self.victims = set()
        self.report = None
        self.sim.on_recovery_done(done)
        if self._incoming:
            self.sim.engine.after(1, self._maybe_start)
