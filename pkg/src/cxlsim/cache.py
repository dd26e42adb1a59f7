"""Compute-node model: cores, caches, TSO store buffers, coherence agent.

Each CN runs `cores_per_cn` trace-driven cores over a private L1 tag array
and a shared LLC tag array (timing only). Remote-line ownership and dirty
words live in a per-CN line table; remote stores retire into a per-core
store buffer where consecutive same-line stores coalesce, an exclusive
prefetch is issued at consume time, and the head drains only once the
commit gate (ownership held and, under the replicated variants, all
REPL_ACKs collected) is satisfied. Commits fan out VAL messages carrying
per-destination logical timestamps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .engine import core_cycles_to_ps, ns_to_ps
from .messages import (BAR_ARRIVE, FETCH_RESP, INTERRUPT_RESP, INV_ACK,
                       LOCK_REL, LOCK_REQ, RD, RDX, RECOV_END_RESP, REPL,
                       FETCH_LATEST_RESP, VAL, WB_EVICT, WT_STORE, Message,
                       message_size)
from .replication import (ACKS_COMPLETE, NOT_SENT, REPLS_SENT,
                          TimestampCounters)
from .trace import BAR, CMP, LD, LOCK, ST, UNLOCK

M, E, S = "M", "E", "S"

SB_RETIRE_CYCLES = 1

VARIANTS = ("BASELINE", "PARALLEL", "PROACTIVE")


def line_of(addr: int, line_bytes: int) -> int:
    return addr & ~(line_bytes - 1)


class TagArray:
    """Set-associative LRU tag array; tracks presence for latency only."""

    def __init__(self, size_bytes: int, assoc: int, line_bytes: int):
        self.assoc = assoc
        self.num_sets = max(1, size_bytes // (assoc * line_bytes))
        self.line_bytes = line_bytes
        self.sets: dict[int, list[int]] = {}

    def _set(self, line: int) -> list:
        return self.sets.setdefault((line // self.line_bytes)
                                    % self.num_sets, [])

    def lookup(self, line: int) -> bool:
        ways = self._set(line)
        if line in ways:
            ways.remove(line)
            ways.insert(0, line)
            return True
        return False

    def insert(self, line: int, pinned=None):
        """Insert as MRU; returns the evicted line or None."""
        ways = self._set(line)
        if line in ways:
            ways.remove(line)
            ways.insert(0, line)
            return None
        ways.insert(0, line)
        if len(ways) <= self.assoc:
            return None
        for i in range(len(ways) - 1, 0, -1):
            if pinned is None or not pinned(ways[i]):
                return ways.pop(i)
        return None  # everything pinned: run transiently oversubscribed

    def invalidate(self, line: int) -> None:
        ways = self._set(line)
        if line in ways:
            ways.remove(line)


@dataclass(slots=True)
class SBSlot:
    txn: int
    line: int
    words: dict                      # word index -> value
    remote: bool = True
    repl_state: int = NOT_SENT
    acks_needed: set = field(default_factory=set)
    enqueue_time: int = 0


class Core:
    IDLE, RUNNING, WAIT_LOAD, WAIT_LOCK, WAIT_BARRIER, SB_FULL, \
        DRAIN_SYNC, DONE = range(8)

    def __init__(self, node, idx: int, ops):
        self.node = node
        self.idx = idx
        self.gid = node.cn * node.cfg.cores_per_cn + idx
        self.ops = ops
        self.pc = 0
        self.state = Core.IDLE
        self.sb: list[SBSlot] = []
        self.l1 = TagArray(node.cfg.l1_size, node.cfg.l1_assoc,
                           node.cfg.line_bytes)
        self.store_seq = 0
        self.done = False
        self._want_resume = False
        self._wait_line = -1
        self.n_l1_hits = 0
        self.n_llc_hits = 0
        self.n_commits = 0
        self.n_sb_full = 0

    # -- execution loop ------------------------------------------------------

    def start(self) -> None:
        self.state = Core.RUNNING
        self.node.engine.after(1, self._resume)

    def _resume(self) -> None:
        node = self.node
        if node.dead or self.done:
            return
        if node.paused:
            self._want_resume = True
            return
        cfg = node.cfg
        acc = 0
        while self.pc < len(self.ops):
            op = self.ops[self.pc]
            k = op.kind
            if k == CMP:
                acc += core_cycles_to_ps(max(1, op.cycles))
                self.pc += 1
                continue
            if k == LD:
                t = self._load_latency(op.addr, op.remote)
                if t is not None:
                    acc += t
                    self.pc += 1
                    continue
                # remote miss: issue Rd (or piggyback) and block
                if acc:
                    node.engine.after(acc, self._resume)
                    return
                self.state = Core.WAIT_LOAD
                self._wait_line = line_of(op.addr, cfg.line_bytes)
                node.issue_read(self, self._wait_line)
                return
            if k == ST and not op.remote:
                acc += self._touch(op.addr)
                self.pc += 1
                continue
            # side-effecting ops run at an exact simulation time
            if acc:
                node.engine.after(acc, self._resume)
                return
            if k == ST:
                if not self._push_store(op.addr):
                    self.state = Core.SB_FULL
                    return
                self.pc += 1
                acc += core_cycles_to_ps(SB_RETIRE_CYCLES)
                continue
            if k == LOCK:
                self.state = Core.WAIT_LOCK
                node.send_sync(Message(LOCK_REQ, node.cn, node.sync_node,
                                       body={"core": self.idx,
                                             "id": op.sync_id}))
                self.pc += 1
                return
            if k == UNLOCK:
                if self.sb:
                    self.state = Core.DRAIN_SYNC  # TSO release: drain first
                    return
                node.send_sync(Message(LOCK_REL, node.cn, node.sync_node,
                                       body={"core": self.idx,
                                             "id": op.sync_id}))
                self.pc += 1
                continue
            if k == BAR:
                if self.sb:
                    self.state = Core.DRAIN_SYNC
                    return
                self.state = Core.WAIT_BARRIER
                node.send_sync(Message(BAR_ARRIVE, node.cn, node.sync_node,
                                       body={"core": self.idx,
                                             "id": op.sync_id}))
                self.pc += 1
                return
            raise AssertionError(f"unknown op kind {k}")
        if acc:
            node.engine.after(acc, self._finish)
            return
        self._finish()

    def _finish(self) -> None:
        if self.sb:
            self.state = Core.DRAIN_SYNC  # drain before reporting done
            return
        if not self.done:
            self.done = True
            self.state = Core.DONE
            self.node.sim.on_core_done()

    def resume(self) -> None:
        self.state = Core.RUNNING
        if self.node.paused:
            self._want_resume = True
        else:
            self._resume()

    def on_sb_change(self) -> None:
        """A slot drained: unblock SB-full stalls and sync drains."""
        if self.state == Core.SB_FULL:
            self.resume()
        elif self.state == Core.DRAIN_SYNC and not self.sb:
            self.resume()

    # -- latency helpers -----------------------------------------------------

    def _touch(self, addr: int) -> int:
        """Charge the hit level for a local (or locally cached) access."""
        cfg = self.node.cfg
        line = line_of(addr, cfg.line_bytes)
        if self.l1.lookup(line):
            self.n_l1_hits += 1
            return core_cycles_to_ps(cfg.l1_latency)
        if self.node.llc.lookup(line):
            self.n_llc_hits += 1
            self._fill_l1(line)
            return core_cycles_to_ps(cfg.llc_latency)
        self.node.fill(line, self)
        return ns_to_ps(cfg.dram_ns)  # CN-local DRAM

    def _load_latency(self, addr: int, remote: bool):
        """Latency if the load completes without a fabric round trip."""
        cfg = self.node.cfg
        if not remote:
            return self._touch(addr)
        line = line_of(addr, cfg.line_bytes)
        word = (addr - line) // cfg.word_bytes
        for slot in reversed(self.sb):
            if slot.line == line and word in slot.words:
                return core_cycles_to_ps(cfg.l1_latency)  # SB forwarding
        if line in self.node.table:
            return self._touch(addr)
        return None

    def _fill_l1(self, line: int) -> None:
        self.l1.insert(line, pinned=None)

    # -- stores --------------------------------------------------------------

    def _push_store(self, addr: int) -> bool:
        node = self.node
        cfg = node.cfg
        line = line_of(addr, cfg.line_bytes)
        word = (addr - line) // cfg.word_bytes
        self.store_seq += 1
        value = ((self.gid + 1) << 40) | self.store_seq
        wb = cfg.protocol != "WT"
        coalesce = (wb and cfg.coalescing_enabled and self.sb
                    and self.sb[-1].line == line
                    and self.sb[-1].repl_state == NOT_SENT)
        if coalesce:
            self.sb[-1].words[word] = value
            node.sim.n_coalesced += 1
            return True
        if len(self.sb) >= cfg.sb_entries:
            self.store_seq -= 1  # the op re-runs once a slot frees
            self.n_sb_full += 1
            return False
        if (node.variant == "PROACTIVE" and cfg.coalescing_enabled
                and self.sb and self.sb[-1].repl_state == NOT_SENT):
            node.send_repls(self, self.sb[-1])  # window closed by this store
        node.txn_seq += 1
        slot = SBSlot(txn=(node.cn << 40) | node.txn_seq, line=line,
                      words={word: value}, enqueue_time=node.engine.now)
        self.sb.append(slot)
        if wb:
            node.prefetch_exclusive(line)
            if node.variant == "PROACTIVE" and not cfg.coalescing_enabled:
                node.send_repls(self, slot)
        node.process_head(self)
        return True


class ComputeNode:
    """One CN: cores, LLC, remote-line table, SBs, LU glue, recovery."""

    def __init__(self, cn: int, cfg, engine, fabric, replica_map, lu, sim,
                 per_core_ops):
        self.cn = cn
        self.cfg = cfg
        self.engine = engine
        self.fabric = fabric
        self.replica_map = replica_map
        self.lu = lu
        self.sim = sim
        self.sync_node = cfg.num_cns  # lock/barrier manager on MN 0
        self.variant = cfg.protocol if cfg.protocol in VARIANTS else None
        self.table: dict[int, list] = {}   # line -> [state, dirty words]
        self.llc = TagArray(cfg.llc_size, cfg.llc_assoc, cfg.line_bytes)
        self.victim_buffer: dict[int, dict] = {}
        self.rdx_pending: set[int] = set()
        self.read_waiters: dict[int, list[Core]] = {}
        self.ts = TimestampCounters()
        self.txn_seq = 0
        self.dead = False
        self.paused = False
        self.cores = [Core(self, i, per_core_ops[i])
                      for i in range(cfg.cores_per_cn)]
        self._slot_by_txn: dict[int, tuple[Core, SBSlot]] = {}

    # -- helpers -------------------------------------------------------------

    def mn_of(self, line: int) -> int:
        return self.cfg.num_cns + (line // self.cfg.line_bytes) \
            % self.cfg.num_mns

    def _pinned(self, line: int) -> bool:
        if line in self.rdx_pending or line in self.read_waiters:
            return True
        return any(slot.line == line for c in self.cores for slot in c.sb)

    def start(self) -> None:
        for core in self.cores:
            core.start()

    def crash(self) -> None:
        self.dead = True
        self.lu.dead = True

    # -- cache fills / evictions ----------------------------------------------

    def fill(self, line: int, core: Core | None) -> None:
        victim = self.llc.insert(line, pinned=self._pinned)
        if core is not None:
            core._fill_l1(line)
        if victim is None:
            return
        for c in self.cores:
            c.l1.invalidate(victim)
        entry = self.table.pop(victim, None)
        if entry is not None and entry[0] == M and entry[1]:
            self.victim_buffer[victim] = entry[1]
            self.fabric.send(Message(WB_EVICT, self.cn, self.mn_of(victim),
                                     size=message_size(WB_EVICT),
                                     body={"line": victim,
                                           "words": dict(entry[1])}))

    # -- coherence issue side ------------------------------------------------

    def issue_read(self, core: Core, line: int) -> None:
        waiters = self.read_waiters.get(line)
        if waiters is not None:
            waiters.append(core)
            return
        if line in self.rdx_pending:
            self.read_waiters[line] = [core]  # ownership arriving; piggyback
            return
        self.read_waiters[line] = [core]
        self.fabric.send(Message(RD, self.cn, self.mn_of(line),
                                 body={"line": line, "core": core.idx}))

    def prefetch_exclusive(self, line: int) -> None:
        entry = self.table.get(line)
        if entry is not None and entry[0] in (M, E):
            return
        if line in self.rdx_pending:
            return
        self.rdx_pending.add(line)
        self.fabric.send(Message(RDX, self.cn, self.mn_of(line),
                                 body={"line": line, "core": 0}))

    # -- store buffer head processing ----------------------------------------

    def process_head(self, core: Core) -> None:
        if self.dead or self.paused or not core.sb:
            return
        slot = core.sb[0]
        cfg = self.cfg
        if cfg.protocol == "WT":
            if slot.repl_state == NOT_SENT:  # reused as "WT_Store not sent"
                slot.repl_state = REPLS_SENT
                nwords = len(slot.words)
                self.fabric.send(Message(
                    WT_STORE, self.cn, self.mn_of(slot.line),
                    size=message_size(WT_STORE, nwords=nwords),
                    body={"line": slot.line, "core": core.idx,
                          "words": dict(slot.words)}))
                self.sim.golden.record_commit(self.cn, core.gid, slot.line,
                                              slot.words)
            return
        entry = self.table.get(slot.line)
        coh_done = entry is not None and entry[0] in (M, E)
        if not coh_done:
            if slot.line not in self.rdx_pending:
                self.prefetch_exclusive(slot.line)  # lost to an Inv; re-fetch
            if self.variant == "PARALLEL" and slot.repl_state == NOT_SENT:
                self.send_repls(core, slot)
            return
        if self.variant is None:
            self._commit(core, slot)  # plain write-back: gate is coherence
            return
        if slot.repl_state == NOT_SENT:
            # BASELINE: coherence done at head; PARALLEL: head arrival;
            # PROACTIVE(+coalescing): window closes when the head is
            # otherwise ready to commit
            self.send_repls(core, slot)
            return
        if slot.repl_state == ACKS_COMPLETE:
            self._commit(core, slot)

    def send_repls(self, core: Core, slot: SBSlot) -> None:
        if self.paused or self.dead or slot.repl_state != NOT_SENT:
            return
        group = self.replica_map.group(slot.line)
        slot.repl_state = REPLS_SENT
        slot.acks_needed = set(group)
        self._slot_by_txn[slot.txn] = (core, slot)
        self.sim.n_repl_rounds += 1
        if core.sb and core.sb[0] is slot:
            self.sim.n_repls_at_head += 1
        body = {"req_cn": self.cn, "req_core": core.idx, "line": slot.line,
                "words": sorted(slot.words.items()), "txn": slot.txn}
        nwords = len(slot.words)
        for replica in group:
            if replica == self.cn:
                self.engine.after(1, lambda b=dict(body):
                                  self.lu.on_repl(b))
            else:
                self.fabric.send(Message(
                    REPL, self.cn, replica,
                    size=message_size(REPL, nwords=nwords), body=dict(body)))

    def on_repl_ack(self, body: dict) -> None:
        hit = self._slot_by_txn.get(body["txn"])
        if hit is None:
            return  # stale ack from a pre-recovery issue
        core, slot = hit
        slot.acks_needed.discard(body["replica"])
        if not slot.acks_needed and slot.repl_state == REPLS_SENT:
            slot.repl_state = ACKS_COMPLETE
            if core.sb and core.sb[0] is slot:
                self.process_head(core)

    def _commit(self, core: Core, slot: SBSlot) -> None:
        # commit-gate instrumentation: ownership held and acks complete
        self.sim.gate_checks += 1
        entry = self.table.get(slot.line)
        ok = entry is not None and entry[0] in (M, E)
        if self.variant is not None:
            ok = ok and slot.repl_state == ACKS_COMPLETE \
                and not slot.acks_needed
        if not ok:
            self.sim.gate_violations += 1
            return
        entry[0] = M
        entry[1].update(slot.words)
        core.sb.pop(0)
        self._slot_by_txn.pop(slot.txn, None)
        self.sim.golden.record_commit(self.cn, core.gid, slot.line,
                                      slot.words)
        core.n_commits += 1
        self.sim.on_commit()
        if self.variant is not None:
            slot.repl_state = None  # guards late acks
            for replica in self.replica_map.group(slot.line):
                ts = self.ts.issue(replica)
                body = {"req_cn": self.cn, "req_core": core.idx,
                        "line": slot.line, "ts": ts, "txn": slot.txn}
                self.sim.n_val_msgs += 1
                if replica == self.cn:
                    self.engine.after(1, lambda b=body: self.lu.on_val(b))
                else:
                    self.fabric.send(Message(VAL, self.cn, replica,
                                             body=body))
        core.on_sb_change()
        self.process_head(core)

    def _on_wt_ack(self, body: dict) -> None:
        core = self.cores[body["core"]]
        if core.sb and core.sb[0].line == body["line"]:
            core.sb.pop(0)
            core.n_commits += 1
            self.sim.on_commit()
            core.on_sb_change()
            self.process_head(core)

    # -- coherence respond side ----------------------------------------------

    def _on_rd_ack(self, body: dict) -> None:
        line = body["line"]
        if line not in self.table:
            self.table[line] = [S, {}]
            self.victim_buffer.pop(line, None)
        self.fill(line, None)
        for core in self.read_waiters.pop(line, []):
            core._fill_l1(line)
            core.resume()

    def _on_rdx_ack(self, body: dict) -> None:
        line = body["line"]
        self.rdx_pending.discard(line)
        entry = self.table.get(line)
        if entry is None:
            self.table[line] = [E, {}]
            self.victim_buffer.pop(line, None)
        elif entry[0] == S:
            entry[0] = E  # upgrade; demotions always flushed dirty words
        self.fill(line, None)
        for core in self.read_waiters.pop(line, []):
            core._fill_l1(line)
            core.resume()
        for core in self.cores:
            if core.sb and core.sb[0].line == line:
                self.process_head(core)

    def _on_inv(self, msg: Message) -> None:
        line = msg.body["line"]
        entry = self.table.pop(line, None)
        words = None
        if entry is not None and entry[0] == M and entry[1]:
            words = entry[1]
        elif entry is None and line in self.victim_buffer:
            words = self.victim_buffer.pop(line)
        self.llc.invalidate(line)
        for c in self.cores:
            c.l1.invalidate(line)
        self.fabric.send(Message(
            INV_ACK, self.cn, msg.src,
            size=message_size(INV_ACK, with_data=words is not None),
            body={"line": line, "words": words}))

    def _on_fetch(self, msg: Message) -> None:
        line = msg.body["line"]
        entry = self.table.get(line)
        words = None
        held = entry is not None
        if entry is not None:
            if entry[0] == M and entry[1]:
                words = dict(entry[1])
                entry[1] = {}
            entry[0] = S  # downgrade; a pending store re-acquires at the gate
        elif line in self.victim_buffer:
            words = self.victim_buffer.pop(line)
        self.fabric.send(Message(
            FETCH_RESP, self.cn, msg.src,
            size=message_size(FETCH_RESP, with_data=words is not None),
            body={"line": line, "words": words, "held": held}))

    def send_sync(self, msg: Message) -> None:
        self.fabric.send(msg)

    # -- recovery participation ----------------------------------------------

    def _on_interrupt(self, msg: Message) -> None:
        self.paused = True
        self.engine.after(ns_to_ps(self.cfg.sram_access_ns),
                          lambda: self.fabric.send(
                              Message(INTERRUPT_RESP, self.cn, msg.src,
                                      body={"cn": self.cn})))

    def _on_fetch_latest(self, msg: Message) -> None:
        result = self.lu.traverse(msg.body["lines"])
        self.fabric.send(Message(FETCH_LATEST_RESP, self.cn, msg.src,
                                 body=result))

    def _on_recov_end(self, msg: Message) -> None:
        victims = set(msg.body["victims"])
        self.replica_map.exclude(victims)
        self.lu.drop_invalid(victims)
        for core in self.cores:
            for slot in core.sb:
                slot.repl_state = NOT_SENT
                slot.acks_needed = set()
                self._slot_by_txn.pop(slot.txn, None)
        self.paused = False
        for core in self.cores:
            if self.variant == "PROACTIVE" and not self.cfg.coalescing_enabled:
                for slot in core.sb:
                    self.send_repls(core, slot)
            self.process_head(core)
            if core._want_resume:
                core._want_resume = False
                core._resume()
        self.fabric.send(Message(RECOV_END_RESP, self.cn, msg.src,
                                 body={"cn": self.cn}))

    # -- dispatch ------------------------------------------------------------

    def handle(self, msg: Message) -> None:
        if self.dead:
            return
        k = msg.kind
        b = msg.body
        if k == "Rd_ACK":
            self._on_rd_ack(b)
        elif k == "RdX_ACK":
            self._on_rdx_ack(b)
        elif k == "Inv":
            self._on_inv(msg)
        elif k == "Fetch":
            self._on_fetch(msg)
        elif k == "WT_ACK":
            self._on_wt_ack(b)
        elif k == "REPL":
            self.lu.on_repl(b)
        elif k == "REPL_ACK":
            self.on_repl_ack(b)
        elif k == "VAL":
            self.lu.on_val(b)
        elif k == "ClearGrant":
            self.lu.on_clear_grant()
        elif k == "LockGrant":
            self.cores[b["core"]].resume()
        elif k == "BarRelease":
            self.cores[b["core"]].resume()
        elif k == "Interrupt":
            self._on_interrupt(msg)
        elif k == "FetchLatestVers":
            self._on_fetch_latest(msg)
        elif k == "RecovEnd":
            self._on_recov_end(msg)
        elif k in ("MSI", "InterruptResp", "InitRecovResp", "RecovEndResp"):
            self.sim.coordinator.handle(msg)
