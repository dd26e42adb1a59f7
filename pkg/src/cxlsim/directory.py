"""Memory-node model: remote directory, backing memory, persisted logs.

The directory is full-map and serializes transactions per line (later
requests queue). MNs never fail; they also host the persisted-log region,
the dump-completion barrier (MN 0), and the lock/barrier manager (MN 0).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .engine import ns_to_ps
from .messages import (BAR_RELEASE, CLEAR_GRANT, FETCH, FETCH_LATEST,
                       FETCH_LATEST_RESP, INIT_RECOV_RESP, INV, INV_ACK,
                       LOCK_GRANT, RD, RD_ACK, RDX, RDX_ACK, WB_EVICT,
                       WT_ACK, WT_STORE, Message, message_size)

U, S, O = "Uncached", "Shared", "Owned"


@dataclass(slots=True)
class DirEntry:
    state: str = U
    sharers: set = field(default_factory=set)
    owner: int = -1


@dataclass(slots=True)
class Txn:
    kind: str
    line: int
    requester: int
    req_core: int
    waiting: set
    words: dict | None = None      # payload for WT stores
    dirty: dict | None = None      # data collected from Inv_ACK/FetchResp
    owner_held: bool = True
    tag: object = None


class MemoryNode:
    def __init__(self, mn_idx: int, cfg, engine, fabric):
        self.mn_idx = mn_idx
        self.node_id = cfg.num_cns + mn_idx
        self.cfg = cfg
        self.engine = engine
        self.fabric = fabric
        self.memory: dict[int, int] = {}
        self.directory: dict[int, DirEntry] = {}
        self.busy: dict[int, Txn] = {}
        self.queues: dict[int, list] = {}
        self.persisted: list[dict] = []
        self.dram_ps = ns_to_ps(cfg.dram_ns)
        self.pmem_ps = ns_to_ps(cfg.pmem_ns)
        self.held_queue_max = 0
        # recovery state
        self._recov = None
        # dump coordination (MN 0 only)
        self._dump_expected: set[int] = set()
        self._dump_round_active = False
        self.sync = SyncManager(self) if mn_idx == 0 else None
        self.sim = None  # wired by the simulation

    # -- helpers -------------------------------------------------------------

    def entry(self, line: int) -> DirEntry:
        e = self.directory.get(line)
        if e is None:
            e = DirEntry()
            self.directory[line] = e
        return e

    def line_view(self, line: int) -> dict:
        wpl = self.cfg.words_per_line
        wb = self.cfg.word_bytes
        out = {}
        for i in range(wpl):
            v = self.memory.get(line + i * wb)
            if v is not None:
                out[i] = v
        return out

    def apply_words(self, line: int, words: dict) -> None:
        wb = self.cfg.word_bytes
        for i, v in words.items():
            self.memory[line + i * wb] = v

    # -- message entry point -------------------------------------------------

    def handle(self, msg: Message) -> None:
        k = msg.kind
        if k in (RD, RDX, WT_STORE, WB_EVICT):
            self._enqueue(msg)
        elif k in (INV_ACK,):
            self._on_inv_ack(msg)
        elif k == FETCH + "Resp":
            self._on_fetch_resp(msg)
        elif k == "LogDump":
            self._on_log_dump(msg)
        elif k == "DumpDone":
            self._on_dump_done(msg)
        elif k == "InitRecov":
            self._on_init_recov(msg)
        elif k == FETCH_LATEST_RESP:
            self._on_fetch_latest_resp(msg)
        elif self.sync is not None and k in ("LockReq", "LockRel", "BarArrive"):
            self.sync.handle(msg)

    # -- per-line transaction engine ------------------------------------------

    def _enqueue(self, msg: Message) -> None:
        line = msg.body["line"]
        if line in self.busy:
            q = self.queues.setdefault(line, [])
            q.append(msg)
            self.held_queue_max = max(self.held_queue_max, len(q))
        else:
            self._start(msg)

    def _next(self, line: int) -> None:
        self.busy.pop(line, None)
        q = self.queues.get(line)
        if q:
            self._start(q.pop(0))

    def _start(self, msg: Message) -> None:
        line = msg.body["line"]
        e = self.entry(line)
        req = msg.src
        req_core = msg.body.get("core", 0)
        kind = msg.kind

        if kind == WB_EVICT:
            if e.state == O and e.owner == req:
                self.apply_words(line, msg.body["words"])
                e.state, e.owner, e.sharers = U, -1, set()
                self.busy[line] = Txn("evict", line, req, req_core, set())
                self.engine.after(self.dram_ps, lambda: self._next(line))
            # non-owner eviction: data already forwarded via Inv/Fetch; drop
            return

        if kind == RD:
            if e.state in (U, S):
                e.sharers.add(req)
                e.state = S
                self.busy[line] = Txn("rd", line, req, req_core, set())
                self._finish_after_mem(
                    line, Message(RD_ACK, self.node_id, req,
                                  size=message_size(RD_ACK),
                                  body={"line": line, "core": req_core,
                                        "words": None}))
                return
            # Owned: fetch/downgrade the owner first
            txn = Txn("rd", line, req, req_core, waiting={e.owner})
            self.busy[line] = txn
            self.fabric.send(Message(FETCH, self.node_id, e.owner,
                                     body={"line": line}))
            return

        if kind == RDX:
            if e.state == O and e.owner == req:
                self.busy[line] = Txn("rdx", line, req, req_core, set())
                self._finish_after_mem(
                    line, Message(RDX_ACK, self.node_id, req,
                                  size=message_size(RDX_ACK),
                                  body={"line": line, "core": req_core,
                                        "words": None}))
                return
            targets = set()
            if e.state == S:
                targets = {c for c in e.sharers if c != req}
            elif e.state == O:
                targets = {e.owner}
            txn = Txn("rdx", line, req, req_core, waiting=set(targets))
            self.busy[line] = txn
            for c in sorted(targets):
                self.fabric.send(Message(INV, self.node_id, c,
                                         body={"line": line}))
            if not targets:
                self._complete(txn)
            return

        if kind == WT_STORE:
            targets = set()
            if e.state == S:
                targets = {c for c in e.sharers if c != req}
            elif e.state == O and e.owner != req:
                targets = {e.owner}
            txn = Txn("wt", line, req, req_core, waiting=set(targets),
                      words=dict(msg.body["words"]))
            self.busy[line] = txn
            for c in sorted(targets):
                self.fabric.send(Message(INV, self.node_id, c,
                                         body={"line": line}))
            if not targets:
                self._complete(txn)
            return

    def _on_inv_ack(self, msg: Message) -> None:
        line = msg.body["line"]
        txn = self.busy.get(line)
        if txn is None or msg.src not in txn.waiting:
            return
        txn.waiting.discard(msg.src)
        words = msg.body.get("words")
        if words:
            txn.dirty = dict(words) if txn.dirty is None else \
                {**txn.dirty, **words}
        if not txn.waiting:
            self._complete(txn)

    def _on_fetch_resp(self, msg: Message) -> None:
        line = msg.body["line"]
        txn = self.busy.get(line)
        if txn is None or msg.src not in txn.waiting:
            return
        txn.waiting.discard(msg.src)
        txn.owner_held = msg.body.get("held", False)
        words = msg.body.get("words")
        if words:
            txn.dirty = dict(words)
        if not txn.waiting:
            self._complete(txn)

    def _complete(self, txn: Txn) -> None:
        line = txn.line
        e = self.entry(line)
        if txn.dirty:
            self.apply_words(line, txn.dirty)
        if txn.kind == "rd":
            e.sharers = {txn.requester}
            if txn.owner_held and e.owner >= 0:
                e.sharers.add(e.owner)
            e.state, e.owner = S, -1
            self._finish_after_mem(
                line, Message(RD_ACK, self.node_id, txn.requester,
                              size=message_size(RD_ACK),
                              body={"line": line, "core": txn.req_core,
                                    "words": None}))
        elif txn.kind == "rdx":
            e.state, e.owner, e.sharers = O, txn.requester, set()
            self._finish_after_mem(
                line, Message(RDX_ACK, self.node_id, txn.requester,
                              size=message_size(RDX_ACK),
                              body={"line": line, "core": txn.req_core,
                                    "words": None}))
        elif txn.kind == "wt":
            self.apply_words(line, txn.words)
            if txn.requester in e.sharers:
                e.state, e.sharers, e.owner = S, {txn.requester}, -1
            else:
                e.state, e.sharers, e.owner = U, set(), -1
            resp = Message(WT_ACK, self.node_id, txn.requester,
                           body={"line": line, "core": txn.req_core})
            self.engine.after(self.dram_ps + self.pmem_ps,
                              lambda: self._send_and_next(line, resp))

    def _finish_after_mem(self, line: int, resp: Message) -> None:
        resp.body["words"] = self.line_view(line)
        self.engine.after(self.dram_ps,
                          lambda: self._send_and_next(line, resp))

    def _send_and_next(self, line: int, resp: Message) -> None:
        self.fabric.send(resp)
        self._next(line)

    # -- persisted log region ------------------------------------------------

    def _on_log_dump(self, msg: Message) -> None:
        if not msg.body:
            return  # flit without the segment marker
        self.persisted.append({
            "src_unit": msg.body["src_unit"],
            "entries": msg.body["segment"],
            "raw_bytes": msg.body["raw_bytes"],
            "compressed_bytes": msg.body["compressed_bytes"],
        })

    def query_persisted(self, line: int) -> list:
        """Decompressed updates for line, newest segment/entry first."""
        out = []
        for seg in reversed(self.persisted):
            for (req_cn, req_core, eline, word, value) in \
                    reversed(seg["entries"]):
                if eline == line:
                    out.append({"word": word, "value": value,
                                "from_dram": True})
        return out

    # -- dump-completion barrier (MN 0) ---------------------------------------

    def begin_dump_round(self, live_cns) -> None:
        self._dump_round_active = True
        self._dump_expected = set(live_cns)
        self._check_dump_round()

    def _on_dump_done(self, msg: Message) -> None:
        self._dump_expected.discard(msg.body["unit"])
        self._check_dump_round()

    def dump_round_drop(self, victims) -> None:
        self._dump_expected -= set(victims)
        self._check_dump_round()

    def _check_dump_round(self) -> None:
        if not self._dump_round_active or self._dump_expected:
            return
        self._dump_round_active = False
        for cn in self.sim.live_cns():
            self.fabric.send(Message(CLEAR_GRANT, self.node_id, cn, body={}))

    # -- recovery (Algorithm 1) ------------------------------------------------

    def _on_init_recov(self, msg: Message) -> None:
        victims = set(msg.body["victims"])
        cm = msg.src
        if self.sync is not None:
            self.sync.handle_crash(victims)
            self.dump_round_drop(victims)
        rmap = self.sim.replica_map_at_crash
        removed = 0
        for line in sorted(self.directory):
            e = self.directory[line]
            if e.sharers & victims:
                e.sharers -= victims
                removed += 1
                if e.state == S and not e.sharers:
                    e.state = U
        owned = [line for line in sorted(self.directory)
                 if self.directory[line].state == O
                 and self.directory[line].owner in victims]
        self._recov = {
            "victims": victims, "cm": cm, "owned": owned,
            "removed_sharers": removed, "outstanding": set(),
            "responses": {}, "fetch_rtts": 0,
        }
        by_lu: dict[int, list[int]] = {}
        for line in owned:
            for rank, cn in enumerate(rmap.group(line)):
                if cn not in victims and cn in self.sim.live_cns():
                    by_lu.setdefault(cn, []).append(line)
        for cn in sorted(by_lu):
            self._recov["outstanding"].add(cn)
            self._recov["fetch_rtts"] += 1
            self.fabric.send(Message(FETCH_LATEST, self.node_id, cn,
                                     body={"lines": by_lu[cn]}))
        if not self._recov["outstanding"]:
            self._finalize_recovery()

    def _on_fetch_latest_resp(self, msg: Message) -> None:
        r = self._recov
        if r is None or msg.src not in r["outstanding"]:
            return
        r["outstanding"].discard(msg.src)
        r["responses"][msg.src] = msg.body["lines"]
        if not r["outstanding"]:
            self._finalize_recovery()

    def _latest_map(self, updates: list) -> dict:
        """Per-word latest value from a newest-first update list."""
        out = {}
        for u in updates:
            if u["word"] not in out:
                out[u["word"]] = u["value"]
        return out

    def _finalize_recovery(self) -> None:
        r = self._recov
        rmap = self.sim.replica_map_at_crash
        repaired = 0
        fallback = 0
        untouched = 0
        for line in r["owned"]:
            per_replica = []
            for rank, cn in enumerate(rmap.group(line)):
                lists = r["responses"].get(cn)
                if lists is None or line not in lists:
                    continue
                updates = lists[line]
                if updates:
                    per_replica.append({
                        "rank": rank,
                        "updates": updates,
                        "latest": self._latest_map(updates),
                        "has_dram": any(u["from_dram"] for u in updates),
                    })
            # older dumped-and-cleared updates form the base image; the live
            # logs overlay it with anything committed since the last dump
            base = self._latest_map(self.query_persisted(line))
            if per_replica:
                maps = [p["latest"] for p in per_replica]
                if all(m == maps[0] for m in maps[1:]):
                    overlay = maps[0]
                else:
                    # divergent logs: prefer DRAM-reachable entries, then the
                    # longer list, then the lowest replica rank
                    best = max(per_replica,
                               key=lambda p: (p["has_dram"],
                                              len(p["updates"]),
                                              -p["rank"]))
                    overlay = best["latest"]
                self.apply_words(line, {**base, **overlay})
                repaired += 1
            elif base:
                self.apply_words(line, base)
                fallback += 1
            else:
                untouched += 1  # Exclusive-clean residue
            e = self.entry(line)
            e.state, e.sharers, e.owner = U, set(), -1
        self._discharge_victims(r["victims"])
        delay = self.dram_ps * (1 + repaired + fallback)
        report = {"mn": self.node_id, "removed_sharers": r["removed_sharers"],
                  "owned_lines": len(r["owned"]), "repaired": repaired,
                  "persisted_fallback": fallback, "exclusive_clean": untouched,
                  "fetch_rtts": r["fetch_rtts"]}
        cm = r["cm"]
        self._recov = None
        self.engine.after(delay, lambda: self.fabric.send(
            Message(INIT_RECOV_RESP, self.node_id, cm, body=report)))

    def _discharge_victims(self, victims) -> None:
        """Unblock transactions waiting on responses from crashed CNs."""
        for line in sorted(self.busy):
            txn = self.busy[line]
            if txn.waiting & victims:
                txn.waiting -= victims
                txn.owner_held = False
                if not txn.waiting:
                    self._complete(txn)
        for line in sorted(self.queues):
            self.queues[line] = [m for m in self.queues[line]
                                 if m.src not in victims]


class SyncManager:
    """Cluster lock and barrier coordinator hosted on MN 0.

    Stands in for lock-line spinning: acquires serialize through FIFO grant
    queues and barriers release once every live core has arrived. Crash
    handling releases victim-held locks and recomputes barrier membership.
    """

    def __init__(self, mn: MemoryNode):
        self.mn = mn
        self.locks: dict[int, dict] = {}
        self.barriers: dict[int, set] = {}

    def _lock(self, sync_id: int) -> dict:
        l = self.locks.get(sync_id)
        if l is None:
            l = {"holder": None, "waiters": []}
            self.locks[sync_id] = l
        return l

    def handle(self, msg: Message) -> None:
        k = msg.kind
        body = msg.body
        core = (msg.src, body["core"])
        if k == "LockReq":
            l = self._lock(body["id"])
            if l["holder"] is None:
                l["holder"] = core
                self._grant(core, body["id"])
            else:
                l["waiters"].append(core)
        elif k == "LockRel":
            l = self._lock(body["id"])
            if l["holder"] == core:
                self._release(body["id"])
        elif k == "BarArrive":
            arrived = self.barriers.setdefault(body["id"], set())
            arrived.add(core)
            self._check_barrier(body["id"])

    def _grant(self, core, sync_id: int) -> None:
        self.mn.fabric.send(Message(LOCK_GRANT, self.mn.node_id, core[0],
                                    body={"core": core[1], "id": sync_id}))

    def _release(self, sync_id: int) -> None:
        l = self._lock(sync_id)
        if l["waiters"]:
            nxt = l["waiters"].pop(0)
            l["holder"] = nxt
            self._grant(nxt, sync_id)
        else:
            l["holder"] = None

    def _check_barrier(self, sync_id: int) -> None:
        arrived = self.barriers.get(sync_id, set())
        expected = self.mn.sim.live_core_set()
        if arrived >= expected:
            for (cn, core) in sorted(arrived & expected):
                self.mn.fabric.send(Message(BAR_RELEASE, self.mn.node_id, cn,
                                            body={"core": core,
                                                  "id": sync_id}))
            del self.barriers[sync_id]

    def handle_crash(self, victims) -> None:
        for sync_id in sorted(self.locks):
            l = self.locks[sync_id]
            l["waiters"] = [c for c in l["waiters"] if c[0] not in victims]
            if l["holder"] is not None and l["holder"][0] in victims:
                self._release(sync_id)
        for sync_id in sorted(self.barriers):
            self.barriers[sync_id] = {c for c in self.barriers[sync_id]
                                      if c[0] not in victims}
            self._check_barrier(sync_id)
