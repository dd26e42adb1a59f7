"""Per-CN hardware log.

Incoming REPL messages allocate invalid entries in a small SRAM buffer (one
entry per updated word); the matching VAL validates them and stamps the
logical timestamp. Validated entries migrate to the DRAM log strictly in
per-source timestamp order (the timestamp is stripped on migration; a
shadow copy is retained for instrumentation only). At period boundaries
each unit dumps the DRAM-log entries it is responsible for (its rank within
each line's replica group), compressed at a configurable ratio, to the MNs;
after the whole cluster signals completion the dumped prefix is cleared.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .engine import LU_CYCLE_PS, ns_to_ps
from .errors import DramLogOverflow, ProtocolViolation
from .messages import (DUMP_DONE, LOG_DUMP, REPL_ACK, Message, message_size)

SRAM_ENTRY_BYTES = 16
DRAM_ENTRY_BYTES = 16  # 2 requester + 6 address/word + 8 value


@dataclass(slots=True)
class SramEntry:
    req_cn: int
    req_core: int
    line: int
    word: int
    value: int
    valid: bool = False
    ts: int | None = None
    seq: int = 0   # arrival order, for newest-first traversal
    txn: int = 0   # requester-side slot transaction id


@dataclass(slots=True)
class DramEntry:
    req_cn: int
    req_core: int
    line: int
    word: int
    value: int
    shadow_ts: int  # instrumentation only; stripped in the modeled encoding


class LoggingUnit:
    def __init__(self, cn: int, cfg, engine, fabric, replica_map, metrics):
        self.cn = cn
        self.cfg = cfg
        self.engine = engine
        self.fabric = fabric
        self.replica_map = replica_map
        self.metrics = metrics
        self.sram: list[SramEntry] = []
        self.dram: list[DramEntry] = []
        self.next_expected: dict[int, int] = {}
        self.dead = False
        self.paused = False
        self._seq = 0
        self._backpressure: list = []  # queued REPL bodies awaiting SRAM space
        self.max_dram_bytes = 0
        self.ts_inversions = 0          # per-source shadow-ts order violations
        self._last_migrated: dict[int, int] = {}
        self._dump_watermark = 0
        self._dump_pending = False
        self.coord_mn = cfg.num_cns  # node id of the designated MN

    @property
    def sram_capacity(self) -> int:
        return self.cfg.sram_log_bytes // SRAM_ENTRY_BYTES

    @property
    def dram_bytes(self) -> int:
        return len(self.dram) * DRAM_ENTRY_BYTES

    # -- REPL / VAL ----------------------------------------------------------

    def on_repl(self, body: dict) -> None:
        """Log one REPL; REPL_ACK is delayed, never dropped, on SRAM overflow."""
        if self.dead:
            return
        words = body["words"]
        if len(self.sram) + len(words) > self.sram_capacity:
            self._backpressure.append(body)
            return
        self._log_repl(body)

    def _log_repl(self, body: dict) -> None:
        req_cn = body["req_cn"]
        req_core = body["req_core"]
        line = body["line"]
        # a re-issued REPL replaces any stale invalid entries for the slot
        txn = body["txn"]
        self.sram = [e for e in self.sram if e.valid or e.txn != txn]
        for word, value in body["words"]:
            self._seq += 1
            self.sram.append(SramEntry(req_cn, req_core, line, word, value,
                                       seq=self._seq, txn=txn))
        delay = ns_to_ps(self.cfg.sram_access_ns) + LU_CYCLE_PS
        ack = Message(REPL_ACK, self.cn, req_cn,
                      body={"req_cn": req_cn, "req_core": req_core,
                            "line": line, "txn": body["txn"],
                            "replica": self.cn})
        if req_cn == self.cn:
            self.engine.after(delay, lambda: self.fabric.handlers[self.cn](ack))
        else:
            self.engine.after(delay, lambda: self.fabric.send(ack))

    def on_val(self, body: dict) -> None:
        if self.dead:
            return
        req_cn = body["req_cn"]
        txn = body["txn"]
        matched = False
        for e in self.sram:
            if not e.valid and e.txn == txn:
                e.valid = True
                e.ts = body["ts"]
                matched = True
        if not matched:
            raise ProtocolViolation(
                f"LU{self.cn}: VAL from CN{req_cn} txn {txn} "
                f"ts={body['ts']} matches no invalid entry"
            )
        self._drain(req_cn)

    def _drain(self, src_cn: int) -> None:
        """Migrate validated groups from src_cn in timestamp order, no gaps."""
        while True:
            want = self.next_expected.get(src_cn, 1)
            group = [e for e in self.sram
                     if e.valid and e.req_cn == src_cn and e.ts == want]
            if not group:
                return
            last = self._last_migrated.get(src_cn)
            if last is not None and want <= last:
                self.ts_inversions += 1
            self._last_migrated[src_cn] = want
            for e in group:
                self.dram.append(DramEntry(e.req_cn, e.req_core, e.line,
                                           e.word, e.value, e.ts))
            self.sram = [e for e in self.sram
                         if not (e.valid and e.req_cn == src_cn
                                 and e.ts == want)]
            self.next_expected[src_cn] = want + 1
            if self.dram_bytes > self.cfg.dram_log_bytes:
                raise DramLogOverflow(
                    f"LU{self.cn} DRAM log exceeds "
                    f"{self.cfg.dram_log_bytes} bytes"
                )
            self.max_dram_bytes = max(self.max_dram_bytes, self.dram_bytes)
            self._service_backpressure()

    def _service_backpressure(self) -> None:
        while self._backpressure:
            body = self._backpressure[0]
            if len(self.sram) + len(body["words"]) > self.sram_capacity:
                return
            self._backpressure.pop(0)
            self._log_repl(body)

    # -- periodic dump -------------------------------------------------------

    def start_dump(self) -> None:
        """Dump the entries this unit is in charge of, then signal completion.

        Each unit saves entries whose (line/64) mod Nr equals its rank within
        the line's replica group; the cluster-wide completion barrier makes
        it safe to clear the dumped prefix afterwards.
        """
        if self.dead or self._dump_pending:
            return
        self._dump_pending = True
        self._dump_watermark = len(self.dram)
        nr = self.cfg.replication_factor
        by_mn: dict[int, list[DramEntry]] = {}
        for e in self.dram[:self._dump_watermark]:
            rank = self.replica_map.rank_of(self.cn, e.line)
            resp = (e.line // 64) % nr if rank >= 0 else -1
            if rank == resp or rank == -1:
                mn = self.cfg.num_cns + (e.line // 64) % self.cfg.num_mns
                by_mn.setdefault(mn, []).append(e)
        for mn in sorted(by_mn):
            entries = by_mn[mn]
            raw = len(entries) * DRAM_ENTRY_BYTES
            comp = math.ceil(raw / self.cfg.compression_ratio)
            nmsgs = max(1, -(-comp // 64))
            for i in range(nmsgs):
                body = {}
                if i == nmsgs - 1:
                    body = {"segment": [(e.req_cn, e.req_core, e.line, e.word,
                                         e.value) for e in entries],
                            "src_unit": self.cn, "raw_bytes": raw,
                            "compressed_bytes": comp}
                self.fabric.send(Message(LOG_DUMP, self.cn, mn, size=64,
                                         body=body))
        self.fabric.send(Message(DUMP_DONE, self.cn, self.coord_mn,
                                 body={"unit": self.cn}))

    def on_clear_grant(self) -> None:
        if self.dead:
            return
        self.dram = self.dram[self._dump_watermark:]
        self._dump_watermark = 0
        self._dump_pending = False

    # -- recovery ------------------------------------------------------------

    def traverse(self, lines) -> dict:
        """Single newest-to-oldest pass collecting updates for each line.

        Valid SRAM entries (not yet migrated) are newer than anything in the
        DRAM log; invalid entries represent uncommitted stores and are
        excluded.
        """
        wanted = set(lines)
        out = {line: [] for line in lines}
        skipped_invalid = 0
        for e in sorted((e for e in self.sram if e.line in wanted),
                        key=lambda e: e.seq, reverse=True):
            if not e.valid:
                skipped_invalid += 1
                continue
            out[e.line].append({"word": e.word, "value": e.value,
                                "from_dram": False})
        for e in reversed(self.dram):
            if e.line in wanted:
                out[e.line].append({"word": e.word, "value": e.value,
                                    "from_dram": True})
        return {"lines": out, "skipped_invalid": skipped_invalid}

    def drop_invalid(self, victims) -> None:
        """GC the victims' un-validated entries at RecovEnd.

        Survivors' un-validated entries are left alone: their requesters
        re-issue the same transactions after recovery and the txn-keyed
        dedupe in _log_repl replaces them, so dropping here would race with
        re-issued REPLs that arrive before this unit's RecovEnd.
        """
        victims = set(victims)
        self.sram = [e for e in self.sram
                     if e.valid or e.req_cn not in victims]
        self._backpressure = [b for b in self._backpressure
                              if b["req_cn"] not in victims]
        self._service_backpressure()
