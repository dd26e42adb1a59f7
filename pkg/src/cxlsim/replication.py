"""Replica selection, logical timestamps, and store replication state.

All updates to a given line address are logged by the same ordered group of
Nr CNs, picked by hashing the line address onto a ring of live CNs. After a
crash the map is rebuilt over the survivors; in-flight transactions that
targeted the victim are re-issued by the requester once recovery ends.
"""

from __future__ import annotations

# StoreBufferSlot replication phases
NOT_SENT = 0
REPLS_SENT = 1
ACKS_COMPLETE = 2
VALIDATED = 3

REPL_STATE_NAMES = {NOT_SENT: "NotSent", REPLS_SENT: "ReplsSent",
                    ACKS_COMPLETE: "AcksComplete", VALIDATED: "Validated"}


def select_replicas(line_addr: int, num_cns: int, nr: int) -> list[int]:
    """Group g = (line/64) mod num_cns; replicas are g..g+Nr-1 mod num_cns."""
    g = (line_addr // 64) % num_cns
    return [(g + i) % num_cns for i in range(nr)]


class ReplicaMap:
    """Line-address hash onto an ordered ring of live CNs."""

    def __init__(self, num_cns: int, nr: int):
        self.nr = nr
        self.live = list(range(num_cns))

    def group(self, line_addr: int) -> list[int]:
        n = len(self.live)
        g = (line_addr // 64) % n
        return [self.live[(g + i) % n] for i in range(min(self.nr, n))]

    def rank_of(self, cn: int, line_addr: int) -> int:
        """Position of cn within the line's replica group, or -1."""
        grp = self.group(line_addr)
        return grp.index(cn) if cn in grp else -1

    def exclude(self, victims) -> None:
        self.live = [c for c in self.live if c not in victims]


class TimestampCounters:
    """Per source-CN running counter for each destination CN.

    For a fixed (src, dst) pair the issued values are 1, 2, 3, ... with no
    gaps; the destination Logging Unit migrates entries to its DRAM log in
    exactly this order.
    """

    def __init__(self):
        self._next: dict[int, int] = {}

    def issue(self, dst_cn: int) -> int:
        ts = self._next.get(dst_cn, 0) + 1
        self._next[dst_cn] = ts
        return ts
