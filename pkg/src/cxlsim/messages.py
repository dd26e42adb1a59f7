"""Message kinds carried on the CXL fabric and their size/class rules."""

from __future__ import annotations

from dataclasses import dataclass, field

# coherence
RD = "Rd"
RDX = "RdX"
RD_ACK = "Rd_ACK"
RDX_ACK = "RdX_ACK"
INV = "Inv"
INV_ACK = "Inv_ACK"
WB_EVICT = "WB_Evict"
WT_STORE = "WT_Store"
WT_ACK = "WT_ACK"
FETCH = "Fetch"
FETCH_RESP = "FetchResp"

# replication
REPL = "REPL"
REPL_ACK = "REPL_ACK"
VAL = "VAL"

# log dumping
LOG_DUMP = "LogDump"
DUMP_DONE = "DumpDone"
CLEAR_GRANT = "ClearGrant"

# failure detection / recovery
MSI = "MSI"
INTERRUPT = "Interrupt"
INTERRUPT_RESP = "InterruptResp"
INIT_RECOV = "InitRecov"
INIT_RECOV_RESP = "InitRecovResp"
FETCH_LATEST = "FetchLatestVers"
FETCH_LATEST_RESP = "FetchLatestVersResp"
RECOV_END = "RecovEnd"
RECOV_END_RESP = "RecovEndResp"

# synchronization (lock/barrier manager)
LOCK_REQ = "LockReq"
LOCK_GRANT = "LockGrant"
LOCK_REL = "LockRel"
BAR_ARRIVE = "BarArrive"
BAR_RELEASE = "BarRelease"

_CLASSES = {
    "coherence": {RD, RDX, RD_ACK, RDX_ACK, INV, INV_ACK, WB_EVICT,
                  WT_STORE, WT_ACK, FETCH, FETCH_RESP},
    "replication": {REPL, REPL_ACK, VAL},
    "logdump": {LOG_DUMP, DUMP_DONE, CLEAR_GRANT},
    "recovery": {MSI, INTERRUPT, INTERRUPT_RESP, INIT_RECOV, INIT_RECOV_RESP,
                 FETCH_LATEST, FETCH_LATEST_RESP, RECOV_END, RECOV_END_RESP},
    "sync": {LOCK_REQ, LOCK_GRANT, LOCK_REL, BAR_ARRIVE, BAR_RELEASE},
}

CLASS_OF = {kind: cls for cls, kinds in _CLASSES.items() for kind in kinds}

FLIT = 64
_HEADER = 16  # requester id + word mask + line address, padded

# kinds whose payload carries a full cache line
_DATA_KINDS = {RD_ACK, RDX_ACK, WB_EVICT}


def message_size(kind: str, nwords: int = 0, with_data: bool = False) -> int:
    if kind in (REPL, WT_STORE):
        return FLIT if _HEADER + 8 * nwords <= FLIT else 2 * FLIT
    if kind in _DATA_KINDS:
        return 2 * FLIT
    if kind in (INV_ACK, FETCH_RESP):
        return 2 * FLIT if with_data else FLIT
    return FLIT


@dataclass(slots=True)
class Message:
    kind: str
    src: int       # node id: CNs are 0..num_cns-1, MNs follow, switch = -1
    dst: int
    size: int = FLIT
    body: dict = field(default_factory=dict)
    send_time: int = 0
