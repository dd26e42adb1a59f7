"""Single-switch CXL fabric model.

Latency is one-way (RTT/2) plus serialization on the sender's link; each
per-destination queue may probabilistically swap two adjacent pending
deliveries (p_reorder), which exercises the logical-timestamp machinery.
Messages to a CN whose Viral_Status bit is set are silently dropped and
counted. The switch never responds on behalf of a failed CN; after a
silence timeout it raises the viral bit and emits one MSI to the
Configuration Manager core.
"""

from __future__ import annotations

from .engine import Engine, ns_to_ps
from .errors import UnknownDestination
from .messages import CLASS_OF, MSI, Message

SWITCH = -1

WINDOW_PS = 100 * 1000 * 1000  # 100 us bandwidth windows


class Fabric:
    def __init__(self, engine: Engine, cfg, num_nodes: int):
        self.engine = engine
        self.cfg = cfg
        self.num_nodes = num_nodes
        self.oneway_ps = ns_to_ps(cfg.net_rtt_ns / 2.0)
        self.viral = [False] * num_nodes
        self.handlers = {}
        self._egress_free = [0] * num_nodes
        self._ingress_free = [0] * num_nodes
        self._last_pending = {}   # dst -> [event, deliver_time, min_time]
        self._rng = engine.rng("fabric")
        self.n_sent = 0
        self.n_delivered = 0
        self.n_dropped_viral = 0
        self.bytes_by_class = {c: 0 for c in
                               ("coherence", "replication", "logdump",
                                "recovery", "sync")}
        self.cn_bytes = {}        # (cn, class) -> bytes
        self.window_bytes = {}    # (cn, class, window) -> bytes
        self.on_detect = None     # callback(cn) set by the simulation
        self._detected = set()

    def register(self, node: int, handler) -> None:
        self.handlers[node] = handler

    def _ser_ps(self, size: int) -> int:
        v = size * 1000 / self.cfg.link_GBps
        iv = int(v)
        return iv if iv == v else iv + 1

    def _account(self, msg: Message) -> None:
        cls = CLASS_OF[msg.kind]
        self.bytes_by_class[cls] += msg.size
        for node in (msg.src, msg.dst):
            if 0 <= node < self.cfg.num_cns:
                key = (node, cls)
                self.cn_bytes[key] = self.cn_bytes.get(key, 0) + msg.size
                wkey = (node, cls, self.engine.now // WINDOW_PS)
                self.window_bytes[wkey] = \
                    self.window_bytes.get(wkey, 0) + msg.size

    def send(self, msg: Message) -> None:
        if msg.dst not in self.handlers:
            raise UnknownDestination(f"no node {msg.dst}")
        now = self.engine.now
        msg.send_time = now
        self.n_sent += 1
        self._account(msg)
        if self.viral[msg.dst]:
            self.n_dropped_viral += 1
            return
        ser = self._ser_ps(msg.size)
        if msg.src == SWITCH:
            depart = now + ser
        else:
            depart = max(now, self._egress_free[msg.src]) + ser
            self._egress_free[msg.src] = depart
        arrival = depart + self.oneway_ps
        deliver = max(arrival, self._ingress_free[msg.dst])
        self._ingress_free[msg.dst] = deliver + ser

        ev = self.engine.at(deliver, lambda m=msg: self._deliver(m))
        cls = CLASS_OF[msg.kind]
        prev = self._last_pending.get(msg.dst)
        # only replication-class pairs are eligible to swap: the logical
        # timestamps exist precisely to tolerate REPL/VAL reordering, while
        # coherence and recovery flows rely on per-destination FIFO links
        if (prev is not None and prev[0][3] and self.cfg.p_reorder > 0.0
                and cls == "replication" and prev[3] == "replication"
                and prev[1] < deliver and prev[1] >= arrival
                and self._rng.random() < self.cfg.p_reorder):
            # adjacent swap: this message takes the earlier slot
            self.engine.cancel(ev)
            ev = self.engine.at(prev[1], lambda m=msg: self._deliver(m))
            new_prev = self.engine.reschedule(prev[0], deliver)
            prev[0] = new_prev
            prev[1] = deliver
            self._last_pending[msg.dst] = prev
        else:
            self._last_pending[msg.dst] = [ev, deliver, arrival, cls]

    def _deliver(self, msg: Message) -> None:
        if self.viral[msg.dst]:
            self.n_dropped_viral += 1
            return
        self.n_delivered += 1
        self.handlers[msg.dst](msg)

    # -- failure detection ---------------------------------------------------

    def detect_failure(self, cn: int, live_cns) -> None:
        """Set Viral_Status and signal the Configuration Manager (idempotent)."""
        if cn in self._detected:
            return
        self._detected.add(cn)
        self.viral[cn] = True
        cm = min(c for c in live_cns)
        self.send(Message(MSI, SWITCH, cm, body={"failed_cn": cn}))
        if self.on_detect:
            self.on_detect(cn)

    # -- reporting -----------------------------------------------------------

    def conservation_ok(self) -> bool:
        pending = sum(1 for p in self._last_pending.values() if p[0][3])
        return self.n_sent >= self.n_delivered + self.n_dropped_viral

    def bandwidth_report(self) -> dict:
        """Per-CN byte counters by message class, plus 100 us windows."""
        per_cn = {}
        for (cn, cls), b in sorted(self.cn_bytes.items()):
            per_cn.setdefault(cn, {})[cls] = b
        windows = {}
        for (cn, cls, w), b in sorted(self.window_bytes.items()):
            windows.setdefault(w, {}).setdefault(cn, {})[cls] = b
        return {"per_cn": per_cn, "windows": windows,
                "totals": dict(self.bytes_by_class)}
