"""Top-level simulation wiring and run control."""

from __future__ import annotations

from .cache import ComputeNode
from .directory import MemoryNode
from .engine import Engine, ns_to_ps
from .fabric import Fabric
from .logging_unit import LoggingUnit
from .recovery import (CrashPlan, GoldenHistory, RecoveryCoordinator,
                       cluster_view, verify_recovery)
from .replication import ReplicaMap


def _clone_map(rmap: ReplicaMap) -> ReplicaMap:
    c = ReplicaMap.__new__(ReplicaMap)
    c.nr = rmap.nr
    c.live = list(rmap.live)
    return c


class Simulation:
    def __init__(self, cfg, traces, seed: int = 0,
                 crash_plan: CrashPlan | None = None):
        cfg.validate()
        if len(traces) != cfg.num_cores:
            raise ValueError(f"need {cfg.num_cores} per-core op lists, "
                             f"got {len(traces)}")
        self.cfg = cfg
        self.seed = seed
        self.engine = Engine(seed)
        self.fabric = Fabric(self.engine, cfg, cfg.num_cns + cfg.num_mns)
        self.replica_map = ReplicaMap(cfg.num_cns, cfg.replication_factor)
        self.replica_map_at_crash = _clone_map(self.replica_map)
        self.golden = GoldenHistory(cfg)
        self.coordinator = RecoveryCoordinator(self)
        self.crash_plan = crash_plan
        self.crash_fired = False
        self._unrecovered: set = set()
        self._stopping = False

        self.nodes: list[ComputeNode] = []
        for cn in range(cfg.num_cns):
            lu = LoggingUnit(cn, cfg, self.engine, self.fabric,
                             self.replica_map, None)
            ops = traces[cn * cfg.cores_per_cn:(cn + 1) * cfg.cores_per_cn]
            node = ComputeNode(cn, cfg, self.engine, self.fabric,
                               self.replica_map, lu, self, ops)
            self.nodes.append(node)
            self.fabric.register(cn, node.handle)
        self.mns: list[MemoryNode] = []
        for i in range(cfg.num_mns):
            mn = MemoryNode(i, cfg, self.engine, self.fabric)
            mn.sim = self
            self.mns.append(mn)
            self.fabric.register(mn.node_id, mn.handle)

        # instrumentation
        self.n_commits = 0
        self.n_repl_rounds = 0
        self.n_repls_at_head = 0
        self.n_val_msgs = 0
        self.n_coalesced = 0
        self.gate_checks = 0
        self.gate_violations = 0
        self._cores_done = 0

    # -- membership ----------------------------------------------------------

    def live_cns(self) -> list[int]:
        return [cn for cn in range(self.cfg.num_cns)
                if not self.nodes[cn].dead]

    def live_core_set(self) -> set:
        return {(cn, c) for cn in self.live_cns()
                for c in range(self.cfg.cores_per_cn)}

    # -- hooks ---------------------------------------------------------------

    def on_core_done(self) -> None:
        self._cores_done += 1

    def on_commit(self) -> None:
        self.n_commits += 1
        plan = self.crash_plan
        if (plan is not None and not self.crash_fired and plan.after_commits
                and self.n_commits >= plan.after_commits):
            self._do_crash()

    def on_recovery_done(self, victims) -> None:
        self._unrecovered -= set(victims)

    # -- crash injection -----------------------------------------------------

    def _do_crash(self) -> None:
        self.crash_fired = True
        victims = [v for v in self.crash_plan.victims if not self.nodes[v].dead]
        if not victims or len(victims) >= self.cfg.num_cns:
            return
        if not self._unrecovered:
            self.replica_map_at_crash = _clone_map(self.replica_map)
        timeout = ns_to_ps(self.cfg.detect_timeout_us * 1000)
        for v in victims:
            node = self.nodes[v]
            self.golden.freeze_inflight(node)
            node.crash()
            self._unrecovered.add(v)
            self.engine.after(timeout, lambda v=v: self.fabric.detect_failure(
                v, self.live_cns()))

    # -- periodic dumps ------------------------------------------------------

    def _dump_period_ps(self) -> int:
        return ns_to_ps(self.cfg.dump_period_us * 1000)

    def _dump_tick(self) -> None:
        if self._stopping:
            return
        live = [cn for cn in self.live_cns() if not self.nodes[cn].lu.dead]
        self.mns[0].begin_dump_round(live)
        for cn in live:
            self.nodes[cn].lu.start_dump()
        self.engine.after(self._dump_period_ps(), self._dump_tick)

    # -- run control ---------------------------------------------------------

    def _quiesced(self) -> bool:
        if self._unrecovered or self.coordinator.busy:
            return False
        for cn in self.live_cns():
            node = self.nodes[cn]
            for core in node.cores:
                if not core.done or core.sb:
                    return False
        return True

    def _blocked_report(self):
        out = []
        for cn in self.live_cns():
            node = self.nodes[cn]
            for core in node.cores:
                if not core.done:
                    out.append({"cn": cn, "core": core.idx,
                                "state": core.state, "pc": core.pc,
                                "sb": len(core.sb)})
        return out

    def run(self) -> None:
        for node in self.nodes:
            node.start()
        self.engine.after(self._dump_period_ps(), self._dump_tick)
        plan = self.crash_plan
        if plan is not None and plan.at_time_ps:
            self.engine.at(plan.at_time_ps, self._do_crash)
        self.engine.run_until(self._quiesced, self._blocked_report)
        self.sim_time_ps = self.engine.now
        self._stopping = True
        self.engine.drain()

    # -- results -------------------------------------------------------------

    def final_image(self) -> dict:
        return cluster_view(self)

    def verify(self) -> dict:
        return verify_recovery(self)

    def instrumentation_ok(self) -> dict:
        """Cross-cutting invariant checks gathered after a run."""
        ts_inversions = sum(n.lu.ts_inversions for n in self.nodes)
        return {
            "gate_violations": self.gate_violations,
            "ts_inversions": ts_inversions,
            "fabric_conservation": self.fabric.conservation_ok(),
            "commits": self.n_commits,
            "repl_rounds": self.n_repl_rounds,
            "val_msgs": self.n_val_msgs,
        }
