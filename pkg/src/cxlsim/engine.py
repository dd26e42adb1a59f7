"""Deterministic discrete-event core.

Virtual time is an integer count of picoseconds so that both 2.4 GHz core
cycles (416.67 ps) and 500 MHz logging-unit cycles (2000 ps) can be
represented exactly after rounding up.  Events with equal fire time are
delivered in scheduling order, which makes a run bit-reproducible for a
fixed seed.
"""

from __future__ import annotations

import heapq
import random

from .errors import DeadlockError, SchedulingInPast

PS_PER_NS = 1000

# 2.4 GHz -> 1250/3 ps per cycle
_CORE_NUM = 1250
_CORE_DEN = 3

LU_CYCLE_PS = 2000  # 500 MHz


def ns_to_ps(ns: float) -> int:
    """Round up to the nearest picosecond."""
    v = ns * PS_PER_NS
    iv = int(v)
    return iv if iv == v else iv + 1


def core_cycles_to_ps(cycles: int) -> int:
    return -(-cycles * _CORE_NUM // _CORE_DEN)


def lu_cycles_to_ps(cycles: int) -> int:
    return cycles * LU_CYCLE_PS


def ps_to_ns(ps: int) -> float:
    return ps / PS_PER_NS


class Engine:
    """Event queue plus per-component seeded RNG streams."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.now = 0
        self._heap: list[list] = []
        self._seq = 0
        self.n_scheduled = 0
        self.n_delivered = 0
        self.n_cancelled = 0
        self._rngs: dict[str, random.Random] = {}

    def rng(self, stream_id: str) -> random.Random:
        """Stream derived from (seed, stream_id); streams never interfere."""
        r = self._rngs.get(stream_id)
        if r is None:
            r = random.Random(f"{self.seed}/{stream_id}")
            self._rngs[stream_id] = r
        return r

    def at(self, time_ps: int, fn) -> list:
        if time_ps < self.now:
            raise SchedulingInPast(f"schedule at {time_ps} < clock {self.now}")
        self._seq += 1
        ev = [time_ps, self._seq, fn, True]
        heapq.heappush(self._heap, ev)
        self.n_scheduled += 1
        return ev

    def after(self, delta_ps: int, fn) -> list:
        return self.at(self.now + delta_ps, fn)

    def cancel(self, ev: list) -> None:
        if ev[3]:
            ev[3] = False
            self.n_cancelled += 1

    def reschedule(self, ev: list, time_ps: int) -> list:
        self.cancel(ev)
        return self.at(time_ps, ev[2])

    def pending(self) -> bool:
        return any(ev[3] for ev in self._heap)

    def run_until(self, predicate, blocked_report=None) -> int:
        """Process events in (time, seq) order until predicate holds.

        Raises DeadlockError if the queue empties with the predicate still
        false; blocked_report() supplies the blocked-component set for the
        diagnostic.
        """
        if predicate():
            return self.now
        while self._heap:
            ev = heapq.heappop(self._heap)
            if not ev[3]:
                continue
            self.now = ev[0]
            self.n_delivered += 1
            ev[2]()
            if predicate():
                return self.now
        blocked = blocked_report() if blocked_report else "unknown"
        raise DeadlockError(blocked)

    def drain(self) -> int:
        """Deliver everything left in the queue (used to quiesce a run)."""
        while self._heap:
            ev = heapq.heappop(self._heap)
            if not ev[3]:
                continue
            self.now = ev[0]
            self.n_delivered += 1
            ev[2]()
        return self.now
