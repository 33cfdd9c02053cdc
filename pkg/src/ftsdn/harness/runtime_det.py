"""Deterministic in-memory transport.

A single-threaded scheduler drives actor mailboxes in simulated time. Every
channel is FIFO; cross-channel interleaving comes from per-message latencies
drawn from the seeded RNG, which is exactly the nondeterminism a real
multi-connection deployment exhibits and nothing more. Crashing a node
delivers its in-flight messages before the peers observe the disconnect,
matching TCP semantics for an abruptly killed process.

Actors can be given service costs (per received message and per sent
message) so that throughput experiments have a real bottleneck resource;
scenario runs leave all costs at zero.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Callable


class Crashed(BaseException):
    """Unwinds the current handler when a fault hook kills the node."""


@dataclass(order=True)
class _Event:
    time: float
    seq: int
    fn: Callable[[], None] = field(compare=False)
    maintenance: bool = field(compare=False, default=False)
    cancelled: bool = field(compare=False, default=False)


class Scheduler:
    def __init__(self, seed: int) -> None:
        self.now = 0.0
        self.rng = random.Random(seed)
        self._heap: list[_Event] = []
        self._seq = 0
        self._live_work = 0  # scheduled non-maintenance events

    def schedule(self, delay_ms: float, fn: Callable[[], None], maintenance: bool = False) -> _Event:
        return self.schedule_at(self.now + max(0.0, delay_ms), fn, maintenance)

    def schedule_at(self, when: float, fn: Callable[[], None], maintenance: bool = False) -> _Event:
        self._seq += 1
        ev = _Event(when, self._seq, fn, maintenance)
        heapq.heappush(self._heap, ev)
        if not maintenance:
            self._live_work += 1
        return ev

    def cancel(self, ev: _Event) -> None:
        if not ev.cancelled:
            ev.cancelled = True
            if not ev.maintenance:
                self._live_work -= 1

    def run(
        self,
        until: float,
        quiescent: Callable[[], bool] | None = None,
    ) -> bool:
        """Drive events until ``quiescent()`` holds with no live work queued,
        or the deadline passes. Returns True when quiescence was reached."""
        while self._heap:
            if self._live_work == 0 and quiescent is not None and quiescent():
                return True
            ev = heapq.heappop(self._heap)
            if ev.cancelled:
                continue
            if ev.time > until:
                heapq.heappush(self._heap, ev)
                return quiescent() if quiescent else True
            self.now = max(self.now, ev.time)
            if not ev.maintenance:
                self._live_work -= 1
            try:
                ev.fn()
            except Crashed:
                pass
        return quiescent() if quiescent else True


class Executor:
    """One actor's serial execution context with service-time accounting."""

    def __init__(self, sched: Scheduler, node_id: str) -> None:
        self.sched = sched
        self.node_id = node_id
        self.alive = True
        self.busy_until = 0.0
        self._cursor: float | None = None  # virtual time while inside a handler

    def now(self) -> float:
        return self._cursor if self._cursor is not None else self.sched.now

    def debit(self, cost_ms: float) -> None:
        if self._cursor is not None:
            self._cursor += cost_ms

    def post(self, fn: Callable[[], None], arrive: float | None = None, cost_ms: float = 0.0,
             maintenance: bool = False) -> _Event:
        when = self.sched.now if arrive is None else arrive

        def run() -> None:
            if not self.alive:
                return
            start = max(self.sched.now, self.busy_until)
            self._cursor = start + cost_ms
            try:
                fn()
            finally:
                self.busy_until = self._cursor
                self._cursor = None

        return self.sched.schedule_at(when, run, maintenance)

    def call_later(self, delay_ms: float, fn: Callable[[], None], maintenance: bool = False) -> _Event:
        return self.post(fn, arrive=self.now() + max(0.0, delay_ms), maintenance=maintenance)

    def cancel(self, handle: _Event) -> None:
        self.sched.cancel(handle)

    def kill(self) -> None:
        self.alive = False


class Endpoint:
    """One side of a bidirectional FIFO channel."""

    def __init__(self, channel: "Channel", side: int) -> None:
        self._channel = channel
        self._side = side
        self.on_message: Callable[[object], None] | None = None
        self.on_close: Callable[[], None] | None = None
        # cost hooks, assigned by the world builder
        self.send_cost: Callable[[object], float] = lambda msg: 0.0
        self.recv_cost: Callable[[object], float] = lambda msg: 0.0

    @property
    def peer(self) -> "Endpoint":
        return self._channel.ends[1 - self._side]

    def send(self, msg: object) -> None:
        self._channel.send(self._side, msg)

    def close(self) -> None:
        self._channel.close(self._side)


class Channel:
    def __init__(
        self,
        sched: Scheduler,
        exec_a: Executor,
        exec_b: Executor,
        latency: Callable[[], float],
    ) -> None:
        self.sched = sched
        self.execs = (exec_a, exec_b)
        self.latency = latency
        self.ends = (Endpoint(self, 0), Endpoint(self, 1))
        self._last_arrival = [0.0, 0.0]  # per direction (indexed by receiving side)
        self._open = True

    def send(self, from_side: int, msg: object) -> None:
        if not self._open:
            return
        sender = self.execs[from_side]
        if not sender.alive:
            return
        src = self.ends[from_side]
        sender.debit(src.send_cost(msg))
        to_side = 1 - from_side
        depart = sender.now()
        arrival = max(depart + self.latency(), self._last_arrival[to_side] + 1e-9)
        self._last_arrival[to_side] = arrival
        dst = self.ends[to_side]
        receiver = self.execs[to_side]

        def deliver() -> None:
            if dst.on_message is not None:
                dst.on_message(msg)

        receiver.post(deliver, arrive=arrival, cost_ms=dst.recv_cost(msg))

    def close(self, from_side: int) -> None:
        """Close after in-flight messages are delivered, like a flushed TCP FIN."""
        if not self._open:
            return
        self._open = False
        for to_side in (0, 1):
            if to_side == from_side:
                continue
            dst = self.ends[to_side]
            receiver = self.execs[to_side]
            when = max(self.sched.now, self._last_arrival[to_side]) + 1e-6

            def notify(dst=dst) -> None:
                if dst.on_close is not None:
                    dst.on_close()

            receiver.post(notify, arrive=when)


@dataclass
class CostModel:
    """Service times in milliseconds; all zero outside benchmarks."""

    coord_request: float = 0.0
    coord_per_entry: float = 0.0
    ctrl_recv: float = 0.0
    ctrl_recv_log_event: float = 0.0
    ctrl_recv_log_processed: float = 0.0
    ctrl_send: float = 0.0
    ctrl_flush_fixed: float = 0.0
    ctrl_flush_per_entry: float = 0.0
    switch_recv: float = 0.0
    switch_send: float = 0.0


def default_latency(rng: random.Random, lo: float = 0.2, hi: float = 1.5) -> Callable[[], float]:
    def sample() -> float:
        return rng.uniform(lo, hi)

    return sample


def fixed_latency(value: float) -> Callable[[], float]:
    return lambda: value
