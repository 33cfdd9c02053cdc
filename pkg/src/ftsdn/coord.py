"""Strongly consistent coordination service.

A single-process stand-in for a replicated ensemble, exposing the contract
the control plane depends on: an append-only shared log with atomic batched
appends, watches that replay every entry in order, sessions with
timeout-based failure detection, and arrival-ordered leader election with
fencing epochs.

All methods must be invoked from one logical serializer (the owning actor or
a lock); the service itself holds no threads. Time is passed in explicitly
so the harness clock can drive expiry deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .events import SwitchEvent


class CoordError(Exception):
    pass


class SessionExpired(CoordError):
    pass


class NotLeader(CoordError):
    pass


class EmptyAppend(CoordError):
    pass


class ElectionError(CoordError):
    pass


@dataclass
class EventBody:
    event: SwitchEvent

    def to_json(self) -> dict:
        return {"kind": "event", "event": self.event.to_json()}


@dataclass
class ProcessedBody:
    event_id: int

    def to_json(self) -> dict:
        return {"kind": "processed", "event_id": self.event_id}


LogBody = EventBody | ProcessedBody


def body_from_json(d: dict) -> LogBody:
    if d["kind"] == "event":
        return EventBody(SwitchEvent.from_json(d["event"]))
    if d["kind"] == "processed":
        return ProcessedBody(d["event_id"])
    raise ValueError(f"unknown log body kind {d['kind']!r}")


@dataclass
class LogEntry:
    seq: int
    body: LogBody

    def to_json(self) -> dict:
        return {"seq": self.seq, "body": self.body.to_json()}

    @staticmethod
    def from_json(d: dict) -> "LogEntry":
        return LogEntry(d["seq"], body_from_json(d["body"]))


@dataclass
class Session:
    session_id: int
    owner: str
    timeout_ms: float
    last_heartbeat: float
    expired: bool = False


@dataclass
class _Watch:
    cursor: int  # index into the log of the next entry to deliver
    deliver: Callable[[LogEntry], None]


# leadership callback: (leader_id, epoch, log_length_at_change)
LeaderCallback = Callable[[str, int, int], None]


class CoordService:
    def __init__(self, trace: Callable[..., None] | None = None, fencing_enabled: bool = True) -> None:
        self.log: list[LogEntry] = []
        self.fencing_enabled = fencing_enabled
        self._trace = trace or (lambda kind, **kw: None)
        self._sessions: dict[int, Session] = {}
        self._next_session_id = 1
        self._candidates: list[tuple[str, int]] = []  # arrival-ordered (owner, session_id)
        self.leader: str | None = None
        self.epoch = 0
        self._watches: list[_Watch] = []
        self._leader_subs: list[LeaderCallback] = []
        # cheap counters for quiescence checks
        self.n_events = 0
        self.n_processed = 0

    # -- sessions ----------------------------------------------------------

    def open_session(self, owner: str, timeout_ms: float, now: float) -> int:
        sid = self._next_session_id
        self._next_session_id += 1
        self._sessions[sid] = Session(sid, owner, timeout_ms, now)
        return sid

    def _live(self, session_id: int, now: float) -> Session:
        sess = self._sessions.get(session_id)
        if sess is None:
            raise SessionExpired(f"unknown session {session_id}")
        if not sess.expired and now - sess.last_heartbeat > sess.timeout_ms:
            self._expire(sess)
        if sess.expired:
            raise SessionExpired(f"session {session_id} of {sess.owner} expired")
        return sess

    def heartbeat(self, session_id: int, now: float) -> None:
        sess = self._live(session_id, now)
        sess.last_heartbeat = now

    def check_expiry(self, now: float) -> list[str]:
        """Expire overdue sessions; returns owners expired on this tick."""
        expired = []
        for sess in list(self._sessions.values()):
            if not sess.expired and now - sess.last_heartbeat > sess.timeout_ms:
                self._expire(sess)
                expired.append(sess.owner)
        return expired

    def next_deadline(self) -> float | None:
        deadlines = [
            s.last_heartbeat + s.timeout_ms for s in self._sessions.values() if not s.expired
        ]
        return min(deadlines) if deadlines else None

    def _expire(self, sess: Session) -> None:
        sess.expired = True
        self._trace("session-expired", detail={"controller": sess.owner})
        before = self._candidates
        self._candidates = [c for c in before if c[1] != sess.session_id]
        if len(self._candidates) != len(before):
            self._update_leader()

    # -- election ----------------------------------------------------------

    def enroll(self, session_id: int, controller_id: str, now: float) -> None:
        sess = self._live(session_id, now)
        if any(sid == session_id for _, sid in self._candidates):
            raise ElectionError(f"session {session_id} already enrolled")
        self._candidates.append((controller_id, sess.session_id))
        if self.leader is None:
            self._update_leader()

    def resign(self, session_id: int) -> None:
        before = self._candidates
        self._candidates = [c for c in before if c[1] != session_id]
        if len(self._candidates) != len(before):
            self._update_leader()

    def watch_leadership(self, cb: LeaderCallback) -> None:
        self._leader_subs.append(cb)
        if self.leader is not None:
            cb(self.leader, self.epoch, len(self.log))

    def _update_leader(self) -> None:
        head = self._candidates[0][0] if self._candidates else None
        if head is None:
            self.leader = None
            return
        if head != self.leader or self.epoch == 0:
            self.leader = head
            self.epoch += 1
            self._trace("leader-elected", epoch=self.epoch, detail={"controller": head})
            for cb in list(self._leader_subs):
                cb(head, self.epoch, len(self.log))

    def _leader_session_id(self) -> int | None:
        return self._candidates[0][1] if self._candidates else None

    # -- log ---------------------------------------------------------------

    def append(self, session_id: int, epoch: int, bodies: list[LogBody], now: float) -> tuple[int, int]:
        """Append all bodies contiguously and atomically; returns seq range."""
        if not bodies:
            raise EmptyAppend("rejected-empty")
        if self.fencing_enabled:
            self._live(session_id, now)
            if session_id != self._leader_session_id() or epoch != self.epoch:
                raise NotLeader(f"append under epoch {epoch}, current epoch {self.epoch}")
        first = len(self.log) + 1
        entries = []
        for body in bodies:
            entry = LogEntry(len(self.log) + 1, body)
            self.log.append(entry)
            entries.append(entry)
            if isinstance(body, EventBody):
                self.n_events += 1
                ev = body.event
                self._trace(
                    "log-append",
                    epoch=self.epoch,
                    event_id=ev.event_id,
                    switch_id=ev.switch_id,
                    switch_seq=ev.switch_seq,
                    detail={"seq": entry.seq, "body": body.to_json()},
                )
            else:
                self.n_processed += 1
                self._trace(
                    "log-append",
                    epoch=self.epoch,
                    event_id=body.event_id,
                    detail={"seq": entry.seq, "body": body.to_json()},
                )
        for watch in self._watches:
            self._pump(watch)
        return first, len(self.log)

    def subscribe(self, from_seq: int, deliver: Callable[[LogEntry], None]) -> None:
        """Deliver every entry with seq >= from_seq exactly once, in order.

        Backlog is replayed synchronously; later entries are pushed as they
        are appended.
        """
        if from_seq < 1:
            raise CoordError("from_seq must be >= 1")
        watch = _Watch(cursor=from_seq - 1, deliver=deliver)
        self._watches.append(watch)
        self._pump(watch)

    def _pump(self, watch: _Watch) -> None:
        while watch.cursor < len(self.log):
            entry = self.log[watch.cursor]
            watch.cursor += 1
            watch.deliver(entry)

    def dump_log(self) -> list[dict]:
        return [e.to_json() for e in self.log]

    @property
    def max_event_id(self) -> int:
        for entry in reversed(self.log):
            if isinstance(entry.body, EventBody):
                return entry.body.event.event_id or 0
        return 0
