"""Controller replica.

The master stamps every switch event with a monotonically increasing id,
replicates batches of events to the shared log, feeds logged events to the
application pipeline in id order, and pushes the resulting commands to each
affected switch inside a bundle whose last message is a commit marker. Once
every affected switch has acknowledged its bundle, the master logs an
event-processed entry.

Slaves buffer raw events (filtering them out as logged copies arrive), track
commit markers, and deliver an event to their own applications only after
its processed entry is logged, with all resulting writes discarded.

On election a new master first replays logged-but-unfinished events to
rebuild the old master's state, then decides per affected switch whether to
resend: a recorded commit marker means the switch already executed the
commands; otherwise a barrier round-trip proves no marker can still be in
flight, so the commands are resent in a fresh bundle. Only then is the
slave buffer drained into the log and normal operation resumed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol

from . import ofwire
from .apps import App
from .coord import EventBody, LogBody, LogEntry, ProcessedBody
from .events import (
    KIND_PACKET_IN,
    KIND_PORT_STATUS,
    KIND_SWITCH_FAILURE,
    SWITCH_FAILURE_SEQ,
    SwitchEvent,
    port_status_seq,
)
from .ofwire import (
    BarrierReply,
    BarrierRequest,
    BundleAdd,
    BundleCommit,
    BundleOpen,
    BundleReply,
    FlowMod,
    PacketIn,
    PacketOut,
    PortStatus,
    RoleAnnounce,
    make_commit_marker,
    parse_commit_marker,
)

ROLE_SLAVE = "slave"
ROLE_ELECT = "master-elect"
ROLE_MASTER = "master"


class FatalProtocolError(Exception):
    """A state the protocol promises is unreachable; never handled."""


class AppWriteError(Exception):
    pass


@dataclass
class ReplicaConfig:
    batch_size: int = 1000
    batch_time_ms: float = 50.0
    # consistency toggles used by the benchmark's per-guarantee modes
    replicate_events: bool = True
    use_bundles: bool = True


class ReplicaEnv(Protocol):
    """Runtime services a replica needs; implemented per transport."""

    def now(self) -> float: ...

    def call_later(self, delay_ms: float, fn: Callable[[], None]) -> object: ...

    def cancel(self, handle: object) -> None: ...

    def send_switch(self, switch_id: str, msg: ofwire.OfMessage) -> None: ...

    def coord_append(
        self, epoch: int, bodies: list[LogBody], callback: Callable[[str | None], None]
    ) -> None: ...


class AppContext:
    """Write sink handed to applications while one event is being processed."""

    def __init__(self, event: SwitchEvent, sink: Callable[[str, ofwire.OfMessage], None]) -> None:
        self.event = event
        self._sink = sink
        self._active = True

    def write(self, switch_id: str, message: ofwire.OfMessage) -> None:
        if not self._active:
            raise AppWriteError("write outside an event callback")
        if not isinstance(message, (PacketOut, FlowMod)):
            raise AppWriteError(f"apps may only write PacketOut or FlowMod, got {type(message).__name__}")
        self._sink(switch_id, message)

    def _close(self) -> None:
        self._active = False


@dataclass
class _Promotion:
    """Book-keeping for one slave-to-master transition."""

    epoch: int
    held: dict[int, dict[str, list[ofwire.OfMessage]]] = field(default_factory=dict)
    waiting: dict[int, set[str]] = field(default_factory=dict)  # event -> switches to probe
    barrier_waits: dict[str, int] = field(default_factory=dict)  # switch -> xid
    finished: set[int] = field(default_factory=set)
    outstanding: int = 0


def _noop_hook(point: str, **kw) -> None:
    return None


class Replica:
    def __init__(
        self,
        controller_id: str,
        config: ReplicaConfig,
        apps: list[App],
        env: ReplicaEnv,
        trace: Callable[..., None] | None = None,
        fault_hook: Callable[..., None] | None = None,
    ) -> None:
        self.controller_id = controller_id
        self.cfg = config
        self.apps = apps
        self.env = env
        self._trace_fn = trace or (lambda kind, **kw: None)
        self._fault_hook = fault_hook or _noop_hook

        self.role = ROLE_SLAVE
        self.epoch = 0
        self.live_switches: set[str] = set()

        # shared-log mirror and indexes
        self.mirror: list[LogEntry] = []
        self.events_by_id: dict[int, SwitchEvent] = {}
        self.occurrence_to_id: dict[tuple[str, int], int] = {}
        self.processed_logged: set[int] = set()
        self.max_logged_id = 0

        # master-side replication state
        self.next_event_id = 1
        self.pending_batch: list[LogBody] = []
        self._pending_keys: set[tuple[str, int]] = set()
        self._inflight: list[list[LogBody]] = []
        self._batch_timer: object | None = None

        # slave-side buffer of unlogged occurrences
        self.slave_buffer: list[SwitchEvent] = []
        self._buffer_keys: set[tuple[str, int]] = set()

        # delivery pipeline: delivered ids form the dense prefix 1..delivered_upto
        self.delivered_upto = 0
        self.n_delivered = 0

        # bundle manager state
        self._next_bundle_id = 1
        self._next_xid = 1
        self._bundle_owner: dict[int, tuple[int, str]] = {}
        self.pending_replies: dict[int, set[str]] = {}
        self._processed_sent: set[int] = set()
        self.n_completed = 0  # events whose transaction fully finished at this replica

        # learned from commit markers: (event_id, switch_id) -> highest marker epoch
        self.processed_at_switch: dict[tuple[int, str], int] = {}

        self._ps_counts: dict[str, int] = {}
        self._promo: _Promotion | None = None
        self._promo_waiting = False
        self._promo_watermark = 0

    def _trace(self, kind: str, **kw) -> None:
        self._trace_fn(kind, epoch=self.epoch, **kw)

    # ------------------------------------------------------------------
    # switch-facing input

    def attach_switch(self, switch_id: str) -> None:
        self.live_switches.add(switch_id)

    def on_switch_disconnect(self, switch_id: str) -> None:
        if switch_id not in self.live_switches:
            return
        self.live_switches.discard(switch_id)
        self._trace("conn-lost", switch_id=switch_id)
        # the failed switch satisfies anything still waiting on it
        for eid in sorted(self.pending_replies):
            waiting = self.pending_replies[eid]
            if switch_id in waiting:
                waiting.discard(switch_id)
                if not waiting:
                    del self.pending_replies[eid]
                    self._held_or_finish(eid)
        if self._promo is not None:
            self._promo.barrier_waits.pop(switch_id, None)
            for eid in sorted(self._promo.waiting):
                if switch_id in self._promo.waiting[eid]:
                    self._promo.waiting[eid].discard(switch_id)
                    self._trace("probe-switch-dead", event_id=eid, switch_id=switch_id)
                    self._maybe_finish_held(eid)
        ev = SwitchEvent(switch_id, SWITCH_FAILURE_SEQ, KIND_SWITCH_FAILURE, None)
        self._ingest(ev)

    def on_switch_message(self, switch_id: str, msg: ofwire.OfMessage) -> None:
        if isinstance(msg, PacketIn):
            marker = parse_commit_marker(msg)
            if marker is not None:
                for eid in marker.event_ids:
                    key = (eid, switch_id)
                    prev = self.processed_at_switch.get(key, -1)
                    self.processed_at_switch[key] = max(prev, marker.master_epoch)
                    self._trace(
                        "marker-received",
                        event_id=eid,
                        switch_id=switch_id,
                        detail={"marker_epoch": marker.master_epoch},
                    )
                return
            self._ingest(SwitchEvent(switch_id, msg.switch_seq, KIND_PACKET_IN, msg))
        elif isinstance(msg, PortStatus):
            count = self._ps_counts.get(switch_id, 0) + 1
            self._ps_counts[switch_id] = count
            self._ingest(SwitchEvent(switch_id, port_status_seq(count), KIND_PORT_STATUS, msg))
        elif isinstance(msg, BundleReply):
            self._on_bundle_reply(switch_id, msg)
        elif isinstance(msg, BarrierReply):
            self._on_barrier_reply(switch_id, msg.xid)
        else:
            self._trace("unexpected-message", switch_id=switch_id, detail={"msg": ofwire.to_json(msg)})

    # ------------------------------------------------------------------
    # event admission

    def _ingest(self, ev: SwitchEvent) -> None:
        key = ev.occurrence
        self._trace("event-collected", switch_id=ev.switch_id, switch_seq=ev.switch_seq, detail={"kind": ev.kind})
        if key in self.occurrence_to_id or key in self._pending_keys or key in self._buffer_keys:
            self._trace("duplicate-dropped", switch_id=ev.switch_id, switch_seq=ev.switch_seq)
            return
        if self.role == ROLE_MASTER:
            ev.event_id = self.next_event_id
            self.next_event_id += 1
            self._trace("id-assigned", event_id=ev.event_id, switch_id=ev.switch_id, switch_seq=ev.switch_seq)
            if not self.cfg.replicate_events:
                # consistency toggle: skip the shared log, deliver immediately
                self.events_by_id[ev.event_id] = ev
                staged = self._deliver(ev, discard=False)
                self._finalize(ev, staged)
                return
            self._pending_keys.add(key)
            self.pending_batch.append(EventBody(ev))
            self._arm_or_flush()
        else:
            self.slave_buffer.append(ev)
            self._buffer_keys.add(key)
            self._trace("buffered", switch_id=ev.switch_id, switch_seq=ev.switch_seq)

    # ------------------------------------------------------------------
    # replication batching

    def _arm_or_flush(self) -> None:
        if len(self.pending_batch) >= self.cfg.batch_size:
            self._flush("size")
        elif self._batch_timer is None:
            self._batch_timer = self.env.call_later(self.cfg.batch_time_ms, self._flush_timer)

    def _flush_timer(self) -> None:
        self._batch_timer = None
        if self.pending_batch:
            self._flush("time")

    def _flush(self, reason: str) -> None:
        if not self.pending_batch:
            return
        if self._batch_timer is not None:
            self.env.cancel(self._batch_timer)
            self._batch_timer = None
        bodies = self.pending_batch
        self.pending_batch = []
        size = max(1, self.cfg.batch_size)
        for i in range(0, len(bodies), size):
            chunk = bodies[i : i + size]
            ids = [b.event.event_id for b in chunk if isinstance(b, EventBody)]
            self._fault_hook("F1", event_ids=ids)
            self._inflight.append(chunk)
            self.env.coord_append(self.epoch, chunk, lambda err, c=chunk: self._append_done(c, err))

    def _append_done(self, chunk: list[LogBody], error: str | None) -> None:
        if error is None:
            try:
                self._inflight.remove(chunk)
            except ValueError:
                pass
            return
        self._trace("append-rejected", detail={"error": error})
        if chunk in self._inflight:
            # a newer master exists; fall back to slave and keep the events buffered
            self._deposed()

    # ------------------------------------------------------------------
    # shared-log input

    def on_log_entry(self, entry: LogEntry) -> None:
        if entry.seq != len(self.mirror) + 1:
            raise FatalProtocolError(f"log gap: expected seq {len(self.mirror) + 1}, got {entry.seq}")
        self.mirror.append(entry)
        body = entry.body
        if isinstance(body, EventBody):
            ev = body.event
            if ev.event_id is None or ev.event_id != self.max_logged_id + 1:
                raise FatalProtocolError(f"non-dense event id {ev.event_id} after {self.max_logged_id}")
            self.max_logged_id = ev.event_id
            self.events_by_id[ev.event_id] = ev
            key = ev.occurrence
            self.occurrence_to_id[key] = ev.event_id
            self._pending_keys.discard(key)
            if key in self._buffer_keys:
                self._buffer_keys.discard(key)
                self._trace("buffer-filtered", event_id=ev.event_id, switch_id=ev.switch_id, switch_seq=ev.switch_seq)
            self._trace("logged", event_id=ev.event_id, switch_id=ev.switch_id, detail={"seq": entry.seq})
        else:
            if body.event_id not in self.events_by_id:
                raise FatalProtocolError(f"processed entry for unknown event {body.event_id}")
            self.processed_logged.add(body.event_id)
            if self.role == ROLE_MASTER:
                self._trace("processed-logged", event_id=body.event_id)
        self._advance()
        if self._promo_waiting and len(self.mirror) >= self._promo_watermark:
            self._promo_waiting = False
            self._start_promotion_work()

    def _advance(self) -> None:
        if self.role == ROLE_MASTER and self._promo is None:
            while True:
                ev = self.events_by_id.get(self.delivered_upto + 1)
                if ev is None:
                    break
                staged = self._deliver(ev, discard=False)
                self._finalize(ev, staged)
        elif self._promo is None:
            # slaves replay an event only once its transaction is known complete,
            # and strictly in id order so every replica delivers the same sequence
            while True:
                ev = self.events_by_id.get(self.delivered_upto + 1)
                if ev is None or ev.event_id not in self.processed_logged:
                    break
                self._deliver(ev, discard=True)

    # ------------------------------------------------------------------
    # application pipeline

    def _deliver(self, ev: SwitchEvent, discard: bool) -> dict[str, list[ofwire.OfMessage]]:
        assert ev.event_id == self.delivered_upto + 1, "pipeline must deliver in id order"
        staged: dict[str, list[ofwire.OfMessage]] = {}
        writes = 0

        def sink(switch_id: str, message: ofwire.OfMessage) -> None:
            nonlocal writes
            writes += 1
            if not discard:
                staged.setdefault(switch_id, []).append(message)

        ctx = AppContext(ev, sink)
        for app in self.apps:
            try:
                app.on_event(ev, ctx)
            except Exception as exc:  # app faults must not diverge the replicas
                staged.clear()
                self._trace("app-error", event_id=ev.event_id, detail={"app": app.name, "error": repr(exc)})
                break
        ctx._close()
        self.delivered_upto = ev.event_id
        self.n_delivered += 1
        self._trace(
            "delivered",
            event_id=ev.event_id,
            switch_id=ev.switch_id,
            switch_seq=ev.switch_seq,
            detail={"discarded": discard, "writes": writes},
        )
        return staged

    # ------------------------------------------------------------------
    # bundle manager

    def _finalize(self, ev: SwitchEvent, staged: dict[str, list[ofwire.OfMessage]]) -> None:
        eid = ev.event_id
        assert eid is not None
        if not self.cfg.use_bundles:
            # consistency toggle: plain commands, no transactional envelope
            for switch_id, cmds in staged.items():
                if switch_id not in self.live_switches:
                    continue
                for cmd in cmds:
                    self.env.send_switch(switch_id, cmd)
            self._enqueue_processed(eid)
            return
        sent_any = False
        for switch_id, cmds in staged.items():
            if switch_id not in self.live_switches:
                self._trace("finalize-switch-dead", event_id=eid, switch_id=switch_id)
                continue
            self._send_bundle(eid, switch_id, cmds)
            sent_any = True
        if sent_any:
            self._fault_hook("F3", event_id=eid)
        if eid not in self.pending_replies:
            self._enqueue_processed(eid)

    def _send_bundle(self, eid: int, switch_id: str, cmds: list[ofwire.OfMessage]) -> None:
        bid = self._next_bundle_id
        self._next_bundle_id += 1
        self._bundle_owner[bid] = (eid, switch_id)
        self.env.send_switch(switch_id, BundleOpen(bid))
        for cmd in cmds:
            self.env.send_switch(switch_id, BundleAdd(bid, cmd))
        self.env.send_switch(switch_id, BundleAdd(bid, make_commit_marker(self.epoch, [eid])))
        self._fault_hook("F2", event_id=eid, switch_id=switch_id)
        self.env.send_switch(switch_id, BundleCommit(bid))
        self.pending_replies.setdefault(eid, set()).add(switch_id)
        self._trace("commit-sent", event_id=eid, switch_id=switch_id, bundle_id=bid, detail={"commands": len(cmds)})

    def _on_bundle_reply(self, switch_id: str, msg: BundleReply) -> None:
        if not msg.success:
            raise FatalProtocolError(f"switch {switch_id} rejected bundle {msg.bundle_id}")
        owner = self._bundle_owner.pop(msg.bundle_id, None)
        if owner is None:
            self._trace("stray-bundle-reply", switch_id=switch_id, bundle_id=msg.bundle_id)
            return
        eid, _ = owner
        self._trace("bundle-committed", event_id=eid, switch_id=switch_id, bundle_id=msg.bundle_id)
        waiting = self.pending_replies.get(eid)
        if waiting is None:
            return
        waiting.discard(switch_id)
        if not waiting:
            del self.pending_replies[eid]
            self._held_or_finish(eid)

    def _held_or_finish(self, eid: int) -> None:
        if self._promo is not None and eid in self._promo.held:
            self._maybe_finish_held(eid)
        else:
            self._enqueue_processed(eid)

    def _enqueue_processed(self, eid: int) -> None:
        if eid in self._processed_sent:
            return
        self._processed_sent.add(eid)
        self.n_completed += 1
        if not self.cfg.replicate_events:
            return
        self.pending_batch.append(ProcessedBody(eid))
        self._arm_or_flush()

    # ------------------------------------------------------------------
    # leadership

    def on_leadership(self, leader: str, epoch: int, log_len: int) -> None:
        self.epoch = max(self.epoch, epoch)
        if leader == self.controller_id:
            if self.role != ROLE_SLAVE:
                return
            self.role = ROLE_ELECT
            self._trace("role-changed", detail={"role": ROLE_MASTER})
            self._promo_watermark = log_len
            if len(self.mirror) >= log_len:
                self._start_promotion_work()
            else:
                self._promo_waiting = True
        else:
            if self.role != ROLE_SLAVE:
                self._deposed()

    def _start_promotion_work(self) -> None:
        promo = _Promotion(epoch=self.epoch)
        self._promo = promo
        # 1. catch-up: replay everything the old master logged, discarding the
        #    writes of finished events and holding the writes of unfinished ones
        for eid in range(self.delivered_upto + 1, self.max_logged_id + 1):
            ev = self.events_by_id[eid]
            if eid in self.processed_logged:
                self._deliver(ev, discard=True)
            else:
                staged = self._deliver(ev, discard=False)
                promo.held[eid] = {s: list(cmds) for s, cmds in staged.items()}
                promo.outstanding += 1
        # 2. probe: one barrier per affected switch settles whether a marker
        #    from the old master can still be in flight on this connection
        to_probe: set[str] = set()
        for eid in sorted(promo.held):
            waits: set[str] = set()
            for switch_id in promo.held[eid]:
                if (eid, switch_id) in self.processed_at_switch:
                    self._trace("probe-no-resend", event_id=eid, switch_id=switch_id)
                elif switch_id not in self.live_switches:
                    self._trace("probe-switch-dead", event_id=eid, switch_id=switch_id)
                else:
                    waits.add(switch_id)
                    to_probe.add(switch_id)
            promo.waiting[eid] = waits
        for switch_id in sorted(to_probe):
            xid = self._next_xid
            self._next_xid += 1
            promo.barrier_waits[switch_id] = xid
            self.env.send_switch(switch_id, BarrierRequest(xid))
            self._trace("barrier-sent", switch_id=switch_id, detail={"xid": xid})
        for eid in sorted(promo.held):
            self._maybe_finish_held(eid)
        if self._promo is promo and promo.outstanding == 0:
            self._drain_and_resume()

    def _on_barrier_reply(self, switch_id: str, xid: int) -> None:
        promo = self._promo
        if promo is None or promo.barrier_waits.get(switch_id) != xid:
            self._trace("stray-barrier-reply", switch_id=switch_id, detail={"xid": xid})
            return
        del promo.barrier_waits[switch_id]
        for eid in sorted(promo.waiting):
            if switch_id not in promo.waiting[eid]:
                continue
            promo.waiting[eid].discard(switch_id)
            if (eid, switch_id) in self.processed_at_switch:
                # the old master committed; the marker arrived before this reply
                self._trace("probe-no-resend", event_id=eid, switch_id=switch_id)
            else:
                # nothing committed and nothing can still be in flight: resend
                self._trace("probe-resend", event_id=eid, switch_id=switch_id)
                self._send_bundle(eid, switch_id, promo.held[eid][switch_id])
            self._maybe_finish_held(eid)

    def _maybe_finish_held(self, eid: int) -> None:
        promo = self._promo
        if promo is None or eid not in promo.held or eid in promo.finished:
            return
        if promo.waiting.get(eid) or self.pending_replies.get(eid):
            return
        promo.finished.add(eid)
        self._enqueue_processed(eid)
        promo.outstanding -= 1
        if promo.outstanding == 0:
            self._drain_and_resume()

    def _drain_and_resume(self) -> None:
        promo = self._promo
        assert promo is not None
        self._promo = None
        self.next_event_id = self.max_logged_id + 1
        buffered = self.slave_buffer
        self.slave_buffer = []
        self.role = ROLE_MASTER
        for ev in buffered:
            key = ev.occurrence
            self._buffer_keys.discard(key)
            if key in self.occurrence_to_id or key in self._pending_keys:
                self._trace("buffer-filtered", switch_id=ev.switch_id, switch_seq=ev.switch_seq)
                continue
            ev.event_id = self.next_event_id
            self.next_event_id += 1
            self._pending_keys.add(key)
            self._trace("id-assigned", event_id=ev.event_id, switch_id=ev.switch_id, switch_seq=ev.switch_seq)
            self.pending_batch.append(EventBody(ev))
        if self.pending_batch:
            self._flush("promotion")
        for switch_id in sorted(self.live_switches):
            self.env.send_switch(switch_id, RoleAnnounce(self.controller_id, self.epoch))
        self._trace("promotion-complete", detail={"held": len(promo.finished)})
        self._advance()

    def _deposed(self) -> None:
        if self.role == ROLE_SLAVE and self._promo is None and not self._inflight and not self.pending_batch:
            return
        if self.role != ROLE_SLAVE:
            self._trace("role-changed", detail={"role": ROLE_SLAVE})
        self.role = ROLE_SLAVE
        self._promo = None
        self._promo_waiting = False
        if self._batch_timer is not None:
            self.env.cancel(self._batch_timer)
            self._batch_timer = None
        moved: list[SwitchEvent] = []
        for chunk in self._inflight:
            moved.extend(b.event for b in chunk if isinstance(b, EventBody))
        moved.extend(b.event for b in self.pending_batch if isinstance(b, EventBody))
        self._inflight = []
        self.pending_batch = []
        for ev in moved:
            key = ev.occurrence
            self._pending_keys.discard(key)
            if key in self.occurrence_to_id or key in self._buffer_keys:
                continue
            self.slave_buffer.append(SwitchEvent(ev.switch_id, ev.switch_seq, ev.kind, ev.message))
            self._buffer_keys.add(key)
        # in-flight bundles may still commit; their markers will be recorded
        self.pending_replies = {}
        self._bundle_owner = {}
        self._advance()

    # ------------------------------------------------------------------
    # quiescence introspection (used by the harness)

    def is_quiescent(self) -> bool:
        if self.pending_batch or self._inflight or self.pending_replies or self._promo is not None:
            return False
        if self._promo_waiting:
            return False
        if self.role == ROLE_MASTER:
            return self.delivered_upto == self.max_logged_id
        return not self._buffer_keys
