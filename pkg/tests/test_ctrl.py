import pytest

from ftsdn import ofwire
from ftsdn.coord import EventBody, LogEntry, ProcessedBody
from ftsdn.ctrl import AppContext, AppWriteError, Replica, ReplicaConfig, ROLE_MASTER, ROLE_SLAVE
from ftsdn.events import KIND_PACKET_IN, SwitchEvent
from ftsdn.ofwire import (
    Action,
    BarrierRequest,
    BundleAdd,
    BundleCommit,
    BundleOpen,
    BundleReply,
    PacketIn,
    PacketOut,
    PortStatus,
)


class FakeEnv:
    def __init__(self):
        self.t = 0.0
        self.timers = []
        self.sent = []
        self.appends = []

    def now(self):
        return self.t

    def call_later(self, delay_ms, fn):
        handle = [self.t + delay_ms, fn]
        self.timers.append(handle)
        return handle

    def cancel(self, handle):
        handle[1] = None

    def send_switch(self, switch_id, msg):
        self.sent.append((switch_id, msg))

    def coord_append(self, epoch, bodies, callback):
        self.appends.append((epoch, list(bodies), callback))

    def fire_timers(self):
        timers, self.timers = self.timers, []
        for _, fn in timers:
            if fn is not None:
                fn()


class RecordingApp:
    name = "recording"

    def __init__(self, respond=True):
        self.seen = []
        self.respond = respond

    def on_event(self, event, ctx):
        self.seen.append(event.event_id)
        if self.respond and event.kind == KIND_PACKET_IN:
            ctx.write(event.switch_id, PacketOut((Action.output(2),), event.message.payload))


class BoomApp:
    name = "boom"

    def on_event(self, event, ctx):
        ctx.write(event.switch_id, PacketOut((Action.drop(),), b""))
        raise RuntimeError("app bug")


def packet_in(sw="s0", seq=1):
    return PacketIn(sw, seq, ofwire.NO_BUFFER, 1, b"payload-%d" % seq)


def make_replica(app=None, trace=None, **cfg_kw):
    env = FakeEnv()
    replica = Replica("c0", ReplicaConfig(**cfg_kw), [app or RecordingApp()], env, trace=trace)
    replica.attach_switch("s0")
    replica.attach_switch("s1")
    return replica, env


def make_master(app=None, trace=None, **cfg_kw):
    replica, env = make_replica(app, trace, **cfg_kw)
    replica.on_leadership("c0", 1, 0)
    assert replica.role == ROLE_MASTER
    env.sent.clear()  # drop the promotion's role announcements
    return replica, env


def feed_log(replica, env):
    """Play the appended batches back as log entries, like the service would."""
    seq = len(replica.mirror)
    while env.appends:
        _, bodies, cb = env.appends.pop(0)
        cb(None)
        for body in bodies:
            seq += 1
            replica.on_log_entry(LogEntry(seq, body))


def test_master_assigns_monotonic_ids_in_fifo_order():
    replica, env = make_master()
    replica.on_switch_message("s0", packet_in(seq=1))
    replica.on_switch_message("s0", packet_in(seq=2))
    assert [b.event.event_id for b in replica.pending_batch] == [1, 2]
    assert [b.event.switch_seq for b in replica.pending_batch] == [1, 2]


def test_flush_on_batch_size():
    replica, env = make_master(batch_size=3, batch_time_ms=50.0)
    for seq in range(1, 4):
        replica.on_switch_message("s0", packet_in(seq=seq))
    assert len(env.appends) == 1
    _, bodies, _ = env.appends[0]
    assert [b.event.event_id for b in bodies] == [1, 2, 3]


def test_flush_on_batch_time():
    replica, env = make_master(batch_size=1000, batch_time_ms=50.0)
    replica.on_switch_message("s0", packet_in(seq=1))
    assert env.appends == []
    env.t = 50.0
    env.fire_timers()
    assert len(env.appends) == 1
    assert len(env.appends[0][1]) == 1


def test_batch_size_one_appends_each_event():
    replica, env = make_master(batch_size=1)
    for seq in range(1, 4):
        replica.on_switch_message("s0", packet_in(seq=seq))
    assert len(env.appends) == 3


def test_slave_buffers_without_ids():
    replica, env = make_replica()
    replica.on_switch_message("s0", packet_in(seq=1))
    assert len(replica.slave_buffer) == 1
    assert replica.slave_buffer[0].event_id is None
    assert env.appends == []


def test_marker_records_processed_at_switch_both_roles():
    replica, env = make_replica()
    marker = ofwire.make_commit_marker(1, [7])
    replica.on_switch_message("s0", PacketIn("s0", 9, 0, ofwire.CONTROLLER_PORT, marker.payload))
    assert replica.processed_at_switch[(7, "s0")] == 1
    assert replica.slave_buffer == []  # markers never become events


def test_stale_marker_epoch_never_overrides_newer():
    replica, env = make_replica()
    new = ofwire.make_commit_marker(3, [7])
    old = ofwire.make_commit_marker(1, [7])
    replica.on_switch_message("s0", PacketIn("s0", 1, 0, 0, new.payload))
    replica.on_switch_message("s0", PacketIn("s0", 2, 0, 0, old.payload))
    assert replica.processed_at_switch[(7, "s0")] == 3


def test_slave_filters_buffer_on_log_entry():
    replica, env = make_replica()
    replica.on_switch_message("s0", packet_in(seq=1))
    ev = SwitchEvent("s0", 1, KIND_PACKET_IN, packet_in(seq=1), event_id=1)
    replica.on_log_entry(LogEntry(1, EventBody(ev)))
    assert not replica._buffer_keys
    # arriving after the log entry is a duplicate, not a fresh buffering
    replica.on_switch_message("s0", packet_in(seq=1))
    assert not replica._buffer_keys


def test_slave_delivers_on_processed_in_id_order_with_writes_discarded():
    app = RecordingApp()
    replica, env = make_replica(app)
    for i in (1, 2):
        ev = SwitchEvent("s0", i, KIND_PACKET_IN, packet_in(seq=i), event_id=i)
        replica.on_log_entry(LogEntry(i, EventBody(ev)))
    replica.on_log_entry(LogEntry(3, ProcessedBody(2)))
    assert app.seen == []  # event 1 not finished yet; order gate holds
    replica.on_log_entry(LogEntry(4, ProcessedBody(1)))
    assert app.seen == [1, 2]
    assert env.sent == []  # slave writes are discarded
    assert replica.delivered_upto == 2


def test_master_delivers_and_bundles_commands():
    replica, env = make_master(batch_size=1)
    replica.on_switch_message("s0", packet_in(seq=1))
    feed_log(replica, env)
    kinds = [type(m).__name__ for _, m in env.sent]
    assert kinds == ["BundleOpen", "BundleAdd", "BundleAdd", "BundleCommit"]
    adds = [m for _, m in env.sent if isinstance(m, BundleAdd)]
    assert ofwire.parse_commit_marker(adds[-1].inner) is not None  # marker staged last
    # reply completes the transaction: a processed entry joins the next batch
    bid = adds[0].bundle_id
    replica.on_switch_message("s0", BundleReply(bid, True))
    assert any(isinstance(b, ProcessedBody) for b in replica.pending_batch) or any(
        isinstance(b, ProcessedBody) for _, bodies, _ in env.appends for b in bodies
    )


def test_zero_command_event_processed_immediately():
    replica, env = make_master(batch_size=1)
    replica.on_switch_message("s0", PortStatus("s0", 4, False))
    feed_log(replica, env)
    assert env.sent == []  # recording app only writes for packet-ins
    feed_log(replica, env)
    assert 1 in replica.processed_logged


def test_multi_switch_event_gets_one_bundle_per_switch():
    class TwoSwitchApp:
        name = "two"

        def on_event(self, event, ctx):
            if event.kind != KIND_PACKET_IN:
                return
            ctx.write("s0", PacketOut((Action.output(1),), b"a"))
            ctx.write("s1", PacketOut((Action.output(2),), b"b"))

    replica, env = make_master(TwoSwitchApp(), batch_size=1)
    replica.on_switch_message("s0", packet_in(seq=1))
    feed_log(replica, env)
    opens = [(sid, m) for sid, m in env.sent if isinstance(m, BundleOpen)]
    assert {sid for sid, _ in opens} == {"s0", "s1"}
    assert len(opens) == 2
    # processed only after both switches replied
    bids = {sid: m.bundle_id for sid, m in opens}
    replica.on_switch_message("s0", BundleReply(bids["s0"], True))
    assert replica.pending_replies
    replica.on_switch_message("s1", BundleReply(bids["s1"], True))
    assert not replica.pending_replies


def test_switch_failure_releases_pending_transaction():
    replica, env = make_master(batch_size=1)
    replica.on_switch_message("s0", packet_in(seq=1))
    feed_log(replica, env)
    assert replica.pending_replies
    replica.on_switch_disconnect("s0")
    assert not replica.pending_replies
    # the disconnect itself became an event on the normal path
    assert any(
        isinstance(b, EventBody) and b.event.kind == "switch-failure"
        for _, bodies, _ in env.appends
        for b in bodies
    ) or any(isinstance(b, EventBody) and b.event.kind == "switch-failure" for b in replica.pending_batch)


def test_app_exception_aborts_writes_but_finishes_event():
    traced = []
    replica, env = make_master(BoomApp(), trace=lambda kind, **kw: traced.append(kind), batch_size=1)
    replica.on_switch_message("s0", packet_in(seq=1))
    feed_log(replica, env)
    assert not any(isinstance(m, BundleOpen) for _, m in env.sent)
    assert replica.delivered_upto == 1
    assert "app-error" in traced
    assert 1 in replica._processed_sent


def test_app_context_rejects_late_and_invalid_writes():
    captured = {}

    class StashApp:
        name = "stash"

        def on_event(self, event, ctx):
            captured["ctx"] = ctx

    replica, env = make_master(StashApp(), batch_size=1)
    replica.on_switch_message("s0", packet_in(seq=1))
    feed_log(replica, env)
    with pytest.raises(AppWriteError):
        captured["ctx"].write("s0", PacketOut((), b""))
    ctx = AppContext(SwitchEvent("s0", 1, KIND_PACKET_IN, packet_in(), 1), lambda s, m: None)
    with pytest.raises(AppWriteError):
        ctx.write("s0", BarrierRequest(1))


def test_port_status_occurrences_are_distinct_and_shared():
    replica, env = make_replica()
    replica.on_switch_message("s0", PortStatus("s0", 1, False))
    replica.on_switch_message("s0", PortStatus("s0", 1, True))
    keys = [ev.occurrence for ev in replica.slave_buffer]
    assert len(set(keys)) == 2
    assert all(seq < 0 for _, seq in keys)


def test_deposed_master_rebuffers_unacked_events():
    replica, env = make_master(batch_size=2)
    replica.on_switch_message("s0", packet_in(seq=1))
    replica.on_switch_message("s0", packet_in(seq=2))  # flushed, in flight
    replica.on_switch_message("s0", packet_in(seq=3))  # still pending
    assert len(env.appends) == 1
    replica.on_leadership("c1", 2, 0)
    assert replica.role == ROLE_SLAVE
    assert sorted(ev.switch_seq for ev in replica.slave_buffer) == [1, 2, 3]
    assert all(ev.event_id is None for ev in replica.slave_buffer)
    # the stale append now fails; that must not double-buffer anything
    _, _, cb = env.appends[0]
    cb("not-leader")
    assert sorted(ev.switch_seq for ev in replica.slave_buffer) == [1, 2, 3]


def test_append_rejection_deposes_master():
    replica, env = make_master(batch_size=1)
    replica.on_switch_message("s0", packet_in(seq=1))
    _, bodies, cb = env.appends[0]
    cb("not-leader")
    assert replica.role == ROLE_SLAVE
    assert [ev.switch_seq for ev in replica.slave_buffer] == [1]
