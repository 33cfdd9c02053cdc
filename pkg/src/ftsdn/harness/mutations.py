"""Seeded protocol bugs for checker-soundness testing.

Each mutation patches one deliberate defect into an otherwise healthy world;
the checker must flag at least one property with a counterexample, and the
unmutated twin of the same scenario must pass everything.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from ..ctrl import ROLE_MASTER
from .config import FaultInjection, ScenarioConfig
from .world_det import DetWorld


@dataclass
class Mutation:
    name: str
    description: str
    config: ScenarioConfig
    expected_failures: tuple[str, ...]
    apply: Callable[[DetWorld], None]


def _base_cfg(**kw) -> ScenarioConfig:
    defaults = dict(
        n_switches=1,
        n_controllers=2,
        packets_per_switch=30,
        inter_arrival_ms=5.0,
        session_timeout_ms=100.0,
        seed=77,
        app="forwarding",
    )
    defaults.update(kw)
    return ScenarioConfig(**defaults)


def _duplicate_commit(world: DetWorld) -> None:
    # the master re-commits event 5's commands in a second, fresh bundle
    for node in world.ctrls.values():
        replica = node.replica
        orig = replica._send_bundle
        state = {"fired": False}

        def wrapped(eid, switch_id, cmds, orig=orig, state=state):
            orig(eid, switch_id, cmds)
            if eid == 5 and not state["fired"]:
                state["fired"] = True
                orig(eid, switch_id, cmds)

        replica._send_bundle = wrapped


def _skipped_marker(world: DetWorld) -> None:
    # bundles go out without the trailing commit marker
    from ..ofwire import BundleAdd, BundleCommit, BundleOpen

    for node in world.ctrls.values():
        replica = node.replica

        def no_marker(eid, switch_id, cmds, replica=replica):
            bid = replica._next_bundle_id
            replica._next_bundle_id += 1
            replica._bundle_owner[bid] = (eid, switch_id)
            replica.env.send_switch(switch_id, BundleOpen(bid))
            for cmd in cmds:
                replica.env.send_switch(switch_id, BundleAdd(bid, cmd))
            replica.env.send_switch(switch_id, BundleCommit(bid))
            replica.pending_replies.setdefault(eid, set()).add(switch_id)

        replica._send_bundle = no_marker


def _lost_buffered_event(world: DetWorld) -> None:
    # the slave silently drops one buffered occurrence
    node = world.ctrls["c1"]
    replica = node.replica
    orig = replica._ingest

    def wrapped(ev, orig=orig, replica=replica):
        if replica.role != ROLE_MASTER and ev.occurrence == ("s0", 3):
            return
        orig(ev)

    replica._ingest = wrapped


def _non_fifo_delivery(world: DetWorld) -> None:
    # the master reorders two same-switch events before assigning ids
    node = world.ctrls["c0"]
    replica = node.replica
    orig = replica._ingest
    held: list = []

    def wrapped(ev, orig=orig, replica=replica):
        if replica.role == ROLE_MASTER and ev.occurrence == ("s0", 3):
            held.append(ev)
            return
        orig(ev)
        if held and ev.occurrence == ("s0", 4):
            orig(held.pop())

    replica._ingest = wrapped


def _double_delivery(world: DetWorld) -> None:
    # the master runs the pipeline twice for event 5
    node = world.ctrls["c0"]
    replica = node.replica
    orig = replica._deliver
    state = {"fired": False}

    def wrapped(ev, discard, orig=orig, replica=replica, state=state):
        staged = orig(ev, discard)
        if ev.event_id == 5 and not state["fired"]:
            state["fired"] = True
            replica.delivered_upto = ev.event_id - 1
            staged = orig(ev, discard)
        return staged

    replica._deliver = wrapped


def _stale_epoch_append(world: DetWorld) -> None:
    # fencing off: a paused ex-master's stale-epoch append lands in the log
    world.coord.service.fencing_enabled = False


def catalog() -> list[Mutation]:
    return [
        Mutation(
            "duplicate-commit",
            "master commits one event's commands twice",
            _base_cfg(),
            ("T3",),
            _duplicate_commit,
        ),
        Mutation(
            "skipped-marker",
            "bundles lack the trailing commit marker",
            _base_cfg(),
            ("T3",),
            _skipped_marker,
        ),
        Mutation(
            "lost-buffered-event",
            "slave drops a buffered event that a dying master never logged",
            _base_cfg(fault_plan=[FaultInjection(target="master", point="F1", trigger_event=3)]),
            ("T2",),
            _lost_buffered_event,
        ),
        Mutation(
            "non-fifo-delivery",
            "master assigns ids out of one switch's arrival order",
            _base_cfg(),
            ("T4",),
            _non_fifo_delivery,
        ),
        Mutation(
            "double-delivery",
            "master feeds one event to the apps twice",
            _base_cfg(),
            ("T2", "T3"),
            _double_delivery,
        ),
        Mutation(
            "stale-epoch-append",
            "coordination service accepts appends from a deposed epoch",
            _base_cfg(
                packets_per_switch=60,
                fault_plan=[FaultInjection(target="master", point="zombie", at_time_ms=150.0, pause_ms=400.0)],
            ),
            ("T2",),
            _stale_epoch_append,
        ),
    ]


def by_name(name: str) -> Mutation:
    for m in catalog():
        if m.name == name:
            return m
    raise KeyError(f"unknown mutation {name!r}")
