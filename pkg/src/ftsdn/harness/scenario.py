"""Scenario runner: build a topology, drive the workload and fault plan to
quiescence, and hand the trace to the checker."""

from __future__ import annotations

import random
from dataclasses import dataclass

from .. import ofwire
from ..trace import TraceLog
from .checker import CheckReport, check_records
from .config import ScenarioConfig
from .world_det import DetWorld


def host_mac(switch_index: int, host_index: int) -> str:
    return f"02:00:00:{switch_index:02x}:00:{host_index + 1:02x}"


@dataclass
class Injection:
    time_ms: float
    switch_id: str
    payload: bytes
    in_port: int


def build_workload(cfg: ScenarioConfig) -> list[Injection]:
    """Per-switch fixed-rate packet plan with seeded host pairs.

    Switches start in lockstep so that cross-switch races are exercised; the
    inter-switch interleaving seen by each controller is then decided by the
    seeded channel latencies.
    """
    rng = random.Random((cfg.seed << 8) ^ 0x5EED)
    plan: list[Injection] = []
    for si in range(cfg.n_switches):
        sid = f"s{si}"
        hosts = list(range(cfg.hosts_per_switch))
        for pi in range(cfg.packets_per_switch):
            src = rng.choice(hosts)
            dst = rng.choice([h for h in hosts if h != src])
            payload = ofwire.ether_payload(
                host_mac(si, dst), host_mac(si, src), b"pkt-%d-%d" % (si, pi)
            )
            t = cfg.workload_start_ms + pi * cfg.inter_arrival_ms
            plan.append(Injection(t, sid, payload, in_port=src + 1))
    plan.sort(key=lambda inj: (inj.time_ms, inj.switch_id))
    return plan


@dataclass
class ScenarioResult:
    records: list[dict]
    report: CheckReport
    quiescent: bool
    world: object

    @property
    def passed(self) -> bool:
        return self.quiescent and self.report.all_pass


def _emit_meta(trace: TraceLog, cfg: ScenarioConfig) -> None:
    trace.emit("run-meta", "harness", detail={"config": cfg.to_json()})


def run_deterministic(cfg: ScenarioConfig, mutate=None) -> ScenarioResult:
    cfg.validate()
    world = DetWorld(cfg)
    _emit_meta(world.trace, cfg)
    if mutate is not None:
        mutate(world)
    plan = build_workload(cfg)
    for inj in plan:
        world.sched.schedule_at(inj.time_ms, lambda i=inj: _inject(world, i))
    workload_end = max((inj.time_ms for inj in plan), default=0.0)
    fault_slack = (len(cfg.fault_plan) + 1) * 4 * cfg.session_timeout_ms
    deadline = workload_end + fault_slack + 2_000.0
    quiescent = world.run(deadline)
    if not quiescent:
        world.trace.emit("quiescence-timeout", "harness", detail={"deadline_ms": deadline})
    records = world.trace.as_dicts()
    report = check_records(records)
    return ScenarioResult(records, report, quiescent, world)


def _inject(world: DetWorld, inj: Injection) -> None:
    world.trace.emit(
        "packet-injected",
        "harness",
        switch_id=inj.switch_id,
        detail={"in_port": inj.in_port, "payload": inj.payload.hex()},
    )
    node = world.switches[inj.switch_id]
    if node.exec.alive:
        node.switch.inject_packet(inj.payload, inj.in_port)


def run_scenario(cfg: ScenarioConfig, mutate=None) -> ScenarioResult:
    if cfg.transport == "deterministic":
        return run_deterministic(cfg, mutate=mutate)
    from .runtime_socket import run_socket_scenario

    return run_socket_scenario(cfg)
