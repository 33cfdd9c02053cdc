"""Switch-originated events as seen by controller replicas.

Every event carries an occurrence key ``(switch_id, switch_seq)`` that is
identical at all replicas, so a buffered copy can be matched against the
shared log. PacketIns carry their sequence number on the wire; port-status
and switch-failure events get synthetic negative sequence numbers derived
from per-switch arrival order, which is the same everywhere because the
switch fans every event out over FIFO connections.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import ofwire

KIND_PACKET_IN = "packet-in"
KIND_PORT_STATUS = "port-status"
KIND_SWITCH_FAILURE = "switch-failure"

SWITCH_FAILURE_SEQ = -1


def port_status_seq(arrival_index: int) -> int:
    """Synthetic occurrence sequence for the nth port-status from a switch."""
    return -(arrival_index + 2)


@dataclass
class SwitchEvent:
    switch_id: str
    switch_seq: int
    kind: str
    message: ofwire.OfMessage | None
    event_id: int | None = None  # master-assigned total-order id, None until assigned

    @property
    def occurrence(self) -> tuple[str, int]:
        return (self.switch_id, self.switch_seq)

    def to_json(self) -> dict:
        return {
            "event_id": self.event_id,
            "switch_id": self.switch_id,
            "switch_seq": self.switch_seq,
            "kind": self.kind,
            "message": ofwire.to_json(self.message) if self.message is not None else None,
        }

    @staticmethod
    def from_json(d: dict) -> "SwitchEvent":
        msg = ofwire.from_json(d["message"]) if d.get("message") is not None else None
        return SwitchEvent(d["switch_id"], d["switch_seq"], d["kind"], msg, d.get("event_id"))
