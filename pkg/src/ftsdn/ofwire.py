"""OpenFlow-subset message model and wire codec.

Messages travel between controllers and switches either as in-memory objects
(deterministic transport) or as binary frames (socket transport). The frame
layout is normative for socket mode:

    4 bytes   big-endian frame length N (variant tag + payload)
    1 byte    variant tag
    N-1 bytes variant payload

Integers are unsigned LEB128 varints, byte/character strings are
varint-length prefixed, optional fields carry a one-byte presence flag, and
lists a varint element count. The JSON rendering produced by ``to_json`` is
normative for trace files.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

MAX_FRAME_BODY = 1 << 24

# Reserved OpenFlow-style port numbers used by the simulator.
FLOOD_PORT = 0xFFFB
CONTROLLER_PORT = 0xFFFD
NO_BUFFER = 0xFFFFFFFF

# Commit markers are PacketOut payloads with this prefix; the tag is reserved
# and workload packet generators must never emit payloads starting with it.
MARKER_MAGIC = b"EOCM"


class OfwireError(Exception):
    pass


class ProtocolError(OfwireError):
    """Malformed or unknown bytes on the wire."""


class EncodeError(OfwireError):
    """Message violates an encoding precondition (e.g. oversize payload)."""


class MarkerParseError(OfwireError):
    """Payload carries the marker magic but the rest does not parse."""


@dataclass(frozen=True)
class Action:
    kind: str  # "output" | "controller" | "drop"
    port: int | None = None

    @staticmethod
    def output(port: int) -> "Action":
        return Action("output", port)

    @staticmethod
    def to_controller() -> "Action":
        return Action("controller")

    @staticmethod
    def drop() -> "Action":
        return Action("drop")


@dataclass(frozen=True)
class MatchKey:
    in_port: int | None = None
    eth_src: str | None = None
    eth_dst: str | None = None

    def matches(self, in_port: int, eth_src: str | None, eth_dst: str | None) -> bool:
        if self.in_port is not None and self.in_port != in_port:
            return False
        if self.eth_src is not None and self.eth_src != eth_src:
            return False
        if self.eth_dst is not None and self.eth_dst != eth_dst:
            return False
        return True


@dataclass(frozen=True)
class PacketIn:
    switch_id: str
    switch_seq: int
    buffer_id: int
    in_port: int
    payload: bytes


@dataclass(frozen=True)
class PacketOut:
    actions: tuple[Action, ...]
    payload: bytes


@dataclass(frozen=True)
class FlowMod:
    match_key: MatchKey
    actions: tuple[Action, ...]
    priority: int

    def __post_init__(self) -> None:
        for a in self.actions:
            if a.kind == "controller":
                raise ProtocolError("output-to-controller is only legal inside PacketOut")


@dataclass(frozen=True)
class BundleOpen:
    bundle_id: int


@dataclass(frozen=True)
class BundleAdd:
    bundle_id: int
    inner: "PacketOut | FlowMod"

    def __post_init__(self) -> None:
        if not isinstance(self.inner, (PacketOut, FlowMod)):
            raise ProtocolError("bundle inner message must be PacketOut or FlowMod")


@dataclass(frozen=True)
class BundleCommit:
    bundle_id: int


@dataclass(frozen=True)
class BundleReply:
    bundle_id: int
    success: bool


@dataclass(frozen=True)
class BarrierRequest:
    xid: int


@dataclass(frozen=True)
class BarrierReply:
    xid: int


@dataclass(frozen=True)
class RoleAnnounce:
    controller_id: str
    epoch: int


@dataclass(frozen=True)
class PortStatus:
    switch_id: str
    port: int
    up: bool


OfMessage = (
    PacketIn
    | PacketOut
    | FlowMod
    | BundleOpen
    | BundleAdd
    | BundleCommit
    | BundleReply
    | BarrierRequest
    | BarrierReply
    | RoleAnnounce
    | PortStatus
)

_TAGS: dict[type, int] = {
    PacketIn: 1,
    PacketOut: 2,
    FlowMod: 3,
    BundleOpen: 4,
    BundleAdd: 5,
    BundleCommit: 6,
    BundleReply: 7,
    BarrierRequest: 8,
    BarrierReply: 9,
    RoleAnnounce: 10,
    PortStatus: 11,
}
_BY_TAG = {tag: cls for cls, tag in _TAGS.items()}


# ---------------------------------------------------------------------------
# primitive field codecs


def _put_uvarint(out: bytearray, value: int) -> None:
    if value < 0:
        raise EncodeError(f"cannot encode negative integer {value}")
    while True:
        b = value & 0x7F
        value >>= 7
        if value:
            out.append(b | 0x80)
        else:
            out.append(b)
            return


def _get_uvarint(data: bytes, off: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if off >= len(data):
            raise ProtocolError("truncated varint")
        if shift > 63:
            raise ProtocolError("varint overflow")
        b = data[off]
        off += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, off
        shift += 7


def _put_bytes(out: bytearray, value: bytes) -> None:
    _put_uvarint(out, len(value))
    out.extend(value)


def _get_bytes(data: bytes, off: int) -> tuple[bytes, int]:
    n, off = _get_uvarint(data, off)
    if off + n > len(data):
        raise ProtocolError("truncated byte field")
    return data[off : off + n], off + n


def _put_str(out: bytearray, value: str) -> None:
    _put_bytes(out, value.encode("utf-8"))


def _get_str(data: bytes, off: int) -> tuple[str, int]:
    raw, off = _get_bytes(data, off)
    return raw.decode("utf-8"), off


def _put_bool(out: bytearray, value: bool) -> None:
    out.append(1 if value else 0)


def _get_bool(data: bytes, off: int) -> tuple[bool, int]:
    if off >= len(data):
        raise ProtocolError("truncated bool")
    b = data[off]
    if b not in (0, 1):
        raise ProtocolError(f"invalid bool byte {b:#x}")
    return bool(b), off + 1


def _put_action(out: bytearray, action: Action) -> None:
    if action.kind == "output":
        out.append(1)
        _put_uvarint(out, action.port or 0)
    elif action.kind == "controller":
        out.append(2)
    elif action.kind == "drop":
        out.append(3)
    else:
        raise EncodeError(f"unknown action kind {action.kind!r}")


def _get_action(data: bytes, off: int) -> tuple[Action, int]:
    if off >= len(data):
        raise ProtocolError("truncated action")
    tag = data[off]
    off += 1
    if tag == 1:
        port, off = _get_uvarint(data, off)
        return Action.output(port), off
    if tag == 2:
        return Action.to_controller(), off
    if tag == 3:
        return Action.drop(), off
    raise ProtocolError(f"unknown action tag {tag:#x}")


def _put_actions(out: bytearray, actions: tuple[Action, ...]) -> None:
    _put_uvarint(out, len(actions))
    for a in actions:
        _put_action(out, a)


def _get_actions(data: bytes, off: int) -> tuple[tuple[Action, ...], int]:
    n, off = _get_uvarint(data, off)
    acts = []
    for _ in range(n):
        a, off = _get_action(data, off)
        acts.append(a)
    return tuple(acts), off


def _put_match(out: bytearray, mk: MatchKey) -> None:
    if mk.in_port is None:
        out.append(0)
    else:
        out.append(1)
        _put_uvarint(out, mk.in_port)
    for field in (mk.eth_src, mk.eth_dst):
        if field is None:
            out.append(0)
        else:
            out.append(1)
            _put_str(out, field)


def _get_match(data: bytes, off: int) -> tuple[MatchKey, int]:
    present, off = _get_bool(data, off)
    in_port = None
    if present:
        in_port, off = _get_uvarint(data, off)
    present, off = _get_bool(data, off)
    eth_src = None
    if present:
        eth_src, off = _get_str(data, off)
    present, off = _get_bool(data, off)
    eth_dst = None
    if present:
        eth_dst, off = _get_str(data, off)
    return MatchKey(in_port, eth_src, eth_dst), off


# ---------------------------------------------------------------------------
# message body codecs


def _encode_body(msg: OfMessage) -> bytes:
    out = bytearray()
    tag = _TAGS.get(type(msg))
    if tag is None:
        raise EncodeError(f"not an OfMessage: {msg!r}")
    out.append(tag)
    if isinstance(msg, PacketIn):
        _put_str(out, msg.switch_id)
        _put_uvarint(out, msg.switch_seq)
        _put_uvarint(out, msg.buffer_id)
        _put_uvarint(out, msg.in_port)
        _put_bytes(out, msg.payload)
    elif isinstance(msg, PacketOut):
        _put_actions(out, msg.actions)
        _put_bytes(out, msg.payload)
    elif isinstance(msg, FlowMod):
        _put_match(out, msg.match_key)
        _put_actions(out, msg.actions)
        _put_uvarint(out, msg.priority)
    elif isinstance(msg, BundleOpen):
        _put_uvarint(out, msg.bundle_id)
    elif isinstance(msg, BundleAdd):
        _put_uvarint(out, msg.bundle_id)
        _put_bytes(out, _encode_body(msg.inner))
    elif isinstance(msg, BundleCommit):
        _put_uvarint(out, msg.bundle_id)
    elif isinstance(msg, BundleReply):
        _put_uvarint(out, msg.bundle_id)
        _put_bool(out, msg.success)
    elif isinstance(msg, BarrierRequest):
        _put_uvarint(out, msg.xid)
    elif isinstance(msg, BarrierReply):
        _put_uvarint(out, msg.xid)
    elif isinstance(msg, RoleAnnounce):
        _put_str(out, msg.controller_id)
        _put_uvarint(out, msg.epoch)
    elif isinstance(msg, PortStatus):
        _put_str(out, msg.switch_id)
        _put_uvarint(out, msg.port)
        _put_bool(out, msg.up)
    return bytes(out)


def _decode_body(body: bytes) -> OfMessage:
    if not body:
        raise ProtocolError("empty frame body")
    tag = body[0]
    cls = _BY_TAG.get(tag)
    if cls is None:
        raise ProtocolError(f"unknown message tag {tag:#x}")
    off = 1
    msg: OfMessage
    if cls is PacketIn:
        switch_id, off = _get_str(body, off)
        switch_seq, off = _get_uvarint(body, off)
        buffer_id, off = _get_uvarint(body, off)
        in_port, off = _get_uvarint(body, off)
        payload, off = _get_bytes(body, off)
        msg = PacketIn(switch_id, switch_seq, buffer_id, in_port, payload)
    elif cls is PacketOut:
        actions, off = _get_actions(body, off)
        payload, off = _get_bytes(body, off)
        msg = PacketOut(actions, payload)
    elif cls is FlowMod:
        mk, off = _get_match(body, off)
        actions, off = _get_actions(body, off)
        priority, off = _get_uvarint(body, off)
        msg = FlowMod(mk, actions, priority)
    elif cls is BundleOpen:
        bid, off = _get_uvarint(body, off)
        msg = BundleOpen(bid)
    elif cls is BundleAdd:
        bid, off = _get_uvarint(body, off)
        inner_raw, off = _get_bytes(body, off)
        inner = _decode_body(inner_raw)
        if not isinstance(inner, (PacketOut, FlowMod)):
            raise ProtocolError("bundle inner message must be PacketOut or FlowMod")
        msg = BundleAdd(bid, inner)
    elif cls is BundleCommit:
        bid, off = _get_uvarint(body, off)
        msg = BundleCommit(bid)
    elif cls is BundleReply:
        bid, off = _get_uvarint(body, off)
        success, off = _get_bool(body, off)
        msg = BundleReply(bid, success)
    elif cls is BarrierRequest:
        xid, off = _get_uvarint(body, off)
        msg = BarrierRequest(xid)
    elif cls is BarrierReply:
        xid, off = _get_uvarint(body, off)
        msg = BarrierReply(xid)
    elif cls is RoleAnnounce:
        controller_id, off = _get_str(body, off)
        epoch, off = _get_uvarint(body, off)
        msg = RoleAnnounce(controller_id, epoch)
    else:
        switch_id, off = _get_str(body, off)
        port, off = _get_uvarint(body, off)
        up, off = _get_bool(body, off)
        msg = PortStatus(switch_id, port, up)
    if off != len(body):
        raise ProtocolError(f"{len(body) - off} trailing bytes inside frame body")
    return msg


def encode(msg: OfMessage) -> bytes:
    """Encode one message as a self-delimiting frame. Deterministic."""
    body = _encode_body(msg)
    if len(body) > MAX_FRAME_BODY:
        raise EncodeError(f"frame body of {len(body)} bytes exceeds {MAX_FRAME_BODY}")
    return struct.pack(">I", len(body)) + body


def decode(data: bytes, offset: int = 0) -> tuple[OfMessage, int] | None:
    """Decode one frame starting at ``offset``.

    Returns ``(message, next_offset)``, leaving trailing bytes untouched, or
    ``None`` when the buffer does not yet hold a complete frame.
    """
    if len(data) - offset < 4:
        return None
    (length,) = struct.unpack_from(">I", data, offset)
    if length > MAX_FRAME_BODY:
        raise ProtocolError(f"declared frame body of {length} bytes exceeds limit")
    end = offset + 4 + length
    if len(data) < end:
        return None
    return _decode_body(data[offset + 4 : end]), end


class FrameBuffer:
    """Incremental frame reassembly for stream transports."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[OfMessage]:
        self._buf.extend(data)
        msgs: list[OfMessage] = []
        off = 0
        while True:
            got = decode(bytes(self._buf), off)
            if got is None:
                break
            msg, off = got
            msgs.append(msg)
        if off:
            del self._buf[:off]
        return msgs


# ---------------------------------------------------------------------------
# commit markers


@dataclass(frozen=True)
class CommitMarker:
    """Payload the master appends at the end of every bundle.

    The switch echoes it back to all connected controllers as a PacketIn, so
    even replicas that did not issue the commit learn which event's commands
    the switch executed, and under which master epoch.
    """

    master_epoch: int
    event_ids: tuple[int, ...]

    MAGIC = MARKER_MAGIC


def make_commit_marker(epoch: int, event_ids: list[int] | tuple[int, ...]) -> PacketOut:
    if not event_ids:
        raise EncodeError("commit marker must cover at least one event")
    out = bytearray(MARKER_MAGIC)
    _put_uvarint(out, epoch)
    _put_uvarint(out, len(event_ids))
    for eid in event_ids:
        _put_uvarint(out, eid)
    return PacketOut(actions=(Action.to_controller(),), payload=bytes(out))


def parse_commit_marker(msg: PacketIn | PacketOut) -> CommitMarker | None:
    """Parse a marker out of a PacketIn (or the PacketOut that produced it).

    Returns ``None`` for ordinary traffic whose payload lacks the magic tag;
    raises :class:`MarkerParseError` when the tag is present but the payload
    is corrupt.
    """
    payload = msg.payload
    if not payload.startswith(MARKER_MAGIC):
        return None
    try:
        off = len(MARKER_MAGIC)
        epoch, off = _get_uvarint(payload, off)
        count, off = _get_uvarint(payload, off)
        if count == 0:
            raise ProtocolError("marker with zero events")
        ids = []
        for _ in range(count):
            eid, off = _get_uvarint(payload, off)
            ids.append(eid)
        if off != len(payload):
            raise ProtocolError("trailing bytes after marker")
    except ProtocolError as exc:
        raise MarkerParseError(str(exc)) from exc
    return CommitMarker(epoch, tuple(ids))


# ---------------------------------------------------------------------------
# JSON rendering (normative for trace files)


def _action_json(a: Action) -> dict:
    return {"kind": a.kind, "port": a.port}


def _action_from_json(d: dict) -> Action:
    return Action(d["kind"], d.get("port"))


def to_json(msg: OfMessage) -> dict:
    if isinstance(msg, PacketIn):
        return {
            "type": "PacketIn",
            "switch_id": msg.switch_id,
            "switch_seq": msg.switch_seq,
            "buffer_id": msg.buffer_id,
            "in_port": msg.in_port,
            "payload": msg.payload.hex(),
        }
    if isinstance(msg, PacketOut):
        return {
            "type": "PacketOut",
            "actions": [_action_json(a) for a in msg.actions],
            "payload": msg.payload.hex(),
        }
    if isinstance(msg, FlowMod):
        return {
            "type": "FlowMod",
            "match_key": {
                "in_port": msg.match_key.in_port,
                "eth_src": msg.match_key.eth_src,
                "eth_dst": msg.match_key.eth_dst,
            },
            "actions": [_action_json(a) for a in msg.actions],
            "priority": msg.priority,
        }
    if isinstance(msg, BundleOpen):
        return {"type": "BundleOpen", "bundle_id": msg.bundle_id}
    if isinstance(msg, BundleAdd):
        return {"type": "BundleAdd", "bundle_id": msg.bundle_id, "inner": to_json(msg.inner)}
    if isinstance(msg, BundleCommit):
        return {"type": "BundleCommit", "bundle_id": msg.bundle_id}
    if isinstance(msg, BundleReply):
        return {"type": "BundleReply", "bundle_id": msg.bundle_id, "success": msg.success}
    if isinstance(msg, BarrierRequest):
        return {"type": "BarrierRequest", "xid": msg.xid}
    if isinstance(msg, BarrierReply):
        return {"type": "BarrierReply", "xid": msg.xid}
    if isinstance(msg, RoleAnnounce):
        return {"type": "RoleAnnounce", "controller_id": msg.controller_id, "epoch": msg.epoch}
    if isinstance(msg, PortStatus):
        return {"type": "PortStatus", "switch_id": msg.switch_id, "port": msg.port, "up": msg.up}
    raise EncodeError(f"not an OfMessage: {msg!r}")


def from_json(d: dict) -> OfMessage:
    t = d.get("type")
    if t == "PacketIn":
        return PacketIn(d["switch_id"], d["switch_seq"], d["buffer_id"], d["in_port"], bytes.fromhex(d["payload"]))
    if t == "PacketOut":
        return PacketOut(tuple(_action_from_json(a) for a in d["actions"]), bytes.fromhex(d["payload"]))
    if t == "FlowMod":
        mk = d["match_key"]
        return FlowMod(
            MatchKey(mk.get("in_port"), mk.get("eth_src"), mk.get("eth_dst")),
            tuple(_action_from_json(a) for a in d["actions"]),
            d["priority"],
        )
    if t == "BundleOpen":
        return BundleOpen(d["bundle_id"])
    if t == "BundleAdd":
        inner = from_json(d["inner"])
        assert isinstance(inner, (PacketOut, FlowMod))
        return BundleAdd(d["bundle_id"], inner)
    if t == "BundleCommit":
        return BundleCommit(d["bundle_id"])
    if t == "BundleReply":
        return BundleReply(d["bundle_id"], d["success"])
    if t == "BarrierRequest":
        return BarrierRequest(d["xid"])
    if t == "BarrierReply":
        return BarrierReply(d["xid"])
    if t == "RoleAnnounce":
        return RoleAnnounce(d["controller_id"], d["epoch"])
    if t == "PortStatus":
        return PortStatus(d["switch_id"], d["port"], d["up"])
    raise ProtocolError(f"unknown message type {t!r}")


# ---------------------------------------------------------------------------
# workload packet helpers (ethernet-like: 6-byte dst MAC, 6-byte src MAC, body)


def mac_bytes(mac: str) -> bytes:
    parts = mac.split(":")
    if len(parts) != 6:
        raise ValueError(f"bad MAC {mac!r}")
    return bytes(int(p, 16) for p in parts)


def bytes_mac(raw: bytes) -> str:
    return ":".join(f"{b:02x}" for b in raw)


def ether_payload(dst: str, src: str, body: bytes = b"") -> bytes:
    return mac_bytes(dst) + mac_bytes(src) + body


def parse_ether(payload: bytes) -> tuple[str, str] | None:
    """Extract (eth_dst, eth_src) from a workload packet, or None."""
    if len(payload) < 12 or payload.startswith(MARKER_MAGIC):
        return None
    return bytes_mac(payload[:6]), bytes_mac(payload[6:12])
