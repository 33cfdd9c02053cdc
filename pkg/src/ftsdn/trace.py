"""Timestamped observation records consumed by the correctness checker.

One JSON object per line; field names are the schema. Timestamps are logical
milliseconds in deterministic mode and wall-clock nanoseconds in socket mode.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from typing import Callable


class TraceParseError(Exception):
    def __init__(self, line_no: int, reason: str) -> None:
        super().__init__(f"trace line {line_no}: {reason}")
        self.line_no = line_no


@dataclass(slots=True)
class TraceRecord:
    kind: str
    actor: str
    timestamp: float
    epoch: int | None = None
    event_id: int | None = None
    switch_id: str | None = None
    switch_seq: int | None = None
    bundle_id: int | None = None
    detail: dict | None = None

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind, "actor": self.actor, "timestamp": self.timestamp}
        if self.epoch is not None:
            d["epoch"] = self.epoch
        if self.event_id is not None:
            d["event_id"] = self.event_id
        if self.switch_id is not None:
            d["switch_id"] = self.switch_id
        if self.switch_seq is not None:
            d["switch_seq"] = self.switch_seq
        if self.bundle_id is not None:
            d["bundle_id"] = self.bundle_id
        if self.detail is not None:
            d["detail"] = self.detail
        return d


class TraceLog:
    """Append-only collector; per-actor records appear in emission order."""

    def __init__(self, clock: Callable[[], float]) -> None:
        self._clock = clock
        self._lock = threading.Lock()
        self.records: list[TraceRecord] = []

    def emit(
        self,
        kind: str,
        actor: str,
        *,
        epoch: int | None = None,
        event_id: int | None = None,
        switch_id: str | None = None,
        switch_seq: int | None = None,
        bundle_id: int | None = None,
        detail: dict | None = None,
    ) -> None:
        rec = TraceRecord(
            kind=kind,
            actor=actor,
            timestamp=self._clock(),
            epoch=epoch,
            event_id=event_id,
            switch_id=switch_id,
            switch_seq=switch_seq,
            bundle_id=bundle_id,
            detail=detail,
        )
        with self._lock:
            self.records.append(rec)

    def emitter(self, actor: str) -> Callable[..., None]:
        """Bound emit function for one actor."""

        def emit(kind: str, **kw) -> None:
            self.emit(kind, actor, **kw)

        return emit

    def as_dicts(self) -> list[dict]:
        with self._lock:
            return [r.to_dict() for r in self.records]

    def to_jsonl(self) -> bytes:
        lines = [json.dumps(d, sort_keys=True, separators=(",", ":")) for d in self.as_dicts()]
        return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""

    def write(self, path: str) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_jsonl())


def load_jsonl(path: str) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceParseError(i, f"invalid JSON: {exc}") from exc
            if not isinstance(rec, dict) or "kind" not in rec or "actor" not in rec:
                raise TraceParseError(i, "record must be an object with kind and actor")
            records.append(rec)
    return records
