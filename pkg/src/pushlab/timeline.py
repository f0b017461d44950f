"""Simulation timelines: an ordered event log, exportable as JSON lines."""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path


class EventKind(str, enum.Enum):
    SEND = "send"
    FIRST_BYTE = "first_byte"
    DELIVERED = "delivered"
    STREAM_COMPLETE = "stream_complete"
    CONNECT_END = "connect_end"
    BROWSER_EVENT = "browser_event"


@dataclass(frozen=True)
class TimelineEvent:
    time: float
    kind: EventKind
    stream_id: int = 0
    nbytes: int = 0
    conn: int = 0
    url: str = ""
    label: str = ""  # milestone name for browser events, frame type name for frame events
    push: bool = False
    uplink: bool = False  # client-to-server frame
    parent: int = 0  # priority dependency carried by a request's HEADERS
    weight: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TimelineEvent:
        d = dict(d)
        d["kind"] = EventKind(d["kind"])
        return cls(**d)


@dataclass
class Timeline:
    events: list[TimelineEvent] = field(default_factory=list)
    truncated: bool = False
    timeout_ms: float | None = None

    def add(self, event: TimelineEvent) -> None:
        if self.events and event.time < self.events[-1].time:
            raise ValueError(f"timeline event at {event.time} precedes {self.events[-1].time}")
        self.events.append(event)

    def of_kind(self, kind: EventKind) -> list[TimelineEvent]:
        return [e for e in self.events if e.kind is kind]

    def milestones(self) -> dict[str, float]:
        """First time of each browser milestone."""
        out: dict[str, float] = {}
        for e in self.events:
            if e.kind is EventKind.BROWSER_EVENT:
                out.setdefault(e.label, e.time)
        return out

    def completions(self) -> dict[str, float]:
        """First completion time per URL."""
        out: dict[str, float] = {}
        for e in self.events:
            if e.kind is EventKind.STREAM_COMPLETE and e.url:
                out.setdefault(e.url, e.time)
        return out

    def to_jsonl(self) -> str:
        head = {"type": "timeline", "truncated": self.truncated, "timeout_ms": self.timeout_ms}
        lines = [json.dumps(head, sort_keys=True)]
        lines += [json.dumps(e.to_dict(), sort_keys=True) for e in self.events]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> Timeline:
        lines = [line for line in text.splitlines() if line.strip()]
        head = json.loads(lines[0])
        events = [TimelineEvent.from_dict(json.loads(line)) for line in lines[1:]]
        return cls(events, head.get("truncated", False), head.get("timeout_ms"))

    def save(self, path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def load(cls, path) -> Timeline:
        return cls.from_jsonl(Path(path).read_text())
