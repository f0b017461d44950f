"""A deterministic page-load state machine.

The browser is driven by delivery events from the network simulator and
answers with actions (requests, push cancellations, timers, milestones).
Discovery runs ahead of a blocked parser, as a preload scanner would; only
the parser position, and with it the milestones, waits on scripts and the
stylesheets that precede them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..records import ResourceType
from .scanner import Blocking, ParserBarrier, ResourceRef, Scanner, scan_css


class InternalError(RuntimeError):
    pass


# Chromium-like (level, h2 weight). A new request's stream depends on the most
# recent still-open stream of equal or higher level, which is how the HTML ends
# up ahead of the CSS even though both share the top level.
DEFAULT_PRIORITIES: dict[str, tuple[int, int]] = {
    "document": (4, 256),
    "css": (4, 256),
    "font": (4, 256),
    "script": (3, 220),
    "async_script": (2, 183),
    "image": (1, 147),
    "other": (0, 110),
}


def priority_class(ref: ResourceRef) -> str:
    t = ref.resource_type
    if t is ResourceType.HTML:
        return "document"
    if t is ResourceType.CSS:
        return "css"
    if t is ResourceType.FONT:
        return "font"
    if t is ResourceType.JS:
        return "async_script" if ref.blocking is Blocking.ASYNC else "script"
    if t is ResourceType.IMAGE:
        return "image"
    return "other"


@dataclass
class BrowserConfig:
    priorities: dict[str, tuple[int, int]] = field(default_factory=lambda: dict(DEFAULT_PRIORITIES))
    js_ms_per_byte: float = 0.0
    dependency_chain: bool = True  # False: every request hangs off the root with its weight

    def to_dict(self) -> dict:
        return {
            "priorities": {k: list(v) for k, v in self.priorities.items()},
            "js_ms_per_byte": self.js_ms_per_byte,
            "dependency_chain": self.dependency_chain,
        }

    @classmethod
    def from_dict(cls, d: dict) -> BrowserConfig:
        prio = dict(DEFAULT_PRIORITIES)
        prio.update({k: (int(v[0]), int(v[1])) for k, v in d.get("priorities", {}).items()})
        return cls(prio, float(d.get("js_ms_per_byte", 0.0)), bool(d.get("dependency_chain", True)))

    @classmethod
    def load(cls, path) -> BrowserConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))


# events fed to the browser


@dataclass(frozen=True)
class ConnectEnd:
    time: float
    main: bool = True


@dataclass(frozen=True)
class BytesArrived:
    time: float
    url: str
    data: bytes


@dataclass(frozen=True)
class StreamCompleted:
    time: float
    url: str


@dataclass(frozen=True)
class PushPromised:
    time: float
    url: str


@dataclass(frozen=True)
class Timer:
    time: float


# actions returned by the browser


@dataclass(frozen=True)
class FetchRequest:
    url: str
    resource_type: ResourceType
    level: int
    weight: int


@dataclass(frozen=True)
class CancelPush:
    url: str


@dataclass(frozen=True)
class WakeAt:
    time: float


@dataclass(frozen=True)
class Milestone:
    name: str
    time: float


@dataclass
class PageState:
    received: dict[str, bytearray] = field(default_factory=dict)
    parser_position: int = 0
    discovered: dict[str, ResourceRef] = field(default_factory=dict)
    requested: set[str] = field(default_factory=set)
    complete: set[str] = field(default_factory=set)
    pushed: set[str] = field(default_factory=set)
    blocked_on: frozenset[str] | None = None
    connect_end: float | None = None
    first_visual_change: float | None = None
    dom_content: float | None = None
    onload: float | None = None


class Browser:
    def __init__(self, base_url: str, config: BrowserConfig | None = None):
        self.base_url = base_url
        self.config = config or BrowserConfig()
        self.state = PageState()
        self.scanner = Scanner(base_url)
        self._finished: dict[str, float] = {}  # every stream end seen, requested or not
        self._barrier = 0
        self._exec_due: float | None = None
        self._html_done = False
        self._dom_reported = False

    # helpers

    def _request(self, ref: ResourceRef, out: list) -> None:
        st = self.state
        st.discovered.setdefault(ref.url, ref)
        if ref.url in st.requested:
            return
        st.requested.add(ref.url)
        if ref.url in st.pushed:
            if ref.url in self._finished:
                st.complete.add(ref.url)
            return
        level, weight = self.config.priorities[priority_class(ref)]
        out.append(FetchRequest(ref.url, ref.resource_type, level, weight))

    def start(self) -> list:
        out: list = []
        ref = ResourceRef(self.base_url, ResourceType.HTML, 0, Blocking.PASSIVE)
        self._request(ref, out)
        return out

    def advance(self, event) -> list:
        st = self.state
        out: list = []
        if isinstance(event, ConnectEnd):
            if event.main and st.connect_end is None:
                st.connect_end = event.time
                out.append(Milestone("connect_end", event.time))
        elif isinstance(event, PushPromised):
            if event.url in st.requested and event.url not in st.pushed:
                out.append(CancelPush(event.url))
            else:
                st.pushed.add(event.url)
        elif isinstance(event, BytesArrived):
            self._known(event.url)
            buf = st.received.setdefault(event.url, bytearray())
            buf += event.data
            if event.url == self.base_url:
                for ref in self.scanner.feed(event.data):
                    self._request(ref, out)
        elif isinstance(event, StreamCompleted):
            self._known(event.url)
            self._finished.setdefault(event.url, event.time)
            st.received.setdefault(event.url, bytearray())
            if event.url in st.requested:
                st.complete.add(event.url)
            if event.url == self.base_url:
                self._html_done = True
            ref = st.discovered.get(event.url)
            if ref is not None and ref.resource_type is ResourceType.CSS:
                for font in scan_css(bytes(st.received[event.url]), event.url):
                    self._request(font, out)
        elif not isinstance(event, Timer):
            raise InternalError(f"unexpected event {event!r}")
        self._pump(event.time, out)
        return out

    def _known(self, url: str) -> None:
        if url not in self.state.requested and url not in self.state.pushed:
            raise InternalError(f"data for {url} which was never requested or promised")

    # parser

    def _barrier_passable(self, b: ParserBarrier, now: float, out: list) -> bool:
        st = self.state
        deps = {b.url} if b.url else set()
        deps |= {
            r.url
            for r in st.discovered.values()
            if r.blocking is Blocking.RENDER_BLOCKING_CSS and r.end_offset <= b.start
        }
        missing = frozenset(d for d in deps if d not in st.complete)
        if missing:
            st.blocked_on = missing
            return False
        st.blocked_on = None
        if self._exec_due is None:
            size = b.size if b.url is None else len(st.received.get(b.url, b""))
            cost = self.config.js_ms_per_byte * size
            if cost <= 0:
                return True
            self._exec_due = now + cost
            st.blocked_on = frozenset({b.url or "<inline script>"})
            out.append(WakeAt(self._exec_due))
            return False
        if now >= self._exec_due:
            self._exec_due = None
            return True
        return False

    def _pump(self, now: float, out: list) -> None:
        st = self.state
        html = st.received.get(self.base_url)
        if html is not None:
            limit = len(html) if self._html_done else min(self.scanner.pos, len(html))
            barriers = self.scanner.barriers
            while st.parser_position < limit:
                b = barriers[self._barrier] if self._barrier < len(barriers) else None
                if b is None or b.end > limit:
                    st.parser_position = limit
                    break
                st.parser_position = max(st.parser_position, b.end)
                if not self._barrier_passable(b, now, out):
                    break
                self._barrier += 1
            at_end = (
                self._html_done
                and st.parser_position >= len(html)
                and self._barrier >= len(barriers)
                and self._exec_due is None
            )
            if at_end and st.dom_content is None:
                st.dom_content = now
        self._milestones(now, out)

    def _milestones(self, now: float, out: list) -> None:
        st = self.state
        if st.first_visual_change is None and st.received.get(self.base_url) is not None:
            head_end = self.scanner.head_end
            past_head = st.dom_content is not None or (head_end is not None and st.parser_position > head_end)
            head_css = [
                r.url for r in st.discovered.values() if r.blocking is Blocking.RENDER_BLOCKING_CSS and r.in_head
            ]
            if past_head and all(u in st.complete for u in head_css):
                st.first_visual_change = now
                out.append(Milestone("first_visual_change", now))
        if st.dom_content is not None and not self._dom_reported:
            self._dom_reported = True
            out.append(Milestone("dom_content", st.dom_content))
        if st.onload is None and st.dom_content is not None and st.first_visual_change is not None:
            needed = [u for u, r in st.discovered.items() if r.blocking is not Blocking.ASYNC]
            if all(u in st.complete for u in needed):
                st.onload = now
                out.append(Milestone("onload", now))

    @property
    def done(self) -> bool:
        return self.state.onload is not None
