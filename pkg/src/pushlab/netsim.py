"""Discrete-event simulation of a page load over HTTP/2.

One client shares an access link with asymmetric rates. Each direction is a
serializer: frames leave one at a time at the link rate and arrive
``rtt / 2`` later. The client opens one connection per origin group (hosts
sharing an IP are coalesced); data for every connection queues on the same
downlink, and the connections take turns frame by frame. Servers answer from
the archive with zero think time and their stream scheduler decides which
frame goes next whenever the downlink frees up.

Frames are encoded to bytes, sized on the wire (payload plus the 9 byte
header), and decoded again on arrival.
"""

from __future__ import annotations

import heapq
import json
import random
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import browser as br
from .h2 import frames as fr
from .h2.frames import Flags, FrameType, Setting
from .h2.hpack import hpack_decode, hpack_encode
from .records import Archive, NotFound, Request, match_request
from .scheduler import Connection, Policy, PushDisabled, StreamState
from .strategy import PushStrategy, StrategyError, Violation, served_archive, validate
from .timeline import EventKind, Timeline, TimelineEvent

MSS = 1460
# client flow-control settings, Chromium-like
STREAM_WINDOW = 6 * 1024 * 1024
CONNECTION_WINDOW = 15 * 1024 * 1024


class StrategyRejected(StrategyError):
    def __init__(self, violations: list[Violation]):
        super().__init__("; ".join(v.message for v in violations))
        self.violations = violations


@dataclass(frozen=True)
class LinkConfig:
    rtt: float  # ms
    downlink: float  # bit/s
    uplink: float  # bit/s
    initial_cwnd: int | None = None  # segments; None disables slow start
    handshake_rtts: int = 2
    jitter: float = 0.0  # uniform +- ms applied to each connection's rtt

    def __post_init__(self):
        if self.downlink <= 0 or self.uplink <= 0:
            raise ValueError("link rates must be positive")
        if self.rtt < 0 or self.jitter < 0 or self.handshake_rtts < 0:
            raise ValueError("rtt, jitter and handshake_rtts must be non-negative")
        if self.initial_cwnd is not None and self.initial_cwnd <= 0:
            raise ValueError("initial_cwnd must be positive when set")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> LinkConfig:
        return cls(**d)


_PRESETS = {
    "dsl": LinkConfig(rtt=50, downlink=16e6, uplink=1e6),
    "cable": LinkConfig(rtt=20, downlink=50e6, uplink=10e6),
    "lte": LinkConfig(rtt=70, downlink=12e6, uplink=4e6),
    "3g": LinkConfig(rtt=150, downlink=1.6e6, uplink=0.768e6),
    "fiber": LinkConfig(rtt=5, downlink=1e9, uplink=1e9),
}


def configure_presets(path: str | Path | None = None) -> dict[str, LinkConfig]:
    """Built-in presets, overlaid with those in ``path`` when given."""
    out = dict(_PRESETS)
    if path is not None:
        out.update(load_presets(path))
    return out


def dumps_presets(presets: dict[str, LinkConfig]) -> str:
    return json.dumps({k: v.to_dict() for k, v in presets.items()}, indent=2, sort_keys=True) + "\n"


def loads_presets(text: str) -> dict[str, LinkConfig]:
    return {k: LinkConfig.from_dict(v) for k, v in json.loads(text).items()}


def load_presets(path) -> dict[str, LinkConfig]:
    return loads_presets(Path(path).read_text())


def save_presets(presets: dict[str, LinkConfig], path) -> None:
    Path(path).write_text(dumps_presets(presets))


@dataclass
class _ClientStream:
    url: str
    level: int = 0
    push: bool = False
    open: bool = True
    cancelled: bool = False
    got_bytes: bool = False
    unacked: int = 0


@dataclass
class _Conn:
    index: int
    key: str
    rtt: float
    server: Connection
    established: bool = False
    backlog: list = field(default_factory=list)  # client frames waiting for the handshake
    streams: dict[int, _ClientStream] = field(default_factory=dict)
    order: list[int] = field(default_factory=list)  # client stream ids in request order
    next_id: int = 1
    unacked: int = 0
    inflight: int = 0
    cwnd: float | None = None
    is_base: bool = False


class Simulation:
    def __init__(
        self,
        archive: Archive,
        strategy: PushStrategy,
        link: LinkConfig,
        browser_config: br.BrowserConfig | None = None,
        seed: int = 0,
        *,
        timeout_ms: float = 60_000.0,
        check: bool = True,
    ):
        if check:
            problems = validate(strategy, archive)
            if problems:
                raise StrategyRejected(problems)
        self.archive = served_archive(archive, strategy)
        self.strategy = strategy
        self.link = link
        self.rng = random.Random(seed)
        self.timeout_ms = timeout_ms
        self.browser = br.Browser(self.archive.base_url, browser_config)
        self.timeline = Timeline(timeout_ms=timeout_ms)
        self._heap: list = []
        self._seq = 0
        self.now = 0.0
        self.conns: dict[str, _Conn] = {}
        self._up: deque = deque()
        self._up_busy = False
        self._down: deque = deque()  # frames the schedulers already committed
        self._down_busy = False
        self._rr = 0
        self._push_by_url: dict[str, tuple[_Conn, int]] = {}
        try:
            self.base_key = self._key(self.archive.base.authority)
        except NotFound:
            self.base_key = self._key(Request.get(self.archive.base_url).authority)

    # plumbing

    def _at(self, t: float, fn, *args) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, fn, args))

    def _log(self, kind: EventKind, **kw) -> None:
        self.timeline.add(TimelineEvent(self.now, kind, **kw))

    def _key(self, authority: str) -> str:
        try:
            return self.archive.ip_of(authority)
        except NotFound:
            return "unresolved:" + authority

    def _conn_for(self, url: str) -> _Conn:
        key = self._key(Request.get(url).authority)
        conn = self.conns.get(key)
        if conn is None:
            rtt = self.link.rtt
            if self.link.jitter:
                rtt = max(0.0, rtt + self.rng.uniform(-self.link.jitter, self.link.jitter))
            interleave = key == self.base_key and any(d.interleave_offset is not None for d in self.strategy.directives)
            server = Connection(Policy.INTERLEAVING if interleave else Policy.DEFAULT)
            conn = _Conn(len(self.conns), key, rtt, server, is_base=key == self.base_key)
            if self.link.initial_cwnd is not None:
                conn.cwnd = float(self.link.initial_cwnd * MSS)
            self.conns[key] = conn
            self._at(self.now + self.link.handshake_rtts * rtt, self._connected, conn)
        return conn

    # uplink

    def _client_send(self, conn: _Conn, frame: fr.Frame, url: str = "", weight: int = 0, parent: int = 0) -> None:
        item = (conn, frame, url, weight, parent)
        if conn.established:
            self._up.append(item)
            self._pump_up()
        else:
            conn.backlog.append(item)

    def _pump_up(self) -> None:
        if self._up_busy or not self._up:
            return
        conn, frame, url, weight, parent = self._up.popleft()
        wire = fr.encode_frame(frame)
        dur = len(wire) * 8 / self.link.uplink * 1000
        self._log(
            EventKind.SEND,
            stream_id=frame.stream_id,
            nbytes=frame.length,
            conn=conn.index,
            url=url,
            label=_type_name(frame),
            uplink=True,
            weight=weight,
            parent=parent,
        )
        self._up_busy = True
        self._at(self.now + dur, self._up_free)
        self._at(self.now + dur + conn.rtt / 2, self._server_receive, conn, wire)

    def _up_free(self) -> None:
        self._up_busy = False
        self._pump_up()

    def _connected(self, conn: _Conn) -> None:
        conn.established = True
        self._log(EventKind.CONNECT_END, conn=conn.index)
        settings = {Setting.INITIAL_WINDOW_SIZE: STREAM_WINDOW, Setting.ENABLE_PUSH: int(self.strategy.kind.pushes)}
        self._up.append((conn, fr.settings_frame(settings), "", 0, 0))
        self._up.append((conn, fr.window_update_frame(0, CONNECTION_WINDOW - fr.DEFAULT_INITIAL_WINDOW), "", 0, 0))
        self._up.extend(conn.backlog)
        conn.backlog.clear()
        self._pump_up()
        self._deliver_browser(br.ConnectEnd(self.now, main=conn.is_base))

    # server side

    def _server_receive(self, conn: _Conn, wire: bytes) -> None:
        frame, _ = fr.decode_frame(wire)
        server = conn.server
        ftype = frame.known_type
        if ftype is FrameType.SETTINGS and not frame.has_flag(Flags.ACK):
            server.apply_settings(fr.parse_settings(frame.payload))
        elif ftype is FrameType.WINDOW_UPDATE:
            server.window_update(frame.stream_id, fr.parse_window_update(frame))
        elif ftype is FrameType.RST_STREAM:
            node = server.streams.get(frame.stream_id)
            if node is not None and node.is_push and node.state is not StreamState.CLOSED:
                server.cancel_push(frame.stream_id)
        elif ftype is FrameType.HEADERS:
            block, priority = fr.parse_headers_payload(frame)
            headers = {k.decode(): v.decode() for k, v in hpack_decode(block)}
            url = f"{headers[':scheme']}://{headers[':authority']}{headers[':path']}"
            try:
                ex = match_request(self.archive, url)
                resp_headers, body = ex.response.header_list(), ex.body
            except NotFound:
                resp_headers, body = [(":status", "404")], b""
            sid = server.open_stream(resp_headers, len(body), stream_id=frame.stream_id, priority=priority, body=body)
            if conn.is_base and url == self.archive.base_url:
                self._push(conn, sid)
        self._pump_down()

    def _push(self, conn: _Conn, parent: int) -> None:
        server = conn.server
        points: dict[int, list[int]] = {}
        for d in sorted(self.strategy.directives, key=lambda d: d.rank):
            ex = match_request(self.archive, d.resource_url)
            try:
                pid = server.promise_push(
                    parent,
                    Request.get(d.resource_url).header_list(),
                    len(ex.body),
                    response_headers=ex.response.header_list(),
                    body=ex.body,
                )
            except PushDisabled:
                return
            if d.interleave_offset is not None:
                points.setdefault(d.interleave_offset, []).append(pid)
        for offset in sorted(points):
            server.add_interleave_point(parent, offset, points[offset])

    # downlink

    def _budget(self, conn: _Conn) -> int:
        budget = conn.server.max_frame_size
        if conn.cwnd is not None:
            budget = min(budget, int(conn.cwnd) - conn.inflight)
        return budget

    def _pump_down(self) -> None:
        if self._down_busy:
            return
        if not self._down:
            conns = [c for c in self.conns.values() if c.established]
            for i in range(len(conns)):
                conn = conns[(self._rr + i) % len(conns)]
                budget = self._budget(conn)
                if budget <= 0:
                    continue
                frames = conn.server.next_frames(budget)
                if frames:
                    self._rr = (self._rr + i + 1) % len(conns)
                    self._down.extend((conn, f) for f in frames)
                    break
        if not self._down:
            return
        conn, frame = self._down.popleft()
        wire = fr.encode_frame(frame, conn.server.max_frame_size)
        dur = len(wire) * 8 / self.link.downlink * 1000
        stream = conn.streams.get(frame.stream_id)
        self._log(
            EventKind.SEND,
            stream_id=frame.stream_id,
            nbytes=frame.length,
            conn=conn.index,
            url=stream.url if stream else "",
            label=_type_name(frame),
            push=frame.stream_id % 2 == 0 and frame.stream_id > 0,
        )
        if conn.cwnd is not None:
            conn.inflight += len(wire)
        self._down_busy = True
        self._at(self.now + dur, self._down_free)
        self._at(self.now + dur + conn.rtt / 2, self._client_receive, conn, wire)

    def _down_free(self) -> None:
        self._down_busy = False
        self._pump_down()

    def _ack(self, conn: _Conn, size: int) -> None:
        conn.inflight -= size
        conn.cwnd += size  # slow start: one MSS per MSS acknowledged
        self._pump_down()

    # client side

    def _client_receive(self, conn: _Conn, wire: bytes) -> None:
        frame, _ = fr.decode_frame(wire)
        if conn.cwnd is not None:
            self._at(self.now + conn.rtt / 2, self._ack, conn, len(wire))
        ftype = frame.known_type
        sid = frame.stream_id
        if ftype is FrameType.PUSH_PROMISE:
            promised, block = fr.parse_push_promise(frame)
            h = {k.decode(): v.decode() for k, v in hpack_decode(block)}
            url = f"{h[':scheme']}://{h[':authority']}{h[':path']}"
            conn.streams[promised] = _ClientStream(url, push=True)
            self._push_by_url.setdefault(url, (conn, promised))
            self._log(EventKind.DELIVERED, stream_id=sid, nbytes=frame.length, conn=conn.index, url=url, label="PUSH_PROMISE", push=True)
            self._deliver_browser(br.PushPromised(self.now, url))
            return
        stream = conn.streams.get(sid)
        self._log(
            EventKind.DELIVERED,
            stream_id=sid,
            nbytes=frame.length,
            conn=conn.index,
            url=stream.url if stream else "",
            label=_type_name(frame),
            push=bool(stream and stream.push),
        )
        if stream is None or ftype not in (FrameType.HEADERS, FrameType.DATA):
            return
        if not stream.got_bytes:
            stream.got_bytes = True
            self._log(EventKind.FIRST_BYTE, stream_id=sid, conn=conn.index, url=stream.url, push=stream.push)
        if ftype is FrameType.DATA and frame.length:
            self._consume(conn, sid, stream, frame.length)
            if not stream.cancelled:
                self._deliver_browser(br.BytesArrived(self.now, stream.url, frame.payload))
        if frame.has_flag(Flags.END_STREAM):
            stream.open = False
            self._log(EventKind.STREAM_COMPLETE, stream_id=sid, conn=conn.index, url=stream.url, push=stream.push)
            if not stream.cancelled:
                self._deliver_browser(br.StreamCompleted(self.now, stream.url))

    def _consume(self, conn: _Conn, sid: int, stream: _ClientStream, n: int) -> None:
        stream.unacked += n
        conn.unacked += n
        if stream.open and stream.unacked >= STREAM_WINDOW // 2:
            self._client_send(conn, fr.window_update_frame(sid, stream.unacked), stream.url)
            stream.unacked = 0
        if conn.unacked >= CONNECTION_WINDOW // 2:
            self._client_send(conn, fr.window_update_frame(0, conn.unacked))
            conn.unacked = 0

    def _request(self, req: br.FetchRequest) -> None:
        conn = self._conn_for(req.url)
        sid = conn.next_id
        conn.next_id += 2
        if self.browser.config.dependency_chain:
            # exclusive child of the newest open stream at the same or a higher level
            parent = next(
                (s for s in reversed(conn.order) if conn.streams[s].open and conn.streams[s].level >= req.level), 0
            )
            priority = (parent, req.weight, True)
        else:
            priority = (0, req.weight, False)
        conn.streams[sid] = _ClientStream(req.url, level=req.level)
        conn.order.append(sid)
        block = hpack_encode(Request.get(req.url).header_list())
        frame = fr.headers_frame(sid, block, end_stream=True, priority=priority)
        self._client_send(conn, frame, req.url, weight=req.weight, parent=priority[0])

    def _cancel(self, url: str) -> None:
        entry = self._push_by_url.get(url)
        if entry is None:
            return
        conn, pid = entry
        stream = conn.streams[pid]
        if stream.cancelled or not stream.open:
            return
        stream.cancelled = True
        self._client_send(conn, fr.rst_stream_frame(pid), url)

    def _deliver_browser(self, event) -> None:
        for action in self.browser.advance(event):
            self._act(action)

    def _act(self, action) -> None:
        if isinstance(action, br.FetchRequest):
            self._request(action)
        elif isinstance(action, br.CancelPush):
            self._cancel(action.url)
        elif isinstance(action, br.WakeAt):
            self._at(action.time, self._deliver_browser, br.Timer(action.time))
        elif isinstance(action, br.Milestone):
            self._log(EventKind.BROWSER_EVENT, label=action.name)

    def run(self) -> Timeline:
        for action in self.browser.start():
            self._act(action)
        while self._heap:
            t, _, fn, args = heapq.heappop(self._heap)
            if t > self.timeout_ms:
                self.timeline.truncated = True
                break
            self.now = t
            fn(*args)
        return self.timeline


def _type_name(frame: fr.Frame) -> str:
    t = frame.known_type
    return t.name if t is not None else f"0x{frame.frame_type:02x}"


def run(
    archive: Archive,
    strategy: PushStrategy,
    link: LinkConfig,
    browser_config: br.BrowserConfig | None = None,
    seed: int = 0,
    *,
    timeout_ms: float = 60_000.0,
) -> Timeline:
    """Simulate one page load; the strategy is validated first and rejected on any violation."""
    return Simulation(archive, strategy, link, browser_config, seed, timeout_ms=timeout_ms).run()


def trace_from_timeline(timeline: Timeline):
    """The client's requests with their priority dependencies, as a push-order trace."""
    from .strategy import RunTrace, TraceEntry

    url_of: dict[tuple[int, int], str] = {}
    entries = []
    for e in timeline.events:
        if e.kind is EventKind.SEND and e.uplink and e.label == "HEADERS":
            url_of[(e.conn, e.stream_id)] = e.url
            parent = url_of.get((e.conn, e.parent)) if e.parent else None
            entries.append(TraceEntry(e.url, parent, e.weight, e.time))
    return RunTrace(tuple(entries))
