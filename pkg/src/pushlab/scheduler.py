"""Server-side HTTP/2 stream scheduler with Server Push.

The connection keeps an RFC 7540 priority tree. Bandwidth goes to the
highest node that can send; siblings share by weight (WF2Q+ at frame
granularity; equal finish tags go to the least recently served stream). A pushed stream is
a child of the stream it was promised on, so under the default policy it
only transmits once its parent has nothing left to send or is blocked.

The interleaving policy adds :class:`InterleavePoint` records: once a
parent has sent ``offset`` body bytes it is suspended and the promised
streams in ``push_sequence`` use the parent's slot, one after another and
each to completion, before the parent resumes. No parent byte is sent while
the sequence is running.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

from .h2 import frames as fr
from .h2.frames import DEFAULT_INITIAL_WINDOW, DEFAULT_MAX_FRAME_SIZE, Frame, FrameType, ProtocolViolation, Setting
from .h2.hpack import hpack_encode

DEFAULT_WEIGHT = 16
# virtual-time scale for fair queueing
_VT_SCALE = 256


class SchedulerError(Exception):
    pass


class ConnectionClosed(SchedulerError):
    pass


class PushDisabled(SchedulerError):
    pass


class Policy(enum.Enum):
    DEFAULT = "default"
    INTERLEAVING = "interleaving"


class StreamState(enum.Enum):
    OPEN = "open"
    RESERVED = "reserved"
    HALF_CLOSED = "half_closed"
    CLOSED = "closed"


@dataclass(eq=False)
class StreamNode:
    stream_id: int
    parent: int = 0
    weight: int = DEFAULT_WEIGHT
    pending: int = 0
    state: StreamState = StreamState.OPEN
    is_push: bool = False
    children: list[int] = field(default_factory=list)
    header_block: bytes | None = None
    body: bytes | None = None
    body_len: int = 0
    body_sent: int = 0
    complete: bool = True  # no more body bytes will be supplied
    window: int = DEFAULT_INITIAL_WINDOW
    # WF2Q+ state: tags for this node in its parent's queue, clock for its own
    start: float = 0.0
    finish: float = 0.0
    backlogged: bool = False
    vclock: float = 0.0
    _active: list = field(default_factory=list, repr=False)
    _active_weight: int = field(default=0, repr=False)
    last_served: int = 0  # service sequence number, breaks finish-tag ties
    end_sent: bool = False

    @property
    def finished(self) -> bool:
        return self.header_block is None and self.pending == 0 and self.complete and self.end_sent


@dataclass
class InterleavePoint:
    parent_stream: int
    offset: int
    push_sequence: list[int]
    _next: int = 0  # index of the member currently owed the parent's slot


class Chunk(NamedTuple):
    stream_id: int
    size: int
    kind: FrameType = FrameType.DATA


TransmissionPlan = list[Chunk]


class Connection:
    """Server end of one HTTP/2 connection."""

    def __init__(
        self,
        policy: Policy = Policy.DEFAULT,
        *,
        max_frame_size: int = DEFAULT_MAX_FRAME_SIZE,
        initial_window: int = DEFAULT_INITIAL_WINDOW,
        connection_window: int = DEFAULT_INITIAL_WINDOW,
        enable_push: bool = True,
    ):
        self.policy = policy
        self.max_frame_size = max_frame_size
        self.initial_window = initial_window
        self.connection_window = connection_window
        self.enable_push = enable_push
        self.streams: dict[int, StreamNode] = {}
        self.root = StreamNode(0, parent=-1)
        self.last_client_id = 0
        self.last_promised_id = 0
        self.closed = False
        self.control: deque[Frame] = deque()
        self.points: dict[int, list[InterleavePoint]] = {}
        self._reserved: set[int] = set()
        self._served = 0
        self._retired: dict[int, int] = {}  # removed stream -> parent it had when removed

    # settings and connection state

    def apply_settings(self, settings: dict[int, int]) -> None:
        for key, value in settings.items():
            if key == Setting.ENABLE_PUSH:
                self.enable_push = bool(value)
            elif key == Setting.INITIAL_WINDOW_SIZE:
                delta = value - self.initial_window
                self.initial_window = value
                for node in self.streams.values():
                    if node.state is not StreamState.CLOSED:
                        node.window += delta
            elif key == Setting.MAX_FRAME_SIZE:
                self.max_frame_size = value

    def goaway(self) -> None:
        self.closed = True

    def _node(self, stream_id: int) -> StreamNode:
        if stream_id == 0:
            return self.root
        try:
            return self.streams[stream_id]
        except KeyError:
            raise ProtocolViolation(f"unknown stream {stream_id}") from None

    # stream lifecycle

    def open_stream(
        self,
        headers,
        body_len: int,
        *,
        stream_id: int | None = None,
        priority: tuple[int, int, bool] | None = None,
        body: bytes | None = None,
        complete: bool = True,
    ) -> int:
        """Register a client-initiated stream whose response is ``headers`` plus ``body_len`` bytes.

        ``priority`` is (parent, weight, exclusive) as carried by HEADERS.
        With ``complete=False`` more body can arrive later via :meth:`supply`.
        """
        if self.closed:
            raise ConnectionClosed("connection received GOAWAY")
        if stream_id is None:
            stream_id = self.last_client_id + 2 if self.last_client_id else 1
        if stream_id % 2 == 0 or stream_id <= self.last_client_id:
            raise ProtocolViolation(f"client stream id {stream_id} reused or not odd and increasing")
        self.last_client_id = stream_id
        node = StreamNode(
            stream_id,
            header_block=hpack_encode(headers),
            body=body,
            body_len=body_len,
            pending=body_len,
            complete=complete,
            window=self.initial_window,
        )
        self.streams[stream_id] = node
        self._attach(node, 0)
        if priority is not None:
            self.reprioritize(stream_id, *priority)
        return stream_id

    def promise_push(
        self,
        parent: int,
        resource_headers,
        body_len: int,
        *,
        response_headers=None,
        body: bytes | None = None,
    ) -> int:
        """Announce a push on ``parent``; returns the promised (even) stream id.

        ``resource_headers`` is the request header list carried in the
        PUSH_PROMISE. The PUSH_PROMISE is queued ahead of all stream data.
        """
        if not self.enable_push:
            raise PushDisabled("peer set SETTINGS_ENABLE_PUSH = 0")
        if self.closed:
            raise ConnectionClosed("connection received GOAWAY")
        pnode = self.streams.get(parent)
        if pnode is None or parent % 2 == 0 or pnode.state is not StreamState.OPEN:
            raise ProtocolViolation(f"cannot push on stream {parent}: not an open client stream")
        promised = self.last_promised_id + 2
        self.last_promised_id = promised
        if response_headers is None:
            response_headers = [(":status", "200")]
        node = StreamNode(
            promised,
            state=StreamState.RESERVED,
            is_push=True,
            header_block=hpack_encode(response_headers),
            body=body,
            body_len=body_len,
            pending=body_len,
            window=self.initial_window,
        )
        self.streams[promised] = node
        self._attach(node, parent)
        self.control.append(fr.push_promise_frame(parent, promised, hpack_encode(resource_headers)))
        return promised

    def supply(self, stream_id: int, nbytes: int, *, data: bytes | None = None, complete: bool = True) -> None:
        node = self._node(stream_id)
        if node.complete:
            raise ProtocolViolation(f"stream {stream_id} body already complete")
        if data is not None:
            node.body = (node.body or b"\0" * node.body_len) + data
        node.body_len += nbytes
        node.pending += nbytes
        node.complete = complete

    def cancel_push(self, promised: int) -> int:
        """Close a promised stream (client RST_STREAM); returns body bytes already sent."""
        node = self.streams.get(promised)
        if node is None or not node.is_push or node.state is StreamState.CLOSED:
            raise ProtocolViolation(f"cannot cancel stream {promised}")
        node.pending = 0
        node.header_block = None
        node.complete = True
        node.end_sent = True
        self._close(node)
        return node.body_sent

    def window_update(self, stream_id: int, increment: int) -> None:
        if stream_id == 0:
            self.connection_window += increment
            return
        node = self.streams.get(stream_id)
        if node is not None and node.state is not StreamState.CLOSED:
            node.window += increment

    # priority tree

    def _attach(self, node: StreamNode, parent: int) -> None:
        node.parent = parent
        self._node(parent).children.append(node.stream_id)

    def _detach(self, node: StreamNode) -> None:
        self._node(node.parent).children.remove(node.stream_id)

    def _is_descendant(self, candidate: int, ancestor: int) -> bool:
        while candidate not in (0, -1):
            if candidate == ancestor:
                return True
            candidate = self._node(candidate).parent
        return False

    def reprioritize(self, stream_id: int, parent: int, weight: int = DEFAULT_WEIGHT, exclusive: bool = False) -> None:
        if stream_id == parent:
            raise ProtocolViolation(f"stream {stream_id} cannot depend on itself")
        node = self._node(stream_id)
        if parent != 0 and parent not in self.streams:
            # a stream never seen on this connection: default priority
            parent, weight, exclusive = 0, DEFAULT_WEIGHT, False
        elif parent != 0 and parent in self._retired:
            # closed and removed: depend on the place it held instead (RFC 7540 5.3.4)
            while parent != 0 and parent in self._retired:
                parent = self._retired[parent]
        if self._is_descendant(parent, stream_id):
            pnode = self._node(parent)
            self._detach(pnode)
            self._attach(pnode, node.parent)
        self._detach(node)
        target = self._node(parent)
        if exclusive:
            for cid in list(target.children):
                self._detach(self.streams[cid])
                self._attach(self.streams[cid], stream_id)
        self._attach(node, parent)
        node.weight = weight
        node.backlogged = False

    def _close(self, node: StreamNode) -> None:
        node.state = StreamState.CLOSED
        self._maybe_remove(node)

    def _maybe_remove(self, node: StreamNode) -> None:
        # a parent holding unfinished interleave points keeps its slot in the tree
        if node.state is not StreamState.CLOSED or node.parent == -1:
            return
        if any(not self._point_done(p) for p in self.points.get(node.stream_id, ())):
            return
        parent = node.parent
        self._detach(node)
        self._retired[node.stream_id] = parent
        for cid in list(node.children):
            child = self.streams[cid]
            node.children.remove(cid)
            self._attach(child, parent)
        node.parent = -1

    # interleaving

    def add_interleave_point(self, parent: int, offset: int, push_sequence: list[int]) -> InterleavePoint:
        if self.policy is not Policy.INTERLEAVING:
            raise SchedulerError("interleave points need the interleaving policy")
        pnode = self._node(parent)
        if offset < pnode.body_sent or (pnode.complete and offset > pnode.body_len):
            raise SchedulerError(f"offset {offset} outside parent body ({pnode.body_sent} sent of {pnode.body_len})")
        existing = self.points.setdefault(parent, [])
        if existing and offset <= existing[-1].offset:
            raise SchedulerError("interleave offsets on one parent must be strictly increasing")
        for sid in push_sequence:
            if sid in self._reserved or sid not in self.streams:
                raise SchedulerError(f"stream {sid} is unknown or already in an interleave point")
        point = InterleavePoint(parent, offset, list(push_sequence))
        existing.append(point)
        self._reserved.update(push_sequence)
        return point

    def _member_done(self, sid: int) -> bool:
        node = self.streams[sid]
        return node.state is StreamState.CLOSED or node.finished

    def _point_done(self, point: InterleavePoint) -> bool:
        while point._next < len(point.push_sequence) and self._member_done(point.push_sequence[point._next]):
            self._reserved.discard(point.push_sequence[point._next])
            point._next += 1
        return point._next >= len(point.push_sequence)

    def _active_point(self, node: StreamNode) -> InterleavePoint | None:
        for point in self.points.get(node.stream_id, ()):
            if self._point_done(point):
                continue
            return point if node.body_sent >= point.offset else None
        return None

    def _next_offset(self, node: StreamNode) -> int | None:
        for point in self.points.get(node.stream_id, ()):
            if point.offset > node.body_sent:
                return point.offset
        return None

    # selection

    def _can_send(self, node: StreamNode) -> bool:
        if node.state is StreamState.CLOSED:
            return False
        if node.header_block is not None:
            return True
        if node.pending > 0:
            return node.window > 0 and self.connection_window > 0
        # zero-length remainder: only the END_STREAM marker is owed
        return node.complete and not node.end_sent

    def _own_sendable(self, node: StreamNode) -> bool:
        if node.stream_id in self._reserved or not self._can_send(node):
            return False
        if node.header_block is None and self._active_point(node) is not None:
            return False
        return True

    def _pick(self, node: StreamNode) -> tuple[StreamNode, list[StreamNode]] | None:
        """Find the stream to serve next below ``node``; also returns the path of chosen children."""
        if node is not self.root:
            if self._own_sendable(node):
                return node, []
            point = self._active_point(node)
            if point is not None:
                member = self.streams[point.push_sequence[point._next]]
                if self._can_send(member):
                    return member, []
        active = []
        for cid in node.children:
            child = self.streams[cid]
            found = self._pick(child)
            if found is None:
                child.backlogged = False
                continue
            if not child.backlogged:
                child.start = max(child.finish, node.vclock)
                child.backlogged = True
            active.append((child, found))
        if not active:
            return None
        floor = min(child.start for child, _ in active)
        clock = max(node.vclock, floor)
        nominal = self.max_frame_size * _VT_SCALE
        child, (target, path) = min(
            ((c, f) for c, f in active if c.start <= clock),
            key=lambda item: (item[0].start + nominal / item[0].weight, item[0].last_served, item[0].stream_id),
        )
        node.vclock = clock
        node._active_weight = sum(c.weight for c, _ in active)
        node._active = [c for c, _ in active]
        return target, [node, child] + path

    def _charge(self, path: list[StreamNode], nbytes: int) -> None:
        cost = max(nbytes, 1) * _VT_SCALE
        self._served += 1
        for parent, child in zip(path[::2], path[1::2]):
            child.last_served = self._served
            child.finish = child.start + cost / child.weight
            child.start = child.finish
            parent.vclock = max(parent.vclock + cost / parent._active_weight, min(c.start for c in parent._active))

    def next_plan(self, window_budget: int) -> TransmissionPlan:
        """Commit and return the chunks for the next ``window_budget`` bytes of send opportunity.

        Control frames (PUSH_PROMISE and friends) are always drained first. An
        empty plan means nothing can be sent right now.
        """
        return [chunk for chunk, _ in self._schedule(window_budget)]

    def next_frames(self, window_budget: int) -> list[Frame]:
        """Like :meth:`next_plan` but materialised as wire frames."""
        return [frame for _, frame in self._schedule(window_budget)]

    def _schedule(self, window_budget: int) -> list[tuple[Chunk, Frame]]:
        out: list[tuple[Chunk, Frame]] = []
        budget = window_budget
        while self.control and (budget > 0 or not out):
            frame = self.control.popleft()
            out.append((Chunk(frame.stream_id, frame.length, FrameType(frame.frame_type)), frame))
            budget -= frame.length
        while budget > 0 or not out:
            found = self._pick(self.root)
            if found is None:
                break
            node, path = found
            if node.header_block is not None:
                block = node.header_block
                node.header_block = None
                end = node.pending == 0 and node.complete
                node.end_sent = end
                if node.state is StreamState.RESERVED:
                    node.state = StreamState.HALF_CLOSED
                out.append((Chunk(node.stream_id, len(block), FrameType.HEADERS), fr.headers_frame(node.stream_id, block, end_stream=end)))
                self._charge(path, len(block))
                budget -= len(block)
                self._after_send(node)
                continue
            size = min(node.pending, budget if out else window_budget, self.max_frame_size, node.window, self.connection_window)
            limit = self._next_offset(node)
            if limit is not None:
                size = min(size, limit - node.body_sent)
            if size <= 0 and node.pending > 0:
                break
            start = node.body_sent
            data = node.body[start:start + size] if node.body is not None else bytes(size)
            node.pending -= size
            node.body_sent += size
            node.window -= size
            self.connection_window -= size
            end = node.pending == 0 and node.complete
            node.end_sent = end
            out.append((Chunk(node.stream_id, size, FrameType.DATA), fr.data_frame(node.stream_id, data, end_stream=end)))
            self._charge(path, size)
            budget -= size
            self._after_send(node)
        return out

    def _after_send(self, node: StreamNode) -> None:
        if node.finished and node.state is not StreamState.CLOSED:
            self._close(node)
        # a suspended parent may have become removable
        for sid in self.points:
            parent = self.streams.get(sid)
            if parent is not None and parent.parent != -1:
                self._maybe_remove(parent)

    def has_pending(self) -> bool:
        return bool(self.control) or any(
            n.state is not StreamState.CLOSED and not n.finished for n in self.streams.values()
        )
