"""HTTP/2 frame layout (RFC 7540 section 4.1).

Every frame is a fixed 9 byte header followed by ``length`` payload bytes::

    +-----------------------------------------------+
    |                 Length (24)                   |
    +---------------+---------------+---------------+
    |   Type (8)    |   Flags (8)   |
    +-+-------------+---------------+-------------------------------+
    |R|                 Stream Identifier (31)                      |
    +=+=============================================================+
    |                   Frame Payload (0...)                      ...
    +---------------------------------------------------------------+
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum, IntFlag

HEADER_SIZE = 9
DEFAULT_MAX_FRAME_SIZE = 16_384
MAX_FRAME_SIZE_LIMIT = 2**24 - 1
MAX_STREAM_ID = 2**31 - 1
DEFAULT_INITIAL_WINDOW = 65_535
MAX_WINDOW = 2**31 - 1


class FrameType(IntEnum):
    DATA = 0x0
    HEADERS = 0x1
    PRIORITY = 0x2
    RST_STREAM = 0x3
    SETTINGS = 0x4
    PUSH_PROMISE = 0x5
    PING = 0x6
    GOAWAY = 0x7
    WINDOW_UPDATE = 0x8
    CONTINUATION = 0x9


class Flags(IntFlag):
    NONE = 0x0
    END_STREAM = 0x1
    ACK = 0x1
    END_HEADERS = 0x4
    PADDED = 0x8
    PRIORITY = 0x20


class Setting(IntEnum):
    HEADER_TABLE_SIZE = 0x1
    ENABLE_PUSH = 0x2
    MAX_CONCURRENT_STREAMS = 0x3
    INITIAL_WINDOW_SIZE = 0x4
    MAX_FRAME_SIZE = 0x5
    MAX_HEADER_LIST_SIZE = 0x6


class ErrorCode(IntEnum):
    NO_ERROR = 0x0
    PROTOCOL_ERROR = 0x1
    INTERNAL_ERROR = 0x2
    FLOW_CONTROL_ERROR = 0x3
    STREAM_CLOSED = 0x5
    FRAME_SIZE_ERROR = 0x6
    REFUSED_STREAM = 0x7
    CANCEL = 0x8


class FrameError(Exception):
    pass


class FrameTooLarge(FrameError):
    pass


class ProtocolViolation(FrameError):
    pass


class NeedMoreBytes(FrameError):
    def __init__(self, count: int):
        super().__init__(f"need {count} more bytes")
        self.count = count


# frame types that must (True) or must not (False) use stream 0
_CONNECTION_SCOPED = {
    FrameType.SETTINGS: True,
    FrameType.PING: True,
    FrameType.GOAWAY: True,
    FrameType.DATA: False,
    FrameType.HEADERS: False,
    FrameType.PRIORITY: False,
    FrameType.RST_STREAM: False,
    FrameType.PUSH_PROMISE: False,
    FrameType.CONTINUATION: False,
}


@dataclass(frozen=True)
class Frame:
    """One frame. ``frame_type`` is a plain int for extension types."""

    frame_type: int
    flags: int
    stream_id: int
    payload: bytes = b""

    @property
    def length(self) -> int:
        return len(self.payload)

    @property
    def known_type(self) -> FrameType | None:
        try:
            return FrameType(self.frame_type)
        except ValueError:
            return None

    def has_flag(self, flag: Flags) -> bool:
        return bool(self.flags & flag)


def check_frame(frame: Frame, max_frame_size: int = DEFAULT_MAX_FRAME_SIZE) -> None:
    if frame.length > max_frame_size:
        raise FrameTooLarge(f"payload of {frame.length} bytes exceeds max frame size {max_frame_size}")
    if not 0 <= frame.stream_id <= MAX_STREAM_ID:
        raise ProtocolViolation(f"stream id {frame.stream_id} out of range")
    if not 0 <= frame.flags <= 0xFF or not 0 <= frame.frame_type <= 0xFF:
        raise ProtocolViolation("type and flags are 8-bit fields")
    scoped = _CONNECTION_SCOPED.get(frame.frame_type)
    if scoped is True and frame.stream_id != 0:
        raise ProtocolViolation(f"{FrameType(frame.frame_type).name} must use stream 0")
    if scoped is False and frame.stream_id == 0:
        raise ProtocolViolation(f"{FrameType(frame.frame_type).name} requires a non-zero stream id")


def encode_frame(frame: Frame, max_frame_size: int = DEFAULT_MAX_FRAME_SIZE) -> bytes:
    check_frame(frame, max_frame_size)
    length = frame.length
    header = struct.pack(">BHBBL", length >> 16, length & 0xFFFF, frame.frame_type, frame.flags, frame.stream_id)
    return header + bytes(frame.payload)


def decode_frame(data: bytes, max_frame_size: int = MAX_FRAME_SIZE_LIMIT) -> tuple[Frame, bytes]:
    """Decode one frame from the front of ``data``.

    Raises NeedMoreBytes with the number of missing bytes when ``data`` does
    not hold a complete frame. Unknown frame types are returned as-is with
    their payload untouched.
    """
    if len(data) < HEADER_SIZE:
        raise NeedMoreBytes(HEADER_SIZE - len(data))
    hi, lo, frame_type, flags, stream_id = struct.unpack_from(">BHBBL", data)
    length = (hi << 16) | lo
    if length > max_frame_size:
        raise FrameTooLarge(f"frame announces {length} bytes, limit {max_frame_size}")
    end = HEADER_SIZE + length
    if len(data) < end:
        raise NeedMoreBytes(end - len(data))
    frame = Frame(frame_type, flags, stream_id & MAX_STREAM_ID, bytes(data[HEADER_SIZE:end]))
    return frame, bytes(data[end:])


class FrameReader:
    """Incremental decoder: feed arbitrary byte slices, get whole frames back."""

    def __init__(self, max_frame_size: int = MAX_FRAME_SIZE_LIMIT):
        self._buf = bytearray()
        self.max_frame_size = max_frame_size

    def feed(self, data: bytes) -> list[Frame]:
        self._buf += data
        frames = []
        pos = 0
        buf = self._buf
        while len(buf) - pos >= HEADER_SIZE:
            length = int.from_bytes(buf[pos:pos + 3], "big")
            if length > self.max_frame_size:
                raise FrameTooLarge(f"frame announces {length} bytes, limit {self.max_frame_size}")
            end = pos + HEADER_SIZE + length
            if len(buf) < end:
                break
            frame, _ = decode_frame(bytes(buf[pos:end]), self.max_frame_size)
            frames.append(frame)
            pos = end
        del buf[:pos]
        return frames

    @property
    def buffered(self) -> int:
        return len(self._buf)


# payload helpers


def settings_payload(settings: dict[int, int]) -> bytes:
    return b"".join(struct.pack(">HL", int(k), v) for k, v in settings.items())


def parse_settings(payload: bytes) -> dict[int, int]:
    if len(payload) % 6:
        raise ProtocolViolation("SETTINGS payload must be a multiple of 6 bytes")
    return {k: v for k, v in struct.iter_unpack(">HL", payload)}


def settings_frame(settings: dict[int, int], ack: bool = False) -> Frame:
    return Frame(FrameType.SETTINGS, Flags.ACK if ack else 0, 0, b"" if ack else settings_payload(settings))


def data_frame(stream_id: int, data: bytes, end_stream: bool = False) -> Frame:
    return Frame(FrameType.DATA, Flags.END_STREAM if end_stream else 0, stream_id, data)


def headers_frame(
    stream_id: int,
    block: bytes,
    end_stream: bool = False,
    priority: tuple[int, int, bool] | None = None,
) -> Frame:
    """HEADERS with END_HEADERS set; ``priority`` is (parent, weight 1-256, exclusive)."""
    flags = Flags.END_HEADERS
    if end_stream:
        flags |= Flags.END_STREAM
    if priority is not None:
        flags |= Flags.PRIORITY
        block = priority_fields(*priority) + block
    return Frame(FrameType.HEADERS, int(flags), stream_id, block)


def priority_fields(parent: int, weight: int, exclusive: bool = False) -> bytes:
    if not 1 <= weight <= 256:
        raise ProtocolViolation(f"weight {weight} outside 1..256")
    return struct.pack(">LB", (parent & MAX_STREAM_ID) | (0x80000000 if exclusive else 0), weight - 1)


def parse_priority_fields(data: bytes) -> tuple[int, int, bool]:
    dep, w = struct.unpack_from(">LB", data)
    return dep & MAX_STREAM_ID, w + 1, bool(dep & 0x80000000)


def parse_headers_payload(frame: Frame) -> tuple[bytes, tuple[int, int, bool] | None]:
    """Split a HEADERS payload into (header block, priority or None); padding is stripped."""
    payload = frame.payload
    pad = 0
    if frame.flags & Flags.PADDED:
        pad = payload[0]
        payload = payload[1:]
    priority = None
    if frame.flags & Flags.PRIORITY:
        priority = parse_priority_fields(payload)
        payload = payload[5:]
    if pad:
        if pad > len(payload):
            raise ProtocolViolation("padding exceeds payload")
        payload = payload[:-pad]
    return payload, priority


def push_promise_frame(stream_id: int, promised_id: int, block: bytes) -> Frame:
    return Frame(FrameType.PUSH_PROMISE, Flags.END_HEADERS, stream_id, struct.pack(">L", promised_id & MAX_STREAM_ID) + block)


def parse_push_promise(frame: Frame) -> tuple[int, bytes]:
    payload = frame.payload
    if frame.flags & Flags.PADDED:
        pad = payload[0]
        payload = payload[1:len(payload) - pad]
    return struct.unpack_from(">L", payload)[0] & MAX_STREAM_ID, payload[4:]


def rst_stream_frame(stream_id: int, code: int = ErrorCode.CANCEL) -> Frame:
    return Frame(FrameType.RST_STREAM, 0, stream_id, struct.pack(">L", code))


def window_update_frame(stream_id: int, increment: int) -> Frame:
    if not 1 <= increment <= MAX_WINDOW:
        raise ProtocolViolation(f"window increment {increment} out of range")
    return Frame(FrameType.WINDOW_UPDATE, 0, stream_id, struct.pack(">L", increment))


def parse_window_update(frame: Frame) -> int:
    return struct.unpack_from(">L", frame.payload)[0] & MAX_WINDOW


def goaway_frame(last_stream_id: int, code: int = ErrorCode.NO_ERROR) -> Frame:
    return Frame(FrameType.GOAWAY, 0, 0, struct.pack(">LL", last_stream_id, code))


class PromiseTracker:
    """Checks that promised stream ids on one connection are even and strictly increasing."""

    def __init__(self):
        self.last = 0

    def check(self, promised_id: int) -> None:
        if promised_id % 2 or promised_id <= self.last:
            raise ProtocolViolation(f"promised stream {promised_id} is not even and above {self.last}")
        self.last = promised_id
