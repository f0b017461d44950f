import pytest
from hypothesis import given, strategies as st

from pushlab.h2 import Frame, FrameReader, FrameTooLarge, FrameType, NeedMoreBytes, ProtocolViolation, decode_frame, encode_frame
from pushlab.h2.frames import (
    PromiseTracker,
    data_frame,
    headers_frame,
    parse_headers_payload,
    parse_push_promise,
    parse_settings,
    push_promise_frame,
    settings_frame,
)

STREAM_SCOPED = [FrameType.DATA, FrameType.HEADERS, FrameType.PRIORITY, FrameType.RST_STREAM, FrameType.PUSH_PROMISE]


@st.composite
def frames(draw, max_payload=2048):
    kind = draw(st.sampled_from(["stream", "conn", "window", "unknown"]))
    if kind == "stream":
        ftype = draw(st.sampled_from(STREAM_SCOPED))
        sid = draw(st.integers(1, 2**31 - 1))
    elif kind == "conn":
        ftype = draw(st.sampled_from([FrameType.SETTINGS, FrameType.GOAWAY]))
        sid = 0
    elif kind == "window":
        ftype = FrameType.WINDOW_UPDATE
        sid = draw(st.integers(0, 2**31 - 1))
    else:
        ftype = draw(st.integers(0x0A, 0xFF))
        sid = draw(st.integers(0, 2**31 - 1))
    return Frame(int(ftype), draw(st.integers(0, 255)), sid, draw(st.binary(max_size=max_payload)))


def test_settings_disable_push_bytes():
    wire = encode_frame(settings_frame({0x2: 0}))
    assert wire == bytes.fromhex("000006" "04" "00" "00000000" "0002" "00000000")
    frame, rest = decode_frame(wire)
    assert frame == settings_frame({0x2: 0})
    assert rest == b""
    assert parse_settings(frame.payload) == {2: 0}


def test_empty_data_end_stream():
    assert encode_frame(data_frame(1, b"", end_stream=True)) == bytes.fromhex("000000" "00" "01" "00000001")


def test_partial_header():
    with pytest.raises(NeedMoreBytes) as exc:
        decode_frame(b"\x00" * 5)
    assert exc.value.count == 4


def test_partial_payload():
    wire = encode_frame(data_frame(1, b"abcdef"))
    with pytest.raises(NeedMoreBytes) as exc:
        decode_frame(wire[:-2])
    assert exc.value.count == 2


def test_two_concatenated_frames():
    a = encode_frame(data_frame(1, b"hello"))
    b = encode_frame(settings_frame({4: 1 << 20}))
    frame, rest = decode_frame(a + b)
    assert frame.payload == b"hello"
    assert rest == b


def test_oversize_payload():
    with pytest.raises(FrameTooLarge):
        encode_frame(data_frame(1, b"x" * 16_385))
    encode_frame(data_frame(1, b"x" * 16_385), max_frame_size=32_768)


@pytest.mark.parametrize(
    "frame",
    [
        Frame(FrameType.SETTINGS, 0, 1),
        Frame(FrameType.GOAWAY, 0, 3, b"\0" * 8),
        Frame(FrameType.DATA, 0, 0, b"x"),
        Frame(FrameType.HEADERS, 0, 0),
        Frame(FrameType.DATA, 0, 2**31, b""),
    ],
)
def test_stream_id_rules(frame):
    with pytest.raises(ProtocolViolation):
        encode_frame(frame)


def test_unknown_type_kept_opaque():
    frame = Frame(0xEE, 0x3, 5, b"\x01\x02")
    decoded, _ = decode_frame(encode_frame(frame))
    assert decoded == frame
    assert decoded.known_type is None


def test_reserved_bit_ignored_on_decode():
    wire = bytearray(encode_frame(data_frame(7, b"z")))
    wire[5] |= 0x80
    frame, _ = decode_frame(bytes(wire))
    assert frame.stream_id == 7


def test_headers_priority_fields():
    frame = headers_frame(3, b"\x82", priority=(1, 220, True))
    block, prio = parse_headers_payload(frame)
    assert block == b"\x82"
    assert prio == (1, 220, True)


def test_push_promise_payload():
    frame = push_promise_frame(1, 2, b"\x82\x84")
    assert parse_push_promise(frame) == (2, b"\x82\x84")


def test_promise_tracker():
    t = PromiseTracker()
    t.check(2)
    t.check(4)
    with pytest.raises(ProtocolViolation):
        t.check(4)
    with pytest.raises(ProtocolViolation):
        t.check(7)


@given(frames())
def test_round_trip(frame):
    decoded, rest = decode_frame(encode_frame(frame))
    assert decoded == frame
    assert rest == b""


@given(st.lists(frames(max_payload=300), max_size=8), st.lists(st.integers(0, 3000), max_size=10))
def test_incremental_split(frame_list, cuts):
    wire = b"".join(encode_frame(f) for f in frame_list)
    points = sorted({c % (len(wire) + 1) for c in cuts})
    reader = FrameReader()
    got = []
    prev = 0
    for p in points + [len(wire)]:
        got += reader.feed(wire[prev:p])
        prev = p
    assert got == frame_list
    assert reader.buffered == 0
