import pytest
from hypothesis import given, settings, strategies as st

from pushlab.h2 import FrameReader, FrameType, ProtocolViolation
from pushlab.h2.frames import encode_frame, parse_push_promise
from pushlab.scheduler import (
    Connection,
    ConnectionClosed,
    Policy,
    PushDisabled,
    SchedulerError,
    StreamState,
)

OK = [(":status", "200")]
BIG = 2**31 - 1


def req(path):
    return [(":method", "GET"), (":scheme", "https"), (":authority", "example.com"), (":path", path)]


def drain(conn, budget=16_384, limit=100_000):
    out = []
    for _ in range(limit):
        plan = conn.next_plan(budget)
        if not plan:
            return out
        out += plan
    raise AssertionError("scheduler did not go idle")


def data_order(chunks):
    return [(c.stream_id, c.size) for c in chunks if c.kind is FrameType.DATA]


def test_client_ids_are_odd_and_increasing():
    conn = Connection()
    assert conn.open_stream(OK, 10) == 1
    assert conn.open_stream(OK, 10) == 3
    with pytest.raises(ProtocolViolation):
        conn.open_stream(OK, 10, stream_id=3)


def test_open_after_goaway():
    conn = Connection()
    conn.goaway()
    with pytest.raises(ConnectionClosed):
        conn.open_stream(OK, 10)


def test_default_weight_under_root():
    conn = Connection()
    sid = conn.open_stream(OK, 10)
    node = conn.streams[sid]
    assert node.parent == 0 and node.weight == 16


def test_promise_ids_and_parent():
    conn = Connection()
    parent = conn.open_stream(OK, 100)
    first = conn.promise_push(parent, req("/a.css"), 10)
    second = conn.promise_push(parent, req("/b.css"), 10)
    assert (first, second) == (2, 4)
    assert conn.streams[first].state is StreamState.RESERVED
    assert conn.streams[first].parent == parent
    frames = conn.next_frames(16_384)
    assert frames[0].frame_type == FrameType.PUSH_PROMISE and frames[0].stream_id == parent
    assert parse_push_promise(frames[0])[0] == 2


def test_push_disabled():
    conn = Connection(enable_push=False)
    parent = conn.open_stream(OK, 100)
    with pytest.raises(PushDisabled):
        conn.promise_push(parent, req("/a.css"), 10)
    conn = Connection()
    parent = conn.open_stream(OK, 100)
    conn.apply_settings({0x2: 0})
    with pytest.raises(PushDisabled):
        conn.promise_push(parent, req("/a.css"), 10)


def test_push_on_closed_parent():
    conn = Connection()
    parent = conn.open_stream(OK, 100)
    drain(conn)
    with pytest.raises(ProtocolViolation):
        conn.promise_push(parent, req("/a.css"), 10)


def test_cancel_before_scheduling():
    conn = Connection()
    parent = conn.open_stream(OK, 100)
    pushed = conn.promise_push(parent, req("/a.css"), 5000)
    assert conn.cancel_push(pushed) == 0
    assert all(c.stream_id != pushed or c.kind is FrameType.PUSH_PROMISE for c in drain(conn))
    with pytest.raises(ProtocolViolation):
        conn.cancel_push(pushed)
    with pytest.raises(ProtocolViolation):
        conn.cancel_push(98)


def test_cancel_mid_transfer_counts_sent_bytes():
    conn = Connection(initial_window=BIG, connection_window=BIG)
    parent = conn.open_stream(OK, 0)
    pushed = conn.promise_push(parent, req("/big.png"), 100_000)
    conn.next_plan(16_384)  # promise + parent headers + push headers ...
    sent = sum(c.size for c in conn.next_plan(16_384 * 2) if c.stream_id == pushed and c.kind is FrameType.DATA)
    assert conn.cancel_push(pushed) >= sent > 0


def test_default_parent_before_push():
    conn = Connection()
    parent = conn.open_stream(OK, 10_000)
    css = conn.promise_push(parent, req("/a.css"), 2_000)
    assert data_order(drain(conn)) == [(parent, 10_000), (css, 2_000)]


def test_interleave_4k():
    conn = Connection(Policy.INTERLEAVING)
    parent = conn.open_stream(OK, 10_000)
    css = conn.promise_push(parent, req("/a.css"), 2_000)
    conn.add_interleave_point(parent, 4_096, [css])
    assert data_order(drain(conn)) == [(parent, 4_096), (css, 2_000), (parent, 5_904)]


def test_blocked_parent_lets_push_through():
    conn = Connection()
    parent = conn.open_stream(OK, 0, complete=False)
    css = conn.promise_push(parent, req("/a.css"), 2_000)
    assert data_order(conn.next_plan(16_384)) == [(css, 2_000)]
    conn.supply(parent, 500, complete=True)
    assert data_order(drain(conn)) == [(parent, 500)]


def test_flow_control_blocks_and_resumes():
    conn = Connection(initial_window=1_000, connection_window=BIG)
    sid = conn.open_stream(OK, 3_000)
    assert data_order(drain(conn)) == [(sid, 1_000)]
    conn.window_update(sid, 5_000)
    assert data_order(drain(conn)) == [(sid, 2_000)]


def test_connection_window():
    conn = Connection(initial_window=BIG, connection_window=1_500)
    a = conn.open_stream(OK, 1_000)
    b = conn.open_stream(OK, 1_000)
    assert sum(s for _, s in data_order(drain(conn))) == 1_500
    conn.window_update(0, 10_000)
    assert sum(s for _, s in data_order(drain(conn))) == 500
    assert conn.streams[a].state is StreamState.CLOSED and conn.streams[b].state is StreamState.CLOSED


def test_interleave_waits_for_window_in_order():
    conn = Connection(Policy.INTERLEAVING, initial_window=1_000, connection_window=BIG)
    parent = conn.open_stream(OK, 3_000)
    css = conn.promise_push(parent, req("/a.css"), 1_500)
    js = conn.promise_push(parent, req("/a.js"), 200)
    conn.add_interleave_point(parent, 500, [css, js])
    assert data_order(drain(conn)) == [(parent, 500), (css, 1_000)]
    conn.window_update(parent, 10_000)
    assert drain(conn) == []  # parent stays suspended, js waits behind css
    conn.window_update(css, 10_000)
    assert data_order(drain(conn)) == [(css, 500), (js, 200), (parent, 2_500)]


def test_cancelled_member_is_skipped():
    conn = Connection(Policy.INTERLEAVING)
    parent = conn.open_stream(OK, 3_000)
    css = conn.promise_push(parent, req("/a.css"), 1_500)
    js = conn.promise_push(parent, req("/a.js"), 200)
    conn.add_interleave_point(parent, 1_000, [css, js])
    conn.cancel_push(css)
    assert data_order(drain(conn)) == [(parent, 1_000), (js, 200), (parent, 2_000)]


def test_multiple_points_fire_in_order():
    conn = Connection(Policy.INTERLEAVING)
    parent = conn.open_stream(OK, 10_000)
    a = conn.promise_push(parent, req("/a"), 100)
    b = conn.promise_push(parent, req("/b"), 200)
    conn.add_interleave_point(parent, 1_000, [a])
    conn.add_interleave_point(parent, 6_000, [b])
    with pytest.raises(SchedulerError):
        conn.add_interleave_point(parent, 5_000, [])
    assert data_order(drain(conn)) == [(parent, 1_000), (a, 100), (parent, 5_000), (b, 200), (parent, 4_000)]


def test_point_at_body_end():
    conn = Connection(Policy.INTERLEAVING)
    parent = conn.open_stream(OK, 1_000)
    a = conn.promise_push(parent, req("/a"), 100)
    conn.add_interleave_point(parent, 1_000, [a])
    assert data_order(drain(conn)) == [(parent, 1_000), (a, 100)]
    assert not conn.has_pending()


def test_point_validation():
    conn = Connection(Policy.INTERLEAVING)
    parent = conn.open_stream(OK, 1_000)
    a = conn.promise_push(parent, req("/a"), 100)
    with pytest.raises(SchedulerError):
        conn.add_interleave_point(parent, 1_001, [a])
    conn.add_interleave_point(parent, 10, [a])
    with pytest.raises(SchedulerError):
        conn.add_interleave_point(parent, 20, [a])
    with pytest.raises(SchedulerError):
        Connection().add_interleave_point(1, 0, [])


def test_exclusive_reprioritisation():
    conn = Connection()
    html = conn.open_stream(OK, 10)
    pushed = conn.promise_push(html, req("/a.css"), 10)
    css = conn.open_stream(OK, 10, priority=(html, 220, True))
    assert conn.streams[pushed].parent == css
    assert conn.streams[html].children == [css]


def test_reparent_under_own_descendant():
    conn = Connection()
    a = conn.open_stream(OK, 10)
    b = conn.open_stream(OK, 10, priority=(a, 16, False))
    conn.reprioritize(a, b, 16)
    assert conn.streams[b].parent == 0 and conn.streams[a].parent == b
    with pytest.raises(ProtocolViolation):
        conn.reprioritize(a, a)


def test_dependency_on_retired_stream_takes_its_place():
    conn = Connection()
    a = conn.open_stream(OK, 10)
    c = conn.open_stream(OK, 10, priority=(a, 16, False))
    drain(conn)
    other = conn.open_stream(OK, 10, complete=False)
    b = conn.open_stream(OK, 10, priority=(c, 200, True))
    # a and c are gone; b lands where c would have been (under root), keeping weight and exclusivity
    assert conn.streams[b].parent == 0 and conn.streams[b].weight == 200
    assert conn.streams[other].parent == b


def test_dependency_on_unknown_stream_gets_default_priority():
    conn = Connection()
    b = conn.open_stream(OK, 10, stream_id=5, priority=(3, 200, True))
    assert conn.streams[b].parent == 0 and conn.streams[b].weight == 16


def test_children_inherit_grandparent_when_parent_finishes():
    conn = Connection()
    html = conn.open_stream(OK, 10)
    css = conn.open_stream(OK, 10, priority=(html, 220, True))
    conn.open_stream(OK, 0, stream_id=7, complete=False)
    drain(conn)
    assert conn.streams[html].state is StreamState.CLOSED
    assert conn.streams[css].state is StreamState.CLOSED
    assert conn.root.children == [7]


def test_zero_length_end_stream_only():
    conn = Connection()
    sid = conn.open_stream(OK, 0, complete=False)
    frames = conn.next_frames(16_384)
    assert [f.frame_type for f in frames] == [FrameType.HEADERS] and not frames[0].flags & 0x1
    conn.supply(sid, 0, complete=True)
    frames = conn.next_frames(16_384)
    assert [(f.frame_type, f.flags, f.payload) for f in frames] == [(FrameType.DATA, 0x1, b"")]
    assert conn.streams[sid].state is StreamState.CLOSED


def test_frames_carry_body_bytes():
    body = bytes(range(256)) * 200
    conn = Connection(initial_window=BIG, connection_window=BIG)
    sid = conn.open_stream(OK, len(body), body=body)
    got = b""
    flags = []
    while True:
        frames = conn.next_frames(16_384)
        if not frames:
            break
        for f in frames:
            if f.frame_type == FrameType.DATA:
                assert f.stream_id == sid
                got += f.payload
                flags.append(f.flags)
    assert got == body
    assert flags[-1] == 0x1 and not any(flags[:-1])


def test_equal_weight_tie_breaks_low_id():
    conn = Connection()
    a = conn.open_stream(OK, 50_000)
    b = conn.open_stream(OK, 50_000)
    data = data_order(drain(conn))
    assert data[0][0] == a and data[1][0] == b


# property tests


@st.composite
def scenarios(draw):
    """A connection with client streams, pushes and (optionally) interleave points."""
    policy = draw(st.sampled_from([Policy.DEFAULT, Policy.INTERLEAVING]))
    window = draw(st.sampled_from([BIG, 65_535, 20_000]))
    conn = Connection(policy, initial_window=window, connection_window=BIG)
    parents = []
    for _ in range(draw(st.integers(1, 3))):
        prio = None
        if parents and draw(st.booleans()):
            prio = (draw(st.sampled_from(parents)), draw(st.integers(1, 256)), draw(st.booleans()))
        parents.append(conn.open_stream(OK, draw(st.integers(0, 60_000)), priority=prio))
    for parent in parents:
        pushes = [
            conn.promise_push(parent, req(f"/{parent}/{i}"), draw(st.integers(0, 30_000)))
            for i in range(draw(st.integers(0, 3)))
        ]
        if policy is Policy.INTERLEAVING and pushes:
            body = conn.streams[parent].body_len
            offsets = sorted(set(draw(st.lists(st.integers(0, body), min_size=1, max_size=2))))
            groups = [pushes[i::len(offsets)] for i in range(len(offsets))]
            for off, group in zip(offsets, groups):
                if group:
                    conn.add_interleave_point(parent, off, group)
    return conn


def run_with_window_refill(conn, budget):
    chunks = []
    for _ in range(10_000):
        plan = conn.next_plan(budget)
        if not plan:
            if not conn.has_pending():
                return chunks
            for sid in conn.streams:
                conn.window_update(sid, 100_000)
            continue
        chunks += plan
    raise AssertionError("no progress")


@settings(max_examples=150, deadline=None)
@given(scenarios(), st.sampled_from([1_000, 16_384, 40_000]))
def test_plan_invariants(conn, budget):
    body = {sid: n.body_len for sid, n in conn.streams.items()}
    points = {sid: list(pts) for sid, pts in conn.points.items()}
    pushed_parent = {sid: n.parent for sid, n in conn.streams.items() if n.is_push}
    chunks = run_with_window_refill(conn, budget)

    # conservation and promise-before-data
    announced = set()
    sent = {sid: 0 for sid in body}
    for c in chunks:
        if c.kind is FrameType.PUSH_PROMISE:
            announced.update(s for s, p in pushed_parent.items() if p == c.stream_id)
        elif c.kind is FrameType.DATA:
            if c.stream_id in pushed_parent:
                assert c.stream_id in announced
            sent[c.stream_id] += c.size
            assert c.size <= 16_384
    assert sent == body

    # interleave exactness: parent bytes before first member byte == offset,
    # and every member byte precedes parent byte offset + 1
    for parent, pts in points.items():
        for point in pts:
            members = set(point.push_sequence)
            before = 0
            first_member_seen = False
            member_bytes = 0
            for c in chunks:
                if c.kind is not FrameType.DATA:
                    continue
                if c.stream_id in members:
                    if not first_member_seen and body[c.stream_id]:
                        first_member_seen = True
                        assert before == point.offset
                    member_bytes += c.size
                elif c.stream_id == parent:
                    if before >= point.offset and c.size:
                        assert member_bytes == sum(body[m] for m in members)
                    before += c.size


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 200_000), st.lists(st.integers(0, 50_000), min_size=1, max_size=4))
def test_default_ordering_never_blocked_parent(parent_len, push_lens):
    conn = Connection(initial_window=BIG, connection_window=BIG)
    parent = conn.open_stream(OK, parent_len)
    pushes = {conn.promise_push(parent, req(f"/{i}"), n) for i, n in enumerate(push_lens)}
    data = [c for c in drain(conn) if c.kind is FrameType.DATA and c.size]
    seen_push = False
    for c in data:
        if c.stream_id in pushes:
            seen_push = True
        else:
            assert not seen_push


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 40_000), st.integers(1, 256)), min_size=1, max_size=6))
def test_work_conservation_default(streams):
    conn = Connection(initial_window=BIG, connection_window=BIG)
    for n, w in streams:
        conn.open_stream(OK, n, priority=(0, w, False))
    while any(n.pending for n in conn.streams.values()):
        assert conn.next_plan(16_384)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 256), min_size=2, max_size=6), st.integers(20, 300))
def test_weight_fairness(weights, rounds):
    conn = Connection(initial_window=BIG, connection_window=BIG)
    ids = [conn.open_stream(OK, 10**8, priority=(0, w, False)) for w in weights]
    sent = dict.fromkeys(ids, 0)
    total_w = sum(weights)
    for _ in range(rounds):
        for c in conn.next_plan(16_384):
            if c.kind is FrameType.DATA:
                sent[c.stream_id] += c.size
    total = sum(sent.values())
    for sid, w in zip(ids, weights):
        assert abs(sent[sid] - total * w / total_w) <= 16_384


def test_wire_frames_decode():
    conn = Connection(Policy.INTERLEAVING)
    parent = conn.open_stream(OK, 40_000, body=b"h" * 40_000)
    css = conn.promise_push(parent, req("/a.css"), 3_000, body=b"c" * 3_000)
    conn.add_interleave_point(parent, 4_096, [css])
    wire = b""
    while True:
        frames = conn.next_frames(16_384)
        if not frames:
            break
        wire += b"".join(encode_frame(f) for f in frames)
    decoded = FrameReader().feed(wire)
    assert [f.frame_type for f in decoded][:2] == [FrameType.PUSH_PROMISE, FrameType.HEADERS]
    body = b"".join(f.payload for f in decoded if f.frame_type == FrameType.DATA)
    assert body == b"h" * 4_096 + b"c" * 3_000 + b"h" * 35_904
