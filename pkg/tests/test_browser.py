import pytest

from pushlab.browser import (
    Browser,
    BrowserConfig,
    BytesArrived,
    CancelPush,
    ConnectEnd,
    FetchRequest,
    InternalError,
    Milestone,
    PushPromised,
    StreamCompleted,
    Timer,
    WakeAt,
)

BASE = "https://example.org/"


def page(head="", body=""):
    return f"<html><head>{head}</head><body>{body}</body></html>".encode()


def load(b, url, data, t, complete=True):
    out = b.advance(BytesArrived(t, url, data))
    if complete:
        out += b.advance(StreamCompleted(t, url))
    return out


def requests(actions):
    return [a.url for a in actions if isinstance(a, FetchRequest)]


def milestones(actions):
    return {a.name: a.time for a in actions if isinstance(a, Milestone)}


def test_start_requests_base_with_top_priority():
    b = Browser(BASE)
    (req,) = b.start()
    assert req.url == BASE and (req.level, req.weight) == (4, 256)


def test_html_arrived_head_css_outstanding_blocks_first_paint():
    b = Browser(BASE)
    b.start()
    b.advance(ConnectEnd(100))
    acts = load(b, BASE, page('<link rel="stylesheet" href="/a.css">', "<p>hi</p>"), 150)
    assert requests(acts) == [BASE + "a.css"]
    st = b.state
    assert st.parser_position == len(b.state.received[BASE])
    assert st.dom_content == 150
    assert st.first_visual_change is None and st.onload is None
    acts = load(b, BASE + "a.css", b"p{}", 220)
    assert milestones(acts) == {"first_visual_change": 220, "onload": 220}


def test_parser_halts_at_body_script_while_earlier_css_incomplete():
    html = page('<link rel="stylesheet" href="/a.css">', '<p>x</p><script src="/app.js"></script><img src="/i.png">')
    b = Browser(BASE)
    b.start()
    acts = load(b, BASE, html, 10)
    # the preload scanner still finds everything
    assert requests(acts) == [BASE + "a.css", BASE + "app.js", BASE + "i.png"]
    script_end = html.index(b"</script>")
    assert b.state.parser_position == html.index(b"<script") + len(b'<script src="/app.js">')
    assert b.state.parser_position <= script_end
    load(b, BASE + "app.js", b"1;", 20)
    assert b.state.blocked_on == frozenset({BASE + "a.css"})
    assert b.state.dom_content is None
    load(b, BASE + "a.css", b"", 30)
    assert b.state.dom_content == 30 and b.state.blocked_on is None


def test_pushed_css_already_requested_is_cancelled_without_new_request():
    b = Browser(BASE)
    b.start()
    acts = load(b, BASE, page('<link rel="stylesheet" href="/a.css">'), 10, complete=False)
    assert requests(acts) == [BASE + "a.css"]
    acts = b.advance(PushPromised(11, BASE + "a.css"))
    assert acts == [CancelPush(BASE + "a.css")]


def test_push_before_discovery_suppresses_request():
    b = Browser(BASE)
    b.start()
    b.advance(PushPromised(5, BASE + "a.css"))
    load(b, BASE + "a.css", b"p{}", 6)
    acts = load(b, BASE, page('<link rel="stylesheet" href="/a.css">'), 10)
    assert requests(acts) == []
    assert BASE + "a.css" in b.state.requested and BASE + "a.css" in b.state.complete
    assert b.state.onload == 10


def test_unknown_stream_is_internal_error():
    b = Browser(BASE)
    b.start()
    with pytest.raises(InternalError):
        b.advance(BytesArrived(1, BASE + "nope.js", b"x"))


def test_priorities_css_js_above_images():
    b = Browser(BASE)
    b.start()
    acts = load(b, BASE, page('<link rel="stylesheet" href="/a.css"><script src="/s.js"></script><script async src="/as.js"></script>', '<img src="/i.png">'), 1)
    prio = {a.url.rsplit("/", 1)[1]: a.level for a in acts if isinstance(a, FetchRequest)}
    assert prio["a.css"] > prio["i.png"] and prio["s.js"] > prio["i.png"] and prio["as.js"] > prio["i.png"]


def test_css_fonts_discovered_and_awaited_by_onload():
    b = Browser(BASE)
    b.start()
    load(b, BASE, page('<link rel="stylesheet" href="/a.css">'), 1)
    acts = load(b, BASE + "a.css", b"@font-face{src:url(/f.woff2)}", 2)
    assert requests(acts) == [BASE + "f.woff2"]
    assert b.state.first_visual_change == 2 and b.state.onload is None
    acts = load(b, BASE + "f.woff2", b"\0" * 10, 3)
    assert milestones(acts) == {"onload": 3}


def test_async_script_does_not_hold_onload():
    b = Browser(BASE)
    b.start()
    acts = load(b, BASE, page('<script async src="/a.js"></script>'), 4)
    assert requests(acts) == [BASE + "a.js"]
    assert b.state.onload == 4


def test_js_execution_cost_uses_timers():
    b = Browser(BASE, BrowserConfig(js_ms_per_byte=0.5))
    b.start()
    load(b, BASE, page('<script src="/s.js"></script>', "<p>x</p>"), 0)
    acts = load(b, BASE + "s.js", b"x" * 40, 10)
    assert WakeAt(30.0) in acts
    assert b.state.dom_content is None
    acts = b.advance(Timer(30.0))
    assert milestones(acts) == {"first_visual_change": 30.0, "dom_content": 30.0, "onload": 30.0}


def test_inline_script_waits_for_preceding_css():
    b = Browser(BASE)
    b.start()
    load(b, BASE, page('<link rel="stylesheet" href="/a.css"><script>var a=1;</script>'), 0)
    assert b.state.blocked_on == frozenset({BASE + "a.css"})
    load(b, BASE + "a.css", b"", 7)
    assert b.state.dom_content == 7


def test_incremental_html_first_paint_needs_a_byte_past_head():
    html = page('<link rel="stylesheet" href="/a.css">', "<p>" + "x" * 1000 + "</p>")
    b = Browser(BASE)
    b.start()
    head_end = html.index(b"</head>") + len(b"</head>")
    load(b, BASE, html[:head_end], 1, complete=False)
    load(b, BASE + "a.css", b"", 2)
    assert b.state.first_visual_change is None
    b.advance(BytesArrived(3, BASE, html[head_end:head_end + 1]))
    assert b.state.first_visual_change is None  # half a tag is not parsed
    b.advance(BytesArrived(4, BASE, html[head_end + 1:head_end + len("<body><p>x")]))
    assert b.state.first_visual_change == 4


def test_state_invariants_over_a_load():
    html = page('<link rel="stylesheet" href="/a.css"><script src="/b.js"></script>', '<img src="/c.png"><img src="/d.png">')
    b = Browser(BASE)
    b.start()
    b.advance(ConnectEnd(0))
    t = 1
    for i in range(0, len(html), 17):
        b.advance(BytesArrived(t, BASE, html[i:i + 17]))
        t += 1
        st = b.state
        assert st.requested <= set(st.discovered) | {BASE}
        assert st.complete <= st.requested
        assert st.parser_position <= len(st.received[BASE])
    b.advance(StreamCompleted(t, BASE))
    for name in ("a.css", "b.js", "c.png", "d.png"):
        t += 5
        load(b, BASE + name, b"x", t)
    st = b.state
    assert st.connect_end <= st.first_visual_change <= st.onload
    assert st.dom_content <= st.onload


def test_config_round_trip():
    cfg = BrowserConfig(js_ms_per_byte=0.25, dependency_chain=False)
    cfg.priorities["image"] = (0, 32)
    assert BrowserConfig.from_dict(cfg.to_dict()) == cfg
