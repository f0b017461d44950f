"""Tag-regular HTML resource discovery.

Recognises ``link``, ``script``, ``img`` and ``source`` tags with quoted or
bare attribute values; comments, ``style`` and script bodies are skipped.
No tree building is attempted. The scanner is incremental: bytes can be fed
as they arrive and only tags whose closing ``>`` has been seen are
reported, so a scan of a prefix is always a subset of a scan of the whole.
"""

from __future__ import annotations

import enum
import html
import re
from dataclasses import dataclass
from urllib.parse import urljoin

from ..records import ResourceType


class Blocking(str, enum.Enum):
    RENDER_BLOCKING_CSS = "render_blocking_css"
    PARSER_BLOCKING_JS = "parser_blocking_js"
    ASYNC = "async"
    PASSIVE = "passive"


@dataclass(frozen=True)
class ResourceRef:
    url: str
    resource_type: ResourceType
    discovery_offset: int  # first byte of the referencing tag
    blocking: Blocking
    above_fold: bool = False
    end_offset: int = 0  # one past the tag's closing '>'
    in_head: bool = False


@dataclass(frozen=True)
class ParserBarrier:
    """A script the parser must execute before moving past ``end``."""

    start: int
    end: int
    url: str | None  # None for inline scripts
    size: int  # bytes to execute (inline source length; external size is taken at run time)


_TAG = re.compile(rb"<(/?)([A-Za-z][A-Za-z0-9:-]*)((?:[^>\"']|\"[^\"]*\"|'[^']*')*)>")
# what a tag that is still arriving can look like: "<", "</", "<!-", or an open tag up to the buffer end
_PARTIAL_TAG = re.compile(
    rb"<(?:!-?|/|/?[A-Za-z][A-Za-z0-9:-]*(?:[^>\"']|\"[^\"]*\"|'[^']*')*(?:\"[^\"]*|'[^']*)?)?\Z"
)
_ATTR = re.compile(rb"""([^\s=/>"']+)(?:\s*=\s*(?:"([^"]*)"|'([^']*)'|([^\s"'>]+)))?""")
_RAW_TEXT = {b"script": re.compile(rb"</script\s*>", re.I), b"style": re.compile(rb"</style\s*>", re.I)}
_JS_TYPES = {"", "text/javascript", "application/javascript", "module", "text/ecmascript", "application/ecmascript"}
_PRELOAD_AS = {
    "style": ResourceType.CSS,
    "script": ResourceType.JS,
    "font": ResourceType.FONT,
    "image": ResourceType.IMAGE,
}


def parse_attrs(raw: bytes) -> dict[str, str]:
    out = {}
    for m in _ATTR.finditer(raw):
        name = m.group(1).decode("latin-1").lower()
        value = m.group(2) if m.group(2) is not None else m.group(3) if m.group(3) is not None else m.group(4)
        out.setdefault(name, html.unescape(value.decode("utf-8", "replace")) if value is not None else "")
    return out


def _fetchable(url: str) -> bool:
    url = url.strip()
    return bool(url) and not url.lower().startswith(("data:", "javascript:", "about:", "blob:", "#"))


class Scanner:
    """Incremental scanner over one HTML document."""

    def __init__(self, base_url: str = "", dedupe: bool = True):
        self.base_url = base_url
        self.dedupe = dedupe
        self.data = bytearray()
        self.pos = 0  # everything before this has been tokenised
        self.refs: list[ResourceRef] = []
        self.barriers: list[ParserBarrier] = []
        self.head_end: int | None = None
        self._seen: set[str] = set()
        self._raw: tuple[bytes, int, str | None] | None = None  # open raw-text element

    def _resolve(self, url: str) -> str:
        return urljoin(self.base_url, url.strip()) if self.base_url else url.strip()

    def _add(self, url: str, rtype: ResourceType, blocking: Blocking, m: re.Match) -> None:
        url = self._resolve(url)
        if url in self._seen and self.dedupe:
            return
        self._seen.add(url)
        self.refs.append(
            ResourceRef(url, rtype, m.start(), blocking, end_offset=m.end(), in_head=self.head_end is None)
        )

    def feed(self, chunk: bytes) -> list[ResourceRef]:
        """Append bytes; return refs newly completed by them."""
        before = len(self.refs)
        self.data += chunk
        self._scan()
        return self.refs[before:]

    def _scan(self) -> None:
        data = self.data
        while True:
            if self._raw is not None:
                name, start, url = self._raw
                close = _RAW_TEXT[name].search(data, self.pos)
                if close is None:
                    return
                if name == b"script":
                    body_len = close.start() - self.pos
                    if url is None:
                        self.barriers.append(ParserBarrier(start, close.end(), None, body_len))
                self._raw = None
                self.pos = close.end()
                continue
            i = data.find(b"<", self.pos)
            if i < 0:
                self.pos = len(data)
                return
            if data.startswith(b"<!--", i):
                j = data.find(b"-->", i + 4)
                if j < 0:
                    self.pos = i
                    return
                self.pos = j + 3
                continue
            m = _TAG.match(data, i)
            if m is None:
                if _PARTIAL_TAG.match(data, i):
                    self.pos = i
                    return
                self.pos = i + 1  # a stray '<'
                continue
            self.pos = m.end()
            self._tag(m)

    def _tag(self, m: re.Match) -> None:
        closing, name = m.group(1), m.group(2).lower()
        if closing:
            if name == b"head" and self.head_end is None:
                self.head_end = m.end()
            return
        attrs = parse_attrs(m.group(3))
        if name == b"body":
            if self.head_end is None:
                self.head_end = m.start()
        elif name == b"link":
            rel = attrs.get("rel", "").lower().split()
            href = attrs.get("href", "")
            if not _fetchable(href):
                return
            if "stylesheet" in rel and "alternate" not in rel:
                self._add(href, ResourceType.CSS, Blocking.RENDER_BLOCKING_CSS, m)
            elif "preload" in rel and attrs.get("as", "").lower() in _PRELOAD_AS:
                self._add(href, _PRELOAD_AS[attrs["as"].lower()], Blocking.PASSIVE, m)
        elif name == b"script":
            src = attrs.get("src")
            stype = attrs.get("type", "").lower()
            if stype not in _JS_TYPES:
                self._raw = (b"script", m.start(), "")  # data block, skip its body
                return
            if src is not None and _fetchable(src):
                deferred = "async" in attrs or "defer" in attrs or stype == "module"
                blocking = Blocking.ASYNC if deferred else Blocking.PARSER_BLOCKING_JS
                self._add(src, ResourceType.JS, blocking, m)
                if not deferred:
                    url = self._resolve(src)
                    self.barriers.append(ParserBarrier(m.start(), m.end(), url, 0))
                self._raw = (b"script", m.start(), url if not deferred else "")
            else:
                self._raw = (b"script", m.start(), None)
        elif name == b"style":
            self._raw = (b"style", m.start(), "")
        elif name in (b"img", b"source"):
            src = attrs.get("src", "")
            if _fetchable(src):
                self._add(src, ResourceType.IMAGE, Blocking.PASSIVE, m)


def scan(html_prefix: bytes, base_url: str = "") -> list[ResourceRef]:
    """All references whose tag is complete within ``html_prefix``."""
    s = Scanner(base_url)
    s.feed(bytes(html_prefix))
    return s.refs


_CSS_URL = re.compile(rb"""url\(\s*(?:"([^"]*)"|'([^']*)'|([^)\s]*))\s*\)""")
_FONT_EXT = (".woff2", ".woff", ".ttf", ".otf", ".eot")


def scan_css(css: bytes, base_url: str = "") -> list[ResourceRef]:
    """Font files referenced from a stylesheet (images are only fetched on use, so ignored)."""
    out = []
    seen = set()
    for m in _CSS_URL.finditer(css):
        raw = next(g for g in m.groups() if g is not None).decode("utf-8", "replace")
        if not _fetchable(raw) or not raw.split("?")[0].split("#")[0].lower().endswith(_FONT_EXT):
            continue
        url = urljoin(base_url, raw) if base_url else raw
        if url not in seen:
            seen.add(url)
            out.append(ResourceRef(url, ResourceType.FONT, m.start(), Blocking.PASSIVE, end_offset=m.end()))
    return out
