"""Recorded request/response archives and the multi-origin deployment they imply.

An :class:`Archive` is immutable. Exchanges are grouped by server IP into
:class:`OriginGroup` objects; every hostname resolving to the same IP is
covered by that server's certificate, so a browser coalesces them onto one
connection and the server may push any of them.

On-disk format is JSON lines: a manifest line followed by one line per
exchange (see ``docs/archive-format.md``).
"""

from __future__ import annotations

import base64
import enum
import json
import re
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from urllib.parse import urlsplit

ARCHIVE_VERSION = 1

# headers that make no sense once the body is stored decoded, or are HTTP/1 only
_DROP_RESPONSE_HEADERS = {
    "connection",
    "keep-alive",
    "transfer-encoding",
    "upgrade",
    "proxy-connection",
    "content-encoding",
}


class RecordError(Exception):
    pass


class NotFound(RecordError, KeyError):
    pass


class ArchiveImportError(RecordError):
    pass


class RelocateError(RecordError):
    pass


class ArchiveImportWarning(UserWarning):
    pass


class ResourceType(str, enum.Enum):
    HTML = "html"
    CSS = "css"
    JS = "js"
    IMAGE = "image"
    FONT = "font"
    OTHER = "other"


def resource_type_for(content_type: str | None) -> ResourceType:
    ct = (content_type or "").split(";")[0].strip().lower()
    if ct.startswith("text/html") or ct == "application/xhtml+xml":
        return ResourceType.HTML
    if ct.startswith("text/css"):
        return ResourceType.CSS
    if "javascript" in ct or ct == "application/ecmascript":
        return ResourceType.JS
    if ct.startswith("image/"):
        return ResourceType.IMAGE
    if ct.startswith("font/") or "opentype" in ct or "font-woff" in ct:
        return ResourceType.FONT
    return ResourceType.OTHER


Headers = tuple[tuple[str, str], ...]


def _header(headers: Headers, name: str) -> str | None:
    for k, v in headers:
        if k == name:
            return v
    return None


@dataclass(frozen=True)
class Request:
    method: str
    scheme: str
    authority: str
    path: str  # including the query string
    headers: Headers = ()

    @property
    def url(self) -> str:
        return f"{self.scheme}://{self.authority}{self.path}"

    def header_list(self) -> list[tuple[str, str]]:
        pseudo = [(":method", self.method), (":scheme", self.scheme), (":authority", self.authority), (":path", self.path)]
        return pseudo + list(self.headers)

    @classmethod
    def get(cls, url: str, headers: Headers = ()) -> Request:
        parts = urlsplit(url)
        path = parts.path or "/"
        if parts.query:
            path += "?" + parts.query
        return cls("GET", parts.scheme or "https", parts.netloc, path, headers)


@dataclass(frozen=True)
class Response:
    status: int
    headers: Headers = ()
    body: bytes = b""

    def header_list(self) -> list[tuple[str, str]]:
        return [(":status", str(self.status))] + list(self.headers)


@dataclass(frozen=True)
class RecordedExchange:
    request: Request
    response: Response
    origin_ip: str

    def __post_init__(self):
        if not self.request.authority:
            raise RecordError("exchange without authority")
        length = _header(self.response.headers, "content-length")
        if length is not None and int(length) != len(self.response.body):
            raise RecordError(f"{self.url}: content-length {length} but body has {len(self.response.body)} bytes")

    @property
    def url(self) -> str:
        return self.request.url

    @property
    def authority(self) -> str:
        return self.request.authority

    @property
    def content_type(self) -> str | None:
        return _header(self.response.headers, "content-type")

    @property
    def resource_type(self) -> ResourceType:
        return resource_type_for(self.content_type)

    @property
    def body(self) -> bytes:
        return self.response.body


@dataclass(frozen=True)
class OriginGroup:
    ip: str
    authorities: frozenset[str]
    exchanges: tuple[RecordedExchange, ...]


@dataclass(frozen=True)
class Archive:
    exchanges: tuple[RecordedExchange, ...]
    base_url: str
    # hostnames that resolve to an IP without appearing in any exchange
    extra_hosts: tuple[tuple[str, str], ...] = field(default=())

    @cached_property
    def groups(self) -> dict[str, OriginGroup]:
        hosts: dict[str, set[str]] = {}
        members: dict[str, list[RecordedExchange]] = {}
        for host, ip in self.extra_hosts:
            hosts.setdefault(ip, set()).add(host)
            members.setdefault(ip, [])
        for ex in self.exchanges:
            hosts.setdefault(ex.origin_ip, set()).add(ex.authority)
            members.setdefault(ex.origin_ip, []).append(ex)
        return {ip: OriginGroup(ip, frozenset(hosts[ip]), tuple(members[ip])) for ip in sorted(hosts)}

    @cached_property
    def _by_authority(self) -> dict[str, OriginGroup]:
        out = {}
        for group in self.groups.values():
            for host in group.authorities:
                out[host] = group
        return out

    @cached_property
    def _by_url(self) -> dict[tuple[str, str], list[RecordedExchange]]:
        out: dict[tuple[str, str], list[RecordedExchange]] = {}
        for ex in self.exchanges:
            base = ex.request.path.split("?", 1)[0]
            out.setdefault((ex.authority, base), []).append(ex)
        return out

    def group_of(self, authority: str) -> OriginGroup:
        try:
            return self._by_authority[authority]
        except KeyError:
            raise NotFound(f"no origin group serves {authority}") from None

    def ip_of(self, authority: str) -> str:
        return self.group_of(authority).ip

    @property
    def base(self) -> RecordedExchange:
        return match_request(self, self.base_url)

    def find(self, url: str) -> RecordedExchange | None:
        for ex in self.exchanges:
            if ex.url == url:
                return ex
        return None

    def replace_exchange(self, old: RecordedExchange, new: RecordedExchange) -> Archive:
        return replace(self, exchanges=tuple(new if ex is old else ex for ex in self.exchanges))

    def __len__(self) -> int:
        return len(self.exchanges)


def make_exchange(
    url: str,
    body: bytes | str = b"",
    content_type: str = "text/html",
    ip: str = "10.0.0.1",
    status: int = 200,
    extra_headers: Headers = (),
) -> RecordedExchange:
    """Build a GET exchange with consistent content-type and content-length."""
    if isinstance(body, str):
        body = body.encode()
    headers = (("content-type", content_type), ("content-length", str(len(body)))) + tuple(extra_headers)
    return RecordedExchange(Request.get(url), Response(status, headers, body), ip)


# matching


def _common_prefix(a: str, b: str) -> int:
    n = 0
    for x, y in zip(a, b):
        if x != y:
            break
        n += 1
    return n


def match_request(archive: Archive, request: Request | str) -> RecordedExchange:
    """Find the recorded answer for ``request`` (a Request or an absolute URL).

    Exact (authority, path-with-query) wins; otherwise the candidate with the
    same authority and path whose query shares the longest prefix with the
    requested one, earliest recording first on ties.
    """
    if isinstance(request, str):
        request = Request.get(request)
    path, _, query = request.path.partition("?")
    candidates = archive._by_url.get((request.authority, path))
    if not candidates:
        raise NotFound(f"no recording for {request.url}")
    for ex in candidates:
        if ex.request.path == request.path:
            return ex
    best = None
    best_len = -1
    for ex in candidates:
        n = _common_prefix(ex.request.path.partition("?")[2], query)
        if n > best_len:
            best, best_len = ex, n
    return best


def pushable_set(archive: Archive, entry_authority: str) -> frozenset[RecordedExchange]:
    """Exchanges the server for ``entry_authority`` may push: its origin group minus the base document."""
    group = archive.group_of(entry_authority)
    return frozenset(ex for ex in group.exchanges if ex.url != archive.base_url)


# HAR import


def _strip_ip(ip: str | None) -> str | None:
    if not ip:
        return None
    return ip.strip().strip("[]") or None


def _har_headers(items, *, drop=()) -> Headers:
    out = []
    for h in items or ():
        name = h["name"].lower()
        if name.startswith(":") or name in drop:
            continue
        out.append((name, h["value"]))
    return tuple(out)


def _har_body(content: dict) -> bytes | None:
    text = content.get("text")
    if text is None:
        return None
    if content.get("encoding") == "base64":
        return base64.b64decode(text)
    return text.encode("utf-8", "surrogateescape")


def import_har(har: dict | str | Path, ip_map: dict[str, str] | None = None) -> Archive:
    """Build an archive from a HAR 1.2 document (dict, JSON text or path).

    ``ip_map`` maps hostnames to server IPs and takes precedence over the
    ``serverIPAddress`` recorded in the HAR. A hostname keeps the first IP it
    was seen with, mirroring a browser's DNS cache.
    """
    if isinstance(har, Path) or (isinstance(har, str) and not har.lstrip().startswith("{")):
        har = json.loads(Path(har).read_text())
    elif isinstance(har, str):
        har = json.loads(har)
    ip_map = dict(ip_map or {})
    entries = har.get("log", {}).get("entries", [])
    host_ip: dict[str, str] = {}
    exchanges = []
    for entry in entries:
        req = entry["request"]
        resp = entry["response"]
        base = Request.get(req["url"])
        host = urlsplit(req["url"]).hostname or base.authority
        ip = host_ip.get(base.authority) or ip_map.get(base.authority) or ip_map.get(host) or _strip_ip(entry.get("serverIPAddress"))
        if ip is None:
            raise ArchiveImportError(f"no server IP for {req['url']} (pass an ip map)")
        host_ip.setdefault(base.authority, ip)
        status = int(resp.get("status", 200))
        body = _har_body(resp.get("content", {}))
        if body is None:
            if status not in (204, 304):
                warnings.warn(f"{req['url']}: response body missing, replaying empty body", ArchiveImportWarning, stacklevel=2)
            body = b""
        headers = [h for h in _har_headers(resp.get("headers"), drop=_DROP_RESPONSE_HEADERS) if h[0] != "content-length"]
        if not any(k == "content-type" for k, _ in headers) and resp.get("content", {}).get("mimeType"):
            headers.insert(0, ("content-type", resp["content"]["mimeType"]))
        headers.append(("content-length", str(len(body))))
        request = replace(base, method=req.get("method", "GET"), headers=_har_headers(req.get("headers"), drop={"host"}))
        exchanges.append(RecordedExchange(request, Response(status, tuple(headers), body), ip))
    if not exchanges:
        raise ArchiveImportError("HAR has no entries")
    base_url = next(
        (ex.url for ex in exchanges if ex.resource_type is ResourceType.HTML and ex.response.status == 200),
        exchanges[0].url,
    )
    extra = tuple(sorted((h, ip) for h, ip in ip_map.items() if h not in host_ip))
    return Archive(tuple(exchanges), base_url, extra)


# persistence


def _exchange_record(ex: RecordedExchange) -> dict:
    return {
        "type": "exchange",
        "origin_ip": ex.origin_ip,
        "request": {
            "method": ex.request.method,
            "scheme": ex.request.scheme,
            "authority": ex.request.authority,
            "path": ex.request.path,
            "headers": [list(h) for h in ex.request.headers],
        },
        "response": {
            "status": ex.response.status,
            "headers": [list(h) for h in ex.response.headers],
            "body": base64.b64encode(ex.response.body).decode("ascii"),
        },
    }


def dumps_archive(archive: Archive) -> str:
    origins = {ip: sorted(g.authorities) for ip, g in archive.groups.items()}
    lines = [
        json.dumps(
            {"type": "manifest", "version": ARCHIVE_VERSION, "base_url": archive.base_url, "origins": origins},
            sort_keys=True,
        )
    ]
    lines += [json.dumps(_exchange_record(ex), sort_keys=True) for ex in archive.exchanges]
    return "\n".join(lines) + "\n"


def loads_archive(text: str) -> Archive:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise RecordError("empty archive")
    manifest = json.loads(lines[0])
    if manifest.get("type") != "manifest" or manifest.get("version") != ARCHIVE_VERSION:
        raise RecordError("archive must start with a version 1 manifest line")
    exchanges = []
    for ln in lines[1:]:
        rec = json.loads(ln)
        rq, rs = rec["request"], rec["response"]
        exchanges.append(
            RecordedExchange(
                Request(rq["method"], rq["scheme"], rq["authority"], rq["path"], tuple(map(tuple, rq["headers"]))),
                Response(rs["status"], tuple(map(tuple, rs["headers"])), base64.b64decode(rs["body"])),
                rec["origin_ip"],
            )
        )
    seen = {ex.authority for ex in exchanges}
    extra = tuple(
        sorted((host, ip) for ip, hosts in manifest.get("origins", {}).items() for host in hosts if host not in seen)
    )
    return Archive(tuple(exchanges), manifest["base_url"], extra)


def save_archive(archive: Archive, path: str | Path) -> None:
    Path(path).write_text(dumps_archive(archive))


def load_archive(path: str | Path) -> Archive:
    return loads_archive(Path(path).read_text())


# relocation


def _with_header(headers: Headers, name: str, value: str) -> Headers:
    return tuple((k, value if k == name else v) for k, v in headers)


def rewrite_references(body: bytes, hosts) -> bytes:
    """Turn absolute references to any of ``hosts`` into root-relative ``/host/...`` paths."""
    hosts = sorted(hosts, key=len, reverse=True)
    if not hosts:
        return body
    alt = b"|".join(re.escape(h.encode()) for h in hosts)
    pattern = re.compile(rb"(?:https?:)?//(" + alt + rb")(?=[/?#\"'\s<>)]|$)([/]?)")

    def sub(m):
        return b"/" + m.group(1) + b"/"

    return pattern.sub(sub, body)


def relocate(archive: Archive, target_authority: str) -> Archive:
    """Rehost every exchange outside ``target_authority``'s group on that authority.

    Foreign exchanges get the path ``/<original authority><original path>``
    and absolute references to them inside HTML bodies are rewritten to
    match. Exchanges already in the target group are left alone.
    """
    target = archive.group_of(target_authority)
    foreign = {ex.authority for ex in archive.exchanges if ex.origin_ip != target.ip}
    taken: dict[tuple[str, str], str] = {}
    out = []
    for ex in archive.exchanges:
        request = ex.request
        if ex.origin_ip != target.ip:
            request = replace(
                request,
                authority=target_authority,
                path=f"/{ex.authority}{request.path}",
                headers=_with_header(request.headers, "host", target_authority),
            )
        key = (request.authority, request.path)
        if key in taken and taken[key] != ex.url:
            raise RelocateError(f"relocating {ex.url} collides with {taken[key]} at {request.url}")
        taken[key] = ex.url
        response = ex.response
        if ex.resource_type is ResourceType.HTML and foreign:
            body = rewrite_references(response.body, foreign)
            if body != response.body:
                response = replace(response, body=body, headers=_with_header(response.headers, "content-length", str(len(body))))
        out.append(RecordedExchange(request, response, target.ip))
    base_url = archive.base_url
    base = Request.get(base_url)
    if base.authority in foreign:
        base_url = f"{base.scheme}://{target_authority}/{base.authority}{base.path}"
    extra = tuple((h, ip) for h, ip in archive.extra_hosts if ip == target.ip)
    return Archive(tuple(out), base_url, extra)
