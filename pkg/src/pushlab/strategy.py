"""Push strategies: which resources to push, in what order, at which parent offset.

Push orders are derived from traced page loads. Each trace is turned into
the browser's priority tree and walked depth first (heavier children first,
request order on equal weight); the per-trace positions are then combined by
taking each resource's median position.
"""

from __future__ import annotations

import enum
import json
import re
import statistics
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

from .browser.scanner import Blocking, Scanner
from .records import Archive, RecordedExchange, ResourceType, make_exchange, pushable_set


class StrategyError(Exception):
    pass


class EmptyInput(StrategyError, ValueError):
    pass


class InvalidParam(StrategyError, ValueError):
    pass


class MissingManifest(StrategyError):
    pass


class RewriteError(StrategyError):
    pass


class RewriteWarning(UserWarning):
    pass


class StrategyKind(str, enum.Enum):
    NO_PUSH = "no_push"
    NO_PUSH_OPTIMIZED = "no_push_optimized"
    PUSH_ALL = "push_all"
    PUSH_ALL_OPTIMIZED = "push_all_optimized"
    PUSH_FIRST_N = "push_first_n"
    PUSH_BY_TYPE = "push_by_type"
    PUSH_CRITICAL = "push_critical"
    PUSH_CRITICAL_OPTIMIZED = "push_critical_optimized"
    CUSTOM = "custom"

    @property
    def pushes(self) -> bool:
        return self not in (StrategyKind.NO_PUSH, StrategyKind.NO_PUSH_OPTIMIZED)

    @property
    def optimized(self) -> bool:
        return self.value.endswith("_optimized")


@dataclass(frozen=True)
class PushDirective:
    resource_url: str
    rank: int
    interleave_offset: int | None = None

    def to_dict(self) -> dict:
        d = {"url": self.resource_url, "rank": self.rank}
        if self.interleave_offset is not None:
            d["interleave_offset"] = self.interleave_offset
        return d

    @classmethod
    def from_dict(cls, d: dict) -> PushDirective:
        return cls(d["url"], int(d["rank"]), d.get("interleave_offset"))


@dataclass(frozen=True)
class CriticalCssRewrite:
    critical_css_url: str
    demoted_css_urls: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "demoted_css_urls", tuple(self.demoted_css_urls))
        if self.critical_css_url in self.demoted_css_urls:
            raise InvalidParam("the critical CSS cannot also be demoted")

    def to_dict(self) -> dict:
        return {"critical_css_url": self.critical_css_url, "demoted_css_urls": list(self.demoted_css_urls)}


@dataclass(frozen=True)
class PushStrategy:
    kind: StrategyKind
    params: dict = field(default_factory=dict)
    directives: tuple[PushDirective, ...] = ()
    html_rewrite: CriticalCssRewrite | None = None
    manifest_path: str | None = None

    def urls(self) -> list[str]:
        return [d.resource_url for d in self.directives]

    def to_dict(self) -> dict:
        params = dict(self.params)
        if "types" in params:
            params["types"] = sorted(ResourceType(t).value for t in params["types"])
        d = {"kind": self.kind.value, "params": params, "directives": [x.to_dict() for x in self.directives]}
        if self.html_rewrite is not None:
            d["rewrite"] = self.html_rewrite.to_dict()
        if self.manifest_path is not None:
            d["manifest_path"] = self.manifest_path
        return d

    @classmethod
    def from_dict(cls, d: dict) -> PushStrategy:
        rw = d.get("rewrite")
        params = dict(d.get("params", {}))
        if "types" in params:
            params["types"] = frozenset(ResourceType(t) for t in params["types"])
        return cls(
            StrategyKind(d["kind"]),
            params,
            tuple(PushDirective.from_dict(x) for x in d.get("directives", [])),
            CriticalCssRewrite(rw["critical_css_url"], rw.get("demoted_css_urls", ())) if rw else None,
            d.get("manifest_path"),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> PushStrategy:
        return cls.from_dict(json.loads(Path(path).read_text()))


# traces and push order


@dataclass(frozen=True)
class TraceEntry:
    url: str
    parent: str | None  # None = tree root
    weight: int
    request_time: float


@dataclass(frozen=True)
class RunTrace:
    entries: tuple[TraceEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if not self.entries:
            raise EmptyInput("a trace needs at least the base document")

    @property
    def base(self) -> str:
        return self.entries[0].url

    def to_list(self) -> list:
        return [[e.url, e.parent, e.weight, e.request_time] for e in self.entries]

    @classmethod
    def from_list(cls, rows) -> RunTrace:
        return cls(tuple(TraceEntry(u, p, int(w), float(t)) for u, p, w, t in rows))


def traversal_order(trace: RunTrace) -> list[str]:
    """Depth-first walk of the trace's priority tree, heavier children first."""
    children: dict[str | None, list[TraceEntry]] = {None: []}
    seen: set[str] = set()
    for e in trace.entries:
        if e.url in seen:
            continue
        seen.add(e.url)
        parent = e.parent if e.parent in seen and e.parent != e.url else None
        children.setdefault(parent, []).append(e)
        children.setdefault(e.url, [])
    out: list[str] = []
    stack = [None]
    # iterative preorder; push children reversed so the first sorted child pops first
    while stack:
        node = stack.pop()
        if node is not None:
            out.append(node)
        kids = sorted(children[node], key=lambda e: -e.weight)  # stable on equal weight
        stack.extend(k.url for k in reversed(kids))
    return out


def compute_push_order(traces: list[RunTrace]) -> list[str]:
    if not traces:
        raise EmptyInput("compute_push_order needs at least one trace")
    base = traces[0].base
    if any(t.base != base for t in traces):
        raise InvalidParam("traces do not share a base document")
    ranks: dict[str, list[int]] = {}
    times: dict[str, list[float]] = {}
    for trace in traces:
        order = [u for u in traversal_order(trace) if u != base]
        for pos, url in enumerate(order, start=1):
            ranks.setdefault(url, []).append(pos)
        for e in trace.entries:
            if e.url != base:
                times.setdefault(e.url, []).append(e.request_time)
    key = {u: (statistics.median(r), statistics.fmean(times[u]), u) for u, r in ranks.items()}
    return sorted(ranks, key=key.__getitem__)


# critical-resource manifest


@dataclass(frozen=True)
class CriticalManifest:
    resources: tuple[tuple[str, int | None], ...]
    above_fold: tuple[str, ...] = ()
    critical_css: CriticalCssRewrite | None = None
    assets: dict = field(default_factory=dict)  # url -> local file holding the asset body

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | Path | None = None) -> CriticalManifest:
        resources = tuple((r["url"], r.get("offset")) for r in d.get("resources", []))
        above = tuple(d.get("above_fold", [u for u, _ in resources]))
        css = d.get("critical_css")
        rewrite = CriticalCssRewrite(css["url"], css.get("demoted", ())) if css else None
        assets = {}
        for url, p in d.get("assets", {}).items():
            p = Path(p)
            assets[url] = str(p if p.is_absolute() or base_dir is None else Path(base_dir) / p)
        return cls(resources, above, rewrite, assets)

    def to_dict(self) -> dict:
        d: dict = {"resources": [{"url": u, **({"offset": o} if o is not None else {})} for u, o in self.resources]}
        d["above_fold"] = list(self.above_fold)
        if self.critical_css is not None:
            d["critical_css"] = {"url": self.critical_css.critical_css_url, "demoted": list(self.critical_css.demoted_css_urls)}
        if self.assets:
            d["assets"] = dict(self.assets)
        return d

    @classmethod
    def load(cls, path) -> CriticalManifest:
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), path.parent)

    def directives(self, start_rank: int = 1) -> list[PushDirective]:
        """Manifest entries in order; an entry without an offset shares the previous entry's."""
        out = []
        offset = None
        for i, (url, off) in enumerate(self.resources):
            if off is not None:
                offset = int(off)
            out.append(PushDirective(url, start_rank + i, offset))
        return out


def _urls(pushable) -> set[str]:
    return {p.url if isinstance(p, RecordedExchange) else p for p in pushable}


def generate(
    kind: StrategyKind | str,
    params: dict | None,
    archive: Archive,
    pushable,
    order: list[str],
    manifest: CriticalManifest | None = None,
) -> PushStrategy:
    kind = StrategyKind(kind)
    params = dict(params or {})
    allowed = _urls(pushable)
    stray = [u for u in order if u not in allowed]
    if stray:
        raise InvalidParam(f"order holds unpushable URLs: {stray}")

    def numbered(urls, offset=None):
        return tuple(PushDirective(u, i, offset) for i, u in enumerate(urls, start=1))

    rewrite = None
    if kind.optimized or kind in (StrategyKind.PUSH_CRITICAL,):
        if manifest is None:
            raise MissingManifest(f"{kind.value} needs a critical-resource manifest")
        if kind.optimized:
            if manifest.critical_css is None:
                raise MissingManifest(f"{kind.value} needs a critical CSS entry in the manifest")
            rewrite = manifest.critical_css

    if kind in (StrategyKind.NO_PUSH, StrategyKind.NO_PUSH_OPTIMIZED):
        directives: tuple[PushDirective, ...] = ()
    elif kind is StrategyKind.PUSH_ALL:
        directives = numbered(order)
    elif kind is StrategyKind.PUSH_FIRST_N:
        n = params.get("n")
        if not isinstance(n, int) or isinstance(n, bool) or n <= 0:
            raise InvalidParam(f"push_first_n needs a positive integer n, got {n!r}")
        directives = numbered(order[:n])
    elif kind is StrategyKind.PUSH_BY_TYPE:
        types = params.get("types")
        if not types:
            raise InvalidParam("push_by_type needs a non-empty types set")
        types = frozenset(ResourceType(t) for t in types)
        params["types"] = types
        keep = []
        for u in order:
            ex = archive.find(u)
            if ex is not None and ex.resource_type in types:
                keep.append(u)
        directives = numbered(keep)
    elif kind in (StrategyKind.PUSH_CRITICAL, StrategyKind.PUSH_CRITICAL_OPTIMIZED):
        directives = tuple(manifest.directives())
    elif kind is StrategyKind.PUSH_ALL_OPTIMIZED:
        head = manifest.directives()
        chosen = {d.resource_url for d in head}
        rest = [u for u in order if u not in chosen]
        directives = tuple(head) + tuple(PushDirective(u, len(head) + i) for i, u in enumerate(rest, start=1))
    else:  # custom
        raw = params.get("directives")
        if raw is None:
            raise InvalidParam("custom strategies list their directives in params['directives']")
        directives = tuple(d if isinstance(d, PushDirective) else PushDirective.from_dict(d) for d in raw)
        params = {k: v for k, v in params.items() if k != "directives"}
    return PushStrategy(kind, params, directives, rewrite)


# critical CSS rewrite

_HEAD_OPEN = re.compile(rb"<head(?:\s[^>]*)?>", re.I)
_HEAD_CLOSE = re.compile(rb"</head\s*>", re.I)
_BODY_CLOSE = re.compile(rb"</body\s*>", re.I)
_HEAD_RESOURCE = re.compile(rb"<(?:link|script|style)\b", re.I)


def _stylesheets(html: bytes, base_url: str) -> list[tuple[str, int, int]]:
    s = Scanner(base_url, dedupe=False)
    s.feed(html)
    return [
        (r.url, r.discovery_offset, r.end_offset)
        for r in s.refs
        if r.resource_type is ResourceType.CSS and r.blocking is Blocking.RENDER_BLOCKING_CSS
    ]


def stylesheet_link(url: str) -> bytes:
    return b'<link rel="stylesheet" href="' + url.replace("&", "&amp;").replace('"', "&quot;").encode() + b'">'


def apply_rewrite(html_body: bytes, rewrite: CriticalCssRewrite, base_url: str = "") -> bytes:
    """Reference the critical CSS first thing in head and move demoted stylesheets to the end of body.

    No whitespace is added, so applying the same rewrite again is the identity.
    """
    html = bytes(html_body)
    head = _HEAD_OPEN.search(html)
    if head is None:
        raise RewriteError("document has no <head> element")
    links = _stylesheets(html, base_url)
    resolve = Scanner(base_url)._resolve
    critical = resolve(rewrite.critical_css_url)
    demoted = [resolve(u) for u in rewrite.demoted_css_urls]
    spans: dict[str, list[tuple[int, int]]] = {}
    for url, a, b in links:
        spans.setdefault(url, []).append((a, b))

    moved = []
    for raw, url in dict.fromkeys(zip(rewrite.demoted_css_urls, demoted)):
        if url not in spans:
            warnings.warn(f"demoted stylesheet {raw} is not referenced by the document", RewriteWarning, stacklevel=2)
            continue
        moved += spans[url]
    moved_tags = [html[a:b] for a, b in moved]
    # cut demoted links, highest offset first so earlier spans stay valid
    for a, b in sorted(moved, reverse=True):
        html = html[:a] + html[b:]

    if critical not in spans:
        head = _HEAD_OPEN.search(html)
        close = _HEAD_CLOSE.search(html, head.end())
        limit = close.start() if close else len(html)
        first = _HEAD_RESOURCE.search(html, head.end(), limit)
        at = first.start() if first else limit
        html = html[:at] + stylesheet_link(rewrite.critical_css_url) + html[at:]

    if moved_tags:
        body_close = None
        for body_close in _BODY_CLOSE.finditer(html):
            pass
        at = body_close.start() if body_close else len(html)
        html = html[:at] + b"".join(moved_tags) + html[at:]
    return html


def rewrite_archive(archive: Archive, rewrite: CriticalCssRewrite) -> Archive:
    """Archive whose base document is rewritten; content-length follows the new body."""
    base = archive.base
    body = apply_rewrite(base.body, rewrite, archive.base_url)
    headers = tuple((k, str(len(body)) if k == "content-length" else v) for k, v in base.response.headers)
    new = replace(base, response=replace(base.response, headers=headers, body=body))
    return archive.replace_exchange(base, new)


def install_assets(archive: Archive, manifest: CriticalManifest) -> Archive:
    """Add the manifest's local assets (for example a computed critical CSS) to the base origin."""
    if not manifest.assets:
        return archive
    ip = archive.base.origin_ip
    added = []
    for url, path in sorted(manifest.assets.items()):
        if archive.find(url) is not None:
            continue
        ctype = "text/css" if url.split("?")[0].endswith(".css") else "application/octet-stream"
        added.append(make_exchange(url, Path(path).read_bytes(), ctype, ip=ip))
    return replace(archive, exchanges=archive.exchanges + tuple(added))


def served_archive(archive: Archive, strategy: PushStrategy) -> Archive:
    return rewrite_archive(archive, strategy.html_rewrite) if strategy.html_rewrite else archive


# validation


@dataclass(frozen=True)
class Violation:
    kind: str
    url: str
    message: str


def validate(strategy: PushStrategy, archive: Archive) -> list[Violation]:
    found: list[Violation] = []
    base_authority = archive.base.authority
    allowed = _urls(pushable_set(archive, base_authority))
    if not strategy.kind.pushes and strategy.directives:
        found.append(Violation("no_push", "", f"{strategy.kind.value} must not carry directives"))
    served = archive
    if strategy.html_rewrite is not None:
        if archive.find(strategy.html_rewrite.critical_css_url) is None:
            found.append(
                Violation("missing_asset", strategy.html_rewrite.critical_css_url, "critical CSS is not in the archive")
            )
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RewriteWarning)
                served = rewrite_archive(archive, strategy.html_rewrite)
        except RewriteError as exc:
            found.append(Violation("rewrite", archive.base_url, str(exc)))
    parent_len = len(served.base.body)
    ranks: dict[int, str] = {}
    for d in strategy.directives:
        if d.resource_url not in allowed:
            found.append(Violation("unpushable", d.resource_url, f"{d.resource_url} is not pushable from {base_authority}"))
        if d.interleave_offset is not None and not 0 <= d.interleave_offset <= parent_len:
            found.append(
                Violation(
                    "offset",
                    d.resource_url,
                    f"offset {d.interleave_offset} outside the {parent_len} byte parent body",
                )
            )
        if d.rank in ranks:
            found.append(Violation("duplicate_rank", d.resource_url, f"rank {d.rank} already used by {ranks[d.rank]}"))
        else:
            ranks[d.rank] = d.resource_url
    return found
