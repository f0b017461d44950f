"""Small generated sites for experiments and tests."""

from __future__ import annotations

import random

from .records import Archive, make_exchange
from .strategy import CriticalManifest

BASE = "https://synthetic.test/"


def filler(n: int, seed: int = 0) -> str:
    """``n`` bytes of plain paragraph markup."""
    rng = random.Random(seed)
    words = ["lorem", "ipsum", "dolor", "sit", "amet", "consectetur", "adipiscing", "elit", "sed", "do"]
    parts: list[str] = []
    size = 0
    while size < n:
        p = "<p>" + " ".join(rng.choice(words) for _ in range(12)) + "</p>\n"
        parts.append(p)
        size += len(p)
    return "".join(parts)[:n]


def page(head: str, body: str) -> bytes:
    return f"<!DOCTYPE html><html><head><meta charset=\"utf-8\"><title>synthetic</title>{head}</head><body>{body}</body></html>".encode()


def single_css_page(body_bytes: int, css_bytes: int = 2_000, base: str = BASE) -> tuple[Archive, CriticalManifest]:
    """One head stylesheet followed by a plain body of roughly ``body_bytes``.

    The manifest pushes the stylesheet right after the head, so an
    interleaving server can deliver it before the rest of the document.
    """
    html = page('<link rel="stylesheet" href="/style.css">', filler(body_bytes))
    css = ("body{margin:0}" * (css_bytes // 14 + 1))[:css_bytes]
    archive = Archive((make_exchange(base, html), make_exchange(base + "style.css", css, "text/css")), base)
    offset = html.index(b"</head>") + len(b"</head>")
    manifest = CriticalManifest(((base + "style.css", offset),), above_fold=(base + "style.css",))
    return archive, manifest


def critical_path_page(
    n_images: int = 6,
    image_bytes: int = 40_000,
    css_bytes: int = 20_000,
    js_bytes: int = 30_000,
    body_bytes: int = 20_000,
    base: str = BASE,
) -> tuple[Archive, CriticalManifest]:
    """Head CSS and a blocking head script gate the first paint; images sit below the fold."""
    imgs = "".join(f'<img src="/img/{i}.jpg" width="600" height="400">' + filler(400, i) for i in range(n_images))
    html = page('<link rel="stylesheet" href="/site.css"><script src="/app.js"></script>', filler(body_bytes) + imgs)
    exs = [
        make_exchange(base, html),
        make_exchange(base + "site.css", b"a{}" * (css_bytes // 3), "text/css"),
        make_exchange(base + "app.js", b";" * js_bytes, "application/javascript"),
    ]
    exs += [make_exchange(f"{base}img/{i}.jpg", bytes(image_bytes), "image/jpeg") for i in range(n_images)]
    manifest = CriticalManifest(((base + "site.css", None), (base + "app.js", None)), above_fold=())
    return Archive(tuple(exs), base), manifest


def random_site(rng: random.Random, base: str = BASE) -> Archive:
    """A random small page for property tests: a few subresources, maybe a third-party one."""
    kinds = [("css", "text/css"), ("js", "application/javascript"), ("png", "image/png"), ("woff2", "font/woff2")]
    refs_head, refs_body, exs = [], [], []
    for i in range(rng.randint(0, 6)):
        ext, ctype = rng.choice(kinds)
        third = rng.random() < 0.2
        host = "https://cdn.other.test/" if third else base
        url = f"{host}r{i}.{ext}"
        size = rng.choice([0, 1, 500, 3_000, 20_000, 70_000])
        exs.append(make_exchange(url, bytes(size), ctype, ip="10.0.0.9" if third else "10.0.0.1"))
        if ext == "css":
            refs_head.append(f'<link rel="stylesheet" href="{url}">')
        elif ext == "js":
            (refs_head if rng.random() < 0.5 else refs_body).append(
                f'<script {"async " if rng.random() < 0.3 else ""}src="{url}"></script>'
            )
        elif ext == "png":
            refs_body.append(f'<img src="{url}">')
        else:
            refs_head.append(f'<link rel="preload" as="font" href="{url}">')
    body = filler(rng.choice([0, 200, 5_000, 40_000]), rng.randint(0, 99)) + "".join(refs_body)
    html = page("".join(refs_head), body)
    return Archive((make_exchange(base, html),) + tuple(exs), base)
