"""Independent reference implementations used by tests."""

from __future__ import annotations

import itertools
import math
import random
from fractions import Fraction


def tree_order_by_path_keys(entries):
    """Preorder of a priority tree, computed by sorting root-to-node key paths.

    A node's key is (-weight, position among its siblings); sorting complete
    paths lexicographically is exactly a heavier-first depth-first walk.
    """
    urls = []
    parent_of = {}
    sibling_pos = {}
    counts = {}
    for url, parent, weight, _ in entries:
        if url in parent_of:
            continue
        p = parent if parent in parent_of and parent != url else None
        parent_of[url] = (p, weight)
        sibling_pos[url] = counts.get(p, 0)
        counts[p] = counts.get(p, 0) + 1
        urls.append(url)

    def path(u):
        out = []
        while u is not None:
            p, w = parent_of[u]
            out.append((-w, sibling_pos[u]))
            u = p
        return tuple(reversed(out))

    return sorted(urls, key=path)


def _order_statistic(vals, k):
    """k-th smallest (1-based) by counting, without sorting."""
    for x in vals:
        below = sum(v < x for v in vals)
        equal = sum(v == x for v in vals)
        if below < k <= below + equal:
            return x
    raise ValueError(k)


def brute_median(values):
    vals = list(values)
    n = len(vals)
    if n % 2:
        return _order_statistic(vals, (n + 1) // 2)
    return (_order_statistic(vals, n // 2) + _order_statistic(vals, n // 2 + 1)) / 2


def brute_push_order(traces):
    """Median-rank order: every permutation is checked for being sorted by the rank key."""
    base = traces[0][0][0]
    ranks, times = {}, {}
    for tr in traces:
        order = [u for u in tree_order_by_path_keys(tr) if u != base]
        for i, u in enumerate(order, 1):
            ranks.setdefault(u, []).append(i)
        for u, _, _, t in tr:
            if u != base:
                times.setdefault(u, []).append(t)
    key = {u: (brute_median(r), sum(times[u]) / len(times[u]), u) for u, r in ranks.items()}
    items = sorted(ranks)
    if len(items) <= 8:
        for perm in itertools.permutations(items):
            if all(key[a] <= key[b] for a, b in zip(perm, perm[1:])):
                return list(perm)
    # selection order for larger inputs
    out, left = [], set(items)
    while left:
        m = min(left, key=lambda u: key[u])
        out.append(m)
        left.remove(m)
    return out


def random_traces(rng: random.Random, k: int = 3, max_resources: int = 8):
    n = rng.randint(1, max_resources)
    names = [f"https://s.test/r{i}" for i in range(n)]
    base = "https://s.test/"
    traces = []
    for _ in range(k):
        order = names[:]
        rng.shuffle(order)
        rows = [(base, None, 256, 0.0)]
        t = 0.0
        for u in order:
            t += rng.choice([0.0, 1.0, 2.5])
            parent = rng.choice([None, base] + [r[0] for r in rows[1:]])
            rows.append((u, parent, rng.choice([16, 147, 183, 220, 256]), t))
        traces.append(rows)
    return traces


def exact_median(xs) -> Fraction:
    ys = sorted(Fraction(x) for x in xs)
    n = len(ys)
    return ys[n // 2] if n % 2 else (ys[n // 2 - 1] + ys[n // 2]) / 2


def exact_stderr(xs) -> float:
    """Nearest float to sqrt(sum((x - mean)^2) / ((n - 1) n)), via integer square roots."""
    n = len(xs)
    if n < 2:
        return 0.0
    fs = [Fraction(x) for x in xs]
    mean = sum(fs) / n
    q = sum((x - mean) ** 2 for x in fs) / ((n - 1) * n)
    if q == 0:
        return 0.0
    a, b = q.numerator, q.denominator
    # scale so the root carries ~100 significant bits, then add a sticky bit if inexact
    k = max(0, 100 - (a.bit_length() - b.bit_length()) // 2)
    num = a << (2 * k)
    r = math.isqrt(num // b)
    if r * r * b != num:
        r = (r << 1) | 1
        k += 1
    return float(Fraction(r, 1 << k))
