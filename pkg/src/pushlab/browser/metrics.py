"""Page Load Time and a SpeedIndex proxy computed from a timeline.

Visual progress is modelled as a step function::

    progress(t) = w * [first_visual_change <= t] + (1 - w) * done_above_fold(t) / total_above_fold

and the SpeedIndex is the area above that curve, measured from connect end.
All reported times are relative to connect end.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

from ..timeline import EventKind, Timeline


class MetricsError(ValueError):
    pass


@dataclass
class Metrics:
    plt: float
    speed_index: float
    first_visual_change: float | None
    bytes_pushed: int
    bytes_total: int
    progress: list[tuple[float, float]] = field(default_factory=list)
    dom_content: float | None = None
    timed_out: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["progress"] = [list(p) for p in self.progress]
        return d


@dataclass
class TimeoutMetrics(Metrics):
    timed_out: bool = True


def progress_curve(
    first_visual_change: float | None, above_fold_done: list[float], total: int, weight: float = 0.5
) -> list[tuple[float, float]]:
    """Step points (time, progress) at each change, starting from (0, 0)."""
    steps: dict[float, float] = {}
    if total == 0:
        if first_visual_change is not None:
            steps[first_visual_change] = 1.0
    else:
        if first_visual_change is not None:
            steps[first_visual_change] = steps.get(first_visual_change, 0.0) + weight
        for t in above_fold_done:
            steps[t] = steps.get(t, 0.0) + (1 - weight) / total
    curve = [(0.0, 0.0)]
    level = 0.0
    for t in sorted(steps):
        level += steps[t]
        curve.append((t, min(level, 1.0)))
    if curve[-1][1] > 1 - 1e-12:
        curve[-1] = (curve[-1][0], 1.0)
    return curve


def speed_index(curve: list[tuple[float, float]]) -> float:
    total = 0.0
    for (t0, p0), (t1, _) in zip(curve, curve[1:]):
        total += (1 - p0) * (t1 - t0)
    return total


def compute_metrics(timeline: Timeline, above_fold=(), weight: float = 0.5) -> Metrics:
    """Metrics for one run.

    The above-fold denominator counts manifest URLs the timeline shows as
    completed; a manifest entry never fetched on this page cannot hold
    progress below 1 forever.
    """
    if not 0 <= weight <= 1:
        raise MetricsError(f"progress weight {weight} outside [0, 1]")
    ms = timeline.milestones()
    if "connect_end" not in ms:
        raise MetricsError("timeline has no connect_end")
    t0 = ms["connect_end"]

    def rel(name):
        return ms[name] - t0 if name in ms else None

    done = timeline.completions()
    af = [done[u] - t0 for u in dict.fromkeys(above_fold) if u in done]
    fvc = rel("first_visual_change")
    curve = progress_curve(fvc, af, len(af), weight)
    pushed = total = 0
    for e in timeline.events:
        if e.kind is EventKind.DELIVERED and e.label == "DATA":
            total += e.nbytes
            if e.push:
                pushed += e.nbytes
    si = speed_index(curve)
    if "onload" not in ms:
        if timeline.timeout_ms is None:
            raise MetricsError("timeline has neither onload nor a timeout")
        return TimeoutMetrics(timeline.timeout_ms, si, fvc, pushed, total, curve, rel("dom_content"))
    return Metrics(rel("onload"), si, fvc, pushed, total, curve, rel("dom_content"))
