"""Strategy x website x link matrices, their statistics, and reports.

Each cell runs ``runs`` simulations with seeds ``seed, seed + 1, ...``.
Medians are the headline numbers; the standard error of the mean is
``stdev / sqrt(n)``. Means with a Student-t confidence half-width are added
when the config asks for a confidence level.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from decimal import Decimal, localcontext
from fractions import Fraction
import os
import re
import statistics
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from scipy import stats

from . import synthetic
from .browser import BrowserConfig, compute_metrics
from .netsim import LinkConfig, configure_presets, run, trace_from_timeline
from .records import Archive, load_archive, pushable_set
from .strategy import (
    CriticalManifest,
    PushStrategy,
    StrategyKind,
    compute_push_order,
    generate,
    install_assets,
    validate,
)

log = logging.getLogger(__name__)

SEED_ENV = "PUSHLAB_SEED"


class ExperimentError(Exception):
    pass


class ConfigError(ExperimentError, ValueError):
    pass


class MissingBaseline(ExperimentError, KeyError):
    pass


class IoError(ExperimentError, OSError):
    pass


@dataclass
class ReportRow:
    website: str
    strategy: str
    kind: str
    link: str
    runs: int
    plt_median: float
    si_median: float
    plt_stderr: float
    si_stderr: float
    bytes_pushed: int
    plt_mean: float | None = None
    si_mean: float | None = None
    plt_ci: float | None = None
    si_ci: float | None = None
    timeouts: int = 0
    plt_samples: list[float] = field(default_factory=list)
    si_samples: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("a row needs at least one run")


TABLE_FIELDS = [f.name for f in fields(ReportRow) if not f.name.endswith("_samples")]


@dataclass
class Comparison:
    website: str
    link: str
    baseline: str
    variant: str
    delta_plt: float
    delta_si: float


# statistics


def median(xs) -> float:
    return float(statistics.median(xs))


def stderr(xs) -> float:
    """stdev / sqrt(n), correctly rounded: exact rational variance, one final rounding."""
    xs = [Fraction(x) for x in xs]
    n = len(xs)
    if n < 2:
        return 0.0
    mean = sum(xs) / n
    return _sqrt(sum((x - mean) ** 2 for x in xs) / ((n - 1) * n))


def _sqrt(q: Fraction) -> float:
    """Nearest float to sqrt(q), ties to even."""
    if q == 0:
        return 0.0
    with localcontext() as ctx:
        ctx.prec = 60
        f = float((Decimal(q.numerator) / Decimal(q.denominator)).sqrt())
    # the estimate is within one ulp; settle near-ties exactly
    for other in (math.nextafter(f, math.inf), math.nextafter(f, 0.0)):
        mid = (Fraction(f) + Fraction(other)) / 2
        beyond = q > mid * mid if other > f else q < mid * mid
        if beyond or (q == mid * mid and struct.pack("<d", other)[0] & 1 == 0):
            return other
    return f


def mean_ci(xs, confidence: float) -> tuple[float, float]:
    """Mean and Student-t half-width at ``confidence``."""
    xs = list(xs)
    m = statistics.fmean(xs)
    if len(xs) < 2:
        return m, 0.0
    t = stats.t.ppf((1 + confidence) / 2, len(xs) - 1)
    return m, float(t * stderr(xs))


def summarize(website, label, kind, link, samples: list[dict], confidence: float | None = None) -> ReportRow:
    plt = [s["plt"] for s in samples]
    si = [s["speed_index"] for s in samples]
    row = ReportRow(
        website,
        label,
        kind,
        link,
        len(samples),
        median(plt),
        median(si),
        stderr(plt),
        stderr(si),
        int(median([s["bytes_pushed"] for s in samples])),
        timeouts=sum(bool(s["timed_out"]) for s in samples),
        plt_samples=plt,
        si_samples=si,
    )
    if confidence is not None:
        row.plt_mean, row.plt_ci = mean_ci(plt, confidence)
        row.si_mean, row.si_ci = mean_ci(si, confidence)
    return row


# config


@dataclass
class Website:
    id: str
    archive: Archive
    manifest: CriticalManifest | None = None


@dataclass
class StrategyChoice:
    kind: StrategyKind
    params: dict
    label: str


@dataclass
class MatrixConfig:
    websites: list[Website]
    strategies: list[StrategyChoice]
    links: dict[str, LinkConfig]
    runs: int = 31
    seed: int = 0
    trace_runs: int = 3
    timeout_ms: float = 60_000.0
    browser: BrowserConfig = field(default_factory=BrowserConfig)
    progress_weight: float = 0.5
    confidence: float | None = None
    workers: int = 1
    timeline_dir: str | None = None
    runs_file: str | None = None


def _label(kind: StrategyKind, params: dict) -> str:
    if not params:
        return kind.value
    parts = []
    for k in sorted(params):
        v = params[k]
        if isinstance(v, (list, set, frozenset, tuple)):
            v = "+".join(sorted(str(getattr(x, "value", x)) for x in v))
        parts.append(f"{k}={v}")
    return f"{kind.value}:{','.join(parts)}"


def _website(d: dict, base_dir: Path) -> Website:
    if "id" not in d:
        raise ConfigError(f"website entry without id: {d}")
    manifest = None
    if "synthetic" in d:
        params = {k: v for k, v in d.items() if k not in ("id", "synthetic", "manifest")}
        maker = {"single_css": synthetic.single_css_page, "critical_path": synthetic.critical_path_page}.get(d["synthetic"])
        if maker is None:
            raise ConfigError(f"unknown synthetic site {d['synthetic']!r}")
        archive, manifest = maker(**params)
    elif "archive" in d:
        archive = load_archive(base_dir / d["archive"])
    else:
        raise ConfigError(f"website {d['id']} needs an archive or a synthetic generator")
    if "manifest" in d:
        manifest = CriticalManifest.load(base_dir / d["manifest"])
    if manifest is not None:
        archive = install_assets(archive, manifest)
    return Website(d["id"], archive, manifest)


def load_config(source: dict | str | Path, base_dir: str | Path | None = None) -> MatrixConfig:
    """Read a matrix config (dict or JSON file); relative paths resolve against the file's folder."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        d = json.loads(path.read_text())
        base = Path(base_dir) if base_dir is not None else path.parent
    else:
        d = source
        base = Path(base_dir) if base_dir is not None else Path.cwd()
    presets = configure_presets(base / d["presets_file"] if "presets_file" in d else None)
    links: dict[str, LinkConfig] = {}
    for item in d.get("links", [d.get("link", "dsl")]):
        if isinstance(item, str):
            if item not in presets:
                raise ConfigError(f"unknown link preset {item!r}")
            links[item] = presets[item]
        else:
            item = dict(item)
            name = item.pop("name", f"link{len(links)}")
            links[name] = LinkConfig.from_dict(item)
    if "jitter" in d:
        links = {k: LinkConfig(**{**v.to_dict(), "jitter": float(d["jitter"])}) for k, v in links.items()}
    strategies = []
    for s in d.get("strategies", ["no_push"]):
        if isinstance(s, str):
            s = {"kind": s}
        kind = StrategyKind(s["kind"])
        params = dict(s.get("params", {}))
        strategies.append(StrategyChoice(kind, params, s.get("label") or _label(kind, params)))
    seed = int(os.environ.get(SEED_ENV, d.get("seed", 0)))
    runs = int(d.get("runs", 31))
    if runs < 1:
        raise ConfigError("runs must be at least 1")
    timeline_dir = d.get("timeline_dir")
    runs_file = d.get("runs_file")
    return MatrixConfig(
        websites=[_website(w, base) for w in d.get("websites", [])],
        strategies=strategies,
        links=links,
        runs=runs,
        seed=seed,
        trace_runs=int(d.get("trace_runs", 3)),
        timeout_ms=float(d.get("timeout_ms", 60_000.0)),
        browser=BrowserConfig.from_dict(d.get("browser", {})),
        progress_weight=float(d.get("progress_weight", 0.5)),
        confidence=d.get("confidence"),
        workers=int(d.get("workers", 1)),
        timeline_dir=str(base / timeline_dir) if timeline_dir else None,
        runs_file=str(base / runs_file) if runs_file else None,
    )


# running


def derive_order(archive: Archive, link: LinkConfig, browser: BrowserConfig, seed: int, n: int, timeout_ms: float):
    """Push order from ``n`` traced no-push loads, restricted to what the base origin may push."""
    traces = []
    for i in range(max(1, n)):
        tl = run(archive, PushStrategy(StrategyKind.NO_PUSH), link, browser, seed + i, timeout_ms=timeout_ms)
        traces.append(trace_from_timeline(tl))
    allowed = {ex.url for ex in pushable_set(archive, archive.base.authority)}
    return [u for u in compute_push_order(traces) if u in allowed]


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.=+-]+", "_", name)


def _run_cell(job) -> list[dict]:
    site, strategy, label, link_name, link, cfg = job
    samples = []
    above = site.manifest.above_fold if site.manifest else ()
    for r in range(cfg.runs):
        seed = cfg.seed + r
        tl = run(site.archive, strategy, link, cfg.browser, seed, timeout_ms=cfg.timeout_ms)
        m = compute_metrics(tl, above, cfg.progress_weight)
        if cfg.timeline_dir:
            d = Path(cfg.timeline_dir)
            d.mkdir(parents=True, exist_ok=True)
            tl.save(d / f"{_safe(site.id)}__{_safe(label)}__{_safe(link_name)}__{r:03d}.jsonl")
        samples.append(
            {
                "website": site.id,
                "strategy": label,
                "link": link_name,
                "run": r,
                "seed": seed,
                "plt": m.plt,
                "speed_index": m.speed_index,
                "first_visual_change": m.first_visual_change,
                "bytes_pushed": m.bytes_pushed,
                "timed_out": m.timed_out,
            }
        )
    return samples


def run_matrix(config: MatrixConfig | dict | str | Path) -> list[ReportRow]:
    """One row per (website, strategy, link) cell of the config."""
    return run_matrix_detailed(config)[0]


def run_matrix_detailed(config) -> tuple[list[ReportRow], list[dict]]:
    """Rows plus the per-run samples they were aggregated from."""
    cfg = config if isinstance(config, MatrixConfig) else load_config(config)
    jobs = []
    meta = []
    for site in cfg.websites:
        pushable = pushable_set(site.archive, site.archive.base.authority)
        for link_name, link in cfg.links.items():
            order = None
            for choice in cfg.strategies:
                if choice.kind in (StrategyKind.PUSH_ALL, StrategyKind.PUSH_FIRST_N, StrategyKind.PUSH_BY_TYPE, StrategyKind.PUSH_ALL_OPTIMIZED) and order is None:
                    order = derive_order(site.archive, link, cfg.browser, cfg.seed, cfg.trace_runs, cfg.timeout_ms)
                try:
                    strategy = generate(choice.kind, choice.params, site.archive, pushable, order or [], site.manifest)
                except Exception as exc:  # invalid parameters or missing manifest
                    log.warning("skipping %s / %s: %s", site.id, choice.label, exc)
                    continue
                problems = validate(strategy, site.archive)
                if problems:
                    log.warning("skipping %s / %s: %s", site.id, choice.label, [p.message for p in problems])
                    continue
                jobs.append((site, strategy, choice.label, link_name, link, cfg))
                meta.append((site.id, choice.label, choice.kind.value, link_name))
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    rows = [summarize(w, label, kind, ln, samples, cfg.confidence) for (w, label, kind, ln), samples in zip(meta, results)]
    flat = [s for samples in results for s in samples]
    if cfg.runs_file:
        write_runs(flat, cfg.runs_file)
    return rows, flat


def write_runs(samples: list[dict], path) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            for s in samples:
                f.write(json.dumps(s, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_runs(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


# comparison and reports


def compare(rows: list[ReportRow], baseline_kind: str) -> list[Comparison]:
    """Relative change of every other row against the baseline row of the same website and link."""
    base = {}
    for r in rows:
        if r.strategy == baseline_kind or (r.kind == baseline_kind and (r.website, r.link) not in base):
            base[(r.website, r.link)] = r
    out = []
    for r in rows:
        b = base.get((r.website, r.link))
        if b is None:
            raise MissingBaseline(f"no {baseline_kind} row for website {r.website}")
        if r is b:
            continue
        if b.plt_median <= 0 or b.si_median <= 0:
            raise ExperimentError(f"baseline for {r.website} has a non-positive median")
        out.append(
            Comparison(
                r.website,
                r.link,
                b.strategy,
                r.strategy,
                (r.plt_median - b.plt_median) / b.plt_median,
                (r.si_median - b.si_median) / b.si_median,
            )
        )
    return out


def cdf_points(values) -> list[tuple[float, float]]:
    xs = sorted(values)
    n = len(xs)
    return [(x, (i + 1) / n) for i, x in enumerate(xs)]


def plotdata(comparisons: list[Comparison]) -> dict:
    by_strategy: dict[str, list[Comparison]] = {}
    for c in comparisons:
        by_strategy.setdefault(c.variant, []).append(c)
    return {
        metric: {s: cdf_points(getattr(c, f"delta_{metric}") for c in cs) for s, cs in sorted(by_strategy.items())}
        for metric in ("si", "plt")
    }


def report_dict(rows, comparisons) -> dict:
    return {"rows": [asdict(r) for r in rows], "comparisons": [asdict(c) for c in comparisons]}


def dumps_report(rows, comparisons=()) -> str:
    return json.dumps(report_dict(rows, comparisons), indent=2, sort_keys=True) + "\n"


def loads_report(text: str) -> tuple[list[ReportRow], list[Comparison]]:
    d = json.loads(text)
    return [ReportRow(**r) for r in d.get("rows", [])], [Comparison(**c) for c in d.get("comparisons", [])]


def load_report(path) -> tuple[list[ReportRow], list[Comparison]]:
    try:
        return loads_report(Path(path).read_text())
    except OSError as exc:
        raise IoError(str(exc)) from exc


def emit_report(rows, comparisons, fmt: str, out_dir) -> list[Path]:
    """Write ``fmt`` (csv, json or plotdata) files into ``out_dir``; returns the paths written."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if fmt == "csv":
            p_rows, p_cmp = out / "rows.csv", out / "comparisons.csv"
            with p_rows.open("w", newline="") as f:
                w = csv.DictWriter(f, TABLE_FIELDS, extrasaction="ignore", lineterminator="\n")
                w.writeheader()
                for r in rows:
                    w.writerow(asdict(r))
            with p_cmp.open("w", newline="") as f:
                w = csv.DictWriter(f, [x.name for x in fields(Comparison)], lineterminator="\n")
                w.writeheader()
                for c in comparisons:
                    w.writerow(asdict(c))
            return [p_rows, p_cmp]
        if fmt == "json":
            p = out / "report.json"
            p.write_text(dumps_report(rows, comparisons))
            return [p]
        if fmt == "plotdata":
            p = out / "plotdata.json"
            p.write_text(json.dumps(plotdata(comparisons), indent=2, sort_keys=True) + "\n")
            return [p]
    except OSError as exc:
        raise IoError(f"cannot write report to {out}: {exc}") from exc
    raise ValueError(f"unknown report format {fmt!r}")
