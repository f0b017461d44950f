"""``pushlab`` command line.

Exit codes: 0 success, 1 validation failure (bad strategy, config or missing
baseline), 2 runtime error (I/O, broken archives, simulator faults).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import experiment
from .browser import BrowserConfig, compute_metrics
from .netsim import StrategyRejected, configure_presets, run, trace_from_timeline
from .records import import_har, load_archive, pushable_set, relocate, save_archive
from .strategy import (
    CriticalManifest,
    PushStrategy,
    RunTrace,
    StrategyError,
    compute_push_order,
    generate,
    install_assets,
    validate,
)
from .timeline import Timeline

OK, INVALID, FAILED = 0, 1, 2

log = logging.getLogger("pushlab")


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _param(s: str):
    key, sep, value = s.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {s!r}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        if "," in value:
            return key, value.split(",")
        return key, value


def _load_traces(paths) -> list[RunTrace]:
    traces = []
    for p in paths:
        p = Path(p)
        if p.suffix == ".jsonl":
            traces.append(trace_from_timeline(Timeline.load(p)))
            continue
        data = json.loads(p.read_text())
        if isinstance(data, dict):
            data = data["traces"]
        # a single trace is a list of rows; a trace set is a list of those
        if data and data[0] and isinstance(data[0][0], str):
            data = [data]
        traces.extend(RunTrace.from_list(t) for t in data)
    return traces


def _link(name: str, presets_file: str | None):
    presets = configure_presets(presets_file)
    if name not in presets:
        raise experiment.ConfigError(f"unknown link preset {name!r}; known: {', '.join(sorted(presets))}")
    return presets[name]


def cmd_import(args) -> int:
    ip_map = json.loads(Path(args.ip_map).read_text()) if args.ip_map else None
    archive = import_har(Path(args.har), ip_map)
    if args.relocate:
        archive = relocate(archive, args.relocate)
    save_archive(archive, args.out)
    print(f"{len(archive)} exchanges in {len(archive.groups)} origin groups -> {args.out}")
    return OK


def cmd_order(args) -> int:
    if args.archive:
        archive = load_archive(args.archive)
        order = experiment.derive_order(
            archive, _link(args.link, args.presets), BrowserConfig(), args.seed, args.runs, args.timeout_ms
        )
    else:
        if not args.traces:
            raise experiment.ConfigError("give trace files or --archive")
        order = compute_push_order(_load_traces(args.traces))
    _write(json.dumps(order, indent=2) + "\n", args.out)
    return OK


def cmd_strategy_gen(args) -> int:
    archive = load_archive(args.archive)
    manifest = CriticalManifest.load(args.manifest) if args.manifest else None
    if manifest is not None:
        archive = install_assets(archive, manifest)
    order = json.loads(Path(args.order).read_text()) if args.order else []
    pushable = pushable_set(archive, archive.base.authority)
    strategy = generate(args.kind, dict(args.param), archive, pushable, order, manifest)
    if manifest is not None:
        strategy = replace(strategy, manifest_path=args.manifest)
    _write(json.dumps(strategy.to_dict(), indent=2, sort_keys=True) + "\n", args.out)
    return OK


def cmd_validate(args) -> int:
    archive = load_archive(args.archive)
    strategy = PushStrategy.load(args.strategy)
    if args.manifest:
        archive = install_assets(archive, CriticalManifest.load(args.manifest))
    problems = validate(strategy, archive)
    for v in problems:
        print(f"{v.kind}: {v.url}: {v.message}")
    if problems:
        return INVALID
    print("ok")
    return OK


def cmd_run(args) -> int:
    if args.config:
        cfg = experiment.load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.workers is not None:
            cfg.workers = args.workers
        if args.runs_file:
            cfg.runs_file = args.runs_file
        rows = experiment.run_matrix(cfg)
        comparisons = experiment.compare(rows, args.baseline) if args.baseline else []
        _write(experiment.dumps_report(rows, comparisons), args.out)
        return OK
    if not (args.archive and args.strategy):
        raise experiment.ConfigError("run needs a config file or --archive with --strategy")
    archive = load_archive(args.archive)
    strategy = PushStrategy.load(args.strategy)
    above = ()
    if args.manifest:
        manifest = CriticalManifest.load(args.manifest)
        archive = install_assets(archive, manifest)
        above = manifest.above_fold
    tl = run(archive, strategy, _link(args.link, args.presets), None, args.seed or 0, timeout_ms=args.timeout_ms)
    if args.timeline:
        tl.save(args.timeline)
    m = compute_metrics(tl, above)
    out = {
        "plt": m.plt,
        "speed_index": m.speed_index,
        "first_visual_change": m.first_visual_change,
        "bytes_pushed": m.bytes_pushed,
        "bytes_total": m.bytes_total,
        "timed_out": m.timed_out,
    }
    _write(json.dumps(out, indent=2, sort_keys=True) + "\n", args.out)
    return OK


def cmd_compare(args) -> int:
    rows, _ = experiment.load_report(args.report)
    comparisons = experiment.compare(rows, args.baseline)
    _write(experiment.dumps_report(rows, comparisons), args.out)
    return OK


def cmd_report(args) -> int:
    rows, comparisons = experiment.load_report(args.report)
    if args.baseline:
        comparisons = experiment.compare(rows, args.baseline)
    for p in experiment.emit_report(rows, comparisons, args.format, args.out_dir):
        print(p)
    return OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pushlab", description="Replay recorded pages under HTTP/2 push strategies.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("import", help="convert a HAR file into an archive")
    s.add_argument("har")
    s.add_argument("-o", "--out", required=True)
    s.add_argument("--ip-map", help="JSON object of hostname -> server IP")
    s.add_argument("--relocate", metavar="AUTHORITY", help="rehost all origins on this authority")
    s.set_defaults(func=cmd_import)

    s = sub.add_parser("order", help="compute a push order from request traces")
    s.add_argument("traces", nargs="*", help="trace JSON files or timeline .jsonl files")
    s.add_argument("--archive", help="trace fresh no-push loads of this archive instead")
    s.add_argument("--runs", type=int, default=3)
    s.add_argument("--link", default="dsl")
    s.add_argument("--presets")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--timeout-ms", type=float, default=60_000.0)
    s.add_argument("-o", "--out")
    s.set_defaults(func=cmd_order)

    s = sub.add_parser("strategy", help="strategy tools")
    ssub = s.add_subparsers(dest="strategy_command", required=True)
    g = ssub.add_parser("gen", help="generate a strategy file")
    g.add_argument("kind")
    g.add_argument("--archive", required=True)
    g.add_argument("--order", help="JSON list of URLs, as written by `order`")
    g.add_argument("--manifest", help="critical-resource manifest")
    g.add_argument("--param", action="append", type=_param, default=[], metavar="KEY=VALUE")
    g.add_argument("-o", "--out")
    g.set_defaults(func=cmd_strategy_gen)

    s = sub.add_parser("validate", help="check a strategy against an archive")
    s.add_argument("strategy")
    s.add_argument("--archive", required=True)
    s.add_argument("--manifest")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("run", help="run a matrix config, or one simulation")
    s.add_argument("config", nargs="?")
    s.add_argument("--archive")
    s.add_argument("--strategy")
    s.add_argument("--manifest")
    s.add_argument("--link", default="dsl")
    s.add_argument("--presets")
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--timeout-ms", type=float, default=60_000.0)
    s.add_argument("--timeline", help="write the simulation timeline here")
    s.add_argument("--runs-file", help="write per-run samples as JSON lines")
    s.add_argument("--baseline", help="also compare against this strategy")
    s.add_argument("-o", "--out")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("compare", help="add comparisons against a baseline to a report")
    s.add_argument("report")
    s.add_argument("--baseline", default="no_push")
    s.add_argument("-o", "--out")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("report", help="emit csv, json or plot data from a report")
    s.add_argument("report")
    s.add_argument("--format", choices=["csv", "json", "plotdata"], default="csv")
    s.add_argument("--baseline")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except StrategyRejected as exc:
        for v in exc.violations:
            print(f"{v.kind}: {v.url}: {v.message}", file=sys.stderr)
        return INVALID
    except (StrategyError, experiment.ConfigError, experiment.MissingBaseline) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return INVALID
    except Exception as exc:  # runtime failures: I/O, corrupt archives, simulator faults
        print(f"error: {exc}", file=sys.stderr)
        return FAILED


if __name__ == "__main__":
    sys.exit(main())
