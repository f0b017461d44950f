from __future__ import annotations

import json

import pytest

from pushlab import synthetic
from pushlab.cli import main
from pushlab.records import load_archive, save_archive
from pushlab.strategy import PushDirective, PushStrategy, StrategyKind

BASE = synthetic.BASE


@pytest.fixture
def site(tmp_path):
    archive, manifest = synthetic.critical_path_page(n_images=2, image_bytes=5000)
    path = tmp_path / "site.json"
    save_archive(archive, path)
    return path


def test_import(tmp_path, capsys):
    har = {
        "log": {
            "entries": [
                {
                    "request": {"method": "GET", "url": "https://a.test/", "headers": []},
                    "response": {"status": 200, "headers": [{"name": "Content-Type", "value": "text/html"}], "content": {"text": "<html></html>"}},
                    "serverIPAddress": "10.1.1.1",
                }
            ]
        }
    }
    (tmp_path / "page.har").write_text(json.dumps(har))
    out = tmp_path / "a.json"
    assert main(["import", str(tmp_path / "page.har"), "-o", str(out)]) == 0
    assert load_archive(out).base.url == "https://a.test/"
    assert "1 exchanges" in capsys.readouterr().out


def test_import_missing_file_is_runtime_error(tmp_path):
    assert main(["import", str(tmp_path / "nope.har"), "-o", str(tmp_path / "x.json")]) == 2


def test_order_from_trace_files(tmp_path):
    t = [[BASE, None, 256, 0.0], [BASE + "a.css", BASE, 256, 1.0], [BASE + "b.png", BASE, 147, 2.0]]
    (tmp_path / "t1.json").write_text(json.dumps(t))
    (tmp_path / "t2.json").write_text(json.dumps({"traces": [t, t]}))
    out = tmp_path / "order.json"
    assert main(["order", str(tmp_path / "t1.json"), str(tmp_path / "t2.json"), "-o", str(out)]) == 0
    assert json.loads(out.read_text()) == [BASE + "a.css", BASE + "b.png"]


def test_order_from_archive_and_strategy_pipeline(tmp_path, site, capsys):
    order = tmp_path / "order.json"
    assert main(["order", "--archive", str(site), "--runs", "2", "-o", str(order)]) == 0
    urls = json.loads(order.read_text())
    assert urls[:2] == [BASE + "site.css", BASE + "app.js"]

    strat = tmp_path / "s.json"
    assert main(["strategy", "gen", "push_first_n", "--archive", str(site), "--order", str(order), "--param", "n=2", "-o", str(strat)]) == 0
    s = PushStrategy.load(strat)
    assert s.kind is StrategyKind.PUSH_FIRST_N and len(s.directives) == 2

    assert main(["validate", str(strat), "--archive", str(site)]) == 0
    assert "ok" in capsys.readouterr().out

    metrics = tmp_path / "m.json"
    tl = tmp_path / "tl.jsonl"
    assert main(["run", "--archive", str(site), "--strategy", str(strat), "--timeline", str(tl), "-o", str(metrics)]) == 0
    m = json.loads(metrics.read_text())
    assert m["bytes_pushed"] > 0 and m["speed_index"] > 0
    assert json.loads(tl.read_text().splitlines()[0])["type"] == "timeline"


def test_strategy_gen_bad_param_is_validation_failure(tmp_path, site):
    assert main(["strategy", "gen", "push_first_n", "--archive", str(site), "--param", "n=-3"]) == 1


def test_validate_reports_violations(tmp_path, site, capsys):
    bad = PushStrategy(StrategyKind.PUSH_ALL, {}, (PushDirective("https://elsewhere.test/x.js", 0),))
    bad.save(tmp_path / "bad.json")
    assert main(["validate", str(tmp_path / "bad.json"), "--archive", str(site)]) == 1
    assert "unpushable" in capsys.readouterr().out


def test_run_matrix_compare_report(tmp_path):
    cfg = {"websites": [{"id": "m", "synthetic": "single_css", "body_bytes": 30000}], "strategies": ["no_push", "push_critical"], "runs": 2}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    report = tmp_path / "report.json"
    assert main(["run", str(tmp_path / "cfg.json"), "-o", str(report)]) == 0
    data = json.loads(report.read_text())
    assert [r["strategy"] for r in data["rows"]] == ["no_push", "push_critical"]
    assert data["comparisons"] == []

    compared = tmp_path / "compared.json"
    assert main(["compare", str(report), "--baseline", "no_push", "-o", str(compared)]) == 0
    (c,) = json.loads(compared.read_text())["comparisons"]
    assert c["delta_si"] < 0

    assert main(["report", str(compared), "--format", "csv", "--out-dir", str(tmp_path / "csv")]) == 0
    assert (tmp_path / "csv" / "rows.csv").read_text().count("\n") == 3
    assert main(["report", str(compared), "--format", "plotdata", "--out-dir", str(tmp_path / "plot")]) == 0


def test_compare_missing_baseline_exit_code(tmp_path):
    (tmp_path / "r.json").write_text(json.dumps({"rows": [{"website": "w", "strategy": "push_all", "kind": "push_all", "link": "dsl", "runs": 1, "plt_median": 1.0, "si_median": 1.0, "plt_stderr": 0.0, "si_stderr": 0.0, "bytes_pushed": 0}]}))
    assert main(["compare", str(tmp_path / "r.json")]) == 1


def test_run_needs_input():
    assert main(["run"]) == 1


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
