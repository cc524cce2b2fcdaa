import json
import signal
import subprocess
import sys
import time

import pytest

from localnews.cli import main
from localnews.fixtures import DATA_DIR, load_demo_world

MOCK = str(DATA_DIR / "mock_llm.json")


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_packaged_mock_is_current(tmp_path):
    from localnews.fixtures import write_demo_mock

    fresh = tmp_path / "mock.json"
    write_demo_mock(fresh)
    assert json.loads(fresh.read_text()) == json.loads((DATA_DIR / "mock_llm.json").read_text())


@pytest.fixture(scope="module")
def predictions(tmp_path_factory):
    d = tmp_path_factory.mktemp("preds")
    for model in ("ner", "kg_ner", "llm", "kg_llm"):
        assert main(["classify", "--model", model, "--mock-llm", MOCK, "--runs", "3",
                     "--out", str(d / f"{model}.jsonl")]) == 0
    return d


def test_classify_outputs(predictions):
    recs = [json.loads(l) for l in (predictions / "kg_llm.jsonl").read_text().splitlines()]
    by_id = {r["article_id"]: r for r in recs}
    assert "markets" not in by_id and "conflicted" not in by_id
    assert by_id["artiles"]["label"] == "LOCAL" and by_id["artiles"]["city"] == "miami"
    assert set(by_id["henderson"]) == {"article_id", "model", "label", "matched_on", "city", "state", "country"}


def test_enrich_flag_equals_kg_llm(tmp_path, predictions):
    out = tmp_path / "e.jsonl"
    assert main(["classify", "--model", "llm", "--enrich", "--mock-llm", MOCK, "--out", str(out)]) == 0
    assert out.read_text() == (predictions / "kg_llm.jsonl").read_text()


def test_classify_is_reproducible(tmp_path, predictions):
    out = tmp_path / "again.jsonl"
    main(["classify", "--model", "llm", "--mock-llm", MOCK, "--out", str(out), "--deterministic"])
    assert out.read_bytes() == (predictions / "llm.jsonl").read_bytes()


def test_evaluate(predictions, tmp_path, capsys):
    merged = tmp_path / "all.jsonl"
    merged.write_text("".join((predictions / f"{m}.jsonl").read_text() for m in ("ner", "kg_ner", "llm", "kg_llm")))
    report = tmp_path / "r.json"
    code, out, _ = run(["evaluate", "--predictions", str(merged), "--corpus", str(DATA_DIR / "corpus.jsonl"),
                        "--json", str(report), "--deterministic"], capsys)
    assert code == 0
    assert "KG-Enriched ChatGPT" in out and "excluded 1 conflicting-tag articles" in out
    data = json.loads(report.read_text())
    assert "generated_at" not in data
    assert [m["model"] for m in data["models"]] == ["ner", "kg_ner", "llm", "kg_llm"]
    first = report.read_bytes()
    run(["evaluate", "--predictions", str(merged), "--corpus", str(DATA_DIR / "corpus.jsonl"),
         "--json", str(report), "--deterministic"], capsys)
    assert report.read_bytes() == first


def test_evaluate_metadata_share(predictions, tmp_path, capsys):
    meta = tmp_path / "meta.json"
    meta.write_text(json.dumps({"local": 2327, "total": 33880}))
    code, out, _ = run(["evaluate", "--predictions", str(predictions / "llm.jsonl"),
                        "--corpus", str(DATA_DIR / "corpus.jsonl"), "--metadata", str(meta)], capsys)
    assert code == 0 and "local share: 6.87%" in out


def test_evaluate_orphans_exit_2(predictions, tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text((predictions / "ner.jsonl").read_text()
                   + json.dumps({"article_id": "ghost", "model": "ner", "label": "LOCAL"}) + "\n")
    code, _, err = run(["evaluate", "--predictions", str(bad), "--corpus", str(DATA_DIR / "corpus.jsonl")], capsys)
    assert code == 2 and "ghost" in err


def test_report_ab(tmp_path, capsys):
    stats = tmp_path / "ab.json"
    stats.write_text(json.dumps({"local_views": {"variant": {"mean": 70.52, "sd": 39.12, "n": 112},
                                                 "control": {"mean": 55.57, "sd": 24.99, "n": 112}}}))
    code, out, _ = run(["report-ab", "--stats", str(stats)], capsys)
    assert code == 0 and "t(222)=3.41" in out
    stats.write_text(json.dumps({"m": {"variant": {"mean": 1, "sd": 1, "n": 1},
                                       "control": {"mean": 1, "sd": 1, "n": 5}}}))
    assert run(["report-ab", "--stats", str(stats)], capsys)[0] == 1
    stats.write_text(json.dumps({"m": {"variant": {"mean": 1}}}))
    assert run(["report-ab", "--stats", str(stats)], capsys)[0] == 2


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as info:
        main(["classify", "--runs", "many"])
    assert info.value.code == 1
    assert run(["classify", "--model", "bogus"], capsys)[0] == 1
    assert run(["classify", "--config", "/nonexistent.json"], capsys)[0] == 1
    assert run(["pipeline", "--until-idle"], capsys)[0] == 1  # no LLM endpoint configured


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": "kg_ner", "runs": 1}))
    out = tmp_path / "o.jsonl"
    assert main(["classify", "--config", str(cfg), "--out", str(out)]) == 0
    assert {json.loads(l)["model"] for l in out.read_text().splitlines()} == {"kg_ner"}
    cfg.write_text(json.dumps({"colour": "blue"}))
    code, _, err = run(["classify", "--config", str(cfg)], capsys)
    assert code == 1 and "colour" in err


def test_mock_ner_flag(tmp_path):
    world = load_demo_world()
    art = world.article("dolphins-jets")
    start = art.text.index("Miami")
    mentions = tmp_path / "ner.json"
    mentions.write_text(json.dumps({art.id: [{"surface": "Miami", "tag": "LOC", "start": start, "end": start + 5}]}))
    out = tmp_path / "o.jsonl"
    assert main(["classify", "--model", "ner", "--mock-ner", str(mentions), "--out", str(out)]) == 0
    local = {r["article_id"] for r in map(json.loads, out.read_text().splitlines()) if r["label"] == "LOCAL"}
    assert local == {"dolphins-jets"}


def test_service_failure_exit_3(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": "llm", "max_retries": 0, "backoff": 0,
                               "llm": {"url": "http://127.0.0.1:9/v1/chat/completions", "timeout": 0.5}}))
    code, _, err = run(["classify", "--config", str(cfg)], capsys)
    assert code == 3 and "external service" in err


def test_pipeline_single_binary(tmp_path, capsys):
    db = tmp_path / "kv.db"
    args = ["pipeline", "--mock-llm", MOCK, "--feed", str(DATA_DIR / "corpus.jsonl"),
            "--until-idle", "--store", str(db)]
    code, out, _ = run(args, capsys)
    assert code == 0 and "llm_calls 13" in out and "entries_completed 13" in out
    code, out, _ = run(args, capsys)
    assert code == 0 and "llm_calls 0" in out


def test_backfill_command(capsys):
    code, out, _ = run(["backfill", "--mock-llm", MOCK, "--page-size", "5"], capsys)
    assert code == 0 and "enqueued 13" in out


def test_console_script_entry_point():
    r = subprocess.run([sys.executable, "-m", "localnews.cli", "report-ab", "--help"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "--stats" in r.stdout


def test_pipeline_stops_on_signal(tmp_path):
    proc = subprocess.Popen([sys.executable, "-m", "localnews.cli", "pipeline", "--mock-llm", MOCK,
                             "--feed", str(DATA_DIR / "corpus.jsonl")],
                            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    time.sleep(1.5)
    proc.send_signal(signal.SIGTERM)
    out, err = proc.communicate(timeout=30)
    assert proc.returncode == 0, err
    assert "entries_completed 13" in out
