from __future__ import annotations

import json

import pytest

from groundcheck.cli import main


def run(tmp_path, *argv, config=None):
    args = list(argv)
    if config is not None:
        path = tmp_path / "config.json"
        path.write_text(json.dumps(config))
        args = ["--config", str(path)] + args
    return main(args)


@pytest.fixture
def bench(tmp_path):
    path = tmp_path / "bench.jsonl"
    assert main(["gen-bench", "--shape", "noisy", "--n", "10", "--seed", "3", "--evidences", "8",
                 "--out", str(path)]) == 0
    return path


def test_gen_bench_writes_corpus_and_truth(bench, capsys):
    assert bench.exists()
    assert bench.with_name("bench.truth.jsonl").exists()
    assert len(bench.read_text().splitlines()) == 10


def test_gen_bench_without_responses(tmp_path):
    out = tmp_path / "plain.jsonl"
    assert main(["gen-bench", "--n", "3", "--no-responses", "--out", str(out)]) == 0
    assert "responses" not in json.loads(out.read_text().splitlines()[0])
    assert not out.with_name("plain.truth.jsonl").exists()


def test_verify_truth_passes(bench, tmp_path, capsys):
    assert main(["evaluate", "--bench", str(bench), "--verify-truth", "--out", str(tmp_path / "r.json")]) == 0
    assert "truth verification passed (30 responses)" in capsys.readouterr().out


def test_verify_truth_mismatch_exits_3(bench, tmp_path, capsys):
    truth = bench.with_name("bench.truth.jsonl")
    lines = truth.read_text().splitlines()
    first = json.loads(lines[0])
    first["counts"]["n"] += 1
    first["counts"]["m"] += 1
    lines[0] = json.dumps(first)
    truth.write_text("\n".join(lines) + "\n")
    assert main(["evaluate", "--bench", str(bench), "--verify-truth", "--out", str(tmp_path / "r.json")]) == 3
    assert "MISMATCH" in capsys.readouterr().err


def test_verify_truth_without_sidecar_is_a_validation_error(bench, tmp_path):
    bench.with_name("bench.truth.jsonl").unlink()
    assert main(["evaluate", "--bench", str(bench), "--verify-truth", "--out", str(tmp_path / "r.json")]) == 1


def test_malformed_benchmark_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{oops\n")
    assert main(["evaluate", "--bench", str(bad)]) == 1
    assert "line 1" in capsys.readouterr().err


def test_bad_config_value_exits_1(tmp_path):
    assert main(["gen-bench", "--relevance", "1.5", "--out", str(tmp_path / "x.jsonl")]) == 1


def test_generate_then_evaluate(tmp_path, capsys):
    plain = tmp_path / "plain.jsonl"
    main(["gen-bench", "--shape", "noisy", "--n", "6", "--seed", "1", "--no-responses", "--out", str(plain)])
    filled = tmp_path / "filled.jsonl"
    assert main(["generate", "--bench", str(plain), "--out", str(filled), "--seed", "1"]) == 0
    assert main(["evaluate", "--bench", str(filled), "--verify-truth", "--out", str(tmp_path / "r.json")]) == 0
    # --generate does both in one go and verifies against what it planted
    assert main(["evaluate", "--bench", str(plain), "--generate", "--seed", "1", "--verify-truth",
                 "--out", str(tmp_path / "r2.json")]) == 0
    assert (tmp_path / "r.json").read_bytes() == (tmp_path / "r2.json").read_bytes()


def test_evaluate_without_responses_is_an_error(tmp_path):
    plain = tmp_path / "plain.jsonl"
    main(["gen-bench", "--n", "2", "--no-responses", "--out", str(plain)])
    assert main(["evaluate", "--bench", str(plain), "--out", str(tmp_path / "r.json")]) == 1


def test_full_knobs_give_cgr_one(tmp_path, capsys):
    knobs = tmp_path / "knobs.json"
    knobs.write_text(json.dumps({"citation": {"grounded_fraction": 1.0, "cite_fraction": 1.0}}))
    bench = tmp_path / "b.jsonl"
    main(["gen-bench", "--shape", "synthetic", "--n", "20", "--knobs", str(knobs), "--out", str(bench)])
    out = tmp_path / "r.json"
    assert main(["evaluate", "--bench", str(bench), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["aggregate"]["cgr"] == 1.0


def test_citation_variant_grounds_better_than_guided(tmp_path):
    bench = tmp_path / "b.jsonl"
    main(["gen-bench", "--shape", "noisy", "--n", "60", "--seed", "2", "--out", str(bench)])
    out = tmp_path / "r.json"
    main(["evaluate", "--bench", str(bench), "--out", str(out)])
    by_variant = json.loads(out.read_text())["by_variant"]
    assert by_variant["citation"]["cgr"] > by_variant["guided"]["cgr"]


def test_remote_judge_unreachable_exits_2(bench, tmp_path, dead_url, monkeypatch):
    import groundcheck._http as http

    monkeypatch.setattr(http.time, "sleep", lambda s: None)
    assert main(["evaluate", "--bench", str(bench), "--judge", "remote", "--judge-url", dead_url,
                 "--judge-token", "t", "--out", str(tmp_path / "r.json")]) == 2


def test_remote_judge_without_credentials_exits_1(bench, tmp_path, monkeypatch):
    monkeypatch.delenv("GROUNDCHECK_JUDGE_URL", raising=False)
    monkeypatch.delenv("GROUNDCHECK_JUDGE_TOKEN", raising=False)
    assert main(["evaluate", "--bench", str(bench), "--judge", "remote", "--out", str(tmp_path / "r.json")]) == 1


def test_skip_failed_keeps_going(bench, tmp_path, dead_url, monkeypatch, capsys):
    import groundcheck._http as http

    monkeypatch.setattr(http.time, "sleep", lambda s: None)
    out = tmp_path / "r.json"
    assert main(["evaluate", "--bench", str(bench), "--judge", "remote", "--judge-url", dead_url,
                 "--judge-token", "t", "--skip-failed", "--out", str(out)]) == 0
    assert "skipped" in capsys.readouterr().err


def test_env_supplies_remote_judge(bench, tmp_path, stub_service, monkeypatch):
    monkeypatch.setenv("GROUNDCHECK_JUDGE_URL", stub_service.url)
    monkeypatch.setenv("GROUNDCHECK_JUDGE_TOKEN", "env-token")
    assert main(["evaluate", "--bench", str(bench), "--judge", "remote", "--verify-truth",
                 "--out", str(tmp_path / "r.json")]) == 0
    assert {auth for _, _, auth in stub_service.hits} == {"Bearer env-token"}


def test_config_file_beats_env_and_flags_beat_config(bench, tmp_path, stub_service, dead_url, monkeypatch):
    import groundcheck._http as http

    monkeypatch.setattr(http.time, "sleep", lambda s: None)
    monkeypatch.setenv("GROUNDCHECK_JUDGE_URL", dead_url)
    monkeypatch.setenv("GROUNDCHECK_JUDGE_TOKEN", "env-token")
    out = str(tmp_path / "r.json")
    cfg = {"judge": "remote", "judge_url": stub_service.url, "mode": "macro"}
    assert run(tmp_path, "evaluate", "--bench", str(bench), "--out", out, config=cfg) == 0
    assert json.loads(open(out).read())["aggregate"]["mode"] == "macro"
    assert run(tmp_path, "evaluate", "--bench", str(bench), "--out", out, "--mode", "micro", config=cfg) == 0
    assert json.loads(open(out).read())["aggregate"]["mode"] == "micro"
    cfg["judge_url"] = dead_url
    assert run(tmp_path, "evaluate", "--bench", str(bench), "--out", out, config=cfg) == 2
    assert run(tmp_path, "evaluate", "--bench", str(bench), "--out", out, "--judge-url", stub_service.url,
               config=cfg) == 0


def test_generator_config_file_with_flag_override(tmp_path):
    gcfg = tmp_path / "gen.json"
    gcfg.write_text(json.dumps({"seed": 5, "n_records": 4, "evidences_per_record": 3}))
    out = tmp_path / "b.jsonl"
    assert main(["gen-bench", "--generator-config", str(gcfg), "--n", "2", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 2 and len(json.loads(lines[0])["evidences"]) == 3


def test_report_formats(bench, tmp_path):
    out = tmp_path / "r.json"
    assert main(["evaluate", "--bench", str(bench), "--format", "both", "--out", str(out)]) == 0
    assert out.exists() and out.with_suffix(".md").exists()
    assert main(["report", "--report", str(out), "--out", str(tmp_path / "rep")]) == 0
    for name in ("report.md", "aggregate.csv", "metrics.png"):
        assert (tmp_path / "rep" / name).stat().st_size > 0
    rows = (tmp_path / "rep" / "aggregate.csv").read_text().splitlines()
    assert rows[0].startswith("scope,mode") and len(rows) == 4


def test_ablate_two_counts(tmp_path, capsys):
    out = tmp_path / "abl"
    assert main(["ablate", "--n", "10", "--evidence-counts", "24,5", "--out", str(out)]) == 0
    rows = json.loads((out / "ablation.json").read_text())
    assert [r["evidences"] for r in rows] == [24, 5]
    assert set(rows[0]) == {"evidences", "ccr", "scr", "eur"}
    assert (out / "ablation.png").exists()
    table = capsys.readouterr().out
    assert table.splitlines()[0] == "| # of evidences | CCR | SCR | EUR |"
    first = (out / "ablation.md").read_bytes()
    assert main(["ablate", "--n", "10", "--evidence-counts", "24,5", "--out", str(out)]) == 0
    assert (out / "ablation.md").read_bytes() == first


def test_ablate_single_count_and_bad_counts(tmp_path):
    out = tmp_path / "abl"
    assert main(["ablate", "--n", "4", "--evidence-counts", "7", "--out", str(out)]) == 0
    assert len(json.loads((out / "ablation.json").read_text())) == 1
    assert main(["ablate", "--evidence-counts", "0", "--out", str(out)]) == 1
    assert main(["ablate", "--evidence-counts", "x", "--out", str(out)]) == 1


def _mui(tmp_path, *extra):
    out = tmp_path / "mui.json"
    rc = main(["mui-sim", "--records", "5", "--out", str(out), *extra])
    return rc, json.loads(out.read_text())


def test_mui_sim_two_ux_saves_the_base(tmp_path):
    rc, doc = _mui(tmp_path, "--ux", "chat:cite", "--ux", "recommend")
    assert rc == 0 and doc["leaked_pages"] == 0
    stats = doc["stats"]
    assert stats["saved_tokens"] == stats["prefill_tokens_naive"] - stats["prefill_tokens_shared"]
    assert stats["saved_tokens"] > 0


def test_mui_sim_single_ux_saves_nothing(tmp_path):
    rc, doc = _mui(tmp_path, "--ux", "chat:cite")
    assert rc == 0 and doc["stats"]["saved_tokens"] == 0


def test_mui_sim_budget_failure(tmp_path, capsys):
    rc, doc = _mui(tmp_path, "--budget-pages", "1")
    assert rc == 1
    assert doc["failed_requests"] == 5 and doc["leaked_pages"] == 0


def test_mui_sim_bad_ux_variant(tmp_path):
    assert main(["mui-sim", "--ux", "a:b"]) == 1


def test_pipeline_is_byte_identical(tmp_path):
    digests = []
    for run_dir in ("a", "b"):
        d = tmp_path / run_dir
        d.mkdir()
        assert main(["gen-bench", "--shape", "noisy", "--n", "15", "--seed", "21", "--out", str(d / "b.jsonl")]) == 0
        assert main(["evaluate", "--bench", str(d / "b.jsonl"), "--format", "both", "--jobs", "3",
                     "--out", str(d / "r.json")]) == 0
        assert main(["report", "--report", str(d / "r.json"), "--out", str(d / "rep")]) == 0
        digests.append({p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()})
    assert digests[0].keys() == digests[1].keys()
    assert digests[0] == digests[1]
