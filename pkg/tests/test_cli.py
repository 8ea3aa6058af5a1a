import json

import pytest

from faultobs.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_run_all_variants_writes_three_artifact_sets(tmp_path, capsys):
    code, out, _ = run(capsys, "run", "--variant", "all", "--requests", "3", "--records", "4",
                       "--out", str(tmp_path))
    assert code == 0
    names = {p.name for p in tmp_path.iterdir()}
    for v in ("none", "developer_driven", "platform_supported"):
        assert {f"traces-{v}.json", f"evidence-{v}.jsonl"} <= names
    assert {"report.json", "report.md"} <= names


def test_sampling_zero_gives_empty_trace_file(tmp_path, capsys):
    code, _, _ = run(capsys, "run", "--sampling", "0", "--variant", "platform_supported",
                     "--requests", "3", "--records", "2", "--out", str(tmp_path))
    assert code == 0
    assert (tmp_path / "traces-platform_supported.json").read_text() == "[]"


def test_same_seed_same_bytes(tmp_path, capsys):
    for d in ("a", "b"):
        assert run(capsys, "run", "--seed", "7", "--requests", "2", "--records", "3",
                   "--out", str(tmp_path / d))[0] == 0
    for p in (tmp_path / "a").iterdir():
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_tables_profile_filter(capsys):
    code, out, _ = run(capsys, "tables", "--profile", "aws_like")
    assert code == 0
    assert "| AWS | F1 | success | error | false | true |" in out
    assert "OWhisk" not in out


def test_tables_openwhisk_block_json(capsys):
    code, out, _ = run(capsys, "tables", "--profile", "openwhisk_like", "--format", "json")
    rows = json.loads(out)["response"]
    assert [(r["code"], r["body"], r["consistent"], r["unambiguous"]) for r in rows] == [
        ("error", "error", True, "true"),
        ("error", "error (TO)", True, "false"),
        ("error", "error (TO)", True, "false"),
        ("success", "success", False, "not_applicable"),
    ]


def test_tables_mode_filter(capsys):
    code, out, _ = run(capsys, "tables", "--mode", "developer_driven")
    assert code == 0
    assert "| F3 | true / false / false |" in out


def test_classify_outputs_verdicts(tmp_path, capsys):
    cfg = tmp_path / "exp.yaml"
    cfg.write_text("seed: 1\nworkload: {requests: 6, records: 2}\nfaults: {F1: 0.3, F4: 0.3}\n")
    code, out, _ = run(capsys, "classify", "--config", str(cfg), "--variant", "developer_driven",
                       "--format", "json")
    assert code == 0
    rows = json.loads(out)
    assert rows and {r["channel"] for r in rows} == {"response", "log", "trace"}


def test_export_traces_to_stdout(capsys):
    code, out, _ = run(capsys, "export-traces", "--requests", "1", "--records", "1")
    assert code == 0
    spans = json.loads(out)
    assert spans and all("traceId" in s for s in spans)


@pytest.mark.parametrize("argv", [
    ["run", "--sampling", "1.5"],
    ["run", "--config", "/definitely/missing.yaml"],
    ["run", "--requests", "-3"],
    ["frobnicate"],
    ["run", "--variant", "xray"],
])
def test_errors_are_single_line_and_nonzero(argv, capsys):
    code, _, err = run(capsys, *argv)
    assert code != 0
    assert err.startswith("error: ") and err.count("\n") == 1


def test_bad_config_content(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("faults: {F1: 0.8, F2: 0.8}\nworkload: {requests: 1, records: 1}\n")
    code, _, err = run(capsys, "run", "--config", str(p), "--out", str(tmp_path / "o"))
    assert code == 1 and "at most one fault" in err
    p.write_text("- just a list\n")
    code, _, err = run(capsys, "run", "--config", str(p))
    assert code == 1 and err.startswith("error: ")
