from __future__ import annotations

import json

import pytest

from veriflow.cli import main

WORKFLOW_DOC = {
    "nodes": [
        {
            "id": "s1",
            "objective": "Collect the inputs.",
            "agent": "Agent 0",
            "category": "instruction",
            "uses_tools": False,
        },
        {
            "id": "s2",
            "objective": "Combine them.",
            "agent": "Agent 1",
            "category": "instruction",
            "uses_tools": False,
        },
        {
            "id": "s3",
            "objective": "Write the final answer.",
            "agent": "Agent 2",
            "category": "instruction",
            "uses_tools": False,
        },
    ],
    "edges": [["s1", "s2"], ["s2", "s3"]],
}


def write_workflow(tmp_path):
    path = tmp_path / "flow.json"
    path.write_text(json.dumps(WORKFLOW_DOC))
    return path


# --- run ---------------------------------------------------------------------


def test_run_bundled_scenario(tmp_path, capsys):
    out = tmp_path / "artifacts"
    assert main(["run", "chain3", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "ok"
    assert summary["mode"] == "speculative"  # the scenario's own default
    assert summary["t_exec"] == pytest.approx(3.0)
    lines = (out / "trace.jsonl").read_text().splitlines()
    events = [json.loads(line) for line in lines]
    assert events[-1]["event"] == "summary"
    assert {e["node"] for e in events[:-1]} <= {"n1", "n2", "n3"}
    ledger = json.loads((out / "ledger.json").read_text())
    assert isinstance(ledger, list) and ledger
    assert "chain3" in capsys.readouterr().out


def test_run_mode_noverify_spelling(tmp_path, capsys):
    out = tmp_path / "artifacts"
    assert main(["run", "chain3", "--mode", "noverify", "--out", str(out)]) == 0
    ledger = json.loads((out / "ledger.json").read_text())
    assert all(record["scope"] == "exec" for record in ledger)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["mode"] == "no_verify"
    capsys.readouterr()


def test_run_missing_file_is_config_error(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.json")]) == 2
    assert main(["run", "not-a-scenario"]) == 2
    capsys.readouterr()


def test_run_same_seed_same_trace_bytes(tmp_path, capsys):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "chain3_rollback", "--seed", "5", "--out", str(out_a)]) == 0
    assert main(["run", "chain3_rollback", "--seed", "5", "--out", str(out_b)]) == 0
    assert (out_a / "trace.jsonl").read_bytes() == (out_b / "trace.jsonl").read_bytes()
    assert (out_a / "summary.json").read_bytes() == (out_b / "summary.json").read_bytes()
    capsys.readouterr()


def test_run_workflow_document_with_builtin_executor(tmp_path, capsys):
    flow = write_workflow(tmp_path)
    out = tmp_path / "artifacts"
    assert main(["run", str(flow), "--executor", "echo", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "ok"
    assert summary["mode"] == "sequential"  # bare workflows default to sequential
    events = [json.loads(line) for line in (out / "trace.jsonl").read_text().splitlines()]
    assert {e["node"] for e in events if e.get("node")} <= {"s1", "s2", "s3"}
    capsys.readouterr()


def test_run_config_document(tmp_path, capsys):
    flow = write_workflow(tmp_path)
    config = {
        "workflow": str(flow),
        "executor": "echo",
        "mode": "speculative",
        "placement_k": 1,
        "seed": 3,
        "latency_estimates": {"s1": 1.0, "s2": 1.0, "s3": 1.0},
        "verifier_latency_estimates": {"s3": 2.0},
    }
    config_path = tmp_path / "run.json"
    config_path.write_text(json.dumps(config))
    out = tmp_path / "artifacts"
    assert main(["run", str(config_path), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "ok" and summary["mode"] == "speculative"
    assert summary["seed"] == 3
    capsys.readouterr()


def test_run_failure_is_recorded_and_nonzero(tmp_path, capsys):
    flow = write_workflow(tmp_path)
    script = {"s1": [{"output": "only one answer"}]}  # s2/s3 will starve
    script_path = tmp_path / "script.json"
    script_path.write_text(json.dumps(script))
    out = tmp_path / "artifacts"
    code = main(
        [
            "run",
            str(flow),
            "--executor",
            f"script:{script_path}",
            "--mode",
            "noverify",
            "--out",
            str(out),
        ]
    )
    assert code == 1
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "failed"
    assert "ScriptExhausted" in summary["error"]
    capsys.readouterr()


def test_bad_budget_flag_rejected(tmp_path, capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["run", "chain3", "--budget", "-4", "--out", str(tmp_path / "x")])
    assert excinfo.value.code == 2
    capsys.readouterr()


# --- sweep ---------------------------------------------------------------------


def read_sweep(path):
    header, *rows = path.read_text().strip().splitlines()
    columns = header.split("\t")
    return [dict(zip(columns, row.split("\t"))) for row in rows]


def test_sweep_budget_zero_matches_sequential(tmp_path, capsys):
    out = tmp_path / "sweep.tsv"
    code = main(
        [
            "sweep",
            "--scenario",
            "chain3",
            "--budgets",
            "none,0",
            "--match-rates",
            "1.0",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    rows = read_sweep(out)
    assert len(rows) == 2
    unlimited = next(r for r in rows if r["budget"] == "none")
    disabled = next(r for r in rows if r["budget"] == "0")
    assert unlimited["mode"] == "speculative"
    assert float(unlimited["t_exec"]) == pytest.approx(3.0)
    # a perfect verifier never wastes speculative work
    assert float(unlimited["wasted_cost"]) == 0.0
    assert disabled["mode"] == "sequential"
    assert float(disabled["t_exec"]) == pytest.approx(5.0)
    assert disabled["n_spec"] == "-"
    capsys.readouterr()


def test_sweep_verifier_latency_grows_spec_sets(tmp_path, capsys):
    out = tmp_path / "sweep.tsv"
    code = main(
        [
            "sweep",
            "--scenario",
            "chain3",
            "--vrf-scales",
            "1.0,2.0,4.0",
            "--match-rates",
            "1.0",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    rows = read_sweep(out)
    sizes = [int(r["n_spec_total"]) for r in rows]
    assert sizes == sorted(sizes)  # longer windows admit weakly more nodes
    assert sizes[0] < sizes[-1]
    capsys.readouterr()


# --- faults ----------------------------------------------------------------------


def test_faults_campaign_report(tmp_path, capsys):
    flow = write_workflow(tmp_path)
    out = tmp_path / "report.jsonl"
    code = main(
        [
            "faults",
            "--workflow",
            str(flow),
            "--trials",
            "5",
            "--seed",
            "11",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    records = [json.loads(line) for line in out.read_text().splitlines()]
    trials = [r for r in records if "summary" not in r]
    summary = records[-1]
    assert len(trials) == 15  # 5 trials x 3 nodes
    assert summary["summary"] is True
    assert set(summary["per_node"]) == {"s1", "s2", "s3"}
    # reruns with the same seed reproduce the report byte for byte
    out2 = tmp_path / "report2.jsonl"
    main(["faults", "--workflow", str(flow), "--trials", "5", "--seed", "11", "--out", str(out2)])
    assert out.read_bytes() == out2.read_bytes()
    capsys.readouterr()


def test_faults_missing_workflow(tmp_path, capsys):
    assert main(["faults", "--workflow", str(tmp_path / "none.json")]) == 2
    capsys.readouterr()


# --- selector training -------------------------------------------------------------


def test_train_and_eval_selector(tmp_path, capsys):
    ckpt = tmp_path / "selector.json"
    code = main(
        [
            "train-selector",
            "--synthetic",
            "200",
            "--steps",
            "150",
            "--out",
            str(ckpt),
        ]
    )
    assert code == 0
    assert ckpt.exists()
    train_out = capsys.readouterr().out
    assert "held-out argmax accuracy" in train_out

    code = main(["eval-selector", "--checkpoint", str(ckpt), "--synthetic", "100"])
    assert code == 0
    eval_out = capsys.readouterr().out
    assert "argmax_accuracy" in eval_out
    accuracy = float(
        next(line for line in eval_out.splitlines() if "argmax_accuracy" in line).split()[-1]
    )
    assert 0.0 <= accuracy <= 1.0


def test_eval_selector_missing_checkpoint(tmp_path, capsys):
    assert main(["eval-selector", "--checkpoint", str(tmp_path / "none.json")]) == 2
    capsys.readouterr()


# --- similarity calibration ----------------------------------------------------------


def test_calibrate_sim_bundled_data(tmp_path, capsys):
    out = tmp_path / "thresholds.tsv"
    assert main(["calibrate-sim", "--out", str(out)]) == 0
    header, *rows = out.read_text().strip().splitlines()
    assert header.split("\t")[:3] == ["category", "metric", "n"]
    parsed = [dict(zip(header.split("\t"), row.split("\t"))) for row in rows]
    rouge_rows = [r for r in parsed if r["metric"] == "rouge_l"]
    assert {r["category"] for r in rouge_rows} >= {"instruction", "code", "math", "tool"}
    for row in rouge_rows:
        assert 0.0 <= float(row["threshold"]) <= 1.0
        assert 0.5 <= float(row["auc"]) <= 1.0
    capsys.readouterr()
