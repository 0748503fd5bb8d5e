import json
import shutil
import subprocess
from pathlib import Path

import pytest
import yaml

from doubles import EagerHost, LeakyProxy
from trustgate.agents import MobileAgentHost
from trustgate.cli import main

SCENARIOS = Path(__file__).parent.parent / "scenarios"


@pytest.fixture
def honest(tmp_path):
    path = tmp_path / "honest.yaml"
    shutil.copy(SCENARIOS / "honest.yaml", path)
    return path


def write_yaml(tmp_path, doc, name="s.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return path


def test_run_honest_writes_outputs(honest, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(honest), "--out-dir", str(out)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["ok"] and report["metrics"]["granted"] == 3
    metrics = json.loads((out / "honest.metrics.json").read_text())
    assert metrics["granted"] == 3 and metrics["trust_series"]["alice"][0] == 0.5
    assert (out / "honest.trace.jsonl").read_text().count("\n") == 72
    audit = [json.loads(line) for line in (out / "honest.audit.jsonl").read_text().splitlines()]
    assert {e["event"] for e in audit} == {"session_open"}


def test_run_missing_file(tmp_path):
    assert main(["run", str(tmp_path / "nope.yaml")]) == 2


def test_run_bad_yaml(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("domains: [unclosed")
    assert main(["run", str(path)]) == 2


def test_run_with_broken_agent_reports_violation(honest, capsys):
    assert main(["run", str(honest)], overrides={"host": EagerHost}) == 1
    report = json.loads(capsys.readouterr().out)
    assert report["violations"] and "ServiceCall" in report["violations"][0]


def test_run_with_gate_leak_reports_violation(honest, capsys):
    code = main(["run", str(honest), "--param", "user_threshold=0.9"],
                overrides={"proxy": LeakyProxy})
    assert code == 1
    assert any(v.startswith("gate:") for v in json.loads(capsys.readouterr().out)["violations"])


class ExplodingHost(MobileAgentHost):
    def on_migrate_out(self, env, net):
        raise RuntimeError("boom")


def test_internal_error_exit_code(honest):
    assert main(["run", str(honest)], overrides={"host": ExplodingHost}) == 3


def test_param_and_seed_overrides(honest, capsys):
    assert main(["run", str(honest), "--seed", "77", "--param", "user_threshold=0.9"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["seed"] == 77
    assert report["metrics"]["rejected_user_gate"] == 3


def test_bad_param_is_invalid_input(honest):
    assert main(["run", str(honest), "--param", "level"]) == 2
    assert main(["run", str(honest), "--param", "level=0"]) == 2
    assert main(["run", str(honest), "--param", "colour=1"]) == 2


def test_stdout_is_stable(honest, capsys):
    main(["run", str(honest)])
    first = capsys.readouterr().out
    main(["run", str(honest)])
    assert capsys.readouterr().out == first


def test_parallel_jobs_match_serial(tmp_path, capsys):
    paths = []
    for name in ("honest", "attacker", "two_subsidiaries"):
        dst = tmp_path / f"{name}.yaml"
        shutil.copy(SCENARIOS / f"{name}.yaml", dst)
        paths.append(str(dst))
    assert main(["run", *paths]) == 0
    serial = capsys.readouterr().out
    assert main(["run", "--jobs", "2", *paths]) == 0
    assert capsys.readouterr().out == serial


# --- replay ---------------------------------------------------------------------

@pytest.fixture
def trace_file(honest, tmp_path):
    out = tmp_path / "out"
    main(["run", str(honest), "--out-dir", str(out)])
    return out / "honest.trace.jsonl"


def test_replay_conformant_trace(trace_file, capsys):
    capsys.readouterr()
    assert main(["replay", str(trace_file)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["ok"] and set(report["verdicts"].values()) == {"conformant"}
    assert report["metrics"]["granted"] == 3


def test_replay_twice_identical(trace_file, capsys):
    capsys.readouterr()
    main(["replay", str(trace_file)])
    first = capsys.readouterr().out
    main(["replay", str(trace_file)])
    assert capsys.readouterr().out == first


def test_replay_garbled_line_is_invalid_input(trace_file):
    lines = trace_file.read_text().splitlines()
    lines[5] = lines[5][:-7]
    trace_file.write_text("\n".join(lines) + "\n")
    assert main(["replay", str(trace_file)]) == 2


def test_replay_rewritten_line_is_violation(trace_file, capsys):
    lines = trace_file.read_text().splitlines()
    idx = next(i for i, line in enumerate(lines)
               if '"Sent"' in line and '"TrustReplyUser"' in line)
    for i in range(idx, idx + 2):  # the send and its delivery
        lines[i] = lines[i].replace('"note":"trusted"', '"note":"not_trusted"')
    trace_file.write_text("\n".join(lines) + "\n")
    capsys.readouterr()
    assert main(["replay", str(trace_file)]) == 1
    report = json.loads(capsys.readouterr().out)
    assert any("MigrateOut" in v for v in report["violations"])


def test_replay_truncated_trace_is_violation(trace_file):
    lines = trace_file.read_text().splitlines()
    trace_file.write_text("\n".join(lines[:30]) + "\n")
    assert main(["replay", str(trace_file)]) == 1


def test_replay_missing_file(tmp_path):
    assert main(["replay", str(tmp_path / "none.jsonl")]) == 2


# --- validate -------------------------------------------------------------------

def test_validate_shipped_scenarios():
    for path in sorted(SCENARIOS.glob("*.yaml")):
        assert main(["validate", str(path)]) == 0, path


def test_validate_unknown_domain_names_user(tmp_path, capsys):
    doc = yaml.safe_load((SCENARIOS / "honest.yaml").read_text())
    doc["users"].append({"id": "zed", "domain": "nowhere"})
    doc["users"].append({"id": "yan", "domain": "elsewhere"})
    assert main(["validate", str(write_yaml(tmp_path, doc))]) == 2
    err = capsys.readouterr().err
    assert "'zed'" in err and "'yan'" in err


def test_validate_unknown_top_level_key(tmp_path, capsys):
    doc = yaml.safe_load((SCENARIOS / "honest.yaml").read_text())
    doc["extras"] = True
    assert main(["validate", str(write_yaml(tmp_path, doc))]) == 2
    assert "extras" in capsys.readouterr().err


def test_no_command_is_invalid_input():
    assert main([]) == 2


def test_console_script_installed(honest):
    exe = shutil.which("trustgate")
    if exe is None:
        pytest.skip("console script not on PATH")
    proc = subprocess.run([exe, "validate", str(honest)], capture_output=True, text=True)
    assert proc.returncode == 0
