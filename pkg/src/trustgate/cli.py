"""Command-line entry point: ``trustgate run|replay|validate``.

Exit codes: 0 success, 1 a security property or conformance check failed,
2 invalid input, 3 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Mapping, Sequence

import yaml

from .conformance import IncompleteTrace, check_conformance
from .harness import (
    COUNT_FIELDS, InvalidScenario, conservation_holds, gate_violations, network_violations,
    parse_scenario, run_scenario, trace_metrics,
)
from .protocol import MalformedTrace, Trace
from .simnet import FaultPlan

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_INPUT = 2
EXIT_INTERNAL = 3

log = logging.getLogger("trustgate")


class InputError(Exception):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def load_scenario_doc(path: str | Path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise InputError(f"{path}: not valid YAML: {exc}") from exc


def _apply_overrides(doc: dict, seed: int | None, params: Sequence[str]) -> dict:
    if not isinstance(doc, dict):
        return doc
    doc = dict(doc)
    if seed is not None:
        doc["seed"] = seed
    if params:
        merged = dict(doc.get("params") or {})
        for item in params:
            key, sep, raw = item.partition("=")
            if not sep or not key:
                raise InputError(f"--param expects key=value, got {item!r}")
            merged[key.strip()] = yaml.safe_load(raw)
        doc["params"] = merged
    return doc


def _run_one(path: str, seed: int | None, params: Sequence[str], out_dir: str | None,
             overrides: Mapping[str, type] | None = None) -> tuple[int, dict]:
    doc = _apply_overrides(load_scenario_doc(path), seed, params)
    scenario = parse_scenario(doc)
    result = run_scenario(scenario, overrides)
    counts = {k: result.metrics[k] for k in COUNT_FIELDS}
    counts["users_removed"] = result.metrics["users_removed"]
    report = {
        "scenario": str(path),
        "seed": scenario.seed,
        "ok": result.ok,
        "violations": result.violations,
        "metrics": counts,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = Path(path).stem
        (out / f"{stem}.trace.jsonl").write_text(result.trace.to_jsonl(), encoding="utf-8")
        (out / f"{stem}.metrics.json").write_text(
            json.dumps(result.metrics, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        audit = [e for p in result.world.proxies.values() for e in p.audit]
        (out / f"{stem}.audit.jsonl").write_text(
            "".join(_dump(e) + "\n" for e in audit), encoding="utf-8")
    return (EXIT_OK if result.ok else EXIT_VIOLATION), report


def _run_job(args) -> tuple[int, dict]:
    path, seed, params, out_dir = args
    try:
        return _run_one(path, seed, params, out_dir)
    except (InputError, InvalidScenario) as exc:
        return EXIT_INPUT, {"scenario": path, "error": str(exc)}


def cmd_run(ns, overrides=None) -> int:
    if ns.jobs > 1 and len(ns.scenarios) > 1 and overrides is None:
        jobs = [(p, ns.seed, ns.param, ns.out_dir) for p in ns.scenarios]
        with ProcessPoolExecutor(max_workers=ns.jobs) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = []
        for p in ns.scenarios:
            try:
                results.append(_run_one(p, ns.seed, ns.param, ns.out_dir, overrides))
            except (InputError, InvalidScenario) as exc:
                results.append((EXIT_INPUT, {"scenario": p, "error": str(exc)}))
    for code, report in results:
        print(_dump(report))
        if "error" in report:
            print(f"{report['scenario']}: invalid input: {report['error']}", file=sys.stderr)
            continue
        m = report["metrics"]
        status = "ok" if code == EXIT_OK else f"{len(report['violations'])} violation(s)"
        print(f"{report['scenario']}: {status}; scheduled={m['scheduled']} "
              f"granted={m['granted']} breaches={m['breaches_detected']} "
              f"removed={m['users_removed']}", file=sys.stderr)
        for v in report["violations"]:
            print(f"  {v}", file=sys.stderr)
    return max(code for code, _ in results) if results else EXIT_OK


def replay_report(trace: Trace) -> tuple[int, dict]:
    violations: list[str] = []
    verdicts: dict[str, str] = {}
    try:
        for req_id, v in check_conformance(trace).items():
            verdicts[req_id] = "conformant" if v.ok else v.describe()
            if not v.ok:
                violations.append(v.describe())
    except IncompleteTrace as exc:
        violations.append(f"liveness: {exc}")
    violations += gate_violations(trace)
    violations += network_violations(trace, FaultPlan())
    metrics = trace_metrics(trace)
    if not trace.truncated and not conservation_holds(metrics):
        violations.append("metrics: granted + rejections + timeouts != scheduled")
    report = {"verdicts": verdicts, "metrics": metrics, "violations": violations,
              "ok": not violations}
    return (EXIT_OK if not violations else EXIT_VIOLATION), report


def cmd_replay(ns) -> int:
    try:
        text = Path(ns.trace).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"cannot read {ns.trace}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_INPUT
    except UnicodeDecodeError:
        print(f"{ns.trace}: not UTF-8", file=sys.stderr)
        return EXIT_INPUT
    try:
        trace = Trace.from_jsonl(text)
    except MalformedTrace as exc:
        print(f"{ns.trace}: malformed trace: {exc}", file=sys.stderr)
        return EXIT_INPUT
    code, report = replay_report(trace)
    print(_dump(report))
    for v in report["violations"]:
        print(f"  {v}", file=sys.stderr)
    return code


def cmd_validate(ns) -> int:
    try:
        parse_scenario(load_scenario_doc(ns.scenario))
    except InputError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INPUT
    except InvalidScenario as exc:
        for d in exc.diagnostics:
            print(f"{ns.scenario}: {d}", file=sys.stderr)
        return EXIT_INPUT
    print(f"{ns.scenario}: ok", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trustgate",
                                     description="Two-tier agent trust gate simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate scenarios and check every invariant")
    run.add_argument("scenarios", nargs="+", help="scenario YAML file(s)")
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--out-dir", help="write trace, metrics and audit log here")
    run.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                     help="override a trust parameter (repeatable)")
    run.add_argument("--jobs", type=int, default=1, help="run scenarios in parallel")

    replay = sub.add_parser("replay", help="re-check a stored JSON-lines trace")
    replay.add_argument("trace")

    validate = sub.add_parser("validate", help="check a scenario file without running it")
    validate.add_argument("scenario")
    return parser


def main(argv: Sequence[str] | None = None, overrides: Mapping[str, type] | None = None) -> int:
    level = os.environ.get("TRUSTGATE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        if ns.command == "run":
            return cmd_run(ns, overrides)
        if ns.command == "replay":
            return cmd_replay(ns)
        return cmd_validate(ns)
    except Exception:  # noqa: BLE001 - last-resort guard for the exit-code contract
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
