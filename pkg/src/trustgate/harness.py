"""Scenarios, behaviour profiles, the reference trust oracle and run checks."""
from __future__ import annotations

import hashlib
import math
import random
from collections import Counter
from dataclasses import dataclass, field, fields, asdict
from typing import Any, Mapping

from .agents import (
    CspService, DomainDirectory, DomainTrustAgent, InterfaceAgent, LifeState, MobileAgentHost,
    ProxyAgent, Timing, TrustUserAgent, DTA,
)
from .conformance import IncompleteTrace, Verdict, check_conformance, lifecycles
from .protocol import (
    DELIVERED, DROPPED, DUPLICATED, EXPIRED, SENT, Keyring, MsgType, Trace,
)
from .simnet import FaultPlan, Network
from .trust import ActionKind, TrustError, TrustParams

SCHEMA_VERSION = 1
ORACLE_TOLERANCE = 1e-12


class InvalidScenario(Exception):
    def __init__(self, diagnostics: list[str]):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


# --- behaviour profiles -----------------------------------------------------


@dataclass(frozen=True)
class BehaviorProfile:
    """``honest``: always positive. ``sloppy``: wrong with probability ``p``.
    ``attacker``: ``k`` honest requests, then malicious with probability ``q``.
    """

    kind: str = "honest"
    p: float = 0.0
    q: float = 0.0
    k: int = 0

    def __post_init__(self):
        if self.kind not in ("honest", "sloppy", "attacker"):
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if not (0.0 <= self.p <= 1.0 and 0.0 <= self.q <= 1.0):
            raise ValueError("profile probabilities must lie in [0, 1]")
        if isinstance(self.k, bool) or not isinstance(self.k, int) or self.k < 0:
            raise ValueError("warm-up k must be a non-negative integer")

    def to_dict(self) -> dict:
        if self.kind == "honest":
            return {"kind": "honest"}
        if self.kind == "sloppy":
            return {"kind": "sloppy", "p": self.p}
        return {"kind": "attacker", "q": self.q, "k": self.k}


HONEST = BehaviorProfile()


def generate_behavior(profile: BehaviorProfile, seed: int, n: int) -> list[ActionKind]:
    if n < 0:
        raise ValueError("n must be >= 0")
    rng = random.Random(seed)
    out = []
    for i in range(n):
        if profile.kind == "honest":
            out.append(ActionKind.POSITIVE)
        elif profile.kind == "sloppy":
            out.append(ActionKind.WRONG if rng.random() < profile.p else ActionKind.POSITIVE)
        elif i < profile.k:
            out.append(ActionKind.POSITIVE)
        else:
            out.append(ActionKind.MALICIOUS if rng.random() < profile.q else ActionKind.POSITIVE)
    return out


def derive_seed(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{seed}|{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


# --- oracle -----------------------------------------------------------------


def trust_oracle(actions, params: TrustParams) -> list[float]:
    """Trust series for an action sequence, re-derived without the trust module.

    Element 0 is the initial trust; element i is the value after action i.
    """
    weight = {"positive": params.weight_positive, "wrong": params.weight_wrong,
              "malicious": params.weight_malicious}
    alpha = params.smoothing_alpha
    value = params.initial_trust
    series = [value]
    bad = 0
    for n, action in enumerate(actions, start=1):
        name = getattr(action, "value", action)
        if name != "positive":
            bad += 1
        pa = (1.0 - bad / n) * weight[name] ** params.level
        value = alpha * value + (1.0 - alpha) * pa
        series.append(value)
    return series


# --- scenarios --------------------------------------------------------------


@dataclass(frozen=True)
class UserSpec:
    user_id: str
    domain: str
    password: str = "secret"
    profile: BehaviorProfile = HONEST
    requests: int = 0
    start: int = 0
    resource: str = "records"
    submitted_password: str | None = None


@dataclass(frozen=True)
class Scenario:
    domains: dict[str, float]
    users: tuple[UserSpec, ...]
    params: TrustParams = TrustParams()
    faults: FaultPlan = FaultPlan()
    timing: Timing = Timing()
    seed: int = 0
    catalog: dict[str, str] = field(default_factory=lambda: {"records": "record set"})
    max_time: int | None = None

    def with_seed(self, seed: int) -> "Scenario":
        plan = FaultPlan(seed, self.faults.drop_prob, self.faults.dup_prob,
                         self.faults.tamper_prob, self.faults.latency_min, self.faults.latency_max)
        return Scenario(self.domains, self.users, self.params, plan, self.timing, seed,
                        self.catalog, self.max_time)

    def to_dict(self) -> dict:
        defaults = TrustParams()
        params = {f.name: getattr(self.params, f.name) for f in fields(TrustParams)
                  if getattr(self.params, f.name) != getattr(defaults, f.name)}
        out: dict[str, Any] = {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "params": params,
            "timing": asdict(self.timing),
            "faults": {k: v for k, v in asdict(self.faults).items() if k != "seed"},
            "domains": [{"id": d, "threshold": t} for d, t in self.domains.items()],
            "users": [],
            "catalog": dict(self.catalog),
        }
        for u in self.users:
            entry = {"id": u.user_id, "domain": u.domain, "password": u.password,
                     "profile": u.profile.to_dict(), "requests": u.requests, "start": u.start,
                     "resource": u.resource}
            if u.submitted_password is not None:
                entry["submitted_password"] = u.submitted_password
            out["users"].append(entry)
        if self.max_time is not None:
            out["max_time"] = self.max_time
        return out


_TOP_KEYS = {"schema_version", "seed", "params", "timing", "faults", "domains", "users",
             "catalog", "max_time"}
_USER_KEYS = {"id", "domain", "password", "profile", "requests", "start", "resource",
              "submitted_password"}
_DOMAIN_KEYS = {"id", "threshold"}
_PROFILE_KEYS = {"kind", "p", "q", "k"}
_FAULT_KEYS = {"drop_prob", "dup_prob", "tamper_prob", "latency_min", "latency_max"}
_TIMING_KEYS = {"timeout", "think_time"}


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return (isinstance(v, (int, float)) and not isinstance(v, bool)) and math.isfinite(v)


def parse_scenario(doc: Any) -> Scenario:
    """Validate a scenario document and build a :class:`Scenario`.

    Every problem found is reported together in one :class:`InvalidScenario`.
    """
    diags: list[str] = []
    if not isinstance(doc, Mapping):
        raise InvalidScenario(["scenario must be a mapping"])
    for key in sorted(set(doc) - _TOP_KEYS, key=str):
        diags.append(f"unknown top-level key {key!r}")
    if doc.get("schema_version") != SCHEMA_VERSION:
        diags.append(f"schema_version must be {SCHEMA_VERSION}")
    seed = doc.get("seed", 0)
    if not _is_int(seed) or seed < 0:
        diags.append("seed must be a non-negative integer")
        seed = 0

    def section(name, allowed):
        sec = doc.get(name, {})
        if sec is None:
            sec = {}
        if not isinstance(sec, Mapping):
            diags.append(f"{name} must be a mapping")
            return {}
        for key in sorted(set(sec) - allowed, key=str):
            diags.append(f"{name}: unknown key {key!r}")
        return {k: v for k, v in sec.items() if k in allowed}

    params_doc = section("params", {f.name for f in fields(TrustParams)})
    params = TrustParams()
    try:
        params = TrustParams(**params_doc)
    except (ValueError, TypeError, TrustError) as exc:
        diags.append(f"params: {exc}")

    timing_doc = section("timing", _TIMING_KEYS)
    timing = Timing()
    if all(_is_int(v) and v >= 1 for v in timing_doc.values()):
        timing = Timing(**timing_doc)
    else:
        diags.append("timing: timeout and think_time must be integers >= 1")

    faults_doc = section("faults", _FAULT_KEYS)
    plan = FaultPlan(seed)
    bad_types = [k for k, v in faults_doc.items()
                 if not (_is_int(v) if k.startswith("latency") else _is_num(v))]
    if bad_types:
        diags.append(f"faults: wrong value type for {', '.join(sorted(bad_types))}")
    else:
        try:
            plan = FaultPlan(seed, **faults_doc)
        except ValueError as exc:
            diags.append(f"faults: {exc}")
    if 2 * plan.latency_max >= timing.timeout:
        diags.append("timing: timeout must exceed twice faults.latency_max")

    domains: dict[str, float] = {}
    dom_list = doc.get("domains")
    if not isinstance(dom_list, list) or not dom_list:
        diags.append("domains must be a non-empty list")
        dom_list = []
    for i, d in enumerate(dom_list):
        if not isinstance(d, Mapping):
            diags.append(f"domains[{i}] must be a mapping")
            continue
        for key in sorted(set(d) - _DOMAIN_KEYS, key=str):
            diags.append(f"domains[{i}]: unknown key {key!r}")
        did = d.get("id")
        if not isinstance(did, str) or not did:
            diags.append(f"domains[{i}]: id must be a non-empty string")
            continue
        if did in domains:
            diags.append(f"domain {did!r} declared twice")
        thr = d.get("threshold", params.trusted_min)
        if not _is_num(thr) or not 0.0 <= thr <= 1.0:
            diags.append(f"domain {did!r}: threshold must lie in [0, 1]")
            thr = 0.0
        domains[did] = float(thr)

    users: list[UserSpec] = []
    seen_users: set[str] = set()
    user_list = doc.get("users", [])
    if not isinstance(user_list, list):
        diags.append("users must be a list")
        user_list = []
    for i, u in enumerate(user_list):
        if not isinstance(u, Mapping):
            diags.append(f"users[{i}] must be a mapping")
            continue
        uid = u.get("id")
        label = f"user {uid!r}" if isinstance(uid, str) and uid else f"users[{i}]"
        for key in sorted(set(u) - _USER_KEYS, key=str):
            diags.append(f"{label}: unknown key {key!r}")
        if not isinstance(uid, str) or not uid:
            diags.append(f"{label}: id must be a non-empty string")
            continue
        if uid in seen_users:
            diags.append(f"{label}: declared twice")
        seen_users.add(uid)
        dom = u.get("domain")
        if dom not in domains:
            diags.append(f"{label}: references unknown domain {dom!r}")
        for key in ("password", "resource", "submitted_password"):
            if key in u and not isinstance(u[key], str):
                diags.append(f"{label}: {key} must be a string")
        for key in ("requests", "start"):
            if key in u and not (_is_int(u[key]) and u[key] >= 0):
                diags.append(f"{label}: {key} must be a non-negative integer")
        prof_doc = u.get("profile", {"kind": "honest"})
        profile = HONEST
        if not isinstance(prof_doc, Mapping):
            diags.append(f"{label}: profile must be a mapping")
        else:
            extra = set(prof_doc) - _PROFILE_KEYS
            if extra:
                diags.append(f"{label}: unknown profile keys {sorted(extra)}")
            try:
                profile = BehaviorProfile(**{k: v for k, v in prof_doc.items()
                                             if k in _PROFILE_KEYS})
            except (ValueError, TypeError) as exc:
                diags.append(f"{label}: profile: {exc}")
        try:
            users.append(UserSpec(
                uid, str(dom), str(u.get("password", "secret")), profile,
                int(u.get("requests", 0)) if _is_int(u.get("requests", 0)) else 0,
                int(u.get("start", 0)) if _is_int(u.get("start", 0)) else 0,
                str(u.get("resource", "records")),
                u.get("submitted_password") if isinstance(u.get("submitted_password"), str)
                else None))
        except (TypeError, ValueError) as exc:
            diags.append(f"{label}: {exc}")

    catalog = doc.get("catalog", {"records": "record set"})
    if not isinstance(catalog, Mapping) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in catalog.items()):
        diags.append("catalog must map strings to strings")
        catalog = {}
    max_time = doc.get("max_time")
    if max_time is not None and not (_is_int(max_time) and max_time >= 0):
        diags.append("max_time must be a non-negative integer")
    if diags:
        raise InvalidScenario(diags)
    return Scenario(domains, tuple(users), params, plan, timing, seed, dict(catalog), max_time)


# --- running ----------------------------------------------------------------


@dataclass
class World:
    net: Network
    interfaces: dict[str, InterfaceAgent]
    proxies: dict[str, ProxyAgent]
    tuas: dict[str, TrustUserAgent]
    directories: dict[str, DomainDirectory]
    dta: DomainTrustAgent
    csp: CspService
    host: MobileAgentHost
    outcomes: dict[str, ActionKind]


def build_world(scenario: Scenario, overrides: Mapping[str, type] | None = None) -> World:
    """Wire up every agent for ``scenario``.

    ``overrides`` swaps an agent class by role (``"proxy"``, ``"tua"``,
    ``"dta"``, ``"host"``, ``"csp"``, ``"interface"``); used for test doubles.
    """
    ov = dict(overrides or {})
    net = Network(scenario.faults)
    keyring = Keyring(hashlib.sha256(f"trustgate|{scenario.seed}".encode()).digest())
    params, timing = scenario.params, scenario.timing

    dta = ov.get("dta", DomainTrustAgent)(keyring, params, scenario.domains)
    outcomes: dict[str, ActionKind] = {}
    for u in scenario.users:
        seq = generate_behavior(u.profile, derive_seed(scenario.seed, u.user_id), u.requests)
        for i, kind in enumerate(seq):
            outcomes[f"{u.user_id}#{i}"] = kind
    csp = ov.get("csp", CspService)(keyring, dta, scenario.catalog, outcomes)
    host = ov.get("host", MobileAgentHost)(keyring, timing)
    for agent in (dta, csp, host):
        net.register(agent.endpoint_id, agent)

    directories, proxies, tuas = {}, {}, {}
    for d in scenario.domains:
        directories[d] = DomainDirectory(d)
        proxies[d] = ov.get("proxy", ProxyAgent)(d, keyring, directories[d], timing)
        tuas[d] = ov.get("tua", TrustUserAgent)(d, keyring, directories[d], params)
        net.register(proxies[d].endpoint_id, proxies[d])
        net.register(tuas[d].endpoint_id, tuas[d])

    interfaces = {}
    for u in scenario.users:
        proxies[u.domain].add_user(u.user_id, u.password)
        sent_pw = u.password if u.submitted_password is None else u.submitted_password
        iface = ov.get("interface", InterfaceAgent)(u.user_id, u.domain, sent_pw, keyring, timing,
                                                    {"profile": u.profile.kind})
        interfaces[u.user_id] = iface
        net.register(iface.endpoint_id, iface)
        iface.schedule([u.resource] * u.requests, net, u.start)
    return World(net, interfaces, proxies, tuas, directories, dta, csp, host, outcomes)


TERMINAL_CATEGORIES = {
    "auth": "rejected_auth", "user_gate": "rejected_user_gate",
    "domain_gate": "rejected_domain_gate", "session_expired": "rejected_session",
    "timeout": "timeouts",
}
COUNT_FIELDS = ("scheduled", "granted", "rejected_auth", "rejected_user_gate",
                "rejected_domain_gate", "rejected_session", "timeouts", "breaches_detected",
                "envelopes_sent", "envelopes_delivered", "envelopes_dropped",
                "envelopes_duplicated")


def trace_metrics(trace: Trace) -> dict[str, int]:
    """Counters recoverable from a trace alone."""
    m = dict.fromkeys(COUNT_FIELDS, 0)
    for rec in trace:
        if rec.event == SENT:
            m["envelopes_sent"] += 1
            if rec.msg_type == MsgType.AUTH_SUBMIT.value:
                m["scheduled"] += 1
            elif rec.msg_type == MsgType.BREACH_NOTICE.value:
                m["breaches_detected"] += 1
        elif rec.event == DELIVERED:
            m["envelopes_delivered"] += 1
        elif rec.event == DROPPED:
            m["envelopes_dropped"] += 1
        elif rec.event == DUPLICATED:
            m["envelopes_duplicated"] += 1
    for req_id, events in lifecycles(trace).items():
        for rec in events:
            if rec.event == EXPIRED:
                m["timeouts"] += 1
                break
            if rec.event == DELIVERED and rec.receiver.startswith("iface:"):
                if rec.msg_type == MsgType.DELIVER_RESULT.value:
                    m["granted"] += 1
                    break
                if rec.msg_type == MsgType.REJECT.value:
                    m[TERMINAL_CATEGORIES[rec.note]] += 1
                    break
    return m


def conservation_holds(m: Mapping[str, int]) -> bool:
    done = m["granted"] + sum(m[c] for c in TERMINAL_CATEGORIES.values())
    return done == m["scheduled"]


@dataclass
class ScenarioResult:
    scenario: Scenario
    world: World
    trace: Trace
    metrics: dict[str, Any]
    verdicts: dict[str, Verdict]
    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations


def world_metrics(world: World) -> dict[str, Any]:
    series = {u: list(r.series) for tua in world.tuas.values() for u, r in sorted(tua.users.items())}
    return {
        "users_removed": sum(len(t.removals) for t in world.tuas.values()),
        "trust_series": dict(sorted(series.items())),
        "domain_series": {d: list(r.series) for d, r in sorted(world.dta.domains.items())},
    }


def run_scenario(scenario: Scenario, overrides: Mapping[str, type] | None = None) -> ScenarioResult:
    world = build_world(scenario, overrides)
    trace = world.net.run_until_quiescent(scenario.max_time)
    metrics: dict[str, Any] = trace_metrics(trace)
    metrics.update(world_metrics(world))
    violations: list[str] = []
    try:
        verdicts = check_conformance(trace)
    except IncompleteTrace as exc:
        verdicts = {}
        violations.append(f"liveness: {exc}")
    violations += [v.describe() for v in verdicts.values() if not v.ok]
    violations += check_invariants(scenario, world, trace, metrics)
    return ScenarioResult(scenario, world, trace, metrics, verdicts, violations)


# --- invariants -------------------------------------------------------------


def gate_violations(trace: Trace) -> list[str]:
    """MigrateOut for a request the TUA denied, or ServiceCall for one the DTA denied."""
    denied_user = {r.req_id for r in trace if r.event == SENT and r.note == "not_trusted"
                   and r.msg_type == MsgType.TRUST_REPLY_USER.value}
    denied_domain = {r.req_id for r in trace if r.event == SENT and r.note == "not_trusted"
                     and r.msg_type == MsgType.DOMAIN_TRUST_REPLY.value}
    out = []
    for rec in trace:
        if rec.event != SENT:
            continue
        if rec.msg_type == MsgType.MIGRATE_OUT.value and rec.req_id in denied_user:
            out.append(f"gate: MigrateOut for {rec.req_id} after not_trusted user reply")
        elif rec.msg_type == MsgType.SERVICE_CALL.value and rec.req_id in denied_domain:
            out.append(f"gate: ServiceCall for {rec.req_id} after not_trusted domain reply")
    return out


def mobile_agent_violations(world: World, trace: Trace) -> list[str]:
    out = []
    outs = Counter(r.req_id for r in trace if r.event == SENT
                   and r.msg_type == MsgType.MIGRATE_OUT.value)
    backs = Counter(r.req_id for r in trace if r.event == SENT
                    and r.msg_type == MsgType.MIGRATE_BACK.value)
    for req_id, n in outs.items():
        if n != 1:
            out.append(f"mobile agent for {req_id} migrated out {n} times")
    for req_id, n in backs.items():
        if n > 1 or req_id not in outs:
            out.append(f"mobile agent for {req_id} migrated back {n} times")
    if not trace.truncated:
        for proxy in world.proxies.values():
            for mid, ma in proxy.mobile_agents.items():
                if ma.state is not LifeState.DESTROYED:
                    out.append(f"{mid} spawned by {proxy.endpoint_id} never destroyed")
        for mid, ma in world.host.agents.items():
            if ma.state is not LifeState.DESTROYED:
                out.append(f"{mid} at the provider never destroyed")
    return out


def removal_violations(world: World, trace: Trace) -> list[str]:
    removed_at: dict[str, int] = {}
    for tua in world.tuas.values():
        for user, (_, cycle) in tua.removals.items():
            removed_at[user] = cycle
    if not removed_at:
        return []
    owner: dict[str, str] = {}
    after: set[str] = set()
    out = []
    for rec in trace:
        if rec.msg_type == MsgType.AUTH_SUBMIT.value and rec.event == SENT:
            owner[rec.req_id] = rec.sender.split(":", 1)[1]
        user = owner.get(rec.req_id)
        if user not in removed_at:
            continue
        if (rec.event == DELIVERED and rec.msg_type == MsgType.AUTH_SUBMIT.value
                and rec.cycle > removed_at[user]):
            after.add(rec.req_id)
        if rec.req_id in after and rec.event == SENT:
            if rec.msg_type == MsgType.TRUST_QUERY_USER.value:
                out.append(f"removal: {user} reached the TUA again via {rec.req_id}")
            if rec.msg_type == MsgType.AUTH_RESULT.value:
                out.append(f"removal: {user} authenticated again via {rec.req_id}")
    return out


def breach_violations(world: World, trace: Trace) -> list[str]:
    sent_cycle = {r.env_id: r.cycle for r in trace if r.event == SENT
                  and r.msg_type == MsgType.BREACH_NOTICE.value}
    out = []
    for rep in world.dta.reports:
        if rep.kind is not ActionKind.MALICIOUS:
            continue
        if rep.notice_env is None:
            out.append(f"breach: malicious outcome of {rep.req_id} raised no notice")
        elif sent_cycle.get(rep.notice_env) != rep.cycle:
            out.append(f"breach: notice for {rep.req_id} not sent in the reporting cycle")
    return out


def detection_violations(world: World, trace: Trace) -> list[str]:
    """Zero-fault guarantee: one notice and one recorded malicious action per malicious outcome."""
    notices = Counter(r.req_id for r in trace if r.event == SENT
                      and r.msg_type == MsgType.BREACH_NOTICE.value and r.sender == DTA)
    out = []
    for rep in world.dta.reports:
        if rep.kind is not ActionKind.MALICIOUS:
            continue
        if notices[rep.req_id] != 1:
            out.append(f"detection: {rep.req_id} produced {notices[rep.req_id]} notices")
        tua = world.tuas[rep.domain_id]
        rec = tua.users.get(rep.user_id)
        hits = [e for e in (rec.events if rec else []) if e[0] == rep.req_id]
        if len(hits) != 1 or hits[0][1] is not ActionKind.MALICIOUS:
            out.append(f"detection: {rep.req_id} not recorded once as malicious")
            continue
        _, _, before, after, pa = hits[0]
        if before > pa and not after < before:
            out.append(f"detection: trust of {rep.user_id} did not drop for {rep.req_id}")
    return out


def oracle_violations(world: World, params: TrustParams) -> list[str]:
    out = []
    for tua in world.tuas.values():
        for user, rec in tua.users.items():
            expected = trust_oracle(rec.kinds, params)
            if len(expected) != len(rec.series) or any(
                    abs(a - b) > ORACLE_TOLERANCE for a, b in zip(expected, rec.series)):
                out.append(f"oracle: trust series of {user} disagrees with the reference")
            foreign = [e[0] for e in rec.events if not e[0].startswith(user + "#")]
            if foreign:
                out.append(f"isolation: {user} charged for {foreign}")
    return out


def network_violations(trace: Trace, plan: FaultPlan) -> list[str]:
    counts = Counter(r.event for r in trace)
    out = []
    if not trace.truncated and (counts[DELIVERED] + counts[DROPPED]
                                != counts[SENT] + counts[DUPLICATED]):
        out.append("network: delivered + dropped != sent + duplicated")
    sent_time = {r.env_id: r.time for r in trace if r.event == SENT}
    for r in trace:
        if r.event == DELIVERED and r.time < sent_time[r.env_id] + plan.latency_min:
            out.append(f"network: envelope {r.env_id} delivered before it could arrive")
    return out


def check_invariants(scenario: Scenario, world: World, trace: Trace,
                     metrics: Mapping[str, Any]) -> list[str]:
    out = gate_violations(trace)
    out += mobile_agent_violations(world, trace)
    out += removal_violations(world, trace)
    out += breach_violations(world, trace)
    if scenario.faults.faultless:
        out += detection_violations(world, trace)
    out += oracle_violations(world, scenario.params)
    out += network_violations(trace, scenario.faults)
    if not trace.truncated and not conservation_holds(metrics):
        out.append("metrics: granted + rejections + timeouts != scheduled")
    iface_done = sum(len(i.outcomes) for i in world.interfaces.values())
    if not trace.truncated and iface_done != metrics["scheduled"]:
        out.append(f"metrics: interfaces finished {iface_done} of {metrics['scheduled']} requests")
    return out


# --- message budget ---------------------------------------------------------

GRANTED_MULTISET = Counter({
    MsgType.AUTH_SUBMIT.value: 1, MsgType.AUTH_RESULT.value: 1,
    MsgType.TRUST_QUERY_USER.value: 1, MsgType.TRUST_REPLY_USER.value: 1,
    MsgType.MIGRATE_OUT.value: 1, MsgType.DOMAIN_TRUST_QUERY.value: 1,
    MsgType.DOMAIN_TRUST_REPLY.value: 1, MsgType.SERVICE_CALL.value: 1,
    MsgType.SERVICE_RESULT.value: 1, MsgType.MIGRATE_BACK.value: 1,
    MsgType.DELIVER_RESULT.value: 1, MsgType.TRUST_UPDATE.value: 1,
})


def delivered_multiset(trace: Trace, req_id: str) -> Counter:
    return Counter(r.msg_type for r in trace if r.event == DELIVERED and r.req_id == req_id)


# --- random scenarios -------------------------------------------------------


def random_scenario(seed: int, faults: bool = False, max_users: int = 10,
                    max_requests: int = 50) -> Scenario:
    """Randomised scenario for property runs; thresholds stay low enough for traffic to flow."""
    rng = random.Random(seed)
    weights = sorted(rng.random() for _ in range(3))
    lo = rng.uniform(0.05, 0.4)
    params = TrustParams(
        level=rng.randint(1, 4),
        weight_malicious=weights[0], weight_wrong=weights[1],
        weight_positive=max(weights[2], rng.choice([1.0, weights[2]])),
        smoothing_alpha=rng.random(),
        initial_trust=rng.uniform(0.3, 1.0),
        user_threshold=rng.uniform(0.0, 0.5),
        trusted_min=rng.uniform(lo + 0.05, 0.95),
        nontrusted_max=lo,
        removal_streak=rng.randint(1, 4),
    )
    n_domains = rng.randint(1, 3)
    domains = {f"d{i}": rng.uniform(0.0, 0.5) for i in range(n_domains)}
    users = []
    for i in range(rng.randint(1, max_users)):
        kind = rng.choice(["honest", "sloppy", "attacker"])
        if kind == "honest":
            profile = HONEST
        elif kind == "sloppy":
            profile = BehaviorProfile("sloppy", p=rng.random())
        else:
            profile = BehaviorProfile("attacker", q=rng.random(), k=rng.randint(0, 5))
        users.append(UserSpec(
            f"u{i}", f"d{rng.randrange(n_domains)}", f"pw{i}", profile,
            rng.randint(0, max_requests), rng.randint(0, 5),
            submitted_password=None if rng.random() < 0.9 else "wrong"))
    if faults:
        lat_min = rng.randint(1, 2)
        plan = FaultPlan(seed, rng.uniform(0, 0.15), rng.uniform(0, 0.15),
                         rng.uniform(0, 0.15), lat_min, rng.randint(lat_min, 4))
    else:
        lat_min = rng.randint(1, 2)
        plan = FaultPlan(seed, latency_min=lat_min, latency_max=rng.randint(lat_min, 4))
    return Scenario(domains, tuple(users), params, plan, Timing(10, rng.randint(1, 3)), seed)
