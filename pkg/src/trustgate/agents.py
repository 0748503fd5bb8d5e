"""The five protocol agents and the stub cloud service.

Each agent owns its state and reacts only to envelopes delivered by the
network and to its own timers. Endpoint ids carry the role as a prefix:
``iface:<user>``, ``proxy:<domain>``, ``tua:<domain>``, ``dta``,
``csp:host`` (where mobile agents land), ``csp:service`` and ``ma:<req_id>``.
"""
from __future__ import annotations

import enum
import hashlib
import hmac
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Any

from . import trust
from .protocol import (
    REASON_AUTH, REASON_DOMAIN_GATE, REASON_SESSION, REASON_TIMEOUT, REASON_USER_GATE,
    Envelope, Keyring, MalformedEnvelope, MsgType, SealViolation, decode, open_envelope,
    seal_envelope,
)
from .simnet import Network
from .trust import ActionKind, TrustLedger, TrustParams, TrustState

log = logging.getLogger(__name__)

CSP_HOST = "csp:host"
CSP_SERVICE = "csp:service"
DTA = "dta"


def iface_id(user_id: str) -> str:
    return f"iface:{user_id}"


def proxy_id(domain_id: str) -> str:
    return f"proxy:{domain_id}"


def tua_id(domain_id: str) -> str:
    return f"tua:{domain_id}"


def ma_id(req_id: str) -> str:
    return f"ma:{req_id}"


class Busy(Exception):
    pass


class InvalidRequest(Exception):
    pass


@dataclass(frozen=True)
class Timing:
    """Timeouts in simulated time units.

    Every wait is derived from ``timeout``. Zero-fault runs never time out as
    long as a single hop takes less than ``timeout / 2``.
    """

    timeout: int = 10
    think_time: int = 1

    @property
    def proxy_tua_wait(self) -> int:
        return self.timeout

    @property
    def ma_dta_wait(self) -> int:
        return self.timeout

    @property
    def ma_service_wait(self) -> int:
        return self.timeout

    @property
    def proxy_ma_wait(self) -> int:
        # covers the MA's own waits (one DTA wait, two service waits) plus both migrations
        return 4 * self.timeout

    @property
    def interface_wait(self) -> int:
        return 6 * self.timeout


class Agent:
    """Envelope plumbing shared by every endpoint."""

    def __init__(self, endpoint_id: str, keyring: Keyring):
        self.endpoint_id = endpoint_id
        self.keyring = keyring
        self.audit: list[dict[str, Any]] = []
        self._seen: set[int] = set()

    def note(self, net: Network | None, event: str, **detail) -> None:
        entry = {"time": net.now if net else 0, "agent": self.endpoint_id, "event": event}
        entry.update(detail)
        self.audit.append(entry)
        log.debug("%s %s %s", self.endpoint_id, event, detail)

    def accept(self, data: bytes, net: Network) -> Envelope | None:
        try:
            env = decode(data)
        except MalformedEnvelope as exc:
            self.note(net, "malformed", error=str(exc))
            return None
        if env.receiver != self.endpoint_id:
            self.note(net, "misrouted", seq=env.seq)
            return None
        try:
            open_envelope(env, self.keyring.key_for(env))
        except (SealViolation, MalformedEnvelope, KeyError):
            # tampering counts as a wrong action by the claimed sender
            self.note(net, "seal_violation", sender=env.sender, seq=env.seq,
                      action=ActionKind.WRONG.value)
            return None
        return env

    def handle(self, env: Envelope, net: Network) -> None:
        if env.seq in self._seen:
            self.note(net, "duplicate", seq=env.seq, msg_type=env.msg_type.value)
            return
        self._seen.add(env.seq)
        handler = getattr(self, "on_" + env.msg_type.name.lower(), None)
        if handler is None:
            self.note(net, "unexpected", msg_type=env.msg_type.value, sender=env.sender)
            return
        handler(env, net)

    def on_timer(self, tag: Any, net: Network) -> None:
        pass

    def send(self, net: Network, msg_type: MsgType, to: str, *, session: bool = False,
             **payload) -> int:
        env = Envelope(msg_type, self.endpoint_id, to, payload, net.next_envelope_id(), session)
        net.send(seal_envelope(env, self.keyring.key_for(env)))
        return env.seq


# --- user tier ------------------------------------------------------------


class DomainDirectory:
    """Membership of one domain, shared by its proxy and its TUA."""

    def __init__(self, domain_id: str):
        self.domain_id = domain_id
        self.members: set[str] = set()
        self.removed: set[str] = set()

    def enroll(self, user_id: str) -> None:
        if user_id not in self.removed:
            self.members.add(user_id)

    def remove(self, user_id: str) -> None:
        self.members.discard(user_id)
        self.removed.add(user_id)

    def is_member(self, user_id: str) -> bool:
        return user_id in self.members


@dataclass
class Outcome:
    req_id: str
    status: str  # "granted", "rejected" or "timeout"
    detail: str = ""
    time: int = 0


class InterfaceAgent(Agent):
    def __init__(self, user_id: str, domain_id: str, password: str, keyring: Keyring,
                 timing: Timing = Timing(), profile: dict | None = None):
        super().__init__(iface_id(user_id), keyring)
        self.user_id = user_id
        self.domain_id = domain_id
        self.password = password
        self.timing = timing
        # shown to the user only; has no effect on gating
        self.profile = dict(profile or {})
        self.proxy = proxy_id(domain_id)
        self.pending: str | None = None
        self.session_ready = False
        self.queue: deque[str] = deque()
        self.outcomes: list[Outcome] = []
        self._counter = 0

    def submit(self, request: str, net: Network) -> str:
        if self.pending is not None:
            raise Busy(f"{self.user_id} already has {self.pending} in flight")
        if not self.user_id or not self.domain_id:
            raise InvalidRequest("user and domain ids must be non-empty")
        req_id = f"{self.user_id}#{self._counter}"
        self._counter += 1
        self.pending = req_id
        self.session_ready = False
        self.send(net, MsgType.AUTH_SUBMIT, self.proxy, req_id=req_id, user_id=self.user_id,
                  domain_id=self.domain_id, password=self.password, request=request)
        net.set_timer(self.endpoint_id, self.timing.interface_wait, ("expire", req_id))
        return req_id

    def schedule(self, requests, net: Network, start: int = 0) -> None:
        self.queue.extend(requests)
        if self.queue:
            net.set_timer(self.endpoint_id, start, ("next",))

    def _finish(self, net: Network, status: str, detail: str) -> None:
        self.outcomes.append(Outcome(self.pending, status, detail, net.now))
        self.pending = None
        if self.queue:
            net.set_timer(self.endpoint_id, self.timing.think_time, ("next",))

    def on_timer(self, tag, net):
        if tag[0] == "next":
            if self.queue and self.pending is None:
                self.submit(self.queue.popleft(), net)
        elif tag[0] == "expire" and self.pending == tag[1]:
            net.record_expiry(self.endpoint_id, tag[1])
            self._finish(net, "timeout", "")

    def _current(self, env: Envelope, net: Network) -> bool:
        if env.req_id != self.pending:
            self.note(net, "stale", req_id=env.req_id, msg_type=env.msg_type.value)
            return False
        return True

    def on_auth_result(self, env, net):
        if self._current(env, net) and env.payload["ok"]:
            self.session_ready = True

    def on_reject(self, env, net):
        if self._current(env, net):
            self._finish(net, "rejected", env.payload["reason"])

    def on_deliver_result(self, env, net):
        if not env.session:
            self.note(net, "unsessioned_result", req_id=env.req_id)
            return
        if self._current(env, net):
            self._finish(net, "granted", env.payload["result"])


class LifeState(enum.Enum):
    SPAWNED = "spawned"
    AT_CSP = "at_csp"
    RETURNING = "returning"
    DESTROYED = "destroyed"


@dataclass
class ProxySession:
    req_id: str
    user_id: str
    interface: str
    request: str
    stage: str = "await_tua"
    user_trust: float = 0.0


def password_digest(salt: bytes, password: str) -> bytes:
    return hashlib.sha256(salt + password.encode("utf-8")).digest()


class ProxyAgent(Agent):
    def __init__(self, domain_id: str, keyring: Keyring, directory: DomainDirectory,
                 timing: Timing = Timing()):
        super().__init__(proxy_id(domain_id), keyring)
        self.domain_id = domain_id
        self.directory = directory
        self.timing = timing
        self.tua = tua_id(domain_id)
        self.credentials: dict[str, tuple[bytes, bytes]] = {}
        self.sessions: dict[str, ProxySession] = {}
        self.closed: set[str] = set()
        self.mobile_agents: dict[str, MobileAgent] = {}

    def add_user(self, user_id: str, password: str) -> None:
        salt = hashlib.sha256(f"{self.domain_id}|{user_id}".encode()).digest()[:16]
        self.credentials[user_id] = (salt, password_digest(salt, password))
        self.directory.enroll(user_id)

    def _authenticate(self, p) -> str | None:
        """Return the failure reason, or None when the credentials check out."""
        cred = self.credentials.get(p["user_id"])
        if cred is None or p["domain_id"] != self.domain_id:
            return "unknown_user"
        if not self.directory.is_member(p["user_id"]):
            return "removed_user"
        salt, digest = cred
        if not hmac.compare_digest(password_digest(salt, p["password"]), digest):
            return "bad_password"
        return None

    def on_auth_submit(self, env, net):
        p = env.payload
        req_id = p["req_id"]
        if req_id in self.sessions or req_id in self.closed:
            self.note(net, "replayed_auth", req_id=req_id)
            return
        failure = self._authenticate(p)
        if failure is None and env.sender != iface_id(p["user_id"]):
            failure = "endpoint_mismatch"
        if failure is not None:
            # the wire only says "auth"; the audit log keeps the cause
            self.note(net, "auth_failed", req_id=req_id, user_id=p["user_id"], cause=failure)
            self.closed.add(req_id)
            self.send(net, MsgType.REJECT, env.sender, req_id=req_id, reason=REASON_AUTH)
            return
        self.sessions[req_id] = ProxySession(req_id, p["user_id"], env.sender, p["request"])
        self.note(net, "session_open", req_id=req_id, user_id=p["user_id"])
        self.send(net, MsgType.AUTH_RESULT, env.sender, req_id=req_id, ok=True)
        self.send(net, MsgType.TRUST_QUERY_USER, self.tua, req_id=req_id,
                  user_id=p["user_id"], domain_id=self.domain_id)
        net.set_timer(self.endpoint_id, self.timing.proxy_tua_wait, ("tua", req_id))

    def _close(self, net: Network, s: ProxySession, reason: str | None) -> None:
        if reason is not None:
            self.send(net, MsgType.REJECT, s.interface, session=True, req_id=s.req_id,
                      reason=reason)
        del self.sessions[s.req_id]
        self.closed.add(s.req_id)

    def _session(self, env, net, stage: str) -> ProxySession | None:
        s = self.sessions.get(env.req_id)
        if s is None or s.stage != stage:
            self.note(net, "no_session", req_id=env.req_id, msg_type=env.msg_type.value)
            return None
        return s

    def on_trust_reply_user(self, env, net):
        s = self._session(env, net, "await_tua")
        if s is None:
            return
        if not env.payload["trusted"]:
            self.note(net, "user_gate_closed", req_id=s.req_id)
            self._close(net, s, REASON_USER_GATE)
            return
        s.user_trust = env.payload["trust"]
        ma = MobileAgent(s.req_id, s.user_id, self.domain_id, self.endpoint_id, s.request,
                         s.user_trust, self.keyring, self.timing)
        self.mobile_agents[ma.endpoint_id] = ma
        s.stage = "await_ma"
        self.send(net, MsgType.MIGRATE_OUT, CSP_HOST, **ma.migration_payload())
        net.set_timer(self.endpoint_id, self.timing.proxy_ma_wait, ("ma", s.req_id))

    def _ma_returned(self, req_id: str) -> None:
        ma = self.mobile_agents.get(ma_id(req_id))
        if ma is not None:
            ma.state = LifeState.DESTROYED

    def on_reject(self, env, net):
        s = self._session(env, net, "await_ma")
        if s is None:
            return
        self._ma_returned(s.req_id)
        reason = env.payload["reason"]
        self._close(net, s, reason)
        if reason == REASON_DOMAIN_GATE:
            self.send(net, MsgType.BREACH_NOTICE, self.tua, req_id=s.req_id, user_id=s.user_id,
                      domain_id=self.domain_id, severity=ActionKind.WRONG.value,
                      reason="domain_rejected")

    def on_migrate_back(self, env, net):
        s = self._session(env, net, "await_ma")
        if s is None:
            return
        self._ma_returned(s.req_id)
        if not self.directory.is_member(s.user_id):
            self.note(net, "session_expired", req_id=s.req_id, user_id=s.user_id)
            self._close(net, s, REASON_SESSION)
            return
        self.send(net, MsgType.DELIVER_RESULT, s.interface, session=True, req_id=s.req_id,
                  result=env.payload["result"])
        self.send(net, MsgType.TRUST_UPDATE, self.tua, req_id=s.req_id, user_id=s.user_id,
                  severity=env.payload["severity"])
        self._close(net, s, None)

    def on_timer(self, tag, net):
        stage = {"tua": "await_tua", "ma": "await_ma"}[tag[0]]
        s = self.sessions.get(tag[1])
        if s is None or s.stage != stage:
            return
        self.note(net, "timeout", req_id=s.req_id, stage=stage)
        if tag[0] == "ma":
            self._ma_returned(s.req_id)
        self._close(net, s, REASON_TIMEOUT)


@dataclass
class UserRecord:
    ledger: TrustLedger
    state: TrustState
    series: list[float]
    kinds: list[ActionKind] = field(default_factory=list)
    applied: set[str] = field(default_factory=set)
    # (req_id, kind, value before, value after, action probability)
    events: list[tuple] = field(default_factory=list)


class TrustUserAgent(Agent):
    def __init__(self, domain_id: str, keyring: Keyring, directory: DomainDirectory,
                 params: TrustParams):
        super().__init__(tua_id(domain_id), keyring)
        self.domain_id = domain_id
        self.directory = directory
        self.params = params
        self.users: dict[str, UserRecord] = {}
        self.removals: dict[str, tuple[int, int]] = {}

    def record_for(self, user_id: str) -> UserRecord:
        rec = self.users.get(user_id)
        if rec is None:
            state = TrustState.initial(self.params)
            rec = UserRecord(TrustLedger(), state, [state.value])
            self.users[user_id] = rec
        return rec

    def is_trusted(self, user_id: str) -> bool:
        rec = self.record_for(user_id)
        if rec.state.removed or user_id in self.directory.removed:
            return False
        return rec.state.value >= self.params.user_threshold

    def on_trust_query_user(self, env, net):
        user = env.payload["user_id"]
        trusted = self.is_trusted(user)
        self.send(net, MsgType.TRUST_REPLY_USER, env.sender, req_id=env.req_id, user_id=user,
                  trusted=trusted, trust=self.users[user].state.value)

    def apply(self, user_id: str, req_id: str, kind: ActionKind, net: Network | None) -> bool:
        """Record one action for ``req_id``; later reports for the same request are ignored."""
        rec = self.users.get(user_id)
        if rec is None:
            self.note(net, "unknown_user", user_id=user_id, req_id=req_id)
            return False
        if req_id in rec.applied:
            return False
        if rec.state.removed:
            self.note(net, "ignored_removed", user_id=user_id, req_id=req_id)
            return False
        rec.applied.add(req_id)
        before = rec.state.value
        rec.ledger = trust.record_action(rec.ledger, kind, self.params)
        pa = trust.action_probability(rec.ledger, self.params.weight_for(kind), self.params.level)
        rec.state = trust.update_trust(rec.state, pa, self.params, kind)
        rec.series.append(rec.state.value)
        rec.kinds.append(kind)
        rec.events.append((req_id, kind, before, rec.state.value, pa))
        if trust.should_remove(rec.state, self.params):
            rec.state = trust.mark_removed(rec.state)
            self.directory.remove(user_id)
            when = (net.now, net.cycle) if net else (0, 0)
            self.removals[user_id] = when
            self.note(net, "user_removed", user_id=user_id, req_id=req_id)
        return True

    def on_breach_notice(self, env, net):
        p = env.payload
        self.note(net, "breach", user_id=p["user_id"], req_id=p["req_id"],
                  severity=p["severity"], reason=p["reason"])
        self.apply(p["user_id"], p["req_id"], ActionKind(p["severity"]), net)

    def on_trust_update(self, env, net):
        p = env.payload
        self.apply(p["user_id"], p["req_id"], ActionKind(p["severity"]), net)

    def database(self) -> dict[str, tuple[TrustLedger, TrustState]]:
        return {u: (r.ledger, r.state) for u, r in self.users.items()}


# --- provider tier ----------------------------------------------------------


@dataclass
class DomainRecord:
    ledger: TrustLedger
    state: TrustState
    series: list[float]


@dataclass(frozen=True)
class Report:
    cycle: int
    req_id: str
    user_id: str
    domain_id: str
    kind: ActionKind
    severity: ActionKind
    notice_env: int | None


class DomainTrustAgent(Agent):
    def __init__(self, keyring: Keyring, params: TrustParams,
                 thresholds: dict[str, float] | None = None):
        super().__init__(DTA, keyring)
        self.params = params
        self.thresholds = dict(thresholds or {})
        self.domains: dict[str, DomainRecord] = {}
        self.reports: list[Report] = []
        for d in self.thresholds:
            self.record_for(d)

    def record_for(self, domain_id: str) -> DomainRecord:
        rec = self.domains.get(domain_id)
        if rec is None:
            state = TrustState.initial(self.params)
            rec = DomainRecord(TrustLedger(), state, [state.value])
            self.domains[domain_id] = rec
            self.thresholds.setdefault(domain_id, self.params.trusted_min)
        return rec

    def is_trusted(self, domain_id: str) -> bool:
        rec = self.record_for(domain_id)
        return rec.state.value >= self.thresholds[domain_id]

    def on_domain_trust_query(self, env, net):
        domain = env.payload["domain_id"]
        trusted = self.is_trusted(domain)
        self.send(net, MsgType.DOMAIN_TRUST_REPLY, env.sender, req_id=env.req_id,
                  domain_id=domain, trusted=trusted, trust=self.domains[domain].state.value)

    def report(self, req_id: str, user_id: str, domain_id: str, kind: ActionKind,
               net: Network) -> ActionKind:
        """Fold a served request's outcome into the domain and notify the TUA on breach.

        Returns the severity charged to the user: the outcome itself, or WRONG
        when a positive action still leaves the domain under its threshold.
        """
        rec = self.record_for(domain_id)
        rec.ledger, rec.state = trust.apply_action(rec.ledger, rec.state, kind, self.params)
        rec.series.append(rec.state.value)
        below = rec.state.value < self.thresholds[domain_id]
        severity = kind
        notice = None
        if kind is ActionKind.MALICIOUS or below:
            if kind is ActionKind.POSITIVE:
                severity = ActionKind.WRONG
            reason = "malicious" if kind is ActionKind.MALICIOUS else "domain_below_threshold"
            notice = self.send(net, MsgType.BREACH_NOTICE, tua_id(domain_id), req_id=req_id,
                               user_id=user_id, domain_id=domain_id, severity=severity.value,
                               reason=reason)
        self.reports.append(Report(net.cycle, req_id, user_id, domain_id, kind, severity, notice))
        return severity


class CspService(Agent):
    def __init__(self, keyring: Keyring, dta: DomainTrustAgent,
                 catalog: dict[str, str] | None = None,
                 outcomes: dict[str, ActionKind] | None = None):
        super().__init__(CSP_SERVICE, keyring)
        self.dta = dta
        self.catalog = dict(catalog or {})
        self.outcomes = dict(outcomes or {})
        self.served: dict[str, tuple[str, str]] = {}

    def on_service_call(self, env, net):
        p = env.payload
        if not env.sender.startswith("ma:"):
            self.note(net, "refused_non_agent", sender=env.sender)
            return
        cached = self.served.get(p["req_id"])
        if cached is None:
            result = self.catalog.get(p["request"], f"no resource {p['request']!r}")
            kind = self.outcomes.get(p["req_id"], ActionKind.POSITIVE)
            severity = self.dta.report(p["req_id"], p["user_id"], p["domain_id"], kind, net)
            cached = self.served[p["req_id"]] = (result, severity.value)
        else:
            self.note(net, "retry_served", req_id=p["req_id"])
        self.send(net, MsgType.SERVICE_RESULT, env.sender, req_id=p["req_id"],
                  result=cached[0], severity=cached[1])


class MobileAgent(Agent):
    """One request's courier between a proxy and the provider site."""

    def __init__(self, req_id: str, user_id: str, domain_id: str, origin: str, request: str,
                 user_trust: float, keyring: Keyring, timing: Timing = Timing()):
        super().__init__(ma_id(req_id), keyring)
        self.req_id = req_id
        self.user_id = user_id
        self.domain_id = domain_id
        self.origin = origin
        self.request = request
        self.user_trust = user_trust
        self.timing = timing
        self.state = LifeState.SPAWNED
        self.waiting: str | None = None
        self.attempts = 0
        self.domain_trust = 0.0
        self.migrations_out = 0
        self.migrations_back = 0

    def migration_payload(self) -> dict:
        return dict(req_id=self.req_id, ma_id=self.endpoint_id, user_id=self.user_id,
                    domain_id=self.domain_id, origin=self.origin, request=self.request,
                    user_trust=self.user_trust)

    @classmethod
    def from_migration(cls, env: Envelope, keyring: Keyring, timing: Timing) -> "MobileAgent":
        p = env.payload
        ma = cls(p["req_id"], p["user_id"], p["domain_id"], p["origin"], p["request"],
                 p["user_trust"], keyring, timing)
        ma.migrations_out = 1
        return ma

    def arrive(self, net: Network) -> None:
        self.state = LifeState.AT_CSP
        self.waiting = "dta"
        self.send(net, MsgType.DOMAIN_TRUST_QUERY, DTA, req_id=self.req_id,
                  user_id=self.user_id, domain_id=self.domain_id)
        net.set_timer(self.endpoint_id, self.timing.ma_dta_wait, ("dta",))

    def _destroy(self) -> None:
        self.state = LifeState.DESTROYED
        self.waiting = None

    def _give_up(self, net: Network, reason: str) -> None:
        self.send(net, MsgType.REJECT, self.origin, req_id=self.req_id, reason=reason)
        self._destroy()

    def _call_service(self, net: Network) -> None:
        self.attempts += 1
        self.waiting = "service"
        self.send(net, MsgType.SERVICE_CALL, CSP_SERVICE, req_id=self.req_id,
                  user_id=self.user_id, domain_id=self.domain_id, request=self.request,
                  user_trust=self.user_trust, domain_trust=self.domain_trust)
        net.set_timer(self.endpoint_id, self.timing.ma_service_wait, ("service", self.attempts))

    def on_domain_trust_reply(self, env, net):
        if self.waiting != "dta":
            self.note(net, "unexpected_reply", req_id=self.req_id)
            return
        self.domain_trust = env.payload["trust"]
        if env.payload["trusted"]:
            self._call_service(net)
        else:
            self.note(net, "request_deleted", req_id=self.req_id)
            self._give_up(net, REASON_DOMAIN_GATE)

    def on_service_result(self, env, net):
        if self.waiting != "service":
            self.note(net, "unexpected_result", req_id=self.req_id)
            return
        self.state = LifeState.RETURNING
        self.migrations_back += 1
        self.send(net, MsgType.MIGRATE_BACK, self.origin, req_id=self.req_id,
                  ma_id=self.endpoint_id, result=env.payload["result"],
                  severity=env.payload["severity"])
        self._destroy()

    def on_timer(self, tag, net):
        if tag[0] == "dta" and self.waiting == "dta":
            self._give_up(net, REASON_TIMEOUT)
        elif tag[0] == "service" and self.waiting == "service" and tag[1] == self.attempts:
            if self.attempts < 2:
                self.note(net, "service_retry", req_id=self.req_id)
                self._call_service(net)
            else:
                self._give_up(net, REASON_TIMEOUT)


class MobileAgentHost(Agent):
    """Landing point at the provider site; instantiates arriving mobile agents."""

    def __init__(self, keyring: Keyring, timing: Timing = Timing()):
        super().__init__(CSP_HOST, keyring)
        self.timing = timing
        self.agents: dict[str, MobileAgent] = {}

    def on_migrate_out(self, env, net):
        mid = env.payload["ma_id"]
        if mid in self.agents or mid != ma_id(env.req_id):
            self.note(net, "duplicate_migration", ma_id=mid)
            return
        ma = MobileAgent.from_migration(env, self.keyring, self.timing)
        self.agents[mid] = ma
        net.register(mid, ma)
        ma.arrive(net)
