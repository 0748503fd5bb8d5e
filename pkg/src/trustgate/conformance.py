"""Check request lifecycles in a trace against the agent message order.

Only the first delivery of each envelope counts; duplicates and envelopes the
receiver rejected are not part of the observed order. Each delivered message
must have its causal predecessor already delivered, chain messages may not go
back to an earlier stage, and nothing may reach the interface after the
request's terminal event. The proxy answers a successful login and queries
the TUA in the same step, on different links, so the query only needs the
login answer to have been sent.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

from .protocol import DELIVERED, EXPIRED, SENT, MsgType, Trace, TraceRecord


class IncompleteTrace(Exception):
    def __init__(self, req_ids):
        self.req_ids = sorted(req_ids)
        super().__init__(f"lifecycles without a terminal event: {', '.join(self.req_ids)}")


@dataclass(frozen=True)
class Verdict:
    req_id: str
    ok: bool
    offending: TraceRecord | None = None
    reason: str = ""

    def describe(self) -> str:
        if self.ok:
            return f"{self.req_id}: conformant"
        r = self.offending
        return (f"{self.req_id}: violation at seq {r.seq} "
                f"({r.msg_type} {r.sender}->{r.receiver}): {self.reason}")


CHAIN = [
    MsgType.AUTH_SUBMIT, MsgType.TRUST_QUERY_USER, MsgType.TRUST_REPLY_USER,
    MsgType.MIGRATE_OUT, MsgType.DOMAIN_TRUST_QUERY, MsgType.DOMAIN_TRUST_REPLY,
    MsgType.SERVICE_CALL, MsgType.SERVICE_RESULT, MsgType.MIGRATE_BACK, MsgType.DELIVER_RESULT,
]
STAGE = {t.value: i for i, t in enumerate(CHAIN)}
# MA retries its service call once on a lost result
REPEATABLE = {MsgType.SERVICE_CALL.value, MsgType.SERVICE_RESULT.value}

A = MsgType
# each entry: alternatives of (msg_type, required note or None)
PREREQS: dict[str, list[tuple[str, str | None]]] = {
    A.AUTH_RESULT.value: [(A.AUTH_SUBMIT.value, None)],
    A.TRUST_QUERY_USER.value: [(A.AUTH_SUBMIT.value, None)],
    A.TRUST_REPLY_USER.value: [(A.TRUST_QUERY_USER.value, None)],
    A.MIGRATE_OUT.value: [(A.TRUST_REPLY_USER.value, "trusted")],
    A.DOMAIN_TRUST_QUERY.value: [(A.MIGRATE_OUT.value, None)],
    A.DOMAIN_TRUST_REPLY.value: [(A.DOMAIN_TRUST_QUERY.value, None)],
    A.SERVICE_CALL.value: [(A.DOMAIN_TRUST_REPLY.value, "trusted")],
    A.SERVICE_RESULT.value: [(A.SERVICE_CALL.value, None)],
    A.MIGRATE_BACK.value: [(A.SERVICE_RESULT.value, None)],
    A.DELIVER_RESULT.value: [(A.MIGRATE_BACK.value, None)],
    A.TRUST_UPDATE.value: [(A.MIGRATE_BACK.value, None)],
    A.BREACH_NOTICE.value: [(A.SERVICE_CALL.value, None),
                            (A.DOMAIN_TRUST_REPLY.value, "not_trusted")],
}
REJECT_PREREQS: dict[str, list[tuple[str, str | None]]] = {
    "auth": [(A.AUTH_SUBMIT.value, None)],
    "user_gate": [(A.TRUST_REPLY_USER.value, "not_trusted")],
    "domain_gate": [(A.DOMAIN_TRUST_REPLY.value, "not_trusted")],
    "session_expired": [(A.MIGRATE_BACK.value, None)],
    "timeout": [(A.AUTH_SUBMIT.value, None)],
}


def _is_interface(endpoint: str) -> bool:
    return endpoint.startswith("iface:")


def _check_lifecycle(req_id: str, events: list[TraceRecord]) -> Verdict:
    seen: set[tuple[str, str]] = set()
    seen_types: set[str] = set()
    login_sent = False
    stage = -1
    terminated = False

    def has(alternatives):
        return any((t in seen_types) if note is None else ((t, note) in seen)
                   for t, note in alternatives)

    for rec in events:
        if rec.event == SENT:
            if rec.msg_type == A.AUTH_RESULT.value and rec.note == "ok":
                login_sent = True
            continue
        if rec.event == EXPIRED:
            terminated = True
            continue
        t = rec.msg_type
        if t == A.TRUST_QUERY_USER.value and not login_sent:
            return Verdict(req_id, False, rec, "TUA queried before the login was answered")
        if t == A.AUTH_SUBMIT.value and seen_types:
            return Verdict(req_id, False, rec, "second AuthSubmit for one request")
        if t == A.REJECT.value:
            need = REJECT_PREREQS.get(rec.note)
            if need is None:
                return Verdict(req_id, False, rec, f"unknown reject reason {rec.note!r}")
        else:
            need = PREREQS.get(t)
        if need is not None and not has(need):
            wanted = " or ".join(f"{m}({n})" if n else m for m, n in need)
            return Verdict(req_id, False, rec, f"delivered before {wanted}")
        if t in STAGE:
            s = STAGE[t]
            if s < stage or (s == stage and t not in REPEATABLE):
                return Verdict(req_id, False, rec, f"{t} after a later protocol step")
            stage = s
        if _is_interface(rec.receiver):
            if terminated:
                return Verdict(req_id, False, rec, "message reached the interface after termination")
            if t in (A.DELIVER_RESULT.value, A.REJECT.value):
                terminated = True
        seen.add((t, rec.note))
        seen_types.add(t)
    return Verdict(req_id, True)


def lifecycles(trace: Trace) -> dict[str, list[TraceRecord]]:
    """Events per request: sends, first deliveries and local expiries."""
    by_req: dict[str, list[TraceRecord]] = defaultdict(list)
    delivered: set[int] = set()
    for rec in trace:
        if rec.event == DELIVERED:
            if rec.env_id in delivered:
                continue
            delivered.add(rec.env_id)
            by_req[rec.req_id].append(rec)
        elif rec.event == EXPIRED:
            by_req[rec.req_id].append(rec)
        elif rec.event == SENT:
            by_req[rec.req_id].append(rec)
    return by_req


def _terminal(rec: TraceRecord) -> bool:
    if rec.event == EXPIRED:
        return True
    return (rec.event == DELIVERED and _is_interface(rec.receiver)
            and rec.msg_type in (A.DELIVER_RESULT.value, A.REJECT.value))


def check_conformance(trace: Trace) -> dict[str, Verdict]:
    """Verdict per request id, in order of first appearance.

    Raises :class:`IncompleteTrace` if any request never terminated.
    """
    lives = lifecycles(trace)
    incomplete = [r for r, evs in lives.items() if not any(_terminal(e) for e in evs)]
    if incomplete:
        raise IncompleteTrace(incomplete)
    return {req_id: _check_lifecycle(req_id, evs) for req_id, evs in lives.items()}
