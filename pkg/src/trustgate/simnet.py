"""Deterministic discrete-event transport between agent endpoints.

Simulated time is an integer. Events pop in ``(time, insertion order)``
order, so two deliveries due at the same instant keep their send order.
Each directed link is FIFO: a delivery is never scheduled earlier than the
previous delivery on the same link.
Every random draw comes from one seeded generator, consumed in a fixed order
per send, which makes the trace a pure function of scenario and seed.
"""
from __future__ import annotations

import heapq
import logging
import random
from dataclasses import dataclass
from typing import Any, Callable, Protocol

from .protocol import (
    DELIVERED, DROPPED, DUPLICATED, EXPIRED, SENT, Envelope, Trace, TraceRecord, body_span,
    encode, note_for,
)

log = logging.getLogger(__name__)


class UnknownEndpoint(Exception):
    pass


@dataclass(frozen=True)
class FaultPlan:
    seed: int = 0
    drop_prob: float = 0.0
    dup_prob: float = 0.0
    tamper_prob: float = 0.0
    latency_min: int = 1
    latency_max: int = 1

    def __post_init__(self):
        for name in ("drop_prob", "dup_prob", "tamper_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p!r}")
        if not 1 <= self.latency_min <= self.latency_max:
            raise ValueError("latency bounds must satisfy 1 <= min <= max")

    @property
    def faultless(self) -> bool:
        return self.drop_prob == 0 and self.dup_prob == 0 and self.tamper_prob == 0


class Endpoint(Protocol):
    def accept(self, data: bytes, net: "Network") -> Envelope | None:
        """Decode and authenticate raw bytes; None means the endpoint rejected them."""

    def handle(self, env: Envelope, net: "Network") -> None: ...

    def on_timer(self, tag: Any, net: "Network") -> None: ...


_DELIVERY = 0
_TIMER = 1


class Network:
    def __init__(self, plan: FaultPlan | None = None):
        self.plan = plan or FaultPlan()
        self.rng = random.Random(self.plan.seed)
        self.now = 0
        self.cycle = 0
        self.trace = Trace()
        self.endpoints: dict[str, Endpoint] = {}
        self._queue: list[tuple] = []
        self._tiebreak = 0
        self._next_env = 0
        self._trace_seq = 0
        self._link_clock: dict[tuple[str, str], int] = {}

    # -- registry -----------------------------------------------------------
    def register(self, endpoint_id: str, endpoint: Endpoint) -> None:
        if endpoint_id in self.endpoints:
            raise ValueError(f"endpoint {endpoint_id!r} already registered")
        self.endpoints[endpoint_id] = endpoint

    def next_envelope_id(self) -> int:
        self._next_env += 1
        return self._next_env

    # -- trace ----------------------------------------------------------------
    def _record(self, event: str, env_id: int, summary: tuple[str, str, str, str, str],
                note: str | None = None) -> None:
        msg_type, sender, receiver, req_id, default_note = summary
        self.trace.append(TraceRecord(
            self._trace_seq, self.now, self.cycle, event, env_id, msg_type, sender, receiver,
            req_id, default_note if note is None else note))
        self._trace_seq += 1

    def record_expiry(self, endpoint_id: str, req_id: str) -> None:
        """Log a request abandoned locally by its endpoint."""
        self._record(EXPIRED, -1, ("", endpoint_id, endpoint_id, req_id, "timeout"))

    # -- scheduling -----------------------------------------------------------
    def _push(self, at: int, kind: int, item: tuple) -> None:
        heapq.heappush(self._queue, (at, self._tiebreak, kind, item))
        self._tiebreak += 1

    def _latency(self) -> int:
        p = self.plan
        if p.latency_min == p.latency_max:
            return p.latency_min
        return self.rng.randint(p.latency_min, p.latency_max)

    def send(self, env: Envelope) -> int:
        """Put a sealed envelope on the wire; returns the number of deliveries scheduled."""
        if env.sender not in self.endpoints:
            raise UnknownEndpoint(env.sender)
        if env.receiver not in self.endpoints:
            raise UnknownEndpoint(env.receiver)
        data = encode(env)
        summary = (env.msg_type.value, env.sender, env.receiver, env.req_id, note_for(env))
        self._record(SENT, env.seq, summary)
        p = self.plan
        # draws happen unconditionally so one fault knob never shifts another's stream
        drop = self.rng.random() < p.drop_prob
        dup = self.rng.random() < p.dup_prob
        copies = 0
        for copy in range(2 if dup else 1):
            if copy == 1:
                self._record(DUPLICATED, env.seq, summary)
            tamper = self.rng.random() < p.tamper_prob
            latency = self._latency()
            if drop and copy == 0:
                self._record(DROPPED, env.seq, summary, "lost")
                continue
            wire = data
            if tamper:
                start, end = body_span(data)
                pos = self.rng.randrange(start, end)
                flip = 1 << self.rng.randrange(8)
                wire = data[:pos] + bytes([data[pos] ^ flip]) + data[pos + 1:]
            link = (env.sender, env.receiver)
            at = max(self.now + latency, self._link_clock.get(link, 0))
            self._link_clock[link] = at
            self._push(at, _DELIVERY, (env.seq, env.receiver, wire, summary))
            copies += 1
        return copies

    def set_timer(self, endpoint_id: str, delay: int, tag: Any) -> None:
        if endpoint_id not in self.endpoints:
            raise UnknownEndpoint(endpoint_id)
        self._push(self.now + delay, _TIMER, (endpoint_id, tag))

    def call_at(self, at: int, fn: Callable[["Network"], None]) -> None:
        """Schedule a driver callback (scenario start-up, not an agent event)."""
        self._push(at, _TIMER, (None, fn))

    # -- main loop -----------------------------------------------------------
    @property
    def pending(self) -> int:
        return len(self._queue)

    def step(self) -> None:
        at, _, kind, item = heapq.heappop(self._queue)
        self.now = at
        self.cycle += 1
        if kind == _DELIVERY:
            env_id, receiver, wire, summary = item
            endpoint = self.endpoints[receiver]
            env = endpoint.accept(wire, self)
            if env is None:
                self._record(DROPPED, env_id, summary, "rejected")
            else:
                self._record(DELIVERED, env_id, summary)
                endpoint.handle(env, self)
        else:
            endpoint_id, tag = item
            if endpoint_id is None:
                tag(self)
            else:
                self.endpoints[endpoint_id].on_timer(tag, self)

    def run_until_quiescent(self, max_time: int | None = None) -> Trace:
        while self._queue:
            if max_time is not None and self._queue[0][0] > max_time:
                self.trace.truncated = True
                log.warning("simulation stopped at max_time=%d with %d pending events",
                            max_time, len(self._queue))
                break
            self.step()
        return self.trace
