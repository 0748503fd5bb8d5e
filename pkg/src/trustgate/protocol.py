"""Wire messages, canonical encoding, integrity seals and traces.

Envelope wire layout (big-endian)::

    magic     4s  b"TGEV"
    version   u8
    msg_type  u8  index into MSG_TYPES
    session   u8  0 = link key, 1 = per-request session key
    seq       u64 network-assigned envelope id
    sender    u16 length + utf-8
    receiver  u16 length + utf-8
    body_len  u32
    body      fields in schema order (see PAYLOAD_SCHEMAS)
    seal      32 bytes HMAC-SHA256 over every preceding byte

Body field encodings: ``str`` is u32 length + utf-8, ``bool`` is one byte
(0 or 1), ``float`` is f64. Any other byte value, a length overrun or trailing
data is a :class:`MalformedEnvelope`.
"""
from __future__ import annotations

import enum
import hashlib
import hmac
import json
import struct
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping


class ProtocolError(Exception):
    pass


class MalformedEnvelope(ProtocolError):
    pass


class SealViolation(ProtocolError):
    pass


class MsgType(enum.Enum):
    AUTH_SUBMIT = "AuthSubmit"
    AUTH_RESULT = "AuthResult"
    TRUST_QUERY_USER = "TrustQueryUser"
    TRUST_REPLY_USER = "TrustReplyUser"
    MIGRATE_OUT = "MigrateOut"
    DOMAIN_TRUST_QUERY = "DomainTrustQuery"
    DOMAIN_TRUST_REPLY = "DomainTrustReply"
    SERVICE_CALL = "ServiceCall"
    SERVICE_RESULT = "ServiceResult"
    MIGRATE_BACK = "MigrateBack"
    BREACH_NOTICE = "BreachNotice"
    DELIVER_RESULT = "DeliverResult"
    REJECT = "Reject"
    TRUST_UPDATE = "TrustUpdate"


MSG_TYPES = list(MsgType)

PAYLOAD_SCHEMAS: dict[MsgType, tuple[tuple[str, type], ...]] = {
    MsgType.AUTH_SUBMIT: (("req_id", str), ("user_id", str), ("domain_id", str),
                          ("password", str), ("request", str)),
    MsgType.AUTH_RESULT: (("req_id", str), ("ok", bool)),
    MsgType.TRUST_QUERY_USER: (("req_id", str), ("user_id", str), ("domain_id", str)),
    MsgType.TRUST_REPLY_USER: (("req_id", str), ("user_id", str), ("trusted", bool),
                               ("trust", float)),
    MsgType.MIGRATE_OUT: (("req_id", str), ("ma_id", str), ("user_id", str), ("domain_id", str),
                          ("origin", str), ("request", str), ("user_trust", float)),
    MsgType.DOMAIN_TRUST_QUERY: (("req_id", str), ("user_id", str), ("domain_id", str)),
    MsgType.DOMAIN_TRUST_REPLY: (("req_id", str), ("domain_id", str), ("trusted", bool),
                                 ("trust", float)),
    MsgType.SERVICE_CALL: (("req_id", str), ("user_id", str), ("domain_id", str),
                           ("request", str), ("user_trust", float), ("domain_trust", float)),
    MsgType.SERVICE_RESULT: (("req_id", str), ("result", str), ("severity", str)),
    MsgType.MIGRATE_BACK: (("req_id", str), ("ma_id", str), ("result", str), ("severity", str)),
    MsgType.BREACH_NOTICE: (("req_id", str), ("user_id", str), ("domain_id", str),
                            ("severity", str), ("reason", str)),
    MsgType.DELIVER_RESULT: (("req_id", str), ("result", str)),
    MsgType.REJECT: (("req_id", str), ("reason", str)),
    MsgType.TRUST_UPDATE: (("req_id", str), ("user_id", str), ("severity", str)),
}

# Reject reasons carried on the wire.
REASON_AUTH = "auth"
REASON_USER_GATE = "user_gate"
REASON_DOMAIN_GATE = "domain_gate"
REASON_SESSION = "session_expired"
REASON_TIMEOUT = "timeout"
REASONS = (REASON_AUTH, REASON_USER_GATE, REASON_DOMAIN_GATE, REASON_SESSION, REASON_TIMEOUT)


@dataclass(frozen=True)
class Envelope:
    msg_type: MsgType
    sender: str
    receiver: str
    payload: Mapping[str, Any]
    seq: int = 0
    session: bool = False
    seal: bytes = b""
    # signed bytes as sealed or as received; never copied by dataclasses.replace
    wire: bytes = field(default=b"", compare=False, repr=False, init=False)

    @property
    def req_id(self) -> str:
        return self.payload["req_id"]


def validate_payload(msg_type: MsgType, payload: Mapping[str, Any]) -> None:
    schema = PAYLOAD_SCHEMAS[msg_type]
    names = [n for n, _ in schema]
    if sorted(payload) != sorted(names):
        raise MalformedEnvelope(f"{msg_type.value} payload fields {sorted(payload)} != {names}")
    for name, typ in schema:
        val = payload[name]
        ok = type(val) is typ if typ is not float else isinstance(val, float)
        if not ok:
            raise MalformedEnvelope(f"{msg_type.value}.{name} must be {typ.__name__}")


MAGIC = b"TGEV"
WIRE_VERSION = 1
SEAL_LEN = 32
_HEAD = struct.Struct(">4sBBBQ")
_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")
_F64 = struct.Struct(">d")


def _str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return _U32.pack(len(raw)) + raw


def encode_body(msg_type: MsgType, payload: Mapping[str, Any]) -> bytes:
    out = []
    for name, typ in PAYLOAD_SCHEMAS[msg_type]:
        val = payload[name]
        if typ is str:
            out.append(_str(val))
        elif typ is bool:
            out.append(b"\x01" if val else b"\x00")
        else:
            # + 0.0 folds -0.0 into 0.0 so equal payloads encode identically
            out.append(_F64.pack(val + 0.0))
    return b"".join(out)


def _head(env: Envelope, body: bytes) -> bytes:
    s = env.sender.encode("utf-8")
    r = env.receiver.encode("utf-8")
    return b"".join((
        _HEAD.pack(MAGIC, WIRE_VERSION, MSG_TYPES.index(env.msg_type), int(env.session), env.seq),
        _U16.pack(len(s)), s, _U16.pack(len(r)), r, _U32.pack(len(body)),
    ))


def signed_bytes(env: Envelope) -> bytes:
    """Bytes the seal covers: everything on the wire except the seal itself."""
    if env.wire:
        return env.wire
    validate_payload(env.msg_type, env.payload)
    body = encode_body(env.msg_type, env.payload)
    return _head(env, body) + body


def encode(env: Envelope) -> bytes:
    if len(env.seal) != SEAL_LEN:
        raise MalformedEnvelope("envelope is not sealed")
    return signed_bytes(env) + env.seal


def body_span(data: bytes) -> tuple[int, int]:
    """Offsets ``(start, end)`` of the body inside an encoded envelope."""
    pos = _HEAD.size
    for _ in range(2):
        (n,) = _U16.unpack_from(data, pos)
        pos += 2 + n
    (blen,) = _U32.unpack_from(data, pos)
    pos += 4
    return pos, pos + blen


class _Cursor:
    def __init__(self, data: bytes, pos: int = 0, end: int | None = None):
        self.data = data
        self.pos = pos
        self.end = len(data) if end is None else end

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise MalformedEnvelope("truncated envelope")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, st: struct.Struct) -> tuple:
        return st.unpack(self.take(st.size))

    def text(self, st: struct.Struct) -> str:
        (n,) = self.unpack(st)
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedEnvelope("invalid utf-8") from exc


def decode(data: bytes) -> Envelope:
    data = bytes(data)
    cur = _Cursor(data)
    magic, version, code, session, seq = cur.unpack(_HEAD)
    if magic != MAGIC or version != WIRE_VERSION:
        raise MalformedEnvelope("bad magic or version")
    if code >= len(MSG_TYPES) or session > 1:
        raise MalformedEnvelope("bad header field")
    msg_type = MSG_TYPES[code]
    sender = cur.text(_U16)
    receiver = cur.text(_U16)
    (blen,) = cur.unpack(_U32)
    body_end = cur.pos + blen
    if body_end + SEAL_LEN != len(data):
        raise MalformedEnvelope("body length does not match envelope size")
    body = _Cursor(data, cur.pos, body_end)
    payload: dict[str, Any] = {}
    for name, typ in PAYLOAD_SCHEMAS[msg_type]:
        if typ is str:
            payload[name] = body.text(_U32)
        elif typ is bool:
            b = body.take(1)
            if b not in (b"\x00", b"\x01"):
                raise MalformedEnvelope(f"{name}: bad boolean byte")
            payload[name] = b == b"\x01"
        else:
            (payload[name],) = body.unpack(_F64)
    if body.pos != body_end:
        raise MalformedEnvelope("trailing bytes in body")
    env = Envelope(msg_type, sender, receiver, payload, seq, bool(session), data[body_end:])
    object.__setattr__(env, "wire", data[:body_end])
    return env


def seal(content: bytes, key: bytes) -> bytes:
    return hmac.digest(key, content, hashlib.sha256)


def open_sealed(content: bytes, tag: bytes, key: bytes) -> None:
    """Raise :class:`SealViolation` unless ``tag`` authenticates ``content``."""
    if not hmac.compare_digest(seal(content, key), tag):
        raise SealViolation("integrity tag does not verify")


def seal_envelope(env: Envelope, key: bytes) -> Envelope:
    content = signed_bytes(env)
    sealed = Envelope(env.msg_type, env.sender, env.receiver, dict(env.payload), env.seq,
                      env.session, seal(content, key))
    object.__setattr__(sealed, "wire", content)
    return sealed


def open_envelope(env: Envelope, key: bytes) -> Envelope:
    open_sealed(signed_bytes(env), env.seal, key)
    return env


class Keyring:
    """Deterministic stand-in for pre-provisioned channel keys.

    Link keys are derived per unordered endpoint pair from a master secret;
    session keys additionally bind a request id and exist only once the
    proxy has authenticated that request.
    """

    def __init__(self, master: bytes):
        self.master = master
        self._cache: dict[tuple[str, str], bytes] = {}

    def link_key(self, a: str, b: str) -> bytes:
        pair = (a, b) if a <= b else (b, a)
        key = self._cache.get(pair)
        if key is None:
            key = hmac.digest(self.master, f"link|{pair[0]}|{pair[1]}".encode(), hashlib.sha256)
            self._cache[pair] = key
        return key

    def session_key(self, a: str, b: str, req_id: str) -> bytes:
        return hmac.digest(self.link_key(a, b), f"session|{req_id}".encode(), hashlib.sha256)

    def key_for(self, env: Envelope) -> bytes:
        if env.session:
            return self.session_key(env.sender, env.receiver, env.payload["req_id"])
        return self.link_key(env.sender, env.receiver)


# --- traces -----------------------------------------------------------------

SENT = "Sent"
DELIVERED = "Delivered"
DROPPED = "Dropped"
DUPLICATED = "Duplicated"
EXPIRED = "Expired"
EVENTS = (SENT, DELIVERED, DROPPED, DUPLICATED, EXPIRED)

TRACE_FIELDS = ("seq", "time", "cycle", "event", "env_id", "msg_type", "from", "to",
                "req_id", "note")


def note_for(env: Envelope) -> str:
    """The protocol-relevant detail a trace keeps for each envelope."""
    p = env.payload
    t = env.msg_type
    if t in (MsgType.TRUST_REPLY_USER, MsgType.DOMAIN_TRUST_REPLY):
        return "trusted" if p["trusted"] else "not_trusted"
    if t is MsgType.AUTH_RESULT:
        return "ok" if p["ok"] else "fail"
    if t is MsgType.REJECT:
        return p["reason"]
    if t in (MsgType.BREACH_NOTICE, MsgType.TRUST_UPDATE, MsgType.SERVICE_RESULT,
             MsgType.MIGRATE_BACK):
        return p["severity"]
    return ""


@dataclass(frozen=True)
class TraceRecord:
    seq: int
    time: int
    cycle: int
    event: str
    env_id: int
    msg_type: str
    sender: str
    receiver: str
    req_id: str
    note: str = ""

    def to_json(self) -> str:
        obj = {
            "seq": self.seq, "time": self.time, "cycle": self.cycle, "event": self.event,
            "env_id": self.env_id, "msg_type": self.msg_type, "from": self.sender,
            "to": self.receiver, "req_id": self.req_id, "note": self.note,
        }
        return json.dumps(obj, separators=(",", ":"))

    @classmethod
    def from_obj(cls, obj: Mapping[str, Any]) -> "TraceRecord":
        if not isinstance(obj, Mapping) or set(obj) != set(TRACE_FIELDS):
            raise ValueError("trace line must carry exactly the frozen field set")
        ints = ("seq", "time", "cycle", "env_id")
        for k in ints:
            if type(obj[k]) is not int:
                raise ValueError(f"{k} must be an integer")
        for k in set(TRACE_FIELDS) - set(ints):
            if not isinstance(obj[k], str):
                raise ValueError(f"{k} must be a string")
        if obj["event"] not in EVENTS:
            raise ValueError(f"unknown event {obj['event']!r}")
        if obj["msg_type"] and obj["msg_type"] not in {m.value for m in MsgType}:
            raise ValueError(f"unknown msg_type {obj['msg_type']!r}")
        return cls(obj["seq"], obj["time"], obj["cycle"], obj["event"], obj["env_id"],
                   obj["msg_type"], obj["from"], obj["to"], obj["req_id"], obj["note"])


class MalformedTrace(ProtocolError):
    pass


@dataclass
class Trace:
    records: list[TraceRecord] = field(default_factory=list)
    truncated: bool = False

    def append(self, rec: TraceRecord) -> None:
        self.records.append(rec)

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def of(self, event: str) -> list[TraceRecord]:
        return [r for r in self.records if r.event == event]

    def to_jsonl(self) -> str:
        lines = [r.to_json() for r in self.records]
        if self.truncated:
            # a trace cut off at max_time records the flag as its final line
            lines.append(json.dumps({"truncated": True}))
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_jsonl(cls, text: str) -> "Trace":
        return cls.from_lines(text.splitlines())

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "Trace":
        trace = cls()
        prev_seq = -1
        sent: set[int] = set()
        for lineno, line in enumerate(lines, 1):
            if not line.strip():
                continue
            if trace.truncated:
                raise MalformedTrace(f"line {lineno}: data after truncation marker")
            try:
                obj = json.loads(line)
                if obj == {"truncated": True}:
                    trace.truncated = True
                    continue
                rec = TraceRecord.from_obj(obj)
            except (ValueError, TypeError) as exc:
                raise MalformedTrace(f"line {lineno}: {exc}") from exc
            if rec.seq <= prev_seq:
                raise MalformedTrace(f"line {lineno}: seq not strictly increasing")
            prev_seq = rec.seq
            if rec.event == SENT:
                sent.add(rec.env_id)
            elif rec.event in (DELIVERED, DROPPED, DUPLICATED) and rec.env_id not in sent:
                raise MalformedTrace(f"line {lineno}: {rec.event} without prior Sent")
            trace.append(rec)
        return trace
