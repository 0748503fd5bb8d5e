"""Binary snapshots of a trust agent's knowledge base.

Layout, all integers big-endian::

    magic      4s   b"TGDB"
    version    u16  FORMAT_VERSION
    count      u32  number of principal records, sorted by principal id
    record * count:
        id_len     u16, id utf-8 bytes
        negatives  u32
        total      u32
        n_history  u32
        history * n_history:  kind u8, weight f64, seq u64
        value      f64
        class      u8
        streak     u32
        removed    u8 (0 or 1)

Trailing bytes after the last record are an error.
"""
from __future__ import annotations

import struct
from typing import Mapping

from .trust import ActionKind, ActionRecord, TrustClass, TrustError, TrustLedger, TrustState

MAGIC = b"TGDB"
FORMAT_VERSION = 1

Database = dict[str, tuple[TrustLedger, TrustState]]

_KINDS = [ActionKind.POSITIVE, ActionKind.WRONG, ActionKind.MALICIOUS]
_CLASSES = [TrustClass.TRUSTED, TrustClass.INNOCENT, TrustClass.NON_TRUSTED]

_HEADER = struct.Struct(">4sHI")
_COUNTS = struct.Struct(">III")
_ACTION = struct.Struct(">BdQ")
_STATE = struct.Struct(">dBIB")


class CorruptSnapshot(Exception):
    pass


def save_db(db: Mapping[str, tuple[TrustLedger, TrustState]]) -> bytes:
    out = [_HEADER.pack(MAGIC, FORMAT_VERSION, len(db))]
    for key in sorted(db):
        ledger, state = db[key]
        raw = key.encode("utf-8")
        out.append(struct.pack(">H", len(raw)))
        out.append(raw)
        out.append(_COUNTS.pack(ledger.negatives, ledger.total, len(ledger.history)))
        for rec in ledger.history:
            out.append(_ACTION.pack(_KINDS.index(rec.kind), rec.weight, rec.seq))
        out.append(_STATE.pack(state.value, _CLASSES.index(state.trust_class),
                               state.malicious_streak, int(state.removed)))
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, st: struct.Struct) -> tuple:
        end = self.pos + st.size
        if end > len(self.data):
            raise CorruptSnapshot(f"truncated at offset {self.pos}")
        vals = st.unpack_from(self.data, self.pos)
        self.pos = end
        return vals

    def raw(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise CorruptSnapshot(f"truncated at offset {self.pos}")
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk


_U16 = struct.Struct(">H")


def load_db(data: bytes) -> Database:
    r = _Reader(bytes(data))
    magic, version, count = r.take(_HEADER)
    if magic != MAGIC:
        raise CorruptSnapshot(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CorruptSnapshot(f"unsupported format version {version}")
    db: Database = {}
    prev = None
    for _ in range(count):
        (n,) = r.take(_U16)
        try:
            key = r.raw(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptSnapshot("principal id is not utf-8") from exc
        if prev is not None and key <= prev:
            raise CorruptSnapshot("principal ids not strictly sorted")
        prev = key
        negatives, total, n_hist = r.take(_COUNTS)
        history = []
        for _ in range(n_hist):
            kind, weight, seq = r.take(_ACTION)
            if kind >= len(_KINDS):
                raise CorruptSnapshot(f"bad action kind {kind}")
            history.append((kind, weight, seq))
        value, cls, streak, removed = r.take(_STATE)
        if cls >= len(_CLASSES) or removed > 1:
            raise CorruptSnapshot("bad state flags")
        try:
            ledger = TrustLedger(negatives, total, tuple(
                ActionRecord(_KINDS[k], w, s) for k, w, s in history))
            state = TrustState(value, _CLASSES[cls], streak, bool(removed))
        except (ValueError, TrustError) as exc:
            raise CorruptSnapshot(f"record {key!r}: {exc}") from exc
        db[key] = (ledger, state)
    if r.pos != len(r.data):
        raise CorruptSnapshot(f"{len(r.data) - r.pos} trailing bytes")
    return db
