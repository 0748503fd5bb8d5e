"""Trust model over user actions.

Pure functions over value-semantics records. A principal's evidence lives in a
:class:`TrustLedger`; its smoothed score and classification live in a
:class:`TrustState`. Nothing here mutates its arguments.
"""
from __future__ import annotations

import enum
import operator
from dataclasses import dataclass, replace
from itertools import islice


class TrustError(Exception):
    """Base class for trust model errors."""


class EmptyLedger(TrustError):
    pass


class InvalidWeight(TrustError):
    pass


class InvalidThresholds(TrustError):
    pass


class RemovedPrincipal(TrustError):
    pass


class ActionKind(enum.Enum):
    POSITIVE = "positive"
    WRONG = "wrong"
    MALICIOUS = "malicious"

    @property
    def is_negative(self) -> bool:
        return self is not ActionKind.POSITIVE


class TrustClass(enum.Enum):
    TRUSTED = "trusted"
    INNOCENT = "innocent"
    NON_TRUSTED = "non_trusted"


def _unit(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")


@dataclass(frozen=True)
class ActionRecord:
    kind: ActionKind
    weight: float
    seq: int

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise InvalidWeight(f"weight {self.weight!r} outside [0, 1]")


_KIND = operator.attrgetter("kind")
_SEQ = operator.attrgetter("seq")


@dataclass(frozen=True)
class TrustLedger:
    """Action counters plus the history they summarise.

    ``negatives`` is the count of wrong and malicious actions, ``total`` the
    count of all actions.
    """

    negatives: int = 0
    total: int = 0
    history: tuple[ActionRecord, ...] = ()

    def __post_init__(self):
        if self.total != len(self.history):
            raise ValueError("total must equal the history length")
        # map/attrgetter keep validation cheap for long histories
        kinds = list(map(_KIND, self.history))
        if self.negatives != self.total - kinds.count(ActionKind.POSITIVE):
            raise ValueError("negatives must count wrong and malicious records")
        seqs = list(map(_SEQ, self.history))
        if not all(map(operator.lt, seqs, islice(seqs, 1, None))):
            raise ValueError("history seq must be strictly increasing")

    @property
    def kinds(self) -> list[ActionKind]:
        return [r.kind for r in self.history]


@dataclass(frozen=True)
class TrustParams:
    level: int = 1
    weight_positive: float = 1.0
    weight_wrong: float = 0.5
    weight_malicious: float = 0.1
    smoothing_alpha: float = 0.5
    initial_trust: float = 0.5
    user_threshold: float = 0.7
    trusted_min: float = 0.7
    nontrusted_max: float = 0.3
    removal_streak: int = 3

    def __post_init__(self):
        if isinstance(self.level, bool) or not isinstance(self.level, int) or self.level < 1:
            raise ValueError(f"level must be an integer >= 1, got {self.level!r}")
        if isinstance(self.removal_streak, bool) or not isinstance(self.removal_streak, int) \
                or self.removal_streak < 1:
            raise ValueError(f"removal_streak must be an integer >= 1, got {self.removal_streak!r}")
        for name in ("weight_positive", "weight_wrong", "weight_malicious", "smoothing_alpha",
                     "initial_trust", "user_threshold", "trusted_min", "nontrusted_max"):
            _unit(name, getattr(self, name))
        if not self.weight_malicious <= self.weight_wrong <= self.weight_positive:
            raise ValueError("weights must satisfy malicious <= wrong <= positive")
        if self.nontrusted_max >= self.trusted_min:
            raise InvalidThresholds("nontrusted_max must be below trusted_min")

    def weight_for(self, kind: ActionKind) -> float:
        if kind is ActionKind.POSITIVE:
            return self.weight_positive
        if kind is ActionKind.WRONG:
            return self.weight_wrong
        return self.weight_malicious


@dataclass(frozen=True)
class TrustState:
    value: float
    trust_class: TrustClass
    malicious_streak: int = 0
    removed: bool = False

    def __post_init__(self):
        _unit("value", self.value)
        if self.removed and self.trust_class is not TrustClass.NON_TRUSTED:
            raise ValueError("a removed principal must be classified non-trusted")

    @classmethod
    def initial(cls, params: TrustParams) -> "TrustState":
        value = params.initial_trust
        return cls(value, classify(value, params.trusted_min, params.nontrusted_max))


def probability_from_counts(negatives: int, total: int, weight: float, level: int) -> float:
    """Probability of a positive action from raw counters.

    ``(1 - negatives/total) * weight**level``
    """
    if total <= 0:
        raise EmptyLedger("no recorded actions; use the initial trust instead")
    if not 0.0 <= weight <= 1.0:
        raise InvalidWeight(f"weight {weight!r} outside [0, 1]")
    if level < 1:
        raise ValueError(f"level must be >= 1, got {level!r}")
    if not 0 <= negatives <= total:
        raise ValueError("negatives must lie in [0, total]")
    return (1.0 - negatives / total) * weight ** level


def action_probability(ledger: TrustLedger, weight: float, level: int) -> float:
    return probability_from_counts(ledger.negatives, ledger.total, weight, level)


def record_action(ledger: TrustLedger, kind: ActionKind, params: TrustParams) -> TrustLedger:
    seq = ledger.history[-1].seq + 1 if ledger.history else 0
    rec = ActionRecord(kind, params.weight_for(kind), seq)
    return TrustLedger(
        negatives=ledger.negatives + (1 if kind.is_negative else 0),
        total=ledger.total + 1,
        history=ledger.history + (rec,),
    )


def classify(value: float, trusted_min: float, nontrusted_max: float) -> TrustClass:
    if nontrusted_max >= trusted_min:
        raise InvalidThresholds(f"nontrusted_max {nontrusted_max} >= trusted_min {trusted_min}")
    if value >= trusted_min:
        return TrustClass.TRUSTED
    if value < nontrusted_max:
        return TrustClass.NON_TRUSTED
    return TrustClass.INNOCENT


def update_trust(state: TrustState, pa: float, params: TrustParams, kind: ActionKind) -> TrustState:
    """Blend ``pa`` into the current value with an exponential moving average.

    ``kind`` is the action that produced ``pa``; it drives the malicious streak.
    """
    if state.removed:
        raise RemovedPrincipal("cannot update a removed principal")
    _unit("pa", pa)
    alpha = params.smoothing_alpha
    value = alpha * state.value + (1.0 - alpha) * pa
    # guard against 1ulp excursions from the blend
    value = min(1.0, max(0.0, value))
    streak = state.malicious_streak + 1 if kind is ActionKind.MALICIOUS else 0
    return TrustState(value, classify(value, params.trusted_min, params.nontrusted_max), streak)


def should_remove(state: TrustState, params: TrustParams) -> bool:
    return state.malicious_streak >= params.removal_streak


def mark_removed(state: TrustState) -> TrustState:
    return replace(state, trust_class=TrustClass.NON_TRUSTED, removed=True)


def apply_action(ledger: TrustLedger, state: TrustState, kind: ActionKind,
                 params: TrustParams) -> tuple[TrustLedger, TrustState]:
    """Record ``kind`` and fold the recomputed probability into the state."""
    ledger = record_action(ledger, kind, params)
    pa = action_probability(ledger, params.weight_for(kind), params.level)
    return ledger, update_trust(state, pa, params, kind)
