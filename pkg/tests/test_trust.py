import math

import pytest
from hypothesis import given, strategies as st

from trustgate.trust import (
    ActionKind, EmptyLedger, InvalidThresholds, InvalidWeight, RemovedPrincipal, TrustClass,
    TrustLedger, TrustParams, TrustState, action_probability, apply_action, classify,
    mark_removed, probability_from_counts, record_action, should_remove, update_trust,
)

P, W, M = ActionKind.POSITIVE, ActionKind.WRONG, ActionKind.MALICIOUS
DEFAULTS = TrustParams()


def ledger_of(*kinds):
    led = TrustLedger()
    for k in kinds:
        led = record_action(led, k, DEFAULTS)
    return led


@pytest.mark.parametrize("na,total,w,level,expected", [
    (0, 5, 1.0, 1, 1.0),
    (5, 5, 1.0, 1, 0.0),
    (2, 10, 0.5, 2, 0.2),
    (1, 4, 0.0, 3, 0.0),
])
def test_probability_examples(na, total, w, level, expected):
    assert probability_from_counts(na, total, w, level) == pytest.approx(expected, abs=1e-15)


def test_action_probability_reads_ledger():
    led = ledger_of(P, W, P, M, P, P, P, P, P, P)
    assert (led.negatives, led.total) == (2, 10)
    assert action_probability(led, 0.5, 2) == pytest.approx(0.2)


def test_probability_errors():
    with pytest.raises(EmptyLedger):
        probability_from_counts(0, 0, 1.0, 1)
    with pytest.raises(InvalidWeight):
        probability_from_counts(0, 1, 1.5, 1)
    with pytest.raises(InvalidWeight):
        probability_from_counts(0, 1, -0.1, 1)
    with pytest.raises(ValueError):
        probability_from_counts(3, 2, 1.0, 1)
    with pytest.raises(ValueError):
        probability_from_counts(0, 2, 1.0, 0)


def test_record_action_counters():
    assert (ledger_of(P).negatives, ledger_of(P).total) == (0, 1)
    led = record_action(ledger_of(M, P, P), M, DEFAULTS)
    assert (led.negatives, led.total) == (2, 4)
    led = record_action(ledger_of(P, P), W, DEFAULTS)
    assert (led.negatives, led.total) == (1, 3)


def test_record_action_keeps_history_and_input():
    before = ledger_of(P, W)
    after = record_action(before, M, DEFAULTS)
    assert before.total == 2
    assert after.kinds == [P, W, M]
    assert [r.seq for r in after.history] == [0, 1, 2]
    assert after.history[-1].weight == DEFAULTS.weight_malicious


def test_ledger_rejects_inconsistent_counters():
    with pytest.raises(ValueError):
        TrustLedger(negatives=1, total=0)
    with pytest.raises(ValueError):
        TrustLedger(negatives=0, total=1, history=ledger_of(M).history)


@pytest.mark.parametrize("value,alpha,pa,expected", [
    (0.5, 0.5, 0.5, 0.5),
    (1.0, 0.5, 0.0, 0.5),
    (0.8, 0.25, 0.2, 0.35),
])
def test_update_trust_examples(value, alpha, pa, expected):
    params = TrustParams(smoothing_alpha=alpha)
    state = TrustState(value, classify(value, 0.7, 0.3))
    assert update_trust(state, pa, params, P).value == pytest.approx(expected, abs=1e-15)


def test_update_trust_reclassifies_and_tracks_streak():
    s = TrustState.initial(DEFAULTS)
    assert s.trust_class is TrustClass.INNOCENT
    s = update_trust(s, 1.0, DEFAULTS, P)
    s = update_trust(s, 1.0, DEFAULTS, P)
    assert s.trust_class is TrustClass.TRUSTED
    s = update_trust(s, 0.0, DEFAULTS, M)
    s = update_trust(s, 0.0, DEFAULTS, M)
    assert s.malicious_streak == 2
    s = update_trust(s, 0.5, DEFAULTS, W)
    assert s.malicious_streak == 0


def test_update_trust_refuses_removed_and_bad_pa():
    s = mark_removed(TrustState.initial(DEFAULTS))
    assert s.trust_class is TrustClass.NON_TRUSTED
    with pytest.raises(RemovedPrincipal):
        update_trust(s, 1.0, DEFAULTS, P)
    with pytest.raises(ValueError):
        update_trust(TrustState.initial(DEFAULTS), 1.5, DEFAULTS, P)


@pytest.mark.parametrize("value,expected", [
    (0.9, TrustClass.TRUSTED), (0.5, TrustClass.INNOCENT), (0.7, TrustClass.TRUSTED),
    (0.3, TrustClass.INNOCENT), (0.29, TrustClass.NON_TRUSTED),
])
def test_classify(value, expected):
    assert classify(value, 0.7, 0.3) is expected


def test_classify_rejects_crossed_thresholds():
    with pytest.raises(InvalidThresholds):
        classify(0.5, 0.3, 0.7)
    with pytest.raises(InvalidThresholds):
        TrustParams(trusted_min=0.4, nontrusted_max=0.4)


@pytest.mark.parametrize("streak,expected", [(3, True), (0, False), (2, False), (4, True)])
def test_should_remove(streak, expected):
    assert should_remove(TrustState(0.1, TrustClass.NON_TRUSTED, streak), DEFAULTS) is expected


def test_params_validation():
    with pytest.raises(ValueError):
        TrustParams(level=0)
    with pytest.raises(ValueError):
        TrustParams(level=True)
    with pytest.raises(ValueError):
        TrustParams(weight_wrong=0.05)  # below malicious
    with pytest.raises(ValueError):
        TrustParams(smoothing_alpha=1.2)
    with pytest.raises(ValueError):
        TrustParams(removal_streak=0)


def test_apply_action_matches_hand_values():
    led, s = apply_action(TrustLedger(), TrustState.initial(DEFAULTS), P, DEFAULTS)
    assert s.value == pytest.approx(0.75)
    led, s = apply_action(TrustLedger(), TrustState.initial(DEFAULTS), M, DEFAULTS)
    assert s.value == pytest.approx(0.25)
    assert s.malicious_streak == 1


def test_three_malicious_then_removal():
    led, s = TrustLedger(), TrustState.initial(DEFAULTS)
    flags = []
    for _ in range(3):
        led, s = apply_action(led, s, M, DEFAULTS)
        flags.append(should_remove(s, DEFAULTS))
    assert flags == [False, False, True]


def test_positive_after_two_malicious_resets_streak():
    led, s = TrustLedger(), TrustState.initial(DEFAULTS)
    for k in (M, M, P, M):
        led, s = apply_action(led, s, k, DEFAULTS)
    assert s.malicious_streak == 1 and not should_remove(s, DEFAULTS)


# --- properties ---------------------------------------------------------------

counts = st.integers(1, 10_000).flatmap(lambda t: st.tuples(st.integers(0, t), st.just(t)))
unit = st.floats(0.0, 1.0)
levels = st.integers(1, 10)


@given(counts, unit, levels)
def test_probability_in_unit_interval(c, w, level):
    assert 0.0 <= probability_from_counts(c[0], c[1], w, level) <= 1.0


@given(counts, unit, levels)
def test_probability_matches_direct_formula(c, w, level):
    na, total = c
    expected = (1 - na / total) * w ** level
    assert math.isclose(probability_from_counts(na, total, w, level), expected, abs_tol=1e-12)


@given(st.lists(st.sampled_from(list(ActionKind)), max_size=40), st.sampled_from(list(ActionKind)))
def test_record_action_preserves_counter_invariant(kinds, extra):
    led = record_action(ledger_of(*kinds), extra, DEFAULTS)
    assert 0 <= led.negatives <= led.total == len(kinds) + 1


@given(unit, unit, st.floats(0.0, 1.0))
def test_update_stays_between_old_value_and_pa(value, pa, alpha):
    params = TrustParams(smoothing_alpha=alpha)
    new = update_trust(TrustState(value, classify(value, 0.7, 0.3)), pa, params, P).value
    assert min(value, pa) - 1e-15 <= new <= max(value, pa) + 1e-15
