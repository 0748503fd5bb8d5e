from collections import Counter

import pytest

from trustgate.agents import (
    Busy, CspService, DomainTrustAgent, InterfaceAgent, InvalidRequest, LifeState, ProxyAgent,
    Timing, TrustUserAgent,
)
from trustgate.harness import BehaviorProfile, Scenario, UserSpec, build_world
from trustgate.protocol import Keyring, MsgType
from trustgate.simnet import FaultPlan
from trustgate.trust import ActionKind, TrustClass, TrustParams, TrustState

P, W, M = ActionKind.POSITIVE, ActionKind.WRONG, ActionKind.MALICIOUS


def make_world(users=("alice",), user_threshold=0.7, domains=None, overrides=None, **kw):
    specs = tuple(u if isinstance(u, UserSpec) else UserSpec(u, "A", "pw") for u in users)
    sc = Scenario(domains or {"A": 0.5}, specs, TrustParams(user_threshold=user_threshold),
                  seed=11, **kw)
    return build_world(sc, overrides)


def set_trust(tua, user, value):
    tua.record_for(user).state = TrustState(value, TrustClass.TRUSTED if value >= 0.7
                                            else TrustClass.INNOCENT)


def sent(world, msg_type, req_id=None):
    return [r for r in world.net.trace if r.event == "Sent" and r.msg_type == msg_type.value
            and (req_id is None or r.req_id == req_id)]


def submit_and_run(world, user="alice", request="records"):
    req = world.interfaces[user].submit(request, world.net)
    world.net.run_until_quiescent()
    return req


# --- interface -----------------------------------------------------------------

def test_submit_sends_one_auth_submit():
    w = make_world()
    req = w.interfaces["alice"].submit("records", w.net)
    assert req == "alice#0"
    assert [r.msg_type for r in w.net.trace] == ["AuthSubmit"]


def test_second_submit_while_pending_is_busy():
    w = make_world()
    w.interfaces["alice"].submit("records", w.net)
    with pytest.raises(Busy):
        w.interfaces["alice"].submit("records", w.net)
    assert len(w.net.trace) == 1


def test_empty_user_id_rejected_locally():
    w = make_world()
    iface = InterfaceAgent("", "A", "pw", Keyring(b"x"))
    with pytest.raises(InvalidRequest):
        iface.submit("records", w.net)
    assert len(w.net.trace) == 0


# --- proxy authentication ------------------------------------------------------

def test_correct_password_opens_session():
    w = make_world(user_threshold=0.0)
    w.interfaces["alice"].submit("records", w.net)
    w.net.step()  # AuthSubmit delivered
    assert "alice#0" in w.proxies["A"].sessions
    assert [(r.msg_type, r.note) for r in sent(w, MsgType.AUTH_RESULT)] == [("AuthResult", "ok")]


def test_wrong_password_is_rejected_without_session():
    w = make_world([UserSpec("alice", "A", "pw", submitted_password="nope")])
    submit_and_run(w)
    assert w.proxies["A"].sessions == {}
    assert [r.note for r in sent(w, MsgType.REJECT)] == ["auth"]
    assert sent(w, MsgType.TRUST_QUERY_USER) == []
    assert w.proxies["A"].audit[-1]["cause"] == "bad_password"


def test_unknown_and_bad_password_look_alike_on_the_wire():
    w = make_world(["alice", UserSpec("bob", "A", "pw", submitted_password="x")])
    w.proxies["A"].credentials.pop("alice")
    submit_and_run(w, "alice")
    submit_and_run(w, "bob")
    assert [r.note for r in sent(w, MsgType.REJECT)] == ["auth", "auth"]
    causes = [e["cause"] for e in w.proxies["A"].audit if e["event"] == "auth_failed"]
    assert causes == ["unknown_user", "bad_password"]


def test_removed_user_rejected_with_correct_password():
    w = make_world()
    w.directories["A"].remove("alice")
    submit_and_run(w)
    assert [r.note for r in sent(w, MsgType.REJECT)] == ["auth"]
    assert sent(w, MsgType.TRUST_QUERY_USER) == []


# --- user gate ----------------------------------------------------------------

def test_trusted_user_is_migrated():
    w = make_world()
    set_trust(w.tuas["A"], "alice", 0.9)
    submit_and_run(w)
    assert len(sent(w, MsgType.MIGRATE_OUT)) == 1
    assert w.interfaces["alice"].outcomes[0].status == "granted"


def test_untrusted_user_is_rejected():
    w = make_world()
    set_trust(w.tuas["A"], "alice", 0.2)
    submit_and_run(w)
    assert sent(w, MsgType.MIGRATE_OUT) == []
    assert [r.note for r in sent(w, MsgType.REJECT)] == ["user_gate"]


class MuteTUA(TrustUserAgent):
    def on_trust_query_user(self, env, net):
        pass


def test_lost_tua_reply_times_out_closed():
    w = make_world(overrides={"tua": MuteTUA})
    submit_and_run(w)
    rej = sent(w, MsgType.REJECT)
    assert [r.note for r in rej] == ["timeout"]
    auth = sent(w, MsgType.AUTH_SUBMIT)[0]
    assert rej[0].time - auth.time == 1 + Timing().timeout
    assert sent(w, MsgType.MIGRATE_OUT) == []


# --- TUA check ----------------------------------------------------------------

@pytest.mark.parametrize("threshold,expected", [(0.7, False), (0.5, True)])
def test_fresh_user_against_threshold(threshold, expected):
    w = make_world(user_threshold=threshold)
    assert w.tuas["A"].is_trusted("newcomer") is expected
    assert w.tuas["A"].users["newcomer"].state.value == 0.5


def test_removed_user_never_trusted():
    w = make_world(user_threshold=0.0)
    w.directories["A"].remove("alice")
    assert not w.tuas["A"].is_trusted("alice")


# --- mobile agent at the provider ----------------------------------------------

def test_normal_migration_sends_one_domain_query():
    w = make_world(user_threshold=0.5)
    submit_and_run(w)
    assert len(sent(w, MsgType.DOMAIN_TRUST_QUERY)) == 1
    assert w.host.agents["ma:alice#0"].state is LifeState.DESTROYED


def test_duplicated_migration_is_ignored():
    w = make_world(user_threshold=0.5, faults=FaultPlan(dup_prob=1.0))
    submit_and_run(w)
    migrations = [r for r in w.net.trace if r.msg_type == "MigrateOut"]
    assert Counter(r.event for r in migrations)["Delivered"] == 2
    assert len(sent(w, MsgType.DOMAIN_TRUST_QUERY)) == 1
    assert any(e["event"] in ("duplicate", "duplicate_migration") for e in w.host.audit)


class ForgingProxy(ProxyAgent):
    """Seals its MigrateOut envelopes with a key the provider does not share."""

    def send(self, net, msg_type, to, **kw):
        if msg_type is MsgType.MIGRATE_OUT:
            saved, self.keyring = self.keyring, Keyring(b"forged")
            try:
                return super().send(net, msg_type, to, **kw)
            finally:
                self.keyring = saved
        return super().send(net, msg_type, to, **kw)


def test_tampered_migration_never_instantiates_agent():
    w = make_world(user_threshold=0.5, overrides={"proxy": ForgingProxy})
    submit_and_run(w)
    assert w.host.agents == {}
    assert any(e["event"] == "seal_violation" for e in w.host.audit)
    assert [r.note for r in sent(w, MsgType.REJECT)] == ["timeout"]


# --- domain trust ----------------------------------------------------------------

def test_domain_check_examples():
    dta = DomainTrustAgent(Keyring(b"k"), TrustParams(), {"A": 0.7, "B": 0.7})
    dta.domains["A"].state = TrustState(0.8, TrustClass.TRUSTED)
    dta.domains["B"].state = TrustState(0.3, TrustClass.INNOCENT)
    assert dta.is_trusted("A") and not dta.is_trusted("B")


def test_domains_with_different_thresholds_are_independent():
    dta = DomainTrustAgent(Keyring(b"k"), TrustParams(), {"A": 0.4, "B": 0.6})
    assert dta.is_trusted("A") and not dta.is_trusted("B")
    assert dta.is_trusted("fresh") is (0.5 >= TrustParams().trusted_min)


# --- mobile agent resolution -------------------------------------------------------

def test_trusted_domain_path():
    w = make_world(user_threshold=0.5)
    submit_and_run(w)
    seq = [r.msg_type for r in w.net.trace if r.event == "Sent" and r.sender == "ma:alice#0"]
    assert seq == ["DomainTrustQuery", "ServiceCall", "MigrateBack"]
    assert w.host.agents["ma:alice#0"].state is LifeState.DESTROYED


def test_untrusted_domain_path():
    w = make_world(user_threshold=0.5, domains={"A": 0.9})
    submit_and_run(w)
    assert sent(w, MsgType.SERVICE_CALL) == []
    assert [r.note for r in sent(w, MsgType.REJECT)] == ["domain_gate", "domain_gate"]
    assert w.host.agents["ma:alice#0"].state is LifeState.DESTROYED
    # the proxy charges the user a wrong action for the domain rejection
    assert w.tuas["A"].users["alice"].kinds == [W]


class MuteCsp(CspService):
    def on_service_call(self, env, net):
        self.note(net, "swallowed")


def test_lost_service_result_retries_once_then_rejects():
    w = make_world(user_threshold=0.5, overrides={"csp": MuteCsp})
    submit_and_run(w)
    assert len(sent(w, MsgType.SERVICE_CALL)) == 2
    assert sent(w, MsgType.MIGRATE_BACK) == []
    assert w.interfaces["alice"].outcomes[0].detail == "timeout"
    assert w.host.agents["ma:alice#0"].state is LifeState.DESTROYED


# --- dta_report -------------------------------------------------------------------

def report_world(threshold=0.5):
    return make_world(domains={"A": threshold})


def test_positive_report_on_healthy_domain_is_quiet():
    w = report_world()
    assert w.dta.report("alice#0", "alice", "A", P, w.net) is P
    assert sent(w, MsgType.BREACH_NOTICE) == []


def test_malicious_report_notifies_in_same_cycle():
    w = report_world()
    w.net.cycle = 41
    w.dta.report("alice#0", "alice", "A", M, w.net)
    notice = sent(w, MsgType.BREACH_NOTICE)
    assert len(notice) == 1 and notice[0].cycle == 41 and notice[0].note == "malicious"
    assert w.dta.reports[-1].notice_env == notice[0].env_id


def test_wrong_report_crossing_threshold_notifies():
    w = report_world(threshold=0.45)
    w.dta.report("alice#0", "alice", "A", W, w.net)  # Pa = 0, so trust halves to 0.25
    assert w.dta.domains["A"].state.value < 0.45
    assert [r.note for r in sent(w, MsgType.BREACH_NOTICE)] == ["wrong"]


# --- TUA breach handling -----------------------------------------------------------

def test_first_malicious_decreases_trust():
    w = make_world()
    tua = w.tuas["A"]
    before = tua.record_for("alice").state.value
    tua.apply("alice", "alice#0", M, w.net)
    assert tua.users["alice"].state.value < before


def test_third_consecutive_malicious_removes():
    w = make_world()
    tua = w.tuas["A"]
    tua.record_for("alice")
    for i in range(3):
        tua.apply("alice", f"alice#{i}", M, w.net)
    assert tua.users["alice"].state.removed
    assert not w.directories["A"].is_member("alice")
    assert "alice" in tua.removals


def test_positive_after_two_malicious_resets():
    w = make_world()
    tua = w.tuas["A"]
    tua.record_for("alice")
    for i, k in enumerate([M, M, P, M]):
        tua.apply("alice", f"alice#{i}", k, w.net)
    assert not tua.users["alice"].state.removed


def test_each_request_recorded_once():
    w = make_world()
    tua = w.tuas["A"]
    tua.record_for("alice")
    assert tua.apply("alice", "alice#0", M, w.net)
    assert not tua.apply("alice", "alice#0", W, w.net)
    assert tua.users["alice"].kinds == [M]


def test_unknown_user_notice_is_logged_and_dropped():
    w = make_world()
    assert not w.tuas["A"].apply("ghost", "ghost#0", M, w.net)
    assert w.tuas["A"].audit[-1]["event"] == "unknown_user"


# --- delivery -----------------------------------------------------------------

def test_granted_request_delivered_once_to_owner():
    w = make_world(["alice", "bob"], user_threshold=0.5)
    w.interfaces["alice"].submit("records", w.net)
    w.interfaces["bob"].submit("records", w.net)
    w.net.run_until_quiescent()
    deliveries = [r for r in w.net.trace if r.event == "Delivered"
                  and r.msg_type == "DeliverResult"]
    assert sorted((r.req_id, r.receiver) for r in deliveries) == [
        ("alice#0", "iface:alice"), ("bob#0", "iface:bob")]
    assert w.tuas["A"].users["alice"].kinds == [P]
    assert w.tuas["A"].users["bob"].kinds == [P]


def test_user_removed_mid_flight_gets_no_result():
    w = make_world(user_threshold=0.5)
    w.interfaces["alice"].submit("records", w.net)
    while not sent(w, MsgType.MIGRATE_OUT):
        w.net.step()
    w.directories["A"].remove("alice")
    w.net.run_until_quiescent()
    assert sent(w, MsgType.DELIVER_RESULT) == []
    assert [r.note for r in sent(w, MsgType.REJECT)] == ["session_expired"]
    assert w.proxies["A"].audit[-1]["event"] == "session_expired"


def test_attacker_outcomes_reach_the_tua():
    w = make_world([UserSpec("eve", "A", "pw", BehaviorProfile("attacker", q=1.0, k=1), 2)],
                   user_threshold=0.0, domains={"A": 0.0})
    w.net.run_until_quiescent()
    assert w.tuas["A"].users["eve"].kinds == [P, M]
