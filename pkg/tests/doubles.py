"""Deliberately broken agents used to check that violations are caught."""
from trustgate.agents import CSP_HOST, MobileAgent, MobileAgentHost, ProxyAgent, ProxySession
from trustgate.protocol import REASON_AUTH, MsgType


class EagerMobileAgent(MobileAgent):
    """Calls the service without waiting for the domain verdict."""

    def arrive(self, net):
        super().arrive(net)
        self._call_service(net)


class EagerHost(MobileAgentHost):
    def on_migrate_out(self, env, net):
        mid = env.payload["ma_id"]
        if mid in self.agents:
            return
        ma = EagerMobileAgent.from_migration(env, self.keyring, self.timing)
        self.agents[mid] = ma
        net.register(mid, ma)
        ma.arrive(net)


class LeakyProxy(ProxyAgent):
    """Migrates the request even when the TUA says the user is not trusted."""

    def on_trust_reply_user(self, env, net):
        s = self._session(env, net, "await_tua")
        if s is None:
            return
        ma = MobileAgent(s.req_id, s.user_id, self.domain_id, self.endpoint_id, s.request,
                         env.payload["trust"], self.keyring, self.timing)
        self.mobile_agents[ma.endpoint_id] = ma
        s.stage = "await_ma"
        self.send(net, MsgType.MIGRATE_OUT, CSP_HOST, **ma.migration_payload())
        net.set_timer(self.endpoint_id, self.timing.proxy_ma_wait, ("ma", s.req_id))


class SilentLoginProxy(ProxyAgent):
    """Queries the TUA without ever answering the login."""

    def on_auth_submit(self, env, net):
        p = env.payload
        if self._authenticate(p) is not None:
            self.send(net, MsgType.REJECT, env.sender, req_id=p["req_id"], reason=REASON_AUTH)
            return
        self.sessions[p["req_id"]] = ProxySession(p["req_id"], p["user_id"], env.sender,
                                                  p["request"])
        self.send(net, MsgType.TRUST_QUERY_USER, self.tua, req_id=p["req_id"],
                  user_id=p["user_id"], domain_id=self.domain_id)
        net.set_timer(self.endpoint_id, self.timing.proxy_tua_wait, ("tua", p["req_id"]))


class DoubleDeliveryProxy(ProxyAgent):
    """Sends the result to the interface twice."""

    def on_migrate_back(self, env, net):
        s = self.sessions.get(env.req_id)
        super().on_migrate_back(env, net)
        if s is not None:
            self.send(net, MsgType.DELIVER_RESULT, s.interface, session=True, req_id=s.req_id,
                      result=env.payload["result"])


class ImmortalHost(MobileAgentHost):
    """Never lets its mobile agents die."""

    def on_migrate_out(self, env, net):
        super().on_migrate_out(env, net)
        ma = self.agents.get(env.payload["ma_id"])
        if ma is not None:
            ma._destroy = lambda: None

