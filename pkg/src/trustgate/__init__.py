"""Two-tier agent trust gate: trust model, agent protocol and a deterministic simulator."""

from .trust import (
    ActionKind, ActionRecord, TrustClass, TrustLedger, TrustParams, TrustState,
    action_probability, classify, record_action, should_remove, update_trust,
)
from .trustdb import load_db, save_db
from .harness import Scenario, UserSpec, BehaviorProfile, run_scenario, parse_scenario

__version__ = "0.1.0"

__all__ = [
    "ActionKind", "ActionRecord", "TrustClass", "TrustLedger", "TrustParams", "TrustState",
    "action_probability", "classify", "record_action", "should_remove", "update_trust",
    "load_db", "save_db", "Scenario", "UserSpec", "BehaviorProfile", "run_scenario",
    "parse_scenario",
]
