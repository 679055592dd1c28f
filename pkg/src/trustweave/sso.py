"""Generalised single sign-on with trust checks C and D.

Connection numbering (1-8):

    1  User -> SP          service request
    2  SP -> SPIdP         forward authentication request
       [check C at SPIdP on UserIdP, MakeGoodAssertions]
    3  SPIdP -> UserIdP    authentication request
       [check D at UserIdP on SPIdP, MaintainPrivacy]
    4  UserIdP -> User     authentication challenge
    5  User -> UserIdP     credential; UserIdP authenticates and issues
    6  UserIdP -> SPIdP    authentication response with assertion
    7  SPIdP -> SP         verified result
    8  SP -> User          service granted

Connections 2, 3 and 7 follow the protocol description directly; 1, 4-6 and 8
are this module's assumption and live only in :func:`build_sso_spec`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

from .messages import PayloadKind
from .operations import (ActionKind, LocalAction, Message, OperationOutcome, OperationSpec,
                         RelationshipId, Role, TrustCheck)
from .trust_core import EntityId, check_value


@dataclass(frozen=True)
class SsoParams:
    threshold_c: float = 0.5
    threshold_d: float = 0.5
    attributes_requested: Tuple[str, ...] = ("name",)
    # adds G at the SP and H at the SP's IdP around connection 2
    check_sp_link: bool = False

    def __post_init__(self) -> None:
        check_value(self.threshold_c, "threshold_c")
        check_value(self.threshold_d, "threshold_d")


def build_sso_spec(params: SsoParams = SsoParams()) -> OperationSpec:
    U, UI, S, SI = Role.USER, Role.USER_IDP, Role.SP, Role.SP_IDP
    steps = [Message(U, S, PayloadKind.SERVICE_REQUEST, 1)]
    if params.check_sp_link:
        steps.append(TrustCheck(S, SI, RelationshipId.G, params.threshold_c))
    steps.append(Message(S, SI, PayloadKind.AUTHN_REQUEST, 2))
    if params.check_sp_link:
        steps.append(TrustCheck(SI, S, RelationshipId.H, params.threshold_c))
    steps += [
        TrustCheck(SI, UI, RelationshipId.C, params.threshold_c),
        Message(SI, UI, PayloadKind.AUTHN_REQUEST, 3),
        TrustCheck(UI, SI, RelationshipId.D, params.threshold_d),
        Message(UI, U, PayloadKind.AUTHN_CHALLENGE, 4),
        Message(U, UI, PayloadKind.CREDENTIAL, 5),
        LocalAction(UI, ActionKind.AUTHENTICATE),
        LocalAction(UI, ActionKind.ISSUE_ASSERTION, peer=SI),
        Message(UI, SI, PayloadKind.AUTHN_RESPONSE, 6),
        LocalAction(SI, ActionKind.VERIFY_ASSERTION),
        Message(SI, S, PayloadKind.VERIFIED_RESULT, 7),
        Message(S, U, PayloadKind.SERVICE_GRANT, 8),
    ]
    return OperationSpec("sso", frozenset((U, UI, S, SI)), tuple(steps),
                         tuple(params.attributes_requested))


def build_attribute_query_spec(attributes: Tuple[str, ...] = ("name",),
                               threshold_c: float = 0.5,
                               threshold_d: float = 0.5) -> OperationSpec:
    """A relying IdP asks a user's IdP for attributes; no user interaction."""
    U, UI, SI = Role.USER, Role.USER_IDP, Role.SP_IDP
    steps = (
        TrustCheck(SI, UI, RelationshipId.C, threshold_c),
        Message(SI, UI, PayloadKind.ATTRIBUTE_QUERY, 1),
        TrustCheck(UI, SI, RelationshipId.D, threshold_d),
        LocalAction(UI, ActionKind.ISSUE_ASSERTION, peer=SI),
        Message(UI, SI, PayloadKind.ATTRIBUTE_RESPONSE, 2),
        LocalAction(SI, ActionKind.VERIFY_ASSERTION),
    )
    return OperationSpec("attribute-query", frozenset((U, UI, SI)), steps, tuple(attributes))


def sso_bindings(user: EntityId, sp: EntityId, user_idp: EntityId, sp_idp: EntityId):
    return {Role.USER: user, Role.SP: sp, Role.USER_IDP: user_idp, Role.SP_IDP: sp_idp}


def run_sso(network, user: EntityId, sp: EntityId, user_idp: EntityId, sp_idp: EntityId,
            params: SsoParams = SsoParams()) -> OperationOutcome:
    spec = build_sso_spec(params)
    inst = network.engine.new_instance(spec, sso_bindings(user, sp, user_idp, sp_idp))
    return network.engine.run_to_completion(inst)
