"""Message payloads carried by the simulated network.

Every payload renders to a canonical ``key=value`` field list for the event
log. Credential material renders as ``<redacted>``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Tuple

from .trust_core import EntityId, TrustContext


class PayloadKind(enum.Enum):
    SERVICE_REQUEST = "service_request"
    AUTHN_REQUEST = "authn_request"
    AUTHN_CHALLENGE = "authn_challenge"
    CREDENTIAL = "credential"
    AUTHN_RESPONSE = "authn_response"
    VERIFIED_RESULT = "verified_result"
    SERVICE_GRANT = "service_grant"
    ATTRIBUTE_QUERY = "attribute_query"
    ATTRIBUTE_RESPONSE = "attribute_response"
    FAILURE = "failure"
    REFERRAL_QUERY = "referral_query"
    REFERRAL_RESPONSE = "referral_response"


@dataclass(frozen=True)
class ReferralQuery:
    crawl_id: str
    trustee: Optional[EntityId]
    context: TrustContext

    kind = PayloadKind.REFERRAL_QUERY

    def log_fields(self) -> Tuple[Tuple[str, str], ...]:
        return (("crawl", self.crawl_id), ("trustee", self.trustee or "*"),
                ("context", str(self.context)))


@dataclass(frozen=True)
class ReferralResponse:
    crawl_id: str
    referrals: Tuple[bytes, ...]

    kind = PayloadKind.REFERRAL_RESPONSE

    def log_fields(self) -> Tuple[Tuple[str, str], ...]:
        return (("crawl", self.crawl_id), ("count", str(len(self.referrals))),
                ("referrals", ",".join(r.hex() for r in self.referrals) or "-"))


@dataclass(frozen=True)
class OperationMessage:
    """A protocol step delivered between two bound roles.

    ``step`` is the index of the spec step that produced the message. For
    failure messages it is the index of the step at which the operation
    stopped.
    """

    instance_id: str
    step: int
    payload_kind: PayloadKind
    connection: Optional[int] = None
    attributes: Tuple[str, ...] = ()
    assertion: Optional[bytes] = None
    secret: Optional[bytes] = None
    failure_code: Optional[str] = None

    @property
    def kind(self) -> PayloadKind:
        return self.payload_kind

    def log_fields(self) -> Tuple[Tuple[str, str], ...]:
        fields = [("instance", self.instance_id), ("step", str(self.step)),
                  ("conn", "-" if self.connection is None else str(self.connection))]
        if self.attributes:
            fields.append(("attrs", ",".join(self.attributes)))
        if self.assertion is not None:
            fields.append(("assertion", self.assertion.hex()))
        if self.secret is not None:
            fields.append(("credential", "<redacted>"))
        if self.failure_code is not None:
            fields.append(("code", self.failure_code))
        return tuple(fields)
