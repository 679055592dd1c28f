"""Entities, partial identities, credentials and signed identity assertions."""

from __future__ import annotations

import enum
import hmac
import json
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, Mapping, Optional, Set, Tuple

from .crypto import KeyPair, KeyRegistry
from .trust_core import EntityId, TrustStore


class IdentityError(Exception):
    pass


class UnknownSubject(IdentityError):
    pass


class NotAnIdP(IdentityError):
    pass


class VerificationError(IdentityError):
    code = "verification_failed"


class BadSignature(VerificationError):
    code = "bad_signature"


class AudienceMismatch(VerificationError):
    code = "audience_mismatch"


class ReplayDetected(VerificationError):
    code = "replay_detected"


class EntityRole(enum.Enum):
    USER = "User"
    IDP = "IdP"
    SP = "SP"


@dataclass(frozen=True)
class Credential:
    """Shared-secret credential. The secret never appears in repr or logs."""

    secret: bytes = field(repr=False)
    kind: str = "SharedSecret"

    def __repr__(self) -> str:
        return f"Credential(kind={self.kind!r}, secret=<redacted>)"


@dataclass
class PartialIdentity:
    owner: EntityId
    attributes: Dict[str, str]
    credential: Credential


@dataclass(frozen=True)
class IdentityAssertion:
    issuer: EntityId
    subject: EntityId
    audience: EntityId
    attributes: Tuple[Tuple[str, str], ...]
    nonce: bytes
    issued_at: int
    signature: bytes = b""

    def signed_bytes(self) -> bytes:
        body = [self.issuer, self.subject, self.audience,
                [list(kv) for kv in self.attributes], self.nonce.hex(), self.issued_at]
        return json.dumps(body, separators=(",", ":"), ensure_ascii=False).encode("utf-8")

    def attribute_map(self) -> Dict[str, str]:
        return dict(self.attributes)

    def to_bytes(self) -> bytes:
        doc = json.loads(self.signed_bytes())
        doc.append(self.signature.hex())
        return json.dumps(doc, separators=(",", ":"), ensure_ascii=False).encode("utf-8")

    @classmethod
    def from_bytes(cls, data: bytes) -> "IdentityAssertion":
        try:
            issuer, subject, audience, attrs, nonce, issued_at, sig = json.loads(data)
            return cls(issuer, subject, audience,
                       tuple((str(k), str(v)) for k, v in attrs),
                       bytes.fromhex(nonce), int(issued_at), bytes.fromhex(sig))
        except (ValueError, TypeError) as exc:
            raise BadSignature(f"undecodable assertion: {exc}") from None


@dataclass
class Entity:
    """A network participant.

    ``partial_identities`` are the subjects this entity has registered as an
    IdP, keyed by subject id. ``wallet`` holds the credentials this entity
    presents to its own IdPs, keyed by IdP id.
    """

    id: EntityId
    roles: Set[EntityRole]
    keypair: KeyPair
    trust_store: TrustStore
    partial_identities: Dict[EntityId, PartialIdentity] = field(default_factory=dict)
    wallet: Dict[EntityId, Credential] = field(default_factory=dict)
    replay_cache: Dict[bytes, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("entity id must be non-empty")
        if self.trust_store.owner != self.id:
            raise ValueError("trust store owner must be the entity")

    @property
    def is_idp(self) -> bool:
        return EntityRole.IDP in self.roles

    def register(self, subject: EntityId, attributes: Mapping[str, str],
                 secret: bytes) -> PartialIdentity:
        pid = PartialIdentity(subject, dict(attributes), Credential(secret))
        self.partial_identities[subject] = pid
        return pid


def create_assertion(idp: Entity, subject: EntityId, audience: EntityId,
                     attributes: Iterable[str], nonce: bytes, now: int) -> IdentityAssertion:
    """Sign an assertion about ``subject`` carrying only registered attributes."""
    if not idp.is_idp:
        raise NotAnIdP(f"{idp.id} is not an identity provider")
    pid = idp.partial_identities.get(subject)
    if pid is None and subject != idp.id:
        raise UnknownSubject(f"{subject} is not registered with {idp.id}")
    registered = pid.attributes if pid is not None else {}
    wanted = sorted(set(attributes))
    released = tuple((name, registered[name]) for name in wanted if name in registered)
    unsigned = IdentityAssertion(idp.id, subject, audience, released, bytes(nonce), now)
    return replace(unsigned, signature=idp.keypair.sign(unsigned.signed_bytes()))


def verify_assertion(assertion: IdentityAssertion, expected_audience: EntityId,
                     keys: KeyRegistry, now: int,
                     replay_cache: Dict[bytes, int]) -> IdentityAssertion:
    """Check signature, audience and nonce freshness; records the nonce on success.

    Raises BadSignature, AudienceMismatch or ReplayDetected.
    """
    if not keys.verify(assertion.issuer, assertion.signed_bytes(), assertion.signature):
        raise BadSignature(f"assertion from {assertion.issuer} does not verify")
    if assertion.audience != expected_audience:
        raise AudienceMismatch(
            f"assertion for {assertion.audience} presented to {expected_audience}")
    if assertion.nonce in replay_cache:
        raise ReplayDetected(f"nonce {assertion.nonce.hex()} already seen")
    replay_cache[assertion.nonce] = now
    return assertion


def authenticate_local(entity: Entity, subject: EntityId,
                       presented: Optional[Credential]) -> bool:
    pid = entity.partial_identities.get(subject)
    if pid is None or presented is None:
        return False
    return hmac.compare_digest(pid.credential.secret, presented.secret)
