"""Ed25519 signing keys and the entity key registry.

Keys are derived deterministically from a scenario seed and the entity id so
that signatures, and therefore event logs, are reproducible.
"""

from __future__ import annotations

import hashlib
from typing import Dict, Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .trust_core import EntityId


def key_id_for(public: Ed25519PublicKey) -> str:
    raw = public.public_bytes(Encoding.Raw, PublicFormat.Raw)
    return hashlib.sha256(raw).hexdigest()[:16]


class KeyPair:
    def __init__(self, private: Ed25519PrivateKey) -> None:
        self._private = private
        self.public = private.public_key()
        self.key_id = key_id_for(self.public)

    @classmethod
    def derive(cls, seed: int, entity_id: EntityId) -> "KeyPair":
        material = hashlib.sha256(f"trustweave-key:{seed}:{entity_id}".encode()).digest()
        return cls(Ed25519PrivateKey.from_private_bytes(material))

    def sign(self, data: bytes) -> bytes:
        return self._private.sign(data)

    def __repr__(self) -> str:
        return f"KeyPair(key_id={self.key_id!r})"


def verify_signature(public: Ed25519PublicKey, data: bytes, signature: bytes) -> bool:
    try:
        public.verify(signature, data)
    except (InvalidSignature, ValueError):
        return False
    return True


class KeyRegistry:
    """Maps entity ids to their registered public keys."""

    def __init__(self) -> None:
        self._keys: Dict[EntityId, Ed25519PublicKey] = {}

    def register(self, entity_id: EntityId, public: Ed25519PublicKey) -> None:
        self._keys[entity_id] = public

    def get(self, entity_id: EntityId) -> Optional[Ed25519PublicKey]:
        return self._keys.get(entity_id)

    def key_id(self, entity_id: EntityId) -> Optional[str]:
        public = self._keys.get(entity_id)
        return None if public is None else key_id_for(public)

    def __contains__(self, entity_id: object) -> bool:
        return entity_id in self._keys

    def verify(self, entity_id: EntityId, data: bytes, signature: bytes) -> bool:
        public = self._keys.get(entity_id)
        return public is not None and verify_signature(public, data, signature)
