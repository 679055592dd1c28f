"""Dynamic federations derived from evolving trust ratings.

Each entity keeps its own list of peers it will federate with in a context.
Membership is unilateral; a working SSO still needs both C and D to pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

from .trust_core import EntityId, TrustContext, check_value
from .trust_network import Basis, TrustManager


@dataclass(frozen=True)
class FederationPolicy:
    context: TrustContext
    threshold: float = 0.5
    refresh_every: int = 1

    def __post_init__(self) -> None:
        check_value(self.threshold, "threshold")
        if self.refresh_every < 1:
            raise ValueError("refresh_every must be >= 1")


@dataclass(frozen=True)
class FederationMember:
    peer: EntityId
    value: float
    basis: Basis


@dataclass(frozen=True)
class FederationList:
    owner: EntityId
    members: Tuple[FederationMember, ...]
    as_of: int

    def peers(self) -> Tuple[EntityId, ...]:
        return tuple(m.peer for m in self.members)


def refresh_federations(manager: TrustManager, policy: FederationPolicy, now: int = 0,
                        candidates: Optional[Iterable[EntityId]] = None) -> FederationList:
    """Every candidate whose rating in the policy context clears the threshold.

    Candidates default to every entity in the manager's current snapshot.
    """
    pool = manager.known_entities() if candidates is None else sorted(set(candidates))
    members = []
    for peer in pool:
        if peer == manager.owner:
            continue
        rating = manager.evaluate_trust(peer, policy.context)
        if rating.basis is not Basis.NONE and rating.value >= policy.threshold:
            members.append(FederationMember(peer, rating.value, rating.basis))
    return FederationList(manager.owner, tuple(members), now)


def is_federated(federation: FederationList, peer: EntityId) -> bool:
    return any(m.peer == peer for m in federation.members)


@dataclass
class FederationTracker:
    """Holds each entity's current list and refreshes it every ``refresh_every`` ticks."""

    policy: FederationPolicy
    lists: Dict[EntityId, FederationList] = field(default_factory=dict)

    def refresh(self, manager: TrustManager, now: int,
                candidates: Optional[Iterable[EntityId]] = None) -> FederationList:
        fresh = refresh_federations(manager, self.policy, now, candidates)
        self.lists[manager.owner] = fresh
        return fresh

    def due(self, owner: EntityId, now: int) -> bool:
        current = self.lists.get(owner)
        return current is None or now - current.as_of >= self.policy.refresh_every

    def maybe_refresh(self, manager: TrustManager, now: int,
                      candidates: Optional[Iterable[EntityId]] = None) -> FederationList:
        if self.due(manager.owner, now):
            return self.refresh(manager, now, candidates)
        return self.lists[manager.owner]
