"""Deterministic in-memory network of entities.

A single global queue holds envelopes and timers. Each item is delivered one
tick after it is enqueued; items landing on the same tick are ordered by a
key drawn from the seeded RNG at enqueue time. Handlers run to completion,
so a (config, graph, scenario) triple always yields the same event log.
"""

from __future__ import annotations

import enum
import heapq
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import (Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Set,
                    Tuple, Union)

from .crypto import KeyPair, KeyRegistry
from .graph import ParseError, TrustGraph, format_value, load_graph, parse_graph
from .identity import Entity, EntityRole, IdentityAssertion
from .messages import OperationMessage, PayloadKind, ReferralQuery, ReferralResponse
from .operations import OperationEngine, OperationOutcome, RelationshipId, Role
from .trust_core import (ArcKind, DEFAULT_ALPHA, DEFAULT_REFEREE_PENALTY, EntityId,
                         ExperienceReport, TrustStore)
from .trust_network import (AggregationStrategy, Basis, DEFAULT_MAX_DEPTH, Referral,
                            TrustManager, TrustRating, aggregate, path_score,
                            sign_referral)

BAD_OUTCOME = 0.5


class DuplicateEntity(ValueError):
    pass


class UnknownEntity(ValueError):
    pass


class AdversaryTag(enum.Enum):
    LYING_REFEREE = "LyingReferee"
    BAD_ASSERTER = "BadAsserter"
    TAMPERING_FORWARDER = "TamperingForwarder"


@dataclass(frozen=True)
class AdversaryKind:
    tag: AdversaryTag
    inflation: float = 0.0

    def __str__(self) -> str:
        if self.tag is AdversaryTag.LYING_REFEREE:
            return f"{self.tag.value}({format_value(self.inflation)})"
        return self.tag.value


@dataclass(frozen=True)
class NetworkConfig:
    seed: int = 0
    drop_probability: float = 0.0
    max_ticks: int = 100_000
    adversaries: Tuple[Tuple[EntityId, AdversaryKind], ...] = ()
    alpha: float = DEFAULT_ALPHA
    referee_penalty: float = DEFAULT_REFEREE_PENALTY
    strategy: AggregationStrategy = AggregationStrategy.MAX_PATH
    max_depth: int = DEFAULT_MAX_DEPTH

    def __post_init__(self) -> None:
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError("drop_probability must be in [0, 1]")


@dataclass(frozen=True)
class EntitySpec:
    id: EntityId
    roles: frozenset = frozenset()


@dataclass(frozen=True)
class Registration:
    subject: EntityId
    idp: EntityId
    attributes: Tuple[Tuple[str, str], ...]
    secret: bytes = field(repr=False)


@dataclass(frozen=True)
class Envelope:
    sender: EntityId
    receiver: EntityId
    payload: object
    instance_id: Optional[str]
    sent_at: int
    seq: int

    def log_fields(self) -> str:
        head = (f"from={self.sender} to={self.receiver} kind={self.payload.kind.value} "
                f"sent={self.sent_at} seq={self.seq}")
        body = " ".join(f"{k}={v}" for k, v in self.payload.log_fields())
        return f"{head} {body}".rstrip()


class EventLog:
    def __init__(self) -> None:
        self.records: List[str] = []

    def add(self, record: str) -> None:
        self.records.append(record)

    def render(self) -> str:
        return "".join(r + "\n" for r in self.records)

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class Node:
    entity: Entity
    manager: TrustManager
    adversary: Optional[AdversaryKind] = None


class Network:
    def __init__(self, config: NetworkConfig) -> None:
        self.config = config
        self.rng = random.Random(config.seed)
        self.keys = KeyRegistry()
        self.nodes: Dict[EntityId, Node] = {}
        self.offline: Set[EntityId] = set()
        self.now = 0
        self.log = EventLog()
        self.engine = OperationEngine(self)
        self.interceptor: Optional[Callable[[Envelope], Envelope]] = None
        self._queue: List[tuple] = []
        self._seq = 0

    # topology ---------------------------------------------------------------

    def add_entity(self, spec: EntitySpec, store: Optional[TrustStore] = None) -> Node:
        if spec.id in self.nodes:
            raise DuplicateEntity(f"duplicate entity {spec.id!r}")
        keypair = KeyPair.derive(self.config.seed, spec.id)
        if store is None:
            store = TrustStore(spec.id, self.config.alpha, self.config.referee_penalty)
        entity = Entity(spec.id, set(spec.roles), keypair, store)
        manager = TrustManager(store, self.keys, keypair, self.config.strategy,
                               self.config.max_depth)
        self.keys.register(spec.id, keypair.public)
        node = Node(entity, manager)
        self.nodes[spec.id] = node
        return node

    def entity(self, entity_id: EntityId) -> Entity:
        return self.nodes[entity_id].entity

    def manager(self, entity_id: EntityId) -> TrustManager:
        return self.nodes[entity_id].manager

    def disconnect(self, entity_id: EntityId) -> None:
        self.offline.add(entity_id)

    # scheduling -------------------------------------------------------------

    def _push(self, delay: int, item) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (self.now + delay, self.rng.random(), self._seq, item))

    def schedule(self, delay: int, callback: Callable[[], None]) -> None:
        self._push(max(delay, 0), callback)

    def note(self, event: str, envelope: Envelope) -> None:
        self.log.add(f"{event} tick={self.now} {envelope.log_fields()}")

    def send(self, sender: EntityId, receiver: EntityId, payload,
             instance_id: Optional[str] = None) -> None:
        self._seq += 1
        env = Envelope(sender, receiver, payload, instance_id, self.now, self._seq)
        node = self.nodes.get(sender)
        if node is not None and node.adversary is not None:
            mutated = apply_adversary(node, env)
            if mutated != env:
                self.note("mutate", env)
            env = mutated
        self.note("send", env)
        if self.config.drop_probability > 0.0 and self.rng.random() < self.config.drop_probability:
            self.note("drop", env)
            return
        self._push(1, env)

    def pending(self) -> int:
        return len(self._queue)

    def run_until_quiet(self) -> EventLog:
        while self._queue:
            tick, _, _, item = heapq.heappop(self._queue)
            if tick > self.config.max_ticks:
                self.log.add(f"limit tick={self.now} dropped={len(self._queue) + 1}")
                self._queue.clear()
                break
            self.now = tick
            if isinstance(item, Envelope):
                self._deliver(item)
            else:
                item()
        return self.log

    def _deliver(self, env: Envelope) -> None:
        if self.interceptor is not None:
            env = self.interceptor(env)
        node = self.nodes.get(env.receiver)
        if node is None or env.receiver in self.offline:
            self.note("lost", env)
            return
        self.note("deliver", env)
        payload = env.payload
        if isinstance(payload, ReferralQuery):
            node.manager.handle_referral_query(self, env.sender, payload)
        elif isinstance(payload, ReferralResponse):
            node.manager.handle_referral_response(self, env.sender, payload)
        elif isinstance(payload, OperationMessage):
            self.engine.deliver(env)

    def arcs_snapshot(self) -> List[str]:
        out = []
        for ent_id in sorted(self.nodes):
            for arc in self.nodes[ent_id].entity.trust_store.arcs():
                out.append(f"arc trustor={arc.trustor} trustee={arc.trustee} "
                           f"context={arc.context} kind={arc.kind.value} "
                           f"value={format_value(arc.value)}")
        return out


# -- construction ------------------------------------------------------------

GraphSource = Union[TrustGraph, str, Path]


def build_network(config: NetworkConfig, graph: GraphSource,
                  entities: Sequence[EntitySpec],
                  registrations: Iterable[Registration] = ()) -> Network:
    """Create a network, load every entity's trust store and register identities.

    ``graph`` may be a :class:`TrustGraph`, a path, or graph text.
    """
    net = Network(config)
    for spec in entities:
        net.add_entity(spec)
    known = set(net.nodes)
    if isinstance(graph, Path):
        graph = load_graph(graph, known)
    elif isinstance(graph, str):
        graph = parse_graph(graph, None, known)
    else:
        for arc in graph.arcs():
            for ent in (arc.trustor, arc.trustee):
                if ent not in known:
                    raise ParseError(f"unknown entity {ent!r} in graph")
    for arc in graph.arcs():
        net.entity(arc.trustor).trust_store.record_arc(arc)
    for reg in registrations:
        for ent in (reg.subject, reg.idp):
            if ent not in known:
                raise UnknownEntity(f"registration names unknown entity {ent!r}")
        net.entity(reg.idp).register(reg.subject, dict(reg.attributes), reg.secret)
        net.entity(reg.subject).wallet[reg.idp] = \
            net.entity(reg.idp).partial_identities[reg.subject].credential
    for ent_id, kind in config.adversaries:
        if ent_id not in known:
            raise UnknownEntity(f"adversary on unknown entity {ent_id!r}")
        net.nodes[ent_id].adversary = kind
    return net


# -- adversaries -------------------------------------------------------------

def apply_adversary(node: Node, outbound: Envelope) -> Envelope:
    """Rewrite an outbound envelope according to the node's adversary tag.

    Only envelopes sent by ``node`` itself are ever touched.
    """
    adv = node.adversary
    if adv is None or outbound.sender != node.entity.id:
        return outbound
    payload = outbound.payload
    if adv.tag is AdversaryTag.LYING_REFEREE and isinstance(payload, ReferralResponse):
        blobs = []
        for blob in payload.referrals:
            ref = Referral.from_bytes(blob)
            if ref.referee == node.entity.id:
                stmt = ref.statement
                lie = min(1.0, stmt.value * (1.0 + adv.inflation))
                ref = sign_referral(node.entity.keypair, stmt.with_value(lie))
            blobs.append(ref.to_bytes())
        return replace(outbound, payload=replace(payload, referrals=tuple(blobs)))
    if adv.tag is AdversaryTag.BAD_ASSERTER and isinstance(payload, OperationMessage) \
            and payload.assertion is not None:
        assertion = IdentityAssertion.from_bytes(payload.assertion)
        forged = tuple((k, f"forged:{v}") for k, v in assertion.attributes) or (("forged", "1"),)
        fake = replace(assertion, attributes=forged, signature=b"")
        fake = replace(fake, signature=node.entity.keypair.sign(fake.signed_bytes()))
        return replace(outbound, payload=replace(payload, assertion=fake.to_bytes()))
    if adv.tag is AdversaryTag.TAMPERING_FORWARDER:
        if isinstance(payload, ReferralResponse):
            blobs = tuple(_flip_last(b) for b in payload.referrals)
            return replace(outbound, payload=replace(payload, referrals=blobs))
        if isinstance(payload, OperationMessage) and payload.assertion is not None:
            assertion = IdentityAssertion.from_bytes(payload.assertion)
            broken = replace(assertion, signature=_flip_last(assertion.signature))
            return replace(outbound, payload=replace(payload, assertion=broken.to_bytes()))
    return outbound


def _flip_last(data: bytes) -> bytes:
    return data[:-1] + bytes([data[-1] ^ 0x01]) if data else data


# -- experience feedback -----------------------------------------------------

def contributing_paths(rating: TrustRating, strategy: AggregationStrategy):
    """Paths that determined a transitive rating under ``strategy``."""
    paths = list(rating.paths)
    if not paths:
        return []
    if strategy is AggregationStrategy.MAX_PATH:
        best = max(path_score(p) for p in paths)
        return [p for p in paths if path_score(p) == best]
    chosen, used = [], set()
    for p in sorted(paths, key=lambda p: (-path_score(p), p.entities)):
        keys = {a.key for a in p.arcs}
        if keys & used:
            continue
        used |= keys
        chosen.append(p)
    return chosen


@dataclass(frozen=True)
class FeedbackEvent:
    reporter: EntityId
    trustee: EntityId
    relationship: RelationshipId
    outcome: float
    basis: Basis
    action: str
    value: Optional[float] = None


def _assertion_outcome(network: Network, outcome: OperationOutcome,
                       user_idp: EntityId, subject: EntityId) -> float:
    if outcome.assertion is None:
        return 0.0
    truth = network.entity(user_idp).partial_identities.get(subject)
    registered = truth.attributes if truth is not None else {}
    for name, value in outcome.assertion.attributes:
        if registered.get(name) != value:
            return 0.0
    return 1.0


def experience_feedback(network: Network, outcomes: Iterable[Tuple[OperationOutcome,
                                                                    Mapping]]) -> List[FeedbackEvent]:
    """Turn finished operations into experience reports and referee penalties.

    Each item pairs an outcome with its role bindings. The relying IdP rates
    the asserting IdP on assertion quality once an assertion reached it; the
    asserting IdP rates the relying IdP on protocol conduct once it passed
    check D. A rating that came from direct experience is updated by EMA.
    A transitive rating that led to a bad outcome penalises every referee on
    the contributing paths; a good one seeds direct experience.
    """
    events: List[FeedbackEvent] = []
    for outcome, bindings in outcomes:
        tick = network.now
        sp_idp = bindings.get(Role.SP_IDP)
        user_idp = bindings.get(Role.USER_IDP)
        subject = bindings.get(Role.USER)
        if sp_idp is None or user_idp is None or sp_idp == user_idp:
            continue
        got_assertion = any(e.event == "action" and e.get("action") == "verify_assertion"
                            for e in outcome.transcript)
        c_rating = outcome.ratings.get(RelationshipId.C)
        if got_assertion and c_rating is not None:
            score = _assertion_outcome(network, outcome, user_idp, subject)
            events.extend(_report(network, sp_idp, user_idp, RelationshipId.C, c_rating,
                                  score, outcome.instance_id, tick))
        d_rating = outcome.ratings.get(RelationshipId.D)
        d_passed = any(e.event == "check" and e.get("rel") == "D" and e.get("result") == "pass"
                       for e in outcome.transcript)
        if d_rating is not None and d_passed:
            events.extend(_report(network, user_idp, sp_idp, RelationshipId.D, d_rating,
                                  1.0, outcome.instance_id, tick))
    return events


def _report(network: Network, reporter: EntityId, trustee: EntityId, rel: RelationshipId,
            rating: TrustRating, score: float, op_id: str, tick: int) -> List[FeedbackEvent]:
    manager = network.manager(reporter)
    store = manager.store
    ctx = rel.context
    if rating.basis is Basis.TRANSITIVE and score < BAD_OUTCOME:
        events = []
        referees = sorted({a.trustor for p in contributing_paths(rating, manager.strategy)
                           for a in p.arcs[1:]})
        for referee in referees:
            status = store.penalize_referee(referee, ctx, at=tick)
            events.append(FeedbackEvent(reporter, referee, rel, score, rating.basis,
                                        f"penalize:{status.value}",
                                        store.direct_rating(referee, ctx, ArcKind.REFERRAL)))
        return events
    new = store.apply_experience(ExperienceReport(trustee, ctx, score, op_id, tick))
    return [FeedbackEvent(reporter, trustee, rel, score, rating.basis, "experience", new)]
