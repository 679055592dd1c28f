"""The trust manager: referrals, transitive path discovery and aggregation.

A trust path is a chain of same-context referral arcs ending in exactly one
performance arc in the query context. Paths are scored by multiplying arc
values and combined by a pluggable :class:`AggregationStrategy`.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import (Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence,
                    Set, Tuple)

from .crypto import KeyPair, KeyRegistry
from .graph import TrustGraph, format_arc, parse_arc
from .messages import ReferralQuery, ReferralResponse
from .trust_core import ArcKind, EntityId, TrustArc, TrustContext, TrustStore

DEFAULT_MAX_DEPTH = 4
DEFAULT_CRAWL_TIMEOUT = 50
ORACLE_NODE_BOUND = 12


class InvalidPath(ValueError):
    pass


class MixedQuery(ValueError):
    pass


class GraphTooLarge(ValueError):
    pass


class AggregationStrategy(enum.Enum):
    MAX_PATH = "max"
    PROBABILISTIC_SUM_DISJOINT = "psum"


class Basis(enum.Enum):
    DIRECT = "direct"
    TRANSITIVE = "transitive"
    NONE = "none"


# -- referrals ---------------------------------------------------------------

_WIRE_MAGIC = b"RF1"


@dataclass(frozen=True)
class Referral:
    """A referee's own arc, signed by the referee."""

    referee: EntityId
    statement: TrustArc
    signature: bytes
    signer_key_id: str

    def signed_bytes(self) -> bytes:
        return format_arc(self.statement).encode("utf-8")

    def to_bytes(self) -> bytes:
        parts = [self.referee.encode("utf-8"), self.signed_bytes(),
                 self.signer_key_id.encode("ascii"), self.signature]
        out = bytearray(_WIRE_MAGIC)
        for part in parts:
            out += struct.pack(">H", len(part)) + part
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Referral":
        """Decode wire bytes; raises ValueError on any malformation.

        The statement bytes must be exactly the canonical record of the arc
        they parse to, so no two byte strings decode to the same referral.
        """
        if not data.startswith(_WIRE_MAGIC):
            raise ValueError("bad referral magic")
        pos = len(_WIRE_MAGIC)
        parts = []
        for _ in range(4):
            if pos + 2 > len(data):
                raise ValueError("truncated referral")
            (n,) = struct.unpack_from(">H", data, pos)
            pos += 2
            if pos + n > len(data):
                raise ValueError("truncated referral")
            parts.append(data[pos:pos + n])
            pos += n
        if pos != len(data):
            raise ValueError("trailing bytes after referral")
        referee_b, statement_b, key_id_b, signature = parts
        try:
            referee = referee_b.decode("utf-8")
            statement_text = statement_b.decode("utf-8")
            key_id = key_id_b.decode("ascii")
        except UnicodeDecodeError as exc:
            raise ValueError(f"referral text not decodable: {exc}") from None
        statement = parse_arc(statement_text)
        if format_arc(statement) != statement_text:
            raise ValueError("referral statement not in canonical form")
        return cls(referee, statement, signature, key_id)


def sign_referral(keypair: KeyPair, statement: TrustArc) -> Referral:
    data = format_arc(statement).encode("utf-8")
    return Referral(statement.trustor, statement, keypair.sign(data), keypair.key_id)


def referral_problem(referral: Referral, keys: KeyRegistry) -> Optional[str]:
    """Reason code a referral is unacceptable, or None if it verifies."""
    if referral.statement.trustor != referral.referee:
        return "impersonated"
    if referral.referee not in keys:
        return "unknown_referee"
    if keys.key_id(referral.referee) != referral.signer_key_id:
        return "wrong_key"
    if not keys.verify(referral.referee, referral.signed_bytes(), referral.signature):
        return "bad_signature"
    return None


def verify_referral(referral: Referral, keys: KeyRegistry) -> bool:
    return referral_problem(referral, keys) is None


# -- paths -------------------------------------------------------------------

@dataclass(frozen=True)
class PathQuery:
    source: EntityId
    sink: EntityId
    context: TrustContext
    max_depth: int = DEFAULT_MAX_DEPTH

    def __post_init__(self) -> None:
        if self.max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.context.referral:
            raise ValueError("query context must be a target context")


@dataclass(frozen=True)
class TrustPath:
    source: EntityId
    arcs: Tuple[TrustArc, ...]
    context: TrustContext

    @property
    def sink(self) -> EntityId:
        return self.arcs[-1].trustee if self.arcs else self.source

    @property
    def entities(self) -> Tuple[EntityId, ...]:
        return (self.source,) + tuple(a.trustee for a in self.arcs)

    def __len__(self) -> int:
        return len(self.arcs)

    def describe(self) -> str:
        return ",".join(f"{a.trustor}>{a.trustee}:{a.kind.value}:{a.value!r}"
                        for a in self.arcs)


def validate_path(path: TrustPath, context: TrustContext, max_depth: int) -> bool:
    arcs = path.arcs
    if not arcs or len(arcs) > max_depth or path.context != context:
        return False
    if arcs[0].trustor != path.source:
        return False
    for prev, nxt in zip(arcs, arcs[1:]):
        if prev.trustee != nxt.trustor:
            return False
    entities = path.entities
    if len(set(entities)) != len(entities):
        return False
    for arc in arcs[:-1]:
        if arc.kind is not ArcKind.REFERRAL or arc.context != context:
            return False
    last = arcs[-1]
    return last.kind is ArcKind.PERFORMANCE and last.context == context


def path_score(path: TrustPath) -> float:
    if not validate_path(path, path.context, len(path.arcs)):
        raise InvalidPath(f"invalid trust path {path.describe() or path.source}")
    score = 1.0
    for arc in path.arcs:
        score *= arc.value
    return score


def _path_rank(path: TrustPath) -> Tuple[float, Tuple[EntityId, ...]]:
    return (-path_score(path), path.entities)


def aggregate(paths: Sequence[TrustPath], strategy: AggregationStrategy) -> float:
    """Combine paths sharing one (source, sink, context) into a single value."""
    if not paths:
        return 0.0
    first = paths[0]
    for p in paths[1:]:
        if (p.source, p.sink, p.context) != (first.source, first.sink, first.context):
            raise MixedQuery("paths disagree on source, sink or context")
    if strategy is AggregationStrategy.MAX_PATH:
        return max(path_score(p) for p in paths)
    if strategy is AggregationStrategy.PROBABILISTIC_SUM_DISJOINT:
        used: Set[tuple] = set()
        remaining = 1.0
        for p in sorted(paths, key=_path_rank):
            keys = {a.key for a in p.arcs}
            if keys & used:
                continue
            used |= keys
            remaining *= 1.0 - path_score(p)
        return min(1.0, max(0.0, 1.0 - remaining))
    raise ValueError(f"unknown strategy {strategy!r}")


@dataclass(frozen=True)
class TrustRating:
    trustee: EntityId
    context: TrustContext
    value: float
    basis: Basis
    path_count: int = 0
    paths: Tuple[TrustPath, ...] = ()

    def passes(self, threshold: float) -> bool:
        return self.basis is not Basis.NONE and self.value >= threshold


def _enumerate_paths(arcs: Iterable[TrustArc], query: PathQuery) -> List[TrustPath]:
    ctx = query.context
    referrals: Dict[EntityId, List[TrustArc]] = {}
    performance: Dict[EntityId, TrustArc] = {}
    for arc in arcs:
        if arc.context != ctx:
            continue
        if arc.kind is ArcKind.REFERRAL:
            referrals.setdefault(arc.trustor, []).append(arc)
        elif arc.trustee == query.sink:
            performance[arc.trustor] = arc
    for lst in referrals.values():
        lst.sort(key=lambda a: a.trustee)

    found: List[TrustPath] = []
    if query.source == query.sink:
        return found

    def walk(node: EntityId, chain: List[TrustArc], visited: Set[EntityId]) -> None:
        perf = performance.get(node)
        if perf is not None and len(chain) < query.max_depth:
            found.append(TrustPath(query.source, tuple(chain) + (perf,), ctx))
        if len(chain) + 1 >= query.max_depth:
            return
        for arc in referrals.get(node, ()):
            nxt = arc.trustee
            if nxt in visited or nxt == query.sink:
                continue
            visited.add(nxt)
            chain.append(arc)
            walk(nxt, chain, visited)
            chain.pop()
            visited.discard(nxt)

    walk(query.source, [], {query.source})
    found.sort(key=lambda p: p.entities)
    return found


# -- the manager -------------------------------------------------------------

@dataclass
class _Crawl:
    crawl_id: str
    trustee: Optional[EntityId]
    context: TrustContext
    depth: int
    on_done: Optional[Callable[[FrozenSet[Referral]], None]]
    visited: Set[EntityId] = field(default_factory=set)
    hops: Dict[EntityId, int] = field(default_factory=dict)
    pending: Set[EntityId] = field(default_factory=set)
    gathered: Set[Referral] = field(default_factory=set)
    rejected: List[Tuple[EntityId, str]] = field(default_factory=list)
    done: bool = False


class TrustManager:
    """Trust evaluation for one entity.

    The manager's view of the network is its own :class:`TrustStore` plus the
    statements of verified referrals it has gathered. ``observed`` arcs are a
    trusted global view used for offline analysis (graph files, oracles).
    """

    def __init__(self, store: TrustStore, keys: Optional[KeyRegistry] = None,
                 keypair: Optional[KeyPair] = None,
                 strategy: AggregationStrategy = AggregationStrategy.MAX_PATH,
                 max_depth: int = DEFAULT_MAX_DEPTH,
                 crawl_timeout: int = DEFAULT_CRAWL_TIMEOUT) -> None:
        self.store = store
        self.keys = keys if keys is not None else KeyRegistry()
        self.keypair = keypair
        self.strategy = strategy
        self.max_depth = max_depth
        self.crawl_timeout = crawl_timeout
        self.referrals: Dict[tuple, Referral] = {}
        self.observed: Dict[tuple, TrustArc] = {}
        self._crawls: Dict[str, _Crawl] = {}
        self._crawl_seq = 0

    @property
    def owner(self) -> EntityId:
        return self.store.owner

    @classmethod
    def from_graph(cls, graph: TrustGraph, owner: EntityId, **kwargs) -> "TrustManager":
        manager = cls(graph.store_for(owner), **kwargs)
        for arc in graph.arcs():
            if arc.trustor != owner:
                manager.observed[arc.key] = arc
        return manager

    # snapshot ---------------------------------------------------------------

    def known_arcs(self) -> List[TrustArc]:
        """Own arcs, then observed and referred arcs of other entities."""
        merged: Dict[tuple, TrustArc] = {}
        for arc in self.observed.values():
            merged[arc.key] = arc
        for ref in self.referrals.values():
            merged[ref.statement.key] = ref.statement
        for arc in self.store.arcs():
            merged[arc.key] = arc
        return [merged[k] for k in sorted(merged, key=lambda k: (k[0], k[1], str(k[2]), k[3].value))]

    def known_entities(self) -> List[EntityId]:
        ents = set()
        for arc in self.known_arcs():
            ents.update((arc.trustor, arc.trustee))
        ents.discard(self.owner)
        return sorted(ents)

    def accept_referral(self, referral: Referral) -> bool:
        if not verify_referral(referral, self.keys):
            return False
        if referral.referee == self.owner:
            return False
        self.referrals[referral.statement.key] = referral
        return True

    def referral_for(self, arc: TrustArc) -> Optional[Referral]:
        return self.referrals.get(arc.key)

    # evaluation -------------------------------------------------------------

    def discover_paths(self, query: PathQuery) -> List[TrustPath]:
        return _enumerate_paths(self.known_arcs(), query)

    def evaluate_trust(self, trustee: EntityId, context: TrustContext,
                       strategy: Optional[AggregationStrategy] = None,
                       max_depth: Optional[int] = None) -> TrustRating:
        context = context.target
        direct = self.store.get_arc(trustee, context, ArcKind.PERFORMANCE)
        if direct is not None:
            path = TrustPath(self.owner, (direct,), context)
            return TrustRating(trustee, context, direct.value, Basis.DIRECT, 1, (path,))
        if trustee == self.owner:
            return TrustRating(trustee, context, 0.0, Basis.NONE)
        query = PathQuery(self.owner, trustee, context,
                          max_depth if max_depth is not None else self.max_depth)
        paths = self.discover_paths(query)
        if not paths:
            return TrustRating(trustee, context, 0.0, Basis.NONE)
        value = aggregate(paths, strategy or self.strategy)
        return TrustRating(trustee, context, value, Basis.TRANSITIVE, len(paths), tuple(paths))

    # referral gathering -----------------------------------------------------

    def start_gather(self, network, trustee: Optional[EntityId], context: TrustContext,
                     depth: int,
                     on_done: Optional[Callable[[FrozenSet[Referral]], None]] = None) -> str:
        """Begin a best-effort crawl for referrals; ``on_done`` fires once.

        Neighbours reached through referral arcs valued above 0.0 are asked
        for their arcs in ``context``; a neighbour first reached at hop ``h``
        is only queried when ``h <= depth``.
        """
        context = context.target
        self._crawl_seq += 1
        crawl_id = f"{self.owner}/c{self._crawl_seq}"
        crawl = _Crawl(crawl_id, trustee, context, depth, on_done, visited={self.owner})
        self._crawls[crawl_id] = crawl
        if depth >= 1:
            for arc in self.store.arcs():
                if arc.kind is ArcKind.REFERRAL and arc.context == context and arc.value > 0.0:
                    self._query(network, crawl, arc.trustee, 1)
        if not crawl.pending:
            network.schedule(0, lambda: self._finish(crawl_id))
        else:
            network.schedule(self.crawl_timeout, lambda: self._finish(crawl_id))
        return crawl_id

    def _query(self, network, crawl: _Crawl, peer: EntityId, hop: int) -> None:
        if peer in crawl.visited:
            return
        crawl.visited.add(peer)
        crawl.hops[peer] = hop
        crawl.pending.add(peer)
        network.send(self.owner, peer, ReferralQuery(crawl.crawl_id, crawl.trustee, crawl.context))

    def _finish(self, crawl_id: str) -> None:
        crawl = self._crawls.get(crawl_id)
        if crawl is None or crawl.done:
            return
        crawl.done = True
        if crawl.on_done is not None:
            crawl.on_done(frozenset(crawl.gathered))

    def crawl_result(self, crawl_id: str) -> FrozenSet[Referral]:
        return frozenset(self._crawls[crawl_id].gathered)

    def crawl_rejections(self, crawl_id: str) -> List[Tuple[EntityId, str]]:
        return list(self._crawls[crawl_id].rejected)

    def handle_referral_query(self, network, sender: EntityId, query: ReferralQuery) -> None:
        """Answer a peer's crawl with our own signed arcs in the queried context."""
        if self.keypair is None:
            return
        blobs = []
        for arc in self.store.arcs():
            if arc.context != query.context:
                continue
            if arc.kind is ArcKind.PERFORMANCE and query.trustee not in (None, arc.trustee):
                continue
            blobs.append(sign_referral(self.keypair, arc).to_bytes())
        network.send(self.owner, sender, ReferralResponse(query.crawl_id, tuple(blobs)))

    def handle_referral_response(self, network, sender: EntityId,
                                 response: ReferralResponse) -> None:
        crawl = self._crawls.get(response.crawl_id)
        if crawl is None or crawl.done or sender not in crawl.pending:
            return
        hop = crawl.hops[sender]
        for blob in response.referrals:
            try:
                ref = Referral.from_bytes(blob)
            except ValueError:
                crawl.rejected.append((sender, "malformed"))
                continue
            problem = referral_problem(ref, self.keys)
            if problem is None and ref.statement.context != crawl.context:
                problem = "wrong_context"
            if problem is not None:
                crawl.rejected.append((sender, problem))
                continue
            if not self.accept_referral(ref):
                continue
            crawl.gathered.add(ref)
            arc = ref.statement
            if arc.kind is ArcKind.REFERRAL and arc.value > 0.0 and hop + 1 <= crawl.depth:
                self._query(network, crawl, arc.trustee, hop + 1)
        crawl.pending.discard(sender)
        if not crawl.pending:
            self._finish(crawl.crawl_id)


def gather_referrals(manager: TrustManager, network, trustee: Optional[EntityId],
                     context: TrustContext, max_depth: int) -> FrozenSet[Referral]:
    """Run one crawl to quiescence on ``network`` and return its verified referrals."""
    crawl_id = manager.start_gather(network, trustee, context, max_depth)
    network.run_until_quiet()
    return manager.crawl_result(crawl_id)


# -- independent oracle ------------------------------------------------------

def brute_force_oracle(graph: TrustGraph, query: PathQuery,
                       strategy: AggregationStrategy,
                       node_bound: int = ORACLE_NODE_BOUND) -> float:
    """Aggregate over every valid path, found by exhaustive search.

    Enumerates every simple arc sequence from the source regardless of kind
    or context, then keeps those that pass :func:`validate_path`.
    """
    return aggregate(oracle_paths(graph, query, node_bound), strategy)


def oracle_paths(graph: TrustGraph, query: PathQuery,
                 node_bound: int = ORACLE_NODE_BOUND) -> List[TrustPath]:
    if len(graph.nodes) > node_bound:
        raise GraphTooLarge(f"{len(graph.nodes)} nodes exceeds oracle bound {node_bound}")
    out_arcs: Dict[EntityId, List[TrustArc]] = {}
    for arc in graph.arcs():
        out_arcs.setdefault(arc.trustor, []).append(arc)

    every: List[Tuple[TrustArc, ...]] = []
    stack: List[Tuple[EntityId, Tuple[TrustArc, ...], FrozenSet[EntityId]]] = [
        (query.source, (), frozenset([query.source]))]
    while stack:
        node, chain, seen = stack.pop()
        if chain:
            every.append(chain)
        if len(chain) == query.max_depth:
            continue
        for arc in out_arcs.get(node, ()):
            if arc.trustee not in seen:
                stack.append((arc.trustee, chain + (arc,), seen | {arc.trustee}))

    paths = []
    for chain in every:
        if chain[-1].trustee != query.sink:
            continue
        path = TrustPath(query.source, chain, query.context)
        if validate_path(path, query.context, query.max_depth):
            paths.append(path)
    return paths



def oracle_rating(graph: TrustGraph, query: PathQuery, strategy: AggregationStrategy,
                  node_bound: int = ORACLE_NODE_BOUND) -> float:
    """Reference for :meth:`TrustManager.evaluate_trust` under full visibility.

    A one-arc path found by the exhaustive search is the direct performance
    arc and wins outright; otherwise the answer is :func:`brute_force_oracle`.
    """
    paths = oracle_paths(graph, query, node_bound)
    direct = [p for p in paths if len(p) == 1]
    if direct:
        return direct[0].arcs[0].value
    return aggregate(paths, strategy)
