"""Shared fixtures-by-function for the test suite."""

from __future__ import annotations

import random
from pathlib import Path

from trustweave.graph import TrustGraph
from trustweave.identity import EntityRole
from trustweave.simnet import EntitySpec, NetworkConfig, Registration, build_network
from trustweave.trust_core import (ArcKind, MAINTAIN_PRIVACY, MAKE_GOOD_ASSERTIONS,
                                   TrustArc, TrustContext)

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"

CONTEXTS = (MAKE_GOOD_ASSERTIONS, MAINTAIN_PRIVACY, TrustContext.parse("Custom:audit"))
_GRID = tuple(i / 10 for i in range(11))


def random_graph(rng: random.Random, max_nodes: int = 10, max_arcs: int = 30,
                 contexts=CONTEXTS) -> TrustGraph:
    """A graph with mixed kinds and contexts; half the values come from a coarse grid
    so that ties between paths actually occur."""
    n = rng.randint(1, max_nodes)
    nodes = [f"n{i}" for i in range(n)]
    graph = TrustGraph(nodes=set(nodes))
    if n < 2:
        return graph
    for _ in range(rng.randint(0, max_arcs)):
        a, b = rng.sample(nodes, 2)
        value = rng.choice(_GRID) if rng.random() < 0.5 else rng.random()
        kind = rng.choice((ArcKind.PERFORMANCE, ArcKind.REFERRAL))
        graph.add(TrustArc(a, b, rng.choice(contexts), kind, value))
    return graph


SSO_GRAPH = """\
arc spidp ref MakeGoodAssertions referral 0.9
arc ref uidp MakeGoodAssertions performance 0.8
arc uidp spidp MaintainPrivacy performance 0.8
"""

SSO_ENTITIES = [
    EntitySpec("alice", frozenset({EntityRole.USER})),
    EntitySpec("shop", frozenset({EntityRole.SP})),
    EntitySpec("spidp", frozenset({EntityRole.IDP})),
    EntitySpec("uidp", frozenset({EntityRole.IDP})),
    EntitySpec("ref", frozenset({EntityRole.IDP})),
]

ALICE = Registration("alice", "uidp", (("email", "alice@example.org"), ("name", "alice")),
                     b"correct-horse")


def sso_network(seed: int = 11, graph: str = SSO_GRAPH, entities=None, registrations=None,
                **config):
    """The four-party network: C rates 0.72 (transitive), D rates 0.8 (direct)."""
    return build_network(NetworkConfig(seed=seed, **config), graph,
                         entities if entities is not None else SSO_ENTITIES,
                         registrations if registrations is not None else [ALICE])
