"""Scenario files: entities, identities, adversaries, operations and run settings.

Line-oriented, ``#`` comments, shell-style quoting. Directives::

    seed 7
    graph other.graph                 # relative to the scenario file
    arc SI L MakeGoodAssertions referral 1.0
    entity U roles=User
    identity U UI secret=hunter2 attr:name=alice
    adversary L LyingReferee inflation=1.0
    operation sso user=U sp=S user-idp=UI sp-idp=SI threshold-c=0.5 attributes=name
    rounds 10
    drop 0.0
    max-ticks 100000
    strategy max
    max-depth 4
    alpha 0.3
    referee-penalty 0.5
    federation context=MakeGoodAssertions threshold=0.5 refresh-every=1

Entities that appear only in arcs are added with no roles.
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from .federation import FederationPolicy
from .graph import ParseError, TrustGraph, parse_arc_fields, parse_graph
from .identity import EntityRole
from .operations import Role
from .simnet import (AdversaryKind, AdversaryTag, EntitySpec, Network, NetworkConfig,
                     Registration, build_network)
from .sso import SsoParams
from .trust_core import MAKE_GOOD_ASSERTIONS, TrustContext
from .trust_network import AggregationStrategy, DEFAULT_MAX_DEPTH

OPERATION_KINDS = ("sso", "attribute-query")

_BINDING_KEYS = {"user": Role.USER, "sp": Role.SP, "user-idp": Role.USER_IDP,
                 "sp-idp": Role.SP_IDP}
_REQUIRED_BINDINGS = {
    "sso": (Role.USER, Role.SP, Role.USER_IDP, Role.SP_IDP),
    "attribute-query": (Role.USER, Role.USER_IDP, Role.SP_IDP),
}


@dataclass(frozen=True)
class OperationDecl:
    kind: str
    bindings: Tuple[Tuple[Role, str], ...]
    params: SsoParams
    line: int = 0

    def binding_map(self) -> Dict[Role, str]:
        return dict(self.bindings)


@dataclass
class Scenario:
    source: Optional[str] = None
    seed: Optional[int] = None
    graph: TrustGraph = field(default_factory=TrustGraph)
    entities: Dict[str, frozenset] = field(default_factory=dict)
    registrations: List[Registration] = field(default_factory=list)
    adversaries: List[Tuple[str, AdversaryKind]] = field(default_factory=list)
    operations: List[OperationDecl] = field(default_factory=list)
    rounds: int = 1
    drop: float = 0.0
    max_ticks: int = 100_000
    strategy: AggregationStrategy = AggregationStrategy.MAX_PATH
    max_depth: int = DEFAULT_MAX_DEPTH
    alpha: float = 0.3
    referee_penalty: float = 0.5
    federation: FederationPolicy = field(
        default_factory=lambda: FederationPolicy(MAKE_GOOD_ASSERTIONS, 0.5, 1))

    def config(self, seed: Optional[int] = None) -> NetworkConfig:
        return NetworkConfig(
            seed=seed if seed is not None else (self.seed or 0),
            drop_probability=self.drop, max_ticks=self.max_ticks,
            adversaries=tuple(self.adversaries), alpha=self.alpha,
            referee_penalty=self.referee_penalty, strategy=self.strategy,
            max_depth=self.max_depth)

    def entity_specs(self) -> List[EntitySpec]:
        ids = dict(self.entities)
        for node in sorted(self.graph.nodes):
            ids.setdefault(node, frozenset())
        return [EntitySpec(i, ids[i]) for i in sorted(ids)]

    def build(self, seed: Optional[int] = None) -> Network:
        return build_network(self.config(seed), self.graph, self.entity_specs(),
                             self.registrations)


def _kv(tokens: List[str], allowed: Tuple[str, ...], lineno: int, source,
        prefixes: Tuple[str, ...] = ()) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for tok in tokens:
        key, sep, value = tok.partition("=")
        if not sep:
            raise ParseError(f"expected key=value, got {tok!r}", lineno, source)
        if key not in allowed and not key.startswith(prefixes or ("\0",)):
            raise ParseError(f"unknown key {key!r}", lineno, source)
        if key in out:
            raise ParseError(f"duplicate key {key!r}", lineno, source)
        out[key] = value
    return out


def _number(text: str, kind, what: str, lineno: int, source):
    try:
        return kind(text)
    except ValueError:
        raise ParseError(f"bad {what} {text!r}", lineno, source) from None


def _bool(text: str, lineno: int, source) -> bool:
    if text in ("yes", "true", "1"):
        return True
    if text in ("no", "false", "0"):
        return False
    raise ParseError(f"bad boolean {text!r}", lineno, source)


def parse_scenario(text: str, source: Optional[str] = None,
                   base_dir: Optional[Path] = None) -> Scenario:
    sc = Scenario(source=source)
    declared_ops_entities: List[Tuple[int, str]] = []
    adversary_lines: List[int] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        try:
            tokens = shlex.split(raw, comments=True)
        except ValueError as exc:
            raise ParseError(str(exc), lineno, source) from None
        if not tokens:
            continue
        head, args = tokens[0], tokens[1:]
        try:
            if head == "seed":
                _arity(args, 1, head)
                sc.seed = _number(args[0], int, "seed", lineno, source)
            elif head == "graph":
                _arity(args, 1, head)
                path = Path(args[0])
                if not path.is_absolute() and base_dir is not None:
                    path = base_dir / path
                try:
                    sub = parse_graph(path.read_text(encoding="utf-8"), str(path))
                except OSError as exc:
                    raise ParseError(f"cannot read graph {args[0]!r}: {exc.strerror}",
                                     lineno, source) from None
                for arc in sub.arcs():
                    sc.graph.add(arc)
            elif head == "arc":
                sc.graph.add(parse_arc_fields(tokens))
            elif head == "entity":
                if not args:
                    raise ValueError("entity needs an id")
                ent_id = args[0]
                if ent_id in sc.entities:
                    raise ParseError(f"duplicate entity {ent_id!r}", lineno, source)
                kv = _kv(args[1:], ("roles",), lineno, source)
                roles = frozenset(EntityRole(r) for r in kv.get("roles", "").split(",") if r)
                sc.entities[ent_id] = roles
            elif head == "identity":
                if len(args) < 2:
                    raise ValueError("identity needs <subject> <idp>")
                kv = _kv(args[2:], ("secret",), lineno, source, prefixes=("attr:",))
                if "secret" not in kv:
                    raise ValueError("identity needs secret=")
                attrs = tuple(sorted((k[len("attr:"):], v) for k, v in kv.items()
                                     if k.startswith("attr:")))
                sc.registrations.append(Registration(args[0], args[1], attrs,
                                                     kv["secret"].encode("utf-8")))
                declared_ops_entities += [(lineno, args[0]), (lineno, args[1])]
            elif head == "adversary":
                if len(args) < 2:
                    raise ValueError("adversary needs <entity> <kind>")
                tag = AdversaryTag(args[1])
                kv = _kv(args[2:], ("inflation",), lineno, source)
                inflation = _number(kv.get("inflation", "0"), float, "inflation", lineno, source)
                if inflation < 0:
                    raise ValueError("inflation must be >= 0")
                sc.adversaries.append((args[0], AdversaryKind(tag, inflation)))
                adversary_lines.append(lineno)
            elif head == "operation":
                sc.operations.append(_parse_operation(args, lineno, source))
                for _, ent in sc.operations[-1].bindings:
                    declared_ops_entities.append((lineno, ent))
            elif head == "rounds":
                _arity(args, 1, head)
                sc.rounds = _number(args[0], int, "rounds", lineno, source)
                if sc.rounds < 0:
                    raise ValueError("rounds must be >= 0")
            elif head == "drop":
                _arity(args, 1, head)
                sc.drop = _number(args[0], float, "drop probability", lineno, source)
                if not 0.0 <= sc.drop <= 1.0:
                    raise ValueError("drop must be in [0, 1]")
            elif head == "max-ticks":
                _arity(args, 1, head)
                sc.max_ticks = _number(args[0], int, "max-ticks", lineno, source)
            elif head == "strategy":
                _arity(args, 1, head)
                sc.strategy = AggregationStrategy(args[0])
            elif head == "max-depth":
                _arity(args, 1, head)
                sc.max_depth = _number(args[0], int, "max-depth", lineno, source)
                if sc.max_depth < 1:
                    raise ValueError("max-depth must be >= 1")
            elif head == "alpha":
                _arity(args, 1, head)
                sc.alpha = _number(args[0], float, "alpha", lineno, source)
                if not 0.0 < sc.alpha <= 1.0:
                    raise ValueError("alpha must be in (0, 1]")
            elif head == "referee-penalty":
                _arity(args, 1, head)
                sc.referee_penalty = _number(args[0], float, "referee-penalty", lineno, source)
                if not 0.0 < sc.referee_penalty <= 1.0:
                    raise ValueError("referee-penalty must be in (0, 1]")
            elif head == "federation":
                kv = _kv(args, ("context", "threshold", "refresh-every"), lineno, source)
                sc.federation = FederationPolicy(
                    TrustContext.parse(kv.get("context", "MakeGoodAssertions")),
                    _number(kv.get("threshold", "0.5"), float, "threshold", lineno, source),
                    _number(kv.get("refresh-every", "1"), int, "refresh-every", lineno, source))
            else:
                raise ParseError(f"unknown directive {head!r}", lineno, source)
        except ParseError:
            raise
        except ValueError as exc:
            raise ParseError(str(exc), lineno, source) from None

    known = set(sc.entities) | sc.graph.nodes
    if sc.entities:
        for node in sorted(sc.graph.nodes):
            if node not in sc.entities:
                raise ParseError(f"graph references undeclared entity {node!r}", None, source)
    for lineno, ent in declared_ops_entities:
        if ent not in known:
            raise ParseError(f"unknown entity {ent!r}", lineno, source)
    for lineno, (ent, _) in zip(adversary_lines, sc.adversaries):
        if ent not in known:
            raise ParseError(f"adversary on unknown entity {ent!r}", lineno, source)
    return sc


def _arity(args: List[str], n: int, head: str) -> None:
    if len(args) != n:
        raise ValueError(f"{head} takes {n} argument(s)")


def _parse_operation(args: List[str], lineno: int, source) -> OperationDecl:
    if not args or args[0] not in OPERATION_KINDS:
        raise ParseError(f"operation kind must be one of {', '.join(OPERATION_KINDS)}",
                         lineno, source)
    kind = args[0]
    allowed = tuple(_BINDING_KEYS) + ("threshold-c", "threshold-d", "attributes",
                                      "check-sp-link")
    kv = _kv(args[1:], allowed, lineno, source)
    bindings = []
    for key, role in _BINDING_KEYS.items():
        if key in kv:
            bindings.append((role, kv[key]))
    bound = {r for r, _ in bindings}
    missing = [k for k, r in _BINDING_KEYS.items()
               if r in _REQUIRED_BINDINGS[kind] and r not in bound]
    if missing:
        raise ParseError(f"operation {kind} missing binding(s): {', '.join(missing)}",
                         lineno, source)
    if kind == "attribute-query" and Role.SP in bound:
        raise ParseError("attribute-query takes no sp binding", lineno, source)
    attrs = tuple(a for a in kv.get("attributes", "name").split(",") if a)
    params = SsoParams(
        threshold_c=_number(kv.get("threshold-c", "0.5"), float, "threshold-c", lineno, source),
        threshold_d=_number(kv.get("threshold-d", "0.5"), float, "threshold-d", lineno, source),
        attributes_requested=attrs,
        check_sp_link=_bool(kv.get("check-sp-link", "no"), lineno, source))
    return OperationDecl(kind, tuple(bindings), params, lineno)


def load_scenario(path: Union[str, Path]) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read scenario: {exc.strerror}", None, str(p)) from None
    return parse_scenario(text, str(p), p.parent)
