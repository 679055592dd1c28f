"""Trust graph text format and the global graph container.

One record per line::

    arc <trustor> <trustee> <context> <performance|referral[:targetContext]> <value>

``#`` starts a comment. For referral arcs the target context may be given
either in the context column (``MakeGoodAssertions`` or
``Referral(MakeGoodAssertions)``) or after the kind; when both are present
they must agree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Set, Tuple, Union

from .trust_core import ArcKind, EntityId, TrustArc, TrustContext, TrustStore


class ParseError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None,
                 source: Optional[str] = None) -> None:
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


def format_value(value: float) -> str:
    # repr is the shortest string that round-trips exactly
    return repr(float(value))


def format_arc(arc: TrustArc) -> str:
    """Canonical record for an arc; also the bytes a referral signs."""
    return (f"arc {arc.trustor} {arc.trustee} {arc.context} "
            f"{arc.kind.value} {format_value(arc.value)}")


def parse_arc_fields(fields: List[str]) -> TrustArc:
    if len(fields) != 6 or fields[0] != "arc":
        raise ValueError("expected: arc <trustor> <trustee> <context> <kind> <value>")
    _, trustor, trustee, ctx_text, kind_text, value_text = fields
    context = TrustContext.parse(ctx_text)
    kind_name, _, target_text = kind_text.partition(":")
    try:
        kind = ArcKind(kind_name)
    except ValueError:
        raise ValueError(f"unknown arc kind {kind_name!r}") from None
    if kind is ArcKind.PERFORMANCE:
        if target_text:
            raise ValueError("performance arcs take no target context")
        if context.referral:
            raise ValueError("performance arc in a Referral(...) context")
    else:
        if target_text:
            target = TrustContext.parse(target_text)
            if target.referral or target != context.target:
                raise ValueError(
                    f"referral target {target_text!r} disagrees with context {ctx_text!r}")
        context = context.target
    try:
        value = float(value_text)
    except ValueError:
        raise ValueError(f"bad value {value_text!r}") from None
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"value {value_text} outside [0, 1]")
    return TrustArc(trustor, trustee, context, kind, value)


def parse_arc(line: str) -> TrustArc:
    return parse_arc_fields(line.split())


@dataclass
class TrustGraph:
    """Every arc in the simulated world, keyed by (trustor, trustee, context, kind)."""

    nodes: Set[EntityId] = field(default_factory=set)
    _arcs: Dict[Tuple, TrustArc] = field(default_factory=dict)

    @classmethod
    def from_arcs(cls, arcs: Iterable[TrustArc],
                  nodes: Iterable[EntityId] = ()) -> "TrustGraph":
        g = cls(set(nodes))
        for arc in arcs:
            g.add(arc)
        return g

    def add(self, arc: TrustArc) -> None:
        self.nodes.update((arc.trustor, arc.trustee))
        self._arcs[arc.key] = arc

    def arcs(self) -> List[TrustArc]:
        return sorted(self._arcs.values(), key=arc_sort_key)

    def __len__(self) -> int:
        return len(self._arcs)

    def store_for(self, owner: EntityId, **params) -> TrustStore:
        store = TrustStore(owner, **params)
        for arc in self.arcs():
            if arc.trustor == owner:
                store.record_arc(arc)
        return store

    def to_text(self) -> str:
        return "".join(format_arc(a) + "\n" for a in self.arcs())


def arc_sort_key(arc: TrustArc):
    return (arc.trustor, arc.trustee, str(arc.context), arc.kind.value)


def parse_graph(text: str, source: Optional[str] = None,
                known_entities: Optional[Set[EntityId]] = None) -> TrustGraph:
    """Parse graph records; duplicate quadruples keep the last value."""
    graph = TrustGraph()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            arc = parse_arc(line)
        except ValueError as exc:
            raise ParseError(str(exc), lineno, source) from None
        if known_entities is not None:
            for ent in (arc.trustor, arc.trustee):
                if ent not in known_entities:
                    raise ParseError(f"unknown entity {ent!r}", lineno, source)
        graph.add(arc)
    return graph


def load_graph(path: Union[str, Path],
               known_entities: Optional[Set[EntityId]] = None) -> TrustGraph:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read graph: {exc.strerror}", None, str(p)) from None
    return parse_graph(text, str(p), known_entities)
