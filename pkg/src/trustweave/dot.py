"""Graphviz DOT export of trust graphs.

Performance arcs are solid, referral arcs dashed, and every edge is labelled
``context:value``. In a sub-graph export the trustees reached by some valid
path are filled; pure referees are left plain.
"""

from __future__ import annotations

import re
from typing import Iterable, List, Optional, Set

from .graph import TrustGraph, format_value
from .trust_core import ArcKind, EntityId, TrustArc, TrustContext
from .trust_network import PathQuery, TrustManager, TrustPath


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(arcs: Iterable[TrustArc], nodes: Iterable[EntityId] = (),
           highlight: Iterable[EntityId] = (), name: str = "trust") -> str:
    arcs = sorted(arcs, key=lambda a: (a.trustor, a.trustee, str(a.context), a.kind.value))
    all_nodes: Set[EntityId] = set(nodes)
    for a in arcs:
        all_nodes.update((a.trustor, a.trustee))
    marked = set(highlight)
    lines = [f"digraph {name} {{", "  rankdir=LR;"]
    for n in sorted(all_nodes):
        attrs = " [style=filled, fillcolor=lightgrey]" if n in marked else ""
        lines.append(f"  {_quote(n)}{attrs};")
    for a in arcs:
        style = "solid" if a.kind is ArcKind.PERFORMANCE else "dashed"
        label = f"{a.context}:{format_value(a.value)}"
        lines.append(f"  {_quote(a.trustor)} -> {_quote(a.trustee)} "
                     f"[style={style}, label={_quote(label)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def graph_to_dot(graph: TrustGraph) -> str:
    return to_dot(graph.arcs(), graph.nodes)


def reachable_paths(graph: TrustGraph, source: EntityId, context: TrustContext,
                    max_depth: int) -> List[TrustPath]:
    manager = TrustManager.from_graph(graph, source)
    paths: List[TrustPath] = []
    for sink in sorted(graph.nodes - {source}):
        paths.extend(manager.discover_paths(PathQuery(source, sink, context, max_depth)))
    return paths


def subgraph_to_dot(graph: TrustGraph, source: EntityId, context: TrustContext,
                    max_depth: int) -> str:
    """Every arc lying on a valid trust path from ``source`` in ``context``."""
    paths = reachable_paths(graph, source, context, max_depth)
    arcs = {a.key: a for p in paths for a in p.arcs}
    return to_dot(arcs.values(), [source], highlight={p.sink for p in paths})


_EDGE = re.compile(r'^\s*"((?:[^"\\]|\\.)*)" -> "((?:[^"\\]|\\.)*)" '
                   r'\[style=(solid|dashed), label="((?:[^"\\]|\\.)*)"\];\s*$')


def _unquote(text: str) -> str:
    return re.sub(r"\\(.)", r"\1", text)


def parse_dot_edges(text: str) -> TrustGraph:
    """Recover the arc set from DOT produced by :func:`to_dot`."""
    graph = TrustGraph()
    for line in text.splitlines():
        m = _EDGE.match(line)
        if not m:
            continue
        trustor, trustee, style, label = (_unquote(g) for g in m.groups())
        ctx_text, _, value = label.rpartition(":")
        kind = ArcKind.PERFORMANCE if style == "solid" else ArcKind.REFERRAL
        graph.add(TrustArc(trustor, trustee, TrustContext.parse(ctx_text), kind, float(value)))
    return graph
