"""Command-line front end.

Reports are line-delimited records, ``<kind> key=value ...`` with a fixed
field order. Exit codes: 0 ok, 2 input error, 3 no evidence, 4 operation
terminated at a trust check, 5 operation failed.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from .dot import graph_to_dot, subgraph_to_dot
from .federation import FederationList, FederationPolicy, refresh_federations
from .graph import ParseError, TrustGraph, format_value, load_graph
from .operations import OperationOutcome, OperationStatus, Role, StatusKind
from .scenario import OperationDecl, Scenario, load_scenario
from .simnet import Network, UnknownEntity, DuplicateEntity, experience_feedback
from .sso import build_attribute_query_spec, build_sso_spec
from .trust_core import MAKE_GOOD_ASSERTIONS, TrustContext
from .trust_network import AggregationStrategy, Basis, TrustManager, path_score

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NO_EVIDENCE = 3
EXIT_TRUST = 4
EXIT_FAILED = 5

SEED_ENV = "TRUSTWEAVE_SEED"

Report = Tuple[List[str], int]


def record(kind: str, *fields: Tuple[str, object]) -> str:
    body = " ".join(f"{k}={v}" for k, v in fields)
    return f"{kind} {body}" if body else kind


def fmt(value: float) -> str:
    """Display form of a derived value (arc values print exactly via format_value)."""
    return format(value, ".12g")


def exit_code_for(status: OperationStatus) -> int:
    return {
        StatusKind.SUCCEEDED: EXIT_OK,
        StatusKind.TERMINATED_AT_TRUST_CHECK: EXIT_TRUST,
        StatusKind.FAILED: EXIT_FAILED,
        StatusKind.RUNNING: EXIT_FAILED,
    }[status.kind]


def resolve_seed(cli_seed: Optional[int], scenario: Optional[Scenario] = None) -> int:
    if cli_seed is not None:
        return cli_seed
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise ParseError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    if scenario is not None and scenario.seed is not None:
        return scenario.seed
    return 0


# -- commands ----------------------------------------------------------------

def query_trust(graph: TrustGraph, source: str, sink: str, context: TrustContext,
                strategy: AggregationStrategy = AggregationStrategy.MAX_PATH,
                max_depth: int = 4) -> Report:
    manager = TrustManager.from_graph(graph, source, strategy=strategy, max_depth=max_depth)
    rating = manager.evaluate_trust(sink, context)
    lines = [record("rating", ("source", source), ("sink", sink), ("context", context),
                    ("strategy", strategy.value), ("max_depth", max_depth),
                    ("value", fmt(rating.value)), ("basis", rating.basis.value),
                    ("paths", rating.path_count))]
    for i, path in enumerate(rating.paths, 1):
        lines.append(record("path", ("index", i), ("score", fmt(path_score(path))),
                            ("arcs", path.describe())))
    return lines, EXIT_OK if rating.basis is not Basis.NONE else EXIT_NO_EVIDENCE


def spec_for(decl: OperationDecl):
    """Build the operation spec a scenario ``operation`` line describes."""
    if decl.kind == "sso":
        return build_sso_spec(decl.params)
    p = decl.params
    return build_attribute_query_spec(p.attributes_requested, p.threshold_c, p.threshold_d)


def _outcome_record(outcome: OperationOutcome, *prefix: Tuple[str, object]) -> str:
    st = outcome.status
    fields = list(prefix) + [("instance", outcome.instance_id), ("status", st.kind.value)]
    if st.relationship is not None:
        fields.append(("relationship", st.relationship.value))
    if st.reason is not None:
        fields.append(("reason", st.reason.value))
    fields.append(("failure_delivered", "yes" if outcome.failure_delivered else "no"))
    if outcome.assertion is not None:
        fields.append(("issuer", outcome.assertion.issuer))
        fields.append(("audience", outcome.assertion.audience))
    return record("outcome", *fields)


def _write_log(net: Network, path: Optional[str]) -> None:
    if path:
        Path(path).write_text(net.log.render(), encoding="utf-8")


def run_sso_report(scenario: Scenario, seed: Optional[int] = None,
                   log_out: Optional[str] = None) -> Report:
    decls = [d for d in scenario.operations if d.kind == "sso"]
    if not decls:
        raise ParseError("scenario declares no sso operation", None, scenario.source)
    net = scenario.build(resolve_seed(seed, scenario))
    decl = decls[0]
    inst = net.engine.new_instance(spec_for(decl), decl.binding_map())
    outcome = net.engine.run_to_completion(inst)
    lines = ["transcript " + e.render() for e in outcome.transcript]
    lines.append(_outcome_record(outcome, ("kind", decl.kind)))
    code = exit_code_for(outcome.status)
    lines.append(record("exit", ("code", code)))
    _write_log(net, log_out)
    return lines, code


def _snapshot(net: Network, round_no: int) -> List[str]:
    return [f"snapshot round={round_no} " + line[len("arc "):] for line in net.arcs_snapshot()]


def compute_federations(net: Network, policy: FederationPolicy) -> List[FederationList]:
    """Crawl referrals for every entity, then refresh its federation list."""
    out = []
    for ent_id in sorted(net.nodes):
        manager = net.manager(ent_id)
        manager.start_gather(net, None, policy.context, max(manager.max_depth - 1, 0))
        net.run_until_quiet()
        others = [e for e in sorted(net.nodes) if e != ent_id]
        out.append(refresh_federations(manager, policy, net.now, others))
    return out


def _federation_records(lists: Sequence[FederationList], policy: FederationPolicy) -> List[str]:
    lines = []
    for fl in lists:
        members = ",".join(f"{m.peer}:{fmt(m.value)}:{m.basis.value}" for m in fl.members)
        lines.append(record("federation", ("owner", fl.owner), ("context", policy.context),
                            ("threshold", format_value(policy.threshold)),
                            ("members", members or "-")))
    return lines


def run_scenario_report(scenario: Scenario, seed: Optional[int] = None,
                        log_out: Optional[str] = None) -> Report:
    net = scenario.build(resolve_seed(seed, scenario))
    lines = [record("scenario", ("seed", net.config.seed), ("entities", len(net.nodes)),
                    ("operations", len(scenario.operations)), ("rounds", scenario.rounds))]
    lines += _snapshot(net, 0)
    failed = False
    if scenario.operations:
        for round_no in range(1, scenario.rounds + 1):
            finished = []
            for idx, decl in enumerate(scenario.operations, 1):
                inst = net.engine.new_instance(spec_for(decl), decl.binding_map())
                outcome = net.engine.run_to_completion(inst)
                failed |= outcome.status.kind is StatusKind.FAILED
                finished.append((outcome, decl.binding_map()))
                lines.append(_outcome_record(outcome, ("round", round_no), ("op", idx),
                                             ("kind", decl.kind)))
            for ev in experience_feedback(net, finished):
                lines.append(record("feedback", ("round", round_no), ("reporter", ev.reporter),
                                    ("trustee", ev.trustee), ("rel", ev.relationship.value),
                                    ("outcome", fmt(ev.outcome)), ("basis", ev.basis.value),
                                    ("action", ev.action),
                                    ("value", "-" if ev.value is None else fmt(ev.value))))
            lines += _snapshot(net, round_no)
    lines += _federation_records(compute_federations(net, scenario.federation),
                                 scenario.federation)
    code = EXIT_FAILED if failed else EXIT_OK
    lines.append(record("exit", ("code", code)))
    _write_log(net, log_out)
    return lines, code


def federations_report(scenario: Scenario, context: TrustContext, threshold: float,
                       seed: Optional[int] = None) -> Report:
    policy = FederationPolicy(context, threshold, 1)
    net = scenario.build(resolve_seed(seed, scenario))
    return _federation_records(compute_federations(net, policy), policy), EXIT_OK


# -- argument handling -------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trustweave",
                                description="Trust-backed identity operations simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, graph=False, scenario=False):
        if graph:
            sp.add_argument("--graph", help="trust graph file")
        if scenario:
            sp.add_argument("--scenario", help="scenario file")
        sp.add_argument("--seed", type=int, default=None,
                        help=f"simulation seed (overrides ${SEED_ENV})")

    q = sub.add_parser("query-trust", help="evaluate transitive trust on a graph file")
    common(q, graph=True)
    q.add_argument("--source", required=True)
    q.add_argument("--sink", required=True)
    q.add_argument("--context", default=str(MAKE_GOOD_ASSERTIONS))
    q.add_argument("--strategy", choices=["max", "psum"], default="max")
    q.add_argument("--max-depth", type=int, default=4)

    s = sub.add_parser("run-sso", help="run the scenario's sso operation once")
    common(s, scenario=True)
    s.add_argument("--log-out", help="also write the network event log here")

    r = sub.add_parser("run-scenario", help="run every operation for all feedback rounds")
    common(r, scenario=True)
    r.add_argument("--log-out", help="also write the network event log here")

    d = sub.add_parser("export-dot", help="write a graph as Graphviz DOT")
    common(d, graph=True)
    d.add_argument("--source")
    d.add_argument("--context", default=str(MAKE_GOOD_ASSERTIONS))
    d.add_argument("--max-depth", type=int, default=4)
    d.add_argument("--dot-out", help="output path (default stdout)")

    f = sub.add_parser("federations", help="print each entity's federation list")
    common(f, graph=True, scenario=True)
    f.add_argument("--context", default=str(MAKE_GOOD_ASSERTIONS))
    f.add_argument("--threshold", type=float, default=0.5)
    return p


def _need(value: Optional[str], flag: str) -> str:
    if not value:
        raise ParseError(f"{flag} is required")
    return value


def _scenario_or_graph(args) -> Scenario:
    if getattr(args, "scenario", None):
        return load_scenario(args.scenario)
    graph = load_graph(_need(getattr(args, "graph", None), "--scenario or --graph"))
    return Scenario(source=args.graph, graph=graph)


def dispatch(args, out) -> int:
    if args.command == "query-trust":
        graph = load_graph(_need(args.graph, "--graph"))
        if args.max_depth < 1:
            raise ParseError("--max-depth must be >= 1")
        lines, code = query_trust(graph, args.source, args.sink,
                                  TrustContext.parse(args.context),
                                  AggregationStrategy(args.strategy), args.max_depth)
    elif args.command == "run-sso":
        lines, code = run_sso_report(load_scenario(_need(args.scenario, "--scenario")),
                                     args.seed, args.log_out)
    elif args.command == "run-scenario":
        lines, code = run_scenario_report(load_scenario(_need(args.scenario, "--scenario")),
                                          args.seed, args.log_out)
    elif args.command == "export-dot":
        graph = load_graph(_need(args.graph, "--graph"))
        if args.source:
            text = subgraph_to_dot(graph, args.source, TrustContext.parse(args.context),
                                   args.max_depth)
        else:
            text = graph_to_dot(graph)
        if args.dot_out:
            Path(args.dot_out).write_text(text, encoding="utf-8")
        else:
            out.write(text)
        return EXIT_OK
    else:
        if not 0.0 <= args.threshold <= 1.0:
            raise ParseError("--threshold must be in [0, 1]")
        lines, code = federations_report(_scenario_or_graph(args),
                                         TrustContext.parse(args.context), args.threshold,
                                         args.seed)
    for line in lines:
        out.write(line + "\n")
    return code


def main(argv: Optional[Sequence[str]] = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    args = _parser().parse_args(argv)
    try:
        return dispatch(args, out)
    except (ParseError, UnknownEntity, DuplicateEntity, ValueError) as exc:
        err.write(f"error: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
