from __future__ import annotations

from dataclasses import replace

import pytest

from trustweave.graph import ParseError
from trustweave.identity import EntityRole
from trustweave.messages import ReferralResponse
from trustweave.operations import RelationshipId, StatusKind
from trustweave.simnet import (AdversaryKind, AdversaryTag, DuplicateEntity, Envelope,
                               NetworkConfig, UnknownEntity, apply_adversary,
                               build_network, experience_feedback)
from trustweave.sso import SsoParams, run_sso, sso_bindings
from trustweave.trust_core import ArcKind, MAINTAIN_PRIVACY, MAKE_GOOD_ASSERTIONS, TrustArc
from trustweave.trust_network import Referral, sign_referral, verify_referral

from support import ALICE, SSO_ENTITIES, SSO_GRAPH, sso_network

MGA = MAKE_GOOD_ASSERTIONS
BINDINGS = sso_bindings("alice", "shop", "uidp", "spidp")
LIAR = AdversaryKind(AdversaryTag.LYING_REFEREE, 1.0)


def test_build_four_nodes():
    net = build_network(NetworkConfig(), SSO_GRAPH, SSO_ENTITIES)
    assert sorted(net.nodes) == ["alice", "ref", "shop", "spidp", "uidp"]
    assert all(e in net.keys for e in net.nodes)


def test_graph_with_unknown_entity():
    with pytest.raises(ParseError) as info:
        build_network(NetworkConfig(), SSO_GRAPH + "arc uidp ghost MaintainPrivacy performance 1\n",
                      SSO_ENTITIES)
    assert info.value.line == 4


def test_duplicate_entity():
    with pytest.raises(DuplicateEntity):
        build_network(NetworkConfig(), "", SSO_ENTITIES + [SSO_ENTITIES[0]])


def test_unknown_registration_or_adversary():
    with pytest.raises(UnknownEntity):
        build_network(NetworkConfig(), "", SSO_ENTITIES,
                      [replace(ALICE, idp="nowhere")])
    with pytest.raises(UnknownEntity):
        build_network(NetworkConfig(adversaries=(("ghost", LIAR),)), "", SSO_ENTITIES)


def test_quiet_network_has_empty_log():
    assert len(sso_network().run_until_quiet()) == 0


def test_happy_log_lists_connections_in_order():
    net = sso_network()
    run_sso(net, "alice", "shop", "uidp", "spidp")
    conns = [int(r.split(" conn=")[1].split()[0]) for r in net.log.records
             if r.startswith("deliver ") and " conn=" in r and " conn=-" not in r]
    assert conns == [1, 2, 3, 4, 5, 6, 7, 8]


def test_total_loss_times_out():
    net = sso_network(drop_probability=1.0)
    out = run_sso(net, "alice", "shop", "uidp", "spidp")
    assert str(out.status) == "Failed(Timeout)"
    assert any(r.startswith("drop ") for r in net.log.records)


def test_tick_limit_is_logged():
    net = sso_network(max_ticks=3)
    out = run_sso(net, "alice", "shop", "uidp", "spidp")
    assert out.status.kind is StatusKind.FAILED
    assert any(r.startswith("limit ") for r in net.log.records)


def _response_from(net, sender, arcs):
    blobs = tuple(sign_referral(net.entity(sender).keypair, a).to_bytes() for a in arcs)
    return Envelope(sender, "spidp", ReferralResponse("c1", blobs), None, 0, 1)


def test_lying_referee_inflates_and_resigns():
    net = sso_network(adversaries=(("ref", LIAR),))
    env = _response_from(net, "ref", [TrustArc("ref", "uidp", MGA, ArcKind.PERFORMANCE, 0.4)])
    out = apply_adversary(net.nodes["ref"], env)
    ref = Referral.from_bytes(out.payload.referrals[0])
    assert ref.statement.value == 0.8
    assert verify_referral(ref, net.keys)
    capped = apply_adversary(net.nodes["ref"], _response_from(
        net, "ref", [TrustArc("ref", "uidp", MGA, ArcKind.PERFORMANCE, 0.7)]))
    assert Referral.from_bytes(capped.payload.referrals[0]).statement.value == 1.0


def test_tampering_forwarder_breaks_signatures():
    net = sso_network(adversaries=(("ref", AdversaryKind(AdversaryTag.TAMPERING_FORWARDER)),))
    env = _response_from(net, "ref", [TrustArc("ref", "uidp", MGA, ArcKind.PERFORMANCE, 0.4)])
    blob = apply_adversary(net.nodes["ref"], env).payload.referrals[0]
    try:
        ok = verify_referral(Referral.from_bytes(blob), net.keys)
    except ValueError:
        ok = False
    assert not ok


def test_honest_node_envelope_unchanged():
    net = sso_network()
    env = _response_from(net, "ref", [TrustArc("ref", "uidp", MGA, ArcKind.PERFORMANCE, 0.4)])
    assert apply_adversary(net.nodes["ref"], env) is env
    liar = sso_network(adversaries=(("ref", LIAR),))
    foreign = _response_from(liar, "uidp", [TrustArc("uidp", "spidp", MGA,
                                                     ArcKind.PERFORMANCE, 0.4)])
    assert apply_adversary(liar.nodes["ref"], foreign) is foreign


def test_adversary_confinement_differential():
    def honest_sends(adversaries):
        net = sso_network(adversaries=adversaries)
        run_sso(net, "alice", "shop", "uidp", "spidp")
        mutated = [r for r in net.log.records if r.startswith("mutate ")]
        sends = [r for r in net.log.records if r.startswith("send ") and " from=ref " not in r]
        return mutated, sends

    clean_mut, clean = honest_sends(())
    mut, dirty = honest_sends((("ref", LIAR),))
    assert clean_mut == []
    assert mut and all(" from=ref " in r for r in mut)
    assert len(clean) > 8 and dirty == clean


def test_bad_asserter_lowers_direct_rating():
    graph = ("arc spidp uidp MakeGoodAssertions performance 0.8\n"
             "arc uidp spidp MaintainPrivacy performance 0.8\n")
    net = sso_network(graph=graph,
                      adversaries=(("uidp", AdversaryKind(AdversaryTag.BAD_ASSERTER)),))
    out = run_sso(net, "alice", "shop", "uidp", "spidp")
    assert out.status.kind is StatusKind.SUCCEEDED
    assert out.assertion.attribute_map()["name"] == "forged:alice"
    events = experience_feedback(net, [(out, BINDINGS)])
    c_event = [e for e in events if e.relationship is RelationshipId.C][0]
    assert c_event.outcome == 0.0
    assert net.manager("spidp").store.direct_rating("uidp", MGA) == pytest.approx(0.7 * 0.8)


def test_clean_run_moves_ratings_up():
    net = sso_network()
    out = run_sso(net, "alice", "shop", "uidp", "spidp")
    experience_feedback(net, [(out, BINDINGS)])
    # C was transitive: a good outcome seeds direct experience
    assert net.manager("spidp").store.direct_rating("uidp", MGA) == 1.0
    d = net.manager("uidp").store.direct_rating("spidp", MAINTAIN_PRIVACY)
    assert d == 0.7 * 0.8 + 0.3 * 1.0 and d > 0.8


def test_bad_transitive_outcome_penalises_referee():
    net = sso_network(adversaries=(("uidp", AdversaryKind(AdversaryTag.BAD_ASSERTER)),))
    before = net.manager("spidp").store.direct_rating("ref", MGA, ArcKind.REFERRAL)
    out = run_sso(net, "alice", "shop", "uidp", "spidp")
    events = experience_feedback(net, [(out, BINDINGS)])
    after = net.manager("spidp").store.direct_rating("ref", MGA, ArcKind.REFERRAL)
    assert after < before and after == before * 0.5
    assert [e.action for e in events if e.relationship is RelationshipId.C] == ["penalize:applied"]
    assert net.manager("spidp").store.direct_rating("uidp", MGA) is None


def test_terminated_runs_give_no_assertion_feedback():
    net = sso_network()
    out = run_sso(net, "alice", "shop", "uidp", "spidp", SsoParams(threshold_c=0.9))
    assert experience_feedback(net, [(out, BINDINGS)]) == []


def test_identity_roles_recorded():
    net = sso_network()
    assert net.entity("uidp").is_idp and EntityRole.USER in net.entity("alice").roles
