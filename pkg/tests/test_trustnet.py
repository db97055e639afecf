from __future__ import annotations

import itertools
import math
import random
from datetime import timedelta

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import A, B, C, D, E, G, fig8_network
from trustgrid.errors import (
    AttestationFailed,
    CertificateNotFound,
    NeighborhoodEmpty,
    NetworkTooSmall,
    NoEmpoweredNode,
    NoTrustPath,
    NodeRevoked,
    UnknownNode,
)
from trustgrid.ledger import TrustEstablished
from trustgrid.trustnet import (
    EMPOWERED,
    RejoinOutcome,
    TrustNetwork,
    build_ring_network,
    make_record,
    neighbor_positions,
)


# -- ring geometry -------------------------------------------------------------


@pytest.mark.parametrize(
    "p, n, expected",
    [(0, 8, {1, 2, 4}), (0, 2, {1}), (5, 16, {6, 7, 9, 13})],
)
def test_neighbor_positions_examples(p, n, expected):
    assert neighbor_positions(p, n) == expected


def test_neighbor_positions_rejects_tiny_ring():
    with pytest.raises(NetworkTooSmall):
        neighbor_positions(0, 1)


@given(n=st.integers(2, 5000), data=st.data())
def test_neighbor_positions_is_logarithmic(n, data):
    p = data.draw(st.integers(0, n - 1))
    out = neighbor_positions(p, n)
    assert p not in out
    assert all(0 <= q < n for q in out)
    assert 1 <= len(out) <= math.floor(math.log2(n)) + 1


# -- joining -------------------------------------------------------------------


def _ring_of_eight(vacant=(3,)):
    net = TrustNetwork(8)
    net.add_empowered(make_record(1, 0), 0)
    for pos in range(1, 8):
        if pos not in vacant:
            net.add_node(make_record(pos + 1, 0), pos)
    return net


def test_join_full_ring_collects_introducer_and_three_peers():
    net = _ring_of_eight()
    result = net.join_node(make_record(4, 0), introducer=1, position=3)
    cert = result.certificate
    assert len(cert.signatures) == 5  # self + empowered + peers at positions 4, 5, 7
    assert cert.signatures[0].signer_key_id == cert.key_id
    assert cert.signatures[1].signer_key_id == net.nodes[1].keypair.key_id
    assert sorted(net.adjacency[4]) == [5, 6, 8]
    assert result.exchanges == (1, 5, 6, 8)


def test_join_skips_vacant_neighbor_positions():
    net = _ring_of_eight(vacant=(3, 4))
    result = net.join_node(make_record(4, 0), introducer=1, position=3)
    assert sorted(net.adjacency[4]) == [6, 8]
    assert len(result.certificate.signatures) == 4


def test_tampered_candidate_is_refused_and_nothing_changes():
    net = _ring_of_eight()
    before = (len(net.trust_ledger), dict(net.positions), {k: set(v) for k, v in net.adjacency.items()})
    cand = make_record(4, 0)
    cand.software = cand.software.tampered()
    with pytest.raises(AttestationFailed):
        net.join_node(cand, introducer=1, position=3)
    assert (len(net.trust_ledger), net.positions, net.adjacency) == before
    assert 4 not in net.nodes


def test_join_needs_an_online_empowered_introducer():
    net = _ring_of_eight()
    with pytest.raises(NoEmpoweredNode):
        net.join_node(make_record(4, 0), introducer=2, position=3)
    net.set_offline(1)
    with pytest.raises(NoEmpoweredNode):
        net.join_node(make_record(4, 0), introducer=1, position=3)


def test_join_logs_one_block_validated_by_introducer():
    net = _ring_of_eight()
    before = len(net.trust_ledger)
    net.join_node(make_record(4, 0), introducer=1, position=3)
    assert len(net.trust_ledger) == before + 1
    block = net.trust_ledger.blocks[-1]
    assert block.header.identity == 1
    assert sum(isinstance(e, TrustEstablished) for e in block.entries) == 3


@settings(max_examples=15, deadline=None)
@given(n=st.integers(2, 64))
def test_join_exchange_count_is_logarithmic(n):
    net = build_ring_network(1, n - 1, ring_size=n, scheme="digest")
    result = net.join_node(make_record(n, 0, scheme="digest"), net.authorities()[0], n - 1)
    assert len(result.exchanges) <= math.floor(math.log2(n)) + 2


def test_edges_are_exactly_mutual_endorsements():
    net = build_ring_network(3, 6, scheme="digest")
    keys = {n: r.keypair.key_id for n, r in net.nodes.items()}
    for a, b in itertools.combinations(net.nodes, 2):
        mutual = net.certs[a].has_signer(keys[b]) and net.certs[b].has_signer(keys[a])
        assert net.has_edge(a, b) == mutual, (a, b)


def test_every_neighborhood_has_an_authority():
    net = build_ring_network(4, 5, scheme="digest")
    for hood in net.neighborhoods():
        assert net.empowered_in(hood)


# -- rejoin --------------------------------------------------------------------


def test_offline_node_with_valid_cert_resumes():
    net = _ring_of_eight(vacant=())
    net.set_offline(5)
    key = net.nodes[5].keypair.key_id
    assert net.rejoin_node(5) is RejoinOutcome.RESUMED
    assert net.nodes[5].online and net.nodes[5].keypair.key_id == key


def test_expired_or_revoked_node_must_rejoin_fresh():
    net = _ring_of_eight(vacant=())
    net.revoke_certificate(5)
    assert net.rejoin_node(5) is RejoinOutcome.MUST_REJOIN_FRESH
    net.today = net.certs[6].expires + timedelta(days=1)
    assert net.rejoin_node(6) is RejoinOutcome.MUST_REJOIN_FRESH
    with pytest.raises(UnknownNode):
        net.rejoin_node(99)


def test_revoked_node_rejoins_with_fresh_key():
    net = build_ring_network(1, 8, scheme="digest")
    net.revoke_certificate(5)
    fresh = make_record(5, 0, seed=5005, scheme="digest")
    result = net.join_node(fresh, introducer=1)
    assert not net.is_revoked(5)
    assert result.certificate.key_id == fresh.keypair.key_id
    assert net.degree(5) >= 1


# -- lookups on the seven-node graph --------------------------------------------


def test_lookup_a_to_e_uses_one_endorser(fig8):
    path = fig8.certificate_lookup(A, E)
    assert path.intermediates == (B,)


def test_lookup_a_to_g_goes_through_c(fig8):
    assert fig8.certificate_lookup(A, G).intermediates == (C,)


def test_lookup_to_self_is_empty(fig8):
    assert fig8.certificate_lookup(A, A).intermediates == ()


def test_lookup_unknown_target(fig8):
    with pytest.raises(CertificateNotFound):
        fig8.certificate_lookup(A, 42)


def test_establish_trust_adds_edge(fig8):
    path = fig8.establish_trust(A, E)
    assert len(path.intermediates) == 1
    assert fig8.has_edge(A, E)


def test_establish_existing_edge_short_circuits(fig8):
    before = len(fig8.trust_ledger)
    assert fig8.establish_trust(A, B).intermediates == ()
    assert len(fig8.trust_ledger) == before


def test_disconnected_components_have_no_path():
    net = TrustNetwork(8)
    net.add_empowered(make_record(1))
    for n in (2, 3, 4):
        net.add_node(make_record(n))
    net.link(1, 2)
    net.link(3, 4)
    with pytest.raises(NoTrustPath):
        net.establish_trust(1, 4)


def test_revoking_b_strips_its_signature_from_a_d_e(fig8):
    key_b = fig8.nodes[B].keypair.key_id
    holders = {n for n, c in fig8.certs.items() if n != B and c.has_signer(key_b)}
    assert holders == {A, D, E}
    fig8.revoke_certificate(B)
    assert not any(c.has_signer(key_b) for n, c in fig8.certs.items() if n != B)
    assert fig8.is_revoked(B) and fig8.degree(B) == 0
    assert fig8.certificate_lookup(A, E).intermediates == (C,)


def test_revoked_endpoint_is_rejected(fig8):
    fig8.revoke_certificate(B)
    with pytest.raises(NodeRevoked):
        fig8.establish_trust(A, B)


def test_revoking_isolated_node_touches_only_its_cert():
    net = TrustNetwork(4)
    net.add_empowered(make_record(1))
    net.add_node(make_record(2))
    net.add_node(make_record(3))
    net.link(1, 3)
    before = {n: c for n, c in net.certs.items() if n != 2}
    net.revoke_certificate(2)
    assert net.is_revoked(2)
    assert {n: c for n, c in net.certs.items() if n != 2} == before


def _lex_shortest(adj, a, b, max_edges):
    """Oracle: enumerate simple paths, keep the shortest then lexicographically smallest."""
    best = None
    stack = [(a,)]
    while stack:
        path = stack.pop()
        if path[-1] == b:
            key = (len(path), path)
            best = key if best is None or key < best else best
            continue
        if len(path) - 1 == max_edges:
            continue
        for v in adj[path[-1]]:
            if v not in path:
                stack.append(path + (v,))
    return None if best is None else best[1]


@pytest.mark.parametrize("seed", range(12))
def test_lookup_matches_brute_force_oracle(seed):
    rng = random.Random(seed)
    n = 11
    net = TrustNetwork(n, chain_limit=rng.randint(0, 4), scheme="digest")
    net.add_empowered(make_record(1, scheme="digest"))
    for i in range(2, n + 1):
        net.add_node(make_record(i, scheme="digest"))
    for a, b in itertools.combinations(range(1, n + 1), 2):
        if rng.random() < 0.22:
            net.link(a, b, validator=1)
    adj = {k: set(v) for k, v in net.adjacency.items()}
    for a, b in itertools.permutations(range(1, n + 1), 2):
        expected = _lex_shortest(adj, a, b, net.chain_limit + 1)
        if expected is None:
            with pytest.raises(NoTrustPath):
                net.certificate_lookup(a, b)
        else:
            assert net.certificate_lookup(a, b).nodes == expected
            assert net.certificate_lookup(a, b, decentralized=True).nodes == expected


def test_chain_never_exceeds_limit():
    net = fig8_network()
    net.chain_limit = 2
    with pytest.raises(NoTrustPath):
        net.certificate_lookup(D, G)
    net.chain_limit = 3
    assert net.certificate_lookup(D, G).nodes == (D, B, A, C, G)


# -- promotion -------------------------------------------------------------------


def _promotion_fixture(counts):
    """Neighborhood 1 has no authority; node i receives counts[i] endorsements."""
    net = TrustNetwork(64, scheme="digest")
    net.add_empowered(make_record(100, 0, scheme="digest"))
    signers = list(range(200, 210))
    for s in signers:
        net.add_node(make_record(s, 0, scheme="digest"))
    for node, k in counts.items():
        net.add_node(make_record(node, 1, scheme="digest"))
        for s in signers[:k]:
            net.link(node, s, validator=100)
    return net


def test_promotion_picks_most_endorsed():
    net = _promotion_fixture({21: 3, 22: 5, 23: 3})
    assert net.promote_node(1) == 22
    assert net.nodes[22].role == EMPOWERED and net.empowered_in(1) == [22]


def test_promotion_tie_goes_to_lower_id():
    net = _promotion_fixture({12: 4, 7: 4})
    assert net.promote_node(1) == 7


def test_promotion_with_everyone_offline():
    net = _promotion_fixture({12: 4, 7: 4})
    net.set_offline(12)
    net.set_offline(7)
    with pytest.raises(NeighborhoodEmpty):
        net.promote_node(1)


def test_revoking_last_authority_promotes_a_replacement():
    net = build_ring_network(2, 5, scheme="digest")
    hood0 = net.empowered_in(0)[0]
    net.revoke_certificate(hood0)
    assert len(net.empowered_in(0)) == 1
    assert net.promotions[-1].neighborhood == 0
