from __future__ import annotations

import pytest

from trustgrid.trustnet import TrustNetwork, make_record

# Seven-node endorsement graph used throughout the trust tests; A..G are 1..7.
A, B, C, D, E, F, G = range(1, 8)
FIG8_EDGES = [(A, B), (A, C), (A, F), (B, D), (B, E), (C, E), (C, F), (C, G)]


def fig8_network(scheme: str = "ed25519") -> TrustNetwork:
    net = TrustNetwork(8, scheme=scheme)
    net.add_empowered(make_record(A, scheme=scheme, uid="Node A <nodea@grid.example>"))
    for n in (B, C, D, E, F, G):
        net.add_node(make_record(n, scheme=scheme, uid=f"Node {'ABCDEFG'[n - 1]} <node@grid.example>"))
    for a, b in FIG8_EDGES:
        net.link(a, b)
    return net


@pytest.fixture
def fig8() -> TrustNetwork:
    return fig8_network()
