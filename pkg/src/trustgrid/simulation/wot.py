"""Flat Web-of-Trust baseline: every node keeps a keyring of every other node.

A newcomer floods its certificate to all existing nodes. Each pair checks
the other's self-signature and countersigns, so a join costs N-1 exchanges.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, timedelta

from ..errors import CertificateNotFound, NetworkTooSmall, UnknownNode
from ..identity import (
    Certificate,
    KeyPair,
    SignatureScheme,
    generate_keypair,
    get_scheme,
    self_sign,
    sign_certificate,
    verify_signature,
)


@dataclass
class WoTNode:
    node_id: int
    keypair: KeyPair
    uid: str
    cert: Certificate
    keyring: dict[int, Certificate] = field(default_factory=dict)


class WoTBaseline:
    """Keyrings start populated with every peer's self-signed certificate.

    Only the join under measurement produces countersignatures; the
    pre-existing mesh is not re-signed, which keeps setup cheap without
    touching the cost of the flooding join itself.
    """

    def __init__(
        self,
        scheme: SignatureScheme | str = "ed25519",
        today: date = date(2022, 2, 7),
        validity_days: int = 486,
    ) -> None:
        self.scheme = get_scheme(scheme) if isinstance(scheme, str) else scheme
        self.today = today
        self.validity_days = validity_days
        self.nodes: dict[int, WoTNode] = {}
        self.registry: dict[str, bytes] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def make_node(self, node_id: int, seed: int | None = None) -> WoTNode:
        kp = generate_keypair(node_id if seed is None else seed, self.scheme)
        uid = f"Node {node_id} <node{node_id}@grid.example>"
        cert = self_sign(kp, uid, self.today, self.today + timedelta(days=self.validity_days))
        return WoTNode(node_id, kp, uid, cert)

    def populate(self, count: int, key_seed: int = 0) -> None:
        """Add ``count`` nodes whose keyrings already hold each other's certificates."""
        fresh = [self.make_node(i, key_seed * 1_000_003 + i) for i in range(1, count + 1)]
        for n in fresh:
            self.nodes[n.node_id] = n
            self.registry[n.keypair.key_id] = n.keypair.public_key
        for n in self.nodes.values():
            n.keyring = {m.node_id: m.cert for m in self.nodes.values() if m.node_id != n.node_id}

    def join(self, newcomer: WoTNode) -> int:
        """Flood ``newcomer`` to every node; returns the number of exchanges."""
        if newcomer.node_id in self.nodes:
            raise ValueError(f"node {newcomer.node_id} already present")
        if not self.nodes:
            raise NetworkTooSmall("a flooding join needs at least one existing node")
        self.registry[newcomer.keypair.key_id] = newcomer.keypair.public_key
        exchanges = 0
        for peer in self.nodes.values():
            for cert in (peer.cert, newcomer.cert):
                if verify_signature(cert, cert.signatures[0], self.registry, self.scheme) != "valid":
                    raise ValueError(f"self-signature check failed between {peer.node_id} and {newcomer.node_id}")
            peer.cert = sign_certificate(peer.cert, newcomer.keypair, newcomer.uid, self.today)
            newcomer.cert = sign_certificate(newcomer.cert, peer.keypair, peer.uid, self.today)
            newcomer.keyring[peer.node_id] = peer.cert
            exchanges += 1
        for peer in self.nodes.values():
            peer.keyring[newcomer.node_id] = newcomer.cert
        self.nodes[newcomer.node_id] = newcomer
        return exchanges

    def lookup(self, a: int, b: int) -> Certificate:
        """Read ``b`` from ``a``'s keyring and check its self-signature once."""
        try:
            holder = self.nodes[a]
        except KeyError:
            raise UnknownNode(f"unknown node {a}") from None
        cert = holder.keyring.get(b)
        if cert is None:
            raise CertificateNotFound(f"node {a} holds no certificate for {b}")
        if verify_signature(cert, cert.signatures[0], self.registry, self.scheme) != "valid":
            raise CertificateNotFound(f"certificate of {b} fails verification")
        return cert
