"""Ring-positioned trust network with mutual endorsements.

Nodes occupy positions on a ring of size N. A joining node is introduced by
an empowered node of its neighborhood and then exchanges signatures with the
occupants of the positions ``p + 2**x (mod N)``, which keeps the number of
exchanges logarithmic in N. Two nodes share a trust edge exactly when each
has signed the other's certificate.
"""

from __future__ import annotations

import enum
import logging
from collections import deque
from dataclasses import dataclass, field, replace
from datetime import date, timedelta
from typing import Iterable, Iterator

from . import attestation
from .attestation import SoftwareState
from .errors import (
    AttestationFailed,
    CertificateNotFound,
    NeighborhoodEmpty,
    NetworkTooSmall,
    NoEmpoweredNode,
    NodeRevoked,
    NoTrustPath,
    PositionOccupied,
    UnknownNode,
)
from .identity import (
    Certificate,
    KeyPair,
    SignatureScheme,
    generate_keypair,
    get_scheme,
    self_sign,
    sign_certificate,
    verify_signature,
)
from .ledger import TRUST, Block, LedgerEntry, LedgerView, NodeJoined, TrustEstablished, TrustRevoked

log = logging.getLogger(__name__)

SIMPLE = "simple"
EMPOWERED = "empowered"
DEFAULT_CHAIN_LIMIT = 4


def neighbor_positions(p: int, n: int) -> set[int]:
    """Ring positions a node at ``p`` exchanges signatures with."""
    if n < 2:
        raise NetworkTooSmall(f"a ring needs at least 2 positions, got {n}")
    if not 0 <= p < n:
        raise ValueError(f"position {p} outside ring of size {n}")
    out = {(p + (1 << x)) % n for x in range(n.bit_length())}
    out.discard(p)
    return out


class RejoinOutcome(enum.Enum):
    RESUMED = "ResumedWithExistingCert"
    MUST_REJOIN_FRESH = "MustRejoinFresh"


@dataclass
class NodeRecord:
    node_id: int
    keypair: KeyPair
    uid: str
    neighborhood: int = 0
    position: int | None = None
    role: str = SIMPLE
    online: bool = True
    software: SoftwareState = field(default_factory=attestation.reference_state)


@dataclass(frozen=True)
class TrustPath:
    source: int
    target: int
    intermediates: tuple[int, ...] = ()

    @property
    def nodes(self) -> tuple[int, ...]:
        return (self.source, *self.intermediates, self.target)


@dataclass(frozen=True)
class JoinResult:
    node_id: int
    certificate: Certificate
    exchanges: tuple[int, ...]  # introducer plus every peer that exchanged signatures


@dataclass(frozen=True)
class PromotionEvent:
    neighborhood: int
    node: int
    endorsements: int
    synced_from: int | None


class TrustNetwork:
    def __init__(
        self,
        size: int,
        *,
        chain_limit: int = DEFAULT_CHAIN_LIMIT,
        scheme: SignatureScheme | str = "ed25519",
        today: date = date(2022, 2, 7),
        validity_days: int = 486,
    ) -> None:
        if size < 2:
            raise NetworkTooSmall(f"a ring needs at least 2 positions, got {size}")
        self.size = size
        self.chain_limit = chain_limit
        self.scheme = get_scheme(scheme) if isinstance(scheme, str) else scheme
        self.today = today
        self.validity_days = validity_days
        self.nodes: dict[int, NodeRecord] = {}
        self.certs: dict[int, Certificate] = {}
        self.positions: dict[int, int] = {}
        self.adjacency: dict[int, set[int]] = {}
        self.registry: dict[str, bytes] = {}
        self.key_owner: dict[str, int] = {}
        self.promotions: list[PromotionEvent] = []
        self._empowered: set[int] = set()
        self._partner_cache: dict[int, tuple[int, set[int]]] = {}
        self.lookup_work = 0  # nodes expanded by certificate_lookup, for benchmarks
        self.reference_digest = attestation.compute_attestation_hash(attestation.reference_state())
        self.trust_ledger = LedgerView(kind=TRUST)
        self.partials: dict[int, list[LedgerEntry]] = {}
        self.trust_ledger.listeners.append(self._store_partials)

    # -- queries ---------------------------------------------------------------

    def _store_partials(self, block: Block) -> None:
        for e in block.entries:
            for party in e.parties():
                self.partials.setdefault(party, []).append(e)

    def record(self, node: int) -> NodeRecord:
        try:
            return self.nodes[node]
        except KeyError:
            raise UnknownNode(f"unknown node {node}") from None

    def is_revoked(self, node: int) -> bool:
        return self.certs[node].revoked

    def is_authority(self, node: int) -> bool:
        rec = self.nodes.get(node)
        return (
            rec is not None and rec.role == EMPOWERED and rec.online and not self.is_revoked(node)
        )

    def authorities(self) -> list[int]:
        """Online, unrevoked empowered nodes: the current PoA validator set."""
        return sorted(n for n in self._empowered if self.is_authority(n))

    def empowered_in(self, neighborhood: int) -> list[int]:
        return [
            n for n in self.authorities() if self.nodes[n].neighborhood == neighborhood
        ]

    def neighborhoods(self) -> list[int]:
        return sorted({r.neighborhood for r in self.nodes.values()})

    def members(self, neighborhood: int) -> list[int]:
        return sorted(n for n, r in self.nodes.items() if r.neighborhood == neighborhood)

    def edges(self) -> Iterator[tuple[int, int]]:
        for a in sorted(self.adjacency):
            for b in sorted(self.adjacency[a]):
                if a < b:
                    yield a, b

    def degree(self, node: int) -> int:
        return len(self.adjacency.get(node, ()))

    def has_edge(self, a: int, b: int) -> bool:
        return b in self.adjacency.get(a, ())

    def export_edges(self) -> str:
        return "".join(f"{a} {b}\n" for a, b in self.edges())

    def valid_endorsements(self, node: int) -> int:
        """Non-self signatures that verify and come from unrevoked signers."""
        cert = self.certs[node]
        count = 0
        for sig in cert.endorsements():
            signer = self.key_owner.get(sig.signer_key_id)
            if signer is None or self.is_revoked(signer):
                continue
            if verify_signature(cert, sig, self.registry, self.scheme) == "valid":
                count += 1
        return count

    def is_trusted(self, node: int) -> bool:
        """Unrevoked, unexpired, and endorsed by at least one valid signer."""
        if node not in self.certs:
            return False
        cert = self.certs[node]
        if cert.revoked or cert.is_expired(self.today):
            return False
        return self.valid_endorsements(node) >= 1

    def _validator(self, prefer_neighborhood: int | None = None) -> int:
        if prefer_neighborhood is not None:
            local = self.empowered_in(prefer_neighborhood)
            if local:
                return local[0]
        auth = self.authorities()
        if not auth:
            raise NoEmpoweredNode("no online empowered node can validate the block")
        return auth[0]

    def _log(self, entries: list[LedgerEntry], validator: int) -> None:
        if entries:
            self.trust_ledger.append_block(entries, validator, self.authorities())

    # -- construction primitives --------------------------------------------

    def _register(self, rec: NodeRecord, cert: Certificate, position: int | None) -> None:
        if position is not None:
            if not 0 <= position < self.size:
                raise ValueError(f"position {position} outside ring of size {self.size}")
            holder = self.positions.get(position)
            if holder is not None and holder != rec.node_id:
                raise PositionOccupied(f"position {position} is held by node {holder}")
            self.positions[position] = rec.node_id
        rec.position = position
        old = self.certs.get(rec.node_id)
        if old is not None:
            self.key_owner.pop(old.key_id, None)
        self.nodes[rec.node_id] = rec
        self.certs[rec.node_id] = cert
        if rec.role == EMPOWERED:
            self._empowered.add(rec.node_id)
        else:
            self._empowered.discard(rec.node_id)
        self.adjacency.setdefault(rec.node_id, set())
        self.registry[rec.keypair.key_id] = rec.keypair.public_key
        self.key_owner[rec.keypair.key_id] = rec.node_id

    def _fresh_cert(self, rec: NodeRecord) -> Certificate:
        return self_sign(
            rec.keypair, rec.uid, self.today, self.today + timedelta(days=self.validity_days)
        )

    def add_empowered(self, rec: NodeRecord, position: int | None = None) -> Certificate:
        """Provider-designated node; needs no introducer and validates its own join."""
        rec.role = EMPOWERED
        cert = self._fresh_cert(rec)
        self._register(rec, cert, position)
        self._log([NodeJoined(rec.node_id, rec.keypair.key_id, rec.node_id, self.today)], rec.node_id)
        return cert

    def add_node(self, rec: NodeRecord, position: int | None = None, cert: Certificate | None = None) -> Certificate:
        """Place a node without the join protocol (fixtures and baselines)."""
        cert = cert or self._fresh_cert(rec)
        self._register(rec, cert, position)
        return cert

    def _self_sig_ok(self, node: int) -> bool:
        cert = self.certs[node]
        return bool(cert.signatures) and (
            verify_signature(cert, cert.signatures[0], self.registry, self.scheme) == "valid"
        )

    def exchange_signatures(self, a: int, b: int) -> bool:
        """Each node checks the other's self-signature, then both countersign.

        Returns True if a new edge was created. No ledger entry is written.
        """
        if a == b or self.has_edge(a, b):
            return False
        for x in (a, b):
            if self.is_revoked(x):
                raise NodeRevoked(f"node {x} is revoked")
        if not (self._self_sig_ok(a) and self._self_sig_ok(b)):
            raise ValueError(f"self-signature check failed between {a} and {b}")
        ra, rb = self.nodes[a], self.nodes[b]
        if not self.certs[b].has_signer(ra.keypair.key_id):
            self.certs[b] = sign_certificate(self.certs[b], ra.keypair, ra.uid, self.today)
        if not self.certs[a].has_signer(rb.keypair.key_id):
            self.certs[a] = sign_certificate(self.certs[a], rb.keypair, rb.uid, self.today)
        self.adjacency[a].add(b)
        self.adjacency[b].add(a)
        return True

    def link(self, a: int, b: int, validator: int | None = None) -> None:
        """Exchange signatures and log the relationship in its own block."""
        if self.exchange_signatures(a, b):
            v = validator if validator is not None else self._validator(self.nodes[a].neighborhood)
            self._log([TrustEstablished(min(a, b), max(a, b), self.today)], v)

    def stabilize(self, node: int) -> list[int]:
        """Exchange with every occupied 2^x position not yet linked; one block."""
        rec = self.record(node)
        if rec.position is None or self.is_revoked(node):
            return []
        new = []
        for q in sorted(neighbor_positions(rec.position, self.size)):
            peer = self.positions.get(q)
            if peer is None or not self.nodes[peer].online or self.is_revoked(peer):
                continue
            if self.exchange_signatures(node, peer):
                new.append(peer)
        if new:
            self._log(
                [TrustEstablished(min(node, p), max(node, p), self.today) for p in new],
                self._validator(rec.neighborhood),
            )
        return new

    # -- protocol operations -------------------------------------------------

    def vacant_position(self) -> int:
        for p in range(self.size):
            if p not in self.positions:
                return p
        raise PositionOccupied("ring is full")

    def join_node(
        self, candidate: NodeRecord, introducer: int, position: int | None = None
    ) -> JoinResult:
        """Admit ``candidate`` through ``introducer`` and exchange with its ring neighbors.

        The candidate is attested by the online empowered nodes of its
        neighborhood first; a failed attestation leaves the network untouched.
        """
        intro = self.nodes.get(introducer)
        if intro is None or not self.is_authority(introducer):
            raise NoEmpoweredNode(f"node {introducer} is not an online empowered node")
        attesters = self.empowered_in(candidate.neighborhood) or [introducer]
        votes = attestation.collect_votes(attesters, candidate.software, self.reference_digest)
        if attestation.tally(votes) != attestation.PASS:
            raise AttestationFailed(f"candidate {candidate.node_id} failed remote attestation")

        existing = self.nodes.get(candidate.node_id)
        if existing is not None:
            if not (self.is_revoked(candidate.node_id) or self.certs[candidate.node_id].is_expired(self.today)):
                raise PositionOccupied(f"node {candidate.node_id} already holds a valid certificate")
            if candidate.keypair.key_id == existing.keypair.key_id:
                raise ValueError("rejoining after revocation or expiry needs a fresh key pair")
            if position is None:
                position = existing.position
            self._drop(candidate.node_id)
        if position is None:
            position = candidate.position if candidate.position is not None else self.vacant_position()

        cert = self._fresh_cert(candidate)
        cert = sign_certificate(cert, intro.keypair, intro.uid, self.today)
        candidate.role = SIMPLE
        candidate.online = True
        self._register(candidate, cert, position)
        node = candidate.node_id

        exchanged = [introducer]
        linked = []
        for q in sorted(neighbor_positions(position, self.size)):
            peer = self.positions.get(q)
            if peer is None or peer == node or not self.nodes[peer].online or self.is_revoked(peer):
                continue
            if self.exchange_signatures(node, peer):
                linked.append(peer)
            if peer not in exchanged:
                exchanged.append(peer)
        entries: list[LedgerEntry] = [NodeJoined(node, candidate.keypair.key_id, introducer, self.today)]
        entries += [TrustEstablished(min(node, p), max(node, p), self.today) for p in linked]
        self._log(entries, introducer)
        return JoinResult(node, self.certs[node], tuple(exchanged))

    def _drop(self, node: int) -> None:
        rec = self.nodes[node]
        if rec.position is not None and self.positions.get(rec.position) == node:
            del self.positions[rec.position]
        for peer in self.adjacency.pop(node, set()):
            self.adjacency[peer].discard(node)

    def rejoin_node(self, node: int) -> RejoinOutcome:
        rec = self.record(node)
        cert = self.certs[node]
        if cert.revoked or cert.is_expired(self.today):
            return RejoinOutcome.MUST_REJOIN_FRESH
        rec.online = True
        return RejoinOutcome.RESUMED

    def _neighbors_full(self, node: int) -> Iterable[int]:
        return self.adjacency.get(node, ())

    def _neighbors_partial(self, node: int) -> Iterable[int]:
        """Trust partners as recorded in ``node``'s own partial ledger."""
        entries = self.partials.get(node, ())
        cached = self._partner_cache.get(node)
        if cached is not None and cached[0] == len(entries):
            return cached[1]
        partners: set[int] = set()
        for e in entries:
            if isinstance(e, TrustEstablished):
                partners.add(e.b if e.a == node else e.a)
            elif isinstance(e, TrustRevoked):
                if e.node == node:
                    partners.clear()
                else:
                    partners.discard(e.node)
        self._partner_cache[node] = (len(entries), partners)
        return partners

    def certificate_lookup(self, a: int, target: int, *, decentralized: bool = False) -> TrustPath:
        """Shortest endorsement chain from ``a`` to ``target``.

        Breadth-first over endorser layers, bounded by ``chain_limit``
        intermediates; ties go to the lexicographically smallest chain. With
        ``decentralized`` each hop reads the visited node's partial ledger
        instead of the full trust ledger.
        """
        self.record(a)
        if target not in self.certs:
            raise CertificateNotFound(f"no certificate for node {target}")
        for x in (a, target):
            if self.is_revoked(x):
                raise NodeRevoked(f"node {x} is revoked")
        if a == target:
            return TrustPath(a, target)
        neighbors = self._neighbors_partial if decentralized else self._neighbors_full
        parent: dict[int, int] = {a: a}
        frontier = deque([(a, 0)])
        max_edges = self.chain_limit + 1
        while frontier:
            u, d = frontier.popleft()
            if d == max_edges:
                continue
            self.lookup_work += 1
            for v in sorted(neighbors(u)):
                if v in parent or self.is_revoked(v):
                    continue
                parent[v] = u
                if v == target:
                    chain = []
                    w = parent[v]
                    while w != a:
                        chain.append(w)
                        w = parent[w]
                    return TrustPath(a, target, tuple(reversed(chain)))
                frontier.append((v, d + 1))
        raise NoTrustPath(f"no trust chain from {a} to {target} within {self.chain_limit} intermediates")

    def establish_trust(self, a: int, b: int, *, decentralized: bool = False) -> TrustPath:
        """Direct edge short-circuits; otherwise look up a chain and countersign."""
        for x in (a, b):
            self.record(x)
            if self.is_revoked(x):
                raise NodeRevoked(f"node {x} is revoked")
        if self.has_edge(a, b):
            return TrustPath(a, b)
        path = self.certificate_lookup(a, b, decentralized=decentralized)
        if a != b:
            self.link(a, b)
        return path

    def revoke_certificate(self, victim: int, reason: str = "voluntary") -> None:
        """Revoke ``victim`` and strip its signature from every other certificate."""
        rec = self.record(victim)
        if self.certs[victim].revoked:
            return
        key = rec.keypair.key_id
        self.certs[victim] = replace(self.certs[victim], revoked=True)
        for n, cert in self.certs.items():
            if n != victim and cert.has_signer(key):
                self.certs[n] = cert.without_signer(key)
        severed = tuple(sorted(self.adjacency.get(victim, ())))
        for peer in severed:
            self.adjacency[peer].discard(victim)
        self.adjacency[victim] = set()
        if rec.role == EMPOWERED and rec.online and not self.empowered_in(rec.neighborhood):
            try:
                self.promote_node(rec.neighborhood)
            except NeighborhoodEmpty:
                log.warning("neighborhood %s has no node left to promote", rec.neighborhood)
        self._log([TrustRevoked(victim, reason, self.today, severed)], self._validator(rec.neighborhood))

    def set_offline(self, node: int) -> None:
        self.record(node).online = False

    def promote_node(self, neighborhood: int) -> int:
        """Elevate the most-endorsed online simple node when no empowered node is left."""
        if self.empowered_in(neighborhood):
            raise ValueError(f"neighborhood {neighborhood} still has an online empowered node")
        candidates = [
            n
            for n in self.members(neighborhood)
            if self.nodes[n].online and self.nodes[n].role == SIMPLE and not self.is_revoked(n)
        ]
        if not candidates:
            raise NeighborhoodEmpty(f"no online node left in neighborhood {neighborhood}")
        scored = [(self.valid_endorsements(n), n) for n in candidates]
        best_count, best = min(scored, key=lambda s: (-s[0], s[1]))
        self.nodes[best].role = EMPOWERED
        self._empowered.add(best)
        others = [n for n in self.authorities() if self.nodes[n].neighborhood != neighborhood]
        event = PromotionEvent(neighborhood, best, best_count, others[0] if others else None)
        self.promotions.append(event)
        log.info("promoted node %s in neighborhood %s", best, neighborhood)
        return best


def make_record(
    node_id: int,
    neighborhood: int = 0,
    *,
    seed: int | None = None,
    scheme: SignatureScheme | str = "ed25519",
    uid: str | None = None,
) -> NodeRecord:
    kp = generate_keypair(node_id if seed is None else seed, scheme)
    uid = uid or f"Node {node_id} <node{node_id}@grid.example>"
    return NodeRecord(node_id=node_id, keypair=kp, uid=uid, neighborhood=neighborhood)


def build_ring_network(
    neighborhoods: int,
    nodes_per_neighborhood: int,
    *,
    empowered_per_neighborhood: int = 1,
    ring_size: int | None = None,
    chain_limit: int = DEFAULT_CHAIN_LIMIT,
    scheme: SignatureScheme | str = "ed25519",
    key_seed: int = 0,
    stabilize: bool = True,
) -> TrustNetwork:
    """Bootstrap a network: neighborhoods are contiguous arcs of the ring.

    The first ``empowered_per_neighborhood`` positions of each arc are
    empowered and cross-sign each other; everyone else joins through the
    arc's first empowered node, in ring order. ``stabilize`` then lets every
    node exchange with all of its occupied 2^x positions.
    """
    total = neighborhoods * nodes_per_neighborhood
    if empowered_per_neighborhood > nodes_per_neighborhood:
        raise ValueError("more empowered nodes than nodes in a neighborhood")
    net = TrustNetwork(ring_size or total, chain_limit=chain_limit, scheme=scheme)
    if net.size < total:
        raise ValueError("ring smaller than node count")
    layout = []
    for hood in range(neighborhoods):
        for k in range(nodes_per_neighborhood):
            pos = hood * nodes_per_neighborhood + k
            layout.append((pos, hood, k < empowered_per_neighborhood))
    for pos, hood, emp in layout:
        if emp:
            net.add_empowered(make_record(pos + 1, hood, seed=key_seed * 1_000_003 + pos + 1, scheme=scheme), pos)
    emp_ids = net.authorities()
    for i, a in enumerate(emp_ids):
        for b in emp_ids[i + 1 :]:
            net.link(a, b, validator=a)
    for pos, hood, emp in layout:
        if not emp:
            rec = make_record(pos + 1, hood, seed=key_seed * 1_000_003 + pos + 1, scheme=scheme)
            net.join_node(rec, net.empowered_in(hood)[0], pos)
    if stabilize:
        for node in sorted(net.nodes):
            net.stabilize(node)
    return net
