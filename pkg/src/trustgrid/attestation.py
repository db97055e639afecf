"""Simulated remote attestation of node software state.

No enclave is emulated: a node's state is a fixed list of component digests
and tampering means mutating that list. Empowered nodes hash the attestee's
state, compare against the provider reference, and a strict majority of
fail votes revokes the attestee's certificate.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Callable, Iterable, Sequence

from .errors import EmptyState, NoAttesters

if TYPE_CHECKING:
    from .trustnet import TrustNetwork

PASS = "pass"
FAIL = "fail"


@dataclass(frozen=True)
class SoftwareState:
    components: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        names = [n for n, _ in self.components]
        if len(set(names)) != len(names):
            raise ValueError("component names must be unique")

    def tampered(self, component: str | None = None, digest: str = "0" * 64) -> SoftwareState:
        """Copy with one component digest replaced (the first one by default)."""
        name = component or self.components[0][0]
        return replace(
            self, components=tuple((n, digest if n == name else d) for n, d in self.components)
        )


def reference_state() -> SoftwareState:
    """Provider-approved firmware fixture used by default for every node."""
    parts = ("bootloader", "metering-firmware", "trading-broker", "key-store", "config")
    return SoftwareState(
        tuple((p, hashlib.sha256(f"approved:{p}:v1".encode()).hexdigest()) for p in parts)
    )


def compute_attestation_hash(state: SoftwareState) -> str:
    if not state.components:
        raise EmptyState("software state has no components")
    h = hashlib.sha256()
    for name, digest in state.components:
        for part in (name, digest):
            raw = part.encode("utf-8")
            h.update(len(raw).to_bytes(4, "big") + raw)
    return h.hexdigest()


@dataclass(frozen=True)
class AttestationVerdict:
    attestee: int
    votes: tuple[tuple[int, str], ...]
    outcome: str

    @property
    def passed(self) -> bool:
        return self.outcome == PASS


def tally(votes: Sequence[tuple[int, str]]) -> str:
    """Strict majority of fail votes fails; a tie passes."""
    fails = sum(1 for _, v in votes if v == FAIL)
    return FAIL if fails > len(votes) // 2 else PASS


Voter = Callable[[int, str, str], bool]


def _honest_vote(attester: int, observed: str, expected: str) -> bool:
    return observed == expected


def collect_votes(
    attesters: Iterable[int], state: SoftwareState, expected: str, vote: Voter = _honest_vote
) -> tuple[tuple[int, str], ...]:
    observed = compute_attestation_hash(state)
    return tuple((a, PASS if vote(a, observed, expected) else FAIL) for a in attesters)


def attest(
    net: TrustNetwork,
    attesters: Sequence[int],
    attestee: int,
    expected: str | None = None,
    vote: Voter = _honest_vote,
) -> AttestationVerdict:
    """Have ``attesters`` vote on ``attestee``; revoke it on a strict-majority fail.

    ``vote`` lets tests model attesters that misreport.
    """
    if not attesters:
        raise NoAttesters("attestation needs at least one attester")
    for a in attesters:
        if not net.is_authority(a):
            raise NoAttesters(f"attester {a} is not an online empowered node")
    expected = expected if expected is not None else net.reference_digest
    votes = collect_votes(attesters, net.nodes[attestee].software, expected, vote)
    verdict = AttestationVerdict(attestee, votes, tally(votes))
    if not verdict.passed:
        net.revoke_certificate(attestee, "attestation-failure")
    return verdict


def attesters_for(net: TrustNetwork, node: int) -> list[int]:
    """Empowered nodes of the node's neighborhood; empowered nodes are checked by their peers."""
    rec = net.nodes[node]
    if rec.role == "empowered":
        return [a for a in net.authorities() if a != node]
    local = [a for a in net.empowered_in(rec.neighborhood) if a != node]
    return local or [a for a in net.authorities() if a != node]


def attestation_sweep(net: TrustNetwork, period: int = 1, cycle: int = 0) -> list[AttestationVerdict]:
    """Attest every online, unrevoked node once, in node-id order.

    Runs only on cycles that are a multiple of ``period``; returns no
    verdicts otherwise.
    """
    if period < 1:
        raise ValueError("period must be >= 1")
    if cycle % period:
        return []
    verdicts = []
    for node in sorted(net.nodes):
        rec = net.nodes[node]
        if not rec.online or net.is_revoked(node):
            continue
        attesters = attesters_for(net, node)
        if not attesters:
            continue
        verdicts.append(attest(net, attesters, node))
    return verdicts
