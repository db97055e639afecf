"""Computation-time and communication-cost accounting for one block round.

A round costs the five operations below once on each side of the exchange,
so the total is twice their sum. The consensus message is the 160-bit block
digest plus the 32-bit identity.
"""

from __future__ import annotations

import json
import math
import statistics
import time
from dataclasses import dataclass, field
from datetime import date
from typing import Any, Callable, Mapping, Sequence

from .. import __version__
from ..errors import MissingComponent
from ..identity import generate_keypair, self_sign, sign_certificate, verify_certificate
from ..ledger import TRUST, BlockHeader, LedgerView, TrustEstablished, consensus_message_bits, entries_nonce, hash_block
from .benchmarks import BenchmarkRow
from .engine import SimResult

CT_COMPONENTS = ("VerifyCertificate", "SignCertificate", "addNonce", "hashData", "addToDL")


def compute_ct(components: Mapping[str, float]) -> dict[str, Any]:
    """Total round time: ``2 * sum`` of the five named component durations."""
    missing = [name for name in CT_COMPONENTS if name not in components]
    if missing:
        raise MissingComponent(f"missing CT components: {', '.join(missing)}")
    extra = sorted(set(components) - set(CT_COMPONENTS))
    if extra:
        raise ValueError(f"unknown CT components: {', '.join(extra)}")
    values = {name: float(components[name]) for name in CT_COMPONENTS}
    return {"ct_components": values, "ct_total": 2 * math.fsum(values.values())}


def _median_ms(fn: Callable[[], object], reps: int) -> float:
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples) * 1000.0


def measure_ct(reps: int = 50, scheme: str = "ed25519") -> dict[str, float]:
    """Time each component on this machine, in milliseconds (medians)."""
    today = date(2022, 2, 7)
    alice, bob, carol = (generate_keypair(i, scheme) for i in (1, 2, 3))
    cert = self_sign(bob, "Bob <bob@grid.example>", today, today.replace(year=2023))
    cert = sign_certificate(cert, alice, "Alice", today)
    registry = {alice.key_id: alice.public_key, bob.key_id: bob.public_key}
    entries = (TrustEstablished(1, 2, today),)
    header = BlockHeader(1, bytes(32), len(entries))
    nonce = entries_nonce(entries)
    view = LedgerView(kind=TRUST)
    return {
        "VerifyCertificate": _median_ms(lambda: verify_certificate(cert, registry, today, scheme), reps),
        "SignCertificate": _median_ms(lambda: sign_certificate(cert, carol, "Carol", today), reps),
        "addNonce": _median_ms(lambda: entries_nonce(entries), reps),
        "hashData": _median_ms(lambda: hash_block(header, nonce), reps),
        "addToDL": _median_ms(lambda: view.append_block(list(entries), 1, [1]), reps),
    }


@dataclass
class MetricsReport:
    """Run metrics; CT fields stay empty for market runs so their output is reproducible."""

    ct_components: dict[str, float] | None = None
    ct_total: float | None = None
    cc_bits: int = field(default_factory=consensus_message_bits)
    join_series: list[dict[str, float]] = field(default_factory=list)
    trust_delay_series: list[dict[str, float]] = field(default_factory=list)
    price_series: list[dict[str, Any]] = field(default_factory=list)
    utility_fallback_count: int = 0
    seed: int | None = None

    @classmethod
    def from_components(cls, components: Mapping[str, float], **kw: Any) -> MetricsReport:
        ct = compute_ct(components)
        return cls(ct_components=ct["ct_components"], ct_total=ct["ct_total"], **kw)

    def add_market(self, result: SimResult) -> None:
        self.price_series = [
            {"cycle": s.cycle, "mean_price": s.mean_price, "volume": s.volume} for s in result.price_series
        ]
        self.utility_fallback_count = result.utility_fallback_count
        self.seed = result.config.seed

    @staticmethod
    def series(rows: Sequence[BenchmarkRow]) -> list[dict[str, float]]:
        return [{"N": r.n, "retina_ms": r.retina_ms, "wot_ms": r.wot_ms} for r in rows]

    def to_json(self) -> str:
        body = {
            "tool": f"trustgrid {__version__}",
            "seed": self.seed,
            "ct_components": self.ct_components,
            "ct_total": self.ct_total,
            "cc_bits": self.cc_bits,
            "join_series": self.join_series,
            "trust_delay_series": self.trust_delay_series,
            "price_series": self.price_series,
            "utility_fallback_count": self.utility_fallback_count,
        }
        return json.dumps(body, indent=2, sort_keys=True) + "\n"
