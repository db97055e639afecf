"""Join and trust-establishment benchmarks against the flooding WoT baseline.

Wall-clock numbers are medians (joins) or means (trust lookups) on the
current machine. The exchange and work counts are the machine-independent
part and are what the tests compare.
"""

from __future__ import annotations

import copy
import csv
import io
import random
import statistics
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

from .. import __version__
from ..errors import NetworkTooSmall, NoTrustPath
from ..trustnet import TrustNetwork, build_ring_network, make_record
from .wot import WoTBaseline

MAX_SIZE = 10_000


@dataclass(frozen=True)
class BenchmarkRow:
    n: int
    retina_ms: float
    wot_ms: float
    retina_exchanges: float
    wot_exchanges: float


def check_sizes(sizes: Iterable[int]) -> list[int]:
    sizes = list(sizes)
    if not sizes:
        raise ValueError("at least one network size is required")
    for n in sizes:
        if n < 2:
            raise NetworkTooSmall(f"network size {n} is below 2")
        if n > MAX_SIZE:
            raise ValueError(f"network size {n} exceeds {MAX_SIZE}")
    return sizes


def _ms(seconds: float) -> float:
    return seconds * 1000.0


def run_join_benchmark(
    sizes: Sequence[int], *, reps: int = 5, seed: int = 42, scheme: str = "ed25519"
) -> list[BenchmarkRow]:
    """Time one fresh join into a network of N-1 nodes, for each N.

    RETINA uses a ring of size N holding N-1 nodes; the newcomer takes the
    last free position. Every repetition joins into a deep copy of the same
    base network so the repetitions are independent.
    """
    rows = []
    for n in check_sizes(sizes):
        base = build_ring_network(1, n - 1, ring_size=n, scheme=scheme, key_seed=seed)
        introducer = base.authorities()[0]
        wot_base = WoTBaseline(scheme)
        wot_base.populate(n - 1, key_seed=seed)
        newcomer_seed = seed * 1_000_003 + n
        retina_t, wot_t = [], []
        retina_x = wot_x = 0
        for _ in range(max(1, reps)):
            net = copy.deepcopy(base)
            cand = make_record(n, 0, seed=newcomer_seed, scheme=scheme)
            t0 = time.perf_counter()
            result = net.join_node(cand, introducer, n - 1)
            retina_t.append(time.perf_counter() - t0)
            retina_x = len(result.exchanges)

            wot = copy.deepcopy(wot_base)
            node = wot.make_node(n, newcomer_seed)
            t0 = time.perf_counter()
            wot_x = wot.join(node)
            wot_t.append(time.perf_counter() - t0)
        rows.append(
            BenchmarkRow(n, _ms(statistics.median(retina_t)), _ms(statistics.median(wot_t)), retina_x, wot_x)
        )
    return rows


def _unconnected_pairs(net: TrustNetwork, rng: random.Random, count: int) -> list[tuple[int, int]]:
    ids = sorted(net.nodes)
    pairs: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    for _ in range(count * 50):
        if len(pairs) == count:
            break
        a, b = rng.sample(ids, 2)
        key = (min(a, b), max(a, b))
        if key in seen or net.has_edge(a, b):
            continue
        seen.add(key)
        pairs.append((a, b))
    return pairs


def run_trust_benchmark(
    sizes: Sequence[int],
    *,
    decentralized: bool = False,
    trials: int = 100,
    seed: int = 42,
    scheme: str = "ed25519",
) -> list[BenchmarkRow]:
    """Mean delay of ``establish_trust`` between random unconnected pairs.

    ``retina_exchanges`` reports the mean number of certificates expanded by
    the chain search; the WoT keyring lookup always reads exactly one.
    """
    rows = []
    for n in check_sizes(sizes):
        net = build_ring_network(1, n, scheme=scheme, key_seed=seed)
        wot = WoTBaseline(scheme)
        wot.populate(n, key_seed=seed)
        rng = random.Random(seed * 1_000_003 + n)
        pairs = _unconnected_pairs(net, rng, trials)
        if not pairs:
            rows.append(BenchmarkRow(n, 0.0, 0.0, 0.0, 0.0))
            continue
        retina_t, work = [], []
        for a, b in pairs:
            before = net.lookup_work
            t0 = time.perf_counter()
            net.establish_trust(a, b, decentralized=decentralized)
            retina_t.append(time.perf_counter() - t0)
            work.append(net.lookup_work - before)
        wot_t = []
        for a, b in pairs:
            t0 = time.perf_counter()
            wot.lookup(a, b)
            wot_t.append(time.perf_counter() - t0)
        rows.append(
            BenchmarkRow(n, _ms(statistics.fmean(retina_t)), _ms(statistics.fmean(wot_t)), statistics.fmean(work), 1)
        )
    return rows


def sparse_cycle_network(n: int = 50, *, chain_limit: int = 4, scheme: str = "ed25519") -> TrustNetwork:
    """Nodes 1..n on a plain cycle: each one trusts only its two ring neighbors."""
    net = TrustNetwork(n, chain_limit=chain_limit, scheme=scheme)
    for i in range(1, n + 1):
        net.add_node(make_record(i, 0, scheme=scheme), i - 1)
    for i in range(1, n + 1):
        net.exchange_signatures(i, i % n + 1)
    return net


@dataclass(frozen=True)
class ChainLimitPoint:
    chain_limit: int
    mean_ms: float
    mean_work: float
    found: float  # share of lookups that resolved


def chain_limit_sweep(
    limits: Sequence[int] = (1, 2, 3, 4), *, nodes: int = 50, trials: int = 100, seed: int = 42
) -> list[ChainLimitPoint]:
    """Lookup cost on a fixed sparse graph as the chain bound grows."""
    net = sparse_cycle_network(nodes)
    rng = random.Random(seed)
    pairs = _unconnected_pairs(net, rng, trials)
    out = []
    for limit in limits:
        net.chain_limit = limit
        net.lookup_work = 0
        hits = 0
        t0 = time.perf_counter()
        for a, b in pairs:
            try:
                net.certificate_lookup(a, b)
                hits += 1
            except NoTrustPath:
                pass
        elapsed = time.perf_counter() - t0
        out.append(
            ChainLimitPoint(limit, _ms(elapsed / len(pairs)), net.lookup_work / len(pairs), hits / len(pairs))
        )
    return out


def benchmark_csv(rows: Sequence[BenchmarkRow], seed: int) -> str:
    buf = io.StringIO()
    buf.write(f"# trustgrid {__version__} seed={seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["N", "retina_ms", "wot_ms", "retina_exchanges", "wot_exchanges"])
    for r in rows:
        w.writerow([r.n, f"{r.retina_ms:.6f}", f"{r.wot_ms:.6f}", f"{r.retina_exchanges:g}", f"{r.wot_exchanges:g}"])
    return buf.getvalue()
