"""Market-cycle simulation, failure injection and the tampering adversary."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .. import __version__
from ..attestation import attestation_sweep
from ..errors import InsufficientEnergy, InsufficientFunds, NeighborhoodEmpty
from ..market import (
    SELL,
    Action,
    BrokerState,
    Market,
    Placed,
    PricingWeights,
    Trade,
    TradePrefs,
    Traded,
    Wallet,
    best_counterparty,
    broker_decide,
)
from ..trustnet import EMPOWERED, TrustNetwork, build_ring_network
from .config import SimConfig

log = logging.getLogger(__name__)

EPS = 1e-9
BUYER = "buyer"
SELLER = "seller"


@dataclass
class NodeProfile:
    node: int
    role: str
    green: bool
    prefs: TradePrefs
    production: float
    consumption: float
    low: float
    high: float
    history: list[float] = field(default_factory=list)
    tampered: bool = False


@dataclass(frozen=True)
class CycleStats:
    cycle: int
    mean_price: float | None
    volume: float
    buys: int
    sells: int
    trades: int


@dataclass(frozen=True)
class FailureReport:
    offline: tuple[int, ...]
    promotions: tuple[tuple[int, int], ...]  # (neighborhood, promoted node)
    empty_neighborhoods: tuple[int, ...]
    cancelled_orders: tuple[int, ...]


def inject_failure(net: TrustNetwork, targets: Iterable[int], market: Market | None = None) -> FailureReport:
    """Take ``targets`` offline and promote a replacement wherever no empowered node is left."""
    targets = sorted(set(targets))
    for t in targets:
        net.record(t)
    hoods = sorted({net.nodes[t].neighborhood for t in targets if net.nodes[t].role == EMPOWERED})
    cancelled: list[int] = []
    for t in targets:
        net.set_offline(t)
        if market is not None:
            cancelled.extend(o.order_id for o in market.cancel_orders(t, "offline"))
    promotions, empty = [], []
    for hood in hoods:
        if net.empowered_in(hood):
            continue
        try:
            promotions.append((hood, net.promote_node(hood)))
        except NeighborhoodEmpty:
            log.warning("neighborhood %s lost every node", hood)
            empty.append(hood)
    return FailureReport(tuple(targets), tuple(promotions), tuple(empty), tuple(cancelled))


@dataclass
class SimResult:
    config: SimConfig
    price_series: list[CycleStats]
    net: TrustNetwork
    market: Market
    profiles: dict[int, NodeProfile]
    utility_fallback_count: int = 0
    utility_import_kwh: float = 0.0
    produced_kwh: float = 0.0
    consumed_kwh: float = 0.0
    phantom_kwh: float = 0.0
    initial_energy: float = 0.0
    initial_balance: float = 0.0
    detections: dict[int, int] = field(default_factory=dict)
    failures: list[FailureReport] = field(default_factory=list)
    event_errors: list[str] = field(default_factory=list)

    @property
    def trades(self) -> list[Trade]:
        return self.market.trades

    def mean_price(self) -> float:
        """Volume-weighted mean clearing price over the whole run."""
        volume = math.fsum(t.kw for t in self.trades)
        if volume == 0:
            return math.nan
        return math.fsum(t.kw * t.unit_price for t in self.trades) / volume

    def _header(self) -> str:
        return f"# trustgrid {__version__} seed={self.config.seed}\n"

    def price_csv(self) -> str:
        buf = io.StringIO()
        buf.write(self._header())
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cycle", "mean_price", "volume", "buys", "sells"])
        for s in self.price_series:
            mp = "" if s.mean_price is None else f"{s.mean_price:.6f}"
            w.writerow([s.cycle, mp, f"{s.volume:.6f}", s.buys, s.sells])
        return buf.getvalue()

    def trade_csv(self) -> str:
        buf = io.StringIO()
        buf.write(self._header())
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(
            ["cycle", "buy_id", "sell_id", "kw", "unit_price", "buyer", "seller", "green", "cross_neighborhood"]
        )
        for t in self.trades:
            w.writerow(
                [
                    t.cycle,
                    t.buy_order_id,
                    t.sell_order_id,
                    f"{t.kw:.6f}",
                    f"{t.unit_price:.6f}",
                    t.buyer,
                    t.seller,
                    int(t.green),
                    int(t.cross_neighborhood),
                ]
            )
        return buf.getvalue()

    def ledger_digests(self) -> dict[str, str]:
        return {
            "trust": (self.net.trust_ledger.head_digest or b"").hex(),
            "trading": (self.market.ledger.head_digest or b"").hex(),
        }


def _draw(rng: random.Random, bounds: tuple[float, float]) -> float:
    return rng.uniform(*bounds)


def _profiles(cfg: SimConfig, net: TrustNetwork, rng: random.Random) -> dict[int, NodeProfile]:
    ids = sorted(net.nodes)
    shuffled = ids[:]
    rng.shuffle(shuffled)
    n_buyers = round(cfg.buyer_fraction * len(ids))
    buyers = set(shuffled[:n_buyers])
    out = {}
    for n in ids:
        role = BUYER if n in buyers else SELLER
        if role == BUYER:
            production = _draw(rng, cfg.buyer_production)
            consumption = production + _draw(rng, cfg.buyer_deficit)
        else:
            production = _draw(rng, cfg.seller_production)
            consumption = max(0.0, production - _draw(rng, cfg.seller_surplus))
        out[n] = NodeProfile(
            node=n,
            role=role,
            green=rng.random() < cfg.green_share,
            prefs=TradePrefs(
                min_sell_price=_draw(rng, cfg.min_sell_price),
                max_buy_price=_draw(rng, cfg.max_buy_price),
                green_only=rng.random() < cfg.green_only_share,
            ),
            production=production,
            consumption=consumption,
            low=_draw(rng, cfg.low_threshold),
            high=_draw(rng, cfg.high_threshold),
        )
    return out


def worst_price(weights: PricingWeights, starting_price: float) -> float:
    return starting_price * (1 + max(weights.a, weights.a_nongreen)) * (1 + max(weights.b, weights.b_min))


def build_market(cfg: SimConfig) -> tuple[TrustNetwork, Market, dict[int, NodeProfile], random.Random]:
    net = build_ring_network(
        cfg.neighborhoods,
        cfg.nodes_per_neighborhood,
        empowered_per_neighborhood=cfg.empowered_per_neighborhood,
        chain_limit=cfg.chain_limit,
        scheme=cfg.scheme,
        key_seed=cfg.seed,
    )
    weights = PricingWeights(a=cfg.a, b=cfg.b, a_nongreen=cfg.a_nongreen, b_min=cfg.b_min)
    market = Market(net, weights, cfg.starting_price)
    rng = random.Random(cfg.seed)
    profiles = _profiles(cfg, net, rng)
    for n, p in profiles.items():
        reserves = _draw(rng, cfg.buyer_reserves if p.role == BUYER else cfg.seller_reserves)
        market.wallets[n] = Wallet(energy_kwh=reserves, balance=_draw(rng, cfg.initial_balance))
    return net, market, profiles, rng


Event = Callable[[TrustNetwork, Market, "SimResult"], None]


def _take_turn(cfg: SimConfig, market: Market, prof: NodeProfile, prod: float, cons: float) -> str | None:
    node = prof.node
    market.cancel_orders(node, "refresh")
    wallet = market.wallets[node]
    state = BrokerState(
        reserves=wallet.energy_kwh,
        high_threshold=prof.high,
        low_threshold=prof.low,
        production_rate=prod,
        consumption_rate=cons,
        demand_history=prof.history,
    )
    action = broker_decide(state, window=cfg.forecast_window)
    if action.side is None:
        return None
    worst = worst_price(market.weights, market.starting_price)
    remaining = action.kw
    for _ in range(cfg.max_matches_per_turn):
        if action.side == SELL:
            remaining = min(remaining, wallet.energy_kwh)
        else:
            remaining = min(remaining, wallet.balance / worst)
        if remaining <= EPS:
            break
        try:
            outcome = market.match_and_execute(Action(action.kind, remaining), node, prof.prefs, prof.green)
        except (InsufficientEnergy, InsufficientFunds) as exc:
            # a stale resting order can no longer be honoured by its owner
            log.debug("dropping stale counterparty order: %s", exc)
            stale = _stale_counterparty(market, node, action, prof)
            if stale is None:
                break
            market.cancel_orders(stale, "unfunded")
            continue
        if isinstance(outcome, Placed):
            break
        assert isinstance(outcome, Traded)
        remaining -= outcome.trade.kw
    return action.side


def _stale_counterparty(market: Market, node: int, action: Action, prof: NodeProfile) -> int | None:
    found = best_counterparty(
        market.book.open(), action.side, node, market.net.nodes[node].neighborhood,
        market.weights, prof.green, prof.prefs,
    )
    return None if found is None else found[0].originator


def run_market_sim(
    cfg: SimConfig,
    tampered: Sequence[int] = (),
    events: Mapping[int, Event] | None = None,
) -> SimResult:
    """Run ``cfg.market_cycles`` market cycles; same config gives identical output."""
    net, market, profiles, rng = build_market(cfg)
    for t in tampered:
        profiles[t].tampered = True
        net.nodes[t].software = net.nodes[t].software.tampered()
    result = SimResult(
        config=cfg,
        price_series=[],
        net=net,
        market=market,
        profiles=profiles,
        initial_energy=market.total_energy(),
        initial_balance=market.total_balance(),
    )
    ids = sorted(profiles)
    for cycle in range(1, cfg.market_cycles + 1):
        market.cycle = cycle
        if events and cycle in events:
            events[cycle](net, market, result)
        rates: dict[int, tuple[float, float]] = {}
        for n in ids:
            p = profiles[n]
            prod = p.production * rng.uniform(1 - cfg.rate_jitter, 1 + cfg.rate_jitter)
            cons = p.consumption * rng.uniform(1 - cfg.rate_jitter, 1 + cfg.rate_jitter)
            rates[n] = (prod, cons)
            credited = prod
            if p.tampered and not net.is_revoked(n):
                credited = prod * cfg.tamper_multiplier
                result.phantom_kwh += credited - prod
            w = market.wallets[n]
            w.energy_kwh += credited - cons
            result.produced_kwh += prod
            result.consumed_kwh += cons
            if w.energy_kwh < 0:
                result.utility_fallback_count += 1
                result.utility_import_kwh += -w.energy_kwh
                w.energy_kwh = 0.0
        order = ids[:]
        rng.shuffle(order)
        buys = sells = 0
        first_trade = len(market.trades)
        for n in order:
            if not market.is_trusted(n):
                continue
            side = _take_turn(cfg, market, profiles[n], *rates[n])
            if side == SELL:
                sells += 1
            elif side is not None:
                buys += 1
        for n in ids:
            prod, cons = rates[n]
            profiles[n].history.append(cons - prod)
        cycle_trades = market.trades[first_trade:]
        volume = math.fsum(t.kw for t in cycle_trades)
        mean = math.fsum(t.kw * t.unit_price for t in cycle_trades) / volume if volume > 0 else None
        result.price_series.append(CycleStats(cycle, mean, volume, buys, sells, len(cycle_trades)))
        if cfg.attestation_period:
            for verdict in attestation_sweep(net, cfg.attestation_period, cycle):
                if not verdict.passed:
                    result.detections[verdict.attestee] = cycle
                    market.cancel_orders(verdict.attestee, "revoked")
    return result


@dataclass(frozen=True)
class AdversaryReport:
    clean: SimResult
    adversary: SimResult
    detections: dict[int, int]
    trades_after_revocation: int

    def series_identical(self) -> bool:
        return self.clean.price_csv() == self.adversary.price_csv()


def run_adversary_scenario(cfg: SimConfig, tampered: Sequence[int], period: int = 1) -> AdversaryReport:
    """Run the same market clean and with ``tampered`` nodes under attestation sweeps."""
    clean = run_market_sim(cfg)
    adv = run_market_sim(dataclasses.replace(cfg, attestation_period=period), tampered=tampered)
    late = sum(
        1
        for t in adv.trades
        for n in (t.buyer, t.seller)
        if n in adv.detections and t.cycle > adv.detections[n]
    )
    return AdversaryReport(clean, adv, dict(adv.detections), late)
