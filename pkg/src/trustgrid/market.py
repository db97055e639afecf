"""Energy trading contract: pricing, broker policy, order matching and settlement.

Pricing composes the green-energy weight into the base price and then
applies the location-proximity weight::

    base  = starting_price * (1 + (a if green else a_nongreen))
    price = base * (1 + (b_min if same neighborhood else b))

With a single weight in play this agrees with the additive form
``p + a*p + b*p``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from statistics import fmean
from typing import TYPE_CHECKING, Iterable, Sequence, Union

from .errors import (
    InsufficientEnergy,
    InsufficientFunds,
    InvalidOrder,
    NonpositivePrice,
    UntrustedNode,
)
from .identity import get_scheme, sign_bytes
from .ledger import TRADING, LedgerView, OrderCancelled, OrderPlaced, TradeSettled, encode_value

if TYPE_CHECKING:
    from .trustnet import TrustNetwork

BUY = "buy"
SELL = "sell"
PRICE_DECIMALS = 9


def price(starting_price: float, a: float, b: float) -> float:
    """Additive price: starting price plus green and proximity premiums."""
    if starting_price <= 0:
        raise NonpositivePrice(f"starting price must be positive, got {starting_price}")
    return starting_price + a * starting_price + b * starting_price


@dataclass(frozen=True)
class PricingWeights:
    a: float = 0.2
    b: float = 0.5
    a_nongreen: float = 0.5
    b_min: float = 0.2
    bounds: tuple[float, float] = (0.2, 0.5)

    def __post_init__(self) -> None:
        lo, hi = self.bounds
        for name in ("a", "b"):
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ValueError(f"weight {name}={v} outside [{lo}, {hi}]")
        if self.a_nongreen < 0 or self.b_min < 0:
            raise ValueError("a_nongreen and b_min must be non-negative")


@dataclass
class Wallet:
    energy_kwh: float = 0.0
    balance: float = 0.0
    allow_credit: bool = False

    def __post_init__(self) -> None:
        if self.energy_kwh < 0:
            raise ValueError("wallet energy cannot be negative")


@dataclass(frozen=True)
class Order:
    order_id: int
    side: str
    kw: float
    green: bool
    neighborhood: int
    starting_price: float
    originator: int
    signer_key_id: str = ""
    signature: bytes = field(default=b"", compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.side not in (BUY, SELL):
            raise InvalidOrder(f"side must be buy or sell, got {self.side!r}")
        if not self.kw > 0:
            raise InvalidOrder(f"order kw must be positive, got {self.kw}")
        if self.starting_price <= 0:
            raise NonpositivePrice("starting price must be positive")

    def payload(self) -> bytes:
        """Canonical bytes the originator signs."""
        return b"".join(
            encode_value(v)
            for v in (
                self.order_id,
                self.side,
                float(self.kw),
                self.green,
                self.neighborhood,
                float(self.starting_price),
                self.originator,
            )
        )

    def to_entry(self) -> OrderPlaced:
        return OrderPlaced(
            self.order_id,
            self.side,
            float(self.kw),
            self.green,
            self.neighborhood,
            float(self.starting_price),
            self.originator,
            self.signer_key_id,
            self.signature.hex(),
        )


def effective_price(order: Order, counterparty_neighborhood: int, weights: PricingWeights) -> float:
    """Unit price of ``order`` as seen from ``counterparty_neighborhood``.

    Rounded to PRICE_DECIMALS so that prices equal in exact arithmetic
    (say 1.2 * 1.5 and 1.5 * 1.2) compare equal and fall to the id tie-break.
    """
    base = order.starting_price * (1 + (weights.a if order.green else weights.a_nongreen))
    same = order.neighborhood == counterparty_neighborhood
    return round(base * (1 + (weights.b_min if same else weights.b)), PRICE_DECIMALS)


@dataclass(frozen=True)
class Trade:
    buy_order_id: int
    sell_order_id: int
    kw: float
    unit_price: float
    cycle: int
    buyer: int
    seller: int
    green: bool = False
    cross_neighborhood: bool = False

    @property
    def cost(self) -> float:
        return self.kw * self.unit_price


# -- broker ------------------------------------------------------------------


@dataclass(frozen=True)
class Action:
    kind: str  # "SELL" | "BUY" | "HOLD"
    kw: float = 0.0

    @classmethod
    def hold(cls) -> Action:
        return cls("HOLD")

    @property
    def side(self) -> str | None:
        return {"SELL": SELL, "BUY": BUY}.get(self.kind)


@dataclass
class BrokerState:
    reserves: float
    high_threshold: float
    low_threshold: float
    production_rate: float
    consumption_rate: float
    demand_history: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.low_threshold < self.high_threshold:
            raise ValueError("low threshold must be below high threshold")


def forecast(demand_history: Sequence[float], window: int = 3) -> float:
    """Trailing mean of recent net demand; 0 with no history."""
    recent = list(demand_history)[-window:]
    return fmean(recent) if recent else 0.0


def broker_decide(state: BrokerState, manual_override: Action | None = None, window: int = 3) -> Action:
    if manual_override is not None:
        return manual_override
    projected = (
        state.reserves
        + state.production_rate
        - state.consumption_rate
        - forecast(state.demand_history, window)
    )
    if projected > state.high_threshold:
        return Action("SELL", projected - state.high_threshold)
    if projected < state.low_threshold:
        return Action("BUY", state.low_threshold - projected)
    return Action.hold()


# -- order book ----------------------------------------------------------------


class OrderBook:
    def __init__(self) -> None:
        self._orders: dict[int, Order] = {}

    def __len__(self) -> int:
        return len(self._orders)

    def __contains__(self, order_id: int) -> bool:
        return order_id in self._orders

    def add(self, order: Order) -> None:
        self._orders[order.order_id] = order

    def get(self, order_id: int) -> Order:
        return self._orders[order_id]

    def remove(self, order_id: int) -> Order:
        return self._orders.pop(order_id)

    def reduce(self, order_id: int, kw: float) -> None:
        """Fill ``kw`` of a resting order; drop it once exhausted."""
        o = self._orders[order_id]
        left = o.kw - kw
        if left <= 1e-12:
            del self._orders[order_id]
        else:
            self._orders[order_id] = replace(o, kw=left)

    def open(self, side: str | None = None) -> list[Order]:
        return [o for o in self._orders.values() if side is None or o.side == side]

    def by_originator(self, node: int) -> list[Order]:
        return [o for o in self._orders.values() if o.originator == node]

    def snapshot(self) -> list[Order]:
        return sorted(self._orders.values(), key=lambda o: o.order_id)


@dataclass(frozen=True)
class TradePrefs:
    min_sell_price: float = 0.0
    max_buy_price: float = math.inf
    green_only: bool = False


def eligible(order: Order, side: str, node: int, green: bool, prefs: TradePrefs) -> bool:
    """Whether an active node on ``side`` may consider a resting ``order``."""
    if order.originator == node:
        return False
    if side == SELL:
        # a buyer that asked for green energy only accepts green sellers
        return order.side == BUY and (green or not order.green)
    return order.side == SELL and (order.green or not prefs.green_only)


def best_counterparty(
    orders: Iterable[Order],
    side: str,
    node: int,
    neighborhood: int,
    weights: PricingWeights,
    green: bool,
    prefs: TradePrefs,
) -> tuple[Order, float] | None:
    """Highest bid for a seller, lowest ask for a buyer; ties go to the lower order id."""
    best: tuple[Order, float] | None = None
    for o in orders:
        if not eligible(o, side, node, green, prefs):
            continue
        p = effective_price(o, neighborhood, weights)
        if best is None:
            best = (o, p)
            continue
        bp = best[1]
        better = p > bp if side == SELL else p < bp
        if better or (p == bp and o.order_id < best[0].order_id):
            best = (o, p)
    return best


@dataclass(frozen=True)
class Traded:
    trade: Trade


@dataclass(frozen=True)
class Placed:
    order: Order


Outcome = Union[Traded, Placed]


def settle(
    trade: Trade,
    buyer_wallet: Wallet,
    seller_wallet: Wallet,
    trading_ledger: LedgerView,
    validator: int,
    authorities: Iterable[int],
) -> TradeSettled:
    """Move energy and currency and log the trade; all or nothing."""
    if seller_wallet.energy_kwh < trade.kw:
        raise InsufficientEnergy(
            f"seller holds {seller_wallet.energy_kwh:.6g} kWh, trade needs {trade.kw:.6g}"
        )
    cost = trade.cost
    if not buyer_wallet.allow_credit and buyer_wallet.balance < cost:
        raise InsufficientFunds(f"buyer balance {buyer_wallet.balance:.6g} < cost {cost:.6g}")
    entry = TradeSettled(
        trade.cycle,
        trade.buy_order_id,
        trade.sell_order_id,
        float(trade.kw),
        float(trade.unit_price),
        trade.buyer,
        trade.seller,
        buyer_wallet.energy_kwh + trade.kw,
        buyer_wallet.balance - cost,
        seller_wallet.energy_kwh - trade.kw,
        seller_wallet.balance + cost,
    )
    trading_ledger.append_block([entry], validator, set(authorities))
    buyer_wallet.energy_kwh += trade.kw
    buyer_wallet.balance -= cost
    seller_wallet.energy_kwh -= trade.kw
    seller_wallet.balance += cost
    return entry


class Market:
    """The trading smart contract bound to a trust network."""

    def __init__(
        self,
        net: TrustNetwork,
        weights: PricingWeights | None = None,
        starting_price: float = 1.0,
    ) -> None:
        if starting_price <= 0:
            raise NonpositivePrice("starting price must be positive")
        self.net = net
        self.weights = weights or PricingWeights()
        self.starting_price = starting_price
        self.book = OrderBook()
        self.wallets: dict[int, Wallet] = {}
        self.ledger = LedgerView(kind=TRADING)
        self.trades: list[Trade] = []
        self.cycle = 0
        self._next_id = 1
        self._trust_cache: dict[int, bool] = {}
        self._trust_cache_key = -1

    def next_order_id(self) -> int:
        oid = self._next_id
        self._next_id += 1
        return oid

    def is_trusted(self, node: int) -> bool:
        """Trust check cached until the trust ledger changes."""
        key = len(self.net.trust_ledger)
        if key != self._trust_cache_key:
            self._trust_cache.clear()
            self._trust_cache_key = key
        if node not in self._trust_cache:
            self._trust_cache[node] = self.net.is_trusted(node)
        rec = self.net.nodes.get(node)
        return self._trust_cache[node] and rec is not None and rec.online

    def _require_trusted(self, node: int) -> None:
        if not self.is_trusted(node):
            raise UntrustedNode(f"node {node} has no valid endorsed certificate")

    def _validator(self, node: int) -> int:
        return self.net._validator(self.net.nodes[node].neighborhood)

    def _sign(self, order: Order) -> Order:
        kp = self.net.nodes[order.originator].keypair
        signed = replace(order, signer_key_id=kp.key_id, signature=sign_bytes(kp, order.payload()))
        if not get_scheme(kp.scheme).verify(kp.public_key, signed.payload(), signed.signature):
            raise InvalidOrder("order signature does not verify")
        return signed

    def place_order(self, node: int, side: str, kw: float, green: bool, order_id: int | None = None) -> Order:
        self._require_trusted(node)
        if side == SELL and self.wallets[node].energy_kwh < kw:
            raise InsufficientEnergy(f"node {node} cannot cover a {kw:.6g} kW sell order")
        order = Order(
            order_id if order_id is not None else self.next_order_id(),
            side,
            float(kw),
            green,
            self.net.nodes[node].neighborhood,
            self.starting_price,
            node,
        )
        order = self._sign(order)
        self.ledger.append_block([order.to_entry()], self._validator(node), self.net.authorities())
        self.book.add(order)
        return order

    def cancel_orders(self, node: int, reason: str) -> list[Order]:
        gone = sorted(self.book.by_originator(node), key=lambda o: o.order_id)
        if not gone:
            return []
        for o in gone:
            self.book.remove(o.order_id)
        entries = [OrderCancelled(o.order_id, node, reason) for o in gone]
        auth = self.net.authorities()
        if auth:
            self.ledger.append_block(entries, self.net._validator(self.net.nodes[node].neighborhood), auth)
        return gone

    def match_and_execute(
        self, intent: Action, node: int, prefs: TradePrefs | None = None, green: bool = False
    ) -> Outcome:
        """Trade against the best resting order, or rest a new order.

        ``green`` is the production method of the node's own energy when
        selling. A seller only trades with the best bid if it meets
        ``prefs.min_sell_price``; a buyer only with the best ask at or
        below ``prefs.max_buy_price``.
        """
        prefs = prefs or TradePrefs()
        side = intent.side
        if side is None:
            raise ValueError("HOLD intents do not reach the market")
        self._require_trusted(node)
        if side == SELL and self.wallets[node].energy_kwh < intent.kw:
            raise InsufficientEnergy(f"node {node} cannot sell {intent.kw:.6g} kW")
        hood = self.net.nodes[node].neighborhood
        found = best_counterparty(self.book.open(), side, node, hood, self.weights, green, prefs)
        if found is not None:
            order, p = found
            acceptable = p >= prefs.min_sell_price if side == SELL else p <= prefs.max_buy_price
            if acceptable:
                return Traded(self._execute(order, p, intent.kw, node, side, green))
        own_green = green if side == SELL else prefs.green_only
        return Placed(self.place_order(node, side, intent.kw, own_green))

    def _execute(self, order: Order, unit_price: float, kw: float, node: int, side: str, green: bool) -> Trade:
        kw = min(kw, order.kw)
        own_id = self.next_order_id()
        if side == SELL:
            buyer, seller, buy_id, sell_id, energy_green = order.originator, node, order.order_id, own_id, green
        else:
            buyer, seller, buy_id, sell_id, energy_green = node, order.originator, own_id, order.order_id, order.green
        trade = Trade(
            buy_order_id=buy_id,
            sell_order_id=sell_id,
            kw=kw,
            unit_price=unit_price,
            cycle=self.cycle,
            buyer=buyer,
            seller=seller,
            green=energy_green,
            cross_neighborhood=self.net.nodes[buyer].neighborhood != self.net.nodes[seller].neighborhood,
        )
        self.settle(trade)
        self.book.reduce(order.order_id, kw)
        return trade

    def settle(self, trade: Trade) -> TradeSettled:
        entry = settle(
            trade,
            self.wallets[trade.buyer],
            self.wallets[trade.seller],
            self.ledger,
            self._validator(trade.buyer),
            self.net.authorities(),
        )
        self.trades.append(trade)
        return entry

    def total_balance(self) -> float:
        return math.fsum(w.balance for w in self.wallets.values())

    def total_energy(self) -> float:
        return math.fsum(w.energy_kwh for w in self.wallets.values())

    def dump_book_jsonl(self) -> str:
        return "".join(
            json.dumps(o.to_entry().to_json(), sort_keys=True) + "\n" for o in self.book.snapshot()
        )
