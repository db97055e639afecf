from __future__ import annotations

import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from trustgrid.errors import InsufficientEnergy, InsufficientFunds, InvalidOrder, NonpositivePrice, UntrustedNode
from trustgrid.ledger import TRADING, LedgerView, TradeSettled
from trustgrid.market import (
    BUY,
    SELL,
    Action,
    BrokerState,
    Market,
    Order,
    Placed,
    PricingWeights,
    Trade,
    TradePrefs,
    Traded,
    Wallet,
    best_counterparty,
    broker_decide,
    effective_price,
    price,
    settle,
)
from trustgrid.trustnet import TrustNetwork, build_ring_network, make_record

W = PricingWeights(a=0.2, b=0.5, a_nongreen=0.5, b_min=0.2)


# -- pricing -------------------------------------------------------------------


@pytest.mark.parametrize("p, a, b, expected", [(1.0, 0.2, 0.5, 1.70), (1.0, 0.2, 0.2, 1.40), (3.5, 0, 0, 3.5)])
def test_additive_price(p, a, b, expected):
    assert abs(price(p, a, b) - expected) < 1e-9


def test_price_rejects_nonpositive_start():
    with pytest.raises(NonpositivePrice):
        price(0.0, 0.2, 0.5)


def _order(oid=1, side=SELL, kw=5.0, green=True, hood=0, sp=1.0, originator=9):
    return Order(oid, side, kw, green, hood, sp, originator)


def test_effective_price_cross_and_same_neighborhood():
    o = _order(green=True, hood=0)
    assert abs(effective_price(o, 1, W) - 1.80) < 1e-12
    assert abs(effective_price(o, 0, W) - 1.44) < 1e-12


def test_effective_price_all_weights_zero():
    zero = PricingWeights(a=0.2, b=0.2, a_nongreen=0.0, b_min=0.0)
    assert effective_price(_order(green=False, sp=1.3), 0, zero) == 1.3


@given(sp=st.floats(0.01, 100), a=st.sampled_from([0.2, 0.35, 0.5]), b=st.sampled_from([0.2, 0.5]))
def test_composed_price_agrees_with_additive_form_on_single_weights(sp, a, b):
    # with one of the two premiums switched off the composed and additive forms coincide
    w = PricingWeights(a=a, b=b, a_nongreen=a, b_min=0.0)
    assert math.isclose(effective_price(_order(sp=sp, hood=0), 0, w), price(sp, a, 0), rel_tol=1e-9)
    w = PricingWeights(a=a, b=b, a_nongreen=0.0, b_min=0.0)
    assert math.isclose(effective_price(_order(sp=sp, green=False, hood=0), 1, w), price(sp, 0, b), rel_tol=1e-9)


def test_weights_outside_bounds_rejected():
    with pytest.raises(ValueError):
        PricingWeights(a=0.6)


# -- broker --------------------------------------------------------------------


def _state(reserves, prod, cons, low=20.0, high=80.0, history=()):
    return BrokerState(reserves, high, low, prod, cons, list(history))


def test_broker_sells_surplus():
    assert broker_decide(_state(100, 10, 5)) == Action("SELL", 25)


def test_broker_buys_deficit():
    assert broker_decide(_state(10, 2, 8)) == Action("BUY", 16)


@pytest.mark.parametrize("reserves", [75.0, 15.0])
def test_broker_holds_on_threshold(reserves):
    assert broker_decide(_state(reserves, 10, 5)).kind == "HOLD"


def test_broker_forecast_uses_recent_net_demand():
    # mean of the last three entries (4, 6, 8) = 6 is subtracted
    action = broker_decide(_state(100, 10, 5, history=[100, 4, 6, 8]))
    assert action == Action("SELL", 19)


def test_manual_override_wins():
    assert broker_decide(_state(100, 10, 5), manual_override=Action.hold()).kind == "HOLD"


# -- order-book selection --------------------------------------------------------


def test_seller_takes_highest_bid():
    prices = {1: 1.4, 2: 1.7, 3: 1.6}
    # starting prices chosen so that effective prices are exactly these
    bids = [_order(oid, BUY, green=False, hood=0, sp=p / 1.8) for oid, p in prices.items()]
    order, p = best_counterparty(bids, SELL, 5, 0, W, True, TradePrefs())
    assert order.order_id == 2 and abs(p - 1.7) < 1e-9


def test_buyer_tie_goes_to_lower_order_id():
    asks = [_order(9, SELL), _order(4, SELL)]
    order, _ = best_counterparty(asks, BUY, 5, 0, W, False, TradePrefs())
    assert order.order_id == 4


def test_green_only_buyer_skips_nongreen_asks():
    asks = [_order(1, SELL, green=False, sp=0.5), _order(2, SELL, green=True)]
    order, _ = best_counterparty(asks, BUY, 5, 0, W, False, TradePrefs(green_only=True))
    assert order.order_id == 2


def test_own_orders_are_ignored():
    assert best_counterparty([_order(1, SELL, originator=5)], BUY, 5, 0, W, False, TradePrefs()) is None


def test_order_invariants():
    with pytest.raises(InvalidOrder):
        _order(kw=0.0)
    with pytest.raises(InvalidOrder):
        _order(side="hold")


# -- settlement ------------------------------------------------------------------


def _trade(kw=5.0, unit=1.4):
    return Trade(1, 2, kw, unit, 1, buyer=1, seller=2)


def test_settle_moves_energy_and_money():
    buyer, seller = Wallet(30.0, 100.0), Wallet(100.0, 100.0)
    ledger = LedgerView(kind=TRADING)
    entry = settle(_trade(), buyer, seller, ledger, 1, {1})
    assert (buyer.energy_kwh, buyer.balance) == (35.0, 93.0)
    assert (seller.energy_kwh, seller.balance) == (95.0, 107.0)
    assert isinstance(entry, TradeSettled) and len(ledger) == 1


def test_settle_underfunded_buyer_changes_nothing():
    buyer, seller = Wallet(30.0, 6.9), Wallet(100.0, 100.0)
    ledger = LedgerView(kind=TRADING)
    with pytest.raises(InsufficientFunds):
        settle(_trade(), buyer, seller, ledger, 1, {1})
    assert (buyer, seller, len(ledger)) == (Wallet(30.0, 6.9), Wallet(100.0, 100.0), 0)


def test_settle_short_seller_changes_nothing():
    buyer, seller = Wallet(30.0, 100.0), Wallet(4.0, 100.0)
    with pytest.raises(InsufficientEnergy):
        settle(_trade(), buyer, seller, LedgerView(kind=TRADING), 1, {1})
    assert seller.energy_kwh == 4.0 and buyer.balance == 100.0


# -- market contract -------------------------------------------------------------


@pytest.fixture
def market():
    net = build_ring_network(2, 3, scheme="digest")
    m = Market(net, W, 1.0)
    for n in net.nodes:
        m.wallets[n] = Wallet(50.0, 500.0)
    return m


def test_buyer_on_empty_book_places_order(market):
    out = market.match_and_execute(Action("BUY", 5.0), 2, TradePrefs(), False)
    assert isinstance(out, Placed) and out.order.side == BUY
    assert market.book.get(out.order.order_id).kw == 5.0


def test_orders_are_signed_and_logged(market):
    out = market.match_and_execute(Action("SELL", 5.0), 2, TradePrefs(), True)
    kp = market.net.nodes[2].keypair
    assert out.order.signer_key_id == kp.key_id and out.order.signature
    assert market.ledger.blocks[-1].entries[0].order_id == out.order.order_id


def test_cross_neighborhood_trade_and_partial_fill(market):
    market.match_and_execute(Action("SELL", 10.0), 2, TradePrefs(), True)  # neighborhood 0
    out = market.match_and_execute(Action("BUY", 4.0), 5, TradePrefs(), False)  # neighborhood 1
    assert isinstance(out, Traded)
    t = out.trade
    assert t.cross_neighborhood and t.green and abs(t.unit_price - 1.8) < 1e-9 and t.kw == 4.0
    assert market.book.open(SELL)[0].kw == 6.0
    assert market.wallets[5].balance == pytest.approx(500.0 - 7.2)


def test_price_limits_turn_a_match_into_a_resting_order(market):
    market.match_and_execute(Action("SELL", 10.0), 2, TradePrefs(), True)
    out = market.match_and_execute(Action("BUY", 4.0), 5, TradePrefs(max_buy_price=1.5), False)
    assert isinstance(out, Placed)


def test_untrusted_node_cannot_trade():
    net = TrustNetwork(4, scheme="digest")
    net.add_empowered(make_record(1, scheme="digest"))
    net.add_node(make_record(2, scheme="digest"))
    m = Market(net)
    m.wallets[2] = Wallet(10.0, 10.0)
    with pytest.raises(UntrustedNode):
        m.match_and_execute(Action("BUY", 1.0), 2)


def test_revoked_node_loses_market_access(market):
    market.net.revoke_certificate(3)
    with pytest.raises(UntrustedNode):
        market.match_and_execute(Action("BUY", 1.0), 3)


def test_sell_beyond_wallet_rejected(market):
    with pytest.raises(InsufficientEnergy):
        market.match_and_execute(Action("SELL", 80.0), 2, TradePrefs(), True)


def test_cancel_orders_logs_cancellation(market):
    market.match_and_execute(Action("SELL", 3.0), 2, TradePrefs(), True)
    gone = market.cancel_orders(2, "refresh")
    assert len(gone) == 1 and len(market.book) == 0
    assert market.ledger.blocks[-1].entries[0].kind == "OrderCancelled"


def test_failed_settlement_leaves_book_and_wallets_alone(market):
    market.match_and_execute(Action("SELL", 10.0), 2, TradePrefs(), True)
    market.wallets[5].balance = 1.0
    before = (len(market.ledger), market.total_balance(), market.total_energy(), market.book.open()[0].kw)
    with pytest.raises(InsufficientFunds):
        market.match_and_execute(Action("BUY", 4.0), 5, TradePrefs(), False)
    after = (len(market.ledger), market.total_balance(), market.total_energy(), market.book.open()[0].kw)
    assert before == after and market.trades == []


# -- brute-force oracle ------------------------------------------------------------


def oracle_pick(orders, side, node, hood, w, green, prefs):
    """Independent scan: filter, price from first principles, sort, take the first."""
    ranked = []
    for o in orders:
        if o.originator == node:
            continue
        if side == SELL and (o.side != BUY or (o.green and not green)):
            continue
        if side == BUY and (o.side != SELL or (prefs.green_only and not o.green)):
            continue
        green_mult = 1 + (w.a if o.green else w.a_nongreen)
        place_mult = 1 + (w.b_min if o.neighborhood == hood else w.b)
        p = round(o.starting_price * place_mult * green_mult, 9)
        ranked.append(((-p if side == SELL else p), o.order_id))
    return min(ranked)[1] if ranked else None


def random_book(rng, max_orders=50):
    ids = rng.sample(range(1, 10_000), rng.randint(0, max_orders))
    return [
        Order(
            oid,
            rng.choice([BUY, SELL]),
            rng.choice([1.0, 2.5, 4.0]),
            rng.random() < 0.5,
            rng.randint(0, 2),
            rng.choice([1.0, 1.0, 1.1]),
            rng.randint(1, 12),
        )
        for oid in ids
    ]


@pytest.mark.parametrize("seed", range(200))
def test_selection_matches_oracle(seed):
    rng = random.Random(seed)
    book = random_book(rng)
    side = rng.choice([BUY, SELL])
    node, hood, green = rng.randint(1, 12), rng.randint(0, 2), rng.random() < 0.5
    prefs = TradePrefs(green_only=rng.random() < 0.3)
    found = best_counterparty(book, side, node, hood, W, green, prefs)
    assert (found[0].order_id if found else None) == oracle_pick(book, side, node, hood, W, green, prefs)
