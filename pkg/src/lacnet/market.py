"""Service-layer economics: leader/follower pricing and auction clearing.

Value of ``x`` purchased units to a buyer is ``a * ln(1 + x)``; a provider's
overhead for ``q`` units sold is ``c * q``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

FIRST_PRICE = "first_price"
VICKREY = "vickrey"

OPEN = "open"
AWARDED = "awarded"
FAILED = "failed"


class DegenerateDemand(ValueError):
    pass


class AuctionNotClosed(RuntimeError):
    pass


@dataclass
class ProviderOffer:
    provider: str
    unit_price: float
    capacity_units: float = math.inf
    overhead_coeff: float = 0.0

    def __post_init__(self):
        if self.unit_price < 0 or self.capacity_units < 0:
            raise ValueError("unit_price and capacity_units must be nonnegative")


@dataclass
class DemandProfile:
    buyer: str
    value_coeff: float
    purchases: dict[str, float] = field(default_factory=dict)

    def value(self) -> float:
        return self.value_coeff * math.log1p(sum(self.purchases.values()))


def follower_utility(a: float, price: float, x: float) -> float:
    return a * math.log1p(x) - price * x


def leader_profit(price: float, quantity: float, overhead_coeff: float) -> float:
    return price * quantity - overhead_coeff * quantity


def follower_best_response(offer: ProviderOffer, demand: DemandProfile) -> float:
    """Units that maximise ``a ln(1+x) - p x``, i.e. ``a/p - 1`` clamped."""
    if offer.unit_price <= 0:
        raise ValueError("unit_price must be positive")
    x = demand.value_coeff / offer.unit_price - 1.0
    return min(max(0.0, x), offer.capacity_units)


def leader_optimal_price(demand: DemandProfile, overhead_coeff: float,
                         capacity_units: float = math.inf) -> float:
    a, c = demand.value_coeff, overhead_coeff
    if a <= 0:
        raise DegenerateDemand(f"value coefficient {a} must be positive")
    p = math.sqrt(c * a)
    if math.isfinite(capacity_units):
        # past this price the follower would ask for more than the cap
        p = max(p, a / (1.0 + capacity_units))
    return max(p, c)


def stackelberg_equilibrium(demand: DemandProfile, overhead_coeff: float,
                            capacity_units: float = math.inf) -> tuple[float, float, float]:
    """Return ``(price, units, leader_profit)`` for one leader and one follower."""
    p = leader_optimal_price(demand, overhead_coeff, capacity_units)
    offer = ProviderOffer("leader", p, capacity_units, overhead_coeff)
    x = follower_best_response(offer, demand)
    return p, x, leader_profit(p, x, overhead_coeff)


@dataclass
class BidMessage:
    bidder: str
    task_id: object
    units_offered: float
    ask_per_unit: float
    submitted_at: float

    def __post_init__(self):
        if self.units_offered <= 0:
            raise ValueError("units_offered must be positive")
        if self.ask_per_unit < 0:
            raise ValueError("ask_per_unit must be nonnegative")


@dataclass
class AuctionInstance:
    task_id: object
    open_at: float
    close_at: float
    units: float
    reserve_per_unit: float
    rule: str = FIRST_PRICE
    bids: list[BidMessage] = field(default_factory=list)
    state: str = OPEN
    winner: Optional[str] = None
    price_per_unit: Optional[float] = None

    def accepts(self, bid: BidMessage) -> bool:
        return self.state == OPEN and self.open_at <= bid.submitted_at < self.close_at

    def add_bid(self, bid: BidMessage) -> bool:
        if not self.accepts(bid):
            return False
        self.bids.append(bid)
        return True


def _rank(bid: BidMessage):
    return (bid.ask_per_unit, bid.submitted_at, bid.bidder)


def close_reverse_auction(auction: AuctionInstance, now: float | None = None) -> AuctionInstance:
    """Pick the cheapest bid that covers the whole demand and price it.

    Bids above the reserve are ineligible. Partial-coverage bids never win.
    Ties go to the earlier submission, then the smaller pubkey. Under the
    Vickrey rule the winner is paid the runner-up's full-coverage ask, or the
    reserve when there is none.
    """
    if now is not None and now < auction.close_at:
        raise AuctionNotClosed(f"auction {auction.task_id} closes at {auction.close_at}")
    if auction.state != OPEN:
        raise AuctionNotClosed(f"auction {auction.task_id} already {auction.state}")
    full = sorted(
        (b for b in auction.bids
         if b.ask_per_unit <= auction.reserve_per_unit and b.units_offered >= auction.units),
        key=_rank,
    )
    if not full:
        auction.state = FAILED
        return auction
    winner = full[0]
    if auction.rule == VICKREY:
        price = full[1].ask_per_unit if len(full) > 1 else auction.reserve_per_unit
    else:
        price = winner.ask_per_unit
    auction.state = AWARDED
    auction.winner = winner.bidder
    auction.price_per_unit = price
    return auction


@dataclass
class Trade:
    buyer: object
    seller: object
    buyer_pays: float
    seller_receives: float


@dataclass
class Clearing:
    trades: list[Trade]
    price: Optional[float]
    efficient_count: int

    @property
    def surplus(self) -> float:
        return sum(t.buyer_pays - t.seller_receives for t in self.trades)


def split_orders(orders: list[tuple[object, float, int]]) -> list[tuple[object, float]]:
    """Expand ``(who, price, qty)`` multi-unit orders into unit orders."""
    out = []
    for who, price, qty in orders:
        out.extend([(who, price)] * int(qty))
    return out


def clear_double_auction(bids: list[tuple[object, float]], asks: list[tuple[object, float]]) -> Clearing:
    """McAfee's trade-reduction double auction over unit orders."""
    b = sorted(bids, key=lambda o: -o[1])
    a = sorted(asks, key=lambda o: o[1])
    k = 0
    while k < min(len(b), len(a)) and b[k][1] >= a[k][1]:
        k += 1
    if k == 0:
        return Clearing([], None, 0)
    if k < len(b) and k < len(a):
        p0 = (b[k][1] + a[k][1]) / 2.0
        if a[k - 1][1] <= p0 <= b[k - 1][1]:
            trades = [Trade(b[i][0], a[i][0], p0, p0) for i in range(k)]
            return Clearing(trades, p0, k)
    pay, receive = b[k - 1][1], a[k - 1][1]
    trades = [Trade(b[i][0], a[i][0], pay, receive) for i in range(k - 1)]
    return Clearing(trades, None, k)
