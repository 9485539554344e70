import itertools
import math
import random

import pytest

from oracles import max_welfare_matching, stackelberg_grid
from lacnet.market import (
    AWARDED,
    FAILED,
    FIRST_PRICE,
    VICKREY,
    AuctionInstance,
    AuctionNotClosed,
    BidMessage,
    DegenerateDemand,
    DemandProfile,
    ProviderOffer,
    clear_double_auction,
    close_reverse_auction,
    follower_best_response,
    leader_optimal_price,
    split_orders,
    stackelberg_equilibrium,
)


def _auction(rule=FIRST_PRICE, reserve=0.5, units=100):
    return AuctionInstance("T1", 0.0, 3.0, units, reserve, rule)


def _case_bids(a):
    a.add_bid(BidMessage("pk:drone", "T1", 30, 0.4, 0.5))
    a.add_bid(BidMessage("pk:evtol", "T1", 100, 0.3, 0.6))
    return a


def test_case_study_first_price():
    a = close_reverse_auction(_case_bids(_auction()), 3.0)
    assert (a.state, a.winner, a.price_per_unit) == (AWARDED, "pk:evtol", 0.3)
    assert a.price_per_unit * a.units == pytest.approx(30.0)


def test_case_study_vickrey_falls_back_to_reserve():
    a = close_reverse_auction(_case_bids(_auction(VICKREY)), 3.0)
    assert (a.winner, a.price_per_unit) == ("pk:evtol", 0.5)


def test_no_bids_fails():
    assert close_reverse_auction(_auction(), 3.0).state == FAILED


def test_close_before_deadline_raises():
    with pytest.raises(AuctionNotClosed):
        close_reverse_auction(_auction(), 1.0)


def test_late_bid_rejected():
    a = _auction()
    assert not a.add_bid(BidMessage("pk:x", "T1", 100, 0.2, 3.0))


def test_ties_break_by_time_then_key():
    a = _auction()
    a.add_bid(BidMessage("pk:b", "T1", 100, 0.3, 1.0))
    a.add_bid(BidMessage("pk:a", "T1", 100, 0.3, 1.0))
    a.add_bid(BidMessage("pk:0", "T1", 100, 0.3, 1.5))
    assert close_reverse_auction(a, 3.0).winner == "pk:a"


def test_losing_bid_that_undercuts_wins():
    rng = random.Random(11)
    for _ in range(200):
        asks = [round(rng.uniform(0.05, 0.5), 3) for _ in range(4)]
        a = _auction()
        for i, ask in enumerate(asks):
            a.add_bid(BidMessage(f"pk:{i}", "T1", 100, ask, 1.0))
        win = close_reverse_auction(a, 3.0)
        loser = next((i for i, ask in enumerate(asks) if f"pk:{i}" != win.winner), None)
        b = _auction()
        for i, ask in enumerate(asks):
            b.add_bid(BidMessage(f"pk:{i}", "T1", 100, win.price_per_unit - 0.01 if i == loser else ask, 1.0))
        assert close_reverse_auction(b, 3.0).winner == f"pk:{loser}"


def test_award_price_individually_rational():
    rng = random.Random(5)
    for rule in (FIRST_PRICE, VICKREY):
        for _ in range(300):
            a = _auction(rule)
            for i in range(rng.randint(1, 5)):
                a.add_bid(BidMessage(f"pk:{i}", "T1", rng.choice([50, 100]), round(rng.uniform(0, 0.7), 2), 1.0))
            close_reverse_auction(a, 3.0)
            if a.state == AWARDED:
                ask = next(b.ask_per_unit for b in a.bids if b.bidder == a.winner)
                assert ask <= a.price_per_unit <= a.reserve_per_unit


def vickrey_profitable_deviations(grid):
    """Count (profile, bidder, deviation) triples where lying pays."""

    def utility(asks, costs, who):
        a = AuctionInstance("T", 0.0, 1.0, 1, 1.0, VICKREY)
        for i, ask in enumerate(asks):
            a.add_bid(BidMessage(f"pk:{i}", "T", 1, ask, 0.0))
        close_reverse_auction(a, 1.0)
        return a.price_per_unit - costs[who] if a.winner == f"pk:{who}" else 0.0

    bad = 0
    for costs in itertools.product(grid, repeat=3):
        for who in range(3):
            honest = utility(costs, costs, who)
            for lie in grid:
                asks = list(costs)
                asks[who] = lie
                if utility(asks, costs, who) > honest + 1e-12:
                    bad += 1
    return bad


GRID = [round(0.1 * i, 1) for i in range(1, 11)]


def test_vickrey_truthful_on_small_grid():
    assert vickrey_profitable_deviations(GRID[::3]) == 0


def test_first_price_is_not_truthful():
    # sanity check that the enumerator can find deviations at all
    a = AuctionInstance("T", 0.0, 1.0, 1, 1.0, FIRST_PRICE)
    a.add_bid(BidMessage("pk:0", "T", 1, 0.2, 0.0))
    a.add_bid(BidMessage("pk:1", "T", 1, 0.5, 0.0))
    close_reverse_auction(a, 1.0)
    b = AuctionInstance("T", 0.0, 1.0, 1, 1.0, FIRST_PRICE)
    b.add_bid(BidMessage("pk:0", "T", 1, 0.4, 0.0))
    b.add_bid(BidMessage("pk:1", "T", 1, 0.5, 0.0))
    close_reverse_auction(b, 1.0)
    assert b.price_per_unit - 0.2 > a.price_per_unit - 0.2


def test_mcafee_examples():
    c = clear_double_auction([("b1", 5), ("b2", 4), ("b3", 2)], [("s1", 1), ("s2", 3), ("s3", 6)])
    assert len(c.trades) == 2 and c.price == 4
    assert clear_double_auction([("b", 5)], [("s", 6)]).trades == []
    c = clear_double_auction([("b1", 5), ("b2", 4)], [("s1", 1), ("s2", 3)])
    assert len(c.trades) == 1
    assert (c.trades[0].buyer_pays, c.trades[0].seller_receives) == (4, 3)


def mcafee_mismatches(n_instances, seed=0):
    rng = random.Random(seed)
    bad = 0
    for _ in range(n_instances):
        bids = [(f"b{i}", rng.randint(1, 20)) for i in range(rng.randint(1, 6))]
        asks = [(f"s{i}", rng.randint(1, 20)) for i in range(rng.randint(1, 6))]
        c = clear_double_auction(bids, asks)
        _, k = max_welfare_matching([p for _, p in bids], [p for _, p in asks])
        ok = c.efficient_count == k and len(c.trades) in (k, k - 1) if k else not c.trades
        for t in c.trades:
            bid = dict(bids)[t.buyer]
            ask = dict(asks)[t.seller]
            ok = ok and t.buyer_pays <= bid and t.seller_receives >= ask
        ok = ok and c.surplus >= 0
        bad += not ok
    return bad


def test_mcafee_against_brute_force():
    assert mcafee_mismatches(200, seed=1) == 0


def test_split_orders():
    assert split_orders([("a", 3.0, 2), ("b", 1.0, 1)]) == [("a", 3.0), ("a", 3.0), ("b", 1.0)]


def test_stackelberg_toy_instance():
    p, x, profit = stackelberg_equilibrium(DemandProfile("u", 4.0), 1.0)
    gp, gx = stackelberg_grid(4.0, 1.0)
    assert (p, x) == pytest.approx((2.0, 1.0), abs=1e-9)
    assert abs(p - gp) < 1e-6 and abs(x - gx) < 1e-6
    assert profit == pytest.approx(1.0)


def test_stackelberg_matches_grid_on_random_instances():
    rng = random.Random(2)
    for _ in range(5):
        a, c = rng.uniform(1, 9), rng.uniform(0.1, 0.9)
        p, x, _ = stackelberg_equilibrium(DemandProfile("u", a), c)
        gp, gx = stackelberg_grid(a, c)
        assert p == pytest.approx(gp, abs=1e-5) and x == pytest.approx(gx, abs=1e-5)


def test_follower_buys_nothing_when_too_expensive():
    assert follower_best_response(ProviderOffer("p", 5.0), DemandProfile("u", 4.0)) == 0.0


def test_capacity_binds_price():
    p = leader_optimal_price(DemandProfile("u", 4.0), 0.1, capacity_units=1.0)
    assert p == pytest.approx(2.0)
    assert follower_best_response(ProviderOffer("p", p, 1.0), DemandProfile("u", 4.0)) == pytest.approx(1.0)


def test_degenerate_demand():
    with pytest.raises(DegenerateDemand):
        leader_optimal_price(DemandProfile("u", 0.0), 1.0)
