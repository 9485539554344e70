"""On-chain reverse-auction market: escrow, sealed bids, award, proof, settlement.

Every contract step is a transaction on the permissionless chain and the
next step waits for its confirmation. Registry changes (bans) go to the
permissioned chain, whose head is anchored periodically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..chain import (
    PERMISSIONED,
    PERMISSIONLESS,
    NothingToAnchor,
    escrow_account,
    post_anchor,
    to_micro,
)
from ..engine import EventKind
from ..market import AWARDED, AuctionInstance, BidMessage, close_reverse_auction
from ..world import EVTOL
from .base import Allocator

UTIL_WINDOW_S = 60.0


class InsufficientEscrow(RuntimeError):
    pass


@dataclass
class Contract:
    """Per-task escrow state as the contract sees it."""

    rec: object
    escrow: int = 0  # micro-COMP locked for the requester
    stake: int = 0  # micro-COMP locked for the winner
    round: int = 0
    auction: Optional[AuctionInstance] = None
    winner: Optional[object] = None  # AircraftNode
    payment: int = 0
    settled: bool = False
    award_tx: str = ""
    txs: list = field(default_factory=list)


def recent_utilization(node, now: float, window: float = UTIL_WINDOW_S) -> float:
    """Fraction of the trailing window the node spent computing."""
    lo = now - window
    busy = 0.0
    for start, end in node.compute_log:
        busy += max(0.0, min(end, now) - max(start, lo))
    return min(1.0, busy / window)


def ask_per_unit(node, now: float, base_uav: float, base_evtol: float) -> float:
    base = base_evtol if node.kind == EVTOL else base_uav
    return base * (1.0 + recent_utilization(node, now))


def default_bid(node, auction: AuctionInstance, now: float, market) -> Optional[BidMessage]:
    """Full-coverage bid at the utilization-scaled base cost, or None above reserve."""
    ask = round(ask_per_unit(node, now, market.base_cost_uav, market.base_cost_evtol), 6)
    if ask > auction.reserve_per_unit:
        return None
    return BidMessage(node.pubkey, auction.task_id, auction.units, ask, now)


class RwaAllocator(Allocator):
    name = "rwa"

    def __init__(self, world):
        super().__init__(world)
        self.contracts: dict[int, Contract] = {}
        self.anchors = []
        self.auctions_failed = 0
        self.retries = 0
        self.burns = 0
        self.bans = 0
        self.background_sent = 0
        # (node, auction, now, market cfg) -> BidMessage | None
        self.bid_policy = default_bid

    # -- plumbing --------------------------------------------------------

    @property
    def pl(self):
        return self.world.permissionless

    def _submit(self, ctr: Optional[Contract], submitter: str, kind: str, on_confirm=None, **payload):
        tx = self.pl.new_tx(submitter, self.sim.clock, kind, **payload)
        self.world.chains[PERMISSIONLESS].submit(tx, on_confirm)
        if ctr is not None:
            ctr.txs.append(tx.id)
        return tx

    def start(self) -> None:
        self.world.setup_chains()
        bg = self.cfg.chain.background_tps
        if bg > 0:
            self.pl.genesis({"pk:background": to_micro(1000.0)})
            self._schedule_background(0.0)
        self.sim.schedule(self.cfg.chain.anchor_interval_s, EventKind.ANCHOR_TICK, None, self._anchor_tick)

    def _schedule_background(self, now: float) -> None:
        t = now + self.world.rng_background.expovariate(self.cfg.chain.background_tps)
        if t <= self.cfg.horizon_s:
            self.sim.schedule(t, EventKind.TIMER, None, self._background)

    def _background(self, event) -> None:
        # unrelated token traffic that keeps blocks filling
        self._submit(None, "pk:background", "TokenTransfer", src="pk:background", dst="pk:background", amount=1)
        self.background_sent += 1
        self._schedule_background(event.fire_at)

    def _anchor_tick(self, event) -> None:
        try:
            rec = post_anchor(self.world.permissioned, self.pl, event.fire_at)
        except NothingToAnchor:
            pass
        else:
            self.anchors.append(rec)
            self.world.chains[PERMISSIONLESS].poke()
        nxt = event.fire_at + self.cfg.chain.anchor_interval_s
        if nxt <= self.cfg.horizon_s:
            self.sim.schedule(nxt, EventKind.ANCHOR_TICK, None, self._anchor_tick)

    # -- contract flow ---------------------------------------------------

    def on_task_arrival(self, rec) -> None:
        task = rec.task
        ctr = Contract(rec)
        self.contracts[task.id] = ctr
        self._post(ctr, to_micro(task.max_payment))

    def _post(self, ctr: Contract, amount: int) -> None:
        task = ctr.rec.task
        if self.pl.available(task.origin) < amount:
            raise InsufficientEscrow(f"{task.origin} cannot escrow {amount} for task {task.id}")
        ctr.escrow += amount
        self._submit(ctr, task.origin, "PostTask", self._open_auction,
                     task_id=task.id, escrow=amount, round=ctr.round, units=task.units)

    def _open_auction(self, tx, t: float) -> None:
        ctr = self.contracts[tx.payload["task_id"]]
        rec = ctr.rec
        if rec.done or t >= rec.task.due:
            return
        if ctr.round == 0:
            rec.delays["post_confirm"] = t - rec.task.arrival_time
        factor = self.cfg.market.retry_reserve_factor ** ctr.round
        window = self.cfg.market.bid_window_s
        ctr.auction = AuctionInstance(rec.task.id, t, t + window, rec.task.units,
                                      rec.task.reserve_per_unit * factor, self.cfg.market.auction_rule)
        self._collect_bids(ctr, t)
        self.sim.schedule(t + window, EventKind.AUCTION_CLOSE, ctr, self._close)

    def _eligible(self, node, now: float) -> bool:
        return (self.world.permissioned.is_registered(node.pubkey)
                and node.registered
                and not node.delivering(now)
                and node.open_award is None
                and self.pl.available(node.pubkey) >= to_micro(self.cfg.market.stake))

    def _collect_bids(self, ctr: Contract, now: float) -> None:
        auction = ctr.auction
        m = self.cfg.market
        at = now + self.world.link.base_latency
        for node in self.world.nodes:
            if not self._eligible(node, now):
                continue
            bid = self.bid_policy(node, auction, now, m)
            if bid is None:
                continue
            bid.submitted_at = at
            if auction.add_bid(bid):
                self.sim.schedule(at, EventKind.MESSAGE_DELIVERY, (ctr, bid), self._send_bid)

    def _send_bid(self, event) -> None:
        ctr, bid = event.payload
        self._submit(ctr, bid.bidder, "SubmitBid", task_id=bid.task_id, units=bid.units_offered,
                     ask_per_unit=bid.ask_per_unit, round=ctr.round)

    def _close(self, event) -> None:
        ctr = event.payload
        rec = ctr.rec
        now = event.fire_at
        if rec.done:
            return
        stake = to_micro(self.cfg.market.stake)
        by_key = {n.pubkey: n for n in self.world.nodes}
        # bidders that meanwhile won elsewhere or lost their key withdraw
        ctr.auction.bids = [b for b in ctr.auction.bids
                            if by_key[b.bidder].open_award is None
                            and self.world.permissioned.is_registered(b.bidder)
                            and self.pl.available(b.bidder) >= stake]
        auction = close_reverse_auction(ctr.auction, now)
        if auction.state != AWARDED:
            self.auctions_failed += 1
            if ctr.round == 0:
                self.retries += 1
                ctr.round = 1
                extra = to_micro(rec.task.max_payment * (self.cfg.market.retry_reserve_factor - 1.0))
                self._post(ctr, extra)
            else:
                self._refund(ctr, "auction_failed")
                self.world.fail(rec, now, "no_bids")
            return
        winner = by_key[auction.winner]
        winner.open_award = rec.task.id
        ctr.winner = winner
        ctr.stake = stake
        ctr.payment = to_micro(auction.price_per_unit * auction.units)
        rec.delays["auction"] = now - auction.open_at
        ctr.award_tx = self._submit(ctr, "pk:contract", "AwardTask", self._award_confirmed,
                     task_id=rec.task.id, winner=winner.pubkey, stake=stake,
                     price_per_unit=auction.price_per_unit, units=auction.units).id

    def _award_confirmed(self, tx, t: float) -> None:
        ctr = self.contracts[tx.payload["task_id"]]
        rec = ctr.rec
        if rec.done or ctr.settled:
            return
        rec.delays["allocation"] = t - rec.task.arrival_time
        self.world.dispatch(rec, ctr.winner, t)

    def on_result(self, rec, t: float) -> None:
        ctr = self.contracts[rec.task.id]
        node = ctr.winner
        if node is not None and node.open_award == rec.task.id:
            node.open_award = None
        if ctr.settled:
            return
        self._submit(ctr, node.pubkey, "ProofOfCompletion", task_id=rec.task.id, delivered_at=t)
        self._settle(ctr)

    def _settle(self, ctr: Contract) -> None:
        task = ctr.rec.task
        acct = escrow_account(task.id)
        node = ctr.winner
        ctr.settled = True
        if self.cfg.chain.mint_on_proof:
            self._submit(ctr, "pk:contract", "Mint", to=node.pubkey, amount=ctr.payment, task_id=task.id)
            refund = ctr.escrow
        else:
            self._submit(ctr, "pk:contract", "TokenTransfer", src=acct, dst=node.pubkey,
                         amount=ctr.payment, task_id=task.id, memo="payment")
            refund = ctr.escrow - ctr.payment
        if refund:
            self._submit(ctr, "pk:contract", "TokenTransfer", src=acct, dst=task.origin,
                         amount=refund, task_id=task.id, memo="refund")
        self._submit(ctr, "pk:contract", "TokenTransfer", src=acct, dst=node.pubkey,
                     amount=ctr.stake, task_id=task.id, memo="stake_return")

    def _refund(self, ctr: Contract, memo: str) -> None:
        task = ctr.rec.task
        ctr.settled = True
        if ctr.escrow:
            self._submit(ctr, "pk:contract", "TokenTransfer", src=escrow_account(task.id),
                         dst=task.origin, amount=ctr.escrow, task_id=task.id, memo=memo)

    def on_deadline(self, rec, t: float) -> None:
        ctr = self.contracts[rec.task.id]
        if ctr.settled:
            return
        node = ctr.winner
        if node is None:
            # escrow may still be unconfirmed; refund only what the chain holds
            if self.pl.confirmed(ctr.txs[0]):
                ctr.escrow = self.pl.balances.get(escrow_account(rec.task.id), 0)
                self._refund(ctr, "expired")
            else:
                ctr.settled = True
            return
        if not self.pl.confirmed(ctr.award_tx):
            # award still in flight: the stake is not locked yet
            ctr.settled = True
            node.open_award = None
            return
        self._refund(ctr, "refund_on_penalty")
        self._submit(ctr, "pk:contract", "Penalty", account=escrow_account(rec.task.id),
                     amount=ctr.stake, node=node.pubkey, task_id=rec.task.id)
        self.burns += 1
        node.burns += 1
        if node.open_award == rec.task.id:
            node.open_award = None
        if node.burns >= self.world.adv.ban_after and self.world.permissioned.is_registered(node.pubkey):
            led = self.world.permissioned
            ban = led.new_tx("pk:contract", t, "Penalty", node=node.pubkey, revoke=True, burns=node.burns)
            self.world.chains[PERMISSIONED].submit(ban)
            self.bans += 1

    def diagnostics(self) -> dict:
        return {
            "auctions_failed": self.auctions_failed,
            "auction_retries": self.retries,
            "stake_burns": self.burns,
            "bans": self.bans,
            "anchors": len(self.anchors),
            "background_txs": self.background_sent,
        }
