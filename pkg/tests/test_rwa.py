import pytest

from lacnet.chain import PERMISSIONED, escrow_account, to_micro
from lacnet.config import ScenarioConfig
from lacnet.engine import EventKind
from lacnet.market import BidMessage
from lacnet.schemes.rwa import InsufficientEscrow, RwaAllocator
from lacnet.simulation import COMPLETED, FAILED, World
from lacnet.world import EVTOL

# the case study: a requester wants 100 frames processed, a drone can do 30
# of them at 0.4 and an idle eVTOL all 100 at 0.3


def case_bids(node, auction, now, market):
    if node.kind == EVTOL:
        return BidMessage(node.pubkey, auction.task_id, 100, 0.3, now)
    return BidMessage(node.pubkey, auction.task_id, 30, 0.4, now)


def golden_world(policy=case_bids, **overrides):
    cfg = ScenarioConfig(
        scheme="rwa", n_nodes=2, uav_fraction=0.5, horizon_s=300, warmup_s=0,
    ).with_overrides(**{"chain.background_tps": 0.0, "mobility.uav_busy_s": 0.0,
                        "mobility.evtol_busy_s": 0.0, **overrides})
    w = World(cfg)
    w.allocator = RwaAllocator(w)
    w.allocator.bid_policy = policy
    w.allocator.start()
    return w


def inject(w, t=5.0, task_id=0):
    task = w.make_task(task_id, t, w.requesters[0])
    w.sim.schedule(t, EventKind.TASK_ARRIVAL, task, w._on_arrival)
    return task


def task_txs(ledger, task_id):
    return [tx for _, tx in ledger.iter_txs() if tx.payload.get("task_id") == task_id]


def test_golden_case_study():
    w = golden_world()
    task = inject(w)
    start = {k: v for k, v in w.permissionless.balances.items()}
    w.sim.run_until(300)
    rec = w.records[0]
    assert rec.status == COMPLETED
    evtol = next(n for n in w.nodes if n.kind == EVTOL)
    assert rec.executor == evtol.id
    txs = task_txs(w.permissionless, 0)
    kinds = [tx.kind for tx in txs]
    assert kinds[:6] == ["PostTask", "SubmitBid", "SubmitBid", "AwardTask", "ProofOfCompletion", "TokenTransfer"]
    award = txs[3].payload
    assert (award["winner"], award["price_per_unit"]) == (evtol.pubkey, 0.3)
    assert txs[5].payload == {"src": escrow_account(0), "dst": evtol.pubkey, "amount": to_micro(30),
                              "task_id": 0, "memo": "payment"}
    bal = w.permissionless.balances
    assert bal[evtol.pubkey] - start[evtol.pubkey] == to_micro(30)
    assert start[task.origin] - bal[task.origin] == to_micro(30)
    assert bal[escrow_account(0)] == 0
    assert w.permissionless.conservation_violations == 0


def test_vickrey_pays_reserve_with_single_full_bid():
    w = golden_world(**{"market.auction_rule": "vickrey"})
    inject(w)
    w.sim.run_until(300)
    award = next(tx for tx in task_txs(w.permissionless, 0) if tx.kind == "AwardTask")
    assert award.payload["price_per_unit"] == 0.5


def test_abandonment_refunds_and_burns_stake():
    w = golden_world(**{"adversary.malicious_fraction": 1.0})
    task = inject(w)
    start = dict(w.permissionless.balances)
    supply = w.permissionless.total_supply()
    w.sim.run_until(300)
    rec = w.records[0]
    assert rec.status == FAILED and rec.fail_reason == "abandoned"
    winner = w.nodes[rec.executor]
    bal = w.permissionless.balances
    assert bal[task.origin] == start[task.origin]
    assert start[winner.pubkey] - bal[winner.pubkey] == to_micro(10)
    assert w.permissionless.total_supply() == supply - to_micro(10)
    assert not any(tx.kind == "TokenTransfer" and tx.payload.get("memo") == "payment"
                   for tx in task_txs(w.permissionless, 0))


def test_repeat_offender_is_banned():
    w = golden_world(**{"adversary.malicious_fraction": 1.0, "tasks.deadline_s": 20.0})
    for i in range(4):
        inject(w, t=5.0 + 25 * i, task_id=i)
    w.sim.run_until(300)
    evtol = next(n for n in w.nodes if n.kind == EVTOL)
    assert evtol.burns == 3
    assert not w.permissioned.is_registered(evtol.pubkey)
    assert any(tx.kind == "Penalty" and tx.payload.get("revoke") for _, tx in w.permissioned.iter_txs())
    # the fourth task goes to the other node
    assert w.records[3].executor != evtol.id


def test_no_bids_retries_with_higher_reserve_then_fails():
    w = golden_world(policy=lambda node, auction, now, m: None)
    task = inject(w)
    start = w.permissionless.balances[task.origin]
    w.sim.run_until(300)
    rec = w.records[0]
    assert rec.status == FAILED and rec.fail_reason == "no_bids"
    posts = [tx for tx in task_txs(w.permissionless, 0) if tx.kind == "PostTask"]
    assert [p.payload["round"] for p in posts] == [0, 1]
    assert w.permissionless.balances[task.origin] == start
    assert w.allocator.retries == 1


def test_retry_reserve_admits_pricier_bid():
    def pricey(node, auction, now, m):
        if auction.reserve_per_unit >= 0.7:
            return BidMessage(node.pubkey, auction.task_id, 100, 0.7, now)
        return None

    w = golden_world(policy=pricey)
    inject(w)
    w.sim.run_until(300)
    assert w.records[0].status == COMPLETED
    award = next(tx for tx in task_txs(w.permissionless, 0) if tx.kind == "AwardTask")
    assert award.payload["price_per_unit"] == 0.7


def test_insufficient_escrow():
    w = golden_world(**{"chain.requester_endowment": 10.0})
    inject(w)
    with pytest.raises(InsufficientEscrow):
        w.sim.run_until(300)


def test_escrow_identity_per_task():
    from lacnet.simulation import run_scenario

    cfg = ScenarioConfig(scheme="rwa", arrival_rate_per_min=60, horizon_s=300, warmup_s=30).with_overrides(
        **{"adversary.malicious_fraction": 0.3})
    res = run_scenario(cfg, keep_world=True)
    led = res.world.permissionless
    assert led.conservation_violations == 0
    checked = 0
    for task_id, ctr in res.world.allocator.contracts.items():
        if not ctr.settled or not all(led.confirmed(t) for t in ctr.txs):
            continue  # still in flight at the horizon
        txs = task_txs(led, task_id)
        escrowed = sum(tx.payload["escrow"] for tx in txs if tx.kind == "PostTask")
        paid = sum(tx.payload["amount"] for tx in txs if tx.payload.get("memo") == "payment")
        refunded = sum(tx.payload["amount"] for tx in txs
                       if tx.kind == "TokenTransfer" and tx.payload["dst"] == ctr.rec.task.origin)
        proof = any(tx.kind == "ProofOfCompletion" for tx in txs)
        assert paid + refunded == escrowed
        assert (paid > 0) == proof
        assert led.balances.get(escrow_account(task_id), 0) == 0
        checked += 1
    assert checked > 100
