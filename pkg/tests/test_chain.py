import random

import pytest

from conftest import drive, rolling_max
from lacnet.chain import (
    GENESIS_DIGEST,
    PERMISSIONED,
    PERMISSIONLESS,
    AnchorRecord,
    Consistent,
    InsufficientBalance,
    Ledger,
    Mismatch,
    NothingToAnchor,
    UnauthorizedKey,
    UnknownTx,
    anchors_on,
    load_dump,
    post_anchor,
    reconcile,
    to_micro,
)
from lacnet.engine import EventKind


def test_unregistered_bid_rejected(chains):
    _, tok = chains
    tx = tok.new_tx("pk:mallory", 1.0, "SubmitBid", task_id=1, ask_per_unit=0.3, units=100)
    with pytest.raises(UnauthorizedKey):
        tok.submit_tx(tx, 1.0)


def test_register_only_on_permissioned(chains):
    _, tok = chains
    with pytest.raises(UnauthorizedKey):
        tok.submit_tx(tok.new_tx("pk:x", 0.0, "RegisterNode", pubkey="pk:x"), 0.0)


def test_overdraw_counts_pending_debits(chains):
    _, tok = chains
    tok.submit_tx(tok.new_tx("pk:bob", 0.0, "TokenTransfer", src="pk:bob", dst="pk:alice",
                             amount=to_micro(4)), 0.0)
    with pytest.raises(InsufficientBalance):
        tok.submit_tx(tok.new_tx("pk:bob", 0.0, "TokenTransfer", src="pk:bob", dst="pk:alice",
                                 amount=to_micro(2)), 0.0)


def test_escrow_lock_and_release(chains):
    _, tok = chains
    tok.submit_tx(tok.new_tx("pk:alice", 0.0, "PostTask", task_id=7, escrow=to_micro(50)), 0.0)
    tok.seal_blocks(2.0)
    assert tok.balances["escrow:7"] == to_micro(50)
    assert tok.balances["pk:alice"] == to_micro(50)
    tok.submit_tx(tok.new_tx("pk:contract", 3.0, "TokenTransfer", src="escrow:7", dst="pk:bob",
                             amount=to_micro(30)), 3.0)
    tok.submit_tx(tok.new_tx("pk:contract", 3.0, "TokenTransfer", src="escrow:7", dst="pk:alice",
                             amount=to_micro(20)), 3.0)
    tok.seal_blocks(5.0)
    assert tok.balances["escrow:7"] == 0
    assert tok.balances["pk:bob"] == to_micro(35)
    assert tok.conservation_violations == 0


def test_penalty_burn_reduces_supply_and_keeps_identity(chains):
    _, tok = chains
    before = tok.total_supply()
    tok.submit_tx(tok.new_tx("pk:contract", 0.0, "Penalty", account="pk:bob", amount=to_micro(5),
                             node="pk:bob"), 0.0)
    tok.seal_blocks(2.0)
    assert tok.total_supply() == before - to_micro(5)
    assert tok.conservation_violations == 0


def test_revoke_penalty_bans_on_permissioned(chains):
    reg, tok = chains
    reg.submit_tx(reg.new_tx("pk:contract", 3.0, "Penalty", node="pk:bob", revoke=True), 3.0)
    reg.seal_blocks(5.0)
    assert not tok.is_registered("pk:bob")


def test_single_tx_waits_for_timeout():
    led = Ledger(PERMISSIONLESS)
    led.registry.add("pk:a")
    led.genesis({"pk:a": 10})
    sim, drv = drive(led)
    tx = led.new_tx("pk:a", 0.0, "TokenTransfer", src="pk:a", dst="pk:a", amount=1)
    drv.submit(tx)
    sim.run_until(10)
    assert led.confirmation_latency(tx.id) == pytest.approx(2.1)
    with pytest.raises(UnknownTx):
        led.confirmation_latency("L9999999")


def test_full_block_seals_immediately():
    led = Ledger(PERMISSIONLESS)
    led.registry.add("pk:a")
    led.genesis({"pk:a": 100})
    for _ in range(10):
        led.submit_tx(led.new_tx("pk:a", 0.5, "TokenTransfer", src="pk:a", dst="pk:a", amount=1), 0.5)
    blocks = led.seal_blocks(0.5)
    assert len(blocks) == 1 and len(blocks[0].txs) == 10


def test_burst_respects_block_rules_and_rate_cap():
    led = Ledger(PERMISSIONLESS)
    led.registry.add("pk:a")
    led.genesis({"pk:a": 10_000})
    sim, drv = drive(led)
    ids = []

    def burst(ev):
        for _ in range(5000):
            ids.append(drv.submit(led.new_tx("pk:a", ev.fire_at, "TokenTransfer", src="pk:a",
                                             dst="pk:a", amount=1)).id)

    sim.schedule(0.3, EventKind.TIMER, None, burst)
    sim.run_until(60)
    assert all(led.confirmed(i) for i in ids)
    for b in led.blocks:
        assert 1 <= len(b.txs) <= 10
        if len(b.txs) < 10:
            assert b.sealed_at >= min(t.submit_time for t in b.txs) + 2.0 - 1e-9
    assert rolling_max(led.blocks) <= 1000
    assert led.blocks[-1].sealed_at >= 4.3  # 5000 txs need at least five windows


def test_anchor_requires_new_blocks(chains):
    reg, tok = chains
    rec = post_anchor(reg, tok, 3.0)
    assert rec.anchored_height == reg.height
    with pytest.raises(NothingToAnchor):
        post_anchor(reg, tok, 4.0)
    reg.submit_tx(reg.new_tx("pk:z", 5.0, "RegisterNode", pubkey="pk:z"), 5.0)
    reg.seal_blocks(7.0)
    rec2 = post_anchor(reg, tok, 8.0)
    assert rec2.anchored_height > rec.anchored_height


def test_reconcile_clean_and_empty(chains):
    reg, tok = chains
    assert reconcile(reg, []) is Consistent
    post_anchor(reg, tok, 3.0)
    tok.seal_blocks(10.0)
    assert reconcile(reg, anchors_on(tok)) is Consistent


def _registry_chain(n_blocks=6, per_block=4):
    reg = Ledger(PERMISSIONED)
    t = 0.0
    for b in range(n_blocks):
        for i in range(per_block):
            key = f"pk:{b}-{i}"
            reg.submit_tx(reg.new_tx(key, t, "RegisterNode", pubkey=key), t)
        t += 2.0
        reg.seal_blocks(t)
    return reg


def test_tampered_dump_reports_height(tmp_path):
    reg = _registry_chain()
    anchors = [AnchorRecord(reg.height, reg.blocks[-1].digest, 20.0)]
    path = tmp_path / "reg.jsonl"
    reg.dump(path)
    lines = path.read_text().splitlines()
    assert len(lines) == len(reg.blocks)
    assert reconcile(load_dump(path), anchors) is Consistent
    reg.tamper(2, 1, "pubkey", "pk:evil")
    assert reconcile(reg, anchors) == Mismatch(2)


def test_dump_round_trip(tmp_path):
    reg = _registry_chain(3, 2)
    path = tmp_path / "d.jsonl"
    reg.dump(path)
    blocks = load_dump(path)
    assert [b.to_line() for b in blocks] == reg.dump_lines()
    assert blocks[0].parent_digest == GENESIS_DIGEST


def test_anchor_beyond_history_is_mismatch():
    reg = _registry_chain(2, 1)
    assert reconcile(reg, [AnchorRecord(5, "deadbeef", 1.0)]) == Mismatch(2)
