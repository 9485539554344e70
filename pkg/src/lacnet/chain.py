"""Abstract dual-ledger model: permissioned registry chain, permissionless token chain.

Amounts on chain are integer micro-COMP so conservation checks are exact.
Digests are CRC-32 over the canonical JSON of a block chained through the
parent digest; this gives tamper evidence, not cryptographic strength.
"""

from __future__ import annotations

import json
import zlib
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Iterable

PERMISSIONED = "permissioned"
PERMISSIONLESS = "permissionless"

MICRO = 1_000_000
GENESIS_DIGEST = "00000000"

PAYLOAD_KINDS = (
    "RegisterNode",
    "PostTask",
    "SubmitBid",
    "AwardTask",
    "TokenTransfer",
    "ProofOfCompletion",
    "AnchorRecord",
    "Penalty",
    "Mint",
)


class ChainError(Exception):
    pass


class UnauthorizedKey(ChainError):
    pass


class InsufficientBalance(ChainError):
    pass


class UnknownTx(ChainError):
    pass


class NothingToAnchor(ChainError):
    pass


def to_micro(comp: float) -> int:
    return int(round(comp * MICRO))


def to_comp(micro: int) -> float:
    return micro / MICRO


def escrow_account(task_id) -> str:
    return f"escrow:{task_id}"


@dataclass
class ChainTransaction:
    id: str
    submitter: str
    submit_time: float
    kind: str
    payload: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PAYLOAD_KINDS:
            raise ValueError(f"unknown payload kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "submitter": self.submitter,
            "submit_time": self.submit_time,
            "kind": self.kind,
            "payload": {k: self.payload[k] for k in sorted(self.payload)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> ChainTransaction:
        return cls(d["id"], d["submitter"], d["submit_time"], d["kind"], dict(d["payload"]))

    def debits(self) -> dict[str, int]:
        """Balance decreases this tx applies when sealed."""
        p = self.payload
        if self.kind == "TokenTransfer":
            return {p["src"]: p["amount"]}
        if self.kind == "PostTask":
            return {self.submitter: p["escrow"]}
        if self.kind == "AwardTask" and p.get("stake"):
            return {p["winner"]: p["stake"]}
        if self.kind == "Penalty" and p.get("amount"):
            return {p["account"]: p["amount"]}
        return {}


@dataclass
class Block:
    height: int
    sealed_at: float
    txs: list[ChainTransaction]
    parent_digest: str
    digest: str = ""

    def body(self) -> dict:
        return {
            "height": self.height,
            "sealed_at": self.sealed_at,
            "parent_digest": self.parent_digest,
            "txs": [tx.to_dict() for tx in self.txs],
        }

    def compute_digest(self, parent_digest: str | None = None) -> str:
        body = self.body()
        if parent_digest is not None:
            body["parent_digest"] = parent_digest
        data = json.dumps(body, separators=(",", ":"), sort_keys=False).encode()
        return f"{zlib.crc32(data):08x}"

    def to_line(self) -> str:
        d = self.body()
        d["digest"] = self.digest
        return json.dumps(d, separators=(",", ":"))

    @classmethod
    def from_line(cls, line: str) -> Block:
        d = json.loads(line)
        txs = [ChainTransaction.from_dict(t) for t in d["txs"]]
        return cls(d["height"], d["sealed_at"], txs, d["parent_digest"], d["digest"])


@dataclass
class AnchorRecord:
    anchored_height: int
    digest: str
    posted_at: float


@dataclass(frozen=True)
class Mismatch:
    height: int


class _Consistent:
    def __repr__(self):
        return "Consistent"

    def __bool__(self):
        return True


Consistent = _Consistent()


class Ledger:
    def __init__(self, kind: str, *, block_size: int = 10, block_timeout: float = 2.0,
                 tps_cap: int = 1000, propagation: float = 0.1,
                 registry_source: Ledger | None = None):
        if kind not in (PERMISSIONED, PERMISSIONLESS):
            raise ValueError(kind)
        self.kind = kind
        self.block_size = block_size
        self.block_timeout = block_timeout
        self.tps_cap = tps_cap
        self.propagation = propagation
        self.blocks: list[Block] = []
        self.mempool: deque[ChainTransaction] = deque()
        self.balances: dict[str, int] = {}
        self.registry: set[str] = set()
        self._registry_source = registry_source
        self._pending_debit: dict[str, int] = {}
        self._confirmed: dict[str, tuple[float, float]] = {}
        self._known: set[str] = set()
        self._window: deque[tuple[float, int]] = deque()
        self._window_count = 0
        self._tx_counter = 0
        self.genesis_supply = 0
        self.minted = 0
        self.burned = 0
        self.conservation_checks = 0
        self.conservation_violations = 0
        self.last_anchored_height = -1

    # -- identity and balances -------------------------------------------

    def is_registered(self, pubkey: str) -> bool:
        reg = self._registry_source.registry if self._registry_source else self.registry
        return pubkey in reg

    def genesis(self, balances: dict[str, int]) -> None:
        for k, v in balances.items():
            if v < 0:
                raise ValueError("genesis balances must be nonnegative")
            self.balances[k] = self.balances.get(k, 0) + v
            self.genesis_supply += v

    def available(self, account: str) -> int:
        return self.balances.get(account, 0) - self._pending_debit.get(account, 0)

    def total_supply(self) -> int:
        return sum(self.balances.values())

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    def new_tx(self, submitter: str, now: float, kind: str, **payload) -> ChainTransaction:
        self._tx_counter += 1
        prefix = "P" if self.kind == PERMISSIONED else "L"
        return ChainTransaction(f"{prefix}{self._tx_counter:07d}", submitter, now, kind, payload)

    # -- operations ----------------------------------------------------

    def submit_tx(self, tx: ChainTransaction, now: float) -> ChainTransaction:
        """Admit ``tx`` to the mempool or raise.

        Raises UnauthorizedKey for unregistered submitters (RegisterNode
        excepted) and InsufficientBalance when a debit would overdraw,
        counting debits already pending in the mempool.
        """
        if tx.id in self._known:
            raise ValueError(f"duplicate tx id {tx.id}")
        if tx.kind == "RegisterNode":
            if self.kind != PERMISSIONED:
                raise UnauthorizedKey("RegisterNode only valid on the permissioned chain")
        elif not self.is_registered(tx.submitter):
            raise UnauthorizedKey(tx.submitter)
        debits = tx.debits()
        for account, amount in debits.items():
            if amount < 0:
                raise ValueError("negative amount")
            if self.available(account) < amount:
                raise InsufficientBalance(f"{account}: {self.available(account)} < {amount}")
        for account, amount in debits.items():
            self._pending_debit[account] = self._pending_debit.get(account, 0) + amount
        self._known.add(tx.id)
        self.mempool.append(tx)
        return tx

    def _in_window(self, now: float) -> int:
        while self._window and self._window[0][0] + 1.0 <= now:
            self._window_count -= self._window.popleft()[1]
        return self._window_count

    def seal_blocks(self, now: float) -> list[Block]:
        """Seal every block that is due at ``now``.

        A block is due when ten txs are pending or the oldest has waited the
        full timeout. At most ``tps_cap`` txs are sealed per rolling second,
        counting the window ``(now - 1, now]``.
        """
        sealed = []
        while self.mempool:
            due = (len(self.mempool) >= self.block_size
                   or now >= self.mempool[0].submit_time + self.block_timeout)
            if not due:
                break
            room = self.tps_cap - self._in_window(now)
            if room <= 0:
                break
            take = min(self.block_size, len(self.mempool), room)
            txs = [self.mempool.popleft() for _ in range(take)]
            sealed.append(self._seal(txs, now))
        return sealed

    def next_wakeup(self, now: float) -> float | None:
        """Earliest time a pending tx could become sealable."""
        if not self.mempool:
            return None
        timeout_at = self.mempool[0].submit_time + self.block_timeout
        size_due = len(self.mempool) >= self.block_size
        if self.tps_cap - self._in_window(now) <= 0:
            freed = self._window[0][0] + 1.0
            return max(freed, now) if size_due else max(freed, timeout_at)
        if size_due:
            return now
        return timeout_at

    def _seal(self, txs: list[ChainTransaction], now: float) -> Block:
        parent = self.blocks[-1].digest if self.blocks else GENESIS_DIGEST
        block = Block(len(self.blocks), now, txs, parent)
        block.digest = block.compute_digest()
        for tx in txs:
            self._apply(tx)
            self._confirmed[tx.id] = (tx.submit_time, now)
        self.blocks.append(block)
        self._window.append((now, len(txs)))
        self._window_count += len(txs)
        self._check_conservation()
        return block

    def _apply(self, tx: ChainTransaction) -> None:
        p = tx.payload
        for account, amount in tx.debits().items():
            self._pending_debit[account] -= amount
            if self._pending_debit[account] == 0:
                del self._pending_debit[account]
            bal = self.balances.get(account, 0) - amount
            if bal < 0:
                raise InsufficientBalance(f"{account} overdrawn by {tx.id}")
            self.balances[account] = bal
        if tx.kind == "RegisterNode":
            self.registry.add(p["pubkey"])
        elif tx.kind == "TokenTransfer":
            self._credit(p["dst"], p["amount"])
        elif tx.kind == "PostTask":
            self._credit(escrow_account(p["task_id"]), p["escrow"])
        elif tx.kind == "AwardTask" and p.get("stake"):
            self._credit(escrow_account(p["task_id"]), p["stake"])
        elif tx.kind == "Penalty":
            self.burned += p.get("amount", 0)
            if p.get("revoke") and self.kind == PERMISSIONED:
                self.registry.discard(p["node"])
        elif tx.kind == "Mint":
            self.minted += p["amount"]
            self._credit(p["to"], p["amount"])

    def _credit(self, account: str, amount: int) -> None:
        self.balances[account] = self.balances.get(account, 0) + amount

    def _check_conservation(self) -> None:
        self.conservation_checks += 1
        if self.total_supply() != self.genesis_supply + self.minted - self.burned:
            self.conservation_violations += 1

    def confirmation_latency(self, tx_id: str) -> float:
        try:
            submitted, sealed = self._confirmed[tx_id]
        except KeyError:
            raise UnknownTx(tx_id) from None
        return sealed - submitted + self.propagation

    def confirmed(self, tx_id: str) -> bool:
        return tx_id in self._confirmed

    def revoke(self, pubkey: str) -> None:
        self.registry.discard(pubkey)

    def iter_txs(self) -> Iterable[tuple[Block, ChainTransaction]]:
        for b in self.blocks:
            for tx in b.txs:
                yield b, tx

    # -- dump ------------------------------------------------------------

    def dump_lines(self) -> list[str]:
        return [b.to_line() for b in self.blocks]

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.dump_lines():
                fh.write(line + "\n")

    def tamper(self, height: int, tx_index: int, key: str, value) -> None:
        """Test hook: rewrite one sealed payload field without fixing digests."""
        self.blocks[height].txs[tx_index].payload[key] = value


def load_dump(path) -> list[Block]:
    with open(path) as fh:
        return [Block.from_line(line) for line in fh if line.strip()]


def post_anchor(permissioned: Ledger, permissionless: Ledger, now: float,
                submitter: str = "pk:anchor") -> AnchorRecord:
    height = permissioned.height
    if height <= permissionless.last_anchored_height:
        raise NothingToAnchor(f"permissioned height {height} already anchored")
    rec = AnchorRecord(height, permissioned.blocks[height].digest, now)
    tx = permissionless.new_tx(submitter, now, "AnchorRecord",
                               anchored_height=rec.anchored_height, digest=rec.digest)
    permissionless.submit_tx(tx, now)
    permissionless.last_anchored_height = height
    return rec


def anchors_on(ledger: Ledger) -> list[AnchorRecord]:
    out = []
    for block, tx in ledger.iter_txs():
        if tx.kind == "AnchorRecord":
            out.append(AnchorRecord(tx.payload["anchored_height"], tx.payload["digest"], tx.submit_time))
    return out


def reconcile(permissioned: Ledger | list[Block], anchors: list[AnchorRecord]):
    """Replay permissioned history against anchored digests.

    Each block's digest is recomputed from its contents and the recomputed
    parent; the first block whose recomputation disagrees with its stored
    digest, or with an anchor, is reported.
    """
    blocks = permissioned.blocks if isinstance(permissioned, Ledger) else permissioned
    if not anchors:
        return Consistent
    by_height = {}
    for a in anchors:
        by_height.setdefault(a.anchored_height, a.digest)
    top = max(by_height)
    if top >= len(blocks):
        return Mismatch(len(blocks))
    parent = GENESIS_DIGEST
    for block in blocks[: top + 1]:
        if block.parent_digest != parent:
            return Mismatch(block.height)
        d = block.compute_digest(parent)
        if d != block.digest:
            return Mismatch(block.height)
        anchored = by_height.get(block.height)
        if anchored is not None and anchored != d:
            return Mismatch(block.height)
        parent = d
    return Consistent
